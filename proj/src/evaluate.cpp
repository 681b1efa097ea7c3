#include "pcens/evaluate.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

#include "pcens/pointcloud.hpp"

namespace pcens {

namespace {

void check_lengths(std::span<const int> predictions, std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("accuracy of an empty prediction set is undefined");
  if (predictions.size() != labels.size())
    throw std::invalid_argument("predictions and labels differ in length (" + std::to_string(predictions.size()) +
                                " vs " + std::to_string(labels.size()) + ")");
}

}  // namespace

double instance_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  check_lengths(predictions, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double mean_class_accuracy(std::span<const int> predictions, std::span<const int> labels, std::size_t n_classes,
                           std::vector<double>* per_class) {
  check_lengths(predictions, labels);
  if (n_classes == 0) throw std::invalid_argument("mean_class_accuracy: zero classes");
  std::vector<std::size_t> total(n_classes, 0), hit(n_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes)
      throw std::invalid_argument("mean_class_accuracy: label out of range");
    const auto c = static_cast<std::size_t>(labels[i]);
    ++total[c];
    hit[c] += predictions[i] == labels[i];
  }
  std::vector<double> acc(n_classes);
  double sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (total[c] == 0)
      throw std::invalid_argument("mean_class_accuracy: class " + std::to_string(c) + " has no samples");
    acc[c] = static_cast<double>(hit[c]) / static_cast<double>(total[c]);
    sum += acc[c];
  }
  if (per_class) *per_class = std::move(acc);
  return sum / static_cast<double>(n_classes);
}

MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> labels, std::size_t n_classes) {
  MetricsReport r;
  r.instance_accuracy = instance_accuracy(predictions, labels);
  r.mean_class_accuracy = mean_class_accuracy(predictions, labels, n_classes, &r.per_class_accuracy);
  r.class_counts.assign(n_classes, 0);
  for (int l : labels) ++r.class_counts[static_cast<std::size_t>(l)];
  r.n_samples = labels.size();
  r.n_classes = n_classes;
  return r;
}

std::vector<double> per_class_delta(const MetricsReport& single, const MetricsReport& ensemble) {
  if (single.per_class_accuracy.size() != ensemble.per_class_accuracy.size())
    throw std::invalid_argument("per_class_delta: class counts differ");
  std::vector<double> d(single.per_class_accuracy.size());
  for (std::size_t c = 0; c < d.size(); ++c) d[c] = ensemble.per_class_accuracy[c] - single.per_class_accuracy[c];
  return d;
}

std::vector<double> best_per_class_rank(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw std::invalid_argument("best_per_class_rank: no reports");
  const std::size_t C = reports[0].per_class_accuracy.size();
  for (const auto& r : reports)
    if (r.per_class_accuracy.size() != C) throw std::invalid_argument("best_per_class_rank: class counts differ");
  std::vector<double> score(reports.size(), 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double best = reports[0].per_class_accuracy[c];
    for (const auto& r : reports) best = std::max(best, r.per_class_accuracy[c]);
    std::size_t ties = 0;
    for (const auto& r : reports) ties += r.per_class_accuracy[c] == best;
    for (std::size_t a = 0; a < reports.size(); ++a)
      if (reports[a].per_class_accuracy[c] == best) score[a] += 1.0 / static_cast<double>(ties);
  }
  return score;
}

void write_per_class_csv(std::ostream& out, std::span<const std::string> class_names, const MetricsReport& single,
                         const MetricsReport& ensemble) {
  const auto delta = per_class_delta(single, ensemble);
  if (class_names.size() != delta.size()) throw std::invalid_argument("write_per_class_csv: class name count");
  out << "class_name,single_acc,ensemble_acc,delta\n";
  for (std::size_t c = 0; c < delta.size(); ++c)
    out << class_names[c] << ',' << format_real(single.per_class_accuracy[c]) << ','
        << format_real(ensemble.per_class_accuracy[c]) << ',' << format_real(delta[c]) << '\n';
}

void write_rank_csv(std::ostream& out, std::span<const std::string> architectures, std::span<const double> scores) {
  if (architectures.size() != scores.size()) throw std::invalid_argument("write_rank_csv: length mismatch");
  out << "architecture,score\n";
  for (std::size_t a = 0; a < scores.size(); ++a) out << architectures[a] << ',' << format_real(scores[a]) << '\n';
}

}  // namespace pcens
