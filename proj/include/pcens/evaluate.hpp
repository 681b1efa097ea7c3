#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace pcens {

/// Classification quality of one prediction vector against true labels.
struct MetricsReport {
  double instance_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::size_t> class_counts;
  std::size_t n_samples = 0;
  std::size_t n_classes = 0;
};

/// correct / total. Throws on empty or mismatched input.
double instance_accuracy(std::span<const int> predictions, std::span<const int> labels);

/// Unweighted mean of per-class recall. Every class in [0, C) must occur in
/// labels; the per-class recalls are written to `per_class` when given.
double mean_class_accuracy(std::span<const int> predictions, std::span<const int> labels, std::size_t n_classes,
                           std::vector<double>* per_class = nullptr);

MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> labels, std::size_t n_classes);

/// ensemble minus single, per class.
std::vector<double> per_class_delta(const MetricsReport& single, const MetricsReport& ensemble);

/// For every class the architectures attaining the best per-class accuracy
/// share one point (1/N each on an N-way tie). Scores sum to C.
std::vector<double> best_per_class_rank(std::span<const MetricsReport> reports);

/// `class_name,single_acc,ensemble_acc,delta`
void write_per_class_csv(std::ostream& out, std::span<const std::string> class_names, const MetricsReport& single,
                         const MetricsReport& ensemble);

/// `architecture,score`
void write_rank_csv(std::ostream& out, std::span<const std::string> architectures, std::span<const double> scores);

}  // namespace pcens
