#include "pcens/kernels.hpp"

#include <exception>

namespace pcens::kernels {

namespace {

void check_indices(const LabeledDataset& dataset, std::span<const std::size_t> idx) {
  for (std::size_t i : idx)
    if (i >= dataset.size()) throw std::out_of_range("sample index " + std::to_string(i) + " out of range");
}

void predict_row(const TrainedModel& model, const PointCloud& pc, std::span<double> out) {
  const auto s = predict(model, pc);
  std::copy(s.begin(), s.end(), out.begin());
}

SubsetMetrics one_subset(std::span<const ScoreMatrix> matrices, std::span<const std::size_t> subset,
                         EnsembleMethod method) {
  std::vector<ScoreMatrix> chosen;
  chosen.reserve(subset.size());
  for (std::size_t i : subset) chosen.push_back(matrices[i]);
  const MetricsReport r = score_metrics(aggregate(chosen, method));
  return {r.instance_accuracy, r.mean_class_accuracy};
}

// Runs body(i) for i in [0, n) and rethrows the lowest-index failure.
template <class Body>
void parallel_rethrow(std::size_t n, Body body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

namespace serial {

Mat predict_rows(const TrainedModel& model, const LabeledDataset& dataset, std::span<const std::size_t> eval_indices) {
  check_indices(dataset, eval_indices);
  Mat out(eval_indices.size(), model.arch.n_classes());
  for (std::size_t r = 0; r < eval_indices.size(); ++r)
    predict_row(model, dataset.samples[eval_indices[r]].cloud, out.row(r));
  return out;
}

std::vector<SubsetMetrics> subset_metrics(std::span<const ScoreMatrix> matrices,
                                          std::span<const std::vector<std::size_t>> subsets, EnsembleMethod method) {
  check_aligned(matrices);
  std::vector<SubsetMetrics> out;
  out.reserve(subsets.size());
  for (const auto& s : subsets) out.push_back(one_subset(matrices, s, method));
  return out;
}

std::vector<TrainedModel> train_many(const ModelArch& arch, const LabeledDataset& dataset,
                                     std::span<const TrainJob> jobs, const TrainConfig& cfg) {
  std::vector<TrainedModel> out;
  out.reserve(jobs.size());
  for (const auto& j : jobs) out.push_back(train(arch, dataset, j.indices, j.seeds, cfg));
  return out;
}

}  // namespace serial

namespace omp {

Mat predict_rows(const TrainedModel& model, const LabeledDataset& dataset, std::span<const std::size_t> eval_indices) {
  check_indices(dataset, eval_indices);
  Mat out(eval_indices.size(), model.arch.n_classes());
  parallel_rethrow(eval_indices.size(),
                   [&](std::size_t r) { predict_row(model, dataset.samples[eval_indices[r]].cloud, out.row(r)); });
  return out;
}

std::vector<SubsetMetrics> subset_metrics(std::span<const ScoreMatrix> matrices,
                                          std::span<const std::vector<std::size_t>> subsets, EnsembleMethod method) {
  check_aligned(matrices);
  std::vector<SubsetMetrics> out(subsets.size());
  parallel_rethrow(subsets.size(), [&](std::size_t i) { out[i] = one_subset(matrices, subsets[i], method); });
  return out;
}

std::vector<TrainedModel> train_many(const ModelArch& arch, const LabeledDataset& dataset,
                                     std::span<const TrainJob> jobs, const TrainConfig& cfg) {
  std::vector<TrainedModel> out(jobs.size());
  parallel_rethrow(jobs.size(), [&](std::size_t i) { out[i] = train(arch, dataset, jobs[i].indices, jobs[i].seeds, cfg); });
  return out;
}

}  // namespace omp

}  // namespace pcens::kernels
