#pragma once

// Batch kernels with a serial reference and an OpenMP version. Both produce
// bit-identical results; the serial one is kept for testing and benchmarks.

#include <cstddef>
#include <span>
#include <vector>

#include "pcens/ensemble.hpp"
#include "pcens/models.hpp"

namespace pcens::kernels {

struct SubsetMetrics {
  double instance_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
  bool operator==(const SubsetMetrics&) const = default;
};

struct TrainJob {
  std::vector<std::size_t> indices;
  SeedBundle seeds;
};

namespace serial {

/// Row r holds predict(model, dataset.samples[eval_indices[r]]).
Mat predict_rows(const TrainedModel& model, const LabeledDataset& dataset, std::span<const std::size_t> eval_indices);

/// Metrics of the aggregated ensemble for every subset of `matrices`.
std::vector<SubsetMetrics> subset_metrics(std::span<const ScoreMatrix> matrices,
                                          std::span<const std::vector<std::size_t>> subsets, EnsembleMethod method);

std::vector<TrainedModel> train_many(const ModelArch& arch, const LabeledDataset& dataset,
                                     std::span<const TrainJob> jobs, const TrainConfig& cfg);

}  // namespace serial

namespace omp {

Mat predict_rows(const TrainedModel& model, const LabeledDataset& dataset, std::span<const std::size_t> eval_indices);

std::vector<SubsetMetrics> subset_metrics(std::span<const ScoreMatrix> matrices,
                                          std::span<const std::vector<std::size_t>> subsets, EnsembleMethod method);

/// Instances train concurrently; each training stays single-threaded.
std::vector<TrainedModel> train_many(const ModelArch& arch, const LabeledDataset& dataset,
                                     std::span<const TrainJob> jobs, const TrainConfig& cfg);

}  // namespace omp

}  // namespace pcens::kernels
