#include <benchmark/benchmark.h>
#include <omp.h>

#include <numeric>

#include "pcens/kernels.hpp"
#include "pcens/runtime.hpp"

using namespace pcens;

namespace {

const LabeledDataset& dataset() {
  static const LabeledDataset d = [] {
    DatasetSpec spec;
    spec.n_classes = 4;
    spec.train_per_class = 24;
    spec.test_per_class = 8;
    spec.n_points = 128;
    return generate_dataset(spec);
  }();
  return d;
}

std::vector<std::size_t> all_indices() {
  std::vector<std::size_t> idx(dataset().size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::vector<ScoreMatrix> random_scores(std::size_t n_models, std::size_t n_samples, std::size_t n_classes) {
  Rng rng(7);
  std::vector<ScoreMatrix> out;
  for (std::size_t m = 0; m < n_models; ++m) {
    ScoreMatrix s;
    s.scores = Mat(n_samples, n_classes);
    for (std::size_t i = 0; i < n_samples; ++i)
      for (std::size_t c = 0; c < n_classes; ++c) s.scores(i, c) = rng.normal();
    for (std::size_t i = 0; i < n_samples; ++i) {
      s.labels.push_back(static_cast<int>(i % n_classes));
      s.sample_ids.push_back(i);
    }
    s.source_tag = "m" + std::to_string(m);
    out.push_back(std::move(s));
  }
  return out;
}

template <bool Parallel>
void BM_predict_rows(benchmark::State& state) {
  const auto model = init_model(ModelArch::defaults(Family::pointnet_lite, 4), SeedBundle::all(1));
  const auto idx = all_indices();
  for (auto _ : state) {
    auto m = Parallel ? kernels::omp::predict_rows(model, dataset(), idx) : kernels::serial::predict_rows(model, dataset(), idx);
    benchmark::DoNotOptimize(m);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(idx.size()));
}

template <bool Parallel>
void BM_subset_metrics(benchmark::State& state) {
  const auto scores = random_scores(10, 320, 8);
  const auto subsets = choose_subsets(10, 5, SubsetPolicy{});
  for (auto _ : state) {
    auto r = Parallel ? kernels::omp::subset_metrics(scores, subsets, EnsembleMethod::soft_vote)
                      : kernels::serial::subset_metrics(scores, subsets, EnsembleMethod::soft_vote);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(subsets.size()));
}

template <bool Parallel>
void BM_train_many(benchmark::State& state) {
  const auto arch = ModelArch::defaults(Family::deepsets_lite, 4);
  const auto split = holdout_split(dataset(), 8);
  std::vector<kernels::TrainJob> jobs;
  for (std::uint64_t i = 0; i < 4; ++i) jobs.push_back({split.train, SeedBundle::all(i)});
  TrainConfig cfg;
  cfg.epochs = 1;
  for (auto _ : state) {
    auto models = Parallel ? kernels::omp::train_many(arch, dataset(), jobs, cfg)
                           : kernels::serial::train_many(arch, dataset(), jobs, cfg);
    benchmark::DoNotOptimize(models);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(jobs.size()));
}

}  // namespace

BENCHMARK_TEMPLATE(BM_predict_rows, false)->Name("predict_rows/serial")->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_predict_rows, true)->Name("predict_rows/omp")->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_subset_metrics, false)->Name("subset_metrics/serial")->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_subset_metrics, true)->Name("subset_metrics/omp")->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_train_many, false)->Name("train_many/serial")->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_train_many, true)->Name("train_many/omp")->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::AddCustomContext("omp_max_threads", std::to_string(omp_get_max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
