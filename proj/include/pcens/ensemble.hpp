#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcens/evaluate.hpp"
#include "pcens/models.hpp"
#include "pcens/score_matrix.hpp"

namespace pcens {

enum class EnsembleMethod { raw_mean, soft_vote, hard_vote };

std::string_view method_name(EnsembleMethod m);
EnsembleMethod parse_method(std::string_view name);

/// Throws unless every matrix has the same shape, labels and sample ids.
void check_aligned(std::span<const ScoreMatrix> matrices);

/// raw_mean: mean of raw scores; soft_vote: mean of row softmaxes;
/// hard_vote: mean of one-hot argmax rows.
ScoreMatrix aggregate(std::span<const ScoreMatrix> matrices, EnsembleMethod method);

/// Per-row argmax, lowest class index on ties.
std::vector<int> predictions(const ScoreMatrix& m);

MetricsReport score_metrics(const ScoreMatrix& m);

struct SubsetPolicy {
  enum class Mode { exhaustive_if_small, random_sample };
  Mode mode = Mode::exhaustive_if_small;
  std::size_t cap = 5000;
  std::size_t n_random = 10;
  std::uint64_t seed = 0;
  void validate() const;
};

/// C(n, k), saturating at UINT64_MAX.
std::uint64_t binomial(std::size_t n, std::size_t k);

/// Exhaustive lexicographic enumeration when C(n,K) <= cap (and the mode
/// allows it), otherwise n_random distinct sorted subsets drawn with the
/// policy seed. Deterministic.
std::vector<std::vector<std::size_t>> choose_subsets(std::size_t n, std::size_t K, const SubsetPolicy& policy);

struct SubsetStats {
  std::size_t K = 0;
  std::size_t n_subsets = 0;
  bool exhaustive = false;
  double mean_instance_accuracy = 0.0;
  double std_instance_accuracy = 0.0;  // population standard deviation
  double mean_class_accuracy = 0.0;
  double std_class_accuracy = 0.0;
};

SubsetStats evaluate_k_subsets(std::span<const ScoreMatrix> matrices, std::size_t K, EnsembleMethod method,
                               const SubsetPolicy& policy = {});

/// Population standard deviation of all entries.
double pooled_std(const ScoreMatrix& m);

/// Divides every entry of target by pooled_std(train_scores).
ScoreMatrix standardize(const ScoreMatrix& target, const ScoreMatrix& train_scores);

/// Elementwise sum of k_i * F_i. Weights must be nonnegative and sum to 1.
ScoreMatrix weighted_mix(std::span<const ScoreMatrix> sources, std::span<const double> weights);

/// Admissible interval for one weight, e.g. ">0.4", ">=0.1", "<0.5",
/// "0.0..0.35", "=1" or a bare value.
struct WeightRange {
  double lo = 0.0;
  double hi = 1.0;
  bool lo_strict = false;
  bool hi_strict = false;

  static WeightRange parse(std::string_view text);
  bool contains(double k) const;
  std::string to_string() const;
};

/// sub_ensemble: each source is the raw_mean of one architecture's instances
/// and the mix is evaluated once. instance_mean: the mix is built from the
/// i-th instance of every architecture and metrics are averaged over i.
enum class MixUnit { sub_ensemble, instance_mean };

std::string_view mix_unit_name(MixUnit u);

struct WeightCandidate {
  std::vector<double> weights;
  double instance_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
};

/// All simplex lattice points with spacing grid_step satisfying the
/// constraints (one range per source, or none). Sources must already be
/// standardized. Sorted by instance accuracy descending, then weights
/// ascending lexicographically.
std::vector<WeightCandidate> weight_grid_search(std::span<const std::vector<ScoreMatrix>> per_architecture,
                                                double grid_step, std::span<const WeightRange> constraints,
                                                MixUnit unit);

/// Lattice points only, in lexicographic order.
std::vector<std::vector<double>> simplex_lattice(std::size_t n_sources, double grid_step,
                                                 std::span<const WeightRange> constraints);

struct BaggingConfig {
  std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::size_t n_instances = 10;
  std::uint64_t seed_root = 0;
  bool with_replacement = true;
  bool simple = true;
  void validate() const;
};

struct BaggingRow {
  std::string variant;  // without_replacement, with_replacement or simple
  double fraction = 0.0;
  std::size_t train_size = 0;
  MetricsReport ensemble;
  double single_mean_instance = 0.0;
  double single_std_instance = 0.0;
  double single_mean_class = 0.0;
  double instance_gain() const { return ensemble.instance_accuracy - single_mean_instance; }
  double class_gain() const { return ensemble.mean_class_accuracy - single_mean_class; }
};

/// Trains n_instances models per fraction on independent without-replacement
/// splits of split.train, plus one with-replacement and one full-set group
/// whose rows repeat for every fraction. Ensembles use raw_mean on split.test.
/// Instance i uses SeedBundle::all(seed_root + i).
std::vector<BaggingRow> run_bagging_experiment(const LabeledDataset& dataset, const DatasetSplit& split,
                                               const ModelArch& arch, const TrainConfig& cfg,
                                               const BaggingConfig& bagging);

void write_bagging_csv(std::ostream& out, std::span<const BaggingRow> rows);

}  // namespace pcens
