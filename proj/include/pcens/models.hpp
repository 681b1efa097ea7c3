#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pcens/numerics.hpp"
#include "pcens/pointcloud.hpp"
#include "pcens/score_matrix.hpp"

namespace pcens {

enum class Family { deepsets_lite, pointnet_lite, hier_lite };
enum class Pooling { sum, max };

std::string_view family_name(Family f);
Family parse_family(std::string_view name);

/// Architecture of a direct point-set classifier:
///   deepsets_lite  per-point phi -> sum pool (times sum_scale) -> rho
///   pointnet_lite  per-point phi -> max pool -> rho
///   hier_lite      FPS centroids + kNN groups -> local phi on relative
///                  coordinates -> max per group -> global shared MLP on
///                  [centroid | group feature] -> max pool -> rho
/// Parameters are laid out as [phi | global (hier only) | rho].
struct ModelArch {
  Family family = Family::pointnet_lite;
  std::vector<std::size_t> phi_widths;
  std::vector<std::size_t> global_widths;  // hier_lite only; first width = 3 + phi output
  std::vector<std::size_t> rho_widths;     // first width = pooled feature width, last = C
  Pooling pooling = Pooling::max;
  double dropout_rate = 0.3;
  double sum_scale = 1.0;  // constant factor on the summed feature (sum pooling only)
  std::size_t n_centroids = 32;  // hier_lite only
  std::size_t group_k = 16;      // hier_lite only

  static ModelArch defaults(Family family, std::size_t n_classes);

  std::size_t n_classes() const { return rho_widths.back(); }
  std::size_t feature_width() const { return rho_widths.front(); }
  MlpLayout phi_layout() const { return {phi_widths, Activation::relu_all}; }
  MlpLayout global_layout() const { return {global_widths, Activation::relu_all}; }
  MlpLayout rho_layout() const { return {rho_widths, Activation::relu_hidden_linear_out}; }
  std::size_t encoder_param_count() const;
  std::size_t rho_param_count() const { return rho_layout().param_count(); }
  std::size_t param_count() const { return encoder_param_count() + rho_param_count(); }
  void validate() const;
  bool operator==(const ModelArch&) const = default;
};

/// Seeds of the three controllable random factors. An empty field means
/// CONST: every instance shares kConstSeed for that factor.
struct SeedBundle {
  std::optional<std::uint64_t> data_order;
  std::optional<std::uint64_t> init;
  std::optional<std::uint64_t> dropout;

  static constexpr std::uint64_t kConstSeed = 0x5eedc0de5eedc0deULL;
  static SeedBundle all(std::uint64_t seed) { return {seed, seed, seed}; }
  static SeedBundle constant() { return {}; }

  std::uint64_t data_order_seed() const { return data_order.value_or(kConstSeed); }
  std::uint64_t init_seed() const { return init.value_or(kConstSeed); }
  std::uint64_t dropout_seed() const { return dropout.value_or(kConstSeed); }
  bool operator==(const SeedBundle&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double lr_decay = 0.97;
  bool augment = true;
  void validate() const;
};

struct TrainRecord {
  std::size_t epochs = 0;
  double final_loss = 0.0;  // mean training cross-entropy over the last epoch
  bool operator==(const TrainRecord&) const = default;
};

struct TrainedModel {
  ModelArch arch;
  std::vector<double> params;
  SeedBundle seeds;
  TrainRecord record;

  std::size_t param_count() const { return params.size(); }
  std::span<const double> encoder_params() const { return {params.data(), arch.encoder_param_count()}; }
  std::span<const double> rho_params() const {
    return {params.data() + arch.encoder_param_count(), arch.rho_param_count()};
  }
  void validate() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fresh parameters drawn with the init seed (He-normal weights, zero biases).
TrainedModel init_model(const ModelArch& arch, const SeedBundle& seeds);

/// SGD with momentum on softmax cross-entropy. Data order and augmentation
/// use only seeds.data_order, initialization only seeds.init, dropout
/// masks only seeds.dropout.
TrainedModel train(const ModelArch& arch, const LabeledDataset& dataset, std::span<const std::size_t> train_indices,
                   const SeedBundle& seeds, const TrainConfig& cfg);

/// Pooled global signature fed to rho.
std::vector<double> encode(const TrainedModel& model, const PointCloud& pc);
/// rho applied to a feature vector (dropout off).
std::vector<double> classify(const TrainedModel& model, std::span<const double> feature);
/// Raw class scores; identical to classify(model, encode(model, pc)).
std::vector<double> predict(const TrainedModel& model, const PointCloud& pc);

ScoreMatrix predict_scores(const TrainedModel& model, const LabeledDataset& dataset,
                           std::span<const std::size_t> eval_indices, std::string source_tag = {});

/// Mean softmax cross-entropy and its gradient with respect to all
/// parameters over the given samples, with an optional dropout seed.
/// This is the exact objective `train` descends (without augmentation).
double loss_and_gradient(const ModelArch& arch, std::span<const double> params, const LabeledDataset& dataset,
                         std::span<const std::size_t> indices, std::optional<std::uint64_t> dropout_seed,
                         std::vector<double>* grad);

inline constexpr std::size_t kDefaultHeadEpochs = 31;

/// Keeps the encoder slice bit-identical and trains a fresh rho on cached
/// (unaugmented) encoder features. classifier_seed drives head
/// initialization, data order and dropout.
TrainedModel retrain_classifier(const TrainedModel& model, const LabeledDataset& dataset,
                                std::span<const std::size_t> train_indices, std::uint64_t classifier_seed,
                                std::size_t epochs = kDefaultHeadEpochs, const TrainConfig& cfg = {});

struct TimingReport {
  std::size_t repetitions = 0;
  std::size_t batch_size = 0;
  double mean_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
};

/// Wall-clock per batch over `repetitions` timed runs after one discarded warm-up run.
TimingReport time_inference(const TrainedModel& model, std::span<const PointCloud> batch, std::size_t repetitions);

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_model(const TrainedModel& model, std::ostream& out);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(std::istream& in);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace pcens
