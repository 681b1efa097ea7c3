#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pcens/numerics.hpp"

namespace pcens {

using Point3 = std::array<double, 3>;

/// Unordered set of 3D points. The z axis is treated as vertical.
struct PointCloud {
  std::vector<Point3> points;

  std::size_t size() const { return points.size(); }
  bool operator==(const PointCloud&) const = default;
};

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

struct Sample {
  PointCloud cloud;
  int label = 0;
  bool operator==(const Sample&) const = default;
};

struct LabeledDataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;

  std::size_t size() const { return samples.size(); }
  std::size_t n_classes() const { return class_names.size(); }
  bool operator==(const LabeledDataset&) const = default;
};

/// Train/test bookkeeping over a dataset's sample indices.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

enum class ShapeKind { sphere, cube, cylinder, cone, torus, pyramid, plane_pair, helix };
inline constexpr std::size_t kShapeKindCount = 8;

std::string_view shape_kind_name(ShapeKind kind);
ShapeKind parse_shape_kind(std::string_view name);
ShapeKind shape_kind_from_index(std::size_t index);

/// Per-axis stretch applied to the canonical (unit-scale) surface.
struct ShapeParams {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;
};

/// Raw surface samples of the canonical shape scaled by `params`; no noise,
/// no normalization. Spheres are sampled in antipodal pairs (plus one
/// great-circle triangle when n is odd) so the centroid is the origin.
PointCloud sample_surface(ShapeKind kind, std::size_t n_points, const ShapeParams& params, Rng& rng);

/// Intra-class variation: per-axis stretch drawn from [1 - variation, 1 + variation].
/// Spheres never stretch.
inline constexpr double kDefaultShapeVariation = 0.25;

/// Surface sample + isotropic Gaussian noise + normalize.
PointCloud generate_shape(ShapeKind kind, std::size_t n_points, double noise_sigma, Rng& rng,
                          double variation = kDefaultShapeVariation);

/// Centroid to origin, max norm to 1. A cloud with (numerically) no spread maps to all zeros.
PointCloud normalize(const PointCloud& pc);

Point3 centroid(const PointCloud& pc);

PointCloud rotate_z(const PointCloud& pc, double angle);

inline constexpr double kJitterSigma = 0.01;
inline constexpr double kJitterClip = 0.05;

/// Rotation about z by a uniform angle in [0, 2*pi), then clipped Gaussian jitter.
PointCloud augment(const PointCloud& pc, Rng& rng);
/// Explicit form: rotate by `angle`, jitter with (sigma, clip) drawn from rng.
PointCloud augment_with(const PointCloud& pc, double angle, double jitter_sigma, double jitter_clip,
                        Rng& rng);

/// Greedy farthest point sampling. First pick is start_index; ties go to the lowest index.
std::vector<std::size_t> farthest_point_sampling(const PointCloud& pc, std::size_t m,
                                                 std::size_t start_index = 0);

/// For each center, the k nearest point indices ordered by (distance, index).
std::vector<std::vector<std::size_t>> knn_group(const PointCloud& pc,
                                                std::span<const std::size_t> center_indices,
                                                std::size_t k);

/// Lexicographic (x, y, z) ordering of the points; order-independent canonical form.
PointCloud canonical_order(const PointCloud& pc);

// ---------------------------------------------------------------------------
// bagging / splits

struct BaggingSpec {
  enum class Mode { full, without_replacement, with_replacement };
  Mode mode = Mode::full;
  double fraction = 1.0;  // without_replacement only
  std::uint64_t seed = 0;

  static BaggingSpec full_set() { return {}; }
  static BaggingSpec without_replacement(double k, std::uint64_t seed) {
    return {Mode::without_replacement, k, seed};
  }
  static BaggingSpec with_replacement(std::uint64_t seed) { return {Mode::with_replacement, 1.0, seed}; }
};

/// Draws a training index list from `pool`. Results are sorted ascending.
std::vector<std::size_t> make_split(std::span<const std::size_t> pool, const BaggingSpec& spec);
std::vector<std::size_t> make_split(const LabeledDataset& dataset, const BaggingSpec& spec);

/// The last `test_per_class` samples of each class (in storage order) form the test set.
DatasetSplit holdout_split(const LabeledDataset& dataset, std::size_t test_per_class);

// ---------------------------------------------------------------------------
// generation and I/O

struct DatasetSpec {
  std::size_t n_classes = 8;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 40;
  std::size_t n_points = 256;
  double noise_sigma = 0.02;
  double variation = kDefaultShapeVariation;
  std::uint64_t seed = 0;
};

/// Samples are stored class by class; within a class the training samples come first.
LabeledDataset generate_dataset(const DatasetSpec& spec);

class DatasetFormatError : public std::runtime_error {
 public:
  DatasetFormatError(std::size_t line, const std::string& what)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

void write_dataset(const LabeledDataset& dataset, std::ostream& out);
void write_dataset(const LabeledDataset& dataset, const std::filesystem::path& path);
LabeledDataset read_dataset(std::istream& in);
LabeledDataset read_dataset(const std::filesystem::path& path);

/// Imports externally sampled clouds. `list` holds lines `<class_name> <cloud_path>`;
/// each cloud file has one point per line, the first three numeric fields
/// (comma or whitespace separated) being x y z. Clouds with more than
/// n_points points are reduced by farthest point sampling from index 0;
/// fewer is an error. Relative cloud paths resolve against the list's directory.
LabeledDataset import_point_lists(const std::filesystem::path& list, std::size_t n_points);

/// 17-significant-digit decimal, which round-trips every double exactly.
std::string format_real(double v);

}  // namespace pcens
