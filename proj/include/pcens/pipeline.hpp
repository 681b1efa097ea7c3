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
#include "pcens/pointcloud.hpp"

namespace pcens {

// ---------------------------------------------------------------------------
// boxes and IoU

/// Oriented box; heading is the yaw about z, wrapped to [-pi, pi).
struct Box3D {
  Point3 center{0.0, 0.0, 0.0};
  std::array<double, 3> size{1.0, 1.0, 1.0};
  double heading = 0.0;

  void validate() const;
  bool operator==(const Box3D&) const = default;
};

/// Maps any finite angle to [-pi, pi).
double wrap_angle(double a);

using Point2 = std::array<double, 2>;

/// Bird's-eye-view rectangle, counter-clockwise.
std::array<Point2, 4> bev_corners(const Box3D& b);

bool box_contains(const Box3D& b, const Point3& p, double margin = 0.0);

/// Intersection of two convex counter-clockwise polygons (Sutherland-Hodgman).
std::vector<Point2> clip_convex(std::span<const Point2> subject, std::span<const Point2> clip);
double polygon_area(std::span<const Point2> poly);

enum class IouMode { ground, full3d };
std::string_view iou_mode_name(IouMode m);

/// ground: IoU of the BEV rectangles. full3d: BEV intersection times vertical
/// overlap over the union of volumes. Throws on a zero-extent box.
double iou(const Box3D& a, const Box3D& b, IouMode mode);

/// One prediction per scene: fraction of scenes with IoU >= threshold.
double average_precision(std::span<const Box3D> predictions, std::span<const Box3D> ground_truth,
                         double iou_threshold, IouMode mode);

// ---------------------------------------------------------------------------
// scenes

struct FrustumScene {
  PointCloud points;
  int label = 0;
  std::vector<std::uint8_t> gt_mask;  // 1 = object point
  Box3D gt_box;

  std::size_t n_object_points() const;
  void validate(std::size_t n_classes) const;
  bool operator==(const FrustumScene&) const = default;
};

inline constexpr double kGroundZ = -1.0;

/// A posed shape (class `kind`) scaled to fill a random box on the ground
/// plane, plus clutter drawn uniformly in the surrounding slab outside the
/// box. Points are shuffled together; the mask marks the object points.
/// gt_box is the tight oriented box of the noiseless object.
FrustumScene generate_scene(ShapeKind kind, int label, std::size_t n_object_points, std::size_t n_clutter_points,
                            Rng& rng, double noise_sigma = 0.02);

struct SceneSpec {
  std::size_t n_classes = 3;
  std::size_t n_scenes = 200;
  std::size_t n_object_points = 96;
  std::size_t n_clutter_points = 64;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;
};

struct SceneSet {
  std::vector<FrustumScene> scenes;
  std::vector<std::string> class_names;

  std::size_t size() const { return scenes.size(); }
  std::size_t n_classes() const { return class_names.size(); }
};

/// Labels cycle through the classes; scene i draws from derive_seed(seed, i).
SceneSet generate_scenes(const SceneSpec& spec);

void write_scenes(const SceneSet& set, std::ostream& out);
void write_scenes(const SceneSet& set, const std::filesystem::path& path);
SceneSet read_scenes(std::istream& in);
SceneSet read_scenes(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// stage networks

inline constexpr std::size_t kHeadingBins = 4;

/// Center of bin b; the bins split [-pi, pi) into equal arcs.
double heading_bin_center(std::size_t b);
std::size_t heading_bin(double heading);

/// Three point networks, each a shared per-point MLP with max pooling:
///   segmentation  per-point [local | global | one-hot class] -> logit
///   centering     [global of O - centroid | centroid] -> residual; T = centroid + residual
///   box           global -> center residual (3), log size ratio (3),
///                 heading-bin scores (H), per-bin heading residuals (H)
struct PipelineArch {
  std::size_t n_classes = 3;
  std::vector<std::size_t> seg_phi{3, 16, 32};
  std::vector<std::size_t> seg_head{67, 32, 1};
  std::vector<std::size_t> center_phi{3, 32, 64};
  std::vector<std::size_t> center_head{67, 64, 3};
  std::vector<std::size_t> box_phi{3, 32, 64};
  std::vector<std::size_t> box_head{64, 64, 6 + 2 * kHeadingBins};
  std::array<double, 3> size_anchor{1.8, 1.0, 1.1};

  static PipelineArch defaults(std::size_t n_classes);
  std::size_t seg_param_count() const;
  std::size_t center_param_count() const;
  std::size_t box_param_count() const;
  void validate() const;
  bool operator==(const PipelineArch&) const = default;
};

struct PipelineInstance {
  PipelineArch arch;
  std::vector<double> seg;     // theta_P
  std::vector<double> center;  // theta_T
  std::vector<double> box;     // theta_B
  std::uint64_t seed = 0;
};

struct PipelineTrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double lr_decay = 0.97;
  double clip_norm = 3.0;  // gradient L2 norm cap per step; 0 disables
  void validate() const;
};

/// He-normal weights, zero biases; each network draws from its own sub-stream.
/// The output layers of the centering and box heads start at zero.
PipelineInstance init_pipeline(const PipelineArch& arch, std::uint64_t seed);

/// Trains the three stages in order. Segmentation learns the ground-truth
/// mask; centering and box estimation learn from the points the trained
/// segmentation keeps, the box network after centering by the trained
/// centering network.
PipelineInstance train_pipeline(const PipelineArch& arch, const SceneSet& scenes,
                                std::span<const std::size_t> train_indices, std::uint64_t seed,
                                const PipelineTrainConfig& cfg = {});

/// Per-point object probability.
std::vector<double> segment(const PipelineInstance& inst, const PointCloud& points, int label);

inline constexpr double kMaskThreshold = 0.5;

/// Points with probability >= 0.5; if none, the single most probable point
/// (lowest index on ties).
PointCloud mask_points(const PointCloud& points, std::span<const double> probabilities);

/// Elementwise mean of per-instance probability vectors.
std::vector<double> average_probabilities(std::span<const std::vector<double>> per_instance);

Point3 center(const PipelineInstance& inst, const PointCloud& object);
PointCloud apply_center(const PointCloud& object, const Point3& translation);

struct BoxHeads {
  Point3 center_residual{0.0, 0.0, 0.0};
  std::array<double, 3> size{0.0, 0.0, 0.0};
  std::array<double, kHeadingBins> heading_scores{};
  std::array<double, kHeadingBins> heading_residuals{};
};

BoxHeads box_heads(const PipelineInstance& inst, const PointCloud& centered);
/// Center residual and size averaged in value, heading scores averaged
/// before the argmax, residuals averaged per bin.
BoxHeads average_heads(std::span<const BoxHeads> heads);
/// Box in the frame that was translated by -T, moved back by +T.
Box3D decode_box(const BoxHeads& heads, const Point3& translation);
/// Box in the centered frame.
Box3D estimate_box(const PipelineInstance& inst, const PointCloud& centered);

/// segment -> mask -> center -> box with one instance.
Box3D predict_box(const PipelineInstance& inst, const FrustumScene& scene);
/// Upstream stages from instances[0]; box heads averaged over all instances.
Box3D ensemble_last(std::span<const PipelineInstance> instances, const FrustumScene& scene);
/// Probabilities averaged before masking, translations averaged before
/// centering, box heads averaged.
Box3D ensemble_all(std::span<const PipelineInstance> instances, const FrustumScene& scene);

enum class PipelineMode { none, last, all };
std::string_view pipeline_mode_name(PipelineMode m);
PipelineMode parse_pipeline_mode(std::string_view name);
/// none uses instances[0] alone.
Box3D predict_box(std::span<const PipelineInstance> instances, const FrustumScene& scene, PipelineMode mode);

/// Mask IoU between P >= 0.5 and the ground-truth mask.
double mask_iou(std::span<const double> probabilities, std::span<const std::uint8_t> gt_mask);

// ---------------------------------------------------------------------------
// training objectives (exposed for gradient checks)

/// Mean per-point binary cross-entropy against the ground-truth masks.
double segmentation_loss(const PipelineArch& arch, std::span<const double> params, const SceneSet& scenes,
                         std::span<const std::size_t> indices, std::vector<double>* grad);

/// Mean 0.5 * |T - target|^2 over object point sets.
double centering_loss(const PipelineArch& arch, std::span<const double> params, std::span<const PointCloud> objects,
                      std::span<const Point3> targets, std::vector<double>* grad);

/// Box loss on centered object point sets against boxes in the same frame:
/// squared error on center residual and log size ratio, cross-entropy on the
/// heading bin and squared error on that bin's residual.
double box_loss(const PipelineArch& arch, std::span<const double> params, std::span<const PointCloud> centered,
                std::span<const Box3D> targets, std::vector<double>* grad);

// ---------------------------------------------------------------------------
// reports

struct DetectionRow {
  std::size_t scene_id = 0;
  std::string mode;
  double iou = 0.0;
  bool correct = false;
};

/// `scene_id,mode,iou,correct`
void write_detections_csv(std::ostream& out, std::span<const DetectionRow> rows);

class SceneFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pcens
