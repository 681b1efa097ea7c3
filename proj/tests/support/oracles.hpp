#pragma once

// Independent reference implementations and fixtures shared by the unit and
// acceptance tests.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "pcens/models.hpp"
#include "pcens/numerics.hpp"
#include "pcens/pipeline.hpp"
#include "pcens/pointcloud.hpp"

namespace pcens::oracle {

inline PointCloud random_cloud(std::size_t n, Rng& rng) {
  PointCloud pc;
  for (std::size_t i = 0; i < n; ++i) pc.points.push_back({rng.normal(), rng.normal(), rng.normal()});
  return pc;
}

// O(N^2 m) greedy: recompute each candidate's distance to the whole picked set.
inline std::vector<std::size_t> fps(const PointCloud& pc, std::size_t m, std::size_t start) {
  std::vector<std::size_t> picked{start};
  while (picked.size() < m) {
    std::size_t best = pc.size();
    double best_d = -1.0;
    for (std::size_t i = 0; i < pc.size(); ++i) {
      if (std::find(picked.begin(), picked.end(), i) != picked.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t j : picked) d = std::min(d, squared_distance(pc.points[i], pc.points[j]));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    picked.push_back(best);
  }
  return picked;
}

inline std::vector<std::size_t> knn(const PointCloud& pc, std::size_t c, std::size_t k) {
  std::vector<std::size_t> idx(pc.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return squared_distance(pc.points[a], pc.points[c]) < squared_distance(pc.points[b], pc.points[c]);
  });
  idx.resize(k);
  return idx;
}

// Dense-layer arithmetic over consecutive widths.
inline std::size_t layer_sum(const std::vector<std::size_t>& widths) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) n += widths[i] * widths[i + 1] + widths[i + 1];
  return n;
}

inline std::size_t param_count(const ModelArch& a) {
  return layer_sum(a.phi_widths) + layer_sum(a.global_widths) + layer_sum(a.rho_widths);
}

// Small clouds keep the check fast and make ReLU kinks inside the stencil rare.
// The parameters get extra noise so biases are not exactly zero.
inline double classifier_gradient_error(Family family, std::uint64_t seed, double eps = 1e-5) {
  DatasetSpec spec;
  spec.n_classes = 3;
  spec.n_points = 16;
  spec.train_per_class = 1;
  spec.test_per_class = 0;
  spec.seed = seed;
  const auto ds = generate_dataset(spec);
  auto arch = ModelArch::defaults(family, 3);
  arch.n_centroids = 4;
  arch.group_k = 4;
  arch.sum_scale = 1.0 / 16.0;
  auto params = init_model(arch, SeedBundle::all(seed)).params;
  Rng rng(derive_seed(seed, 9));
  for (double& v : params) v += rng.normal(0.0, 0.05);
  const std::vector<std::size_t> idx{0, 1, 2};
  return finite_diff_check(
      [&](std::span<const double> p, std::vector<double>* g) { return loss_and_gradient(arch, p, ds, idx, seed, g); },
      params, eps);
}

enum class Stage { segmentation, centering, box };

// A few small scenes; the object points come from the ground-truth mask and
// the box targets are expressed around the ground-truth center.
inline double stage_gradient_error(Stage stage, std::uint64_t seed, double eps = 1e-5) {
  SceneSpec spec;
  spec.n_scenes = 3;
  spec.n_object_points = 12;
  spec.n_clutter_points = 8;
  spec.seed = seed;
  const SceneSet set = generate_scenes(spec);
  const auto arch = PipelineArch::defaults(spec.n_classes);
  auto inst = init_pipeline(arch, seed);
  Rng rng(derive_seed(seed, 9));
  auto noisy = [&](std::vector<double> p) {
    for (double& v : p) v += rng.normal(0.0, 0.05);
    return p;
  };
  const std::vector<std::size_t> idx{0, 1, 2};
  std::vector<PointCloud> objects, centered;
  std::vector<Point3> centers;
  std::vector<Box3D> local;
  for (const auto& s : set.scenes) {
    PointCloud o;
    for (std::size_t i = 0; i < s.points.size(); ++i)
      if (s.gt_mask[i]) o.points.push_back(s.points.points[i]);
    objects.push_back(o);
    centers.push_back(s.gt_box.center);
    centered.push_back(apply_center(o, s.gt_box.center));
    Box3D b = s.gt_box;
    b.center = {0.0, 0.0, 0.0};
    local.push_back(b);
  }
  switch (stage) {
    case Stage::segmentation:
      return finite_diff_check(
          [&](std::span<const double> p, std::vector<double>* g) { return segmentation_loss(arch, p, set, idx, g); },
          noisy(inst.seg), eps);
    case Stage::centering:
      return finite_diff_check(
          [&](std::span<const double> p, std::vector<double>* g) {
            return centering_loss(arch, p, objects, centers, g);
          },
          noisy(inst.center), eps);
    case Stage::box:
      return finite_diff_check(
          [&](std::span<const double> p, std::vector<double>* g) { return box_loss(arch, p, centered, local, g); },
          noisy(inst.box), eps);
  }
  return 0.0;
}

// Fraction of uniform samples in the joint bounding square that fall in both
// rectangles, scaled to area; the BEV IoU follows from the two exact areas.
inline double monte_carlo_bev_iou(const Box3D& a, const Box3D& b, std::size_t samples, Rng& rng) {
  double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
  for (const Box3D* box : {&a, &b})
    for (const auto& c : bev_corners(*box))
      for (int d = 0; d < 2; ++d) {
        lo[d] = std::min(lo[d], c[d]);
        hi[d] = std::max(hi[d], c[d]);
      }
  auto inside = [](const Box3D& box, double x, double y) {
    const double dx = x - box.center[0], dy = y - box.center[1];
    const double c = std::cos(box.heading), s = std::sin(box.heading);
    const double u = c * dx + s * dy, v = -s * dx + c * dy;
    return std::abs(u) <= 0.5 * box.size[0] && std::abs(v) <= 0.5 * box.size[1];
  };
  std::size_t both = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = rng.uniform(lo[0], hi[0]), y = rng.uniform(lo[1], hi[1]);
    if (inside(a, x, y) && inside(b, x, y)) ++both;
  }
  const double inter = (hi[0] - lo[0]) * (hi[1] - lo[1]) * static_cast<double>(both) / static_cast<double>(samples);
  const double area_a = a.size[0] * a.size[1], area_b = b.size[0] * b.size[1];
  return inter / (area_a + area_b - inter);
}

}  // namespace pcens::oracle
