#include "pcens/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "pcens/models.hpp"

namespace pcens {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

Point3 mean_point(const PointCloud& pc) {
  Point3 c{0.0, 0.0, 0.0};
  for (const auto& p : pc.points)
    for (int d = 0; d < 3; ++d) c[d] += p[d];
  for (double& v : c) v /= static_cast<double>(pc.size());
  return c;
}

// Shared per-point MLP followed by a max over points.
struct Pooled {
  MlpTrace trace;
  std::vector<double> feature;
  std::vector<std::size_t> winner;
};

Pooled pool_forward(std::span<const double> params, const MlpLayout& phi, const PointCloud& pc) {
  if (pc.size() == 0) throw std::invalid_argument("pipeline: empty point set");
  Mat in(pc.size(), 3);
  for (std::size_t i = 0; i < pc.size(); ++i)
    for (std::size_t d = 0; d < 3; ++d) in(i, d) = pc.points[i][d];
  Pooled p;
  p.trace = mlp_forward(params, phi, in);
  const Mat& out = p.trace.output();
  const std::size_t F = out.cols();
  p.feature.assign(out.row(0).begin(), out.row(0).end());
  p.winner.assign(F, 0);
  for (std::size_t i = 1; i < out.rows(); ++i)
    for (std::size_t j = 0; j < F; ++j)
      if (out(i, j) > p.feature[j]) {
        p.feature[j] = out(i, j);
        p.winner[j] = i;
      }
  return p;
}

// `dpoints` (optional) carries gradient on every per-point feature; the pooled
// gradient is routed to the winning rows on top of it.
void pool_backward(std::span<const double> params, const MlpLayout& phi, const Pooled& p,
                   std::span<const double> dfeature, std::span<double> grad, Mat dpoints = {}) {
  const Mat& out = p.trace.output();
  if (dpoints.empty()) dpoints = Mat(out.rows(), out.cols());
  for (std::size_t j = 0; j < dfeature.size(); ++j) dpoints(p.winner[j], j) += dfeature[j];
  mlp_backward(params, phi, p.trace, dpoints, grad);
}

Mat row_matrix(std::span<const double> v) { return Mat(1, v.size(), std::vector<double>(v.begin(), v.end())); }

MlpLayout feature_layout(const std::vector<std::size_t>& w) { return {w, Activation::relu_all}; }
MlpLayout head_layout(const std::vector<std::size_t>& w) { return {w, Activation::relu_hidden_linear_out}; }

// Parameter slices [phi | head] of one stage network.
struct StageView {
  MlpLayout phi;
  MlpLayout head;
  std::span<const double> phi_params;
  std::span<const double> head_params;
  StageView(const std::vector<std::size_t>& phi_w, const std::vector<std::size_t>& head_w,
            std::span<const double> params)
      : phi(feature_layout(phi_w)), head(head_layout(head_w)) {
    if (params.size() != phi.param_count() + head.param_count())
      throw std::invalid_argument("pipeline: stage parameter length mismatch");
    phi_params = params.subspan(0, phi.param_count());
    head_params = params.subspan(phi.param_count());
  }
};

struct SegForward {
  Pooled pooled;
  MlpTrace head;
};

SegForward seg_forward(const StageView& v, std::size_t n_classes, const PointCloud& pc, int label) {
  SegForward s{pool_forward(v.phi_params, v.phi, pc), {}};
  const Mat& f = s.pooled.trace.output();
  const std::size_t F = f.cols();
  Mat x(pc.size(), 2 * F + n_classes);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    for (std::size_t j = 0; j < F; ++j) {
      x(i, j) = f(i, j);
      x(i, F + j) = s.pooled.feature[j];
    }
    x(i, 2 * F + static_cast<std::size_t>(label)) = 1.0;
  }
  s.head = mlp_forward(v.head_params, v.head, x);
  return s;
}

struct CenterForward {
  Point3 centroid;
  Pooled pooled;
  MlpTrace head;

  Point3 translation() const {
    const auto r = head.output().row(0);
    return {centroid[0] + r[0], centroid[1] + r[1], centroid[2] + r[2]};
  }
};

// The network sees the object relative to its centroid and predicts a residual.
CenterForward center_forward(const StageView& v, const PointCloud& object) {
  if (object.size() == 0) throw std::invalid_argument("pipeline: empty point set");
  const Point3 m = mean_point(object);
  PointCloud local = object;
  for (auto& p : local.points)
    for (std::size_t d = 0; d < 3; ++d) p[d] -= m[d];
  CenterForward c{m, pool_forward(v.phi_params, v.phi, local), {}};
  std::vector<double> x = c.pooled.feature;
  x.insert(x.end(), m.begin(), m.end());
  c.head = mlp_forward(v.head_params, v.head, row_matrix(x));
  return c;
}

struct BoxForward {
  Pooled pooled;
  MlpTrace head;
};

BoxForward box_forward(const StageView& v, const PointCloud& centered) {
  BoxForward b{pool_forward(v.phi_params, v.phi, centered), {}};
  b.head = mlp_forward(v.head_params, v.head, row_matrix(b.pooled.feature));
  return b;
}

void check_indices(const SceneSet& scenes, std::span<const std::size_t> indices, const char* who) {
  if (indices.empty()) throw std::invalid_argument(std::string(who) + ": no scenes");
  for (std::size_t i : indices)
    if (i >= scenes.size()) throw std::invalid_argument(std::string(who) + ": scene index out of range");
}

// ---------------------------------------------------------------------------
// text parsing for scene files

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> t;
  for (std::string s; ss >> s;) t.push_back(s);
  return t;
}

bool parse_real(const std::string& s, double& v) {
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return !s.empty() && end == s.c_str() + s.size() && std::isfinite(v);
}

bool parse_count(const std::string& s, std::size_t& v) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) return false;
  try {
    v = std::stoul(s);
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// boxes

double wrap_angle(double a) {
  if (!std::isfinite(a)) throw std::invalid_argument("wrap_angle: non-finite angle");
  if (a >= -kPi && a < kPi) return a;
  double r = std::fmod(a + kPi, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  r -= kPi;
  return r >= kPi ? -kPi : r;
}

void Box3D::validate() const {
  for (double c : center)
    if (!std::isfinite(c)) throw std::invalid_argument("Box3D: non-finite center");
  for (double s : size)
    if (!(s > 0.0 && std::isfinite(s))) throw std::invalid_argument("Box3D: extents must be positive");
  if (!(heading >= -kPi && heading < kPi)) throw std::invalid_argument("Box3D: heading outside [-pi, pi)");
}

std::array<Point2, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double hx = 0.5 * b.size[0], hy = 0.5 * b.size[1];
  const std::array<Point2, 4> local{{{hx, -hy}, {hx, hy}, {-hx, hy}, {-hx, -hy}}};
  std::array<Point2, 4> out;
  for (std::size_t i = 0; i < 4; ++i)
    out[i] = {b.center[0] + c * local[i][0] - s * local[i][1], b.center[1] + s * local[i][0] + c * local[i][1]};
  return out;
}

bool box_contains(const Box3D& b, const Point3& p, double margin) {
  const double dx = p[0] - b.center[0], dy = p[1] - b.center[1], dz = p[2] - b.center[2];
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.size[0] + margin && std::abs(ly) <= 0.5 * b.size[1] + margin &&
         std::abs(dz) <= 0.5 * b.size[2] + margin;
}

std::vector<Point2> clip_convex(std::span<const Point2> subject, std::span<const Point2> clip) {
  std::vector<Point2> out(subject.begin(), subject.end());
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Point2 a = clip[e], b = clip[(e + 1) % clip.size()];
    auto side = [&](const Point2& p) { return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]); };
    std::vector<Point2> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Point2& p = in[i];
      const Point2& q = in[(i + 1) % in.size()];
      const double sp = side(p), sq = side(q);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back({p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])});
      }
    }
  }
  return out;
}

double polygon_area(std::span<const Point2> poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % poly.size()];
    a += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * std::abs(a);
}

std::string_view iou_mode_name(IouMode m) { return m == IouMode::ground ? "ground" : "full3d"; }

double iou(const Box3D& a, const Box3D& b, IouMode mode) {
  a.validate();
  b.validate();
  const auto ca = bev_corners(a), cb = bev_corners(b);
  const double inter = polygon_area(clip_convex(ca, cb));
  const double area_a = a.size[0] * a.size[1], area_b = b.size[0] * b.size[1];
  double r = 0.0;
  if (mode == IouMode::ground) {
    r = inter / (area_a + area_b - inter);
  } else {
    const double top = std::min(a.center[2] + 0.5 * a.size[2], b.center[2] + 0.5 * b.size[2]);
    const double bottom = std::max(a.center[2] - 0.5 * a.size[2], b.center[2] - 0.5 * b.size[2]);
    const double i3 = inter * std::max(0.0, top - bottom);
    r = i3 / (area_a * a.size[2] + area_b * b.size[2] - i3);
  }
  return std::clamp(r, 0.0, 1.0);
}

double average_precision(std::span<const Box3D> predictions, std::span<const Box3D> ground_truth,
                         double iou_threshold, IouMode mode) {
  if (predictions.size() != ground_truth.size()) throw std::invalid_argument("average_precision: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("average_precision: no scenes");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (iou(predictions[i], ground_truth[i], mode) >= iou_threshold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------------------
// scenes

std::size_t FrustumScene::n_object_points() const {
  return static_cast<std::size_t>(std::count(gt_mask.begin(), gt_mask.end(), std::uint8_t{1}));
}

void FrustumScene::validate(std::size_t n_classes) const {
  if (gt_mask.size() != points.size()) throw std::invalid_argument("FrustumScene: mask length differs from point count");
  if (n_object_points() == 0) throw std::invalid_argument("FrustumScene: no object points");
  for (auto m : gt_mask)
    if (m > 1) throw std::invalid_argument("FrustumScene: mask entries must be 0 or 1");
  if (label < 0 || static_cast<std::size_t>(label) >= n_classes) throw std::invalid_argument("FrustumScene: label out of range");
  gt_box.validate();
}

FrustumScene generate_scene(ShapeKind kind, int label, std::size_t n_object_points, std::size_t n_clutter_points,
                            Rng& rng, double noise_sigma) {
  if (n_object_points < 1) throw std::invalid_argument("generate_scene: need at least one object point");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("generate_scene: noise_sigma must be >= 0");
  const std::array<double, 3> target{rng.uniform(1.2, 2.4), rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.5)};
  const double heading = rng.uniform(-0.5 * kPi, 0.5 * kPi);
  const double cx = rng.uniform(-1.5, 1.5), cy = rng.uniform(-1.5, 1.5);

  // stretch the canonical surface so its axis-aligned extent equals the target box
  PointCloud obj = sample_surface(kind, n_object_points, ShapeParams{}, rng);
  Point3 lo = obj.points[0], hi = obj.points[0];
  for (const auto& p : obj.points)
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], p[d]);
      hi[d] = std::max(hi[d], p[d]);
    }
  for (auto& p : obj.points)
    for (int d = 0; d < 3; ++d) {
      const double ext = hi[d] - lo[d];
      p[d] = ext > 1e-12 ? (p[d] - 0.5 * (lo[d] + hi[d])) / ext * target[d] : 0.0;
    }
  lo = hi = obj.points[0];
  for (const auto& p : obj.points)
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], p[d]);
      hi[d] = std::max(hi[d], p[d]);
    }

  FrustumScene s;
  s.label = label;
  const double c = std::cos(heading), sn = std::sin(heading);
  const Point3 base{cx, cy, kGroundZ + 0.5 * (hi[2] - lo[2])};
  auto pose = [&](const Point3& p) {
    return Point3{base[0] + c * p[0] - sn * p[1], base[1] + sn * p[0] + c * p[1], base[2] + p[2]};
  };
  s.gt_box.center = pose({0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])});
  for (int d = 0; d < 3; ++d) s.gt_box.size[d] = std::max(hi[d] - lo[d], 1e-6);
  s.gt_box.heading = wrap_angle(heading);

  std::vector<Point3> pts;
  std::vector<std::uint8_t> mask;
  for (const auto& p : obj.points) {
    Point3 w = pose(p);
    for (double& v : w) v += rng.normal(0.0, noise_sigma);
    pts.push_back(w);
    mask.push_back(1);
  }
  const std::size_t max_tries = 1000 * (n_clutter_points + 1);
  for (std::size_t k = 0, tries = 0; k < n_clutter_points; ++tries) {
    if (tries > max_tries) throw std::runtime_error("generate_scene: clutter rejection sampling did not finish");
    const Point3 p{rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0), rng.uniform(kGroundZ - 0.1, kGroundZ + 2.5)};
    if (box_contains(s.gt_box, p, 0.15)) continue;
    pts.push_back(p);
    mask.push_back(0);
    ++k;
  }

  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_indices(order, rng);
  for (std::size_t i : order) {
    s.points.points.push_back(pts[i]);
    s.gt_mask.push_back(mask[i]);
  }
  return s;
}

SceneSet generate_scenes(const SceneSpec& spec) {
  if (spec.n_classes < 1 || spec.n_classes > kShapeKindCount)
    throw std::invalid_argument("generate_scenes: n_classes must be in [1, " + std::to_string(kShapeKindCount) + "]");
  if (spec.n_scenes < 1) throw std::invalid_argument("generate_scenes: need at least one scene");
  SceneSet set;
  for (std::size_t c = 0; c < spec.n_classes; ++c) set.class_names.emplace_back(shape_kind_name(shape_kind_from_index(c)));
  for (std::size_t i = 0; i < spec.n_scenes; ++i) {
    Rng rng(derive_seed(spec.seed, i));
    const std::size_t c = i % spec.n_classes;
    set.scenes.push_back(generate_scene(shape_kind_from_index(c), static_cast<int>(c), spec.n_object_points,
                                        spec.n_clutter_points, rng, spec.noise_sigma));
  }
  return set;
}

void write_scenes(const SceneSet& set, std::ostream& out) {
  if (set.scenes.empty()) throw std::invalid_argument("write_scenes: empty scene set");
  const std::size_t n = set.scenes.front().points.size();
  for (const auto& s : set.scenes) {
    s.validate(set.n_classes());
    if (s.points.size() != n) throw std::invalid_argument("write_scenes: scenes differ in point count");
  }
  out << "PSCENE 1 " << set.scenes.size() << ' ' << set.n_classes() << ' ' << n << '\n';
  for (std::size_t c = 0; c < set.class_names.size(); ++c) out << (c ? " " : "") << set.class_names[c];
  out << '\n';
  for (const auto& s : set.scenes) {
    out << s.label << '\n';
    for (std::size_t i = 0; i < s.gt_mask.size(); ++i) out << (i ? " " : "") << int(s.gt_mask[i]);
    out << '\n';
    const Box3D& b = s.gt_box;
    out << format_real(b.center[0]) << ' ' << format_real(b.center[1]) << ' ' << format_real(b.center[2]) << ' '
        << format_real(b.size[0]) << ' ' << format_real(b.size[1]) << ' ' << format_real(b.size[2]) << ' '
        << format_real(b.heading) << '\n';
    for (const auto& p : s.points.points)
      out << format_real(p[0]) << ' ' << format_real(p[1]) << ' ' << format_real(p[2]) << '\n';
  }
}

void write_scenes(const SceneSet& set, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_scenes(set, f);
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

SceneSet read_scenes(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) { return SceneFormatError("line " + std::to_string(line_no) + ": " + what); };
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) {
      ++line_no;
      throw fail(std::string("unexpected end of file, expected ") + what);
    }
    ++line_no;
    return tokens(line);
  };
  const auto head = next("header");
  std::size_t n_scenes = 0, n_classes = 0, n_points = 0;
  if (head.size() != 5 || head[0] != "PSCENE" || !parse_count(head[2], n_scenes) ||
      !parse_count(head[3], n_classes) || !parse_count(head[4], n_points))
    throw fail("malformed header, expected 'PSCENE 1 <n_scenes> <n_classes> <n_points>'");
  if (head[1] != "1") throw fail("unsupported scene file version " + head[1]);
  if (n_classes < 1 || n_points < 1) throw fail("need at least one class and one point");

  SceneSet set;
  set.class_names = next("class names");
  if (set.class_names.size() != n_classes) throw fail("expected " + std::to_string(n_classes) + " class names");
  for (std::size_t k = 0; k < n_scenes; ++k) {
    FrustumScene s;
    const auto lab = next("label");
    std::size_t label = 0;
    if (lab.size() != 1 || !parse_count(lab[0], label) || label >= n_classes) throw fail("bad label");
    s.label = static_cast<int>(label);
    const auto mask = next("mask");
    if (mask.size() != n_points) throw fail("mask needs " + std::to_string(n_points) + " entries");
    for (const auto& m : mask) {
      if (m != "0" && m != "1") throw fail("mask entries must be 0 or 1");
      s.gt_mask.push_back(m == "1" ? 1 : 0);
    }
    const auto box = next("box");
    double v[7];
    if (box.size() != 7) throw fail("box line needs 'cx cy cz sx sy sz heading'");
    for (int i = 0; i < 7; ++i)
      if (!parse_real(box[static_cast<std::size_t>(i)], v[i])) throw fail("malformed box value");
    s.gt_box = {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}, v[6]};
    for (std::size_t p = 0; p < n_points; ++p) {
      const auto t = next("point");
      Point3 q;
      if (t.size() != 3) throw fail("expected 3 coordinates");
      for (std::size_t d = 0; d < 3; ++d)
        if (!parse_real(t[d], q[d])) throw fail("malformed or non-finite coordinate");
      s.points.points.push_back(q);
    }
    try {
      s.validate(n_classes);
    } catch (const std::invalid_argument& e) {
      throw fail(e.what());
    }
    set.scenes.push_back(std::move(s));
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!tokens(line).empty()) throw fail("trailing content after last scene");
  }
  return set;
}

SceneSet read_scenes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  return read_scenes(f);
}

// ---------------------------------------------------------------------------
// stage networks

double heading_bin_center(std::size_t b) {
  if (b >= kHeadingBins) throw std::out_of_range("heading_bin_center: bin out of range");
  return -kPi + (static_cast<double>(b) + 0.5) * kTwoPi / static_cast<double>(kHeadingBins);
}

std::size_t heading_bin(double heading) {
  const double h = wrap_angle(heading);
  const auto b = static_cast<std::size_t>(std::floor((h + kPi) / (kTwoPi / static_cast<double>(kHeadingBins))));
  return std::min(b, kHeadingBins - 1);
}

PipelineArch PipelineArch::defaults(std::size_t n_classes) {
  PipelineArch a;
  a.n_classes = n_classes;
  a.seg_head.front() = 2 * a.seg_phi.back() + n_classes;
  return a;
}

std::size_t PipelineArch::seg_param_count() const {
  return feature_layout(seg_phi).param_count() + head_layout(seg_head).param_count();
}
std::size_t PipelineArch::center_param_count() const {
  return feature_layout(center_phi).param_count() + head_layout(center_head).param_count();
}
std::size_t PipelineArch::box_param_count() const {
  return feature_layout(box_phi).param_count() + head_layout(box_head).param_count();
}

void PipelineArch::validate() const {
  if (n_classes < 1) throw std::invalid_argument("PipelineArch: need at least one class");
  for (const auto* w : {&seg_phi, &seg_head, &center_phi, &center_head, &box_phi, &box_head}) {
    if (w->size() < 2) throw std::invalid_argument("PipelineArch: every network needs at least one layer");
    for (std::size_t v : *w)
      if (v == 0) throw std::invalid_argument("PipelineArch: zero layer width");
  }
  if (seg_phi.front() != 3 || center_phi.front() != 3 || box_phi.front() != 3)
    throw std::invalid_argument("PipelineArch: point networks take 3 inputs");
  if (seg_head.front() != 2 * seg_phi.back() + n_classes || seg_head.back() != 1)
    throw std::invalid_argument("PipelineArch: segmentation head must map [local | global | class] to 1");
  if (center_head.front() != center_phi.back() + 3 || center_head.back() != 3)
    throw std::invalid_argument("PipelineArch: centering head must map [global | centroid] to 3");
  if (box_head.front() != box_phi.back() || box_head.back() != 6 + 2 * kHeadingBins)
    throw std::invalid_argument("PipelineArch: box head must map global to 6 + 2H outputs");
  for (double s : size_anchor)
    if (!(s > 0.0 && std::isfinite(s))) throw std::invalid_argument("PipelineArch: size anchors must be positive");
}

void PipelineTrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("PipelineTrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("PipelineTrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("PipelineTrainConfig: learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("PipelineTrainConfig: momentum outside [0,1)");
  if (!(lr_decay > 0.0)) throw std::invalid_argument("PipelineTrainConfig: lr_decay must be > 0");
  if (!(clip_norm >= 0.0)) throw std::invalid_argument("PipelineTrainConfig: clip_norm must be >= 0");
}

PipelineInstance init_pipeline(const PipelineArch& arch, std::uint64_t seed) {
  arch.validate();
  PipelineInstance inst;
  inst.arch = arch;
  inst.seed = seed;
  auto init = [&](std::vector<double>& params, const std::vector<std::size_t>& phi, const std::vector<std::size_t>& head,
                  std::uint64_t stream) {
    const MlpLayout p = feature_layout(phi), h = head_layout(head);
    params.assign(p.param_count() + h.param_count(), 0.0);
    Rng rng(derive_seed(seed, stream));
    init_mlp(std::span(params).subspan(0, p.param_count()), p, rng);
    init_mlp(std::span(params).subspan(p.param_count()), h, rng);
  };
  init(inst.seg, arch.seg_phi, arch.seg_head, 1);
  init(inst.center, arch.center_phi, arch.center_head, 2);
  init(inst.box, arch.box_phi, arch.box_head, 3);
  // regression outputs start at zero: T at the centroid, sizes at the anchor
  auto zero_output = [](std::vector<double>& params, const std::vector<std::size_t>& phi,
                        const std::vector<std::size_t>& head) {
    const MlpLayout h = head_layout(head);
    const std::size_t last = h.n_layers() - 1;
    const auto begin = params.begin() + static_cast<std::ptrdiff_t>(feature_layout(phi).param_count() + h.layer_offset(last));
    std::fill(begin, begin + static_cast<std::ptrdiff_t>(h.widths[last] * h.widths[last + 1]), 0.0);
  };
  zero_output(inst.center, arch.center_phi, arch.center_head);
  zero_output(inst.box, arch.box_phi, arch.box_head);
  return inst;
}

double segmentation_loss(const PipelineArch& arch, std::span<const double> params, const SceneSet& scenes,
                         std::span<const std::size_t> indices, std::vector<double>* grad) {
  check_indices(scenes, indices, "segmentation_loss");
  const StageView v(arch.seg_phi, arch.seg_head, params);
  if (grad) grad->assign(params.size(), 0.0);
  const std::size_t F = v.phi.output_width();
  const double inv_scenes = 1.0 / static_cast<double>(indices.size());
  double loss = 0.0;
  for (std::size_t idx : indices) {
    const FrustumScene& s = scenes.scenes[idx];
    const SegForward f = seg_forward(v, arch.n_classes, s.points, s.label);
    const std::size_t n = s.points.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    Mat dz(n, 1);
    double scene_loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = f.head.output()(i, 0);
      const double y = s.gt_mask[i];
      scene_loss += softplus(z) - y * z;
      dz(i, 0) = (sigmoid(z) - y) * inv_n * inv_scenes;
    }
    loss += scene_loss * inv_n * inv_scenes;
    if (!grad) continue;
    std::span<double> g(*grad);
    const Mat dx = mlp_backward(v.head_params, v.head, f.head, dz, g.subspan(v.phi.param_count()), nullptr, true);
    Mat dlocal(n, F);
    std::vector<double> dglobal(F, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < F; ++j) {
        dlocal(i, j) = dx(i, j);
        dglobal[j] += dx(i, F + j);
      }
    pool_backward(v.phi_params, v.phi, f.pooled, dglobal, g.subspan(0, v.phi.param_count()), std::move(dlocal));
  }
  return loss;
}

double centering_loss(const PipelineArch& arch, std::span<const double> params, std::span<const PointCloud> objects,
                      std::span<const Point3> targets, std::vector<double>* grad) {
  if (objects.empty() || objects.size() != targets.size())
    throw std::invalid_argument("centering_loss: need one target per object");
  const StageView v(arch.center_phi, arch.center_head, params);
  if (grad) grad->assign(params.size(), 0.0);
  const std::size_t F = v.phi.output_width();
  const double inv = 1.0 / static_cast<double>(objects.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const CenterForward f = center_forward(v, objects[k]);
    const Point3 t = f.translation();
    std::vector<double> dt(3);
    for (std::size_t d = 0; d < 3; ++d) {
      const double e = t[d] - targets[k][d];
      loss += 0.5 * e * e * inv;
      dt[d] = e * inv;
    }
    if (!grad) continue;
    std::span<double> g(*grad);
    const Mat dx = mlp_backward(v.head_params, v.head, f.head, row_matrix(dt), g.subspan(v.phi.param_count()), nullptr, true);
    pool_backward(v.phi_params, v.phi, f.pooled, dx.row(0).subspan(0, F), g.subspan(0, v.phi.param_count()));
  }
  return loss;
}

double box_loss(const PipelineArch& arch, std::span<const double> params, std::span<const PointCloud> centered,
                std::span<const Box3D> targets, std::vector<double>* grad) {
  if (centered.empty() || centered.size() != targets.size())
    throw std::invalid_argument("box_loss: need one target per object");
  const StageView v(arch.box_phi, arch.box_head, params);
  if (grad) grad->assign(params.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(centered.size());
  constexpr std::size_t H = kHeadingBins;
  double loss = 0.0;
  for (std::size_t k = 0; k < centered.size(); ++k) {
    const Box3D& gt = targets[k];
    const BoxForward f = box_forward(v, centered[k]);
    const auto r = f.head.output().row(0);
    std::vector<double> dr(r.size(), 0.0);
    for (std::size_t d = 0; d < 3; ++d) {
      const double ec = r[d] - gt.center[d];
      const double es = r[3 + d] - std::log(gt.size[d] / arch.size_anchor[d]);
      loss += 0.5 * (ec * ec + es * es) * inv;
      dr[d] = ec * inv;
      dr[3 + d] = es * inv;
    }
    const std::size_t bin = heading_bin(gt.heading);
    const std::span<const double> scores(r.data() + 6, H);
    loss += (log_sum_exp(scores) - scores[bin]) * inv;
    const auto p = softmax(scores);
    for (std::size_t b = 0; b < H; ++b) dr[6 + b] = (p[b] - (b == bin ? 1.0 : 0.0)) * inv;
    const double er = r[6 + H + bin] - (gt.heading - heading_bin_center(bin));
    loss += 0.5 * er * er * inv;
    dr[6 + H + bin] = er * inv;
    if (!grad) continue;
    std::span<double> g(*grad);
    const Mat dx = mlp_backward(v.head_params, v.head, f.head, row_matrix(dr), g.subspan(v.phi.param_count()), nullptr, true);
    pool_backward(v.phi_params, v.phi, f.pooled, dx.row(0), g.subspan(0, v.phi.param_count()));
  }
  return loss;
}

namespace {

using StageLoss = std::function<double(std::span<const double>, std::span<const std::size_t>, std::vector<double>*)>;

void fit_stage(std::vector<double>& params, std::span<const std::size_t> train, const StageLoss& loss_fn,
               const PipelineTrainConfig& cfg, Rng& order_rng, const char* stage) {
  SgdState sgd{std::vector<double>(params.size(), 0.0), cfg.learning_rate};
  std::vector<double> grad;
  std::vector<std::size_t> order(train.begin(), train.end());
  std::vector<std::size_t> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(order, order_rng);
    for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      const double loss = loss_fn(params, batch, &grad);
      if (!std::isfinite(loss))
        throw TrainingError(std::string(stage) + ": non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b));
      if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (double g : grad) sq += g * g;
        if (sq > cfg.clip_norm * cfg.clip_norm)
          for (double& g : grad) g *= cfg.clip_norm / std::sqrt(sq);
      }
      sgd_step(params, grad, sgd, cfg.momentum);
    }
    sgd.lr *= cfg.lr_decay;
  }
  for (double v : params)
    if (!std::isfinite(v)) throw TrainingError(std::string(stage) + ": non-finite parameter after training");
}

}  // namespace

PipelineInstance train_pipeline(const PipelineArch& arch, const SceneSet& scenes,
                                std::span<const std::size_t> train_indices, std::uint64_t seed,
                                const PipelineTrainConfig& cfg) {
  cfg.validate();
  arch.validate();
  if (scenes.n_classes() != arch.n_classes)
    throw std::invalid_argument("train_pipeline: scene set has " + std::to_string(scenes.n_classes()) +
                                " classes, architecture expects " + std::to_string(arch.n_classes));
  check_indices(scenes, train_indices, "train_pipeline");
  for (std::size_t i : train_indices) scenes.scenes[i].validate(arch.n_classes);

  PipelineInstance inst = init_pipeline(arch, seed);
  Rng seg_rng(derive_seed(seed, 4)), center_rng(derive_seed(seed, 5)), box_rng(derive_seed(seed, 6));

  fit_stage(inst.seg, train_indices,
            [&](std::span<const double> p, std::span<const std::size_t> b, std::vector<double>* g) {
              return segmentation_loss(arch, p, scenes, b, g);
            },
            cfg, seg_rng, "segmentation");
  // downstream stages see the masks the trained segmentation produces
  std::vector<PointCloud> objects(scenes.size());
  std::vector<Point3> centers(scenes.size());
  for (std::size_t i : train_indices) {
    const FrustumScene& s = scenes.scenes[i];
    objects[i] = mask_points(s.points, segment(inst, s.points, s.label));
    centers[i] = s.gt_box.center;
  }
  std::vector<PointCloud> batch_objects;
  std::vector<Point3> batch_centers;
  fit_stage(inst.center, train_indices,
            [&](std::span<const double> p, std::span<const std::size_t> b, std::vector<double>* g) {
              batch_objects.clear();
              batch_centers.clear();
              for (std::size_t i : b) {
                batch_objects.push_back(objects[i]);
                batch_centers.push_back(centers[i]);
              }
              return centering_loss(arch, p, batch_objects, batch_centers, g);
            },
            cfg, center_rng, "centering");

  std::vector<Box3D> local_boxes(scenes.size());
  for (std::size_t i : train_indices) {
    const Point3 t = center(inst, objects[i]);
    objects[i] = apply_center(objects[i], t);
    local_boxes[i] = scenes.scenes[i].gt_box;
    for (std::size_t d = 0; d < 3; ++d) local_boxes[i].center[d] -= t[d];
  }
  std::vector<Box3D> batch_boxes;
  fit_stage(inst.box, train_indices,
            [&](std::span<const double> p, std::span<const std::size_t> b, std::vector<double>* g) {
              batch_objects.clear();
              batch_boxes.clear();
              for (std::size_t i : b) {
                batch_objects.push_back(objects[i]);
                batch_boxes.push_back(local_boxes[i]);
              }
              return box_loss(arch, p, batch_objects, batch_boxes, g);
            },
            cfg, box_rng, "box");
  return inst;
}

std::vector<double> segment(const PipelineInstance& inst, const PointCloud& points, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= inst.arch.n_classes)
    throw std::invalid_argument("segment: class out of range");
  const StageView v(inst.arch.seg_phi, inst.arch.seg_head, inst.seg);
  const SegForward f = seg_forward(v, inst.arch.n_classes, points, label);
  std::vector<double> p(points.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = sigmoid(f.head.output()(i, 0));
  return p;
}

PointCloud mask_points(const PointCloud& points, std::span<const double> probabilities) {
  if (probabilities.size() != points.size()) throw std::invalid_argument("mask_points: length mismatch");
  if (points.size() == 0) throw std::invalid_argument("mask_points: empty point set");
  PointCloud o;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (probabilities[i] >= kMaskThreshold) o.points.push_back(points.points[i]);
  if (o.size() == 0) o.points.push_back(points.points[argmax(probabilities)]);
  return o;
}

std::vector<double> average_probabilities(std::span<const std::vector<double>> per_instance) {
  if (per_instance.empty()) throw std::invalid_argument("average_probabilities: no instances");
  std::vector<double> m(per_instance.front().size(), 0.0);
  for (const auto& p : per_instance) {
    if (p.size() != m.size()) throw std::invalid_argument("average_probabilities: length mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += p[i];
  }
  for (double& v : m) v /= static_cast<double>(per_instance.size());
  return m;
}

Point3 center(const PipelineInstance& inst, const PointCloud& object) {
  const StageView v(inst.arch.center_phi, inst.arch.center_head, inst.center);
  return center_forward(v, object).translation();
}

PointCloud apply_center(const PointCloud& object, const Point3& translation) {
  PointCloud c = object;
  for (auto& p : c.points)
    for (std::size_t d = 0; d < 3; ++d) p[d] -= translation[d];
  return c;
}

BoxHeads box_heads(const PipelineInstance& inst, const PointCloud& centered) {
  const StageView v(inst.arch.box_phi, inst.arch.box_head, inst.box);
  const auto f = box_forward(v, centered);
  const auto r = f.head.output().row(0);
  BoxHeads h;
  for (std::size_t d = 0; d < 3; ++d) {
    h.center_residual[d] = r[d];
    h.size[d] = inst.arch.size_anchor[d] * std::exp(r[3 + d]);
  }
  for (std::size_t b = 0; b < kHeadingBins; ++b) {
    h.heading_scores[b] = r[6 + b];
    h.heading_residuals[b] = r[6 + kHeadingBins + b];
  }
  return h;
}

BoxHeads average_heads(std::span<const BoxHeads> heads) {
  if (heads.empty()) throw std::invalid_argument("average_heads: no instances");
  BoxHeads m;
  for (const auto& h : heads) {
    for (std::size_t d = 0; d < 3; ++d) {
      m.center_residual[d] += h.center_residual[d];
      m.size[d] += h.size[d];
    }
    for (std::size_t b = 0; b < kHeadingBins; ++b) {
      m.heading_scores[b] += h.heading_scores[b];
      m.heading_residuals[b] += h.heading_residuals[b];
    }
  }
  const double n = static_cast<double>(heads.size());
  for (std::size_t d = 0; d < 3; ++d) {
    m.center_residual[d] /= n;
    m.size[d] /= n;
  }
  for (std::size_t b = 0; b < kHeadingBins; ++b) {
    m.heading_scores[b] /= n;
    m.heading_residuals[b] /= n;
  }
  return m;
}

Box3D decode_box(const BoxHeads& heads, const Point3& translation) {
  Box3D b;
  for (std::size_t d = 0; d < 3; ++d) b.center[d] = translation[d] + heads.center_residual[d];
  b.size = heads.size;
  const std::size_t bin = argmax(heads.heading_scores);
  b.heading = wrap_angle(heading_bin_center(bin) + heads.heading_residuals[bin]);
  return b;
}

Box3D estimate_box(const PipelineInstance& inst, const PointCloud& centered) {
  return decode_box(box_heads(inst, centered), {0.0, 0.0, 0.0});
}

Box3D predict_box(const PipelineInstance& inst, const FrustumScene& scene) {
  const PointCloud o = mask_points(scene.points, segment(inst, scene.points, scene.label));
  const Point3 t = center(inst, o);
  return decode_box(box_heads(inst, apply_center(o, t)), t);
}

Box3D ensemble_last(std::span<const PipelineInstance> instances, const FrustumScene& scene) {
  if (instances.empty()) throw std::invalid_argument("ensemble_last: no instances");
  const PipelineInstance& ref = instances.front();
  const PointCloud o = mask_points(scene.points, segment(ref, scene.points, scene.label));
  const Point3 t = center(ref, o);
  const PointCloud c = apply_center(o, t);
  std::vector<BoxHeads> heads;
  for (const auto& inst : instances) heads.push_back(box_heads(inst, c));
  return decode_box(average_heads(heads), t);
}

Box3D ensemble_all(std::span<const PipelineInstance> instances, const FrustumScene& scene) {
  if (instances.empty()) throw std::invalid_argument("ensemble_all: no instances");
  std::vector<std::vector<double>> probs;
  for (const auto& inst : instances) probs.push_back(segment(inst, scene.points, scene.label));
  const PointCloud o = mask_points(scene.points, average_probabilities(probs));
  Point3 t{0.0, 0.0, 0.0};
  for (const auto& inst : instances) {
    const Point3 ti = center(inst, o);
    for (std::size_t d = 0; d < 3; ++d) t[d] += ti[d];
  }
  for (double& v : t) v /= static_cast<double>(instances.size());
  const PointCloud c = apply_center(o, t);
  std::vector<BoxHeads> heads;
  for (const auto& inst : instances) heads.push_back(box_heads(inst, c));
  return decode_box(average_heads(heads), t);
}

std::string_view pipeline_mode_name(PipelineMode m) {
  switch (m) {
    case PipelineMode::none: return "none";
    case PipelineMode::last: return "ensemble_last";
    case PipelineMode::all: return "ensemble_all";
  }
  return "none";
}

PipelineMode parse_pipeline_mode(std::string_view name) {
  for (auto m : {PipelineMode::none, PipelineMode::last, PipelineMode::all})
    if (pipeline_mode_name(m) == name) return m;
  throw std::invalid_argument("unknown pipeline mode '" + std::string(name) + "'");
}

Box3D predict_box(std::span<const PipelineInstance> instances, const FrustumScene& scene, PipelineMode mode) {
  if (instances.empty()) throw std::invalid_argument("predict_box: no instances");
  switch (mode) {
    case PipelineMode::none: return predict_box(instances.front(), scene);
    case PipelineMode::last: return ensemble_last(instances, scene);
    case PipelineMode::all: return ensemble_all(instances, scene);
  }
  throw std::invalid_argument("predict_box: bad mode");
}

double mask_iou(std::span<const double> probabilities, std::span<const std::uint8_t> gt_mask) {
  if (probabilities.size() != gt_mask.size()) throw std::invalid_argument("mask_iou: length mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt_mask.size(); ++i) {
    const bool p = probabilities[i] >= kMaskThreshold, g = gt_mask[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void write_detections_csv(std::ostream& out, std::span<const DetectionRow> rows) {
  out << "scene_id,mode,iou,correct\n";
  for (const auto& r : rows) out << r.scene_id << ',' << r.mode << ',' << format_real(r.iou) << ',' << (r.correct ? 1 : 0) << '\n';
}

}  // namespace pcens
