#include "pcens/pointcloud.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <istream>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

namespace pcens {

namespace {

constexpr double kPi = std::numbers::pi;

constexpr std::array<std::string_view, kShapeKindCount> kShapeNames = {
    "sphere", "cube", "cylinder", "cone", "torus", "pyramid", "plane_pair", "helix"};

Point3 random_unit_vector(Rng& rng) {
  for (;;) {
    const Point3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-12) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

Point3 sample_triangle(const Point3& a, const Point3& b, const Point3& c, Rng& rng) {
  double u = rng.uniform(), v = rng.uniform();
  if (u + v > 1.0) {
    u = 1.0 - u;
    v = 1.0 - v;
  }
  Point3 p;
  for (int d = 0; d < 3; ++d) p[d] = a[d] + u * (b[d] - a[d]) + v * (c[d] - a[d]);
  return p;
}

std::array<double, 2> sample_disk(double radius, Rng& rng) {
  const double r = radius * std::sqrt(rng.uniform());
  const double t = rng.uniform(0.0, 2.0 * kPi);
  return {r * std::cos(t), r * std::sin(t)};
}

// Picks an index with probability proportional to weights.
std::size_t pick_weighted(std::span<const double> weights, Rng& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

Point3 sample_canonical(ShapeKind kind, Rng& rng) {
  switch (kind) {
    case ShapeKind::sphere:
      return random_unit_vector(rng);
    case ShapeKind::cube: {
      const std::uint64_t face = rng.uniform_index(6);
      const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
      const double s = (face % 2 == 0) ? 1.0 : -1.0;
      switch (face / 2) {
        case 0: return {s, a, b};
        case 1: return {a, s, b};
        default: return {a, b, s};
      }
    }
    case ShapeKind::cylinder: {
      const std::array<double, 3> areas{4.0 * kPi, kPi, kPi};
      const std::size_t part = pick_weighted(areas, rng);
      if (part == 0) {
        const double t = rng.uniform(0.0, 2.0 * kPi);
        return {std::cos(t), std::sin(t), rng.uniform(-1.0, 1.0)};
      }
      const auto d = sample_disk(1.0, rng);
      return {d[0], d[1], part == 1 ? 1.0 : -1.0};
    }
    case ShapeKind::cone: {
      // apex (0,0,1), base radius 1 at z = -1
      const std::array<double, 2> areas{kPi * std::sqrt(5.0), kPi};
      if (pick_weighted(areas, rng) == 0) {
        const double s = std::sqrt(rng.uniform());
        const double t = rng.uniform(0.0, 2.0 * kPi);
        return {s * std::cos(t), s * std::sin(t), 1.0 - 2.0 * s};
      }
      const auto d = sample_disk(1.0, rng);
      return {d[0], d[1], -1.0};
    }
    case ShapeKind::torus: {
      constexpr double R = 1.0, r = 0.35;
      for (;;) {
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        // area element is proportional to R + r cos(phi)
        if (rng.uniform() * (R + r) > R + r * std::cos(phi)) continue;
        const double theta = rng.uniform(0.0, 2.0 * kPi);
        const double rad = R + r * std::cos(phi);
        return {rad * std::cos(theta), rad * std::sin(theta), r * std::sin(phi)};
      }
    }
    case ShapeKind::pyramid: {
      const Point3 apex{0.0, 0.0, 1.0};
      const std::array<Point3, 4> base{Point3{-1, -1, -1}, Point3{1, -1, -1}, Point3{1, 1, -1}, Point3{-1, 1, -1}};
      const double side = std::sqrt(5.0);
      const std::array<double, 5> areas{side, side, side, side, 4.0};
      const std::size_t face = pick_weighted(areas, rng);
      if (face < 4) return sample_triangle(apex, base[face], base[(face + 1) % 4], rng);
      return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), -1.0};
    }
    case ShapeKind::plane_pair: {
      const double z = rng.uniform() < 0.5 ? 0.5 : -0.5;
      return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), z};
    }
    case ShapeKind::helix: {
      constexpr double turns = 2.5, tube = 0.06;
      const double t = rng.uniform(-turns * kPi, turns * kPi);
      const double z = t / (turns * kPi);
      // radial and vertical directions span the tube cross-section closely enough
      const double a = rng.uniform(0.0, 2.0 * kPi);
      const double rad = 1.0 + tube * std::cos(a);
      return {rad * std::cos(t), rad * std::sin(t), z + tube * std::sin(a)};
    }
  }
  throw std::invalid_argument("unknown shape kind");
}

}  // namespace

std::string_view shape_kind_name(ShapeKind kind) {
  const auto i = static_cast<std::size_t>(kind);
  if (i >= kShapeKindCount) throw std::invalid_argument("unknown shape kind");
  return kShapeNames[i];
}

ShapeKind parse_shape_kind(std::string_view name) {
  for (std::size_t i = 0; i < kShapeKindCount; ++i)
    if (kShapeNames[i] == name) return static_cast<ShapeKind>(i);
  throw std::invalid_argument("unknown shape kind '" + std::string(name) + "'");
}

ShapeKind shape_kind_from_index(std::size_t index) {
  if (index >= kShapeKindCount) throw std::invalid_argument("shape index out of range");
  return static_cast<ShapeKind>(index);
}

PointCloud sample_surface(ShapeKind kind, std::size_t n_points, const ShapeParams& params, Rng& rng) {
  if (static_cast<std::size_t>(kind) >= kShapeKindCount) throw std::invalid_argument("unknown shape kind");
  PointCloud pc;
  pc.points.reserve(n_points);
  if (kind == ShapeKind::sphere) {
    std::size_t pairs = n_points / 2;
    if (n_points % 2 == 1 && n_points >= 3) pairs = (n_points - 3) / 2;
    for (std::size_t i = 0; i < pairs; ++i) {
      const Point3 u = random_unit_vector(rng);
      pc.points.push_back(u);
      pc.points.push_back({-u[0], -u[1], -u[2]});
    }
    if (pc.points.size() < n_points) {
      if (n_points - pc.points.size() == 1) {
        pc.points.push_back(random_unit_vector(rng));
      } else {
        // three unit vectors 120 degrees apart on a random great circle sum to zero
        const Point3 u = random_unit_vector(rng);
        Point3 w = random_unit_vector(rng);
        const double dot = u[0] * w[0] + u[1] * w[1] + u[2] * w[2];
        for (int d = 0; d < 3; ++d) w[d] -= dot * u[d];
        const double wn = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
        for (int d = 0; d < 3; ++d) w[d] /= wn;
        for (int j = 0; j < 3; ++j) {
          const double a = 2.0 * kPi * j / 3.0;
          pc.points.push_back({std::cos(a) * u[0] + std::sin(a) * w[0], std::cos(a) * u[1] + std::sin(a) * w[1],
                               std::cos(a) * u[2] + std::sin(a) * w[2]});
        }
      }
    }
  } else {
    for (std::size_t i = 0; i < n_points; ++i) pc.points.push_back(sample_canonical(kind, rng));
  }
  for (auto& p : pc.points) {
    p[0] *= params.sx;
    p[1] *= params.sy;
    p[2] *= params.sz;
  }
  return pc;
}

PointCloud generate_shape(ShapeKind kind, std::size_t n_points, double noise_sigma, Rng& rng,
                          double variation) {
  if (n_points < 8) throw std::invalid_argument("generate_shape: need at least 8 points");
  if (noise_sigma < 0.0) throw std::invalid_argument("generate_shape: negative noise");
  ShapeParams params;
  if (kind != ShapeKind::sphere && variation > 0.0) {
    params.sx = rng.uniform(1.0 - variation, 1.0 + variation);
    params.sy = rng.uniform(1.0 - variation, 1.0 + variation);
    params.sz = rng.uniform(1.0 - variation, 1.0 + variation);
  }
  PointCloud pc = sample_surface(kind, n_points, params, rng);
  if (noise_sigma > 0.0)
    for (auto& p : pc.points)
      for (double& c : p) c += rng.normal(0.0, noise_sigma);
  return normalize(pc);
}

Point3 centroid(const PointCloud& pc) {
  Point3 c{0.0, 0.0, 0.0};
  if (pc.points.empty()) return c;
  for (const auto& p : pc.points)
    for (int d = 0; d < 3; ++d) c[d] += p[d];
  for (double& v : c) v /= static_cast<double>(pc.size());
  return c;
}

PointCloud normalize(const PointCloud& pc) {
  if (pc.points.empty()) throw std::invalid_argument("normalize: empty cloud");
  const Point3 c = centroid(pc);
  PointCloud out = pc;
  double max_norm = 0.0, max_abs = 0.0;
  for (auto& p : out.points) {
    for (int d = 0; d < 3; ++d) {
      max_abs = std::max(max_abs, std::abs(p[d]));
      p[d] -= c[d];
    }
    max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  if (max_norm <= 1e-12 * (1.0 + max_abs)) {
    for (auto& p : out.points) p = {0.0, 0.0, 0.0};
    return out;
  }
  for (auto& p : out.points)
    for (double& v : p) v /= max_norm;
  return out;
}

PointCloud rotate_z(const PointCloud& pc, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  PointCloud out = pc;
  for (auto& p : out.points) {
    const double x = p[0], y = p[1];
    p[0] = c * x - s * y;
    p[1] = s * x + c * y;
  }
  return out;
}

PointCloud augment_with(const PointCloud& pc, double angle, double jitter_sigma, double jitter_clip,
                        Rng& rng) {
  PointCloud out = angle == 0.0 ? pc : rotate_z(pc, angle);
  if (jitter_sigma > 0.0)
    for (auto& p : out.points)
      for (double& v : p) v += std::clamp(rng.normal(0.0, jitter_sigma), -jitter_clip, jitter_clip);
  return out;
}

PointCloud augment(const PointCloud& pc, Rng& rng) {
  const double angle = rng.uniform(0.0, 2.0 * kPi);
  return augment_with(pc, angle, kJitterSigma, kJitterClip, rng);
}

std::vector<std::size_t> farthest_point_sampling(const PointCloud& pc, std::size_t m, std::size_t start_index) {
  const std::size_t n = pc.size();
  if (m == 0) throw std::invalid_argument("farthest_point_sampling: m must be >= 1");
  if (m > n) throw std::invalid_argument("farthest_point_sampling: m > N");
  if (start_index >= n) throw std::invalid_argument("farthest_point_sampling: start_index out of range");
  std::vector<std::size_t> picked;
  picked.reserve(m);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  std::size_t next = start_index;
  for (std::size_t s = 0; s < m; ++s) {
    picked.push_back(next);
    taken[next] = 1;
    const Point3& q = pc.points[next];
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = squared_distance(pc.points[i], q);
      if (d < min_d[i]) min_d[i] = d;
      if (!taken[i] && min_d[i] > best_d) {
        best_d = min_d[i];
        best = i;
      }
    }
    next = best;
  }
  return picked;
}

std::vector<std::vector<std::size_t>> knn_group(const PointCloud& pc, std::span<const std::size_t> center_indices,
                                                std::size_t k) {
  const std::size_t n = pc.size();
  if (k > n) throw std::invalid_argument("knn_group: k > N");
  if (k == 0) throw std::invalid_argument("knn_group: k must be >= 1");
  std::vector<std::vector<std::size_t>> groups;
  groups.reserve(center_indices.size());
  std::vector<std::pair<double, std::size_t>> d(n);
  for (std::size_t c : center_indices) {
    if (c >= n) throw std::invalid_argument("knn_group: center index out of range");
    for (std::size_t i = 0; i < n; ++i) d[i] = {squared_distance(pc.points[i], pc.points[c]), i};
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    std::vector<std::size_t> g(k);
    for (std::size_t j = 0; j < k; ++j) g[j] = d[j].second;
    groups.push_back(std::move(g));
  }
  return groups;
}

PointCloud canonical_order(const PointCloud& pc) {
  PointCloud out = pc;
  std::sort(out.points.begin(), out.points.end());
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> make_split(std::span<const std::size_t> pool, const BaggingSpec& spec) {
  if (pool.empty()) throw std::invalid_argument("make_split: empty training pool");
  std::vector<std::size_t> out;
  switch (spec.mode) {
    case BaggingSpec::Mode::full:
      return {pool.begin(), pool.end()};
    case BaggingSpec::Mode::without_replacement: {
      if (!(spec.fraction > 0.0 && spec.fraction <= 1.0))
        throw std::invalid_argument("make_split: fraction must lie in (0, 1]");
      const auto s = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(pool.size())));
      if (s == 0) throw std::invalid_argument("make_split: fraction selects zero samples");
      std::vector<std::size_t> perm(pool.begin(), pool.end());
      Rng rng(spec.seed);
      for (std::size_t i = 0; i < s; ++i) {
        const std::size_t j = i + rng.uniform_index(perm.size() - i);
        std::swap(perm[i], perm[j]);
      }
      out.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(s));
      break;
    }
    case BaggingSpec::Mode::with_replacement: {
      Rng rng(spec.seed);
      out.reserve(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) out.push_back(pool[rng.uniform_index(pool.size())]);
      break;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> make_split(const LabeledDataset& dataset, const BaggingSpec& spec) {
  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), 0);
  return make_split(all, spec);
}

DatasetSplit holdout_split(const LabeledDataset& dataset, std::size_t test_per_class) {
  const std::size_t C = dataset.n_classes();
  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < dataset.size(); ++i)
    by_class[static_cast<std::size_t>(dataset.samples[i].label)].push_back(i);
  std::vector<char> is_test(dataset.size(), 0);
  for (std::size_t c = 0; c < C; ++c) {
    if (by_class[c].size() <= test_per_class)
      throw std::invalid_argument("holdout_split: class '" + dataset.class_names[c] + "' has " +
                                  std::to_string(by_class[c].size()) + " samples, need more than " +
                                  std::to_string(test_per_class));
    for (std::size_t j = by_class[c].size() - test_per_class; j < by_class[c].size(); ++j)
      is_test[by_class[c][j]] = 1;
  }
  DatasetSplit split;
  for (std::size_t i = 0; i < dataset.size(); ++i) (is_test[i] ? split.test : split.train).push_back(i);
  return split;
}

// ---------------------------------------------------------------------------

LabeledDataset generate_dataset(const DatasetSpec& spec) {
  if (spec.n_classes < 2 || spec.n_classes > kShapeKindCount)
    throw std::invalid_argument("generate_dataset: class count must be in [2, 8]");
  LabeledDataset ds;
  Rng rng(spec.seed);
  const std::size_t per_class = spec.train_per_class + spec.test_per_class;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    const ShapeKind kind = shape_kind_from_index(c);
    ds.class_names.emplace_back(shape_kind_name(kind));
    for (std::size_t i = 0; i < per_class; ++i)
      ds.samples.push_back(
          {generate_shape(kind, spec.n_points, spec.noise_sigma, rng, spec.variation), static_cast<int>(c)});
  }
  return ds;
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_dataset(const LabeledDataset& dataset, std::ostream& out) {
  if (dataset.samples.empty()) throw std::invalid_argument("write_dataset: empty dataset");
  const std::size_t n_points = dataset.samples.front().cloud.size();
  for (const auto& s : dataset.samples)
    if (s.cloud.size() != n_points) throw std::invalid_argument("write_dataset: clouds differ in point count");
  out << "PSET 1 " << dataset.size() << ' ' << dataset.n_classes() << ' ' << n_points << '\n';
  for (std::size_t c = 0; c < dataset.n_classes(); ++c) out << (c ? " " : "") << dataset.class_names[c];
  out << '\n';
  for (const auto& s : dataset.samples) {
    out << s.label << '\n';
    for (const auto& p : s.cloud.points)
      out << format_real(p[0]) << ' ' << format_real(p[1]) << ' ' << format_real(p[2]) << '\n';
  }
}

void write_dataset(const LabeledDataset& dataset, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_dataset(dataset, f);
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

namespace {

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view tok, T& out) {
  if constexpr (std::is_floating_point_v<T>) {
    // strtod accepts the full decimal grammar written by format_real
    std::string tmp(tok);
    char* end = nullptr;
    out = std::strtod(tmp.c_str(), &end);
    return end == tmp.c_str() + tmp.size() && !tmp.empty();
  } else {
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    return ec == std::errc() && ptr == tok.data() + tok.size();
  }
}

}  // namespace

LabeledDataset read_dataset(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&](const char* what) -> std::string_view {
    if (!std::getline(in, line)) throw DatasetFormatError(line_no + 1, std::string("unexpected end of file, expected ") + what);
    ++line_no;
    return line;
  };
  if (!std::getline(in, line)) throw DatasetFormatError(1, "missing header");
  ++line_no;
  const auto head = split_ws(line);
  if (head.empty()) throw DatasetFormatError(1, "missing header");
  std::size_t n_samples = 0, n_classes = 0, n_points = 0;
  if (head.size() != 5 || head[0] != "PSET" || head[1] != "1" || !parse_number(head[2], n_samples) ||
      !parse_number(head[3], n_classes) || !parse_number(head[4], n_points))
    throw DatasetFormatError(1, "malformed header, expected 'PSET 1 <n_samples> <n_classes> <n_points>'");
  if (n_classes < 2) throw DatasetFormatError(1, "need at least 2 classes");
  if (n_points < 1) throw DatasetFormatError(1, "need at least 1 point per cloud");

  LabeledDataset ds;
  const auto names = split_ws(next_line("class names"));
  if (names.size() != n_classes)
    throw DatasetFormatError(line_no, "expected " + std::to_string(n_classes) + " class names, got " +
                                          std::to_string(names.size()));
  for (auto n : names) ds.class_names.emplace_back(n);

  ds.samples.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const auto lab = split_ws(next_line("label"));
    int label = -1;
    if (lab.size() != 1 || !parse_number(lab[0], label)) throw DatasetFormatError(line_no, "malformed label line");
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes)
      throw DatasetFormatError(line_no, "label " + std::to_string(label) + " out of range [0, " +
                                            std::to_string(n_classes) + ")");
    Sample sample;
    sample.label = label;
    sample.cloud.points.resize(n_points);
    for (std::size_t p = 0; p < n_points; ++p) {
      const auto tok = split_ws(next_line("point"));
      if (tok.size() != 3) throw DatasetFormatError(line_no, "expected 3 coordinates");
      for (int d = 0; d < 3; ++d) {
        double v = 0.0;
        if (!parse_number(tok[static_cast<std::size_t>(d)], v)) throw DatasetFormatError(line_no, "malformed coordinate");
        if (!std::isfinite(v)) throw DatasetFormatError(line_no, "non-finite coordinate");
        sample.cloud.points[p][static_cast<std::size_t>(d)] = v;
      }
    }
    ds.samples.push_back(std::move(sample));
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!split_ws(line).empty()) throw DatasetFormatError(line_no, "trailing content after last sample");
  }
  return ds;
}

LabeledDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  return read_dataset(f);
}

LabeledDataset import_point_lists(const std::filesystem::path& list, std::size_t n_points) {
  std::ifstream f(list);
  if (!f) throw std::runtime_error("cannot open '" + list.string() + "'");
  LabeledDataset ds;
  std::map<std::string, int> class_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0].front() == '#') continue;
    if (tok.size() != 2) throw DatasetFormatError(line_no, "expected '<class_name> <cloud_path>'");
    std::string cls(tok[0]);
    auto [it, inserted] = class_ids.emplace(cls, static_cast<int>(ds.class_names.size()));
    if (inserted) ds.class_names.push_back(cls);
    std::filesystem::path cloud_path{std::string(tok[1])};
    if (cloud_path.is_relative()) cloud_path = list.parent_path() / cloud_path;
    std::ifstream cf(cloud_path);
    if (!cf) throw DatasetFormatError(line_no, "cannot open cloud file '" + cloud_path.string() + "'");
    PointCloud pc;
    std::string cl;
    std::size_t cl_no = 0;
    while (std::getline(cf, cl)) {
      ++cl_no;
      for (char& ch : cl)
        if (ch == ',') ch = ' ';
      const auto fields = split_ws(cl);
      if (fields.empty()) continue;
      if (fields.size() < 3) throw DatasetFormatError(cl_no, cloud_path.string() + ": expected x y z");
      Point3 p;
      for (std::size_t d = 0; d < 3; ++d)
        if (!parse_number(fields[d], p[d]) || !std::isfinite(p[d]))
          throw DatasetFormatError(cl_no, cloud_path.string() + ": bad coordinate");
      pc.points.push_back(p);
    }
    if (pc.size() < n_points)
      throw DatasetFormatError(line_no, cloud_path.string() + " has " + std::to_string(pc.size()) +
                                            " points, need " + std::to_string(n_points));
    if (pc.size() > n_points) {
      PointCloud reduced;
      for (std::size_t i : farthest_point_sampling(pc, n_points, 0)) reduced.points.push_back(pc.points[i]);
      pc = std::move(reduced);
    }
    ds.samples.push_back({normalize(pc), it->second});
  }
  if (ds.samples.empty()) throw DatasetFormatError(0, "import list '" + list.string() + "' names no clouds");
  if (ds.class_names.size() < 2) throw DatasetFormatError(0, "import needs at least 2 classes");
  return ds;
}

}  // namespace pcens
