#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "pcens/pointcloud.hpp"
#include "support/oracles.hpp"

using namespace pcens;

namespace {

double norm(const Point3& p) { return std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]); }

}  // namespace

TEST_CASE("generate_shape") {
  SUBCASE("noise-free sphere lies on the unit sphere after normalization") {
    for (std::size_t n : {8u, 9u, 256u}) {
      Rng rng(11);
      const PointCloud pc = generate_shape(ShapeKind::sphere, n, 0.0, rng);
      REQUIRE(pc.size() == n);
      for (const auto& p : pc.points) CHECK(std::abs(norm(p) - 1.0) < 1e-9);
    }
  }
  SUBCASE("noise-free cube surface membership before normalization") {
    Rng rng(2);
    const ShapeParams params{0.8, 1.0, 1.3};
    const PointCloud pc = sample_surface(ShapeKind::cube, 500, params, rng);
    const std::array<double, 3> half{params.sx, params.sy, params.sz};
    for (const auto& p : pc.points) {
      bool on_face = false;
      for (int d = 0; d < 3; ++d) on_face |= std::abs(std::abs(p[d]) - half[d]) < 1e-9;
      CHECK(on_face);
    }
  }
  SUBCASE("deterministic per seed") {
    for (std::size_t k = 0; k < kShapeKindCount; ++k) {
      Rng a(99), b(99);
      CHECK(generate_shape(shape_kind_from_index(k), 64, 0.02, a) ==
            generate_shape(shape_kind_from_index(k), 64, 0.02, b));
    }
  }
  SUBCASE("every family is normalized") {
    Rng rng(4);
    for (std::size_t k = 0; k < kShapeKindCount; ++k) {
      const PointCloud pc = generate_shape(shape_kind_from_index(k), 128, 0.02, rng);
      const Point3 c = centroid(pc);
      CHECK(norm(c) < 1e-9);
      double mx = 0.0;
      for (const auto& p : pc.points) mx = std::max(mx, norm(p));
      CHECK(std::abs(mx - 1.0) < 1e-9);
    }
  }
  SUBCASE("errors") {
    Rng rng(0);
    CHECK_THROWS(generate_shape(static_cast<ShapeKind>(17), 64, 0.0, rng));
    CHECK_THROWS(generate_shape(ShapeKind::cube, 4, 0.0, rng));
    CHECK_THROWS(parse_shape_kind("blob"));
    CHECK(parse_shape_kind("plane_pair") == ShapeKind::plane_pair);
  }
}

TEST_CASE("normalize") {
  Rng rng(8);
  const PointCloud raw = oracle::random_cloud(50, rng);
  const PointCloud once = normalize(raw);

  SUBCASE("idempotent") {
    const PointCloud twice = normalize(once);
    for (std::size_t i = 0; i < once.size(); ++i)
      for (int d = 0; d < 3; ++d) CHECK(std::abs(once.points[i][d] - twice.points[i][d]) < 1e-9);
  }
  SUBCASE("degenerate cloud maps to zeros") {
    PointCloud same;
    same.points.assign(7, Point3{0.1, 0.2, 0.3});
    for (const auto& p : normalize(same).points) CHECK(p == Point3{0.0, 0.0, 0.0});
  }
  SUBCASE("translation and uniform scaling invariant") {
    PointCloud moved = raw;
    for (auto& p : moved.points)
      for (int d = 0; d < 3; ++d) p[d] = 3.5 * p[d] + (d + 1) * 10.0;
    const PointCloud nm = normalize(moved);
    for (std::size_t i = 0; i < once.size(); ++i)
      for (int d = 0; d < 3; ++d) CHECK(std::abs(once.points[i][d] - nm.points[i][d]) < 1e-9);
  }
}

TEST_CASE("augment") {
  Rng rng(1);
  const PointCloud pc = oracle::random_cloud(20, rng);
  SUBCASE("zero angle and zero jitter is the identity") {
    Rng r(3);
    CHECK(augment_with(pc, 0.0, 0.0, kJitterClip, r) == pc);
  }
  SUBCASE("half turn about z") {
    PointCloud one{{Point3{1.0, 0.0, 0.0}}};
    Rng r(3);
    const auto out = augment_with(one, std::numbers::pi, 0.0, kJitterClip, r);
    CHECK(std::abs(out.points[0][0] + 1.0) < 1e-12);
    CHECK(std::abs(out.points[0][1]) < 1e-12);
    CHECK(out.points[0][2] == 0.0);
  }
  SUBCASE("seeded and clipped") {
    Rng a(5), b(5);
    const auto x = augment(pc, a);
    CHECK(x == augment(pc, b));
    Rng c(6);
    const auto big = augment_with(pc, 0.0, 10.0, kJitterClip, c);
    for (std::size_t i = 0; i < pc.size(); ++i)
      for (int d = 0; d < 3; ++d) CHECK(std::abs(big.points[i][d] - pc.points[i][d]) <= kJitterClip + 1e-15);
  }
}

TEST_CASE("farthest_point_sampling") {
  SUBCASE("colinear example") {
    PointCloud pc{{Point3{0, 0, 0}, Point3{1, 0, 0}, Point3{2, 0, 0}, Point3{3, 0, 0}}};
    CHECK(farthest_point_sampling(pc, 2, 0) == std::vector<std::size_t>{0, 3});
  }
  SUBCASE("m = N exhausts in greedy order") {
    PointCloud pc{{Point3{0, 0, 0}, Point3{1, 0, 0}, Point3{2, 0, 0}, Point3{3, 0, 0}}};
    CHECK(farthest_point_sampling(pc, 4, 0) == std::vector<std::size_t>{0, 3, 1, 2});
  }
  SUBCASE("errors") {
    PointCloud pc{{Point3{0, 0, 0}, Point3{1, 0, 0}}};
    CHECK_THROWS(farthest_point_sampling(pc, 3, 0));
    CHECK_THROWS(farthest_point_sampling(pc, 1, 2));
  }
  SUBCASE("ties go to the lowest index") {
    PointCloud pc{{Point3{0, 0, 0}, Point3{1, 0, 0}, Point3{-1, 0, 0}}};
    CHECK(farthest_point_sampling(pc, 2, 0) == std::vector<std::size_t>{0, 1});
  }
  SUBCASE("matches the brute-force oracle") {
    Rng rng(21);
    for (int t = 0; t < 50; ++t) {
      const std::size_t n = 1 + rng.uniform_index(64);
      const PointCloud pc = oracle::random_cloud(n, rng);
      const std::size_t m = 1 + rng.uniform_index(n);
      const std::size_t s = rng.uniform_index(n);
      CHECK(farthest_point_sampling(pc, m, s) == oracle::fps(pc, m, s));
    }
  }
  SUBCASE("selected coordinates are invariant to storage order") {
    Rng rng(30);
    for (int t = 0; t < 30; ++t) {
      const PointCloud pc = oracle::random_cloud(40, rng);
      std::vector<std::size_t> perm(40);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = 39; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
      PointCloud shuffled;
      std::size_t start_in_shuffled = 0;
      for (std::size_t i = 0; i < 40; ++i) {
        shuffled.points.push_back(pc.points[perm[i]]);
        if (perm[i] == 0) start_in_shuffled = i;
      }
      std::set<Point3> a, b;
      for (std::size_t i : farthest_point_sampling(pc, 12, 0)) a.insert(pc.points[i]);
      for (std::size_t i : farthest_point_sampling(shuffled, 12, start_in_shuffled)) b.insert(shuffled.points[i]);
      CHECK(a == b);
    }
  }
}

TEST_CASE("knn_group") {
  SUBCASE("k = 1 is the center itself") {
    Rng rng(2);
    const PointCloud pc = oracle::random_cloud(10, rng);
    const std::vector<std::size_t> centers{0, 4, 9};
    const auto g = knn_group(pc, centers, 1);
    for (std::size_t i = 0; i < centers.size(); ++i) CHECK(g[i] == std::vector<std::size_t>{centers[i]});
  }
  SUBCASE("three points on a line") {
    PointCloud pc{{Point3{0, 0, 0}, Point3{1, 0, 0}, Point3{2.5, 0, 0}}};
    const std::vector<std::size_t> centers{1};
    CHECK(knn_group(pc, centers, 2)[0] == std::vector<std::size_t>{1, 0});
  }
  SUBCASE("k > N is an error") {
    PointCloud pc{{Point3{0, 0, 0}}};
    const std::vector<std::size_t> centers{0};
    CHECK_THROWS(knn_group(pc, centers, 2));
  }
  SUBCASE("matches full-sort oracle") {
    Rng rng(12);
    for (int t = 0; t < 50; ++t) {
      const std::size_t n = 1 + rng.uniform_index(64);
      const PointCloud pc = oracle::random_cloud(n, rng);
      const std::size_t k = 1 + rng.uniform_index(n);
      std::vector<std::size_t> centers{rng.uniform_index(n), rng.uniform_index(n)};
      const auto g = knn_group(pc, centers, k);
      for (std::size_t c = 0; c < centers.size(); ++c) CHECK(g[c] == oracle::knn(pc, centers[c], k));
    }
  }
}

TEST_CASE("make_split") {
  std::vector<std::size_t> pool(100);
  std::iota(pool.begin(), pool.end(), 0);

  SUBCASE("without replacement draws round(k|T|) distinct indices") {
    for (int i = 1; i <= 9; ++i) {
      const double k = i / 10.0;
      const auto s = make_split(pool, BaggingSpec::without_replacement(k, 77));
      CHECK(s.size() == static_cast<std::size_t>(10 * i));
      CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == s.size());
    }
    CHECK(make_split(pool, BaggingSpec::without_replacement(0.3, 1)).size() == 30);
  }
  SUBCASE("with replacement keeps the size and repeats about 1/e") {
    double distinct = 0.0;
    const int trials = 400;
    for (int seed = 0; seed < trials; ++seed) {
      const auto s = make_split(pool, BaggingSpec::with_replacement(seed));
      CHECK(s.size() == 100);
      distinct += static_cast<double>(std::set<std::size_t>(s.begin(), s.end()).size()) / 100.0;
    }
    CHECK(std::abs(distinct / trials - (1.0 - std::exp(-1.0))) < 0.03);
  }
  SUBCASE("full is the identity") { CHECK(make_split(pool, BaggingSpec::full_set()) == pool); }
  SUBCASE("fraction 1.0 without replacement equals the full set") {
    CHECK(make_split(pool, BaggingSpec::without_replacement(1.0, 5)) == pool);
  }
  SUBCASE("deterministic and seed dependent") {
    CHECK(make_split(pool, BaggingSpec::without_replacement(0.5, 3)) ==
          make_split(pool, BaggingSpec::without_replacement(0.5, 3)));
    CHECK(make_split(pool, BaggingSpec::without_replacement(0.5, 3)) !=
          make_split(pool, BaggingSpec::without_replacement(0.5, 4)));
  }
  SUBCASE("zero-sized split is an error") {
    const std::vector<std::size_t> small{1, 2, 3};
    CHECK_THROWS(make_split(small, BaggingSpec::without_replacement(0.1, 0)));
  }
}

TEST_CASE("holdout split") {
  DatasetSpec spec;
  spec.n_classes = 3;
  spec.train_per_class = 5;
  spec.test_per_class = 2;
  spec.n_points = 16;
  const auto ds = generate_dataset(spec);
  const auto split = holdout_split(ds, 2);
  CHECK(split.train.size() == 15);
  CHECK(split.test.size() == 6);
  CHECK(split.test == std::vector<std::size_t>{5, 6, 12, 13, 19, 20});
  CHECK_THROWS(holdout_split(ds, 7));
}

TEST_CASE("dataset file round trip and validation") {
  DatasetSpec spec;
  spec.n_classes = 3;
  spec.train_per_class = 2;
  spec.test_per_class = 1;
  spec.n_points = 10;
  spec.seed = 4;
  const auto ds = generate_dataset(spec);

  SUBCASE("write then read is bit exact") {
    std::stringstream ss;
    write_dataset(ds, ss);
    CHECK(read_dataset(ss) == ds);
  }
  SUBCASE("label out of range names its line") {
    std::stringstream ss("PSET 1 1 3 1\na b c\n5\n0 0 0\n");
    try {
      read_dataset(ss);
      FAIL("expected an error");
    } catch (const DatasetFormatError& e) {
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("empty file") {
    std::stringstream ss("");
    CHECK_THROWS_WITH(read_dataset(ss), doctest::Contains("missing header"));
  }
  SUBCASE("malformed header and non-finite coordinates") {
    std::stringstream bad_head("PSET 2 1 2 1\na b\n0\n0 0 0\n");
    CHECK_THROWS_AS(read_dataset(bad_head), DatasetFormatError);
    std::stringstream inf("PSET 1 1 2 1\na b\n0\n0 inf 0\n");
    CHECK_THROWS_WITH(read_dataset(inf), doctest::Contains("line 4"));
    std::stringstream truncated("PSET 1 2 2 1\na b\n0\n0 0 0\n");
    CHECK_THROWS_AS(read_dataset(truncated), DatasetFormatError);
  }
  SUBCASE("generation is seed deterministic") {
    std::stringstream a, b;
    write_dataset(generate_dataset(spec), a);
    write_dataset(generate_dataset(spec), b);
    CHECK(a.str() == b.str());
  }
}
