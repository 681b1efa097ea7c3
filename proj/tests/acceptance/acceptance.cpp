// Acceptance checks 1-11. One PASS/FAIL line per criterion; exit status is
// the number of failures. Pass criterion numbers as arguments to run a subset.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "pcens/cli.hpp"
#include "pcens/ensemble.hpp"
#include "pcens/kernels.hpp"
#include "pcens/models.hpp"
#include "pcens/pipeline.hpp"
#include "pcens/pointcloud.hpp"
#include "pcens/runtime.hpp"
#include "support/cli_fixtures.hpp"
#include "support/oracles.hpp"

using namespace pcens;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

constexpr Family kFamilies[] = {Family::deepsets_lite, Family::pointnet_lite, Family::hier_lite};

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

ScoreMatrix random_scores(std::size_t n, std::size_t c, Rng& rng, const std::string& tag) {
  ScoreMatrix m;
  m.scores = Mat(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) m.scores(i, j) = rng.normal(0.0, 3.0);
    m.labels.push_back(static_cast<int>(i % c));
    m.sample_ids.push_back(i);
  }
  m.source_tag = tag;
  return m;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) d = std::max(d, std::abs(a(i, j) - b(i, j)));
  return d;
}

// 1 -----------------------------------------------------------------------

Outcome gradient_oracle() {
  double worst_cls = 0.0, worst_stage = 0.0;
  for (Family f : kFamilies)
    for (std::uint64_t s = 0; s < 20; ++s) worst_cls = std::max(worst_cls, oracle::classifier_gradient_error(f, s));
  for (auto st : {oracle::Stage::segmentation, oracle::Stage::centering, oracle::Stage::box})
    for (std::uint64_t s = 0; s < 20; ++s) worst_stage = std::max(worst_stage, oracle::stage_gradient_error(st, s, 1e-4));
  return {worst_cls < 1e-4 && worst_stage < 1e-4,
          "worst relative error: classifiers " + fmt("%.2e", worst_cls) + ", pipeline stages " + fmt("%.2e", worst_stage) +
              " over 20 seeds each"};
}

// 2 -----------------------------------------------------------------------

Outcome permutation_invariance() {
  Rng rng(2024);
  std::string detail;
  bool ok = true;
  for (Family f : kFamilies) {
    double worst = 0.0;
    std::size_t exact = 0;
    for (int t = 0; t < 100; ++t) {
      const auto model = init_model(ModelArch::defaults(f, 8), SeedBundle::all(rng.next_u64()));
      const auto pc = oracle::random_cloud(48 + rng.uniform_index(81), rng);
      PointCloud perm = pc;
      shuffle(perm.points, rng);
      const auto a = predict(model, pc), b = predict(model, perm);
      if (a == b) ++exact;
      double scale = 0.0, diff = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
        diff = std::max(diff, std::abs(a[i] - b[i]));
      }
      worst = std::max(worst, scale > 0.0 ? diff / scale : diff);
    }
    const bool family_ok = f == Family::deepsets_lite ? worst <= 1e-6 : exact == 100;
    ok = ok && family_ok;
    detail += std::string(family_name(f)) + " " + std::to_string(exact) + "/100 bit-exact, max rel " + fmt("%.1e", worst) + "; ";
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

// 3 -----------------------------------------------------------------------

Outcome voting_identities() {
  Rng rng(3);
  bool k1 = true, sums = true, multiples = true, order = true;
  double worst_order = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 20 + rng.uniform_index(30), c = 2 + rng.uniform_index(9), K = 1 + rng.uniform_index(8);
    std::vector<ScoreMatrix> ms;
    for (std::size_t k = 0; k < K; ++k) ms.push_back(random_scores(n, c, rng, "m" + std::to_string(k)));
    const auto p_raw = predictions(aggregate(std::span(ms.data(), 1), EnsembleMethod::raw_mean));
    k1 = k1 && p_raw == predictions(aggregate(std::span(ms.data(), 1), EnsembleMethod::soft_vote)) &&
         p_raw == predictions(aggregate(std::span(ms.data(), 1), EnsembleMethod::hard_vote));
    for (auto m : {EnsembleMethod::soft_vote, EnsembleMethod::hard_vote}) {
      const auto agg = aggregate(ms, m);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          s += agg.scores(i, j);
          if (m == EnsembleMethod::hard_vote) {
            const double votes = agg.scores(i, j) * static_cast<double>(K);
            multiples = multiples && std::abs(votes - std::round(votes)) <= 1e-9;
          }
        }
        sums = sums && std::abs(s - 1.0) <= 1e-9;
      }
    }
    auto shuffled = ms;
    shuffle(shuffled, rng);
    for (auto m : {EnsembleMethod::raw_mean, EnsembleMethod::soft_vote, EnsembleMethod::hard_vote})
      worst_order = std::max(worst_order, max_abs_diff(aggregate(ms, m).scores, aggregate(shuffled, m).scores));
  }
  order = worst_order <= 1e-12;
  return {k1 && sums && multiples && order,
          std::string("K=1 methods agree: ") + (k1 ? "yes" : "no") + "; rows sum to 1: " + (sums ? "yes" : "no") +
              "; hard votes in 1/K steps: " + (multiples ? "yes" : "no") + "; order change " + fmt("%.1e", worst_order) +
              " (50 random cases)"};
}

// 4 -----------------------------------------------------------------------

Outcome combinatorics() {
  Rng rng(4);
  std::vector<ScoreMatrix> ms;
  for (int k = 0; k < 10; ++k) ms.push_back(random_scores(40, 5, rng, "m" + std::to_string(k)));
  // Pascal's triangle as the independent count.
  std::vector<std::vector<std::uint64_t>> pascal(11, std::vector<std::uint64_t>(11, 0));
  for (std::size_t n = 0; n <= 10; ++n) {
    pascal[n][0] = 1;
    for (std::size_t k = 1; k <= n; ++k) pascal[n][k] = pascal[n - 1][k - 1] + (k <= n - 1 ? pascal[n - 1][k] : 0);
  }
  bool ok = true;
  std::string counts;
  SubsetStats s10, s5;
  for (std::size_t K = 1; K <= 10; ++K) {
    const auto s = evaluate_k_subsets(ms, K, EnsembleMethod::raw_mean);
    ok = ok && s.exhaustive && s.n_subsets == pascal[10][K];
    counts += (K > 1 ? "," : "") + std::to_string(s.n_subsets);
    if (K == 5) s5 = s;
    if (K == 10) s10 = s;
  }
  ok = ok && s5.n_subsets == 252 && s10.std_instance_accuracy == 0.0 && s10.std_class_accuracy == 0.0;
  return {ok, "subset counts K=1..10: " + counts + "; std at K=10: " + fmt("%g", s10.std_instance_accuracy)};
}

// 5 -----------------------------------------------------------------------

Outcome standardization_mixing() {
  Rng rng(5);
  bool argmax = true, first = true;
  double worst_uniform = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 30, c = 2 + rng.uniform_index(9), K = 2 + rng.uniform_index(4);
    std::vector<ScoreMatrix> ms;
    for (std::size_t k = 0; k < K; ++k) {
      auto target = random_scores(n, c, rng, "m" + std::to_string(k));
      const auto train = random_scores(60, c, rng, "t");
      const auto st = standardize(target, train);
      argmax = argmax && predictions(st) == predictions(target);
      ms.push_back(st);
    }
    std::vector<double> w(K, 0.0);
    w[0] = 1.0;
    first = first && predictions(weighted_mix(ms, w)) == predictions(ms[0]);
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(K));
    worst_uniform = std::max(worst_uniform, max_abs_diff(weighted_mix(ms, w).scores, aggregate(ms, EnsembleMethod::raw_mean).scores));
  }
  return {argmax && first && worst_uniform <= 1e-12,
          std::string("argmax preserved: ") + (argmax ? "yes" : "no") + "; k_1=1 reproduces source 1: " +
              (first ? "yes" : "no") + "; uniform vs raw_mean " + fmt("%.1e", worst_uniform) + " (50 random cases)"};
}

// 6 -----------------------------------------------------------------------

Outcome fps_knn() {
  Rng rng(6);
  std::size_t fps_ok = 0, knn_ok = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.uniform_index(63);
    const auto pc = oracle::random_cloud(n, rng);
    const std::size_t m = 1 + rng.uniform_index(n), start = rng.uniform_index(n), k = 1 + rng.uniform_index(n);
    if (farthest_point_sampling(pc, m, start) == oracle::fps(pc, m, start)) ++fps_ok;
    std::vector<std::size_t> centers(n);
    std::iota(centers.begin(), centers.end(), std::size_t{0});
    const auto groups = knn_group(pc, centers, k);
    bool all = groups.size() == n;
    for (std::size_t c = 0; all && c < n; ++c) all = groups[c] == oracle::knn(pc, c, k);
    if (all) ++knn_ok;
  }
  return {fps_ok == 200 && knn_ok == 200,
          "FPS " + std::to_string(fps_ok) + "/200, kNN " + std::to_string(knn_ok) + "/200 clouds match brute force"};
}

// 7 -----------------------------------------------------------------------

Outcome ensemble_trend() {
  std::size_t holds = 0;
  std::string detail;
  for (std::uint64_t data_seed = 0; data_seed < 3; ++data_seed) {
    DatasetSpec spec;
    spec.seed = data_seed;
    const auto ds = generate_dataset(spec);
    const auto split = holdout_split(ds, spec.test_per_class);
    const auto arch = ModelArch::defaults(Family::pointnet_lite, spec.n_classes);
    std::vector<kernels::TrainJob> jobs;
    for (std::uint64_t i = 0; i < 10; ++i) jobs.push_back({split.train, SeedBundle::all(i)});
    const auto models = kernels::omp::train_many(arch, ds, jobs, TrainConfig{});
    std::vector<ScoreMatrix> scores;
    for (std::size_t i = 0; i < models.size(); ++i)
      scores.push_back(predict_scores(models[i], ds, split.test, "i" + std::to_string(i)));
    const auto k1 = evaluate_k_subsets(scores, 1, EnsembleMethod::raw_mean);
    const auto k3 = evaluate_k_subsets(scores, 3, EnsembleMethod::raw_mean);
    const auto k10 = evaluate_k_subsets(scores, 10, EnsembleMethod::raw_mean);
    const bool ok = k10.mean_instance_accuracy >= k1.mean_instance_accuracy &&
                    k3.std_instance_accuracy < k1.std_instance_accuracy;
    holds += ok;
    detail += "seed " + std::to_string(data_seed) + ": single " + fmt("%.4f", k1.mean_instance_accuracy) + " ensemble " +
              fmt("%.4f", k10.mean_instance_accuracy) + ", std K=1 " + fmt("%.4f", k1.std_instance_accuracy) + " K=3 " +
              fmt("%.4f", k3.std_instance_accuracy) + (ok ? " holds; " : " fails; ");
  }
  detail += "holds on " + std::to_string(holds) + "/3";
  return {holds >= 2, detail};
}

// 8 -----------------------------------------------------------------------

Outcome determinism() {
  DatasetSpec spec;
  spec.n_classes = 4;
  spec.train_per_class = 16;
  spec.test_per_class = 8;
  spec.n_points = 64;
  const auto ds = generate_dataset(spec);
  const auto split = holdout_split(ds, spec.test_per_class);
  const auto arch = ModelArch::defaults(Family::pointnet_lite, spec.n_classes);
  TrainConfig cfg;
  cfg.epochs = 3;

  const fixture::TempDir dir("determinism");
  std::vector<std::string> files;
  for (int run = 0; run < 2; ++run) {
    const auto m = train(arch, ds, split.train, SeedBundle::constant(), cfg);
    const auto path = dir / ("const_" + std::to_string(run) + ".model");
    save_model(m, path);
    files.push_back(fixture::read_text(path));
  }
  const bool identical = files[0] == files[1] && !files[0].empty();

  std::vector<ScoreMatrix> const_scores;
  for (int i = 0; i < 3; ++i) {
    const auto m = train(arch, ds, split.train, SeedBundle::constant(), cfg);
    const_scores.push_back(predict_scores(m, ds, split.test, "c" + std::to_string(i)));
  }
  const double single = score_metrics(const_scores[0]).instance_accuracy;
  const double gain = score_metrics(aggregate(const_scores, EnsembleMethod::raw_mean)).instance_accuracy - single;

  std::string detail = std::string("const model files identical: ") + (identical ? "yes" : "no") + "; ensemble gain " +
                       fmt("%g", gain) + "; single-factor score diffs:";
  bool varies = true;
  const char* names[3] = {"data_order", "init", "dropout"};
  for (int f = 0; f < 3; ++f) {
    std::vector<ScoreMatrix> s;
    for (std::uint64_t i = 1; i <= 2; ++i) {
      SeedBundle b;
      if (f == 0) b.data_order = i;
      if (f == 1) b.init = i;
      if (f == 2) b.dropout = i;
      s.push_back(predict_scores(train(arch, ds, split.train, b, cfg), ds, split.test));
    }
    const double d = max_abs_diff(s[0].scores, s[1].scores);
    varies = varies && d > 0.0;
    detail += std::string(" ") + names[f] + " " + fmt("%.2e", d);
  }
  return {identical && gain == 0.0 && varies, detail};
}

// 9 -----------------------------------------------------------------------

double box_distance(const Box3D& a, const Box3D& b) {
  double d = std::abs(wrap_angle(a.heading - b.heading));
  for (int i = 0; i < 3; ++i) d = std::max({d, std::abs(a.center[i] - b.center[i]), std::abs(a.size[i] - b.size[i])});
  return d;
}

Box3D random_box(Rng& rng) {
  Box3D b;
  b.center = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5)};
  b.size = {rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0)};
  b.heading = rng.uniform(-3.14159, 3.14159);
  return b;
}

Outcome pipeline_reductions() {
  SceneSpec spec;
  spec.n_scenes = 40;
  spec.n_object_points = 48;
  spec.n_clutter_points = 32;
  const auto scenes = generate_scenes(spec);
  std::vector<std::size_t> train_idx(30);
  std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
  PipelineTrainConfig cfg;
  cfg.epochs = 5;
  const auto inst = train_pipeline(PipelineArch::defaults(spec.n_classes), scenes, train_idx, 1, cfg);

  double worst_reduction = 0.0;
  for (std::size_t i = 30; i < scenes.size(); ++i) {
    const auto& scene = scenes.scenes[i];
    const auto single = predict_box(inst, scene);
    for (std::size_t n : {1, 4}) {
      const std::vector<PipelineInstance> copies(n, inst);
      worst_reduction = std::max({worst_reduction, box_distance(ensemble_last(copies, scene), single),
                                  box_distance(ensemble_all(copies, scene), single)});
    }
  }

  Rng rng(9), mc(99);
  double worst_mc = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Box3D a = random_box(rng);
    Box3D b = random_box(rng);
    b.center[0] = a.center[0] + rng.uniform(-0.8, 0.8);
    b.center[1] = a.center[1] + rng.uniform(-0.8, 0.8);
    worst_mc = std::max(worst_mc, std::abs(iou(a, b, IouMode::ground) - oracle::monte_carlo_bev_iou(a, b, 200000, mc)));
  }

  Box3D unit, shifted;
  unit.size = shifted.size = {1.0, 1.0, 1.0};
  shifted.center[0] = 0.5;
  const double cube = std::abs(iou(unit, shifted, IouMode::full3d) - 1.0 / 3.0);

  return {worst_reduction <= 1e-12 && worst_mc <= 1e-2 && cube <= 1e-9,
          "ensemble_last/ensemble_all vs single (N=1, N=4 copies, trained) " + fmt("%.1e", worst_reduction) +
              "; BEV IoU vs Monte Carlo (100 pairs) " + fmt("%.1e", worst_mc) + "; unit-cube 3D IoU error " +
              fmt("%.1e", cube)};
}

// 10 ----------------------------------------------------------------------

Outcome encoder_head_split() {
  DatasetSpec spec;
  spec.n_classes = 4;
  spec.train_per_class = 8;
  spec.test_per_class = 4;
  spec.n_points = 64;
  const auto ds = generate_dataset(spec);
  const auto split = holdout_split(ds, spec.test_per_class);
  Rng rng(10);
  std::size_t exact = 0, checked = 0, frozen = 0;
  for (int t = 0; t < 10; ++t) {
    const Family f = kFamilies[t % 3];
    const auto model = init_model(ModelArch::defaults(f, spec.n_classes), SeedBundle::all(rng.next_u64()));
    for (std::size_t i : split.test) {
      const auto& pc = ds.samples[i].cloud;
      exact += predict(model, pc) == classify(model, encode(model, pc));
      ++checked;
    }
    const auto head = retrain_classifier(model, ds, split.train, rng.next_u64(), 2);
    const auto a = model.encoder_params(), b = head.encoder_params();
    frozen += a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  }
  return {exact == checked && frozen == 10, "predict == rho(encode) on " + std::to_string(exact) + "/" +
                                                std::to_string(checked) + " clouds; encoder bytes unchanged in " +
                                                std::to_string(frozen) + "/10 retrains"};
}

// 11 ----------------------------------------------------------------------

Outcome end_to_end() {
  using cli::Command;
  const fixture::TempDir dir("e2e");
  const auto t0 = std::chrono::steady_clock::now();
  std::string failed;
  for (Command c : cli::all_commands()) {
    const std::string name(cli::command_name(c));
    if (fixture::run_command(c, dir.path(), dir / name, fixture::minimal_config(c)) != 0) failed += " " + name;
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  const auto text = fixture::minimal_config(Command::simple_ensemble);
  const bool second = fixture::run_command(Command::simple_ensemble, dir.path(), dir / "again", text) == 0;
  bool same = second;
  for (const char* f : {"simple_ensemble.csv", "per_class.csv"})
    same = same && fixture::read_text(dir / "simple-ensemble" / f) == fixture::read_text(dir / "again" / f);
  return {failed.empty() && same && minutes < 15.0,
          "smoke suite " + std::to_string(cli::all_commands().size()) + " commands in " + fmt("%.2f", minutes) +
              " min" + (failed.empty() ? "" : "; failed:" + failed) + "; simple-ensemble rerun byte-identical: " +
              (same ? "yes" : "no")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  const std::vector<Criterion> all{
      {1, "gradient oracle", 120.0, gradient_oracle},
      {2, "permutation invariance", 0.0, permutation_invariance},
      {3, "voting identities", 0.0, voting_identities},
      {4, "combinatorics", 0.0, combinatorics},
      {5, "standardization and mixing", 0.0, standardization_mixing},
      {6, "FPS and kNN oracles", 60.0, fps_knn},
      {7, "desk-scale ensemble trend", 600.0, ensemble_trend},
      {8, "determinism", 0.0, determinism},
      {9, "pipeline reductions and IoU", 0.0, pipeline_reductions},
      {10, "encoder/head split", 0.0, encoder_head_split},
      {11, "end-to-end reproducibility", 0.0, end_to_end},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  std::cout << "OpenMP threads: " << omp_get_max_threads() << std::endl;
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0.0 && secs >= c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", c.budget_s) + " s budget";
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): " << o.detail << " ["
              << fmt("%.1f", secs) << " s]" << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures;
}
