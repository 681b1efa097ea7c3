#include "pcens/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>

#include "pcens/kernels.hpp"

namespace pcens {

namespace {

constexpr double kWeightTol = 1e-9;

struct MeanStd {
  double mean = 0.0, std = 0.0;
};

MeanStd population_stats(std::span<const double> v) {
  MeanStd r;
  if (v.empty()) return r;
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

}  // namespace

std::string_view method_name(EnsembleMethod m) {
  switch (m) {
    case EnsembleMethod::raw_mean: return "raw_mean";
    case EnsembleMethod::soft_vote: return "soft_vote";
    case EnsembleMethod::hard_vote: return "hard_vote";
  }
  throw std::invalid_argument("unknown ensemble method");
}

EnsembleMethod parse_method(std::string_view name) {
  for (auto m : {EnsembleMethod::raw_mean, EnsembleMethod::soft_vote, EnsembleMethod::hard_vote})
    if (method_name(m) == name) return m;
  throw std::invalid_argument("unknown ensemble method '" + std::string(name) + "'");
}

void check_aligned(std::span<const ScoreMatrix> matrices) {
  if (matrices.empty()) throw std::invalid_argument("ensemble of zero score matrices");
  const ScoreMatrix& ref = matrices[0];
  ref.validate();
  for (std::size_t k = 1; k < matrices.size(); ++k) {
    const ScoreMatrix& m = matrices[k];
    m.validate();
    if (m.n_samples() != ref.n_samples() || m.n_classes() != ref.n_classes())
      throw std::invalid_argument("score matrix '" + m.source_tag + "' has a different shape than '" +
                                  ref.source_tag + "'");
    if (m.labels != ref.labels || m.sample_ids != ref.sample_ids)
      throw std::invalid_argument("score matrix '" + m.source_tag + "' rows are not aligned with '" +
                                  ref.source_tag + "'");
  }
}

ScoreMatrix aggregate(std::span<const ScoreMatrix> matrices, EnsembleMethod method) {
  check_aligned(matrices);
  const std::size_t R = matrices[0].n_samples(), C = matrices[0].n_classes();
  ScoreMatrix out;
  out.labels = matrices[0].labels;
  out.sample_ids = matrices[0].sample_ids;
  out.source_tag = std::string(method_name(method)) + "_of_" + std::to_string(matrices.size());
  Mat acc(R, C);
  for (const auto& m : matrices) {
    for (std::size_t r = 0; r < R; ++r) {
      auto dst = acc.row(r);
      const auto src = m.scores.row(r);
      switch (method) {
        case EnsembleMethod::raw_mean:
          for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
          break;
        case EnsembleMethod::soft_vote: {
          const auto p = softmax(src);
          for (std::size_t c = 0; c < C; ++c) dst[c] += p[c];
          break;
        }
        case EnsembleMethod::hard_vote:
          dst[argmax(src)] += 1.0;
          break;
      }
    }
  }
  const double K = static_cast<double>(matrices.size());
  for (double& v : acc.data()) v /= K;
  out.scores = std::move(acc);
  return out;
}

std::vector<int> predictions(const ScoreMatrix& m) {
  std::vector<int> p(m.n_samples());
  for (std::size_t r = 0; r < p.size(); ++r) p[r] = static_cast<int>(argmax(m.scores.row(r)));
  return p;
}

MetricsReport score_metrics(const ScoreMatrix& m) { return compute_metrics(predictions(m), m.labels, m.n_classes()); }

// ---------------------------------------------------------------------------

void SubsetPolicy::validate() const {
  if (n_random < 1) throw std::invalid_argument("SubsetPolicy: n_random must be >= 1");
}

std::uint64_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 r = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;
    if (r > std::numeric_limits<std::uint64_t>::max()) return std::numeric_limits<std::uint64_t>::max();
  }
  return static_cast<std::uint64_t>(r);
}

std::vector<std::vector<std::size_t>> choose_subsets(std::size_t n, std::size_t K, const SubsetPolicy& policy) {
  policy.validate();
  if (K < 1 || K > n)
    throw std::invalid_argument("choose_subsets: need 1 <= K <= n (K=" + std::to_string(K) +
                                ", n=" + std::to_string(n) + ")");
  const std::uint64_t total = binomial(n, K);
  std::vector<std::vector<std::size_t>> out;
  if (policy.mode == SubsetPolicy::Mode::exhaustive_if_small && total <= policy.cap) {
    std::vector<std::size_t> s(K);
    std::iota(s.begin(), s.end(), 0);
    for (;;) {
      out.push_back(s);
      std::size_t i = K;
      while (i > 0 && s[i - 1] == n - K + i - 1) --i;
      if (i == 0) break;
      ++s[i - 1];
      for (std::size_t j = i; j < K; ++j) s[j] = s[j - 1] + 1;
    }
    return out;
  }
  const std::uint64_t want = std::min<std::uint64_t>(policy.n_random, total);
  Rng rng(derive_seed(policy.seed, K));
  std::set<std::vector<std::size_t>> seen;
  std::vector<std::size_t> pool(n);
  while (out.size() < want) {
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < K; ++i) std::swap(pool[i], pool[i + rng.uniform_index(n - i)]);
    std::vector<std::size_t> s(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(K));
    std::sort(s.begin(), s.end());
    if (seen.insert(s).second) out.push_back(std::move(s));
  }
  return out;
}

SubsetStats evaluate_k_subsets(std::span<const ScoreMatrix> matrices, std::size_t K, EnsembleMethod method,
                               const SubsetPolicy& policy) {
  if (K > matrices.size())
    throw std::invalid_argument("evaluate_k_subsets: K=" + std::to_string(K) + " exceeds " +
                                std::to_string(matrices.size()) + " instances");
  const auto subsets = choose_subsets(matrices.size(), K, policy);
  const auto metrics = kernels::omp::subset_metrics(matrices, subsets, method);
  std::vector<double> inst, cls;
  for (const auto& m : metrics) {
    inst.push_back(m.instance_accuracy);
    cls.push_back(m.mean_class_accuracy);
  }
  SubsetStats st;
  st.K = K;
  st.n_subsets = subsets.size();
  st.exhaustive = subsets.size() == binomial(matrices.size(), K) &&
                  policy.mode == SubsetPolicy::Mode::exhaustive_if_small && subsets.size() <= policy.cap;
  const auto a = population_stats(inst), b = population_stats(cls);
  st.mean_instance_accuracy = a.mean;
  st.std_instance_accuracy = a.std;
  st.mean_class_accuracy = b.mean;
  st.std_class_accuracy = b.std;
  return st;
}

// ---------------------------------------------------------------------------

double pooled_std(const ScoreMatrix& m) { return population_stats(m.scores.data()).std; }

ScoreMatrix standardize(const ScoreMatrix& target, const ScoreMatrix& train_scores) {
  const double sigma = pooled_std(train_scores);
  if (!(sigma > 0.0))
    throw std::invalid_argument("standardize: training scores of '" + train_scores.source_tag + "' are constant");
  ScoreMatrix out = target;
  for (double& v : out.scores.data()) v /= sigma;
  return out;
}

ScoreMatrix weighted_mix(std::span<const ScoreMatrix> sources, std::span<const double> weights) {
  check_aligned(sources);
  if (weights.size() != sources.size()) throw std::invalid_argument("weighted_mix: one weight per source required");
  double sum = 0.0;
  for (double k : weights) {
    if (!(k >= 0.0)) throw std::invalid_argument("weighted_mix: negative weight");
    sum += k;
  }
  if (std::abs(sum - 1.0) > kWeightTol) throw std::invalid_argument("weighted_mix: weights sum to " + format_real(sum));
  ScoreMatrix out = sources[0];
  out.source_tag = "weighted_mix";
  std::fill(out.scores.data().begin(), out.scores.data().end(), 0.0);
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& src = sources[s].scores.data();
    auto& dst = out.scores.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weights[s] * src[i];
  }
  return out;
}

WeightRange WeightRange::parse(std::string_view text) {
  auto number = [&](std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    std::string str(s);
    char* end = nullptr;
    const double v = std::strtod(str.c_str(), &end);
    if (str.empty() || end != str.c_str() + str.size() || !std::isfinite(v))
      throw std::invalid_argument("bad weight constraint '" + std::string(text) + "'");
    return v;
  };
  WeightRange r;
  if (const auto dots = text.find(".."); dots != std::string_view::npos) {
    r.lo = number(text.substr(0, dots));
    r.hi = number(text.substr(dots + 2));
  } else if (text.starts_with(">=")) {
    r.lo = number(text.substr(2));
  } else if (text.starts_with("<=")) {
    r.hi = number(text.substr(2));
  } else if (text.starts_with('>')) {
    r.lo = number(text.substr(1));
    r.lo_strict = true;
  } else if (text.starts_with('<')) {
    r.hi = number(text.substr(1));
    r.hi_strict = true;
  } else if (text.starts_with('=')) {
    r.lo = r.hi = number(text.substr(1));
  } else {
    r.lo = r.hi = number(text);
  }
  if (r.lo < 0.0 || r.hi > 1.0 || r.lo > r.hi || (r.lo == r.hi && (r.lo_strict || r.hi_strict)))
    throw std::invalid_argument("weight constraint '" + std::string(text) + "' admits no weight in [0,1]");
  return r;
}

bool WeightRange::contains(double k) const {
  const bool above = lo_strict ? k > lo + kWeightTol : k >= lo - kWeightTol;
  const bool below = hi_strict ? k < hi - kWeightTol : k <= hi + kWeightTol;
  return above && below;
}

std::string WeightRange::to_string() const {
  std::string s = lo_strict ? "(" : "[";
  s += format_real(lo) + "," + format_real(hi);
  s += hi_strict ? ")" : "]";
  return s;
}

std::string_view mix_unit_name(MixUnit u) { return u == MixUnit::sub_ensemble ? "sub_ensemble" : "instance_mean"; }

std::vector<std::vector<double>> simplex_lattice(std::size_t n_sources, double grid_step,
                                                 std::span<const WeightRange> constraints) {
  if (n_sources < 1) throw std::invalid_argument("weight grid: no sources");
  if (!(grid_step > 0.0 && grid_step <= 1.0)) throw std::invalid_argument("weight grid: step must be in (0,1]");
  const double steps_real = 1.0 / grid_step;
  const auto steps = static_cast<std::size_t>(std::llround(steps_real));
  if (std::abs(steps_real - static_cast<double>(steps)) > 1e-6)
    throw std::invalid_argument("weight grid: step " + format_real(grid_step) + " does not divide 1");
  if (!constraints.empty() && constraints.size() != n_sources)
    throw std::invalid_argument("weight grid: one constraint per source required");

  std::vector<std::vector<double>> out;
  std::vector<std::size_t> counts(n_sources, 0);
  // enumerate compositions of `steps` into n_sources parts, lexicographically
  auto rec = [&](auto& self, std::size_t pos, std::size_t left) -> void {
    if (pos + 1 == n_sources) {
      counts[pos] = left;
      std::vector<double> w(n_sources);
      for (std::size_t i = 0; i < n_sources; ++i)
        w[i] = static_cast<double>(counts[i]) / static_cast<double>(steps);
      bool ok = true;
      for (std::size_t i = 0; i < constraints.size() && ok; ++i) ok = constraints[i].contains(w[i]);
      if (ok) out.push_back(std::move(w));
      return;
    }
    for (std::size_t c = 0; c <= left; ++c) {
      counts[pos] = c;
      self(self, pos + 1, left - c);
    }
  };
  rec(rec, 0, steps);
  if (out.empty()) throw std::invalid_argument("weight grid: no lattice point satisfies the constraints");
  return out;
}

std::vector<WeightCandidate> weight_grid_search(std::span<const std::vector<ScoreMatrix>> per_architecture,
                                                double grid_step, std::span<const WeightRange> constraints,
                                                MixUnit unit) {
  if (per_architecture.empty()) throw std::invalid_argument("weight grid: no architectures");
  std::size_t n_inst = per_architecture[0].size();
  for (const auto& a : per_architecture) {
    if (a.empty()) throw std::invalid_argument("weight grid: architecture without instances");
    n_inst = std::min(n_inst, a.size());
  }
  const auto lattice = simplex_lattice(per_architecture.size(), grid_step, constraints);

  // mixes[i] is the list of sources combined by one weighted_mix call
  std::vector<std::vector<ScoreMatrix>> mixes;
  if (unit == MixUnit::sub_ensemble) {
    std::vector<ScoreMatrix> subs;
    for (const auto& a : per_architecture) subs.push_back(aggregate(a, EnsembleMethod::raw_mean));
    mixes.push_back(std::move(subs));
  } else {
    for (std::size_t i = 0; i < n_inst; ++i) {
      std::vector<ScoreMatrix> row;
      for (const auto& a : per_architecture) row.push_back(a[i]);
      mixes.push_back(std::move(row));
    }
  }

  std::vector<WeightCandidate> out(lattice.size());
  std::vector<std::exception_ptr> errors(lattice.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t li = 0; li < static_cast<std::ptrdiff_t>(lattice.size()); ++li) {
    const auto l = static_cast<std::size_t>(li);
    try {
      WeightCandidate c;
      c.weights = lattice[l];
      for (const auto& srcs : mixes) {
        const MetricsReport r = score_metrics(weighted_mix(srcs, c.weights));
        c.instance_accuracy += r.instance_accuracy;
        c.mean_class_accuracy += r.mean_class_accuracy;
      }
      c.instance_accuracy /= static_cast<double>(mixes.size());
      c.mean_class_accuracy /= static_cast<double>(mixes.size());
      out[l] = std::move(c);
    } catch (...) {
      errors[l] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::stable_sort(out.begin(), out.end(), [](const WeightCandidate& a, const WeightCandidate& b) {
    if (a.instance_accuracy != b.instance_accuracy) return a.instance_accuracy > b.instance_accuracy;
    return a.weights < b.weights;
  });
  return out;
}

// ---------------------------------------------------------------------------

void BaggingConfig::validate() const {
  if (fractions.empty()) throw std::invalid_argument("bagging: no fractions");
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("bagging: fraction " + format_real(f) + " outside (0,1]");
  if (n_instances < 1) throw std::invalid_argument("bagging: n_instances must be >= 1");
}

namespace {

BaggingRow summarize_group(const std::vector<TrainedModel>& models, const LabeledDataset& dataset,
                           std::span<const std::size_t> test, std::string variant, double fraction,
                           std::size_t train_size) {
  std::vector<ScoreMatrix> scores;
  for (const auto& m : models) scores.push_back(predict_scores(m, dataset, test));
  std::vector<double> inst, cls;
  for (const auto& s : scores) {
    const auto r = score_metrics(s);
    inst.push_back(r.instance_accuracy);
    cls.push_back(r.mean_class_accuracy);
  }
  BaggingRow row;
  row.variant = std::move(variant);
  row.fraction = fraction;
  row.train_size = train_size;
  row.ensemble = score_metrics(aggregate(scores, EnsembleMethod::raw_mean));
  const auto a = population_stats(inst);
  row.single_mean_instance = a.mean;
  row.single_std_instance = a.std;
  row.single_mean_class = population_stats(cls).mean;
  return row;
}

}  // namespace

std::vector<BaggingRow> run_bagging_experiment(const LabeledDataset& dataset, const DatasetSplit& split,
                                               const ModelArch& arch, const TrainConfig& cfg,
                                               const BaggingConfig& bagging) {
  bagging.validate();
  cfg.validate();
  arch.validate();
  if (split.train.empty() || split.test.empty()) throw std::invalid_argument("bagging: empty train or test split");

  auto seeds_for = [&](std::size_t i) { return SeedBundle::all(bagging.seed_root + i); };
  auto group = [&](auto split_spec) {
    std::vector<kernels::TrainJob> jobs;
    for (std::size_t i = 0; i < bagging.n_instances; ++i)
      jobs.push_back({make_split(split.train, split_spec(i)), seeds_for(i)});
    return jobs;
  };

  std::optional<BaggingRow> simple, with_rep;
  if (bagging.simple) {
    const auto jobs = group([](std::size_t) { return BaggingSpec::full_set(); });
    simple = summarize_group(kernels::omp::train_many(arch, dataset, jobs, cfg), dataset, split.test, "simple", 1.0,
                             jobs[0].indices.size());
  }
  if (bagging.with_replacement) {
    const auto jobs = group(
        [&](std::size_t i) { return BaggingSpec::with_replacement(derive_seed(bagging.seed_root + i, 0xb00757a9ULL)); });
    with_rep = summarize_group(kernels::omp::train_many(arch, dataset, jobs, cfg), dataset, split.test,
                               "with_replacement", 1.0, jobs[0].indices.size());
  }

  std::vector<BaggingRow> rows;
  for (double f : bagging.fractions) {
    const auto tag = static_cast<std::uint64_t>(std::llround(f * 1e6));
    const auto jobs = group([&](std::size_t i) {
      return BaggingSpec::without_replacement(f, derive_seed(bagging.seed_root + i, tag));
    });
    rows.push_back(summarize_group(kernels::omp::train_many(arch, dataset, jobs, cfg), dataset, split.test,
                                   "without_replacement", f, jobs[0].indices.size()));
    for (const auto* ref : {&with_rep, &simple}) {
      if (!*ref) continue;
      BaggingRow r = **ref;
      r.fraction = f;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

void write_bagging_csv(std::ostream& out, std::span<const BaggingRow> rows) {
  out << "variant,fraction,train_size,single_mean_instance_acc,single_std_instance_acc,ensemble_instance_acc,"
         "instance_gain,single_mean_class_acc,ensemble_class_acc,class_gain\n";
  for (const auto& r : rows)
    out << r.variant << ',' << format_real(r.fraction) << ',' << r.train_size << ','
        << format_real(r.single_mean_instance) << ',' << format_real(r.single_std_instance) << ','
        << format_real(r.ensemble.instance_accuracy) << ',' << format_real(r.instance_gain()) << ','
        << format_real(r.single_mean_class) << ',' << format_real(r.ensemble.mean_class_accuracy) << ','
        << format_real(r.class_gain()) << '\n';
}

}  // namespace pcens
