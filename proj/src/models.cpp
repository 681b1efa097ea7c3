#include "pcens/models.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "pcens/kernels.hpp"

namespace pcens {

namespace {

constexpr std::array<std::string_view, 3> kFamilyNames = {"deepsets_lite", "pointnet_lite", "hier_lite"};

constexpr std::size_t kChunkRows = 64;

// Per-point network activations stored as chunks of at most kChunkRows rows,
// which keeps every buffer small.
struct ChunkedTrace {
  std::vector<MlpTrace> chunks;
  std::size_t rows = 0;

  const MlpTrace& chunk_of(std::size_t r) const { return chunks[r / kChunkRows]; }
  const double* out_row(std::size_t r) const { return chunk_of(r).output().row(r % kChunkRows).data(); }
};

ChunkedTrace chunked_forward(std::span<const double> params, const MlpLayout& layout, const Mat& input) {
  ChunkedTrace t;
  t.rows = input.rows();
  for (std::size_t begin = 0; begin < input.rows(); begin += kChunkRows) {
    const std::size_t n = std::min(kChunkRows, input.rows() - begin);
    Mat x(n, input.cols());
    std::copy(input.row(begin).begin(), input.row(begin).begin() + static_cast<std::ptrdiff_t>(n * input.cols()),
              x.data().begin());
    t.chunks.push_back(mlp_forward(params, layout, x));
  }
  return t;
}

// Everything the backward pass needs from one encoder evaluation.
struct EncoderTrace {
  ChunkedTrace phi;                   // per point (flat) or per grouped point (hier)
  std::vector<std::size_t> pool_arg;  // max pooling: winning row per channel
  std::size_t n_groups = 0;
  std::vector<std::size_t> group_arg;  // hier: winning phi row per (group, channel)
  MlpTrace global;                     // hier: per group
  std::vector<double> feature;
};

// Column-wise max with lowest-row tie-break over rows [begin, end).
template <class RowFn>
void max_pool(RowFn row, std::size_t F, std::size_t begin, std::size_t end, double* out, std::size_t* arg) {
  const double* first = row(begin);
  for (std::size_t f = 0; f < F; ++f) {
    out[f] = first[f];
    arg[f] = begin;
  }
  for (std::size_t r = begin + 1; r < end; ++r) {
    const double* hr = row(r);
    for (std::size_t f = 0; f < F; ++f)
      if (hr[f] > out[f]) {
        out[f] = hr[f];
        arg[f] = r;
      }
  }
}

// Trace restricted to the given rows. The per-point networks act on rows
// independently, so backpropagating through the rows that won a max pool
// gives the same gradient as the full trace.
MlpTrace select_rows(const ChunkedTrace& t, std::span<const std::size_t> rows) {
  MlpTrace out;
  const std::size_t n_acts = t.chunks.front().acts.size();
  for (std::size_t l = 0; l < n_acts; ++l) {
    Mat s(rows.size(), t.chunks.front().acts[l].cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto src = t.chunk_of(rows[r]).acts[l].row(rows[r] % kChunkRows);
      std::copy(src.begin(), src.end(), s.row(r).begin());
    }
    out.acts.push_back(std::move(s));
  }
  return out;
}

// Backward through a per-point network after a max pool: slot s sends
// dval[s] to row winner[s], channel channel[s].
void backward_winners(std::span<const double> params, const MlpLayout& layout, const ChunkedTrace& trace,
                      std::span<const std::size_t> winner, std::span<const std::size_t> channel,
                      std::span<const double> dval, std::span<double> grad) {
  std::vector<std::size_t> rows(winner.begin(), winner.end());
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  Mat d(rows.size(), layout.output_width());
  for (std::size_t s = 0; s < winner.size(); ++s) {
    const auto r = static_cast<std::size_t>(std::lower_bound(rows.begin(), rows.end(), winner[s]) - rows.begin());
    d(r, channel[s]) += dval[s];
  }
  mlp_backward(params, layout, select_rows(trace, rows), d, grad);
}

Mat cloud_matrix(const PointCloud& pc) {
  Mat x(pc.size(), 3);
  for (std::size_t i = 0; i < pc.size(); ++i)
    for (std::size_t d = 0; d < 3; ++d) x(i, d) = pc.points[i][d];
  return x;
}

EncoderTrace encoder_forward(const ModelArch& arch, std::span<const double> params, const PointCloud& pc) {
  if (pc.size() == 0) throw std::invalid_argument("encode: empty point cloud");
  const MlpLayout phi = arch.phi_layout();
  const auto phi_params = params.subspan(0, phi.param_count());
  EncoderTrace t;

  if (arch.family != Family::hier_lite) {
    t.phi = chunked_forward(phi_params, phi, cloud_matrix(pc));
    const std::size_t F = phi.output_width();
    t.feature.assign(F, 0.0);
    if (arch.pooling == Pooling::max) {
      t.pool_arg.resize(F);
      max_pool([&](std::size_t r) { return t.phi.out_row(r); }, F, 0, t.phi.rows, t.feature.data(),
               t.pool_arg.data());
    } else {
      for (std::size_t r = 0; r < t.phi.rows; ++r) {
        const double* hr = t.phi.out_row(r);
        for (std::size_t f = 0; f < F; ++f) t.feature[f] += hr[f];
      }
      for (double& v : t.feature) v *= arch.sum_scale;
    }
    return t;
  }

  // canonical storage order makes sampling and grouping independent of input order
  const PointCloud cloud = canonical_order(pc);
  const std::size_t m = std::min(arch.n_centroids, cloud.size());
  const std::size_t k = std::min(arch.group_k, cloud.size());
  const auto centers = farthest_point_sampling(cloud, m, 0);
  const auto groups = knn_group(cloud, centers, k);
  t.n_groups = m;

  Mat local(m * k, 3);
  for (std::size_t j = 0; j < m; ++j) {
    const Point3& c = cloud.points[centers[j]];
    for (std::size_t q = 0; q < k; ++q) {
      const Point3& p = cloud.points[groups[j][q]];
      for (std::size_t d = 0; d < 3; ++d) local(j * k + q, d) = p[d] - c[d];
    }
  }
  t.phi = chunked_forward(phi_params, phi, local);
  const std::size_t F1 = phi.output_width();
  Mat global_in(m, 3 + F1);
  t.group_arg.resize(m * F1);
  for (std::size_t j = 0; j < m; ++j) {
    const Point3& c = cloud.points[centers[j]];
    for (std::size_t d = 0; d < 3; ++d) global_in(j, d) = c[d];
    max_pool([&](std::size_t r) { return t.phi.out_row(r); }, F1, j * k, (j + 1) * k,
             global_in.row(j).data() + 3, t.group_arg.data() + j * F1);
  }
  const MlpLayout glob = arch.global_layout();
  t.global = mlp_forward(params.subspan(phi.param_count(), glob.param_count()), glob, global_in);
  const Mat& g = t.global.output();
  t.feature.assign(g.cols(), 0.0);
  t.pool_arg.resize(g.cols());
  max_pool([&](std::size_t r) { return g.row(r).data(); }, g.cols(), 0, g.rows(), t.feature.data(),
           t.pool_arg.data());
  return t;
}

void encoder_backward(const ModelArch& arch, std::span<const double> params, const EncoderTrace& t,
                      std::span<const double> dfeature, std::span<double> grad) {
  const MlpLayout phi = arch.phi_layout();
  const std::size_t n_phi = phi.param_count();
  const auto phi_params = params.subspan(0, n_phi);
  const std::size_t F = phi.output_width();

  if (arch.family != Family::hier_lite) {
    if (arch.pooling == Pooling::max) {
      std::vector<std::size_t> channel(F);
      std::iota(channel.begin(), channel.end(), 0);
      backward_winners(phi_params, phi, t.phi, t.pool_arg, channel, dfeature, grad.subspan(0, n_phi));
      return;
    }
    for (const MlpTrace& chunk : t.phi.chunks) {
      Mat dh(chunk.output().rows(), F);
      for (std::size_t r = 0; r < dh.rows(); ++r)
        for (std::size_t f = 0; f < F; ++f) dh(r, f) = dfeature[f] * arch.sum_scale;
      mlp_backward(phi_params, phi, chunk, dh, grad.subspan(0, n_phi));
    }
    return;
  }

  const MlpLayout glob = arch.global_layout();
  const auto glob_params = params.subspan(n_phi, glob.param_count());
  const Mat& g = t.global.output();
  Mat dg(g.rows(), g.cols());
  for (std::size_t f = 0; f < g.cols(); ++f) dg(t.pool_arg[f], f) = dfeature[f];
  const Mat dglobal_in = mlp_backward(glob_params, glob, t.global, dg, grad.subspan(n_phi, glob.param_count()),
                                      nullptr, /*want_input_grad=*/true);
  std::vector<std::size_t> channel(t.n_groups * F);
  std::vector<double> dval(t.n_groups * F);
  for (std::size_t j = 0; j < t.n_groups; ++j)
    for (std::size_t f = 0; f < F; ++f) {
      channel[j * F + f] = f;
      dval[j * F + f] = dglobal_in(j, 3 + f);
    }
  backward_winners(phi_params, phi, t.phi, t.group_arg, channel, dval, grad.subspan(0, n_phi));
}

// Cross-entropy of one sample; accumulates the gradient when grad is non-empty.
double sample_loss(const ModelArch& arch, std::span<const double> params, const PointCloud& pc, int label,
                   const DropoutMask* mask, std::span<double> grad) {
  const std::size_t n_enc = arch.encoder_param_count();
  const MlpLayout rho = arch.rho_layout();
  const auto rho_params = params.subspan(n_enc, rho.param_count());
  const EncoderTrace enc = encoder_forward(arch, params, pc);
  Mat feat(1, enc.feature.size(), enc.feature);
  const MlpTrace rt = mlp_forward(rho_params, rho, feat, mask);
  const auto scores = rt.output().row(0);
  const double loss = log_sum_exp(scores) - scores[static_cast<std::size_t>(label)];
  if (!grad.empty()) {
    std::vector<double> p = softmax(scores);
    p[static_cast<std::size_t>(label)] -= 1.0;
    const std::size_t C = p.size();
    Mat up(1, C, std::move(p));
    const Mat dfeat = mlp_backward(rho_params, rho, rt, up, grad.subspan(n_enc, rho.param_count()), mask, true);
    encoder_backward(arch, params, enc, dfeat.row(0), grad);
  }
  return loss;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view family_name(Family f) { return kFamilyNames.at(static_cast<std::size_t>(f)); }

Family parse_family(std::string_view name) {
  for (std::size_t i = 0; i < kFamilyNames.size(); ++i)
    if (kFamilyNames[i] == name) return static_cast<Family>(i);
  throw std::invalid_argument("unknown architecture family '" + std::string(name) + "'");
}

ModelArch ModelArch::defaults(Family family, std::size_t n_classes) {
  ModelArch a;
  a.family = family;
  switch (family) {
    case Family::deepsets_lite:
      a.phi_widths = {3, 32, 64};
      a.rho_widths = {64, 32, n_classes};
      a.pooling = Pooling::sum;
      a.sum_scale = 1.0 / 256.0;
      break;
    case Family::pointnet_lite:
      a.phi_widths = {3, 32, 64};
      a.rho_widths = {64, 32, n_classes};
      a.pooling = Pooling::max;
      break;
    case Family::hier_lite:
      a.phi_widths = {3, 16, 32};
      a.global_widths = {35, 64};
      a.rho_widths = {64, 32, n_classes};
      a.pooling = Pooling::max;
      break;
  }
  return a;
}

std::size_t ModelArch::encoder_param_count() const {
  std::size_t n = phi_layout().param_count();
  if (family == Family::hier_lite) n += global_layout().param_count();
  return n;
}

void ModelArch::validate() const {
  phi_layout().validate();
  rho_layout().validate();
  if (phi_widths.front() != 3) throw std::invalid_argument("ModelArch: phi input width must be 3");
  if (rho_widths.back() < 2) throw std::invalid_argument("ModelArch: need at least 2 classes");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("ModelArch: dropout_rate outside [0,1)");
  if (!(sum_scale > 0.0 && std::isfinite(sum_scale))) throw std::invalid_argument("ModelArch: sum_scale must be > 0");
  const Pooling expected = family == Family::deepsets_lite ? Pooling::sum : Pooling::max;
  if (pooling != expected)
    throw std::invalid_argument("ModelArch: " + std::string(family_name(family)) + " requires " +
                                (expected == Pooling::sum ? "sum" : "max") + " pooling");
  if (family == Family::hier_lite) {
    global_layout().validate();
    if (global_widths.front() != 3 + phi_widths.back())
      throw std::invalid_argument("ModelArch: global input width must be 3 + phi output width");
    if (global_widths.back() != rho_widths.front())
      throw std::invalid_argument("ModelArch: rho input width must equal global output width");
    if (n_centroids == 0 || group_k == 0) throw std::invalid_argument("ModelArch: hier sizes must be positive");
  } else {
    if (!global_widths.empty()) throw std::invalid_argument("ModelArch: global widths are hier_lite only");
    if (phi_widths.back() != rho_widths.front())
      throw std::invalid_argument("ModelArch: rho input width must equal phi output width");
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("TrainConfig: momentum outside [0,1)");
  if (!(lr_decay > 0.0)) throw std::invalid_argument("TrainConfig: lr_decay must be > 0");
}

void TrainedModel::validate() const {
  arch.validate();
  if (params.size() != arch.param_count())
    throw std::invalid_argument("TrainedModel: parameter count " + std::to_string(params.size()) +
                                " does not match architecture (" + std::to_string(arch.param_count()) + ")");
  for (double v : params)
    if (!std::isfinite(v)) throw std::invalid_argument("TrainedModel: non-finite parameter");
}

TrainedModel init_model(const ModelArch& arch, const SeedBundle& seeds) {
  arch.validate();
  TrainedModel m;
  m.arch = arch;
  m.seeds = seeds;
  m.params.assign(arch.param_count(), 0.0);
  Rng rng(seeds.init_seed());
  std::span<double> p(m.params);
  std::size_t off = 0;
  const MlpLayout phi = arch.phi_layout();
  init_mlp(p.subspan(off, phi.param_count()), phi, rng);
  off += phi.param_count();
  if (arch.family == Family::hier_lite) {
    const MlpLayout g = arch.global_layout();
    init_mlp(p.subspan(off, g.param_count()), g, rng);
    off += g.param_count();
  }
  const MlpLayout rho = arch.rho_layout();
  init_mlp(p.subspan(off, rho.param_count()), rho, rng);
  return m;
}

TrainedModel train(const ModelArch& arch, const LabeledDataset& dataset, std::span<const std::size_t> train_indices,
                   const SeedBundle& seeds, const TrainConfig& cfg) {
  cfg.validate();
  arch.validate();
  if (dataset.n_classes() != arch.n_classes())
    throw std::invalid_argument("train: dataset has " + std::to_string(dataset.n_classes()) +
                                " classes, architecture outputs " + std::to_string(arch.n_classes()));
  if (train_indices.empty()) throw std::invalid_argument("train: empty training set");
  for (std::size_t i : train_indices) {
    if (i >= dataset.size()) throw std::invalid_argument("train: index out of range");
    for (const auto& p : dataset.samples[i].cloud.points)
      if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
        throw std::invalid_argument("train: sample " + std::to_string(i) + " has a non-finite coordinate");
  }

  TrainedModel model = init_model(arch, seeds);
  Rng data_rng(seeds.data_order_seed());
  Rng drop_rng(seeds.dropout_seed());
  const MlpLayout rho = arch.rho_layout();
  SgdState sgd{std::vector<double>(model.params.size(), 0.0), cfg.learning_rate};
  std::vector<double> grad(model.params.size());
  std::vector<std::size_t> order(train_indices.begin(), train_indices.end());

  double epoch_loss = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(order, data_rng);
    epoch_loss = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const Sample& s = dataset.samples[order[b]];
        const PointCloud cloud = cfg.augment ? augment(s.cloud, data_rng) : s.cloud;
        const DropoutMask mask = sample_dropout(rho, 1, arch.dropout_rate, drop_rng);
        batch_loss += sample_loss(arch, model.params, cloud, s.label, &mask, grad);
      }
      if (!std::isfinite(batch_loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
      const double inv = 1.0 / static_cast<double>(end - start);
      for (double& g : grad) g *= inv;
      sgd_step(model.params, grad, sgd, cfg.momentum);
      epoch_loss += batch_loss;
    }
    sgd.lr *= cfg.lr_decay;
  }
  model.record = {cfg.epochs, epoch_loss / static_cast<double>(order.size())};
  for (double v : model.params)
    if (!std::isfinite(v)) throw TrainingError("non-finite parameter after training");
  return model;
}

std::vector<double> encode(const TrainedModel& model, const PointCloud& pc) {
  return encoder_forward(model.arch, model.params, pc).feature;
}

std::vector<double> classify(const TrainedModel& model, std::span<const double> feature) {
  if (feature.size() != model.arch.feature_width()) throw std::invalid_argument("classify: feature width mismatch");
  return mlp_forward(model.rho_params(), model.arch.rho_layout(), feature).back();
}

std::vector<double> predict(const TrainedModel& model, const PointCloud& pc) {
  const auto f = encode(model, pc);
  return classify(model, f);
}

ScoreMatrix predict_scores(const TrainedModel& model, const LabeledDataset& dataset,
                           std::span<const std::size_t> eval_indices, std::string source_tag) {
  ScoreMatrix m;
  m.scores = kernels::omp::predict_rows(model, dataset, eval_indices);
  m.sample_ids.assign(eval_indices.begin(), eval_indices.end());
  for (std::size_t i : eval_indices) m.labels.push_back(dataset.samples[i].label);
  m.source_tag = std::move(source_tag);
  return m;
}

double loss_and_gradient(const ModelArch& arch, std::span<const double> params, const LabeledDataset& dataset,
                         std::span<const std::size_t> indices, std::optional<std::uint64_t> dropout_seed,
                         std::vector<double>* grad) {
  if (params.size() != arch.param_count()) throw std::invalid_argument("loss_and_gradient: params length mismatch");
  if (indices.empty()) throw std::invalid_argument("loss_and_gradient: no samples");
  if (grad) grad->assign(params.size(), 0.0);
  std::optional<Rng> rng;
  if (dropout_seed) rng.emplace(*dropout_seed);
  const MlpLayout rho = arch.rho_layout();
  double loss = 0.0;
  for (std::size_t i : indices) {
    DropoutMask mask;
    if (rng) mask = sample_dropout(rho, 1, arch.dropout_rate, *rng);
    const Sample& s = dataset.samples.at(i);
    loss += sample_loss(arch, params, s.cloud, s.label, &mask, grad ? std::span<double>(*grad) : std::span<double>());
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  if (grad)
    for (double& g : *grad) g *= inv;
  return loss * inv;
}

TrainedModel retrain_classifier(const TrainedModel& model, const LabeledDataset& dataset,
                                std::span<const std::size_t> train_indices, std::uint64_t classifier_seed,
                                std::size_t epochs, const TrainConfig& cfg) {
  model.validate();
  TrainConfig head_cfg = cfg;
  head_cfg.epochs = epochs;
  head_cfg.validate();
  if (train_indices.empty()) throw std::invalid_argument("retrain_classifier: empty training set");

  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  features.reserve(train_indices.size());
  for (std::size_t i : train_indices) {
    features.push_back(encode(model, dataset.samples.at(i).cloud));
    labels.push_back(dataset.samples[i].label);
  }

  TrainedModel out = model;
  const MlpLayout rho = model.arch.rho_layout();
  const std::size_t n_enc = model.arch.encoder_param_count();
  std::span<double> rho_params(out.params.data() + n_enc, rho.param_count());
  Rng init_rng(derive_seed(classifier_seed, 1));
  Rng order_rng(derive_seed(classifier_seed, 2));
  Rng drop_rng(derive_seed(classifier_seed, 3));
  init_mlp(rho_params, rho, init_rng);

  SgdState sgd{std::vector<double>(rho_params.size(), 0.0), head_cfg.learning_rate};
  std::vector<double> grad(rho_params.size());
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  double epoch_loss = 0.0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    shuffle_indices(order, order_rng);
    epoch_loss = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += head_cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + head_cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const auto& f = features[order[b]];
        const int label = labels[order[b]];
        const DropoutMask mask = sample_dropout(rho, 1, model.arch.dropout_rate, drop_rng);
        const MlpTrace rt = mlp_forward(rho_params, rho, Mat(1, f.size(), f), &mask);
        const auto scores = rt.output().row(0);
        batch_loss += log_sum_exp(scores) - scores[static_cast<std::size_t>(label)];
        std::vector<double> p = softmax(scores);
        p[static_cast<std::size_t>(label)] -= 1.0;
        const std::size_t C = p.size();
        mlp_backward(rho_params, rho, rt, Mat(1, C, std::move(p)), grad, &mask);
      }
      if (!std::isfinite(batch_loss))
        throw TrainingError("head retraining: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch));
      const double inv = 1.0 / static_cast<double>(end - start);
      for (double& g : grad) g *= inv;
      sgd_step(rho_params, grad, sgd, head_cfg.momentum);
      epoch_loss += batch_loss;
    }
    sgd.lr *= head_cfg.lr_decay;
  }
  out.record = {epochs, epoch_loss / static_cast<double>(order.size())};
  return out;
}

TimingReport time_inference(const TrainedModel& model, std::span<const PointCloud> batch, std::size_t repetitions) {
  if (repetitions < 3) throw std::invalid_argument("time_inference: need at least 3 repetitions");
  if (batch.empty()) throw std::invalid_argument("time_inference: empty batch");
  using clock = std::chrono::steady_clock;
  auto run = [&] {
    double sink = 0.0;
    for (const auto& pc : batch) sink += predict(model, pc)[0];
    return sink;
  };
  volatile double keep = run();  // warm-up, discarded
  std::vector<double> ms;
  ms.reserve(repetitions);
  for (std::size_t r = 0; r < repetitions; ++r) {
    const auto t0 = clock::now();
    keep = keep + run();
    const auto t1 = clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  TimingReport rep;
  rep.repetitions = repetitions;
  rep.batch_size = batch.size();
  rep.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  rep.min_ms = *std::min_element(ms.begin(), ms.end());
  rep.max_ms = *std::max_element(ms.begin(), ms.end());
  return rep;
}

// ---------------------------------------------------------------------------
// model file

namespace {

std::string join_widths(const std::vector<std::size_t>& w) {
  if (w.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> out;
  if (s == "-") return out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t v = 0;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) throw ModelFormatError("bad width list '" + s + "'");
    out.push_back(v);
  }
  return out;
}

std::string seed_text(const std::optional<std::uint64_t>& s) { return s ? std::to_string(*s) : "CONST"; }

std::optional<std::uint64_t> parse_seed(const std::string& s) {
  if (s == "CONST") return std::nullopt;
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ModelFormatError("bad seed '" + s + "'");
  return v;
}

// key=value tokens after a leading keyword
std::vector<std::pair<std::string, std::string>> parse_kv_line(const std::string& line, const std::string& keyword,
                                                               std::size_t line_no) {
  std::stringstream ss(line);
  std::string word;
  if (!(ss >> word) || word != keyword)
    throw ModelFormatError("line " + std::to_string(line_no) + ": expected '" + keyword + "'");
  std::vector<std::pair<std::string, std::string>> kv;
  while (ss >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw ModelFormatError("line " + std::to_string(line_no) + ": expected key=value");
    kv.emplace_back(word.substr(0, eq), word.substr(eq + 1));
  }
  return kv;
}

const std::string& require(const std::vector<std::pair<std::string, std::string>>& kv, const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return v;
  throw ModelFormatError("missing field '" + key + "'");
}

}  // namespace

void save_model(const TrainedModel& model, std::ostream& out) {
  model.validate();
  const ModelArch& a = model.arch;
  out << "PMODEL 1 " << family_name(a.family) << '\n';
  out << "arch phi=" << join_widths(a.phi_widths) << " global=" << join_widths(a.global_widths)
      << " rho=" << join_widths(a.rho_widths) << " pooling=" << (a.pooling == Pooling::sum ? "sum" : "max")
      << " dropout=" << format_real(a.dropout_rate) << " sum_scale=" << format_real(a.sum_scale)
      << " centroids=" << a.n_centroids << " group_k=" << a.group_k << '\n';
  out << "seeds data_order=" << seed_text(model.seeds.data_order) << " init=" << seed_text(model.seeds.init)
      << " dropout=" << seed_text(model.seeds.dropout) << " epochs=" << model.record.epochs
      << " final_loss=" << format_real(model.record.final_loss) << '\n';
  out << model.params.size() << '\n';
  for (double v : model.params) out << format_real(v) << '\n';
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  save_model(model, f);
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

TrainedModel load_model(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](const char* what) -> const std::string& {
    if (!std::getline(in, line)) throw ModelFormatError(std::string("truncated model file: missing ") + what);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  TrainedModel m;
  {
    std::stringstream ss(next("header"));
    std::string magic, version, family;
    if (!(ss >> magic >> version >> family) || magic != "PMODEL") throw ModelFormatError("line 1: not a model file");
    if (version != "1") throw ModelFormatError("unsupported model file version " + version);
    m.arch.family = parse_family(family);
  }
  try {
    const auto kv = parse_kv_line(next("architecture"), "arch", line_no);
    m.arch.phi_widths = parse_widths(require(kv, "phi"));
    m.arch.global_widths = parse_widths(require(kv, "global"));
    m.arch.rho_widths = parse_widths(require(kv, "rho"));
    const std::string& pool = require(kv, "pooling");
    if (pool != "sum" && pool != "max") throw ModelFormatError("bad pooling '" + pool + "'");
    m.arch.pooling = pool == "sum" ? Pooling::sum : Pooling::max;
    m.arch.dropout_rate = std::stod(require(kv, "dropout"));
    m.arch.sum_scale = std::stod(require(kv, "sum_scale"));
    m.arch.n_centroids = std::stoul(require(kv, "centroids"));
    m.arch.group_k = std::stoul(require(kv, "group_k"));
    m.arch.validate();

    const auto sk = parse_kv_line(next("seeds"), "seeds", line_no);
    m.seeds.data_order = parse_seed(require(sk, "data_order"));
    m.seeds.init = parse_seed(require(sk, "init"));
    m.seeds.dropout = parse_seed(require(sk, "dropout"));
    m.record.epochs = std::stoul(require(sk, "epochs"));
    m.record.final_loss = std::stod(require(sk, "final_loss"));
  } catch (const ModelFormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw ModelFormatError("line " + std::to_string(line_no) + ": " + e.what());
  }

  const std::string& count_line = next("parameter count");
  std::size_t count = 0;
  const auto r = std::from_chars(count_line.data(), count_line.data() + count_line.size(), count);
  if (r.ec != std::errc() || r.ptr != count_line.data() + count_line.size())
    throw ModelFormatError("line 4: malformed parameter count");
  if (count != m.arch.param_count())
    throw ModelFormatError("line 4: parameter count " + std::to_string(count) + " does not match architecture (" +
                           std::to_string(m.arch.param_count()) + ")");
  m.params.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string& tok = next("parameter");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || end != tok.c_str() + tok.size() || !std::isfinite(v))
      throw ModelFormatError("line " + std::to_string(line_no) + ": malformed parameter");
    if (format_real(v) != tok)
      throw ModelFormatError("line " + std::to_string(line_no) + ": parameter is not in exact 17-digit form");
    m.params[i] = v;
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos)
      throw ModelFormatError("line " + std::to_string(line_no) + ": trailing content after parameters");
  }
  return m;
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  return load_model(f);
}

}  // namespace pcens
