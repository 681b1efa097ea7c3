#include "pcens/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace pcens {

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw std::invalid_argument("Mat: data length != rows*cols");
}

bool Mat::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Rng

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::uniform_index: n must be positive");
  // rejection sampling removes modulo bias
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(t);
  has_spare_ = true;
  return r * std::cos(t);
}

Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t x = base ^ (stream * 0xd1b54a32d192ed03ULL);
  return splitmix64(x);
}

// ---------------------------------------------------------------------------
// softmax / argmax

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("log_sum_exp: empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - m);
  return m + std::log(sum);
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// MLP

std::size_t MlpLayout::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < n_layers(); ++l) n += widths[l] * widths[l + 1] + widths[l + 1];
  return n;
}

std::size_t MlpLayout::layer_offset(std::size_t l) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < l; ++i) off += widths[i] * widths[i + 1] + widths[i + 1];
  return off;
}

bool MlpLayout::applies_relu(std::size_t l) const {
  return activation == Activation::relu_all || l + 1 < n_layers();
}

void MlpLayout::validate() const {
  if (widths.size() < 2) throw std::invalid_argument("MlpLayout: need at least input and output width");
  for (std::size_t w : widths)
    if (w == 0) throw std::invalid_argument("MlpLayout: zero width");
}

DropoutMask sample_dropout(const MlpLayout& layout, std::size_t rows, double rate, Rng& rng) {
  DropoutMask mask;
  if (rate <= 0.0) return mask;
  if (rate >= 1.0) throw std::invalid_argument("sample_dropout: rate must be < 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t l = 0; l + 1 < layout.n_layers(); ++l) {
    Mat m(rows, layout.widths[l + 1]);
    for (double& v : m.data()) v = rng.uniform() < rate ? 0.0 : keep_scale;
    mask.per_hidden.push_back(std::move(m));
  }
  return mask;
}

namespace {

void check_dropout(const MlpLayout& layout, std::size_t rows, const DropoutMask* dropout) {
  if (dropout == nullptr || !dropout->active()) return;
  if (dropout->per_hidden.size() + 1 != layout.n_layers())
    throw std::invalid_argument("dropout mask: wrong number of hidden layers");
  for (std::size_t l = 0; l < dropout->per_hidden.size(); ++l) {
    const Mat& m = dropout->per_hidden[l];
    if (m.rows() != rows || m.cols() != layout.widths[l + 1])
      throw std::invalid_argument("dropout mask: shape mismatch");
  }
}

// y = b + x W for one row, accumulating over inputs in ascending order.
// Outputs are processed in register-sized blocks.
__attribute__((target_clones("avx2", "default"))) void dense_row(const double* xr, const double* w, const double* b, std::size_t in, std::size_t out, double* yr) {
  constexpr std::size_t B = 8;
  std::size_t o0 = 0;
  for (; o0 + B <= out; o0 += B) {
    double acc[B];
    for (std::size_t k = 0; k < B; ++k) acc[k] = b[o0 + k];
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      const double* wi = w + i * out + o0;
      for (std::size_t k = 0; k < B; ++k) acc[k] += xi * wi[k];
    }
    for (std::size_t k = 0; k < B; ++k) yr[o0 + k] = acc[k];
  }
  for (std::size_t o = o0; o < out; ++o) {
    double acc = b[o];
    for (std::size_t i = 0; i < in; ++i) acc += xr[i] * w[i * out + o];
    yr[o] = acc;
  }
}

}  // namespace

MlpTrace mlp_forward(std::span<const double> params, const MlpLayout& layout, const Mat& input,
                     const DropoutMask* dropout) {
  layout.validate();
  if (params.size() != layout.param_count())
    throw std::invalid_argument("mlp_forward: params length " + std::to_string(params.size()) +
                                " != layout " + std::to_string(layout.param_count()));
  if (input.cols() != layout.input_width())
    throw std::invalid_argument("mlp_forward: input width mismatch");
  check_dropout(layout, input.rows(), dropout);

  MlpTrace trace;
  trace.acts.reserve(layout.n_layers() + 1);
  trace.acts.push_back(input);
  std::size_t off = 0;
  for (std::size_t l = 0; l < layout.n_layers(); ++l) {
    const std::size_t in = layout.widths[l];
    const std::size_t out = layout.widths[l + 1];
    const double* w = params.data() + off;
    const double* b = w + in * out;
    const Mat& x = trace.acts.back();
    Mat y(x.rows(), out);
    for (std::size_t r = 0; r < x.rows(); ++r) dense_row(x.row(r).data(), w, b, in, out, y.row(r).data());
    if (layout.applies_relu(l))
      for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    const bool hidden = l + 1 < layout.n_layers();
    if (hidden && dropout != nullptr && dropout->active()) {
      const auto& m = dropout->per_hidden[l].data();
      auto& yd = y.data();
      for (std::size_t k = 0; k < yd.size(); ++k) yd[k] *= m[k];
    }
    trace.acts.push_back(std::move(y));
    off += in * out + out;
  }
  return trace;
}

std::vector<std::vector<double>> mlp_forward(std::span<const double> params, const MlpLayout& layout,
                                             std::span<const double> input, const DropoutMask* dropout) {
  Mat x(1, input.size(), std::vector<double>(input.begin(), input.end()));
  MlpTrace t = mlp_forward(params, layout, x, dropout);
  std::vector<std::vector<double>> out;
  out.reserve(t.acts.size());
  for (auto& a : t.acts) out.push_back(std::move(a.data()));
  return out;
}

Mat mlp_backward(std::span<const double> params, const MlpLayout& layout, const MlpTrace& trace,
                 const Mat& upstream, std::span<double> grad, const DropoutMask* dropout,
                 bool want_input_grad) {
  layout.validate();
  if (params.size() != layout.param_count() || grad.size() != params.size())
    throw std::invalid_argument("mlp_backward: params/grad length mismatch");
  if (trace.acts.size() != layout.n_layers() + 1)
    throw std::invalid_argument("mlp_backward: trace does not match layout");
  const std::size_t rows = trace.acts.front().rows();
  if (upstream.rows() != rows || upstream.cols() != layout.output_width())
    throw std::invalid_argument("mlp_backward: upstream gradient shape mismatch");
  check_dropout(layout, rows, dropout);

  Mat delta = upstream;
  std::vector<char> live(rows);
  for (std::size_t l = layout.n_layers(); l-- > 0;) {
    const std::size_t in = layout.widths[l];
    const std::size_t out = layout.widths[l + 1];
    const std::size_t off = layout.layer_offset(l);
    const double* w = params.data() + off;
    double* gw = grad.data() + off;
    double* gb = gw + in * out;
    const Mat& x = trace.acts[l];
    const Mat& y = trace.acts[l + 1];

    const bool hidden = l + 1 < layout.n_layers();
    if (hidden && dropout != nullptr && dropout->active()) {
      const auto& m = dropout->per_hidden[l].data();
      auto& dd = delta.data();
      for (std::size_t k = 0; k < dd.size(); ++k) dd[k] *= m[k];
    }
    if (layout.applies_relu(l)) {
      const auto& yd = y.data();
      auto& dd = delta.data();
      for (std::size_t k = 0; k < dd.size(); ++k)
        if (!(yd[k] > 0.0)) dd[k] = 0.0;
    }
    // rows with an all-zero delta contribute nothing (common under max pooling)
    for (std::size_t r = 0; r < rows; ++r) {
      const auto d = delta.row(r);
      live[r] = std::any_of(d.begin(), d.end(), [](double v) { return v != 0.0; });
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (!live[r]) continue;
      const double* dr = delta.row(r).data();
      const double* xr = x.row(r).data();
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = xr[i];
        double* gwi = gw + i * out;
        for (std::size_t o = 0; o < out; ++o) gwi[o] += xi * dr[o];
      }
      for (std::size_t o = 0; o < out; ++o) gb[o] += dr[o];
    }
    if (l == 0 && !want_input_grad) return {};
    Mat prev(rows, in);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!live[r]) continue;
      const double* dr = delta.row(r).data();
      double* pr = prev.row(r).data();
      for (std::size_t i = 0; i < in; ++i) {
        const double* wi = w + i * out;
        double s = 0.0;
        for (std::size_t o = 0; o < out; ++o) s += wi[o] * dr[o];
        pr[i] = s;
      }
    }
    delta = std::move(prev);
  }
  return delta;
}

std::vector<double> mlp_backward(std::span<const double> params, const MlpLayout& layout,
                                 std::span<const double> input, std::span<const double> upstream,
                                 const DropoutMask* dropout) {
  Mat x(1, input.size(), std::vector<double>(input.begin(), input.end()));
  MlpTrace t = mlp_forward(params, layout, x, dropout);
  Mat up(1, upstream.size(), std::vector<double>(upstream.begin(), upstream.end()));
  std::vector<double> grad(params.size(), 0.0);
  mlp_backward(params, layout, t, up, grad, dropout);
  return grad;
}

void init_mlp(std::span<double> params, const MlpLayout& layout, Rng& rng) {
  if (params.size() != layout.param_count()) throw std::invalid_argument("init_mlp: length mismatch");
  std::size_t off = 0;
  for (std::size_t l = 0; l < layout.n_layers(); ++l) {
    const std::size_t in = layout.widths[l];
    const std::size_t out = layout.widths[l + 1];
    const double sigma = std::sqrt(2.0 / static_cast<double>(in));
    for (std::size_t k = 0; k < in * out; ++k) params[off + k] = rng.normal(0.0, sigma);
    for (std::size_t k = 0; k < out; ++k) params[off + in * out + k] = 0.0;
    off += in * out + out;
  }
}

// ---------------------------------------------------------------------------
// gradient verification

void sgd_step(std::span<double> params, std::span<const double> grad, SgdState& st, double momentum) {
  if (grad.size() != params.size() || st.velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: length mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.velocity[i] = momentum * st.velocity[i] - st.lr * grad[i];
    params[i] += st.velocity[i];
  }
}

void shuffle_indices(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

double finite_diff_check(const std::function<double(std::span<const double>)>& loss_fn,
                         std::span<const double> params, std::span<const double> analytic_grad,
                         double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("finite_diff_check: epsilon must be positive");
  if (analytic_grad.size() != params.size())
    throw std::invalid_argument("finite_diff_check: gradient length mismatch");
  std::vector<double> p(params.begin(), params.end());
  const auto eval = [&](std::size_t i, double x) {
    p[i] = x;
    const double v = loss_fn(p);
    if (!std::isfinite(v))
      throw std::runtime_error("finite_diff_check: non-finite loss at coordinate " + std::to_string(i));
    return v;
  };
  const auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1e-6, std::abs(a) + std::abs(b)); };
  double base = std::numeric_limits<double>::quiet_NaN();
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    const double ga = analytic_grad[i];
    const double up = eval(i, orig + epsilon);
    const double down = eval(i, orig - epsilon);
    double err = rel(ga, (up - down) / (2.0 * epsilon));
    if (err > 1e-6) {
      if (std::isnan(base)) {
        p[i] = orig;
        base = loss_fn(p);
        if (!std::isfinite(base)) throw std::runtime_error("finite_diff_check: non-finite loss");
      }
      for (const double h : {epsilon, 0.1 * epsilon}) {
        const double u1 = h == epsilon ? up : eval(i, orig + h);
        const double d1 = h == epsilon ? down : eval(i, orig - h);
        const double u2 = eval(i, orig + 2.0 * h);
        const double d2 = eval(i, orig - 2.0 * h);
        const double fwd = (-3.0 * base + 4.0 * u1 - u2) / (2.0 * h);
        const double bwd = (3.0 * base - 4.0 * d1 + d2) / (2.0 * h);
        err = std::min({err, rel(ga, (u1 - d1) / (2.0 * h)), rel(ga, fwd), rel(ga, bwd)});
      }
    }
    p[i] = orig;
    worst = std::max(worst, err);
  }
  return worst;
}

double finite_diff_check(
    const std::function<double(std::span<const double>, std::vector<double>*)>& loss_and_grad,
    std::span<const double> params, double epsilon) {
  std::vector<double> grad;
  const double base = loss_and_grad(params, &grad);
  if (!std::isfinite(base)) throw std::runtime_error("finite_diff_check: non-finite loss");
  return finite_diff_check([&](std::span<const double> p) { return loss_and_grad(p, nullptr); }, params,
                           grad, epsilon);
}

}  // namespace pcens
