#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcens {

/// Row-major dense matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;
  bool operator==(const Mat&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// xoshiro256** seeded through splitmix64. Distributions are implemented
/// here rather than taken from <random> so streams are identical on every
/// platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal via Box-Muller; the sine half of each pair is cached.
  double normal();
  double normal(double mean, double sigma) { return mean + sigma * normal(); }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

Rng seeded_rng(std::uint64_t seed);

/// Independent sub-stream seed: splitmix64 finalizer over (base, stream).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Numerically stable softmax (max subtraction). Throws on empty input.
std::vector<double> softmax(std::span<const double> v);

/// log(sum(exp(v))) with max subtraction.
double log_sum_exp(std::span<const double> v);

/// Index of the maximum entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> v);

enum class Activation {
  relu_hidden_linear_out,  // classifier heads: raw scores at the last layer
  relu_all,                // per-point feature networks feeding a pooling op
};

/// Fully connected stack. Parameter layout per layer l (in = widths[l],
/// out = widths[l+1]): an in x out weight block stored input-major (entry
/// [i * out + o] connects input i to output o), then out biases.
struct MlpLayout {
  std::vector<std::size_t> widths;
  Activation activation = Activation::relu_hidden_linear_out;

  std::size_t n_layers() const { return widths.empty() ? 0 : widths.size() - 1; }
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t param_count() const;
  /// Offset of layer l's weight block inside the parameter slice.
  std::size_t layer_offset(std::size_t l) const;
  bool applies_relu(std::size_t l) const;
  void validate() const;
};

/// Inverted-dropout multipliers, one Mat per hidden layer (0 or 1/(1-p)),
/// shaped like that layer's activations. Empty means no dropout.
struct DropoutMask {
  std::vector<Mat> per_hidden;
  bool active() const { return !per_hidden.empty(); }
};

DropoutMask sample_dropout(const MlpLayout& layout, std::size_t rows, double rate, Rng& rng);

/// Activations of every layer: acts[0] is the input, acts[L] the output.
struct MlpTrace {
  std::vector<Mat> acts;
  const Mat& output() const { return acts.back(); }
};

/// Batched forward pass; each row of `input` is pushed through the stack.
MlpTrace mlp_forward(std::span<const double> params, const MlpLayout& layout, const Mat& input,
                     const DropoutMask* dropout = nullptr);

/// Single-vector convenience wrapper. Returns activations per layer.
std::vector<std::vector<double>> mlp_forward(std::span<const double> params, const MlpLayout& layout,
                                             std::span<const double> input,
                                             const DropoutMask* dropout = nullptr);

/// Accumulates dL/dparams into `grad` (same length as params) given dL/doutput.
/// Returns dL/dinput when `want_input_grad` is set, otherwise an empty Mat.
Mat mlp_backward(std::span<const double> params, const MlpLayout& layout, const MlpTrace& trace,
                 const Mat& upstream, std::span<double> grad, const DropoutMask* dropout = nullptr,
                 bool want_input_grad = false);

/// Single-vector wrapper returning a fresh gradient vector.
std::vector<double> mlp_backward(std::span<const double> params, const MlpLayout& layout,
                                 std::span<const double> input, std::span<const double> upstream,
                                 const DropoutMask* dropout = nullptr);

/// Momentum SGD: v = momentum * v - lr * g, then p += v.
struct SgdState {
  std::vector<double> velocity;
  double lr = 0.01;
};
void sgd_step(std::span<double> params, std::span<const double> grad, SgdState& st, double momentum);

/// Fisher-Yates with the library's Rng.
void shuffle_indices(std::vector<std::size_t>& v, Rng& rng);

/// He-normal weights, zero biases.
void init_mlp(std::span<double> params, const MlpLayout& layout, Rng& rng);

/// Max over coordinates of |g_a - g_n| / max(1e-6, |g_a| + |g_n|), where g_n is
/// the central difference with step epsilon. ReLU and max pooling make the loss
/// piecewise smooth, so when the central stencil disagrees the coordinate is
/// re-estimated with the second-order forward and backward stencils, at the
/// given step and at a tenth of it, and the closest estimate is kept. A stencil that straddles a kink is
/// wrong, but a wrong analytic gradient disagrees with all of them.
double finite_diff_check(const std::function<double(std::span<const double>)>& loss_fn,
                         std::span<const double> params, std::span<const double> analytic_grad,
                         double epsilon);

/// Variant that derives the analytic gradient from a combined loss+gradient callback.
double finite_diff_check(
    const std::function<double(std::span<const double>, std::vector<double>*)>& loss_and_grad,
    std::span<const double> params, double epsilon);

}  // namespace pcens
