#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

// Dense float32 tensors with tape-based reverse-mode autodiff and an Adam
// optimizer. Only the operators needed by the convolutional autoencoders,
// the seq2seq LSTM and the training losses are provided.

namespace mfs {

std::string shape_str(std::span<const int> shape);

// Toggle for the finite-value scan after each op (on by default).
void set_finite_checks(bool on);
bool finite_checks_enabled();

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, bool requires_grad = false);

  static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor zeros(std::vector<int> shape);
  static Tensor scalar(float v);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int64_t size() const;
  bool requires_grad() const;
  void set_requires_grad(bool on);

  // Tensor is a shared-buffer handle: buffer access is independent of handle
  // constness (recorded tensors are immutable by convention, not by type).
  std::span<float> values() const;
  std::span<float> grad() const;
  void zero_grad();

  // Scalar tensors only.
  float item() const;

  // Identity of the underlying buffer (used by frozenness tests).
  const void* data_id() const { return impl_.get(); }

 private:
  struct Impl {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // allocated iff requires_grad
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// A tape records one backward rule per op in execution order. Constructing a
// Tape makes it current for this thread; destruction restores the previous
// one. Tapes must not be shared across threads.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_rule);
  size_t node_count() const { return nodes_.size(); }

  static Tape* current();

 private:
  friend void backward(const Tensor& loss, Tape& tape);
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
};

// Seeds d(loss) = 1 and replays the tape in reverse. Gradients accumulate
// additively into every requires_grad tensor reached by the recorded rules.
void backward(const Tensor& loss, Tape& tape);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor clamp(const Tensor& a, float lo, float hi);

// Per-channel y = x*scale[c] + shift[c] for x shaped [C,H,W] or [N,C,H,W].
// scale/shift are constants (normalization records), not parameters.
Tensor channel_affine(const Tensor& x, std::span<const float> scl,
                      std::span<const float> shift);

// y = x + b[c] broadcast over the spatial dims; b is a parameter ([C]).
Tensor add_channel_bias(const Tensor& x, const Tensor& b);

// ---- linear algebra ----
// x: [B,in] or [in]; w: [out,in]; b: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x: [C,H,W] or [N,C,H,W]; k: [C_out,C_in,kh,kw].
Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int padding);
// Exact linear adjoint of conv2d with the same kernel/stride/padding.
Tensor conv2d_transpose(const Tensor& x, const Tensor& k, int stride,
                        int padding);

// ---- shape ----
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor slice_cols(const Tensor& x, int start, int len);  // [B,N] -> [B,len]
// Edge-replicating pad / crop on the two trailing (spatial) dims, applied on
// the high-index side only.
Tensor pad2d_edge(const Tensor& x, int pad_h, int pad_w);
Tensor crop2d(const Tensor& x, int out_h, int out_w);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// <a-b, a-b>; either side may be a constant.
Tensor sum_sq_diff(const Tensor& a, const Tensor& b);
// As sum_sq_diff over a batched a[B,...], but samples with mask[b]==0
// contribute nothing (value or gradient). b is constant.
Tensor sum_sq_diff_masked(const Tensor& a, const Tensor& b,
                          std::span<const uint8_t> mask);
// |a| for scalar a; subgradient 0 at exactly 0.
Tensor abs_scalar(const Tensor& a);
// [N] -> [N/group], mean over consecutive groups.
Tensor group_mean(const Tensor& v, int group);
// mean_i |v_i - t_i| against constant targets; subgradient 0 at ties.
Tensor abs_diff_mean(const Tensor& v, std::span<const float> targets);

// ---- LSTM cell ----
struct LstmCellWeights {
  Tensor wx;  // [4d, m]   gate order: input, forget, cell, output
  Tensor wh;  // [4d, d]
  Tensor b;   // [4d]
  int hidden_dim = 0;
};
// x: [B,m] or [m]; h,c: [B,d] or [d]. Returns (h', c').
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h,
                                    const Tensor& c,
                                    const LstmCellWeights& w);

// ---- optimizer ----
struct AdamState {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  int64_t step = 0;
  std::vector<std::vector<float>> m;  // first moments, per parameter
  std::vector<std::vector<float>> v;  // second moments
  std::vector<std::string> names;

  void init(const std::vector<Tensor>& params, std::vector<std::string> names,
            float lr);
};

// Bias-corrected Adam update in place from each parameter's .grad().
// Throws on non-finite gradients, naming the parameter.
void adam_step(std::vector<Tensor>& params, AdamState& state);

// ---- gradient checking ----
// A differentiable scalar function in two evaluation modes: `build` assembles
// the loss on the current tape from float leaves (autodiff path), `value`
// evaluates the same function in double precision at an arbitrary point
// (the finite-difference path, kept in double so the quotient is not drowned
// by float32 rounding).
struct DiffFunction {
  std::function<Tensor(const std::vector<Tensor>&)> build;
  std::function<double(const std::vector<std::vector<double>>&)> value;
};

// Max over coordinates of |autodiff - central_difference| /
// (|central_difference| + 1e-8).
float grad_check(const DiffFunction& f, std::vector<Tensor> point, float step);

// Seeded uniform in [-bound, bound]; used for weight init (bound =
// 1/sqrt(fan_in)) and test data. Deterministic across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed);
  float uniform(float lo, float hi);
  double uniform_double(double lo, double hi);
  uint64_t next_u64();
  // Fisher-Yates shuffle with this stream.
  void shuffle(std::vector<int>& idx);

 private:
  uint64_t state_;
};

Tensor random_uniform(std::vector<int> shape, float bound, Rng& rng,
                      bool requires_grad = false);

}  // namespace mfs
