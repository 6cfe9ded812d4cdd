#include "mfs/tensor.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <utility>

namespace mfs {

namespace {

bool g_finite_checks = true;

int64_t numel(std::span<const int> shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

void check_finite(std::span<const float> v, const char* op) {
  if (!g_finite_checks) return;
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw std::runtime_error(std::string(op) + ": non-finite value at flat index " +
                               std::to_string(i));
    }
  }
}

struct BlasInit {
  BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit blas_init;

// GEMM with double-precision accumulation: float operands are widened, the
// product runs in double, and the result rounds back once per element. Keeps
// long reductions from drifting at float32 precision.
void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
           const float* a, int lda, const float* b, int ldb, float beta,
           float* c, int ldc) {
  thread_local std::vector<double> da, db, dc;
  const int64_t a_rows = trans_a ? k : m;
  const int64_t b_rows = trans_b ? n : k;
  da.resize(a_rows * lda);
  db.resize(b_rows * ldb);
  dc.resize(static_cast<int64_t>(m) * ldc);
  for (int64_t i = 0; i < a_rows * lda; ++i) da[i] = a[i];
  for (int64_t i = 0; i < b_rows * ldb; ++i) db[i] = b[i];
  if (beta != 0.0f)
    for (int64_t i = 0; i < static_cast<int64_t>(m) * ldc; ++i) dc[i] = c[i];
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, da.data(),
              lda, db.data(), ldb, beta, dc.data(), ldc);
  for (int64_t i = 0; i < static_cast<int64_t>(m) * ldc; ++i)
    c[i] = static_cast<float>(dc[i]);
}

}  // namespace

std::string shape_str(std::span<const int> shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks_enabled() { return g_finite_checks; }

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(std::vector<int> shape, bool requires_grad) {
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(numel(impl_->shape), 0.0f);
  impl_->requires_grad = requires_grad;
  if (requires_grad) impl_->grad.assign(impl_->data.size(), 0.0f);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data,
                         bool requires_grad) {
  if (numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("Tensor::from_data: shape " + shape_str(shape) +
                                " does not match data length " +
                                std::to_string(data.size()));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  if (requires_grad) t.impl_->grad.assign(t.impl_->data.size(), 0.0f);
  return t;
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::scalar(float v) { return from_data({1}, {v}); }

const std::vector<int>& Tensor::shape() const { return impl_->shape; }
int64_t Tensor::size() const { return static_cast<int64_t>(impl_->data.size()); }
bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on && impl_->grad.size() != impl_->data.size())
    impl_->grad.assign(impl_->data.size(), 0.0f);
  if (!on) impl_->grad.clear();
}

std::span<float> Tensor::values() const { return impl_->data; }
std::span<float> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (size() != 1)
    throw std::invalid_argument("Tensor::item: tensor of shape " +
                                shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {
thread_local Tape* t_current_tape = nullptr;
}

Tape::Tape() {
  prev_ = t_current_tape;
  t_current_tape = this;
}

Tape::~Tape() { t_current_tape = prev_; }

void Tape::record(std::function<void()> backward_rule) {
  nodes_.push_back(std::move(backward_rule));
}

Tape* Tape::current() { return t_current_tape; }

void backward(const Tensor& loss, Tape& tape) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss of shape " +
                                shape_str(loss.shape()) + " is not a scalar");
  if (loss.requires_grad()) {
    Tensor seed = loss;
    seed.grad()[0] = 1.0f;
  }
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) (*it)();
  tape.nodes_.clear();
}

// ---------------------------------------------------------------------------
// op helpers
// ---------------------------------------------------------------------------

namespace {

// Creates the output tensor for an op and returns whether to record.
bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current()) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto ov = out.values();
  auto av = a.values(), bv = b.values();
  for (int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] + bv[i];
  check_finite(ov, "add");
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, b, out]() mutable {
      auto og = out.grad();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (size_t i = 0; i < og.size(); ++i) bg[i] += og[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto ov = out.values();
  auto av = a.values(), bv = b.values();
  for (int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] - bv[i];
  check_finite(ov, "sub");
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, b, out]() mutable {
      auto og = out.grad();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (size_t i = 0; i < og.size(); ++i) bg[i] -= og[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto ov = out.values();
  auto av = a.values(), bv = b.values();
  for (int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] * bv[i];
  check_finite(ov, "mul");
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, b, out]() mutable {
      auto og = out.grad();
      auto av = a.values(), bv = b.values();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (size_t i = 0; i < og.size(); ++i) bg[i] += og[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape());
  auto ov = out.values();
  auto av = a.values();
  for (int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] * s;
  check_finite(ov, "scale");
  if (should_record({&a})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, out, s]() mutable {
      auto og = out.grad();
      auto ag = a.grad();
      for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * s;
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  auto ov = out.values();
  auto av = a.values();
  for (int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] > 0.0f ? av[i] : 0.0f;
  if (should_record({&a})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, out]() mutable {
      auto og = out.grad();
      auto av = a.values();
      auto ag = a.grad();
      for (size_t i = 0; i < og.size(); ++i)
        if (av[i] > 0.0f) ag[i] += og[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out(a.shape());
  auto ov = out.values();
  auto av = a.values();
  for (int64_t i = 0; i < a.size(); ++i)
    ov[i] = 1.0f / (1.0f + std::exp(-av[i]));
  check_finite(ov, "sigmoid");
  if (should_record({&a})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, out]() mutable {
      auto og = out.grad();
      auto ov = out.values();
      auto ag = a.grad();
      for (size_t i = 0; i < og.size(); ++i)
        ag[i] += og[i] * ov[i] * (1.0f - ov[i]);
    });
  }
  return out;
}

Tensor tanh(const Tensor& a) {
  Tensor out(a.shape());
  auto ov = out.values();
  auto av = a.values();
  for (int64_t i = 0; i < a.size(); ++i) ov[i] = std::tanh(av[i]);
  check_finite(ov, "tanh");
  if (should_record({&a})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, out]() mutable {
      auto og = out.grad();
      auto ov = out.values();
      auto ag = a.grad();
      for (size_t i = 0; i < og.size(); ++i)
        ag[i] += og[i] * (1.0f - ov[i] * ov[i]);
    });
  }
  return out;
}

Tensor clamp(const Tensor& a, float lo, float hi) {
  Tensor out(a.shape());
  auto ov = out.values();
  auto av = a.values();
  for (int64_t i = 0; i < a.size(); ++i)
    ov[i] = av[i] < lo ? lo : (av[i] > hi ? hi : av[i]);
  if (should_record({&a})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, out, lo, hi]() mutable {
      auto og = out.grad();
      auto av = a.values();
      auto ag = a.grad();
      for (size_t i = 0; i < og.size(); ++i)
        if (av[i] >= lo && av[i] <= hi) ag[i] += og[i];
    });
  }
  return out;
}

Tensor channel_affine(const Tensor& x, std::span<const float> scl,
                      std::span<const float> shift) {
  const auto& s = x.shape();
  if (s.size() != 3 && s.size() != 4)
    throw std::invalid_argument("channel_affine: expected [C,H,W] or [N,C,H,W], got " +
                                shape_str(s));
  const int c = s.size() == 3 ? s[0] : s[1];
  if (static_cast<int>(scl.size()) != c || static_cast<int>(shift.size()) != c)
    throw std::invalid_argument("channel_affine: " + std::to_string(scl.size()) +
                                " scales for " + std::to_string(c) + " channels");
  const int64_t plane = static_cast<int64_t>(s[s.size() - 2]) * s[s.size() - 1];
  const int64_t n = x.size() / (plane * c);
  Tensor out(s);
  auto ov = out.values();
  auto xv = x.values();
  std::vector<float> scale_copy(scl.begin(), scl.end());
  for (int64_t b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const int64_t off = (b * c + ch) * plane;
      for (int64_t i = 0; i < plane; ++i)
        ov[off + i] = xv[off + i] * scl[ch] + shift[ch];
    }
  check_finite(ov, "channel_affine");
  if (should_record({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out, scale_copy, c, plane, n]() mutable {
      auto og = out.grad();
      auto xg = x.grad();
      for (int64_t b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
          const int64_t off = (b * c + ch) * plane;
          for (int64_t i = 0; i < plane; ++i)
            xg[off + i] += og[off + i] * scale_copy[ch];
        }
    });
  }
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  const auto& s = x.shape();
  if (s.size() != 3 && s.size() != 4)
    throw std::invalid_argument("add_channel_bias: expected [C,H,W] or [N,C,H,W], got " +
                                shape_str(s));
  const int c = s.size() == 3 ? s[0] : s[1];
  if (b.size() != c)
    throw std::invalid_argument("add_channel_bias: bias " + shape_str(b.shape()) +
                                " for " + std::to_string(c) + " channels");
  const int64_t plane = static_cast<int64_t>(s[s.size() - 2]) * s[s.size() - 1];
  const int64_t n = x.size() / (plane * c);
  Tensor out(s);
  auto ov = out.values();
  auto xv = x.values();
  auto bv = b.values();
  for (int64_t bi = 0; bi < n; ++bi)
    for (int ch = 0; ch < c; ++ch) {
      const int64_t off = (bi * c + ch) * plane;
      for (int64_t i = 0; i < plane; ++i) ov[off + i] = xv[off + i] + bv[ch];
    }
  check_finite(ov, "add_channel_bias");
  if (should_record({&x, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, b, out, c, plane, n]() mutable {
      auto og = out.grad();
      if (x.requires_grad()) {
        auto xg = x.grad();
        for (size_t i = 0; i < og.size(); ++i) xg[i] += og[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (int64_t bi = 0; bi < n; ++bi)
          for (int ch = 0; ch < c; ++ch) {
            const int64_t off = (bi * c + ch) * plane;
            double acc = 0.0;
            for (int64_t i = 0; i < plane; ++i) acc += og[off + i];
            bg[ch] += static_cast<float>(acc);
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto& ws = w.shape();
  if (ws.size() != 2)
    throw std::invalid_argument("linear: weight must be [out,in], got " +
                                shape_str(ws));
  const int out_dim = ws[0], in_dim = ws[1];
  const bool vec = x.shape().size() == 1;
  const int batch = vec ? 1 : x.shape()[0];
  const int x_in = vec ? x.shape()[0] : x.shape()[1];
  if (x_in != in_dim)
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) +
                                " incompatible with weight " + shape_str(ws));
  if (b.defined() && b.size() != out_dim)
    throw std::invalid_argument("linear: bias " + shape_str(b.shape()) +
                                " incompatible with weight " + shape_str(ws));

  Tensor out(vec ? std::vector<int>{out_dim}
                 : std::vector<int>{batch, out_dim});
  // y[B,out] = x[B,in] * w[out,in]^T
  sgemm(false, true, batch, out_dim, in_dim, 1.0f, x.values().data(), in_dim,
        w.values().data(), in_dim, 0.0f, out.values().data(), out_dim);
  if (b.defined()) {
    auto ov = out.values();
    auto bv = b.values();
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < out_dim; ++j) ov[i * out_dim + j] += bv[j];
  }
  check_finite(out.values(), "linear");

  if (should_record({&x, &w, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, w, b, out, batch, in_dim, out_dim]() mutable {
      auto og = out.grad();
      if (x.requires_grad()) {
        // gx[B,in] += gy[B,out] * w[out,in]
        sgemm(false, false, batch, in_dim, out_dim, 1.0f, og.data(), out_dim,
              w.values().data(), in_dim, 1.0f, x.grad().data(), in_dim);
      }
      if (w.requires_grad()) {
        // gw[out,in] += gy[B,out]^T * x[B,in]
        sgemm(true, false, out_dim, in_dim, batch, 1.0f, og.data(), out_dim,
              x.values().data(), in_dim, 1.0f, w.grad().data(), in_dim);
      }
      if (b.defined() && b.requires_grad()) {
        auto bg = b.grad();
        for (int i = 0; i < batch; ++i)
          for (int j = 0; j < out_dim; ++j) bg[j] += og[i * out_dim + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d / conv2d_transpose via im2col + GEMM
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int n, c_in, h, w;          // input
  int c_out, kh, kw;          // kernel
  int stride, pad;
  int ho, wo;                 // output spatial
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, int stride, int padding,
                   const char* op) {
  const auto& xs = x.shape();
  const auto& ks = k.shape();
  if ((xs.size() != 3 && xs.size() != 4) || ks.size() != 4)
    throw std::invalid_argument(std::string(op) + ": expected input [C,H,W] or " +
                                "[N,C,H,W] and kernel [Co,Ci,kh,kw], got input " +
                                shape_str(xs) + ", kernel " + shape_str(ks));
  if (stride < 1) throw std::invalid_argument(std::string(op) + ": stride must be positive");
  if (padding < 0) throw std::invalid_argument(std::string(op) + ": negative padding");
  ConvDims d;
  d.n = xs.size() == 4 ? xs[0] : 1;
  d.c_in = xs[xs.size() - 3];
  d.h = xs[xs.size() - 2];
  d.w = xs[xs.size() - 1];
  d.c_out = ks[0];
  d.kh = ks[2];
  d.kw = ks[3];
  d.stride = stride;
  d.pad = padding;
  return d;
}

// cols[(C*kh*kw) x (ho*wo)] from img[C,h,w]
void im2col(const float* img, int c, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, float* cols) {
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        float* row = cols + ((static_cast<int64_t>(ch) * kh + ky) * kw + kx) *
                                (static_cast<int64_t>(ho) * wo);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            row[oy * wo + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w)
                    ? img[(static_cast<int64_t>(ch) * h + iy) * w + ix]
                    : 0.0f;
          }
        }
      }
}

// Scatter-add of cols back into img[C,h,w]; adjoint of im2col.
void col2im_add(const float* cols, int c, int h, int w, int kh, int kw,
                int stride, int pad, int ho, int wo, float* img) {
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const float* row = cols + ((static_cast<int64_t>(ch) * kh + ky) * kw + kx) *
                                      (static_cast<int64_t>(ho) * wo);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= w) continue;
            img[(static_cast<int64_t>(ch) * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int padding) {
  ConvDims d = conv_dims(x, k, stride, padding, "conv2d");
  if (k.shape()[1] != d.c_in)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(d.c_in) +
                                " do not match kernel (input " + shape_str(x.shape()) +
                                ", kernel " + shape_str(k.shape()) + ")");
  if (d.h + 2 * d.pad < d.kh || d.w + 2 * d.pad < d.kw)
    throw std::invalid_argument("conv2d: kernel " + shape_str(k.shape()) +
                                " larger than padded input " + shape_str(x.shape()));
  d.ho = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
  d.wo = (d.w + 2 * d.pad - d.kw) / d.stride + 1;

  std::vector<int> out_shape = x.shape().size() == 4
                                   ? std::vector<int>{d.n, d.c_out, d.ho, d.wo}
                                   : std::vector<int>{d.c_out, d.ho, d.wo};
  Tensor out(out_shape);
  const int ckk = d.c_in * d.kh * d.kw;
  const int64_t spatial = static_cast<int64_t>(d.ho) * d.wo;
  std::vector<float> cols(static_cast<int64_t>(ckk) * spatial);
  const int64_t in_sz = static_cast<int64_t>(d.c_in) * d.h * d.w;
  const int64_t out_sz = static_cast<int64_t>(d.c_out) * spatial;
  for (int b = 0; b < d.n; ++b) {
    im2col(x.values().data() + b * in_sz, d.c_in, d.h, d.w, d.kh, d.kw,
           d.stride, d.pad, d.ho, d.wo, cols.data());
    sgemm(false, false, d.c_out, static_cast<int>(spatial), ckk, 1.0f,
          k.values().data(), ckk, cols.data(), static_cast<int>(spatial), 0.0f,
          out.values().data() + b * out_sz, static_cast<int>(spatial));
  }
  check_finite(out.values(), "conv2d");

  if (should_record({&x, &k})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, k, out, d, ckk, spatial, in_sz, out_sz]() mutable {
      std::vector<float> cols(static_cast<int64_t>(ckk) * spatial);
      for (int b = 0; b < d.n; ++b) {
        const float* gy = out.grad().data() + b * out_sz;
        if (x.requires_grad()) {
          // grad_cols = K^T * gy, then scatter back to the input image
          std::vector<float> gcols(static_cast<int64_t>(ckk) * spatial);
          sgemm(true, false, ckk, static_cast<int>(spatial), d.c_out, 1.0f,
                k.values().data(), ckk, gy, static_cast<int>(spatial), 0.0f,
                gcols.data(), static_cast<int>(spatial));
          col2im_add(gcols.data(), d.c_in, d.h, d.w, d.kh, d.kw, d.stride,
                     d.pad, d.ho, d.wo, x.grad().data() + b * in_sz);
        }
        if (k.requires_grad()) {
          im2col(x.values().data() + b * in_sz, d.c_in, d.h, d.w, d.kh, d.kw,
                 d.stride, d.pad, d.ho, d.wo, cols.data());
          // gK += gy * cols^T
          sgemm(false, true, d.c_out, ckk, static_cast<int>(spatial), 1.0f, gy,
                static_cast<int>(spatial), cols.data(),
                static_cast<int>(spatial), 1.0f, k.grad().data(), ckk);
        }
      }
    });
  }
  return out;
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& k, int stride,
                        int padding) {
  // x plays the role of a conv2d *output*: channels must equal kernel C_out.
  ConvDims d = conv_dims(x, k, stride, padding, "conv2d_transpose");
  const int c_from = d.c_in;  // channels of x
  if (k.shape()[0] != c_from)
    throw std::invalid_argument("conv2d_transpose: input channels " +
                                std::to_string(c_from) + " do not match kernel C_out (input " +
                                shape_str(x.shape()) + ", kernel " + shape_str(k.shape()) + ")");
  const int c_to = k.shape()[1];
  const int hi = d.h, wi = d.w;
  const int ho = (hi - 1) * stride + d.kh - 2 * padding;
  const int wo = (wi - 1) * stride + d.kw - 2 * padding;
  if (ho < 1 || wo < 1)
    throw std::invalid_argument("conv2d_transpose: output would be empty for input " +
                                shape_str(x.shape()) + ", kernel " + shape_str(k.shape()));

  std::vector<int> out_shape = x.shape().size() == 4
                                   ? std::vector<int>{d.n, c_to, ho, wo}
                                   : std::vector<int>{c_to, ho, wo};
  Tensor out(out_shape);
  const int ckk = c_to * d.kh * d.kw;
  const int64_t spatial = static_cast<int64_t>(hi) * wi;
  const int64_t in_sz = static_cast<int64_t>(c_from) * spatial;
  const int64_t out_sz = static_cast<int64_t>(c_to) * ho * wo;
  std::vector<float> cols(static_cast<int64_t>(ckk) * spatial);
  for (int b = 0; b < d.n; ++b) {
    // cols = K^T * x, then the adjoint of im2col places them in the output
    sgemm(true, false, ckk, static_cast<int>(spatial), c_from, 1.0f,
          k.values().data(), ckk, x.values().data() + b * in_sz,
          static_cast<int>(spatial), 0.0f, cols.data(),
          static_cast<int>(spatial));
    std::memset(out.values().data() + b * out_sz, 0, out_sz * sizeof(float));
    col2im_add(cols.data(), c_to, ho, wo, d.kh, d.kw, stride, padding, hi, wi,
               out.values().data() + b * out_sz);
  }
  check_finite(out.values(), "conv2d_transpose");

  if (should_record({&x, &k})) {
    out.set_requires_grad(true);
    const int n = d.n, kh = d.kh, kw = d.kw;
    Tape::current()->record([x, k, out, n, c_from, c_to, hi, wi, ho, wo, kh, kw,
                             stride, padding, ckk, spatial, in_sz, out_sz]() mutable {
      std::vector<float> gcols(static_cast<int64_t>(ckk) * spatial);
      for (int b = 0; b < n; ++b) {
        const float* gout = out.grad().data() + b * out_sz;
        im2col(gout, c_to, ho, wo, kh, kw, stride, padding, hi, wi,
               gcols.data());
        if (x.requires_grad()) {
          // gx += K * im2col(g_out)
          sgemm(false, false, c_from, static_cast<int>(spatial), ckk, 1.0f,
                k.values().data(), ckk, gcols.data(),
                static_cast<int>(spatial), 1.0f, x.grad().data() + b * in_sz,
                static_cast<int>(spatial));
        }
        if (k.requires_grad()) {
          // gK += x * im2col(g_out)^T
          sgemm(false, true, c_from, ckk, static_cast<int>(spatial), 1.0f,
                x.values().data() + b * in_sz, static_cast<int>(spatial),
                gcols.data(), static_cast<int>(spatial), 1.0f, k.grad().data(),
                ckk);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (numel(shape) != x.size())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " +
                                shape_str(shape) + " changes element count");
  Tensor out = Tensor::from_data(std::move(shape),
                                 std::vector<float>(x.values().begin(), x.values().end()));
  if (should_record({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out]() mutable {
      auto og = out.grad();
      auto xg = x.grad();
      for (size_t i = 0; i < og.size(); ++i) xg[i] += og[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  const auto& s = x.shape();
  if (s.size() != 2)
    throw std::invalid_argument("slice_cols: expected [B,N], got " + shape_str(s));
  if (start < 0 || len < 1 || start + len > s[1])
    throw std::invalid_argument("slice_cols: range [" + std::to_string(start) +
                                "," + std::to_string(start + len) +
                                ") outside " + shape_str(s));
  const int b = s[0], n = s[1];
  Tensor out({b, len});
  auto ov = out.values();
  auto xv = x.values();
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < len; ++j) ov[i * len + j] = xv[i * n + start + j];
  if (should_record({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out, b, n, start, len]() mutable {
      auto og = out.grad();
      auto xg = x.grad();
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < len; ++j) xg[i * n + start + j] += og[i * len + j];
    });
  }
  return out;
}

namespace {

struct SpatialDims {
  int lead;  // product of all leading dims
  int h, w;
};

SpatialDims spatial_dims(const Tensor& x, const char* op) {
  const auto& s = x.shape();
  if (s.size() < 2)
    throw std::invalid_argument(std::string(op) + ": expected trailing [H,W] dims, got " +
                                shape_str(s));
  SpatialDims d;
  d.h = s[s.size() - 2];
  d.w = s[s.size() - 1];
  d.lead = 1;
  for (size_t i = 0; i + 2 < s.size(); ++i) d.lead *= s[i];
  return d;
}

}  // namespace

Tensor pad2d_edge(const Tensor& x, int pad_h, int pad_w) {
  if (pad_h < 0 || pad_w < 0)
    throw std::invalid_argument("pad2d_edge: negative pad");
  if (pad_h == 0 && pad_w == 0) return x;
  SpatialDims d = spatial_dims(x, "pad2d_edge");
  const int ho = d.h + pad_h, wo = d.w + pad_w;
  std::vector<int> out_shape = x.shape();
  out_shape[out_shape.size() - 2] = ho;
  out_shape[out_shape.size() - 1] = wo;
  Tensor out(out_shape);
  auto ov = out.values();
  auto xv = x.values();
  for (int l = 0; l < d.lead; ++l)
    for (int y = 0; y < ho; ++y) {
      const int sy = y < d.h ? y : d.h - 1;
      for (int xo = 0; xo < wo; ++xo) {
        const int sx = xo < d.w ? xo : d.w - 1;
        ov[(static_cast<int64_t>(l) * ho + y) * wo + xo] =
            xv[(static_cast<int64_t>(l) * d.h + sy) * d.w + sx];
      }
    }
  if (should_record({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out, d, ho, wo]() mutable {
      auto og = out.grad();
      auto xg = x.grad();
      for (int l = 0; l < d.lead; ++l)
        for (int y = 0; y < ho; ++y) {
          const int sy = y < d.h ? y : d.h - 1;
          for (int xo = 0; xo < wo; ++xo) {
            const int sx = xo < d.w ? xo : d.w - 1;
            xg[(static_cast<int64_t>(l) * d.h + sy) * d.w + sx] +=
                og[(static_cast<int64_t>(l) * ho + y) * wo + xo];
          }
        }
    });
  }
  return out;
}

Tensor crop2d(const Tensor& x, int out_h, int out_w) {
  SpatialDims d = spatial_dims(x, "crop2d");
  if (out_h > d.h || out_w > d.w || out_h < 1 || out_w < 1)
    throw std::invalid_argument("crop2d: target " + std::to_string(out_h) + "x" +
                                std::to_string(out_w) + " outside " +
                                shape_str(x.shape()));
  if (out_h == d.h && out_w == d.w) return x;
  std::vector<int> out_shape = x.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape[out_shape.size() - 1] = out_w;
  Tensor out(out_shape);
  auto ov = out.values();
  auto xv = x.values();
  for (int l = 0; l < d.lead; ++l)
    for (int y = 0; y < out_h; ++y)
      for (int xo = 0; xo < out_w; ++xo)
        ov[(static_cast<int64_t>(l) * out_h + y) * out_w + xo] =
            xv[(static_cast<int64_t>(l) * d.h + y) * d.w + xo];
  if (should_record({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out, d, out_h, out_w]() mutable {
      auto og = out.grad();
      auto xg = x.grad();
      for (int l = 0; l < d.lead; ++l)
        for (int y = 0; y < out_h; ++y)
          for (int xo = 0; xo < out_w; ++xo)
            xg[(static_cast<int64_t>(l) * d.h + y) * d.w + xo] +=
                og[(static_cast<int64_t>(l) * out_h + y) * out_w + xo];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.values()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  check_finite(out.values(), "sum");
  if (should_record({&a})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, out]() mutable {
      const float g = out.grad()[0];
      auto ag = a.grad();
      for (size_t i = 0; i < ag.size(); ++i) ag[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = Tensor::scalar(static_cast<float>(acc * inv));
  check_finite(out.values(), "mean");
  if (should_record({&a})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, out, inv]() mutable {
      const float g = out.grad()[0] * static_cast<float>(inv);
      auto ag = a.grad();
      for (size_t i = 0; i < ag.size(); ++i) ag[i] += g;
    });
  }
  return out;
}

Tensor sum_sq_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sum_sq_diff");
  double acc = 0.0;
  auto av = a.values(), bv = b.values();
  for (int64_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(av[i]) - bv[i];
    acc += diff * diff;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  check_finite(out.values(), "sum_sq_diff");
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, b, out]() mutable {
      const float g = out.grad()[0];
      auto av = a.values(), bv = b.values();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (int64_t i = 0; i < a.size(); ++i)
          ag[i] += 2.0f * g * (av[i] - bv[i]);
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (int64_t i = 0; i < b.size(); ++i)
          bg[i] -= 2.0f * g * (av[i] - bv[i]);
      }
    });
  }
  return out;
}

Tensor sum_sq_diff_masked(const Tensor& a, const Tensor& b,
                          std::span<const uint8_t> mask) {
  require_same_shape(a, b, "sum_sq_diff_masked");
  if (a.shape().empty() || a.shape()[0] != static_cast<int>(mask.size()))
    throw std::invalid_argument("sum_sq_diff_masked: mask of length " +
                                std::to_string(mask.size()) + " for batch " +
                                shape_str(a.shape()));
  const int batch = a.shape()[0];
  const int64_t per = a.size() / batch;
  double acc = 0.0;
  auto av = a.values(), bv = b.values();
  for (int s = 0; s < batch; ++s) {
    if (!mask[s]) continue;
    for (int64_t i = s * per; i < (s + 1) * per; ++i) {
      const double diff = static_cast<double>(av[i]) - bv[i];
      acc += diff * diff;
    }
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  check_finite(out.values(), "sum_sq_diff_masked");
  if (should_record({&a})) {
    std::vector<uint8_t> m(mask.begin(), mask.end());
    out.set_requires_grad(true);
    Tape::current()->record([a, b, out, m, batch, per]() mutable {
      const float g = out.grad()[0];
      auto av = a.values(), bv = b.values();
      auto ag = a.grad();
      for (int s = 0; s < batch; ++s) {
        if (!m[s]) continue;
        for (int64_t i = s * per; i < (s + 1) * per; ++i)
          ag[i] += 2.0f * g * (av[i] - bv[i]);
      }
    });
  }
  return out;
}

Tensor abs_scalar(const Tensor& a) {
  if (a.size() != 1)
    throw std::invalid_argument("abs_scalar: tensor of shape " +
                                shape_str(a.shape()) + " is not a scalar");
  const float v = a.values()[0];
  Tensor out = Tensor::scalar(std::abs(v));
  if (should_record({&a})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, out, v]() mutable {
      const float sign = v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f);
      a.grad()[0] += out.grad()[0] * sign;
    });
  }
  return out;
}

Tensor group_mean(const Tensor& v, int group) {
  if (v.shape().size() != 1 || group < 1 || v.size() % group != 0)
    throw std::invalid_argument("group_mean: cannot split " + shape_str(v.shape()) +
                                " into groups of " + std::to_string(group));
  const int g = static_cast<int>(v.size()) / group;
  Tensor out({g});
  auto ov = out.values();
  auto vv = v.values();
  for (int i = 0; i < g; ++i) {
    double acc = 0.0;
    for (int j = 0; j < group; ++j) acc += vv[i * group + j];
    ov[i] = static_cast<float>(acc / group);
  }
  if (should_record({&v})) {
    out.set_requires_grad(true);
    Tape::current()->record([v, out, g, group]() mutable {
      auto og = out.grad();
      auto vg = v.grad();
      const float inv = 1.0f / static_cast<float>(group);
      for (int i = 0; i < g; ++i)
        for (int j = 0; j < group; ++j) vg[i * group + j] += og[i] * inv;
    });
  }
  return out;
}

Tensor abs_diff_mean(const Tensor& v, std::span<const float> targets) {
  if (v.shape().size() != 1 || v.size() != static_cast<int64_t>(targets.size()))
    throw std::invalid_argument("abs_diff_mean: " + shape_str(v.shape()) + " vs " +
                                std::to_string(targets.size()) + " targets");
  double acc = 0.0;
  auto vv = v.values();
  for (int64_t i = 0; i < v.size(); ++i)
    acc += std::abs(static_cast<double>(vv[i]) - targets[i]);
  Tensor out = Tensor::scalar(static_cast<float>(acc / v.size()));
  check_finite(out.values(), "abs_diff_mean");
  if (should_record({&v})) {
    std::vector<float> t(targets.begin(), targets.end());
    out.set_requires_grad(true);
    Tape::current()->record([v, out, t]() mutable {
      const float g = out.grad()[0] / static_cast<float>(v.size());
      auto vv = v.values();
      auto vg = v.grad();
      for (int64_t i = 0; i < v.size(); ++i) {
        const float d = vv[i] - t[i];
        vg[i] += g * (d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h,
                                    const Tensor& c,
                                    const LstmCellWeights& w) {
  const int d = w.hidden_dim;
  if (w.wx.shape().size() != 2 || w.wx.shape()[0] != 4 * d ||
      w.wh.shape().size() != 2 || w.wh.shape()[0] != 4 * d ||
      w.wh.shape()[1] != d || w.b.size() != 4 * d)
    throw std::invalid_argument("lstm_cell: weight shapes wx " + shape_str(w.wx.shape()) +
                                ", wh " + shape_str(w.wh.shape()) + ", b " +
                                shape_str(w.b.shape()) + " inconsistent with hidden size " +
                                std::to_string(d));
  const bool vec = x.shape().size() == 1;
  Tensor xb = vec ? reshape(x, {1, x.shape()[0]}) : x;
  Tensor hb = vec ? reshape(h, {1, h.shape()[0]}) : h;
  Tensor cb = vec ? reshape(c, {1, c.shape()[0]}) : c;

  Tensor gates = add(linear(xb, w.wx, w.b), linear(hb, w.wh, Tensor()));
  Tensor gi = sigmoid(slice_cols(gates, 0, d));
  Tensor gf = sigmoid(slice_cols(gates, d, d));
  Tensor gc = tanh(slice_cols(gates, 2 * d, d));
  Tensor go = sigmoid(slice_cols(gates, 3 * d, d));
  Tensor c_next = add(mul(gf, cb), mul(gi, gc));
  Tensor h_next = mul(go, tanh(c_next));
  if (vec) {
    h_next = reshape(h_next, {d});
    c_next = reshape(c_next, {d});
  }
  return {h_next, c_next};
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void AdamState::init(const std::vector<Tensor>& params,
                     std::vector<std::string> param_names, float learning_rate) {
  lr = learning_rate;
  step = 0;
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(p.size(), 0.0f);
    v.emplace_back(p.size(), 0.0f);
  }
  names = std::move(param_names);
  if (names.size() != params.size())
    throw std::invalid_argument("AdamState::init: " + std::to_string(names.size()) +
                                " names for " + std::to_string(params.size()) +
                                " params");
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.m.size())
    throw std::invalid_argument("adam_step: state holds " +
                                std::to_string(state.m.size()) + " moments for " +
                                std::to_string(params.size()) + " params");
  state.step += 1;
  const float bc1 = 1.0f - std::pow(state.beta1, static_cast<float>(state.step));
  const float bc2 = 1.0f - std::pow(state.beta2, static_cast<float>(state.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto g = params[pi].grad();
    auto pv = params[pi].values();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw std::runtime_error("adam_step: non-finite gradient in parameter '" +
                                 state.names[pi] + "' at flat index " +
                                 std::to_string(i));
      m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * g[i] * g[i];
      const float mhat = m[i] / bc1;
      const float vhat = v[i] / bc2;
      pv[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// gradient check
// ---------------------------------------------------------------------------

float grad_check(const DiffFunction& f, std::vector<Tensor> point, float step) {
  for (auto& t : point) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    Tensor loss = f.build(point);
    if (loss.size() != 1)
      throw std::invalid_argument("grad_check: function did not produce a scalar");
    backward(loss, tape);
  }
  std::vector<std::vector<double>> p;
  for (const auto& t : point)
    p.emplace_back(t.values().begin(), t.values().end());

  double max_rel = 0.0;
  for (size_t ti = 0; ti < point.size(); ++ti) {
    for (size_t i = 0; i < p[ti].size(); ++i) {
      const double saved = p[ti][i];
      p[ti][i] = saved + step;
      const double f_plus = f.value(p);
      p[ti][i] = saved - step;
      const double f_minus = f.value(p);
      p[ti][i] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * static_cast<double>(step));
      const double ad = point[ti].grad()[i];
      const double rel = std::abs(ad - fd) / (std::abs(fd) + 1e-8);
      if (rel > max_rel) max_rel = rel;
    }
  }
  return static_cast<float>(max_rel);
}

// ---------------------------------------------------------------------------
// RNG
// ---------------------------------------------------------------------------

Rng::Rng(uint64_t seed) : state_(seed) {}

uint64_t Rng::next_u64() {
  // splitmix64
  state_ += 0x9E3779B97F4A7C15ull;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

float Rng::uniform(float lo, float hi) {
  const float u = static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
  return lo + (hi - lo) * u;
}

double Rng::uniform_double(double lo, double hi) {
  const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

void Rng::shuffle(std::vector<int>& idx) {
  for (size_t i = idx.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(next_u64() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

Tensor random_uniform(std::vector<int> shape, float bound, Rng& rng,
                      bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (float& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace mfs
