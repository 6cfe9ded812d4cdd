#include "refmath.hpp"

#include <cmath>
#include <stdexcept>

namespace refmath {

Vec from_floats(std::span<const float> v) { return Vec(v.begin(), v.end()); }

Vec conv2d(const Vec& x, int ci, int h, int w, const Vec& k, int co, int kh,
           int kw, int stride, int pad, int* ho_out, int* wo_out) {
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w + 2 * pad - kw) / stride + 1;
  Vec y(static_cast<size_t>(co) * ho * wo, 0.0);
  for (int oc = 0; oc < co; ++oc)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (int ic = 0; ic < ci; ++ic)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride + ky - pad;
              const int ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x[(static_cast<size_t>(ic) * h + iy) * w + ix] *
                     k[((static_cast<size_t>(oc) * ci + ic) * kh + ky) * kw + kx];
            }
        y[(static_cast<size_t>(oc) * ho + oy) * wo + ox] = acc;
      }
  if (ho_out) *ho_out = ho;
  if (wo_out) *wo_out = wo;
  return y;
}

Vec conv2d_transpose(const Vec& y, int co, int hi, int wi, const Vec& k,
                     int ci, int kh, int kw, int stride, int pad, int* ho_out,
                     int* wo_out) {
  const int ho = (hi - 1) * stride + kh - 2 * pad;
  const int wo = (wi - 1) * stride + kw - 2 * pad;
  Vec x(static_cast<size_t>(ci) * ho * wo, 0.0);
  // scatter: each input value contributes through the kernel footprint
  for (int oc = 0; oc < co; ++oc)
    for (int iy = 0; iy < hi; ++iy)
      for (int ix = 0; ix < wi; ++ix) {
        const double v = y[(static_cast<size_t>(oc) * hi + iy) * wi + ix];
        for (int ic = 0; ic < ci; ++ic)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int ty = iy * stride + ky - pad;
              const int tx = ix * stride + kx - pad;
              if (ty < 0 || ty >= ho || tx < 0 || tx >= wo) continue;
              x[(static_cast<size_t>(ic) * ho + ty) * wo + tx] +=
                  v * k[((static_cast<size_t>(oc) * ci + ic) * kh + ky) * kw + kx];
            }
      }
  if (ho_out) *ho_out = ho;
  if (wo_out) *wo_out = wo;
  return x;
}

Vec linear(const Vec& x, int batch, int in, const Vec& w, int out, const Vec& b) {
  Vec y(static_cast<size_t>(batch) * out, 0.0);
  for (int s = 0; s < batch; ++s)
    for (int o = 0; o < out; ++o) {
      double acc = b.empty() ? 0.0 : b[o];
      for (int i = 0; i < in; ++i)
        acc += x[static_cast<size_t>(s) * in + i] * w[static_cast<size_t>(o) * in + i];
      y[static_cast<size_t>(s) * out + o] = acc;
    }
  return y;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void lstm_cell(const Vec& x, int m, Vec& h, Vec& c, int d, const Vec& wx,
               const Vec& wh, const Vec& b) {
  Vec gates(4 * static_cast<size_t>(d));
  for (int g = 0; g < 4 * d; ++g) {
    double acc = b[g];
    for (int i = 0; i < m; ++i) acc += wx[static_cast<size_t>(g) * m + i] * x[i];
    for (int i = 0; i < d; ++i) acc += wh[static_cast<size_t>(g) * d + i] * h[i];
    gates[g] = acc;
  }
  for (int i = 0; i < d; ++i) {
    const double gi = sigmoid(gates[i]);
    const double gf = sigmoid(gates[d + i]);
    const double gc = std::tanh(gates[2 * d + i]);
    const double go = sigmoid(gates[3 * d + i]);
    c[i] = gf * c[i] + gi * gc;
    h[i] = go * std::tanh(c[i]);
  }
}

double energy(const Vec& phys, int channels, int h, int w, double domain,
              double g) {
  const double aw = domain * domain / (static_cast<double>(h) * w);
  const size_t plane = static_cast<size_t>(h) * w;
  double acc = 0.0;
  if (channels == 2) {
    for (size_t i = 0; i < plane; ++i)
      acc += 0.5 * (phys[i] * phys[i] + phys[plane + i] * phys[plane + i]);
  } else if (channels == 3) {
    for (size_t i = 0; i < plane; ++i) {
      const double hh = phys[i];
      const double u = phys[plane + i];
      const double v = phys[2 * plane + i];
      acc += 0.5 * hh * (u * u + v * v) + 0.5 * g * hh * hh;
    }
  } else {
    throw std::invalid_argument("refmath::energy: bad channel count");
  }
  return acc * aw;
}

// ---------------------------------------------------------------------------
// model replicas
// ---------------------------------------------------------------------------

DecoderRef decoder_ref(const mfs::CaePair& p) {
  DecoderRef d;
  d.grid = p.arch.grid;
  d.pad = p.arch.pad;
  d.bottleneck = p.arch.bottleneck;
  d.latent_dim = p.arch.latent_dim;
  d.in_channels = p.arch.in_channels();
  d.channels = p.arch.stage_channels;
  d.fc_w = from_floats(p.dec_fc_w.values());
  d.fc_b = from_floats(p.dec_fc_b.values());
  for (size_t i = 0; i < p.dec_kernels.size(); ++i) {
    d.kernels.push_back(from_floats(p.dec_kernels[i].values()));
    d.biases.push_back(from_floats(p.dec_biases[i].values()));
  }
  return d;
}

Vec decode(const DecoderRef& d, const Vec& latent) {
  const int stages = static_cast<int>(d.channels.size());
  Vec t = linear(latent, 1, d.latent_dim, d.fc_w,
                 d.channels.back() * d.bottleneck * d.bottleneck, d.fc_b);
  for (double& v : t) v = v > 0.0 ? v : 0.0;
  int h = d.bottleneck, w = d.bottleneck;
  for (int i = stages - 1; i >= 0; --i) {
    const int from = d.channels[i];
    const int to = i == 0 ? d.in_channels : d.channels[i - 1];
    int ho = 0, wo = 0;
    t = conv2d_transpose(t, from, h, w, d.kernels[i], to, 3, 3, 2, 1, &ho, &wo);
    h = ho;
    w = wo;
    const size_t plane = static_cast<size_t>(h) * w;
    for (int c = 0; c < to; ++c)
      for (size_t j = 0; j < plane; ++j) {
        double v = t[c * plane + j] + d.biases[i][c];
        t[c * plane + j] = i > 0 ? (v > 0.0 ? v : 0.0) : sigmoid(v);
      }
  }
  // crop the entry pad
  const int out = d.grid;
  Vec cropped(static_cast<size_t>(d.in_channels) * out * out);
  for (int c = 0; c < d.in_channels; ++c)
    for (int y = 0; y < out; ++y)
      for (int x = 0; x < out; ++x)
        cropped[(static_cast<size_t>(c) * out + y) * out + x] =
            t[(static_cast<size_t>(c) * h + y) * w + x];
  return cropped;
}

EncoderRef encoder_ref(const mfs::CaePair& p) {
  EncoderRef e;
  e.grid = p.arch.grid;
  e.pad = p.arch.pad;
  e.bottleneck = p.arch.bottleneck;
  e.latent_dim = p.arch.latent_dim;
  e.in_channels = p.arch.in_channels();
  e.channels = p.arch.stage_channels;
  for (size_t i = 0; i < p.enc_kernels.size(); ++i) {
    e.kernels.push_back(from_floats(p.enc_kernels[i].values()));
    e.biases.push_back(from_floats(p.enc_biases[i].values()));
  }
  e.fc_w = from_floats(p.enc_fc_w.values());
  e.fc_b = from_floats(p.enc_fc_b.values());
  return e;
}

Vec encode(const EncoderRef& e, const Vec& field) {
  int h = e.grid, w = e.grid;
  Vec t = field;
  if (e.pad > 0) {
    const int ph = h + e.pad, pw = w + e.pad;
    Vec padded(static_cast<size_t>(e.in_channels) * ph * pw);
    for (int c = 0; c < e.in_channels; ++c)
      for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x) {
          const int sy = y < h ? y : h - 1;
          const int sx = x < w ? x : w - 1;
          padded[(static_cast<size_t>(c) * ph + y) * pw + x] =
              t[(static_cast<size_t>(c) * h + sy) * w + sx];
        }
    t = std::move(padded);
    h = ph;
    w = pw;
  }
  int prev = e.in_channels;
  for (size_t i = 0; i < e.channels.size(); ++i) {
    int ho = 0, wo = 0;
    t = conv2d(t, prev, h, w, e.kernels[i], e.channels[i], 3, 3, 2, 1, &ho, &wo);
    h = ho;
    w = wo;
    const size_t plane = static_cast<size_t>(h) * w;
    for (int c = 0; c < e.channels[i]; ++c)
      for (size_t j = 0; j < plane; ++j) {
        double v = t[c * plane + j] + e.biases[i][c];
        t[c * plane + j] = v > 0.0 ? v : 0.0;
      }
    prev = e.channels[i];
  }
  return linear(t, 1, prev * h * w, e.fc_w, e.latent_dim, e.fc_b);
}

LstmRef lstm_ref(const mfs::LstmParams& p) {
  LstmRef r;
  r.m = p.input_dim;
  r.d = p.hidden_dim;
  r.k_in = p.k_in;
  r.k_out = p.k_out;
  r.enc_wx = from_floats(p.enc.wx.values());
  r.enc_wh = from_floats(p.enc.wh.values());
  r.enc_b = from_floats(p.enc.b.values());
  r.dec_wx = from_floats(p.dec.wx.values());
  r.dec_wh = from_floats(p.dec.wh.values());
  r.dec_b = from_floats(p.dec.b.values());
  r.head_w = from_floats(p.head_w.values());
  r.head_b = from_floats(p.head_b.values());
  return r;
}

std::vector<Vec*> lstm_param_vectors(LstmRef& r) {
  return {&r.enc_wx, &r.enc_wh, &r.enc_b, &r.dec_wx,
          &r.dec_wh, &r.dec_b,  &r.head_w, &r.head_b};
}

std::vector<Vec> lstm_forward(const LstmRef& r, const std::vector<Vec>& inputs) {
  Vec h(r.d, 0.0), c(r.d, 0.0);
  for (const Vec& x : inputs) lstm_cell(x, r.m, h, c, r.d, r.enc_wx, r.enc_wh, r.enc_b);
  std::vector<Vec> out;
  Vec y = inputs.back();
  for (int s = 0; s < r.k_out; ++s) {
    lstm_cell(y, r.m, h, c, r.d, r.dec_wx, r.dec_wh, r.dec_b);
    y = linear(h, 1, r.d, r.head_w, r.m, r.head_b);
    out.push_back(y);
  }
  return out;
}

}  // namespace refmath
