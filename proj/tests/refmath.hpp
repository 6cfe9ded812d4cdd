#pragma once

#include <span>
#include <vector>

#include "mfs/models.hpp"

// Double-precision plain-loop reference implementations used as test oracles.
// These share only the *weights* with the library; every forward rule here is
// written independently of the tensor/tape machinery, so they serve both as
// forward-correctness oracles and as the noise-free evaluation path for
// central-difference gradient checks.

namespace refmath {

using Vec = std::vector<double>;

Vec from_floats(std::span<const float> v);

// conv2d: x[ci,h,w], kernel [co,ci,kh,kw], returns [co,ho,wo].
Vec conv2d(const Vec& x, int ci, int h, int w, const Vec& k, int co, int kh,
           int kw, int stride, int pad, int* ho_out, int* wo_out);
// exact adjoint of conv2d: y[co,hi,wi] -> [ci,ho,wo].
Vec conv2d_transpose(const Vec& y, int co, int hi, int wi, const Vec& k,
                     int ci, int kh, int kw, int stride, int pad, int* ho_out,
                     int* wo_out);
// x[batch,in], w[out,in], b[out] (may be empty) -> [batch,out]
Vec linear(const Vec& x, int batch, int in, const Vec& w, int out, const Vec& b);

double sigmoid(double v);
// gate order: input, forget, cell, output; updates h and c in place.
void lstm_cell(const Vec& x, int m, Vec& h, Vec& c, int d, const Vec& wx,
               const Vec& wh, const Vec& b);

// area-weighted total energy; channels 2 = kinetic only, 3 = shallow water.
double energy(const Vec& phys, int channels, int h, int w, double domain,
              double g);

// ---- double replicas of the model forwards (weights copied from the
// float parameters; structure re-derived from the architecture) ----

struct DecoderRef {
  int grid = 0, pad = 0, bottleneck = 0, latent_dim = 0, in_channels = 0;
  std::vector<int> channels;
  Vec fc_w, fc_b;
  std::vector<Vec> kernels, biases;
};
DecoderRef decoder_ref(const mfs::CaePair& p);
// latent [m] -> normalized field [C*grid*grid]
Vec decode(const DecoderRef& d, const Vec& latent);

struct EncoderRef {
  int grid = 0, pad = 0, bottleneck = 0, latent_dim = 0, in_channels = 0;
  std::vector<int> channels;
  std::vector<Vec> kernels, biases;
  Vec fc_w, fc_b;
};
EncoderRef encoder_ref(const mfs::CaePair& p);
Vec encode(const EncoderRef& e, const Vec& field);

struct LstmRef {
  int m = 0, d = 0, k_in = 0, k_out = 0;
  Vec enc_wx, enc_wh, enc_b, dec_wx, dec_wh, dec_b, head_w, head_b;
};
LstmRef lstm_ref(const mfs::LstmParams& p);
// parameter vectors in the same order as LstmParams::params()
std::vector<Vec*> lstm_param_vectors(LstmRef& r);
std::vector<Vec> lstm_forward(const LstmRef& r, const std::vector<Vec>& inputs);

}  // namespace refmath
