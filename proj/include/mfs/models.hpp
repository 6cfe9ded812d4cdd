#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfs/data.hpp"
#include "mfs/tensor.hpp"

// The multi-fidelity convolutional autoencoder (one encoder/decoder pair per
// fidelity, sharing a single latent space) and the seq2seq LSTM surrogate
// that evolves latent states.

namespace mfs {

// Stride-2 conv stack descriptor. Even grids are edge-padded by one on entry
// and cropped on exit so the transpose stack reproduces the exact shape.
struct CaeArch {
  System system = System::burgers;
  int grid = 0;             // original H == W
  int pad = 0;              // 1 when grid is even
  std::vector<int> stage_channels;
  std::vector<int> stage_sizes;  // spatial size after each stage
  int bottleneck = 0;            // spatial size at the flatten boundary
  int latent_dim = 128;

  int in_channels() const { return system == System::burgers ? 2 : 3; }
  int flat_dim() const {
    return stage_channels.empty()
               ? in_channels() * bottleneck * bottleneck
               : stage_channels.back() * bottleneck * bottleneck;
  }
  static CaeArch derive(System system, int grid, int latent_dim);
  bool operator==(const CaeArch&) const = default;
};

// Encoder + decoder weights for one fidelity.
struct CaePair {
  CaeArch arch;
  std::vector<Tensor> enc_kernels;
  std::vector<Tensor> enc_biases;
  Tensor enc_fc_w, enc_fc_b;
  Tensor dec_fc_w, dec_fc_b;
  std::vector<Tensor> dec_kernels;
  std::vector<Tensor> dec_biases;

  static CaePair init(const CaeArch& arch, Rng& rng);
  std::vector<Tensor> encoder_params() const;
  std::vector<Tensor> decoder_params() const;
  std::vector<Tensor> all_params() const;
  std::vector<std::string> encoder_param_names(const std::string& prefix) const;
  std::vector<std::string> decoder_param_names(const std::string& prefix) const;
  void set_requires_grad(bool on);
};

struct CaeParams {
  CaePair high;
  CaePair low;
  int latent_dim() const { return high.arch.latent_dim; }
};

// x: [C,H,W] or [B,C,H,W] normalized field values -> [m] or [B,m].
Tensor cae_encode(const CaePair& p, const Tensor& x);
// latent [m] or [B,m] -> normalized field values (sigmoid output in [0,1]).
Tensor cae_decode(const CaePair& p, const Tensor& latent);

Tensor field_to_tensor(const Field& f);
Field tensor_to_field(const Tensor& t, System system, double domain_x, double domain_y);

struct LstmParams {
  int input_dim = 128;   // m
  int hidden_dim = 256;  // d
  int k_in = 3;
  int k_out = 3;
  LstmCellWeights enc;
  LstmCellWeights dec;
  Tensor head_w, head_b;  // [m,d], [m]

  static LstmParams init(int m, int d, int k_in, int k_out, Rng& rng);
  std::vector<Tensor> params() const;
  std::vector<std::string> param_names() const;
  void set_requires_grad(bool on);
};

// Runs the encoder cell over the k_in inputs, then unrolls the decoder cell
// autoregressively for k_out steps (first decoder input = last encoder
// input, thereafter the previously emitted latent).
// inputs: k_in tensors [B,m] (or [m]); returns k_out tensors of same shape.
std::vector<Tensor> lstm_forward(const LstmParams& p,
                                 const std::vector<Tensor>& inputs);

// Circular forecasting: repeatedly feeds the last k_in produced latents back
// as input; ceil(horizon / k_out) forward calls, truncated to horizon.
std::vector<std::vector<float>> recurrent_predict(
    const LstmParams& p, const std::vector<std::vector<float>>& init,
    int horizon);

// Checkpoints: flat f32 parameter payload + text sidecar carrying the
// architecture descriptor. Loading refuses a payload that does not match its
// descriptor.
void save_cae(const CaeParams& p, const std::string& path);
CaeParams load_cae(const std::string& path);
void save_lstm(const LstmParams& p, const std::string& path);
LstmParams load_lstm(const std::string& path);

}  // namespace mfs
