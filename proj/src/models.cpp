#include "mfs/models.hpp"

#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <stdexcept>

namespace mfs {

// ---------------------------------------------------------------------------
// architecture
// ---------------------------------------------------------------------------

CaeArch CaeArch::derive(System system, int grid, int latent_dim) {
  if (grid < 3)
    throw std::invalid_argument("CaeArch: grid " + std::to_string(grid) + " too small");
  if (latent_dim < 1)
    throw std::invalid_argument("CaeArch: latent_dim must be positive");
  CaeArch a;
  a.system = system;
  a.grid = grid;
  a.latent_dim = latent_dim;
  int h = grid;
  a.pad = (h % 2 == 0) ? 1 : 0;
  h += a.pad;
  int ch = 16;
  // Stride-2 stages until the bottleneck is small; always at least one.
  while (a.stage_channels.empty() || h > 12) {
    h = (h - 1) / 2 + 1;
    a.stage_channels.push_back(ch);
    a.stage_sizes.push_back(h);
    ch = std::min(ch * 2, 128);
    if (h <= 2) break;
  }
  a.bottleneck = h;
  return a;
}

// ---------------------------------------------------------------------------
// CaePair
// ---------------------------------------------------------------------------

CaePair CaePair::init(const CaeArch& arch, Rng& rng) {
  CaePair p;
  p.arch = arch;
  const int s = static_cast<int>(arch.stage_channels.size());
  int prev = arch.in_channels();
  for (int i = 0; i < s; ++i) {
    const int out = arch.stage_channels[i];
    const float bound = 1.0f / std::sqrt(static_cast<float>(prev * 9));
    p.enc_kernels.push_back(random_uniform({out, prev, 3, 3}, bound, rng));
    p.enc_biases.push_back(random_uniform({out}, bound, rng));
    prev = out;
  }
  const int flat = arch.flat_dim();
  const float fc_bound = 1.0f / std::sqrt(static_cast<float>(flat));
  p.enc_fc_w = random_uniform({arch.latent_dim, flat}, fc_bound, rng);
  p.enc_fc_b = random_uniform({arch.latent_dim}, fc_bound, rng);

  const float dfc_bound = 1.0f / std::sqrt(static_cast<float>(arch.latent_dim));
  p.dec_fc_w = random_uniform({flat, arch.latent_dim}, dfc_bound, rng);
  p.dec_fc_b = random_uniform({flat}, dfc_bound, rng);
  for (int i = 0; i < s; ++i) {
    const int from = arch.stage_channels[i];
    const int to = i == 0 ? arch.in_channels() : arch.stage_channels[i - 1];
    const float bound = 1.0f / std::sqrt(static_cast<float>(to * 9));
    p.dec_kernels.push_back(random_uniform({from, to, 3, 3}, bound, rng));
    p.dec_biases.push_back(random_uniform({to}, bound, rng));
  }
  return p;
}

std::vector<Tensor> CaePair::encoder_params() const {
  std::vector<Tensor> out;
  for (size_t i = 0; i < enc_kernels.size(); ++i) {
    out.push_back(enc_kernels[i]);
    out.push_back(enc_biases[i]);
  }
  out.push_back(enc_fc_w);
  out.push_back(enc_fc_b);
  return out;
}

std::vector<Tensor> CaePair::decoder_params() const {
  std::vector<Tensor> out;
  out.push_back(dec_fc_w);
  out.push_back(dec_fc_b);
  for (size_t i = 0; i < dec_kernels.size(); ++i) {
    out.push_back(dec_kernels[i]);
    out.push_back(dec_biases[i]);
  }
  return out;
}

std::vector<Tensor> CaePair::all_params() const {
  auto out = encoder_params();
  auto dec = decoder_params();
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

std::vector<std::string> CaePair::encoder_param_names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (size_t i = 0; i < enc_kernels.size(); ++i) {
    out.push_back(prefix + "enc_k" + std::to_string(i));
    out.push_back(prefix + "enc_b" + std::to_string(i));
  }
  out.push_back(prefix + "enc_fc_w");
  out.push_back(prefix + "enc_fc_b");
  return out;
}

std::vector<std::string> CaePair::decoder_param_names(const std::string& prefix) const {
  std::vector<std::string> out;
  out.push_back(prefix + "dec_fc_w");
  out.push_back(prefix + "dec_fc_b");
  for (size_t i = 0; i < dec_kernels.size(); ++i) {
    out.push_back(prefix + "dec_k" + std::to_string(i));
    out.push_back(prefix + "dec_b" + std::to_string(i));
  }
  return out;
}

void CaePair::set_requires_grad(bool on) {
  for (auto& t : all_params()) t.set_requires_grad(on);
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

namespace {

void check_field_shape(const CaeArch& a, const Tensor& x, const char* op) {
  const auto& s = x.shape();
  const bool ok4 = s.size() == 4 && s[1] == a.in_channels() && s[2] == a.grid && s[3] == a.grid;
  const bool ok3 = s.size() == 3 && s[0] == a.in_channels() && s[1] == a.grid && s[2] == a.grid;
  if (!ok3 && !ok4)
    throw std::invalid_argument(std::string(op) + ": input " + shape_str(s) +
                                " does not match architecture [" +
                                std::to_string(a.in_channels()) + "," +
                                std::to_string(a.grid) + "," + std::to_string(a.grid) + "]");
}

}  // namespace

Tensor cae_encode(const CaePair& p, const Tensor& x) {
  const CaeArch& a = p.arch;
  check_field_shape(a, x, "cae_encode");
  const bool batched = x.shape().size() == 4;
  Tensor t = pad2d_edge(x, a.pad, a.pad);
  for (size_t i = 0; i < p.enc_kernels.size(); ++i) {
    t = conv2d(t, p.enc_kernels[i], 2, 1);
    t = add_channel_bias(t, p.enc_biases[i]);
    t = relu(t);
  }
  t = reshape(t, batched ? std::vector<int>{x.shape()[0], a.flat_dim()}
                         : std::vector<int>{a.flat_dim()});
  return linear(t, p.enc_fc_w, p.enc_fc_b);
}

Tensor cae_decode(const CaePair& p, const Tensor& latent) {
  const CaeArch& a = p.arch;
  const auto& s = latent.shape();
  const bool batched = s.size() == 2;
  const int m = batched ? s[1] : s[0];
  if ((s.size() != 1 && s.size() != 2) || m != a.latent_dim)
    throw std::invalid_argument("cae_decode: latent " + shape_str(s) +
                                " does not match latent_dim " +
                                std::to_string(a.latent_dim));
  Tensor t = relu(linear(latent, p.dec_fc_w, p.dec_fc_b));
  const int cl = a.stage_channels.back();
  t = reshape(t, batched
                     ? std::vector<int>{s[0], cl, a.bottleneck, a.bottleneck}
                     : std::vector<int>{cl, a.bottleneck, a.bottleneck});
  for (int i = static_cast<int>(p.dec_kernels.size()) - 1; i >= 0; --i) {
    t = conv2d_transpose(t, p.dec_kernels[i], 2, 1);
    t = add_channel_bias(t, p.dec_biases[i]);
    t = i > 0 ? relu(t) : sigmoid(t);
  }
  return crop2d(t, a.grid, a.grid);
}

Tensor field_to_tensor(const Field& f) {
  return Tensor::from_data({f.channels(), f.height, f.width},
                           std::vector<float>(f.data.begin(), f.data.end()));
}

Field tensor_to_field(const Tensor& t, System system, double domain_x,
                      double domain_y) {
  const auto& s = t.shape();
  if (s.size() != 3)
    throw std::invalid_argument("tensor_to_field: expected [C,H,W], got " + shape_str(s));
  Field f;
  f.system = system;
  f.height = s[1];
  f.width = s[2];
  f.domain_x = domain_x;
  f.domain_y = domain_y;
  if (s[0] != f.channels())
    throw std::invalid_argument("tensor_to_field: " + std::to_string(s[0]) +
                                " channels invalid for " + system_name(system));
  f.data.assign(t.values().begin(), t.values().end());
  return f;
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

LstmParams LstmParams::init(int m, int d, int k_in, int k_out, Rng& rng) {
  if (m < 1 || d < 1 || k_in < 1 || k_out < 1)
    throw std::invalid_argument("LstmParams: dims and window lengths must be positive");
  LstmParams p;
  p.input_dim = m;
  p.hidden_dim = d;
  p.k_in = k_in;
  p.k_out = k_out;
  const float bx = 1.0f / std::sqrt(static_cast<float>(m));
  const float bh = 1.0f / std::sqrt(static_cast<float>(d));
  p.enc.wx = random_uniform({4 * d, m}, bx, rng);
  p.enc.wh = random_uniform({4 * d, d}, bh, rng);
  p.enc.b = random_uniform({4 * d}, bh, rng);
  p.enc.hidden_dim = d;
  p.dec.wx = random_uniform({4 * d, m}, bx, rng);
  p.dec.wh = random_uniform({4 * d, d}, bh, rng);
  p.dec.b = random_uniform({4 * d}, bh, rng);
  p.dec.hidden_dim = d;
  p.head_w = random_uniform({m, d}, bh, rng);
  p.head_b = random_uniform({m}, bh, rng);
  return p;
}

std::vector<Tensor> LstmParams::params() const {
  return {enc.wx, enc.wh, enc.b, dec.wx, dec.wh, dec.b, head_w, head_b};
}

std::vector<std::string> LstmParams::param_names() const {
  return {"lstm_enc_wx", "lstm_enc_wh", "lstm_enc_b",
          "lstm_dec_wx", "lstm_dec_wh", "lstm_dec_b",
          "lstm_head_w", "lstm_head_b"};
}

void LstmParams::set_requires_grad(bool on) {
  for (auto& t : params()) t.set_requires_grad(on);
}

std::vector<Tensor> lstm_forward(const LstmParams& p,
                                 const std::vector<Tensor>& inputs) {
  if (static_cast<int>(inputs.size()) != p.k_in)
    throw std::invalid_argument("lstm_forward: got " + std::to_string(inputs.size()) +
                                " inputs, expected k_in = " + std::to_string(p.k_in));
  const auto& s0 = inputs[0].shape();
  const bool batched = s0.size() == 2;
  const int m = batched ? s0[1] : s0[0];
  if (m != p.input_dim)
    throw std::invalid_argument("lstm_forward: input dim " + std::to_string(m) +
                                " != m = " + std::to_string(p.input_dim));
  for (const auto& t : inputs)
    if (t.shape() != s0)
      throw std::invalid_argument("lstm_forward: inconsistent input shapes");

  const int d = p.hidden_dim;
  Tensor h = batched ? Tensor::zeros({s0[0], d}) : Tensor::zeros({d});
  Tensor c = h;
  for (const auto& x : inputs) {
    auto [h2, c2] = lstm_cell(x, h, c, p.enc);
    h = h2;
    c = c2;
  }
  std::vector<Tensor> out;
  Tensor y = inputs.back();
  for (int step = 0; step < p.k_out; ++step) {
    auto [h2, c2] = lstm_cell(y, h, c, p.dec);
    h = h2;
    c = c2;
    y = linear(h, p.head_w, p.head_b);
    out.push_back(y);
  }
  return out;
}

std::vector<std::vector<float>> recurrent_predict(
    const LstmParams& p, const std::vector<std::vector<float>>& init,
    int horizon) {
  if (horizon < 1)
    throw std::invalid_argument("recurrent_predict: horizon must be >= 1");
  if (static_cast<int>(init.size()) != p.k_in)
    throw std::invalid_argument("recurrent_predict: got " + std::to_string(init.size()) +
                                " init latents, expected k_in = " + std::to_string(p.k_in));
  std::deque<std::vector<float>> last(init.begin(), init.end());
  std::vector<std::vector<float>> out;
  out.reserve(horizon + p.k_out);
  while (static_cast<int>(out.size()) < horizon) {
    std::vector<Tensor> in;
    for (const auto& v : last)
      in.push_back(Tensor::from_data({p.input_dim}, std::vector<float>(v)));
    auto preds = lstm_forward(p, in);
    for (const auto& t : preds) {
      std::vector<float> v(t.values().begin(), t.values().end());
      out.push_back(v);
      last.push_back(std::move(v));
      last.pop_front();
    }
  }
  out.resize(horizon);
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

std::string ckpt_meta_path(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".f32")
    return path.substr(0, path.size() - 4) + ".meta";
  return path + ".meta";
}

void write_payload(const std::string& path, const std::vector<Tensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& t : tensors)
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write failed for " + path);
}

void read_payload(const std::string& path, std::vector<Tensor>& tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  in.seekg(0, std::ios::end);
  int64_t expected = 0;
  for (const auto& t : tensors) expected += t.size();
  const int64_t actual = static_cast<int64_t>(in.tellg()) / static_cast<int64_t>(sizeof(float));
  if (actual != expected)
    throw std::runtime_error(path + ": payload holds " + std::to_string(actual) +
                             " floats but the descriptor requires " +
                             std::to_string(expected));
  in.seekg(0);
  for (auto& t : tensors) {
    in.read(reinterpret_cast<char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) throw std::runtime_error(path + ": short read");
  }
}

void arch_to_kv(const CaeArch& a, const std::string& prefix,
                std::vector<std::pair<std::string, std::string>>& kv) {
  kv.emplace_back(prefix + "system", system_name(a.system));
  kv.emplace_back(prefix + "grid", std::to_string(a.grid));
  kv.emplace_back(prefix + "pad", std::to_string(a.pad));
  kv.emplace_back(prefix + "latent_dim", std::to_string(a.latent_dim));
  std::string chans;
  for (size_t i = 0; i < a.stage_channels.size(); ++i) {
    if (i) chans += ",";
    chans += std::to_string(a.stage_channels[i]);
  }
  kv.emplace_back(prefix + "channels", chans);
}

CaeArch arch_from_kv(const std::map<std::string, std::string>& kv,
                     const std::string& prefix, const std::string& path) {
  auto get = [&](const std::string& key) -> std::string {
    auto it = kv.find(prefix + key);
    if (it == kv.end()) throw std::runtime_error(path + ": missing key '" + prefix + key + "'");
    return it->second;
  };
  CaeArch a = CaeArch::derive(system_from_name(get("system")), std::stoi(get("grid")),
                              std::stoi(get("latent_dim")));
  // The derived descriptor must agree with the stored one.
  std::string chans;
  for (size_t i = 0; i < a.stage_channels.size(); ++i) {
    if (i) chans += ",";
    chans += std::to_string(a.stage_channels[i]);
  }
  if (std::to_string(a.pad) != get("pad") || chans != get("channels"))
    throw std::runtime_error(path + ": architecture descriptor mismatch (stored pad=" +
                             get("pad") + " channels=" + get("channels") +
                             ", derived pad=" + std::to_string(a.pad) +
                             " channels=" + chans + ")");
  return a;
}

}  // namespace

void save_cae(const CaeParams& p, const std::string& path) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("kind", "cae");
  kv.emplace_back("format_version", "1");
  arch_to_kv(p.high.arch, "high_", kv);
  arch_to_kv(p.low.arch, "low_", kv);
  write_kv_file(ckpt_meta_path(path), kv);
  auto tensors = p.high.all_params();
  auto low = p.low.all_params();
  tensors.insert(tensors.end(), low.begin(), low.end());
  write_payload(path, tensors);
}

CaeParams load_cae(const std::string& path) {
  const std::string mpath = ckpt_meta_path(path);
  auto kv = read_kv_file(mpath);
  auto kind = kv.find("kind");
  if (kind == kv.end() || kind->second != "cae")
    throw std::runtime_error(mpath + ": not a cae checkpoint");
  CaeParams p;
  Rng rng(0);
  p.high = CaePair::init(arch_from_kv(kv, "high_", mpath), rng);
  p.low = CaePair::init(arch_from_kv(kv, "low_", mpath), rng);
  auto tensors = p.high.all_params();
  auto low = p.low.all_params();
  tensors.insert(tensors.end(), low.begin(), low.end());
  read_payload(path, tensors);
  return p;
}

void save_lstm(const LstmParams& p, const std::string& path) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("kind", "lstm");
  kv.emplace_back("format_version", "1");
  kv.emplace_back("input_dim", std::to_string(p.input_dim));
  kv.emplace_back("hidden_dim", std::to_string(p.hidden_dim));
  kv.emplace_back("k_in", std::to_string(p.k_in));
  kv.emplace_back("k_out", std::to_string(p.k_out));
  write_kv_file(ckpt_meta_path(path), kv);
  write_payload(path, p.params());
}

LstmParams load_lstm(const std::string& path) {
  const std::string mpath = ckpt_meta_path(path);
  auto kv = read_kv_file(mpath);
  auto get = [&](const std::string& key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(mpath + ": missing key '" + key + "'");
    return it->second;
  };
  if (get("kind") != "lstm") throw std::runtime_error(mpath + ": not an lstm checkpoint");
  Rng rng(0);
  LstmParams p = LstmParams::init(std::stoi(get("input_dim")), std::stoi(get("hidden_dim")),
                                  std::stoi(get("k_in")), std::stoi(get("k_out")), rng);
  auto tensors = p.params();
  read_payload(path, tensors);
  return p;
}

}  // namespace mfs
