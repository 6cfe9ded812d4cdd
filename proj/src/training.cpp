#include "mfs/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "mfs/eval.hpp"

namespace mfs {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_seconds(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_loss_finite(float loss, const char* op, int epoch) {
  if (!std::isfinite(loss))
    throw std::runtime_error(std::string(op) + ": non-finite loss in epoch " +
                             std::to_string(epoch));
}

struct SnapshotSet {
  int channels = 0, grid = 0;
  std::vector<std::vector<float>> fields;  // normalized, flattened [C*H*W]
};

SnapshotSet normalized_snapshots(const DatasetManifest& m, Split split,
                                 Fidelity fid) {
  SnapshotSet out;
  for (const auto& t : load_split(m, split, fid)) {
    for (const Field& f : t.fields) {
      Field n = normalize(f, m.norm);
      if (out.fields.empty()) {
        out.channels = n.channels();
        out.grid = n.height;
      }
      out.fields.push_back(std::move(n.data));
    }
  }
  return out;
}

Tensor batch_tensor(const SnapshotSet& s, const std::vector<int>& idx,
                    size_t begin, size_t count) {
  const int64_t per = static_cast<int64_t>(s.channels) * s.grid * s.grid;
  std::vector<float> data(count * per);
  for (size_t i = 0; i < count; ++i)
    std::copy(s.fields[idx[begin + i]].begin(), s.fields[idx[begin + i]].end(),
              data.begin() + static_cast<int64_t>(i) * per);
  return Tensor::from_data({static_cast<int>(count), s.channels, s.grid, s.grid},
                           std::move(data));
}

// Per-element reconstruction MSE, evaluated in chunks.
double recon_mse(const CaePair& pair, const SnapshotSet& s) {
  if (s.fields.empty()) return 0.0;
  const int64_t per = static_cast<int64_t>(s.channels) * s.grid * s.grid;
  double acc = 0.0;
  const size_t chunk = 32;
  std::vector<int> idx(s.fields.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  for (size_t b = 0; b < s.fields.size(); b += chunk) {
    const size_t n = std::min(chunk, s.fields.size() - b);
    Tensor x = batch_tensor(s, idx, b, n);
    Tensor r = cae_decode(pair, cae_encode(pair, x));
    auto rv = r.values();
    auto xv = x.values();
    for (size_t i = 0; i < rv.size(); ++i) {
      const double d = static_cast<double>(rv[i]) - xv[i];
      acc += d * d;
    }
  }
  return acc / (static_cast<double>(s.fields.size()) * per);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (lr <= 0.0f) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
  if (k_in < 1 || k_out < 1)
    throw std::invalid_argument("TrainConfig: k_in and k_out must be >= 1");
  constraints.validate();
}

double TrainReport::mean_epoch_seconds() const {
  if (epochs.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& e : epochs) acc += e.seconds;
  return acc / static_cast<double>(epochs.size());
}

void save_report(const TrainReport& r, const std::string& dir,
                 const std::string& name) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("kind", r.kind);
  kv.emplace_back("seed", std::to_string(r.seed));
  kv.emplace_back("epochs", std::to_string(r.epochs.size()));
  kv.emplace_back("final_val_metric", std::to_string(r.final_val_metric));
  kv.emplace_back("final_val_aux", std::to_string(r.final_val_aux));
  write_kv_file((fs::path(dir) / (name + "_report.txt")).string(), kv);

  std::ofstream loss((fs::path(dir) / (name + "_loss.csv")).string(), std::ios::trunc);
  loss << "epoch,l_data,l_energy,l_flow,total,aux,flow_skipped\n";
  for (size_t i = 0; i < r.epochs.size(); ++i) {
    const auto& e = r.epochs[i];
    loss << i << "," << e.mean.l_data << "," << e.mean.l_energy << ","
         << e.mean.l_flow << "," << e.mean.total << "," << e.aux << ","
         << e.flow_skipped << "\n";
  }

  std::ofstream timing((fs::path(dir) / (name + "_timing.csv")).string(), std::ios::trunc);
  timing << "epoch,seconds\n";
  for (size_t i = 0; i < r.epochs.size(); ++i)
    timing << i << "," << r.epochs[i].seconds << "\n";
}

std::vector<Trajectory> load_split(const DatasetManifest& m, Split split,
                                   Fidelity fidelity) {
  std::vector<const TrajEntry*> entries;
  for (const auto& e : m.entries)
    if (e.split == split && e.fidelity == fidelity) entries.push_back(&e);
  std::sort(entries.begin(), entries.end(),
            [](const TrajEntry* a, const TrajEntry* b) {
              return a->pair_index < b->pair_index;
            });
  std::vector<Trajectory> out;
  out.reserve(entries.size());
  for (const auto* e : entries) out.push_back(load_trajectory(m.entry_path(*e)));
  return out;
}

std::vector<std::vector<float>> encode_series(const CaePair& encoder_pair,
                                              const Trajectory& traj,
                                              const NormRecord& norm) {
  const int n = traj.n_step();
  const Field& f0 = traj.fields.front();
  const int64_t per = static_cast<int64_t>(f0.channels()) * f0.height * f0.width;
  std::vector<float> data(static_cast<int64_t>(n) * per);
  for (int i = 0; i < n; ++i) {
    Field nf = normalize(traj.fields[i], norm);
    std::copy(nf.data.begin(), nf.data.end(), data.begin() + i * per);
  }
  Tensor x = Tensor::from_data({n, f0.channels(), f0.height, f0.width}, std::move(data));
  Tensor lat = cae_encode(encoder_pair, x);
  const int m = lat.shape()[1];
  std::vector<std::vector<float>> out(n);
  auto lv = lat.values();
  for (int i = 0; i < n; ++i)
    out[i].assign(lv.begin() + static_cast<int64_t>(i) * m,
                  lv.begin() + static_cast<int64_t>(i + 1) * m);
  return out;
}

// ---------------------------------------------------------------------------
// high-fidelity CAE
// ---------------------------------------------------------------------------

CaeStageResult train_high_cae(const DatasetManifest& m, const TrainConfig& cfg) {
  cfg.validate();
  SnapshotSet train = normalized_snapshots(m, Split::train, Fidelity::high);
  if (train.fields.empty())
    throw std::invalid_argument("train_high_cae: no high-fidelity train trajectories");

  Rng rng(cfg.seed);
  CaeStageResult res;
  res.pair = CaePair::init(CaeArch::derive(m.system, train.grid, cfg.latent_dim), rng);
  res.pair.set_requires_grad(true);
  auto params = res.pair.all_params();
  auto names = res.pair.encoder_param_names("high_");
  auto dnames = res.pair.decoder_param_names("high_");
  names.insert(names.end(), dnames.begin(), dnames.end());
  AdamState adam;
  adam.init(params, names, cfg.lr);

  std::vector<int> idx(train.fields.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);

  res.report.kind = "cae_high";
  res.report.seed = cfg.seed;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    rng.shuffle(idx);
    double loss_acc = 0.0;
    for (size_t b = 0; b < idx.size(); b += cfg.batch) {
      const size_t n = std::min<size_t>(cfg.batch, idx.size() - b);
      Tensor x = batch_tensor(train, idx, b, n);
      Tape tape;
      Tensor recon = cae_decode(res.pair, cae_encode(res.pair, x));
      Tensor loss = scale(sum_sq_diff(recon, x), 1.0f / static_cast<float>(n));
      check_loss_finite(loss.item(), "train_high_cae", epoch);
      loss_acc += static_cast<double>(loss.item()) * n;
      backward(loss, tape);
      adam_step(params, adam);
      for (auto& p : params) p.zero_grad();
    }
    EpochStats st;
    st.mean.l_data = static_cast<float>(loss_acc / idx.size());
    st.mean.total = st.mean.l_data;
    st.seconds = elapsed_seconds(t0);
    res.report.epochs.push_back(st);
  }

  res.pair.set_requires_grad(false);
  SnapshotSet val = normalized_snapshots(m, Split::val, Fidelity::high);
  res.report.final_val_metric = recon_mse(res.pair, val);
  return res;
}

// ---------------------------------------------------------------------------
// low-fidelity CAE
// ---------------------------------------------------------------------------

CaeStageResult train_low_cae(const DatasetManifest& m, const CaePair& high,
                             const TrainConfig& cfg) {
  cfg.validate();
  CaePair frozen_high = high;
  frozen_high.set_requires_grad(false);

  auto high_trajs = load_split(m, Split::train, Fidelity::high);
  auto low_trajs = load_split(m, Split::train, Fidelity::low);
  if (high_trajs.empty() || high_trajs.size() != low_trajs.size())
    throw std::invalid_argument("train_low_cae: manifest is not paired (" +
                                std::to_string(high_trajs.size()) + " high vs " +
                                std::to_string(low_trajs.size()) + " low)");

  // Shared latents from the frozen high encoder, one row per paired snapshot.
  const int m_dim = frozen_high.arch.latent_dim;
  std::vector<std::vector<float>> latents;
  SnapshotSet low;
  for (size_t p = 0; p < high_trajs.size(); ++p) {
    if (high_trajs[p].n_step() != low_trajs[p].n_step())
      throw std::invalid_argument("train_low_cae: pair " + std::to_string(p) +
                                  " has mismatched n_step");
    auto series = encode_series(frozen_high, high_trajs[p], m.norm);
    latents.insert(latents.end(), series.begin(), series.end());
    for (const Field& f : low_trajs[p].fields) {
      Field nf = normalize(f, m.norm);
      if (low.fields.empty()) {
        low.channels = nf.channels();
        low.grid = nf.height;
      }
      low.fields.push_back(std::move(nf.data));
    }
  }

  Rng rng(cfg.seed);
  CaeStageResult res;
  res.pair = CaePair::init(CaeArch::derive(m.system, low.grid, cfg.latent_dim), rng);
  res.pair.set_requires_grad(true);
  auto enc_params = res.pair.encoder_params();
  auto dec_params = res.pair.decoder_params();
  AdamState enc_adam, dec_adam;
  enc_adam.init(enc_params, res.pair.encoder_param_names("low_"), cfg.lr);
  dec_adam.init(dec_params, res.pair.decoder_param_names("low_"), cfg.lr);

  std::vector<int> idx(low.fields.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);

  auto latent_batch = [&](const std::vector<int>& order, size_t begin, size_t count) {
    std::vector<float> data(count * m_dim);
    for (size_t i = 0; i < count; ++i)
      std::copy(latents[order[begin + i]].begin(), latents[order[begin + i]].end(),
                data.begin() + static_cast<int64_t>(i) * m_dim);
    return Tensor::from_data({static_cast<int>(count), m_dim}, std::move(data));
  };

  res.report.kind = "cae_low";
  res.report.seed = cfg.seed;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    rng.shuffle(idx);
    double enc_acc = 0.0, dec_acc = 0.0;
    for (size_t b = 0; b < idx.size(); b += cfg.batch) {
      const size_t n = std::min<size_t>(cfg.batch, idx.size() - b);
      Tensor xl = batch_tensor(low, idx, b, n);
      Tensor eta = latent_batch(idx, b, n);
      {
        Tape tape;
        Tensor eta_l = cae_encode(res.pair, xl);
        Tensor loss = scale(sum_sq_diff(eta_l, eta), 1.0f / static_cast<float>(n));
        check_loss_finite(loss.item(), "train_low_cae(encoder)", epoch);
        enc_acc += static_cast<double>(loss.item()) * n;
        backward(loss, tape);
        adam_step(enc_params, enc_adam);
        for (auto& p : enc_params) p.zero_grad();
      }
      {
        Tape tape;
        Tensor recon = cae_decode(res.pair, eta);
        Tensor loss = scale(sum_sq_diff(recon, xl), 1.0f / static_cast<float>(n));
        check_loss_finite(loss.item(), "train_low_cae(decoder)", epoch);
        dec_acc += static_cast<double>(loss.item()) * n;
        backward(loss, tape);
        adam_step(dec_params, dec_adam);
        for (auto& p : dec_params) p.zero_grad();
      }
    }
    EpochStats st;
    st.mean.l_data = static_cast<float>(enc_acc / idx.size());
    st.aux = static_cast<float>(dec_acc / idx.size());
    st.mean.total = st.mean.l_data;
    st.seconds = elapsed_seconds(t0);
    res.report.epochs.push_back(st);
  }
  res.pair.set_requires_grad(false);

  // Validation: encoder alignment relative error and decoder reconstruction
  // MSE on the held-out pairs.
  auto val_high = load_split(m, Split::val, Fidelity::high);
  auto val_low = load_split(m, Split::val, Fidelity::low);
  double align_num = 0.0, align_den = 0.0, dec_mse = 0.0;
  int64_t dec_count = 0;
  for (size_t p = 0; p < val_high.size(); ++p) {
    auto eta = encode_series(frozen_high, val_high[p], m.norm);
    auto eta_l = encode_series(res.pair, val_low[p], m.norm);
    for (size_t i = 0; i < eta.size(); ++i) {
      for (int j = 0; j < m_dim; ++j) {
        const double d = static_cast<double>(eta_l[i][j]) - eta[i][j];
        align_num += d * d;
        align_den += static_cast<double>(eta[i][j]) * eta[i][j];
      }
      Tensor dec = cae_decode(res.pair, Tensor::from_data({m_dim}, std::vector<float>(eta[i])));
      Field nf = normalize(val_low[p].fields[i], m.norm);
      auto dv = dec.values();
      for (size_t k = 0; k < dv.size(); ++k) {
        const double d = static_cast<double>(dv[k]) - nf.data[k];
        dec_mse += d * d;
      }
      dec_count += static_cast<int64_t>(dv.size());
    }
  }
  res.report.final_val_metric =
      align_den > 0.0 ? std::sqrt(align_num / align_den) : 0.0;
  res.report.final_val_aux = dec_count > 0 ? dec_mse / dec_count : 0.0;
  return res;
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

namespace {

struct WindowRef {
  int series = 0;
  int start = 0;
};

}  // namespace

LstmTrainResult train_lstm(const DatasetManifest& m, const CaeParams& cae,
                           const TrainConfig& cfg) {
  cfg.validate();
  CaeParams frozen = cae;
  frozen.high.set_requires_grad(false);
  frozen.low.set_requires_grad(false);

  PhysicsContext ctx;
  ctx.decoder = cfg.constraints.fidelity == Fidelity::high ? &frozen.high : &frozen.low;
  ctx.norm = m.norm;
  ctx.solver = cfg.constraints.fidelity == Fidelity::high ? m.high_config : m.low_config;

  // Latent series for every train trajectory; the multi-fidelity policy adds
  // the low-encoded series with targets from the same encoder.
  std::vector<std::vector<std::vector<float>>> series;
  for (const auto& t : load_split(m, Split::train, Fidelity::high))
    series.push_back(encode_series(frozen.high, t, m.norm));
  if (cfg.latent_source == LatentSource::multi_fidelity)
    for (const auto& t : load_split(m, Split::train, Fidelity::low))
      series.push_back(encode_series(frozen.low, t, m.norm));
  if (series.empty())
    throw std::invalid_argument("train_lstm: no train trajectories in manifest");

  WindowSpec spec{cfg.k_in, cfg.k_out};
  std::vector<WindowRef> windows;
  for (size_t s = 0; s < series.size(); ++s)
    for (const auto& w : window(static_cast<int>(series[s].size()), spec))
      windows.push_back({static_cast<int>(s), w.input_start});

  const int m_dim = frozen.high.arch.latent_dim;
  Rng rng(cfg.seed);
  LstmTrainResult res;
  res.params = LstmParams::init(m_dim, cfg.hidden_dim, cfg.k_in, cfg.k_out, rng);
  res.params.set_requires_grad(true);
  auto params = res.params.params();
  AdamState adam;
  adam.init(params, res.params.param_names(), cfg.lr);

  std::vector<int> idx(windows.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);

  auto make_step_tensor = [&](size_t begin, size_t count, int offset) {
    std::vector<float> data(count * m_dim);
    for (size_t i = 0; i < count; ++i) {
      const WindowRef& w = windows[idx[begin + i]];
      const auto& lat = series[w.series][w.start + offset];
      std::copy(lat.begin(), lat.end(), data.begin() + static_cast<int64_t>(i) * m_dim);
    }
    return Tensor::from_data({static_cast<int>(count), m_dim}, std::move(data));
  };

  res.report.kind = "lstm";
  res.report.seed = cfg.seed;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    rng.shuffle(idx);
    LossBreakdown acc;
    int skipped = 0;
    for (size_t b = 0; b < idx.size(); b += cfg.batch) {
      const size_t n = std::min<size_t>(cfg.batch, idx.size() - b);
      WindowBatch batch;
      batch.batch = static_cast<int>(n);
      batch.k_in = cfg.k_in;
      batch.k_out = cfg.k_out;
      batch.m = m_dim;
      for (int s = 0; s < cfg.k_in; ++s)
        batch.inputs.push_back(make_step_tensor(b, n, s));
      for (int s = 0; s < cfg.k_out; ++s)
        batch.targets.push_back(make_step_tensor(b, n, cfg.k_in + s));
      prepare_physics_targets(batch, cfg.constraints, ctx);

      Tape tape;
      auto preds = lstm_forward(res.params, batch.inputs);
      CompositeResult loss = composite_loss_batch(batch, preds, cfg.constraints, ctx);
      check_loss_finite(loss.breakdown.total, "train_lstm", epoch);
      backward(loss.total, tape);
      adam_step(params, adam);
      for (auto& p : params) p.zero_grad();

      const float w = static_cast<float>(n) / static_cast<float>(idx.size());
      acc.l_data += loss.breakdown.l_data * w;
      acc.l_energy += loss.breakdown.l_energy * w;
      acc.l_flow += loss.breakdown.l_flow * w;
      acc.total += loss.breakdown.total * w;
      skipped += loss.breakdown.flow_skipped;
    }
    EpochStats st;
    st.mean = acc;
    st.flow_skipped = skipped;
    st.seconds = elapsed_seconds(t0);
    res.report.epochs.push_back(st);
  }
  res.params.set_requires_grad(false);

  // Validation: recurrent-prediction full-space MSE at half the available
  // horizon of the held-out pairs.
  auto val = load_split(m, Split::val, Fidelity::high);
  if (!val.empty()) {
    int min_steps = val.front().n_step();
    for (const auto& t : val) min_steps = std::min(min_steps, t.n_step());
    const int horizon = std::max(1, (min_steps - cfg.k_in) / 2);
    res.report.final_val_metric =
        recurrent_full_mse(res.params, frozen, m, Split::val, horizon, Fidelity::high);
  }
  return res;
}

// ---------------------------------------------------------------------------
// coefficient search
// ---------------------------------------------------------------------------

TuneResult tune_alpha(const DatasetManifest& m, const CaeParams& cae,
                      const TrainConfig& base, AlphaRange energy_range,
                      AlphaRange flow_range, int budget, uint64_t seed) {
  if (budget < 1) throw std::invalid_argument("tune_alpha: budget must be >= 1");
  if (m.pair_indices(Split::val).empty())
    throw std::invalid_argument("tune_alpha: manifest has no validation split");
  if (base.constraints.energy_enabled &&
      (energy_range.lo <= 0.0f || energy_range.hi < energy_range.lo))
    throw std::invalid_argument("tune_alpha: energy range must be a positive interval");
  if (base.constraints.flow_enabled &&
      (flow_range.lo <= 0.0f || flow_range.hi < flow_range.lo))
    throw std::invalid_argument("tune_alpha: flow range must be a positive interval");

  Rng rng(seed);
  auto sample_log_uniform = [&](const AlphaRange& r) {
    const double u = rng.uniform_double(std::log(r.lo), std::log(r.hi));
    return static_cast<float>(std::exp(u));
  };

  TuneResult out;
  double best = 0.0;
  for (int trial = 0; trial < budget; ++trial) {
    TrainConfig cfg = base;
    cfg.epochs = std::max(1, base.epochs / 5);
    if (cfg.constraints.energy_enabled)
      cfg.constraints.alpha_energy = sample_log_uniform(energy_range);
    if (cfg.constraints.flow_enabled)
      cfg.constraints.alpha_flow = sample_log_uniform(flow_range);

    LstmTrainResult r = train_lstm(m, cae, cfg);
    AlphaTrial t;
    t.alpha_energy = cfg.constraints.alpha_energy;
    t.alpha_flow = cfg.constraints.alpha_flow;
    t.val_mse = r.report.final_val_metric;
    out.trials.push_back(t);
    if (trial == 0 || t.val_mse < best) {
      best = t.val_mse;
      out.best = cfg.constraints;
    }
  }
  return out;
}

}  // namespace mfs
