#include "mfs/eval.hpp"

#include <lapacke.h>
#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <thread>

#include "mfs/training.hpp"

namespace fs = std::filesystem;

namespace mfs {

// ---------------------------------------------------------------------------
// evaluation core
// ---------------------------------------------------------------------------

namespace {

struct TrajEval {
  std::vector<double> step_mse;
  Field final_error;
  double final_ssim = 0.0;
};

// Per-trajectory protocol: encode k_in true high-fidelity snapshots, forecast
// `horizon` latents, decode at fidelity_out, compare in physical units.
TrajEval eval_one(const LstmParams& lstm, const CaeParams& cae,
                  const DatasetManifest& m, const Trajectory& high,
                  const Trajectory& truth, int horizon,
                  const std::function<void(std::vector<Field>&)>& perturb) {
  const int k_in = lstm.k_in;
  std::vector<Field> init_fields(high.fields.begin(), high.fields.begin() + k_in);
  if (perturb) perturb(init_fields);

  std::vector<std::vector<float>> init;
  for (const Field& f : init_fields) {
    Field nf = normalize(f, m.norm);
    Tensor lat = cae_encode(cae.high, field_to_tensor(nf));
    init.emplace_back(lat.values().begin(), lat.values().end());
  }
  auto latents = recurrent_predict(lstm, init, horizon);

  const CaePair& dec_pair = truth.fidelity == Fidelity::high ? cae.high : cae.low;
  const int m_dim = lstm.input_dim;
  std::vector<float> flat(static_cast<size_t>(horizon) * m_dim);
  for (int t = 0; t < horizon; ++t)
    std::copy(latents[t].begin(), latents[t].end(),
              flat.begin() + static_cast<int64_t>(t) * m_dim);
  Tensor decoded = cae_decode(dec_pair, Tensor::from_data({horizon, m_dim}, std::move(flat)));

  const Field& f0 = truth.fields.front();
  const int64_t per = static_cast<int64_t>(f0.channels()) * f0.height * f0.width;
  TrajEval out;
  out.step_mse.resize(horizon);
  auto dv = decoded.values();
  for (int t = 0; t < horizon; ++t) {
    Field pred_norm = f0;
    pred_norm.data.assign(dv.begin() + t * per, dv.begin() + (t + 1) * per);
    Field pred = denormalize(pred_norm, m.norm);
    const Field& gt = truth.fields[k_in + t];
    double acc = 0.0;
    for (int64_t i = 0; i < per; ++i) {
      const double d = static_cast<double>(pred.data[i]) - gt.data[i];
      acc += d * d;
    }
    out.step_mse[t] = acc / static_cast<double>(per);
    if (t == horizon - 1) {
      out.final_error = gt;
      for (int64_t i = 0; i < per; ++i)
        out.final_error.data[i] = std::abs(pred.data[i] - gt.data[i]);
      out.final_ssim = ssim_field(pred_norm, normalize(gt, m.norm));
    }
  }
  return out;
}

EvalResult eval_protocol(
    const LstmParams& lstm, const CaeParams& cae, const DatasetManifest& m,
    Split split, int horizon, Fidelity fidelity_out, int threads,
    const std::function<void(int, std::vector<Field>&)>& perturb) {
  auto high = load_split(m, split, Fidelity::high);
  auto truth = fidelity_out == Fidelity::high ? high : load_split(m, split, Fidelity::low);
  if (high.empty())
    throw std::invalid_argument("evaluate_model: split '" + split_name(split) +
                                "' is empty");
  for (const auto& t : high)
    if (horizon < 1 || horizon > t.n_step() - lstm.k_in)
      throw std::invalid_argument("evaluate_model: horizon " + std::to_string(horizon) +
                                  " exceeds n_step - k_in = " +
                                  std::to_string(t.n_step() - lstm.k_in));

  const int n = static_cast<int>(high.size());
  std::vector<TrajEval> per_traj(n);
  auto run = [&](int i) {
    std::function<void(std::vector<Field>&)> p;
    if (perturb) p = [&, i](std::vector<Field>& f) { perturb(i, f); };
    per_traj[i] = eval_one(lstm, cae, m, high[i], truth[i], horizon, p);
  };
  const int workers = std::max(1, std::min(threads, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w]() {
        try {
          for (int i = w; i < n; i += workers) run(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  EvalResult res;
  res.series.horizon = horizon;
  res.series.mse.resize(horizon);
  res.series.std_dev.resize(horizon);
  res.series.cumulative_mse.resize(horizon);
  for (int t = 0; t < horizon; ++t) {
    double mean = 0.0;
    for (const auto& e : per_traj) mean += e.step_mse[t];
    mean /= n;
    double var = 0.0;
    for (const auto& e : per_traj) {
      const double d = e.step_mse[t] - mean;
      var += d * d;
    }
    res.series.mse[t] = mean;
    res.series.std_dev[t] = std::sqrt(var / n);
  }
  double run_sum = 0.0;
  for (int t = 0; t < horizon; ++t) {
    run_sum += res.series.mse[t];
    res.series.cumulative_mse[t] = run_sum / (t + 1);
  }
  res.final_step_mse = res.series.mse[horizon - 1];
  res.mean_mse = res.series.cumulative_mse[horizon - 1];
  double ssim_acc = 0.0;
  for (auto& e : per_traj) {
    res.error_fields.push_back(std::move(e.final_error));
    ssim_acc += e.final_ssim;
  }
  res.final_step_ssim = ssim_acc / n;
  return res;
}

}  // namespace

EvalResult evaluate_model(const LstmParams& lstm, const CaeParams& cae,
                          const DatasetManifest& m, Split split, int horizon,
                          Fidelity fidelity_out, int threads) {
  return eval_protocol(lstm, cae, m, split, horizon, fidelity_out, threads, {});
}

double recurrent_full_mse(const LstmParams& lstm, const CaeParams& cae,
                          const DatasetManifest& m, Split split, int horizon,
                          Fidelity fidelity_out) {
  return eval_protocol(lstm, cae, m, split, horizon, fidelity_out, 1, {}).mean_mse;
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

double ssim(std::span<const float> a, std::span<const float> b, int height,
            int width, double data_range) {
  if (a.size() != b.size() || static_cast<int64_t>(a.size()) !=
                                  static_cast<int64_t>(height) * width)
    throw std::invalid_argument("ssim: plane sizes disagree (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + " for " +
                                std::to_string(height) + "x" + std::to_string(width) + ")");
  int win = 11;
  const int min_dim = std::min(height, width);
  if (min_dim < win) win = min_dim % 2 == 1 ? min_dim : min_dim - 1;
  if (win < 1) throw std::invalid_argument("ssim: degenerate plane");

  // Gaussian window, sigma 1.5, normalized.
  std::vector<double> g(static_cast<size_t>(win) * win);
  const double sigma = 1.5;
  const int half = win / 2;
  double gsum = 0.0;
  for (int y = 0; y < win; ++y)
    for (int x = 0; x < win; ++x) {
      const double dy = y - half, dx = x - half;
      g[y * win + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      gsum += g[y * win + x];
    }
  for (double& v : g) v /= gsum;

  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double acc = 0.0;
  int count = 0;
  for (int oy = 0; oy + win <= height; ++oy) {
    for (int ox = 0; ox + win <= width; ++ox) {
      double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          const double w = g[y * win + x];
          const double va = a[(oy + y) * width + ox + x];
          const double vb = b[(oy + y) * width + ox + x];
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      const double var_a = saa - ma * ma;
      const double var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  return acc / count;
}

double ssim_field(const Field& a, const Field& b, double data_range) {
  if (a.channels() != b.channels() || a.height != b.height || a.width != b.width)
    throw std::invalid_argument("ssim_field: field shapes disagree");
  const size_t plane = static_cast<size_t>(a.height) * a.width;
  double acc = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    acc += ssim(std::span<const float>(a.data.data() + c * plane, plane),
                std::span<const float>(b.data.data() + c * plane, plane),
                a.height, a.width, data_range);
  return acc / a.channels();
}

// ---------------------------------------------------------------------------
// histogram
// ---------------------------------------------------------------------------

Histogram error_histogram(const std::vector<Field>& error_fields, int bins,
                          double lo, double hi) {
  if (bins < 1) throw std::invalid_argument("error_histogram: bins must be >= 1");
  if (!(hi > lo)) throw std::invalid_argument("error_histogram: empty range");
  Histogram h;
  h.edges.resize(bins + 1);
  for (int i = 0; i <= bins; ++i)
    h.edges[i] = lo + (hi - lo) * i / bins;
  h.counts.assign(bins, 0);
  const double w = (hi - lo) / bins;
  for (const Field& f : error_fields)
    for (float v : f.data) {
      int bin = static_cast<int>((static_cast<double>(v) - lo) / w);
      bin = std::clamp(bin, 0, bins - 1);
      ++h.counts[bin];
    }
  return h;
}

// ---------------------------------------------------------------------------
// correlated noise
// ---------------------------------------------------------------------------

double matern_correlation(double r, double length) {
  if (r < 0.0 || length <= 0.0)
    throw std::invalid_argument("matern_correlation: need r >= 0, L > 0");
  const double x = r / length;
  return (1.0 + x) * std::exp(-x);
}

CorrelatedNoise::CorrelatedNoise(int height, int width, double length)
    : h_(height), w_(width) {
  const int n = height * width;
  chol_.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    const int yi = i / width, xi = i % width;
    for (int j = 0; j <= i; ++j) {
      const int yj = j / width, xj = j % width;
      const double dy = yi - yj, dx = xi - xj;
      const double r = std::sqrt(dx * dx + dy * dy);
      double c = matern_correlation(r, length);
      if (i == j) c += 1e-8;
      chol_[static_cast<size_t>(i) * n + j] = c;
      chol_[static_cast<size_t>(j) * n + i] = c;
    }
  }
  const lapack_int info =
      LAPACKE_dpotrf(LAPACK_ROW_MAJOR, 'L', n, chol_.data(), n);
  if (info != 0)
    throw std::runtime_error("CorrelatedNoise: covariance not positive definite "
                             "(dpotrf pivot " + std::to_string(info) + ")");
  // Zero the strict upper triangle so dtrmv sees a clean factor.
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      chol_[static_cast<size_t>(i) * n + j] = 0.0;
}

std::vector<float> CorrelatedNoise::sample(Rng& rng) const {
  const int n = h_ * w_;
  std::vector<double> z(n);
  for (int i = 0; i < n; i += 2) {
    const double u1 = 1.0 - rng.uniform_double(0.0, 1.0);
    const double u2 = rng.uniform_double(0.0, 1.0);
    const double rad = std::sqrt(-2.0 * std::log(u1));
    z[i] = rad * std::cos(2.0 * M_PI * u2);
    if (i + 1 < n) z[i + 1] = rad * std::sin(2.0 * M_PI * u2);
  }
  cblas_dtrmv(CblasRowMajor, CblasLower, CblasNoTrans, CblasNonUnit, n,
              chol_.data(), n, z.data(), 1);
  std::vector<float> out(n);
  for (int i = 0; i < n; ++i) out[i] = static_cast<float>(z[i]);
  return out;
}

Field sample_correlated_noise(System system, int height, int width,
                              double domain, const NoiseConfig& cfg, Rng& rng) {
  const int channels = system == System::burgers ? 2 : 3;
  if (static_cast<int>(cfg.sigma.size()) != channels)
    throw std::invalid_argument("sample_correlated_noise: " +
                                std::to_string(cfg.sigma.size()) + " sigmas for " +
                                std::to_string(channels) + " channels");
  CorrelatedNoise gen(height, width, cfg.length);
  Field f = Field::zeros(system, height, domain);
  const size_t plane = static_cast<size_t>(height) * width;
  for (int c = 0; c < channels; ++c) {
    auto s = gen.sample(rng);
    for (size_t i = 0; i < plane; ++i) f.data[c * plane + i] = cfg.sigma[c] * s[i];
  }
  return f;
}

NoiseConfig default_noise_config(const NormRecord& norm, double fraction,
                                 uint64_t seed) {
  NoiseConfig cfg;
  cfg.seed = seed;
  for (int c = 0; c < norm.channels(); ++c)
    cfg.sigma.push_back(static_cast<float>(fraction * norm.range(c)));
  return cfg;
}

std::vector<std::pair<std::string, EvalResult>> noisy_eval(
    const std::vector<NamedLstm>& models, const CaeParams& cae,
    const DatasetManifest& m, Split split, const NoiseConfig& noise,
    int horizon, Fidelity fidelity_out, int threads) {
  if (models.empty()) return {};
  const int grid = solver_grid(m.high_config);
  CorrelatedNoise gen(grid, grid, noise.length);
  const int channels = m.system == System::burgers ? 2 : 3;
  if (static_cast<int>(noise.sigma.size()) != channels)
    throw std::invalid_argument("noisy_eval: sigma count mismatch");

  // The same perturbation per trajectory index for every model.
  auto perturb = [&](int traj_idx, std::vector<Field>& fields) {
    Rng rng(noise.seed + 0x9E3779B9ull * static_cast<uint64_t>(traj_idx + 1));
    for (Field& f : fields) {
      const size_t plane = static_cast<size_t>(f.height) * f.width;
      for (int c = 0; c < channels; ++c) {
        auto s = gen.sample(rng);
        for (size_t i = 0; i < plane; ++i)
          f.data[c * plane + i] += noise.sigma[c] * s[i];
      }
      if (f.system == System::shallow_water)
        for (size_t i = 0; i < plane; ++i)
          f.data[i] = std::max(f.data[i], 1e-3f);
    }
  };

  std::vector<std::pair<std::string, EvalResult>> out;
  for (const auto& model : models)
    out.emplace_back(model.name,
                     eval_protocol(*model.params, cae, m, split, horizon,
                                   fidelity_out, threads, perturb));
  return out;
}

// ---------------------------------------------------------------------------
// report emission
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

void emit_metric_csv(const MetricSeries& s, const std::string& path) {
  auto out = open_out(path);
  out << "step,mse,std\n";
  for (int t = 0; t < s.horizon; ++t)
    out << t << "," << fmt(s.mse[t]) << "," << fmt(s.std_dev[t]) << "\n";
}

void emit_histogram_csv(const Histogram& h, const std::string& path) {
  auto out = open_out(path);
  out << "bin_lo,bin_hi,count\n";
  for (size_t i = 0; i < h.counts.size(); ++i)
    out << fmt(h.edges[i]) << "," << fmt(h.edges[i + 1]) << "," << h.counts[i] << "\n";
}

void emit_summary_csv(const std::vector<SummaryRow>& rows,
                      const std::string& baseline, const std::string& path) {
  double base_mse = 0.0;
  for (const auto& r : rows)
    if (r.model == baseline) base_mse = r.mse;
  auto out = open_out(path);
  out << "model,mse_pct,ssim,epoch_seconds\n";
  for (const auto& r : rows) {
    const double pct = base_mse > 0.0 ? 100.0 * r.mse / base_mse : 0.0;
    out << r.model << "," << fmt(pct) << "," << fmt(r.ssim) << ","
        << fmt(r.epoch_seconds) << "\n";
  }
}

void save_field_raw(const Field& f, const std::string& path) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(f.data.data()),
            static_cast<std::streamsize>(f.data.size() * sizeof(float)));
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("system", system_name(f.system));
  kv.emplace_back("channels", std::to_string(f.channels()));
  kv.emplace_back("height", std::to_string(f.height));
  kv.emplace_back("width", std::to_string(f.width));
  kv.emplace_back("domain_x", fmt(f.domain_x));
  kv.emplace_back("domain_y", fmt(f.domain_y));
  const std::string mpath = path.size() > 4 && path.substr(path.size() - 4) == ".f32"
                                ? path.substr(0, path.size() - 4) + ".meta"
                                : path + ".meta";
  write_kv_file(mpath, kv);
}

}  // namespace mfs
