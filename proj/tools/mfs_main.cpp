// Batch command-line surface for the multi-fidelity physics-constrained
// surrogate pipeline. Progress goes to stderr; results go to files under the
// chosen output directory, which always receives the resolved config echo.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "mfs/data.hpp"
#include "mfs/eval.hpp"
#include "mfs/models.hpp"
#include "mfs/physics.hpp"
#include "mfs/run_config.hpp"
#include "mfs/solvers.hpp"
#include "mfs/training.hpp"

namespace fs = std::filesystem;
using namespace mfs;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out = "out";
  std::string profile = "desk";
  std::string case_name = "burgers";
  uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "run config file (key = value with [section] headers)");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--profile", a.profile, "desk|paper")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--case", a.case_name, "burgers|swe")->check(CLI::IsMember({"burgers", "swe"}));
  cmd->add_option("--seed", a.seed, "base seed")->each([&a](const std::string&) { a.seed_set = true; });
  cmd->add_option("--threads", a.threads, "worker cap (0 = single-threaded)");
}

RunConfig resolve(const CommonArgs& a) {
  const System sys = a.case_name == "swe" ? System::shallow_water : System::burgers;
  RunConfig cfg = RunConfig::profile(a.profile, sys);
  if (!a.config_path.empty()) cfg = load_run_config(a.config_path, cfg);
  if (a.seed_set) cfg.seed = a.seed;
  if (a.threads > 0) cfg.threads = a.threads;
  return cfg;
}

RunConfig prepare_out(const CommonArgs& a) {
  RunConfig cfg = resolve(a);
  fs::create_directories(a.out);
  echo_run_config(cfg, (fs::path(a.out) / "config_resolved.cfg").string());
  return cfg;
}

ConstraintConfig row_constraints(const RunConfig& c, const std::string& row) {
  ConstraintConfig cc;
  if (row == "HF-EC") cc = {true, static_cast<float>(c.alpha_ec_hf), false, 0.0f, Fidelity::high};
  else if (row == "LF-EC") cc = {true, static_cast<float>(c.alpha_ec_lf), false, 0.0f, Fidelity::low};
  else if (row == "HF-FO") cc = {false, 0.0f, true, static_cast<float>(c.alpha_fo_hf), Fidelity::high};
  else if (row == "LF-FO") cc = {false, 0.0f, true, static_cast<float>(c.alpha_fo_lf), Fidelity::low};
  else if (row == "HF-MulCons")
    cc = {true, static_cast<float>(c.alpha_ec_mul_hf), true, static_cast<float>(c.alpha_fo_mul_hf), Fidelity::high};
  else if (row == "LF-MulCons")
    cc = {true, static_cast<float>(c.alpha_ec_mul_lf), true, static_cast<float>(c.alpha_fo_mul_lf), Fidelity::low};
  return cc;  // Basic / MultiDataset: no constraints
}

int run_gen_data(const CommonArgs& a) {
  RunConfig cfg = prepare_out(a);
  GenerateOptions opt;
  opt.n_train = cfg.n_train;
  opt.n_test = cfg.n_test;
  opt.seed = cfg.seed;
  opt.threads = std::max(1, cfg.threads);
  std::cerr << "gen-data: " << opt.n_train << "+" << opt.n_test << " pairs ("
            << system_name(cfg.system) << ") -> " << a.out << "\n";
  DatasetManifest m =
      generate_dataset(cfg.high_config(), cfg.low_config(), opt, a.out);
  std::cerr << "gen-data: wrote " << m.entries.size() << " trajectories\n";
  return 0;
}

int run_train_cae(const CommonArgs& a, const std::string& data_dir) {
  RunConfig cfg = prepare_out(a);
  DatasetManifest m = load_manifest(data_dir);
  TrainConfig tc = cfg.cae_train_config();
  std::cerr << "train-cae: high stage (" << tc.epochs << " epochs)\n";
  CaeStageResult high = train_high_cae(m, tc);
  save_report(high.report, a.out, "cae_high");
  std::cerr << "train-cae: high val recon mse " << high.report.final_val_metric << "\n";
  std::cerr << "train-cae: low stage\n";
  CaeStageResult low = train_low_cae(m, high.pair, tc);
  save_report(low.report, a.out, "cae_low");
  std::cerr << "train-cae: low val alignment " << low.report.final_val_metric << "\n";
  CaeParams params{high.pair, low.pair};
  save_cae(params, (fs::path(a.out) / "cae.f32").string());
  return 0;
}

int run_train_lstm(const CommonArgs& a, const std::string& data_dir,
                   const std::string& cae_path) {
  RunConfig cfg = prepare_out(a);
  DatasetManifest m = load_manifest(data_dir);
  if (!fs::exists(cae_path))
    throw std::runtime_error("train-lstm: CAE checkpoint '" + cae_path +
                             "' missing; run train-cae first");
  CaeParams cae = load_cae(cae_path);
  TrainConfig tc = cfg.lstm_train_config();
  std::cerr << "train-lstm: " << tc.epochs << " epochs, constraints ec="
            << tc.constraints.energy_enabled << " fo=" << tc.constraints.flow_enabled
            << " fidelity=" << fidelity_name(tc.constraints.fidelity) << "\n";
  LstmTrainResult r = train_lstm(m, cae, tc);
  save_report(r.report, a.out, "lstm");
  save_lstm(r.params, (fs::path(a.out) / "lstm.f32").string());
  std::cerr << "train-lstm: val mse " << r.report.final_val_metric << "\n";
  return 0;
}

int run_tune_alpha(const CommonArgs& a, const std::string& data_dir,
                   const std::string& cae_path, int budget, double ec_lo,
                   double ec_hi, double fo_lo, double fo_hi) {
  RunConfig cfg = prepare_out(a);
  DatasetManifest m = load_manifest(data_dir);
  if (!fs::exists(cae_path))
    throw std::runtime_error("tune-alpha: CAE checkpoint '" + cae_path +
                             "' missing; run train-cae first");
  CaeParams cae = load_cae(cae_path);
  TrainConfig base = cfg.lstm_train_config();
  TuneResult r = tune_alpha(m, cae, base,
                            {static_cast<float>(ec_lo), static_cast<float>(ec_hi)},
                            {static_cast<float>(fo_lo), static_cast<float>(fo_hi)},
                            budget, cfg.seed);
  std::ofstream trials((fs::path(a.out) / "trials.csv").string(), std::ios::trunc);
  trials << "trial,alpha_energy,alpha_flow,val_mse\n";
  for (size_t i = 0; i < r.trials.size(); ++i)
    trials << i << "," << r.trials[i].alpha_energy << "," << r.trials[i].alpha_flow
           << "," << r.trials[i].val_mse << "\n";
  write_kv_file((fs::path(a.out) / "best_alphas.txt").string(),
                {{"alpha_energy", std::to_string(r.best.alpha_energy)},
                 {"alpha_flow", std::to_string(r.best.alpha_flow)},
                 {"fidelity", fidelity_name(r.best.fidelity)}});
  std::cerr << "tune-alpha: best alpha_energy=" << r.best.alpha_energy
            << " alpha_flow=" << r.best.alpha_flow << "\n";
  return 0;
}

int run_predict(const CommonArgs& a, const std::string& data_dir,
                const std::string& cae_path, const std::string& lstm_path,
                int index) {
  RunConfig cfg = prepare_out(a);
  DatasetManifest m = load_manifest(data_dir);
  CaeParams cae = load_cae(cae_path);
  LstmParams lstm = load_lstm(lstm_path);
  auto test = load_split(m, Split::test, Fidelity::high);
  if (index < 0 || index >= static_cast<int>(test.size()))
    throw std::runtime_error("predict: test index " + std::to_string(index) +
                             " out of range (" + std::to_string(test.size()) + " pairs)");
  const Trajectory& traj = test[index];
  const int horizon = std::min(cfg.horizon, traj.n_step() - lstm.k_in);

  std::vector<std::vector<float>> init;
  for (int i = 0; i < lstm.k_in; ++i) {
    Field nf = normalize(traj.fields[i], m.norm);
    Tensor lat = cae_encode(cae.high, field_to_tensor(nf));
    init.emplace_back(lat.values().begin(), lat.values().end());
  }
  auto latents = recurrent_predict(lstm, init, horizon);
  for (int t = 0; t < horizon; ++t) {
    Tensor lat = Tensor::from_data({lstm.input_dim}, std::vector<float>(latents[t]));
    Tensor dec = cae_decode(cae.high, lat);
    Field f = denormalize(
        tensor_to_field(dec, m.system, solver_domain(m.high_config),
                        solver_domain(m.high_config)),
        m.norm);
    save_field_raw(f, (fs::path(a.out) / ("pred_step_" + std::to_string(t) + ".f32")).string());
  }
  std::cerr << "predict: wrote " << horizon << " predicted fields\n";
  return 0;
}

int run_evaluate(const CommonArgs& a, const std::string& data_dir,
                 const std::string& cae_path, const std::string& lstm_path,
                 const std::string& name) {
  RunConfig cfg = prepare_out(a);
  DatasetManifest m = load_manifest(data_dir);
  CaeParams cae = load_cae(cae_path);
  LstmParams lstm = load_lstm(lstm_path);
  EvalResult r = evaluate_model(lstm, cae, m, Split::test, cfg.horizon,
                                Fidelity::high, std::max(1, cfg.threads));
  emit_metric_csv(r.series, (fs::path(a.out) / (name + "_metrics.csv")).string());
  MetricSeries cum = r.series;
  cum.mse = cum.cumulative_mse;
  emit_metric_csv(cum, (fs::path(a.out) / (name + "_metrics_cumulative.csv")).string());
  double max_err = 0.0;
  for (const Field& f : r.error_fields)
    for (float v : f.data) max_err = std::max(max_err, static_cast<double>(v));
  Histogram h = error_histogram(r.error_fields, cfg.histogram_bins, 0.0,
                                std::max(max_err, 1e-12));
  emit_histogram_csv(h, (fs::path(a.out) / (name + "_error_hist.csv")).string());
  for (size_t i = 0; i < r.error_fields.size(); ++i)
    save_field_raw(r.error_fields[i],
                   (fs::path(a.out) / (name + "_error_" + std::to_string(i) + ".f32")).string());
  std::cerr << "evaluate: final-step mse " << r.final_step_mse << ", ssim "
            << r.final_step_ssim << "\n";
  return 0;
}

int run_noise_eval(const CommonArgs& a, const std::string& data_dir,
                   const std::string& cae_path,
                   const std::vector<std::string>& lstm_specs) {
  RunConfig cfg = prepare_out(a);
  DatasetManifest m = load_manifest(data_dir);
  CaeParams cae = load_cae(cae_path);
  std::vector<std::pair<std::string, LstmParams>> loaded;
  for (const auto& spec : lstm_specs) {
    auto pos = spec.find('=');
    if (pos == std::string::npos)
      throw std::runtime_error("noise-eval: --lstm expects name=path, got '" + spec + "'");
    loaded.emplace_back(spec.substr(0, pos), load_lstm(spec.substr(pos + 1)));
  }
  std::vector<NamedLstm> models;
  for (auto& [n, p] : loaded) models.push_back({n, &p});
  NoiseConfig noise = default_noise_config(m.norm, cfg.noise_sigma_fraction, cfg.seed);
  noise.length = cfg.noise_length;
  auto noisy = noisy_eval(models, cae, m, Split::test, noise, cfg.horizon,
                          Fidelity::high, std::max(1, cfg.threads));
  for (const auto& [n, r] : noisy) {
    emit_metric_csv(r.series, (fs::path(a.out) / (n + "_noisy_metrics.csv")).string());
    std::cerr << "noise-eval: " << n << " final-step mse " << r.final_step_mse << "\n";
  }
  for (const auto& model : models) {
    EvalResult clean = evaluate_model(*model.params, cae, m, Split::test, cfg.horizon,
                                      Fidelity::high, std::max(1, cfg.threads));
    emit_metric_csv(clean.series,
                    (fs::path(a.out) / (model.name + "_clean_metrics.csv")).string());
  }
  return 0;
}

int run_reproduce(const CommonArgs& a) {
  RunConfig cfg = prepare_out(a);
  const fs::path out(a.out);
  const std::string data_dir = (out / "data").string();

  std::cerr << "reproduce[" << a.case_name << "]: generating dataset\n";
  GenerateOptions opt;
  opt.n_train = cfg.n_train;
  opt.n_test = cfg.n_test;
  opt.seed = cfg.seed;
  opt.threads = std::max(1, cfg.threads);
  DatasetManifest m = generate_dataset(cfg.high_config(), cfg.low_config(), opt, data_dir);

  std::cerr << "reproduce: training multi-fidelity CAE\n";
  TrainConfig cae_tc = cfg.cae_train_config();
  CaeStageResult high = train_high_cae(m, cae_tc);
  save_report(high.report, a.out, "cae_high");
  CaeStageResult low = train_low_cae(m, high.pair, cae_tc);
  save_report(low.report, a.out, "cae_low");
  CaeParams cae{high.pair, low.pair};
  save_cae(cae, (out / "cae.f32").string());

  std::vector<std::string> rows =
      cfg.system == System::burgers
          ? std::vector<std::string>{"Basic", "MultiDataset", "HF-EC", "LF-EC",
                                     "HF-FO", "LF-FO", "HF-MulCons", "LF-MulCons"}
          : std::vector<std::string>{"Basic", "LF-EC", "LF-FO", "LF-MulCons"};

  std::vector<SummaryRow> summary, summary_mean;
  for (const auto& row : rows) {
    std::cerr << "reproduce: training " << row << "\n";
    TrainConfig tc = cfg.lstm_train_config();
    tc.constraints = row_constraints(cfg, row);
    tc.latent_source = row == "MultiDataset" ? LatentSource::multi_fidelity
                                             : LatentSource::high_only;
    LstmTrainResult r = train_lstm(m, cae, tc);
    save_report(r.report, a.out, "lstm_" + row);
    save_lstm(r.params, (out / ("lstm_" + row + ".f32")).string());
    EvalResult e = evaluate_model(r.params, cae, m, Split::test, cfg.horizon,
                                  Fidelity::high, std::max(1, cfg.threads));
    emit_metric_csv(e.series, (out / (row + "_metrics.csv")).string());
    double max_err = 0.0;
    for (const Field& f : e.error_fields)
      for (float v : f.data) max_err = std::max(max_err, static_cast<double>(v));
    emit_histogram_csv(
        error_histogram(e.error_fields, cfg.histogram_bins, 0.0, std::max(max_err, 1e-12)),
        (out / (row + "_error_hist.csv")).string());
    summary.push_back({row, e.final_step_mse, e.final_step_ssim,
                       r.report.mean_epoch_seconds()});
    summary_mean.push_back({row, e.mean_mse, e.final_step_ssim,
                            r.report.mean_epoch_seconds()});
    std::cerr << "reproduce: " << row << " final-step mse " << e.final_step_mse << "\n";
  }
  emit_summary_csv(summary, "Basic", (out / "summary.csv").string());
  emit_summary_csv(summary_mean, "Basic", (out / "summary_mean.csv").string());
  std::cerr << "reproduce: summary written to " << (out / "summary.csv") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-fidelity physics-constrained surrogate pipeline"};
  app.require_subcommand(1);

  CommonArgs gen_args, cae_args, lstm_args, tune_args, pred_args, eval_args,
      noise_args, repro_args;
  std::string cae_data, lstm_data, tune_data, pred_data, eval_data, noise_data;
  std::string lstm_cae = "cae.f32", tune_cae = "cae.f32", pred_cae, eval_cae, noise_cae;
  std::string pred_lstm, eval_lstm;
  std::string eval_name = "model";
  std::vector<std::string> noise_lstms;
  int tune_budget = 8, pred_index = 0;
  double ec_lo = 1e-6, ec_hi = 1e-3, fo_lo = 1e-4, fo_hi = 1e-2;

  auto* gen = app.add_subcommand("gen-data", "generate a paired two-fidelity dataset");
  add_common(gen, gen_args);

  auto* cae = app.add_subcommand("train-cae", "train the multi-fidelity autoencoder");
  add_common(cae, cae_args);
  cae->add_option("--data", cae_data, "dataset root")->required();

  auto* lstm = app.add_subcommand("train-lstm", "train the physics-constrained surrogate");
  add_common(lstm, lstm_args);
  lstm->add_option("--data", lstm_data, "dataset root")->required();
  lstm->add_option("--cae", lstm_cae, "CAE checkpoint")->required();

  auto* tune = app.add_subcommand("tune-alpha", "random search for constraint coefficients");
  add_common(tune, tune_args);
  tune->add_option("--data", tune_data, "dataset root")->required();
  tune->add_option("--cae", tune_cae, "CAE checkpoint")->required();
  tune->add_option("--budget", tune_budget, "number of trials");
  tune->add_option("--ec-lo", ec_lo, "energy coefficient range low");
  tune->add_option("--ec-hi", ec_hi, "energy coefficient range high");
  tune->add_option("--fo-lo", fo_lo, "flow coefficient range low");
  tune->add_option("--fo-hi", fo_hi, "flow coefficient range high");

  auto* pred = app.add_subcommand("predict", "recurrent prediction for one test pair");
  add_common(pred, pred_args);
  pred->add_option("--data", pred_data, "dataset root")->required();
  pred->add_option("--cae", pred_cae, "CAE checkpoint")->required();
  pred->add_option("--lstm", pred_lstm, "LSTM checkpoint")->required();
  pred->add_option("--index", pred_index, "test pair index");

  auto* ev = app.add_subcommand("evaluate", "long-horizon metrics on the test split");
  add_common(ev, eval_args);
  ev->add_option("--data", eval_data, "dataset root")->required();
  ev->add_option("--cae", eval_cae, "CAE checkpoint")->required();
  ev->add_option("--lstm", eval_lstm, "LSTM checkpoint")->required();
  ev->add_option("--name", eval_name, "model name used in output files");

  auto* noise = app.add_subcommand("noise-eval", "robustness to perturbed initial data");
  add_common(noise, noise_args);
  noise->add_option("--data", noise_data, "dataset root")->required();
  noise->add_option("--cae", noise_cae, "CAE checkpoint")->required();
  noise->add_option("--lstm", noise_lstms, "model as name=checkpoint (repeatable)")->required();

  auto* repro = app.add_subcommand("reproduce", "desk-scale experiment matrix end to end");
  add_common(repro, repro_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_data(gen_args);
    if (cae->parsed()) return run_train_cae(cae_args, cae_data);
    if (lstm->parsed()) return run_train_lstm(lstm_args, lstm_data, lstm_cae);
    if (tune->parsed())
      return run_tune_alpha(tune_args, tune_data, tune_cae, tune_budget, ec_lo,
                            ec_hi, fo_lo, fo_hi);
    if (pred->parsed()) return run_predict(pred_args, pred_data, pred_cae, pred_lstm, pred_index);
    if (ev->parsed()) return run_evaluate(eval_args, eval_data, eval_cae, eval_lstm, eval_name);
    if (noise->parsed()) return run_noise_eval(noise_args, noise_data, noise_cae, noise_lstms);
    if (repro->parsed()) return run_reproduce(repro_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
