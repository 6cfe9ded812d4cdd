#include "mfs/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>

namespace mfs {

SolverConfig RunConfig::high_config() const {
  if (system == System::burgers) {
    BurgersConfig b;
    b.n = grid_high;
    b.domain = domain;
    b.viscosity = viscosity;
    b.cfl_safety = cfl_safety;
    b.snap_interval = snap_interval;
    b.n_step = n_step;
    b.patch_vel_min = patch_vel_min;
    b.patch_vel_max = patch_vel_max;
    b.background = background;
    return b;
  }
  SweConfig s;
  s.n = grid_high;
  s.domain = domain;
  s.g = gravity;
  s.depth = depth;
  s.cfl_safety = cfl_safety;
  s.snap_interval = snap_interval;
  s.n_step = n_step;
  s.cyl_height_min = cyl_height_min;
  s.cyl_height_max = cyl_height_max;
  s.cyl_radius_min = cyl_radius_min;
  s.cyl_radius_max = cyl_radius_max;
  s.radius_unit_dx = radius_unit_dx;
  return s;
}

SolverConfig RunConfig::low_config() const {
  SolverConfig cfg = high_config();
  std::visit([&](auto& c) { c.n = grid_low; }, cfg);
  return cfg;
}

TrainConfig RunConfig::cae_train_config() const {
  TrainConfig t;
  t.epochs = cae_epochs;
  t.lr = static_cast<float>(lr);
  t.batch = batch;
  t.seed = seed;
  t.latent_dim = latent_dim;
  t.hidden_dim = hidden_dim;
  t.k_in = k_in;
  t.k_out = k_out;
  return t;
}

TrainConfig RunConfig::lstm_train_config() const {
  TrainConfig t = cae_train_config();
  t.epochs = lstm_epochs;
  t.constraints.energy_enabled = energy;
  t.constraints.alpha_energy = static_cast<float>(alpha_energy);
  t.constraints.flow_enabled = flow;
  t.constraints.alpha_flow = static_cast<float>(alpha_flow);
  t.constraints.fidelity = constraint_fidelity;
  t.latent_source = latent_source;
  return t;
}

RunConfig RunConfig::profile(const std::string& name, System system) {
  RunConfig c;
  c.system = system;
  const bool paper = name == "paper";
  if (!paper && name != "desk")
    throw std::invalid_argument("unknown profile '" + name + "' (expected desk|paper)");
  if (system == System::burgers) {
    c.grid_high = paper ? 129 : 65;
    c.grid_low = paper ? 33 : 17;
    c.domain = 1.0;
    c.snap_interval = 0.0015;
    c.n_step = paper ? 100 : 60;
  } else {
    c.grid_high = paper ? 64 : 32;
    c.grid_low = paper ? 32 : 16;
    c.domain = paper ? 63.0 : 31.0;
    c.radius_unit_dx = c.domain / 63.0;
    c.cfl_safety = 0.05;
    c.snap_interval = 0.09;
    c.n_step = paper ? 100 : 60;
  }
  c.n_train = paper ? 300 : 20;
  c.n_test = paper ? 30 : 5;
  c.cae_epochs = paper ? 100 : 30;
  c.lstm_epochs = paper ? 80 : 20;
  c.horizon = paper ? 90 : 30;
  return c;
}

// ---------------------------------------------------------------------------
// file parsing / echo
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw std::invalid_argument("config key '" + key + "': bad boolean '" + v + "'");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"run.system", [](RunConfig& c, const std::string& v) { c.system = system_from_name(v); }},
      {"run.seed", [](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); }},
      {"run.threads", [](RunConfig& c, const std::string& v) { c.threads = std::stoi(v); }},
      {"solver.grid_high", [](RunConfig& c, const std::string& v) { c.grid_high = std::stoi(v); }},
      {"solver.grid_low", [](RunConfig& c, const std::string& v) { c.grid_low = std::stoi(v); }},
      {"solver.domain", [](RunConfig& c, const std::string& v) { c.domain = std::stod(v); }},
      {"solver.viscosity", [](RunConfig& c, const std::string& v) { c.viscosity = std::stod(v); }},
      {"solver.gravity", [](RunConfig& c, const std::string& v) { c.gravity = std::stod(v); }},
      {"solver.depth", [](RunConfig& c, const std::string& v) { c.depth = std::stod(v); }},
      {"solver.cfl_safety", [](RunConfig& c, const std::string& v) { c.cfl_safety = std::stod(v); }},
      {"solver.snap_interval", [](RunConfig& c, const std::string& v) { c.snap_interval = std::stod(v); }},
      {"solver.n_step", [](RunConfig& c, const std::string& v) { c.n_step = std::stoi(v); }},
      {"solver.patch_vel_min", [](RunConfig& c, const std::string& v) { c.patch_vel_min = std::stod(v); }},
      {"solver.patch_vel_max", [](RunConfig& c, const std::string& v) { c.patch_vel_max = std::stod(v); }},
      {"solver.background", [](RunConfig& c, const std::string& v) { c.background = std::stod(v); }},
      {"solver.cyl_height_min", [](RunConfig& c, const std::string& v) { c.cyl_height_min = std::stod(v); }},
      {"solver.cyl_height_max", [](RunConfig& c, const std::string& v) { c.cyl_height_max = std::stod(v); }},
      {"solver.cyl_radius_min", [](RunConfig& c, const std::string& v) { c.cyl_radius_min = std::stod(v); }},
      {"solver.cyl_radius_max", [](RunConfig& c, const std::string& v) { c.cyl_radius_max = std::stod(v); }},
      {"solver.radius_unit_dx", [](RunConfig& c, const std::string& v) { c.radius_unit_dx = std::stod(v); }},
      {"dataset.n_train", [](RunConfig& c, const std::string& v) { c.n_train = std::stoi(v); }},
      {"dataset.n_test", [](RunConfig& c, const std::string& v) { c.n_test = std::stoi(v); }},
      {"model.latent_dim", [](RunConfig& c, const std::string& v) { c.latent_dim = std::stoi(v); }},
      {"model.hidden_dim", [](RunConfig& c, const std::string& v) { c.hidden_dim = std::stoi(v); }},
      {"model.k_in", [](RunConfig& c, const std::string& v) { c.k_in = std::stoi(v); }},
      {"model.k_out", [](RunConfig& c, const std::string& v) { c.k_out = std::stoi(v); }},
      {"train.cae_epochs", [](RunConfig& c, const std::string& v) { c.cae_epochs = std::stoi(v); }},
      {"train.lstm_epochs", [](RunConfig& c, const std::string& v) { c.lstm_epochs = std::stoi(v); }},
      {"train.lr", [](RunConfig& c, const std::string& v) { c.lr = std::stod(v); }},
      {"train.batch", [](RunConfig& c, const std::string& v) { c.batch = std::stoi(v); }},
      {"constraints.energy", [](RunConfig& c, const std::string& v) { c.energy = parse_bool(v, "constraints.energy"); }},
      {"constraints.alpha_energy", [](RunConfig& c, const std::string& v) { c.alpha_energy = std::stod(v); }},
      {"constraints.flow", [](RunConfig& c, const std::string& v) { c.flow = parse_bool(v, "constraints.flow"); }},
      {"constraints.alpha_flow", [](RunConfig& c, const std::string& v) { c.alpha_flow = std::stod(v); }},
      {"constraints.fidelity", [](RunConfig& c, const std::string& v) { c.constraint_fidelity = fidelity_from_name(v); }},
      {"constraints.latent_source",
       [](RunConfig& c, const std::string& v) {
         if (v == "high_only") c.latent_source = LatentSource::high_only;
         else if (v == "multi_fidelity") c.latent_source = LatentSource::multi_fidelity;
         else throw std::invalid_argument("config key 'constraints.latent_source': bad value '" + v + "'");
       }},
      {"alphas.ec_hf", [](RunConfig& c, const std::string& v) { c.alpha_ec_hf = std::stod(v); }},
      {"alphas.ec_lf", [](RunConfig& c, const std::string& v) { c.alpha_ec_lf = std::stod(v); }},
      {"alphas.fo_hf", [](RunConfig& c, const std::string& v) { c.alpha_fo_hf = std::stod(v); }},
      {"alphas.fo_lf", [](RunConfig& c, const std::string& v) { c.alpha_fo_lf = std::stod(v); }},
      {"alphas.ec_mul_hf", [](RunConfig& c, const std::string& v) { c.alpha_ec_mul_hf = std::stod(v); }},
      {"alphas.ec_mul_lf", [](RunConfig& c, const std::string& v) { c.alpha_ec_mul_lf = std::stod(v); }},
      {"alphas.fo_mul_hf", [](RunConfig& c, const std::string& v) { c.alpha_fo_mul_hf = std::stod(v); }},
      {"alphas.fo_mul_lf", [](RunConfig& c, const std::string& v) { c.alpha_fo_mul_lf = std::stod(v); }},
      {"eval.horizon", [](RunConfig& c, const std::string& v) { c.horizon = std::stoi(v); }},
      {"eval.histogram_bins", [](RunConfig& c, const std::string& v) { c.histogram_bins = std::stoi(v); }},
      {"noise.sigma_fraction", [](RunConfig& c, const std::string& v) { c.noise_sigma_fraction = std::stod(v); }},
      {"noise.length", [](RunConfig& c, const std::string& v) { c.noise_length = std::stod(v); }},
  };
  return table;
}

}  // namespace

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto pos = line.find('=');
    if (pos == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed line '" + line + "'");
    const std::string key = section + "." + trim(line.substr(0, pos));
    const std::string value = trim(line.substr(pos + 1));
    auto it = setters().find(key);
    if (it == setters().end())
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": unknown config key '" + key + "'");
    it->second(base, value);
  }
  return base;
}

void echo_run_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "[run]\n";
  out << "system = " << system_name(c.system) << "\n";
  out << "seed = " << c.seed << "\n";
  out << "threads = " << c.threads << "\n";
  out << "\n[solver]\n";
  out << "grid_high = " << c.grid_high << "\n";
  out << "grid_low = " << c.grid_low << "\n";
  out << "domain = " << fmt(c.domain) << "\n";
  out << "viscosity = " << fmt(c.viscosity) << "\n";
  out << "gravity = " << fmt(c.gravity) << "\n";
  out << "depth = " << fmt(c.depth) << "\n";
  out << "cfl_safety = " << fmt(c.cfl_safety) << "\n";
  out << "snap_interval = " << fmt(c.snap_interval) << "\n";
  out << "n_step = " << c.n_step << "\n";
  out << "patch_vel_min = " << fmt(c.patch_vel_min) << "\n";
  out << "patch_vel_max = " << fmt(c.patch_vel_max) << "\n";
  out << "background = " << fmt(c.background) << "\n";
  out << "cyl_height_min = " << fmt(c.cyl_height_min) << "\n";
  out << "cyl_height_max = " << fmt(c.cyl_height_max) << "\n";
  out << "cyl_radius_min = " << fmt(c.cyl_radius_min) << "\n";
  out << "cyl_radius_max = " << fmt(c.cyl_radius_max) << "\n";
  out << "radius_unit_dx = " << fmt(c.radius_unit_dx) << "\n";
  out << "\n[dataset]\n";
  out << "n_train = " << c.n_train << "\n";
  out << "n_test = " << c.n_test << "\n";
  out << "\n[model]\n";
  out << "latent_dim = " << c.latent_dim << "\n";
  out << "hidden_dim = " << c.hidden_dim << "\n";
  out << "k_in = " << c.k_in << "\n";
  out << "k_out = " << c.k_out << "\n";
  out << "\n[train]\n";
  out << "cae_epochs = " << c.cae_epochs << "\n";
  out << "lstm_epochs = " << c.lstm_epochs << "\n";
  out << "lr = " << fmt(c.lr) << "\n";
  out << "batch = " << c.batch << "\n";
  out << "\n[constraints]\n";
  out << "energy = " << (c.energy ? 1 : 0) << "\n";
  out << "alpha_energy = " << fmt(c.alpha_energy) << "\n";
  out << "flow = " << (c.flow ? 1 : 0) << "\n";
  out << "alpha_flow = " << fmt(c.alpha_flow) << "\n";
  out << "fidelity = " << fidelity_name(c.constraint_fidelity) << "\n";
  out << "latent_source = "
      << (c.latent_source == LatentSource::high_only ? "high_only" : "multi_fidelity")
      << "\n";
  out << "\n[alphas]\n";
  out << "ec_hf = " << fmt(c.alpha_ec_hf) << "\n";
  out << "ec_lf = " << fmt(c.alpha_ec_lf) << "\n";
  out << "fo_hf = " << fmt(c.alpha_fo_hf) << "\n";
  out << "fo_lf = " << fmt(c.alpha_fo_lf) << "\n";
  out << "ec_mul_hf = " << fmt(c.alpha_ec_mul_hf) << "\n";
  out << "ec_mul_lf = " << fmt(c.alpha_ec_mul_lf) << "\n";
  out << "fo_mul_hf = " << fmt(c.alpha_fo_mul_hf) << "\n";
  out << "fo_mul_lf = " << fmt(c.alpha_fo_mul_lf) << "\n";
  out << "\n[eval]\n";
  out << "horizon = " << c.horizon << "\n";
  out << "histogram_bins = " << c.histogram_bins << "\n";
  out << "\n[noise]\n";
  out << "sigma_fraction = " << fmt(c.noise_sigma_fraction) << "\n";
  out << "length = " << fmt(c.noise_length) << "\n";
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace mfs
