#include "mfs/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace fs = std::filesystem;

namespace mfs {

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + name + "'");
}

Trajectory make_trajectory(const RawTrajectory& raw, Fidelity fidelity) {
  Trajectory t;
  t.system = raw.system;
  t.fidelity = fidelity;
  t.seed = raw.seed;
  t.config = raw.config;
  t.fields = raw.fields;
  return t;
}

// ---------------------------------------------------------------------------
// key = value files
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_float(float v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

const std::string& get_required(const std::map<std::string, std::string>& kv,
                                const std::string& key, const std::string& path) {
  auto it = kv.find(key);
  if (it == kv.end())
    throw std::runtime_error(path + ": missing key '" + key + "'");
  return it->second;
}

}  // namespace

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto pos = line.find('=');
    if (pos == std::string::npos)
      throw std::runtime_error(path + ": malformed line '" + line + "'");
    kv[trim(line.substr(0, pos))] = trim(line.substr(pos + 1));
  }
  return kv;
}

void write_kv_file(const std::string& path,
                   const std::vector<std::pair<std::string, std::string>>& kv) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  if (!out) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// solver config <-> key/value
// ---------------------------------------------------------------------------

namespace {

void config_to_kv(const SolverConfig& cfg, const std::string& prefix,
                  std::vector<std::pair<std::string, std::string>>& kv) {
  if (const auto* b = std::get_if<BurgersConfig>(&cfg)) {
    kv.emplace_back(prefix + "system", "burgers");
    kv.emplace_back(prefix + "n", std::to_string(b->n));
    kv.emplace_back(prefix + "domain", fmt_double(b->domain));
    kv.emplace_back(prefix + "viscosity", fmt_double(b->viscosity));
    kv.emplace_back(prefix + "cfl_safety", fmt_double(b->cfl_safety));
    kv.emplace_back(prefix + "snap_interval", fmt_double(b->snap_interval));
    kv.emplace_back(prefix + "n_step", std::to_string(b->n_step));
    kv.emplace_back(prefix + "patch_vel_min", fmt_double(b->patch_vel_min));
    kv.emplace_back(prefix + "patch_vel_max", fmt_double(b->patch_vel_max));
    kv.emplace_back(prefix + "background", fmt_double(b->background));
  } else {
    const auto& s = std::get<SweConfig>(cfg);
    kv.emplace_back(prefix + "system", "shallow_water");
    kv.emplace_back(prefix + "n", std::to_string(s.n));
    kv.emplace_back(prefix + "domain", fmt_double(s.domain));
    kv.emplace_back(prefix + "g", fmt_double(s.g));
    kv.emplace_back(prefix + "depth", fmt_double(s.depth));
    kv.emplace_back(prefix + "cfl_safety", fmt_double(s.cfl_safety));
    kv.emplace_back(prefix + "snap_interval", fmt_double(s.snap_interval));
    kv.emplace_back(prefix + "n_step", std::to_string(s.n_step));
    kv.emplace_back(prefix + "cyl_height_min", fmt_double(s.cyl_height_min));
    kv.emplace_back(prefix + "cyl_height_max", fmt_double(s.cyl_height_max));
    kv.emplace_back(prefix + "cyl_radius_min", fmt_double(s.cyl_radius_min));
    kv.emplace_back(prefix + "cyl_radius_max", fmt_double(s.cyl_radius_max));
    kv.emplace_back(prefix + "radius_unit_dx", fmt_double(s.radius_unit_dx));
  }
}

SolverConfig config_from_kv(const std::map<std::string, std::string>& kv,
                            const std::string& prefix, const std::string& path) {
  auto get = [&](const std::string& key) -> const std::string& {
    return get_required(kv, prefix + key, path);
  };
  const System sys = system_from_name(get("system"));
  if (sys == System::burgers) {
    BurgersConfig b;
    b.n = std::stoi(get("n"));
    b.domain = std::stod(get("domain"));
    b.viscosity = std::stod(get("viscosity"));
    b.cfl_safety = std::stod(get("cfl_safety"));
    b.snap_interval = std::stod(get("snap_interval"));
    b.n_step = std::stoi(get("n_step"));
    b.patch_vel_min = std::stod(get("patch_vel_min"));
    b.patch_vel_max = std::stod(get("patch_vel_max"));
    b.background = std::stod(get("background"));
    return b;
  }
  SweConfig s;
  s.n = std::stoi(get("n"));
  s.domain = std::stod(get("domain"));
  s.g = std::stod(get("g"));
  s.depth = std::stod(get("depth"));
  s.cfl_safety = std::stod(get("cfl_safety"));
  s.snap_interval = std::stod(get("snap_interval"));
  s.n_step = std::stoi(get("n_step"));
  s.cyl_height_min = std::stod(get("cyl_height_min"));
  s.cyl_height_max = std::stod(get("cyl_height_max"));
  s.cyl_radius_min = std::stod(get("cyl_radius_min"));
  s.cyl_radius_max = std::stod(get("cyl_radius_max"));
  s.radius_unit_dx = std::stod(get("radius_unit_dx"));
  return s;
}

std::string meta_path(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".f32")
    return path.substr(0, path.size() - 4) + ".meta";
  return path + ".meta";
}

}  // namespace

// ---------------------------------------------------------------------------
// trajectory persistence
// ---------------------------------------------------------------------------

void save_trajectory(const Trajectory& traj, const std::string& path) {
  if (traj.fields.empty())
    throw std::invalid_argument("save_trajectory: empty trajectory");
  const Field& f0 = traj.fields.front();
  for (const Field& f : traj.fields)
    if (f.height != f0.height || f.width != f0.width || f.system != f0.system)
      throw std::invalid_argument("save_trajectory: inconsistent field shapes");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const Field& f : traj.fields)
    out.write(reinterpret_cast<const char*>(f.data.data()),
              static_cast<std::streamsize>(f.data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write failed for " + path);
  out.close();

  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("format_version", "1");
  kv.emplace_back("system", system_name(traj.system));
  kv.emplace_back("fidelity", fidelity_name(traj.fidelity));
  kv.emplace_back("seed", std::to_string(traj.seed));
  kv.emplace_back("n_step", std::to_string(traj.n_step()));
  kv.emplace_back("channels", std::to_string(f0.channels()));
  kv.emplace_back("height", std::to_string(f0.height));
  kv.emplace_back("width", std::to_string(f0.width));
  kv.emplace_back("domain_x", fmt_double(f0.domain_x));
  kv.emplace_back("domain_y", fmt_double(f0.domain_y));
  config_to_kv(traj.config, "solver_", kv);
  write_kv_file(meta_path(path), kv);
}

Trajectory load_trajectory(const std::string& path) {
  const std::string mpath = meta_path(path);
  auto kv = read_kv_file(mpath);
  Trajectory traj;
  traj.system = system_from_name(get_required(kv, "system", mpath));
  traj.fidelity = fidelity_from_name(get_required(kv, "fidelity", mpath));
  traj.seed = std::stoull(get_required(kv, "seed", mpath));
  const int n_step = std::stoi(get_required(kv, "n_step", mpath));
  const int channels = std::stoi(get_required(kv, "channels", mpath));
  const int height = std::stoi(get_required(kv, "height", mpath));
  const int width = std::stoi(get_required(kv, "width", mpath));
  traj.config = config_from_kv(kv, "solver_", mpath);

  if (channels != (traj.system == System::burgers ? 2 : 3))
    throw std::runtime_error(mpath + ": channel count " + std::to_string(channels) +
                             " invalid for system " + system_name(traj.system));
  if (solver_grid(traj.config) != height || height != width)
    throw std::runtime_error(mpath + ": declared grid " + std::to_string(height) + "x" +
                             std::to_string(width) + " does not match solver config grid " +
                             std::to_string(solver_grid(traj.config)));

  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  in.seekg(0, std::ios::end);
  const int64_t actual = static_cast<int64_t>(in.tellg());
  const int64_t expected =
      static_cast<int64_t>(n_step) * channels * height * width * sizeof(float);
  if (actual != expected)
    throw std::runtime_error(path + ": expected " + std::to_string(expected) +
                             " bytes, found " + std::to_string(actual));
  in.seekg(0);

  const double domain_x = std::stod(get_required(kv, "domain_x", mpath));
  const double domain_y = std::stod(get_required(kv, "domain_y", mpath));
  traj.fields.reserve(n_step);
  for (int i = 0; i < n_step; ++i) {
    Field f;
    f.system = traj.system;
    f.height = height;
    f.width = width;
    f.domain_x = domain_x;
    f.domain_y = domain_y;
    f.data.resize(static_cast<size_t>(channels) * height * width);
    in.read(reinterpret_cast<char*>(f.data.data()),
            static_cast<std::streamsize>(f.data.size() * sizeof(float)));
    if (!in) throw std::runtime_error(path + ": short read at snapshot " + std::to_string(i));
    traj.fields.push_back(std::move(f));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// windowing
// ---------------------------------------------------------------------------

std::vector<WindowSample> window(int series_len, const WindowSpec& spec) {
  if (spec.k_in < 1 || spec.k_out < 1)
    throw std::invalid_argument("window: k_in and k_out must be >= 1");
  if (series_len < spec.k_in + spec.k_out)
    throw std::invalid_argument("window: series of length " + std::to_string(series_len) +
                                " shorter than k_in + k_out = " +
                                std::to_string(spec.k_in + spec.k_out));
  std::vector<WindowSample> out;
  const int count = series_len - spec.k_in - spec.k_out + 1;
  out.reserve(count);
  for (int j = 0; j < count; ++j) out.push_back({j, j + spec.k_in});
  return out;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

std::vector<int> DatasetManifest::pair_indices(Split split) const {
  std::vector<int> out;
  for (const auto& e : entries)
    if (e.split == split && e.fidelity == Fidelity::high) out.push_back(e.pair_index);
  std::sort(out.begin(), out.end());
  return out;
}

std::pair<const TrajEntry*, const TrajEntry*> DatasetManifest::pair(int pair_index) const {
  const TrajEntry* hi = nullptr;
  const TrajEntry* lo = nullptr;
  for (const auto& e : entries) {
    if (e.pair_index != pair_index) continue;
    (e.fidelity == Fidelity::high ? hi : lo) = &e;
  }
  if (!hi || !lo)
    throw std::runtime_error("manifest: pair " + std::to_string(pair_index) +
                             " is missing a fidelity");
  return {hi, lo};
}

std::string DatasetManifest::entry_path(const TrajEntry& e) const {
  return (fs::path(root) / e.path).string();
}

void save_manifest(const DatasetManifest& m) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("format_version", std::to_string(m.format_version));
  kv.emplace_back("system", system_name(m.system));
  kv.emplace_back("n_entries", std::to_string(m.entries.size()));
  for (size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    const std::string p = "entry_" + std::to_string(i) + "_";
    kv.emplace_back(p + "path", e.path);
    kv.emplace_back(p + "fidelity", fidelity_name(e.fidelity));
    kv.emplace_back(p + "seed", std::to_string(e.seed));
    kv.emplace_back(p + "system", system_name(e.system));
    kv.emplace_back(p + "grid", std::to_string(e.grid));
    kv.emplace_back(p + "n_step", std::to_string(e.n_step));
    kv.emplace_back(p + "split", split_name(e.split));
    kv.emplace_back(p + "pair", std::to_string(e.pair_index));
  }
  kv.emplace_back("norm_channels", std::to_string(m.norm.channels()));
  for (int c = 0; c < m.norm.channels(); ++c) {
    const std::string p = "norm_ch" + std::to_string(c) + "_";
    kv.emplace_back(p + "min", fmt_float(m.norm.ch_min[c]));
    kv.emplace_back(p + "max", fmt_float(m.norm.ch_max[c]));
    kv.emplace_back(p + "degenerate", m.norm.degenerate[c] ? "1" : "0");
  }
  config_to_kv(m.high_config, "high_", kv);
  config_to_kv(m.low_config, "low_", kv);
  write_kv_file((fs::path(m.root) / "manifest").string(), kv);
}

DatasetManifest load_manifest(const std::string& root) {
  const std::string path = (fs::path(root) / "manifest").string();
  auto kv = read_kv_file(path);
  DatasetManifest m;
  m.root = root;
  m.format_version = std::stoi(get_required(kv, "format_version", path));
  m.system = system_from_name(get_required(kv, "system", path));
  const int n = std::stoi(get_required(kv, "n_entries", path));
  for (int i = 0; i < n; ++i) {
    const std::string p = "entry_" + std::to_string(i) + "_";
    TrajEntry e;
    e.path = get_required(kv, p + "path", path);
    e.fidelity = fidelity_from_name(get_required(kv, p + "fidelity", path));
    e.seed = std::stoull(get_required(kv, p + "seed", path));
    e.system = system_from_name(get_required(kv, p + "system", path));
    e.grid = std::stoi(get_required(kv, p + "grid", path));
    e.n_step = std::stoi(get_required(kv, p + "n_step", path));
    e.split = split_from_name(get_required(kv, p + "split", path));
    e.pair_index = std::stoi(get_required(kv, p + "pair", path));
    if (!fs::exists(fs::path(root) / e.path))
      throw std::runtime_error(path + ": referenced file missing: " + e.path);
    m.entries.push_back(std::move(e));
  }
  const int nc = std::stoi(get_required(kv, "norm_channels", path));
  for (int c = 0; c < nc; ++c) {
    const std::string p = "norm_ch" + std::to_string(c) + "_";
    m.norm.ch_min.push_back(std::stof(get_required(kv, p + "min", path)));
    m.norm.ch_max.push_back(std::stof(get_required(kv, p + "max", path)));
    m.norm.degenerate.push_back(get_required(kv, p + "degenerate", path) == "1");
  }
  m.high_config = config_from_kv(kv, "high_", path);
  m.low_config = config_from_kv(kv, "low_", path);
  return m;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

NormRecord fit_normalization(const DatasetManifest& m) {
  NormRecord norm;
  bool first = true;
  for (const auto& e : m.entries) {
    if (e.split != Split::train) continue;
    Trajectory t = load_trajectory(m.entry_path(e));
    for (const Field& f : t.fields) {
      const int c = f.channels();
      if (first) {
        norm.ch_min.assign(c, f.data[0]);
        norm.ch_max.assign(c, f.data[0]);
        first = false;
      }
      const size_t plane = static_cast<size_t>(f.height) * f.width;
      for (int ch = 0; ch < c; ++ch) {
        const float* p = f.data.data() + ch * plane;
        for (size_t i = 0; i < plane; ++i) {
          norm.ch_min[ch] = std::min(norm.ch_min[ch], p[i]);
          norm.ch_max[ch] = std::max(norm.ch_max[ch], p[i]);
        }
      }
    }
  }
  if (first) throw std::runtime_error("fit_normalization: no train-split entries");
  norm.degenerate.resize(norm.ch_min.size());
  for (size_t c = 0; c < norm.ch_min.size(); ++c)
    norm.degenerate[c] = norm.ch_max[c] == norm.ch_min[c];
  return norm;
}

Field normalize(const Field& f, const NormRecord& norm, ClampStats* stats) {
  if (f.channels() != norm.channels())
    throw std::invalid_argument("normalize: field has " + std::to_string(f.channels()) +
                                " channels, record has " +
                                std::to_string(norm.channels()));
  Field out = f;
  const size_t plane = static_cast<size_t>(f.height) * f.width;
  for (int c = 0; c < f.channels(); ++c) {
    float* p = out.data.data() + c * plane;
    if (norm.degenerate[c]) {
      for (size_t i = 0; i < plane; ++i) p[i] = 0.5f;
      continue;
    }
    const float lo = norm.ch_min[c];
    const float inv = 1.0f / norm.range(c);
    for (size_t i = 0; i < plane; ++i) {
      float v = (p[i] - lo) * inv;
      if (v < 0.0f || v > 1.0f) {
        if (stats) ++stats->clamped;
        v = v < 0.0f ? 0.0f : 1.0f;
      }
      p[i] = v;
    }
  }
  if (stats) stats->total += static_cast<int64_t>(plane) * f.channels();
  return out;
}

Field denormalize(const Field& f, const NormRecord& norm) {
  if (f.channels() != norm.channels())
    throw std::invalid_argument("denormalize: field has " + std::to_string(f.channels()) +
                                " channels, record has " +
                                std::to_string(norm.channels()));
  Field out = f;
  const size_t plane = static_cast<size_t>(f.height) * f.width;
  for (int c = 0; c < f.channels(); ++c) {
    float* p = out.data.data() + c * plane;
    const float lo = norm.ch_min[c];
    const float r = norm.range(c);
    for (size_t i = 0; i < plane; ++i) p[i] = p[i] * r + lo;
  }
  return out;
}

// ---------------------------------------------------------------------------
// dataset generation
// ---------------------------------------------------------------------------

DatasetManifest generate_dataset(const SolverConfig& high_cfg,
                                 const SolverConfig& low_cfg,
                                 const GenerateOptions& opt,
                                 const std::string& root) {
  if (opt.n_train < 1 || opt.n_test < 1)
    throw std::invalid_argument("generate_dataset: counts must be >= 1");
  if (solver_system(high_cfg) != solver_system(low_cfg))
    throw std::invalid_argument("generate_dataset: fidelity configs disagree on system");
  fs::create_directories(root);

  const int n_pairs = opt.n_train + opt.n_test;
  const int n_val = opt.n_train >= 2 ? std::max(1, opt.n_train / 10) : 0;

  DatasetManifest m;
  m.system = solver_system(high_cfg);
  m.root = root;
  m.high_config = high_cfg;
  m.low_config = low_cfg;
  m.entries.resize(static_cast<size_t>(n_pairs) * 2);

  auto run_pair = [&](int i) {
    const uint64_t pair_seed = opt.seed + static_cast<uint64_t>(i);
    Split split = Split::train;
    if (i >= opt.n_train) split = Split::test;
    else if (i >= opt.n_train - n_val) split = Split::val;

    for (int fi = 0; fi < 2; ++fi) {
      const Fidelity fid = fi == 0 ? Fidelity::high : Fidelity::low;
      const SolverConfig& cfg = fi == 0 ? high_cfg : low_cfg;
      Trajectory t = make_trajectory(simulate(cfg, pair_seed), fid);
      TrajEntry e;
      e.path = "traj_" + std::to_string(pair_seed) + "_" + fidelity_name(fid) + ".f32";
      e.fidelity = fid;
      e.seed = pair_seed;
      e.system = m.system;
      e.grid = solver_grid(cfg);
      e.n_step = t.n_step();
      e.split = split;
      e.pair_index = i;
      save_trajectory(t, (fs::path(root) / e.path).string());
      m.entries[static_cast<size_t>(i) * 2 + fi] = std::move(e);
    }
  };

  const int threads = std::max(1, opt.threads);
  if (threads == 1) {
    for (int i = 0; i < n_pairs; ++i) run_pair(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t]() {
        try {
          for (int i = t; i < n_pairs; i += threads) run_pair(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors)
      if (err) std::rethrow_exception(err);
  }

  m.norm = fit_normalization(m);
  save_manifest(m);
  return m;
}

}  // namespace mfs
