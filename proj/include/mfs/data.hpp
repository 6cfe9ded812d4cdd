#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfs/solvers.hpp"

// Generation, normalization, windowing and persistence of paired
// high/low-fidelity datasets.

namespace mfs {

enum class Split { train, val, test };
std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct Trajectory {
  System system = System::burgers;
  Fidelity fidelity = Fidelity::high;
  uint64_t seed = 0;
  SolverConfig config;       // solver provenance (grid, dt, substeps, ...)
  std::vector<Field> fields; // x_1 .. x_{n_step}

  int n_step() const { return static_cast<int>(fields.size()); }
};

Trajectory make_trajectory(const RawTrajectory& raw, Fidelity fidelity);

// Little-endian float32 payload plus a `key = value` text sidecar; the
// round-trip is bitwise exact and a payload/sidecar mismatch refuses to load.
void save_trajectory(const Trajectory& traj, const std::string& path);
Trajectory load_trajectory(const std::string& path);

struct NormRecord {
  std::vector<float> ch_min;
  std::vector<float> ch_max;
  std::vector<uint8_t> degenerate;  // max == min, mapped to constant 0.5

  int channels() const { return static_cast<int>(ch_min.size()); }
  float range(int c) const { return ch_max[c] - ch_min[c]; }
};

struct ClampStats {
  int64_t clamped = 0;
  int64_t total = 0;
};

struct TrajEntry {
  std::string path;  // relative to the dataset root
  Fidelity fidelity = Fidelity::high;
  uint64_t seed = 0;
  System system = System::burgers;
  int grid = 0;
  int n_step = 0;
  Split split = Split::train;
  int pair_index = 0;
};

struct DatasetManifest {
  int format_version = 1;
  System system = System::burgers;
  std::string root;
  std::vector<TrajEntry> entries;
  NormRecord norm;
  SolverConfig high_config;
  SolverConfig low_config;

  std::vector<int> pair_indices(Split split) const;
  // The high/low entry of a pair, in that order.
  std::pair<const TrajEntry*, const TrajEntry*> pair(int pair_index) const;
  std::string entry_path(const TrajEntry& e) const;
};

struct WindowSpec {
  int k_in = 3;
  int k_out = 3;
};

// Index pairs (input start, target start) for one series; exactly
// n_step - k_in - k_out + 1 samples.
struct WindowSample {
  int input_start;   // inputs [input_start, input_start + k_in)
  int target_start;  // targets [target_start, target_start + k_out)
};
std::vector<WindowSample> window(int series_len, const WindowSpec& spec);

// Generates n_train + n_test fidelity pairs with distinct per-pair seeds,
// holds out ~10% of training pairs as the validation split, fits the
// per-channel min/max normalization on the train split only and writes
// everything under `root`. Deterministic per seed.
struct GenerateOptions {
  int n_train = 20;
  int n_test = 5;
  uint64_t seed = 0;
  int threads = 1;
};
DatasetManifest generate_dataset(const SolverConfig& high_cfg,
                                 const SolverConfig& low_cfg,
                                 const GenerateOptions& opt,
                                 const std::string& root);

void save_manifest(const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& root);

// Per-channel min-max map into [0,1]; values outside the fitted range clamp
// into [0,1] and are counted. Degenerate channels map to constant 0.5.
Field normalize(const Field& f, const NormRecord& norm, ClampStats* stats = nullptr);
Field denormalize(const Field& f, const NormRecord& norm);

// Fits min/max over the train-split trajectories (both fidelities).
NormRecord fit_normalization(const DatasetManifest& m);

// `key = value` text files (also used for sidecars and reports).
std::map<std::string, std::string> read_kv_file(const std::string& path);
void write_kv_file(const std::string& path,
                   const std::vector<std::pair<std::string, std::string>>& kv);

}  // namespace mfs
