#pragma once

#include <cstdint>
#include <string>

#include "mfs/data.hpp"
#include "mfs/training.hpp"

// The CLI-facing configuration: one structured-text file mirroring every
// module config, resolved from a named profile plus optional overrides.
// Unknown keys are rejected; every run echoes its resolved config.

namespace mfs {

struct RunConfig {
  // [run]
  System system = System::burgers;
  uint64_t seed = 0;
  int threads = 1;

  // [solver]
  int grid_high = 65;
  int grid_low = 17;
  double domain = 1.0;
  double viscosity = 0.01;  // burgers
  double gravity = 9.81;    // shallow water
  double depth = 1.0;
  double cfl_safety = 0.2;
  double snap_interval = 0.0015;
  int n_step = 60;
  double patch_vel_min = 1.5;
  double patch_vel_max = 5.0;
  double background = 1.0;
  double cyl_height_min = 0.2;
  double cyl_height_max = 1.0;
  double cyl_radius_min = 4.0;
  double cyl_radius_max = 16.0;
  double radius_unit_dx = 1.0;

  // [dataset]
  int n_train = 20;
  int n_test = 5;

  // [model]
  int latent_dim = 128;
  int hidden_dim = 256;
  int k_in = 3;
  int k_out = 3;

  // [train]
  int cae_epochs = 30;
  int lstm_epochs = 20;
  double lr = 1e-3;
  int batch = 16;

  // [constraints]
  bool energy = false;
  double alpha_energy = 0.0;
  bool flow = false;
  double alpha_flow = 0.0;
  Fidelity constraint_fidelity = Fidelity::low;
  LatentSource latent_source = LatentSource::high_only;

  // [alphas] — per-row defaults for the reproduce matrix
  double alpha_ec_hf = 2.0e-6;
  double alpha_ec_lf = 2.8e-4;
  double alpha_fo_hf = 2.5e-3;
  double alpha_fo_lf = 8.5e-4;
  double alpha_ec_mul_hf = 4.3e-6;
  double alpha_ec_mul_lf = 1.1e-4;
  double alpha_fo_mul_hf = 1.2e-3;
  double alpha_fo_mul_lf = 5.0e-4;

  // [eval]
  int horizon = 30;
  int histogram_bins = 20;

  // [noise]
  double noise_sigma_fraction = 0.05;
  double noise_length = 4.0;

  SolverConfig high_config() const;
  SolverConfig low_config() const;
  TrainConfig cae_train_config() const;
  TrainConfig lstm_train_config() const;

  // Named presets: "desk" (CI scale) or "paper" (the reported setup).
  static RunConfig profile(const std::string& name, System system);
};

// Applies `key = value` lines under [section] headers onto `base`.
// Unknown section/key pairs are rejected by name.
RunConfig load_run_config(const std::string& path, RunConfig base);

// Writes the fully-resolved config; re-loading it reproduces the struct.
void echo_run_config(const RunConfig& cfg, const std::string& path);

}  // namespace mfs
