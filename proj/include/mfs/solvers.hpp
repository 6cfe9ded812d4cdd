#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

// Finite-difference integrators for the 2D Burgers' system and the shallow
// water system. The same physics runs at any grid resolution, so one seed
// yields a matched high/low-fidelity trajectory pair; the stepper also acts
// as the flow operator inside the physics losses.

namespace mfs {

enum class System { burgers, shallow_water };
enum class Fidelity { high, low };

std::string system_name(System s);
System system_from_name(const std::string& name);
std::string fidelity_name(Fidelity f);
Fidelity fidelity_from_name(const std::string& name);

// One spatial snapshot: [C,H,W] grid of physical values on a square domain.
// Burgers carries u,v (m/s); shallow water carries h (m), u, v (m/s).
struct Field {
  System system = System::burgers;
  int height = 0;
  int width = 0;
  double domain_x = 1.0;  // physical extent in meters
  double domain_y = 1.0;
  std::vector<float> data;  // [C][H][W], row-major

  int channels() const { return system == System::burgers ? 2 : 3; }
  double dx() const { return domain_x / (width - 1); }
  double dy() const { return domain_y / (height - 1); }
  double cell_area() const { return dx() * dy(); }

  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  static Field zeros(System system, int n, double domain);
  void check_valid() const;  // finiteness; h > 0 for shallow water
};

struct BurgersConfig {
  int n = 129;               // grid points per side (high 129, low 33)
  double domain = 1.0;       // meters
  double viscosity = 0.01;   // N*s/m^2
  double cfl_safety = 0.2;
  double snap_interval = 0.0015;  // physical seconds between stored snapshots
  int n_step = 100;               // snapshots per trajectory (incl. initial)
  double patch_vel_min = 1.5;     // m/s
  double patch_vel_max = 5.0;
  double background = 1.0;

  double dt_bound() const;  // cfl_safety * min(dx/v_max, dx^2/(4 nu))
  int substeps() const;     // solver steps per snapshot interval
  double dt() const { return snap_interval / substeps(); }
};

struct SweConfig {
  int n = 64;              // grid points per side (high 64, low 32)
  double domain = 63.0;    // meters
  double g = 9.81;         // m/s^2
  double depth = 1.0;      // undisturbed water depth, meters
  // The central-difference step needs a much smaller Courant number than the
  // upwinded Burgers step to hold a full trajectory together.
  double cfl_safety = 0.05;
  double snap_interval = 0.09;
  int n_step = 100;
  double cyl_height_min = 0.2;  // meters
  double cyl_height_max = 1.0;
  double cyl_radius_min = 4.0;  // in high-fidelity grid units
  double cyl_radius_max = 16.0;
  double radius_unit_dx = 1.0;  // meters per high-fidelity grid unit

  double dt_bound() const;  // cfl_safety * dx / sqrt(g * h_max)
  int substeps() const;
  double dt() const { return snap_interval / substeps(); }
};

using SolverConfig = std::variant<BurgersConfig, SweConfig>;

System solver_system(const SolverConfig& cfg);
int solver_grid(const SolverConfig& cfg);
double solver_domain(const SolverConfig& cfg);
int solver_substeps(const SolverConfig& cfg);
int solver_n_step(const SolverConfig& cfg);
double solver_snap_interval(const SolverConfig& cfg);

// Sampled initial-condition parameters, shared across fidelities so that both
// grids discretize the same physical state.
struct BurgersIc {
  double patch_velocity = 1.5;  // m/s inside the centered square patch
};
struct SweIc {
  double height = 0.2;      // cylinder amplitude, meters
  double radius_phys = 4.0; // meters
  double cx = 0.5;          // center, meters
  double cy = 0.5;
};

BurgersIc sample_burgers_ic(const BurgersConfig& cfg, uint64_t seed);
SweIc sample_swe_ic(const SweConfig& cfg, uint64_t seed);
Field evaluate_burgers_ic(const BurgersConfig& cfg, const BurgersIc& ic);
Field evaluate_swe_ic(const SweConfig& cfg, const SweIc& ic);
Field initial_condition(const SolverConfig& cfg, uint64_t seed);

// One explicit Euler step. Burgers: backward differences for convection,
// central for diffusion, boundary rows/columns held at their current
// (Dirichlet) values. Shallow water: conservative form with central flux
// differences and reflective walls. Both throw on instability (CFL violation
// for Burgers, non-positive depth for shallow water).
Field burgers_step(const Field& state, const BurgersConfig& cfg);
Field swe_step(const Field& state, const SweConfig& cfg);
Field solver_step(const Field& state, const SolverConfig& cfg);

// Advances one snapshot interval (substeps() internal steps) — the flow
// operator f of the physics losses.
Field advance_snapshot(const Field& state, const SolverConfig& cfg);

struct RawTrajectory {
  System system;
  uint64_t seed = 0;
  SolverConfig config;
  std::vector<Field> fields;  // n_step snapshots, fields[0] = initial state
};

// n_step snapshots at times 0, tau, 2*tau, ... High- and low-fidelity runs
// with the same seed share the analytic initial condition and snapshot times.
RawTrajectory simulate(const SolverConfig& cfg, uint64_t seed);

// Re = V * L / nu. All arguments must be positive.
double reynolds(double velocity, double length, double viscosity);

}  // namespace mfs
