#include "mfs/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mfs/tensor.hpp"

namespace mfs {

std::string system_name(System s) {
  return s == System::burgers ? "burgers" : "shallow_water";
}

System system_from_name(const std::string& name) {
  if (name == "burgers") return System::burgers;
  if (name == "shallow_water") return System::shallow_water;
  throw std::invalid_argument("unknown system '" + name + "'");
}

std::string fidelity_name(Fidelity f) {
  return f == Fidelity::high ? "high" : "low";
}

Fidelity fidelity_from_name(const std::string& name) {
  if (name == "high") return Fidelity::high;
  if (name == "low") return Fidelity::low;
  throw std::invalid_argument("unknown fidelity '" + name + "'");
}

Field Field::zeros(System system, int n, double domain) {
  Field f;
  f.system = system;
  f.height = n;
  f.width = n;
  f.domain_x = domain;
  f.domain_y = domain;
  f.data.assign(static_cast<size_t>(f.channels()) * n * n, 0.0f);
  return f;
}

void Field::check_valid() const {
  if (static_cast<size_t>(channels()) * height * width != data.size())
    throw std::runtime_error("Field: data length " + std::to_string(data.size()) +
                             " does not match " + std::to_string(channels()) + "x" +
                             std::to_string(height) + "x" + std::to_string(width));
  for (size_t i = 0; i < data.size(); ++i)
    if (!std::isfinite(data[i]))
      throw std::runtime_error("Field: non-finite value at flat index " +
                               std::to_string(i));
  if (system == System::shallow_water) {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (at(0, y, x) <= 0.0f)
          throw std::runtime_error("Field: non-positive depth at (" +
                                   std::to_string(y) + "," + std::to_string(x) + ")");
  }
}

// ---------------------------------------------------------------------------
// configs
// ---------------------------------------------------------------------------

double BurgersConfig::dt_bound() const {
  const double dx = domain / (n - 1);
  const double conv = dx / patch_vel_max;
  const double diff = dx * dx / (4.0 * viscosity);
  return cfl_safety * std::min(conv, diff);
}

int BurgersConfig::substeps() const {
  return std::max(1, static_cast<int>(std::ceil(snap_interval / dt_bound() - 1e-12)));
}

double SweConfig::dt_bound() const {
  const double dx = domain / (n - 1);
  const double h_max = depth + cyl_height_max;
  return cfl_safety * dx / std::sqrt(g * h_max);
}

int SweConfig::substeps() const {
  return std::max(1, static_cast<int>(std::ceil(snap_interval / dt_bound() - 1e-12)));
}

System solver_system(const SolverConfig& cfg) {
  return std::holds_alternative<BurgersConfig>(cfg) ? System::burgers
                                                    : System::shallow_water;
}
int solver_grid(const SolverConfig& cfg) {
  return std::visit([](const auto& c) { return c.n; }, cfg);
}
double solver_domain(const SolverConfig& cfg) {
  return std::visit([](const auto& c) { return c.domain; }, cfg);
}
int solver_substeps(const SolverConfig& cfg) {
  return std::visit([](const auto& c) { return c.substeps(); }, cfg);
}
int solver_n_step(const SolverConfig& cfg) {
  return std::visit([](const auto& c) { return c.n_step; }, cfg);
}
double solver_snap_interval(const SolverConfig& cfg) {
  return std::visit([](const auto& c) { return c.snap_interval; }, cfg);
}

// ---------------------------------------------------------------------------
// initial conditions
// ---------------------------------------------------------------------------

BurgersIc sample_burgers_ic(const BurgersConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  BurgersIc ic;
  ic.patch_velocity = rng.uniform_double(cfg.patch_vel_min, cfg.patch_vel_max);
  return ic;
}

SweIc sample_swe_ic(const SweConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  SweIc ic;
  ic.height = rng.uniform_double(cfg.cyl_height_min, cfg.cyl_height_max);
  const double units = rng.uniform_double(cfg.cyl_radius_min, cfg.cyl_radius_max);
  ic.radius_phys = units * cfg.radius_unit_dx;
  // Keep the cylinder inside the reflective walls: center in the middle half.
  ic.cx = cfg.domain * (0.25 + 0.5 * rng.uniform_double(0.0, 1.0));
  ic.cy = cfg.domain * (0.25 + 0.5 * rng.uniform_double(0.0, 1.0));
  return ic;
}

Field evaluate_burgers_ic(const BurgersConfig& cfg, const BurgersIc& ic) {
  Field f = Field::zeros(System::burgers, cfg.n, cfg.domain);
  const double lo = 0.25 * cfg.domain;
  const double hi = 0.75 * cfg.domain;
  for (int y = 0; y < cfg.n; ++y) {
    const double py = y * f.dy();
    for (int x = 0; x < cfg.n; ++x) {
      const double px = x * f.dx();
      const bool inside = px >= lo && px <= hi && py >= lo && py <= hi;
      const float v = static_cast<float>(inside ? ic.patch_velocity : cfg.background);
      f.at(0, y, x) = v;
      f.at(1, y, x) = v;
    }
  }
  return f;
}

Field evaluate_swe_ic(const SweConfig& cfg, const SweIc& ic) {
  Field f = Field::zeros(System::shallow_water, cfg.n, cfg.domain);
  // Compactly supported cosine edge over ~1.5 grid units: the plateau keeps
  // max(h) exactly depth+height and the far field exactly depth, while the
  // central-difference stepper is not seeded with grid-frequency content.
  const double edge = 1.5 * cfg.radius_unit_dx;
  for (int y = 0; y < cfg.n; ++y) {
    const double py = y * f.dy();
    for (int x = 0; x < cfg.n; ++x) {
      const double px = x * f.dx();
      const double dxp = px - ic.cx;
      const double dyp = py - ic.cy;
      const double d = std::sqrt(dxp * dxp + dyp * dyp);
      double s = 0.0;
      if (d <= ic.radius_phys - edge) {
        s = 1.0;
      } else if (d < ic.radius_phys + edge) {
        s = 0.5 * (1.0 + std::cos(M_PI * (d - ic.radius_phys + edge) / (2.0 * edge)));
      }
      f.at(0, y, x) = static_cast<float>(cfg.depth + s * ic.height);
      f.at(1, y, x) = 0.0f;
      f.at(2, y, x) = 0.0f;
    }
  }
  return f;
}

Field initial_condition(const SolverConfig& cfg, uint64_t seed) {
  if (const auto* b = std::get_if<BurgersConfig>(&cfg))
    return evaluate_burgers_ic(*b, sample_burgers_ic(*b, seed));
  const auto& s = std::get<SweConfig>(cfg);
  return evaluate_swe_ic(s, sample_swe_ic(s, seed));
}

// ---------------------------------------------------------------------------
// Burgers step
// ---------------------------------------------------------------------------

Field burgers_step(const Field& state, const BurgersConfig& cfg) {
  if (state.system != System::burgers)
    throw std::invalid_argument("burgers_step: field is " + system_name(state.system));
  if (state.height != cfg.n || state.width != cfg.n)
    throw std::invalid_argument("burgers_step: field " + std::to_string(state.height) +
                                "x" + std::to_string(state.width) +
                                " does not match config grid " + std::to_string(cfg.n));
  const int n = cfg.n;
  const double dx = state.dx();
  const double dy = state.dy();
  const double dt = cfg.dt();
  const float nu = static_cast<float>(cfg.viscosity);

  // CFL check on the current state.
  float vmax = 0.0f;
  for (float v : state.data) vmax = std::max(vmax, std::abs(v));
  if (vmax * dt / std::min(dx, dy) > 1.0)
    throw std::runtime_error("burgers_step: CFL violation, |u|_max=" +
                             std::to_string(vmax) + ", dt=" + std::to_string(dt) +
                             ", dx=" + std::to_string(std::min(dx, dy)));

  Field next = state;  // boundary cells keep their Dirichlet values
  const float rdx = static_cast<float>(1.0 / dx);
  const float rdy = static_cast<float>(1.0 / dy);
  const float rdx2 = rdx * rdx;
  const float rdy2 = rdy * rdy;
  const float fdt = static_cast<float>(dt);
  for (int y = 1; y < n - 1; ++y) {
    for (int x = 1; x < n - 1; ++x) {
      const float u = state.at(0, y, x);
      const float v = state.at(1, y, x);
      const float u_w = state.at(0, y, x - 1), u_e = state.at(0, y, x + 1);
      const float u_s = state.at(0, y - 1, x), u_n = state.at(0, y + 1, x);
      const float v_w = state.at(1, y, x - 1), v_e = state.at(1, y, x + 1);
      const float v_s = state.at(1, y - 1, x), v_n = state.at(1, y + 1, x);

      const float conv_u = u * (u - u_w) * rdx + v * (u - u_s) * rdy;
      const float diff_u = (u_e - 2.0f * u + u_w) * rdx2 + (u_n - 2.0f * u + u_s) * rdy2;
      const float conv_v = u * (v - v_w) * rdx + v * (v - v_s) * rdy;
      const float diff_v = (v_e - 2.0f * v + v_w) * rdx2 + (v_n - 2.0f * v + v_s) * rdy2;

      next.at(0, y, x) = u + fdt * (nu * diff_u - conv_u);
      next.at(1, y, x) = v + fdt * (nu * diff_v - conv_v);
    }
  }
  next.check_valid();
  return next;
}

// ---------------------------------------------------------------------------
// shallow water step
// ---------------------------------------------------------------------------

namespace {

// Reflective ghost lookup: mirrors the first interior node, negating the
// normal velocity component. channel: 0=h, 1=u, 2=v.
inline float swe_ghost(const Field& f, int c, int y, int x) {
  float sign = 1.0f;
  if (y < 0) {
    y = 0;
    if (c == 2) sign = -1.0f;
  } else if (y >= f.height) {
    y = f.height - 1;
    if (c == 2) sign = -1.0f;
  }
  if (x < 0) {
    x = 0;
    if (c == 1) sign = -1.0f;
  } else if (x >= f.width) {
    x = f.width - 1;
    if (c == 1) sign = -1.0f;
  }
  return sign * f.at(c, y, x);
}

struct SweFlux {
  float fh_x, fh_y;    // hu, hv
  float fu_x, fu_y;    // hu^2 + g h^2 / 2, huv
  float fv_x, fv_y;    // huv, hv^2 + g h^2 / 2
};

inline SweFlux swe_flux(float h, float u, float v, float g) {
  SweFlux f;
  const float hu = h * u;
  const float hv = h * v;
  const float p = 0.5f * g * h * h;
  f.fh_x = hu;
  f.fh_y = hv;
  f.fu_x = hu * u + p;
  f.fu_y = hu * v;
  f.fv_x = hu * v;
  f.fv_y = hv * v + p;
  return f;
}

}  // namespace

Field swe_step(const Field& state, const SweConfig& cfg) {
  if (state.system != System::shallow_water)
    throw std::invalid_argument("swe_step: field is " + system_name(state.system));
  if (state.height != cfg.n || state.width != cfg.n)
    throw std::invalid_argument("swe_step: field " + std::to_string(state.height) +
                                "x" + std::to_string(state.width) +
                                " does not match config grid " + std::to_string(cfg.n));
  const int n = cfg.n;
  const float g = static_cast<float>(cfg.g);
  const float dt = static_cast<float>(cfg.dt());
  const float rdx2 = static_cast<float>(dt / (2.0 * state.dx()));
  const float rdy2 = static_cast<float>(dt / (2.0 * state.dy()));

  Field next = state;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const float h = state.at(0, y, x);
      const float u = state.at(1, y, x);
      const float v = state.at(2, y, x);

      const float h_e = swe_ghost(state, 0, y, x + 1), h_w = swe_ghost(state, 0, y, x - 1);
      const float u_e = swe_ghost(state, 1, y, x + 1), u_w = swe_ghost(state, 1, y, x - 1);
      const float v_e = swe_ghost(state, 2, y, x + 1), v_w = swe_ghost(state, 2, y, x - 1);
      const float h_n = swe_ghost(state, 0, y + 1, x), h_s = swe_ghost(state, 0, y - 1, x);
      const float u_n = swe_ghost(state, 1, y + 1, x), u_s = swe_ghost(state, 1, y - 1, x);
      const float v_n = swe_ghost(state, 2, y + 1, x), v_s = swe_ghost(state, 2, y - 1, x);

      const SweFlux fe = swe_flux(h_e, u_e, v_e, g);
      const SweFlux fw = swe_flux(h_w, u_w, v_w, g);
      const SweFlux fn = swe_flux(h_n, u_n, v_n, g);
      const SweFlux fs = swe_flux(h_s, u_s, v_s, g);

      const float h_new = h - rdx2 * (fe.fh_x - fw.fh_x) - rdy2 * (fn.fh_y - fs.fh_y);
      const float hu_new =
          h * u - rdx2 * (fe.fu_x - fw.fu_x) - rdy2 * (fn.fu_y - fs.fu_y);
      const float hv_new =
          h * v - rdx2 * (fe.fv_x - fw.fv_x) - rdy2 * (fn.fv_y - fs.fv_y);

      if (!(h_new > 0.0f))
        throw std::runtime_error("swe_step: non-positive depth h=" +
                                 std::to_string(h_new) + " at (" + std::to_string(y) +
                                 "," + std::to_string(x) + "); reduce dt");
      next.at(0, y, x) = h_new;
      next.at(1, y, x) = hu_new / h_new;
      next.at(2, y, x) = hv_new / h_new;
    }
  }
  next.check_valid();
  return next;
}

Field solver_step(const Field& state, const SolverConfig& cfg) {
  if (const auto* b = std::get_if<BurgersConfig>(&cfg)) return burgers_step(state, *b);
  return swe_step(state, std::get<SweConfig>(cfg));
}

Field advance_snapshot(const Field& state, const SolverConfig& cfg) {
  Field f = state;
  const int steps = solver_substeps(cfg);
  for (int i = 0; i < steps; ++i) f = solver_step(f, cfg);
  return f;
}

RawTrajectory simulate(const SolverConfig& cfg, uint64_t seed) {
  RawTrajectory traj;
  traj.system = solver_system(cfg);
  traj.seed = seed;
  traj.config = cfg;
  const int n_step = solver_n_step(cfg);
  if (n_step < 1) throw std::invalid_argument("simulate: n_step must be >= 1");
  traj.fields.reserve(n_step);
  Field f = initial_condition(cfg, seed);
  traj.fields.push_back(f);
  for (int i = 1; i < n_step; ++i) {
    try {
      f = advance_snapshot(f, cfg);
    } catch (const std::exception& e) {
      throw std::runtime_error("simulate: failure advancing to snapshot " +
                               std::to_string(i) + ": " + e.what());
    }
    traj.fields.push_back(f);
  }
  return traj;
}

double reynolds(double velocity, double length, double viscosity) {
  if (velocity <= 0.0 || length <= 0.0 || viscosity <= 0.0)
    throw std::invalid_argument("reynolds: all arguments must be positive (V=" +
                                std::to_string(velocity) + ", L=" + std::to_string(length) +
                                ", nu=" + std::to_string(viscosity) + ")");
  return velocity * length / viscosity;
}

}  // namespace mfs
