#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mfs/solvers.hpp"

using namespace mfs;

namespace {

BurgersConfig small_burgers(int n, double snap = 0.01) {
  BurgersConfig c;
  c.n = n;
  c.domain = 1.0;
  c.snap_interval = snap;
  c.n_step = 10;
  return c;
}

SweConfig small_swe(int n) {
  SweConfig c;
  c.n = n;
  c.domain = n - 1.0;  // dx = 1
  c.snap_interval = 0.09;
  c.n_step = 10;
  c.radius_unit_dx = 1.0;
  return c;
}

double mass(const Field& f) {
  double acc = 0.0;
  const size_t plane = static_cast<size_t>(f.height) * f.width;
  for (size_t i = 0; i < plane; ++i) acc += f.data[i];
  return acc * f.cell_area();
}

}  // namespace

TEST_CASE("burgers_step: zero field stays zero") {
  BurgersConfig cfg = small_burgers(5);
  Field f = Field::zeros(System::burgers, 5, 1.0);
  Field next = burgers_step(f, cfg);
  for (float v : next.data) CHECK(v == 0.0f);
}

TEST_CASE("burgers_step: uniform field is a fixed point") {
  BurgersConfig cfg = small_burgers(7);
  Field f = Field::zeros(System::burgers, 7, 1.0);
  for (float& v : f.data) v = 2.5f;
  Field next = burgers_step(f, cfg);
  for (float v : next.data) CHECK(v == 2.5f);
}

TEST_CASE("burgers_step matches a hand-evaluated stencil") {
  // 5x5, dx = 0.25, dt = 0.01, single interior spike u=1 at the center.
  BurgersConfig cfg = small_burgers(5, 0.01);
  REQUIRE(cfg.substeps() == 1);
  REQUIRE(cfg.dt() == doctest::Approx(0.01));
  Field f = Field::zeros(System::burgers, 5, 1.0);
  f.at(0, 2, 2) = 1.0f;
  Field next = burgers_step(f, cfg);

  // Independent direct stencil arithmetic in double.
  const double dx = 0.25, dt = 0.01, nu = 0.01;
  auto u0 = [&](int y, int x) { return (y == 2 && x == 2) ? 1.0 : 0.0; };
  for (int y = 1; y < 4; ++y)
    for (int x = 1; x < 4; ++x) {
      const double u = u0(y, x);
      const double conv = u * (u - u0(y, x - 1)) / dx + 0.0;
      const double diff = (u0(y, x + 1) - 2 * u + u0(y, x - 1)) / (dx * dx) +
                          (u0(y + 1, x) - 2 * u + u0(y - 1, x)) / (dx * dx);
      const double expect = u + dt * (nu * diff - conv);
      CHECK(next.at(0, y, x) == doctest::Approx(expect).epsilon(1e-6));
      CHECK(next.at(1, y, x) == doctest::Approx(0.0).epsilon(1e-6));
    }
  // boundary cells untouched
  for (int i = 0; i < 5; ++i) {
    CHECK(next.at(0, 0, i) == 0.0f);
    CHECK(next.at(0, 4, i) == 0.0f);
  }
}

TEST_CASE("burgers_step refuses a CFL violation") {
  BurgersConfig cfg = small_burgers(5);
  Field f = Field::zeros(System::burgers, 5, 1.0);
  f.at(0, 2, 2) = 100.0f;
  CHECK_THROWS_WITH_AS(burgers_step(f, cfg), doctest::Contains("CFL"),
                       std::runtime_error);
}

TEST_CASE("burgers maximum principle with boundary at the background max") {
  BurgersConfig cfg = small_burgers(17, 0.002);
  BurgersIc ic{0.5};  // patch below the background
  Field f = evaluate_burgers_ic(cfg, ic);
  float prev_max = 0.0f;
  for (float v : f.data) prev_max = std::max(prev_max, std::abs(v));
  CHECK(prev_max == 1.0f);
  for (int s = 0; s < 50; ++s) {
    f = burgers_step(f, cfg);
    float cur = 0.0f;
    for (float v : f.data) cur = std::max(cur, std::abs(v));
    CHECK(cur <= prev_max + 1e-6f);
    prev_max = cur;
  }
}

TEST_CASE("burgers transpose symmetry is preserved") {
  BurgersConfig cfg = small_burgers(17, 0.002);
  Field f = evaluate_burgers_ic(cfg, BurgersIc{2.0});
  for (int s = 0; s < 10; ++s) f = burgers_step(f, cfg);
  for (int y = 0; y < cfg.n; ++y)
    for (int x = 0; x < cfg.n; ++x)
      CHECK(f.at(0, y, x) == doctest::Approx(f.at(1, x, y)).epsilon(1e-6));
}

TEST_CASE("swe_step: flat lake is a fixed point") {
  SweConfig cfg = small_swe(9);
  Field f = Field::zeros(System::shallow_water, 9, cfg.domain);
  const size_t plane = 81;
  for (size_t i = 0; i < plane; ++i) f.data[i] = 1.0f;
  Field next = swe_step(f, cfg);
  for (size_t i = 0; i < plane; ++i) CHECK(next.data[i] == 1.0f);
  for (size_t i = plane; i < 3 * plane; ++i) CHECK(next.data[i] == 0.0f);
}

TEST_CASE("swe_step: centered cylinder stays 90-degree rotation invariant") {
  SweConfig cfg = small_swe(32);
  SweIc ic;
  ic.height = 0.5;
  ic.radius_phys = 6.0;
  ic.cx = cfg.domain / 2.0;
  ic.cy = cfg.domain / 2.0;
  Field f = evaluate_swe_ic(cfg, ic);
  const int n = cfg.n;
  auto check_sym = [&](const Field& s) {
    // invariance under the 90-degree rotation (y,x) -> (x, n-1-y):
    // h(y,x) = h(x, n-1-y), u(y,x) = v(x, n-1-y), v(y,x) = -u(x, n-1-y)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        CHECK(s.at(0, y, x) == doctest::Approx(s.at(0, x, n - 1 - y)).epsilon(1e-6));
        CHECK(s.at(1, y, x) ==
              doctest::Approx(s.at(2, x, n - 1 - y)).epsilon(1e-6));
        CHECK(s.at(2, y, x) ==
              doctest::Approx(-s.at(1, x, n - 1 - y)).epsilon(1e-6));
      }
  };
  check_sym(f);
  for (int s = 0; s < 20; ++s) f = swe_step(f, cfg);
  check_sym(f);
}

TEST_CASE("swe_step conserves mass to 1e-6 relative per step") {
  SweConfig cfg = small_swe(16);
  Field f = evaluate_swe_ic(cfg, sample_swe_ic(cfg, 42));
  // develop non-trivial velocities first
  for (int s = 0; s < 10; ++s) f = swe_step(f, cfg);
  const double before = mass(f);
  Field next = swe_step(f, cfg);
  const double after = mass(next);
  CHECK(std::abs(after - before) / before < 1e-6);
}

TEST_CASE("swe_step refuses non-positive depth") {
  SweConfig cfg = small_swe(8);
  cfg.snap_interval = 50.0;  // absurd dt -> blowup
  Field f = evaluate_swe_ic(cfg, SweIc{0.9, 3.0, 3.5, 3.5});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      f.at(1, y, x) = 2.0f * ((x % 2) ? 1.0f : -1.0f);
      f.at(2, y, x) = 2.0f * ((y % 2) ? 1.0f : -1.0f);
    }
  CHECK_THROWS_AS(
      [&] {
        Field g = f;
        for (int i = 0; i < 50; ++i) g = swe_step(g, cfg);
      }(),
      std::runtime_error);
}

TEST_CASE("simulate: snapshot count and determinism") {
  BurgersConfig cfg = small_burgers(17, 0.002);
  cfg.n_step = 100;
  RawTrajectory a = simulate(cfg, 7);
  CHECK(a.fields.size() == 100);
  RawTrajectory b = simulate(cfg, 7);
  for (size_t i = 0; i < a.fields.size(); ++i)
    CHECK(a.fields[i].data == b.fields[i].data);
  RawTrajectory c = simulate(cfg, 8);
  CHECK(a.fields[0].data != c.fields[0].data);
}

TEST_CASE("grid refinement: one-interval error drops with order >= 1") {
  // Smooth initial data evaluated analytically per grid; reference at 65.
  auto smooth_field = [](int n) {
    Field f = Field::zeros(System::burgers, n, 1.0);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double px = x / (n - 1.0), py = y / (n - 1.0);
        const double s =
            1.0 + 0.5 * std::sin(2.0 * M_PI * px) * std::sin(2.0 * M_PI * py);
        f.at(0, y, x) = static_cast<float>(s);
        f.at(1, y, x) = static_cast<float>(s);
      }
    return f;
  };
  const double T = 0.004;
  auto advance = [&](int n) {
    BurgersConfig cfg = small_burgers(n, T);
    cfg.patch_vel_max = 2.0;  // dt bound for the smooth data's actual range
    return advance_snapshot(smooth_field(n), cfg);
  };
  Field ref = advance(65);
  auto err_against_ref = [&](const Field& coarse) {
    const int ratio = 64 / (coarse.width - 1);
    double acc = 0.0;
    int count = 0;
    for (int y = 1; y < coarse.height - 1; ++y)
      for (int x = 1; x < coarse.width - 1; ++x) {
        const double d = coarse.at(0, y, x) - ref.at(0, y * ratio, x * ratio);
        acc += d * d;
        ++count;
      }
    return std::sqrt(acc / count);
  };
  const double e17 = err_against_ref(advance(17));
  const double e33 = err_against_ref(advance(33));
  const double order = std::log2(e17 / e33);
  CHECK(order >= 1.0);
}

TEST_CASE("same seed produces the same physical state across fidelities") {
  BurgersConfig hi = small_burgers(129);
  BurgersConfig lo = small_burgers(33);
  Field fh = initial_condition(hi, 3);
  Field fl = initial_condition(lo, 3);
  // patch occupies the same physical region: [0.25, 0.75] of the domain
  CHECK(fh.at(0, 64, 64) == fl.at(0, 16, 16));
  CHECK(fh.at(0, 32, 32) == fl.at(0, 8, 8));  // patch corner
  CHECK(fh.at(0, 28, 28) == 1.0f);            // outside
  CHECK(fl.at(0, 7, 7) == 1.0f);
  CHECK(fh.at(0, 32, 32) != 1.0f);
}

TEST_CASE("coarsening consistency: low run tracks the area-averaged high run") {
  BurgersConfig hi = small_burgers(129, 0.0015);
  hi.n_step = 20;
  BurgersConfig lo = hi;
  lo.n = 33;
  // The discrepancy is dominated by the sharp patch edge (a one-coarse-cell
  // band), so it grows with patch contrast; seed 3 draws a moderate patch.
  const uint64_t seed = 3;
  RawTrajectory th = simulate(hi, seed);
  RawTrajectory tl = simulate(lo, seed);

  // Area average of the fine field over the coarse cell: trapezoid weights
  // [0.5,1,1,1,0.5]/4 per axis around each coincident node.
  const double w1d[5] = {0.125, 0.25, 0.25, 0.25, 0.125};
  for (int snap = 0; snap < hi.n_step; ++snap) {
    const Field& fh = th.fields[snap];
    const Field& fl = tl.fields[snap];
    double num = 0.0, den = 0.0;
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 33; ++y)
        for (int x = 0; x < 33; ++x) {
          double avg = 0.0, wsum = 0.0;
          for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) {
              const int fy = std::clamp(4 * y + dy, 0, 128);
              const int fx = std::clamp(4 * x + dx, 0, 128);
              const double w = w1d[dy + 2] * w1d[dx + 2];
              avg += w * fh.at(c, fy, fx);
              wsum += w;
            }
          avg /= wsum;
          const double d = fl.at(c, y, x) - avg;
          num += d * d;
          den += avg * avg;
        }
    const double rel = std::sqrt(num / den);
    CHECK(rel < 0.1);
  }
}

TEST_CASE("reynolds number") {
  CHECK(reynolds(5.0, 1.0, 0.01) == doctest::Approx(500.0));
  CHECK(reynolds(1.5, 1.0, 0.01) == doctest::Approx(150.0));
  CHECK(reynolds(3.0, 1.0, 0.01) ==
        doctest::Approx(reynolds(6.0, 1.0, 0.02)));  // homogeneity
  CHECK_THROWS_AS(reynolds(-1.0, 1.0, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(reynolds(1.0, 0.0, 0.01), std::invalid_argument);
}

TEST_CASE("initial conditions are built as specified") {
  SweConfig scfg = small_swe(32);
  SweIc sic = sample_swe_ic(scfg, 11);
  CHECK(sic.height >= 0.2);
  CHECK(sic.height <= 1.0);
  CHECK(sic.radius_phys >= 4.0 * scfg.radius_unit_dx);
  CHECK(sic.radius_phys <= 16.0 * scfg.radius_unit_dx);
  Field sf = evaluate_swe_ic(scfg, sic);
  float hmin = 1e9f, hmax = -1e9f;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      hmin = std::min(hmin, sf.at(0, y, x));
      hmax = std::max(hmax, sf.at(0, y, x));
    }
  CHECK(hmin == 1.0f);
  CHECK(hmax == static_cast<float>(scfg.depth + sic.height));

  BurgersConfig bcfg = small_burgers(33);
  BurgersIc bic = sample_burgers_ic(bcfg, 11);
  CHECK(bic.patch_velocity >= 1.5);
  CHECK(bic.patch_velocity <= 5.0);
  Field bf = evaluate_burgers_ic(bcfg, bic);
  for (float v : bf.data) {
    const bool ok = v == 1.0f || v == static_cast<float>(bic.patch_velocity);
    CHECK(ok);
  }
}

TEST_CASE("simulate propagates solver failures with the step index") {
  SweConfig cfg = small_swe(32);
  cfg.cfl_safety = 5.0;  // past the stability bound
  cfg.snap_interval = 10.0;
  cfg.n_step = 5;
  CHECK_THROWS_WITH_AS(simulate(cfg, 1), doctest::Contains("snapshot"),
                       std::runtime_error);
}
