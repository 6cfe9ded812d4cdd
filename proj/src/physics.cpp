#include "mfs/physics.hpp"

#include <cmath>
#include <stdexcept>

namespace mfs {

void ConstraintConfig::validate() const {
  if (alpha_energy < 0.0f || alpha_flow < 0.0f)
    throw std::invalid_argument("ConstraintConfig: coefficients must be >= 0");
}

// ---------------------------------------------------------------------------
// total energy
// ---------------------------------------------------------------------------

double total_energy(const Field& f, double g) {
  const double w = f.domain_x * f.domain_y /
                   (static_cast<double>(f.height) * f.width);
  const size_t plane = static_cast<size_t>(f.height) * f.width;
  double acc = 0.0;
  if (f.system == System::burgers) {
    const float* u = f.data.data();
    const float* v = f.data.data() + plane;
    for (size_t i = 0; i < plane; ++i)
      acc += 0.5 * (static_cast<double>(u[i]) * u[i] + static_cast<double>(v[i]) * v[i]);
  } else {
    const float* h = f.data.data();
    const float* u = f.data.data() + plane;
    const float* v = f.data.data() + 2 * plane;
    for (size_t i = 0; i < plane; ++i) {
      const double hd = h[i];
      acc += 0.5 * hd * (static_cast<double>(u[i]) * u[i] + static_cast<double>(v[i]) * v[i]) +
             0.5 * g * hd * hd;
    }
  }
  return acc * w;
}

Tensor total_energy_op(const Tensor& x, System system, double g,
                       double domain_x, double domain_y) {
  const auto& s = x.shape();
  const int want_c = system == System::burgers ? 2 : 3;
  const bool batched = s.size() == 4;
  if ((s.size() != 3 && s.size() != 4) || s[s.size() - 3] != want_c)
    throw std::invalid_argument("total_energy_op: input " + shape_str(s) +
                                " invalid for system " + system_name(system));
  const int n = batched ? s[0] : 1;
  const int h = s[s.size() - 2], w = s[s.size() - 1];
  const int64_t plane = static_cast<int64_t>(h) * w;
  const float aw = static_cast<float>(domain_x * domain_y / (static_cast<double>(h) * w));
  const float gf = static_cast<float>(g);

  Tensor out(batched ? std::vector<int>{n} : std::vector<int>{1});
  auto ov = out.values();
  auto xv = x.values();
  const int64_t per = static_cast<int64_t>(want_c) * plane;
  for (int b = 0; b < n; ++b) {
    const float* base = xv.data() + b * per;
    double acc = 0.0;
    if (system == System::burgers) {
      const float* u = base;
      const float* v = base + plane;
      for (int64_t i = 0; i < plane; ++i)
        acc += 0.5 * (static_cast<double>(u[i]) * u[i] + static_cast<double>(v[i]) * v[i]);
    } else {
      const float* hh = base;
      const float* u = base + plane;
      const float* v = base + 2 * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const double hd = hh[i];
        acc += 0.5 * hd * (static_cast<double>(u[i]) * u[i] + static_cast<double>(v[i]) * v[i]) +
               0.5 * gf * hd * hd;
      }
    }
    ov[b] = static_cast<float>(acc) * aw;
  }

  if (Tape::current() && x.requires_grad()) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out, system, gf, aw, n, plane, per]() mutable {
      auto og = out.grad();
      auto xv = x.values();
      auto xg = x.grad();
      for (int b = 0; b < n; ++b) {
        const float go = og[b] * aw;
        const float* base = xv.data() + b * per;
        float* gbase = xg.data() + b * per;
        if (system == System::burgers) {
          for (int64_t i = 0; i < 2 * plane; ++i) gbase[i] += go * base[i];
        } else {
          const float* hh = base;
          const float* u = base + plane;
          const float* v = base + 2 * plane;
          for (int64_t i = 0; i < plane; ++i) {
            gbase[i] += go * (0.5f * (u[i] * u[i] + v[i] * v[i]) + gf * hh[i]);
            gbase[plane + i] += go * hh[i] * u[i];
            gbase[2 * plane + i] += go * hh[i] * v[i];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// decode helpers
// ---------------------------------------------------------------------------

namespace {

Tensor denorm_op(const Tensor& normalized, const NormRecord& norm) {
  std::vector<float> scl(norm.channels()), shift(norm.channels());
  for (int c = 0; c < norm.channels(); ++c) {
    scl[c] = norm.range(c);
    shift[c] = norm.ch_min[c];
  }
  return channel_affine(normalized, scl, shift);
}

Tensor constant_latent(const std::vector<float>& v) {
  return Tensor::from_data({static_cast<int>(v.size())}, std::vector<float>(v));
}

// Decodes a constant latent to a physical Field, clamped into the
// normalization range before use as a solver state.
Field decode_to_field(const std::vector<float>& latent, const PhysicsContext& ctx) {
  Tensor dec = cae_decode(*ctx.decoder, constant_latent(latent));
  dec = clamp(dec, 0.0f, 1.0f);
  Field f = tensor_to_field(dec, ctx.system(), ctx.domain(), ctx.domain());
  return denormalize(f, ctx.norm);
}

}  // namespace

// ---------------------------------------------------------------------------
// energy loss
// ---------------------------------------------------------------------------

Tensor energy_loss(const std::vector<std::vector<float>>& input_latents,
                   const std::vector<Tensor>& preds, const PhysicsContext& ctx) {
  if (!ctx.decoder) throw std::invalid_argument("energy_loss: missing decoder");
  if (input_latents.empty() || preds.empty())
    throw std::invalid_argument("energy_loss: empty window");
  const System sys = ctx.system();
  const double dom = ctx.domain();
  const double g = std::holds_alternative<SweConfig>(ctx.solver)
                       ? std::get<SweConfig>(ctx.solver).g
                       : 9.81;

  double e_in = 0.0;
  for (const auto& lat : input_latents) {
    Tensor dec = denorm_op(cae_decode(*ctx.decoder, constant_latent(lat)), ctx.norm);
    e_in += total_energy_op(dec, sys, g, dom, dom).item();
  }
  e_in /= static_cast<double>(input_latents.size());

  Tensor e_sum;
  for (const auto& pred : preds) {
    Tensor dec = denorm_op(cae_decode(*ctx.decoder, pred), ctx.norm);
    Tensor e = total_energy_op(dec, sys, g, dom, dom);
    e_sum = e_sum.defined() ? add(e_sum, e) : e;
  }
  Tensor e_out = scale(e_sum, 1.0f / static_cast<float>(preds.size()));
  return abs_scalar(sub(e_out, Tensor::scalar(static_cast<float>(e_in))));
}

// ---------------------------------------------------------------------------
// flow loss
// ---------------------------------------------------------------------------

Tensor flow_loss(const std::vector<std::vector<float>>& input_latents,
                 const std::vector<Tensor>& preds, const PhysicsContext& ctx,
                 bool* skipped) {
  if (!ctx.decoder) throw std::invalid_argument("flow_loss: missing decoder");
  if (input_latents.empty() || preds.empty())
    throw std::invalid_argument("flow_loss: empty window");
  if (skipped) *skipped = false;
  const int k_out = static_cast<int>(preds.size());

  std::vector<Field> chain;
  chain.reserve(k_out);
  Field state = decode_to_field(input_latents.back(), ctx);
  for (int s = 0; s < k_out; ++s) {
    try {
      state = advance_snapshot(state, ctx.solver);
    } catch (const std::exception& e) {
      if (skipped) {
        *skipped = true;
        return Tensor::scalar(0.0f);
      }
      throw std::runtime_error("flow_loss: solver refused chain step " +
                               std::to_string(s) + ": " + e.what());
    }
    chain.push_back(state);
  }

  Tensor loss_sum;
  for (int s = 0; s < k_out; ++s) {
    Tensor dec = denorm_op(cae_decode(*ctx.decoder, preds[s]), ctx.norm);
    Tensor target = field_to_tensor(chain[s]);
    Tensor term = sum_sq_diff(dec, target);
    loss_sum = loss_sum.defined() ? add(loss_sum, term) : term;
  }
  return scale(loss_sum, 1.0f / static_cast<float>(k_out));
}

// ---------------------------------------------------------------------------
// composite loss (single window)
// ---------------------------------------------------------------------------

CompositeResult composite_loss(const LatentWindow& window,
                               const std::vector<Tensor>& preds,
                               const ConstraintConfig& cfg,
                               const PhysicsContext& ctx) {
  cfg.validate();
  if (window.targets.size() != preds.size())
    throw std::invalid_argument("composite_loss: " + std::to_string(window.targets.size()) +
                                " targets for " + std::to_string(preds.size()) +
                                " predictions");
  const int k_out = static_cast<int>(preds.size());

  Tensor data_sum;
  for (int s = 0; s < k_out; ++s) {
    Tensor term = sum_sq_diff(preds[s], constant_latent(window.targets[s]));
    data_sum = data_sum.defined() ? add(data_sum, term) : term;
  }
  Tensor l_data = scale(data_sum, 1.0f / static_cast<float>(k_out));

  CompositeResult res;
  res.breakdown.l_data = l_data.item();
  Tensor total = l_data;

  if (cfg.energy_enabled) {
    Tensor le = energy_loss(window.inputs, preds, ctx);
    res.breakdown.l_energy = le.item();
    total = add(total, scale(le, cfg.alpha_energy));
  }
  if (cfg.flow_enabled) {
    bool skipped = false;
    Tensor lf = flow_loss(window.inputs, preds, ctx, &skipped);
    res.breakdown.l_flow = lf.item();
    res.breakdown.flow_skipped = skipped ? 1 : 0;
    total = add(total, scale(lf, cfg.alpha_flow));
  }
  res.total = total;
  res.breakdown.total = total.item();
  return res;
}

// ---------------------------------------------------------------------------
// batched training path
// ---------------------------------------------------------------------------

void prepare_physics_targets(WindowBatch& batch, const ConstraintConfig& cfg,
                             const PhysicsContext& ctx) {
  cfg.validate();
  if (!cfg.energy_enabled && !cfg.flow_enabled) return;
  if (!ctx.decoder) throw std::invalid_argument("prepare_physics_targets: missing decoder");
  const int b = batch.batch;
  const System sys = ctx.system();
  const double dom = ctx.domain();
  const double g = std::holds_alternative<SweConfig>(ctx.solver)
                       ? std::get<SweConfig>(ctx.solver).g
                       : 9.81;

  if (cfg.energy_enabled) {
    // One batched decode of all input latents, then per-window means.
    std::vector<float> flat(static_cast<size_t>(b) * batch.k_in * batch.m);
    for (int i = 0; i < batch.k_in; ++i) {
      auto v = batch.inputs[i].values();
      for (int w = 0; w < b; ++w)
        std::copy(v.begin() + static_cast<int64_t>(w) * batch.m,
                  v.begin() + static_cast<int64_t>(w + 1) * batch.m,
                  flat.begin() + (static_cast<int64_t>(w) * batch.k_in + i) * batch.m);
    }
    Tensor latents = Tensor::from_data({b * batch.k_in, batch.m}, std::move(flat));
    Tensor dec = denorm_op(cae_decode(*ctx.decoder, latents), ctx.norm);
    Tensor e = total_energy_op(dec, sys, g, dom, dom);
    batch.e_in.assign(b, 0.0f);
    auto ev = e.values();
    for (int w = 0; w < b; ++w) {
      double acc = 0.0;
      for (int i = 0; i < batch.k_in; ++i) acc += ev[w * batch.k_in + i];
      batch.e_in[w] = static_cast<float>(acc / batch.k_in);
    }
  }

  if (cfg.flow_enabled) {
    const int grid = solver_grid(ctx.solver);
    const int ch = sys == System::burgers ? 2 : 3;
    const int64_t per = static_cast<int64_t>(ch) * grid * grid;
    batch.flow_targets.assign(static_cast<size_t>(b) * batch.k_out * per, 0.0f);
    batch.flow_ok.assign(b, 1);
    batch.flow_ok_count = 0;
    const auto& last = batch.inputs.back();
    for (int w = 0; w < b; ++w) {
      std::vector<float> lat(last.values().begin() + static_cast<int64_t>(w) * batch.m,
                             last.values().begin() + static_cast<int64_t>(w + 1) * batch.m);
      try {
        Field state = decode_to_field(lat, ctx);
        for (int s = 0; s < batch.k_out; ++s) {
          state = advance_snapshot(state, ctx.solver);
          std::copy(state.data.begin(), state.data.end(),
                    batch.flow_targets.begin() +
                        (static_cast<int64_t>(w) * batch.k_out + s) * per);
        }
        ++batch.flow_ok_count;
      } catch (const std::exception&) {
        batch.flow_ok[w] = 0;
      }
    }
  }
}

CompositeResult composite_loss_batch(const WindowBatch& batch,
                                     const std::vector<Tensor>& preds,
                                     const ConstraintConfig& cfg,
                                     const PhysicsContext& ctx) {
  cfg.validate();
  if (static_cast<int>(preds.size()) != batch.k_out)
    throw std::invalid_argument("composite_loss_batch: " + std::to_string(preds.size()) +
                                " prediction steps for k_out = " +
                                std::to_string(batch.k_out));
  const int b = batch.batch;
  const float inv_bk = 1.0f / static_cast<float>(b * batch.k_out);

  Tensor data_sum;
  for (int s = 0; s < batch.k_out; ++s) {
    Tensor term = sum_sq_diff(preds[s], batch.targets[s]);
    data_sum = data_sum.defined() ? add(data_sum, term) : term;
  }
  Tensor l_data = scale(data_sum, inv_bk);

  CompositeResult res;
  res.breakdown.l_data = l_data.item();
  Tensor total = l_data;

  const bool need_decode = cfg.energy_enabled || cfg.flow_enabled;
  if (need_decode) {
    if (!ctx.decoder)
      throw std::invalid_argument("composite_loss_batch: missing decoder");
    const System sys = ctx.system();
    const double dom = ctx.domain();
    const double g = std::holds_alternative<SweConfig>(ctx.solver)
                         ? std::get<SweConfig>(ctx.solver).g
                         : 9.81;
    const int grid = solver_grid(ctx.solver);
    const int ch = sys == System::burgers ? 2 : 3;
    const int64_t per = static_cast<int64_t>(ch) * grid * grid;

    Tensor e_sum;
    Tensor flow_sum;
    for (int s = 0; s < batch.k_out; ++s) {
      Tensor phys = denorm_op(cae_decode(*ctx.decoder, preds[s]), ctx.norm);
      if (cfg.energy_enabled) {
        Tensor e = total_energy_op(phys, sys, g, dom, dom);
        e_sum = e_sum.defined() ? add(e_sum, e) : e;
      }
      if (cfg.flow_enabled) {
        std::vector<float> tgt(static_cast<size_t>(b) * per);
        for (int w = 0; w < b; ++w)
          std::copy(batch.flow_targets.begin() +
                        (static_cast<int64_t>(w) * batch.k_out + s) * per,
                    batch.flow_targets.begin() +
                        (static_cast<int64_t>(w) * batch.k_out + s + 1) * per,
                    tgt.begin() + static_cast<int64_t>(w) * per);
        Tensor target = Tensor::from_data({b, ch, grid, grid}, std::move(tgt));
        Tensor term = sum_sq_diff_masked(phys, target, batch.flow_ok);
        flow_sum = flow_sum.defined() ? add(flow_sum, term) : term;
      }
    }
    if (cfg.energy_enabled) {
      Tensor e_out = scale(e_sum, 1.0f / static_cast<float>(batch.k_out));
      Tensor le = abs_diff_mean(e_out, batch.e_in);
      res.breakdown.l_energy = le.item();
      total = add(total, scale(le, cfg.alpha_energy));
    }
    if (cfg.flow_enabled) {
      const int ok = std::max(1, batch.flow_ok_count);
      Tensor lf = scale(flow_sum, 1.0f / static_cast<float>(ok * batch.k_out));
      res.breakdown.l_flow = lf.item();
      res.breakdown.flow_skipped = b - batch.flow_ok_count;
      total = add(total, scale(lf, cfg.alpha_flow));
    }
  }

  res.total = total;
  res.breakdown.total = total.item();
  return res;
}

}  // namespace mfs
