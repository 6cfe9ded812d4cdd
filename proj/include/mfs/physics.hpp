#pragma once

#include <cstdint>
#include <vector>

#include "mfs/data.hpp"
#include "mfs/models.hpp"
#include "mfs/solvers.hpp"
#include "mfs/tensor.hpp"

// Physics-constraint losses: energy conservation and the flow operator,
// evaluated in the physical field decoded at a chosen fidelity, and their
// composition with the latent-space data loss into the LSTM training loss.

namespace mfs {

// Which constraints are active, their coefficients and the fidelity whose
// frozen decoder and solver grid they are evaluated in.
struct ConstraintConfig {
  bool energy_enabled = false;
  float alpha_energy = 0.0f;
  bool flow_enabled = false;
  float alpha_flow = 0.0f;
  Fidelity fidelity = Fidelity::low;

  void validate() const;
};

// Frozen evaluation context for the losses: the decoder at the constraint
// fidelity, the normalization record (losses act on denormalized fields) and
// the solver config whose snapshot interval defines the flow operator.
struct PhysicsContext {
  const CaePair* decoder = nullptr;
  NormRecord norm;
  SolverConfig solver;
  System system() const { return solver_system(solver); }
  double domain() const { return solver_domain(solver); }
};

// Cell-area-weighted total energy of a physical-space field. Shallow water
// sums kinetic plus potential energy 0.5*h*(u^2+v^2) + 0.5*g*h^2; Burgers has
// no height field, so the energy is kinetic only. The area weight is
// domain_area / grid_points.
double total_energy(const Field& f, double g = 9.81);

// Differentiable version; x: [C,H,W] -> scalar [1], or [N,C,H,W] -> [N],
// in physical units.
Tensor total_energy_op(const Tensor& x, System system, double g,
                       double domain_x, double domain_y);

struct LossBreakdown {
  float l_data = 0.0f;
  float l_energy = 0.0f;
  float l_flow = 0.0f;
  float total = 0.0f;
  int flow_skipped = 0;
};

// |mean window energy of decoded inputs - mean window energy of decoded
// predictions|. Inputs are ground-truth latents (constants); gradient flows
// through preds and the frozen decoder.
Tensor energy_loss(const std::vector<std::vector<float>>& input_latents,
                   const std::vector<Tensor>& preds, const PhysicsContext& ctx);

// Builds the target chain by decoding the last ground-truth input latent and
// advancing it one snapshot interval per prediction step (a constant target;
// no gradient through the solver), then averages ||x_fp_i - decode(pred_i)||^2
// over the prediction window. If the solver refuses a step: with `skipped`
// given the window is marked skipped and the loss is identically zero,
// otherwise the failure propagates with its step index.
Tensor flow_loss(const std::vector<std::vector<float>>& input_latents,
                 const std::vector<Tensor>& preds, const PhysicsContext& ctx,
                 bool* skipped = nullptr);

struct LatentWindow {
  std::vector<std::vector<float>> inputs;   // k_in x m
  std::vector<std::vector<float>> targets;  // k_out x m
};

struct CompositeResult {
  Tensor total;
  LossBreakdown breakdown;
};

// total = l_data + alpha1 * l_energy + alpha2 * l_flow, with l_data the
// latent-space MSE (1/k_out) sum ||eta - eta~||^2. Disabled constraints
// contribute exactly 0 and are not evaluated.
CompositeResult composite_loss(const LatentWindow& window,
                               const std::vector<Tensor>& preds,
                               const ConstraintConfig& cfg,
                               const PhysicsContext& ctx);

// ---- batched training path ----

// A minibatch of windows. inputs/targets hold k_in / k_out constant tensors
// of shape [B,m]; the physics targets (input-window energies and flow
// chains) depend only on ground truth and the frozen decoder, so they are
// precomputed once per batch.
struct WindowBatch {
  int batch = 0, k_in = 0, k_out = 0, m = 0;
  std::vector<Tensor> inputs;
  std::vector<Tensor> targets;
  // filled by prepare_physics_targets:
  std::vector<float> e_in;          // [B]
  std::vector<float> flow_targets;  // [B][k_out][C*H*W] physical units
  std::vector<uint8_t> flow_ok;     // [B]
  int flow_ok_count = 0;
};

void prepare_physics_targets(WindowBatch& batch, const ConstraintConfig& cfg,
                             const PhysicsContext& ctx);

CompositeResult composite_loss_batch(const WindowBatch& batch,
                                     const std::vector<Tensor>& preds,
                                     const ConstraintConfig& cfg,
                                     const PhysicsContext& ctx);

}  // namespace mfs
