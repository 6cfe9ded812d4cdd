#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfs/data.hpp"
#include "mfs/models.hpp"
#include "mfs/physics.hpp"

// Training orchestration: the two-stage multi-fidelity CAE schedule, the
// physics-constrained seq2seq LSTM loop (optionally fed by both encoders),
// and the random search over constraint coefficients.

namespace mfs {

enum class LatentSource { high_only, multi_fidelity };

struct TrainConfig {
  int epochs = 20;
  float lr = 1e-3f;  // initial Adam learning rate
  int batch = 16;
  uint64_t seed = 0;
  ConstraintConfig constraints;
  LatentSource latent_source = LatentSource::high_only;
  int latent_dim = 128;
  int hidden_dim = 256;
  int k_in = 3;
  int k_out = 3;

  void validate() const;
};

struct EpochStats {
  LossBreakdown mean;   // epoch-mean loss terms
  float aux = 0.0f;     // second loss where a stage trains two nets
  double seconds = 0.0; // forward+backward+update wall clock
  int flow_skipped = 0;
};

struct TrainReport {
  std::string kind;  // cae_high | cae_low | lstm
  uint64_t seed = 0;
  std::vector<EpochStats> epochs;
  double final_val_metric = 0.0;
  double final_val_aux = 0.0;

  double mean_epoch_seconds() const;
};

// Writes <name>_report.txt, <name>_loss.csv (deterministic) and
// <name>_timing.csv (wall-clock, excluded from bit-identity claims).
void save_report(const TrainReport& r, const std::string& dir,
                 const std::string& name);

struct CaeStageResult {
  CaePair pair;
  TrainReport report;
};

struct LstmTrainResult {
  LstmParams params;
  TrainReport report;
};

// Joint encoder+decoder training of the high-fidelity CAE on the
// reconstruction MSE over all train-split snapshots.
CaeStageResult train_high_cae(const DatasetManifest& m, const TrainConfig& cfg);

// Second stage: the low-fidelity encoder learns to match the (frozen) high
// encoder's latents on paired snapshots; the low decoder learns to map those
// high-derived latents back to low-fidelity fields. high stays bit-identical.
CaeStageResult train_low_cae(const DatasetManifest& m, const CaePair& high,
                             const TrainConfig& cfg);

// Physics-constrained seq2seq training over all windows of all train
// trajectories. latent_source multi_fidelity additionally emits windows
// encoded with the low encoder (targets from the same encoder), doubling the
// sample count. CAE parameters are frozen throughout.
LstmTrainResult train_lstm(const DatasetManifest& m, const CaeParams& cae,
                           const TrainConfig& cfg);

// Random search over constraint coefficients (log-uniform in the given
// ranges), scoring each short trial by validation recurrent-prediction MSE.
struct AlphaRange {
  float lo = 0.0f;
  float hi = 0.0f;
};

struct AlphaTrial {
  float alpha_energy = 0.0f;
  float alpha_flow = 0.0f;
  double val_mse = 0.0;
};

struct TuneResult {
  ConstraintConfig best;
  std::vector<AlphaTrial> trials;
};

TuneResult tune_alpha(const DatasetManifest& m, const CaeParams& cae,
                      const TrainConfig& base, AlphaRange energy_range,
                      AlphaRange flow_range, int budget, uint64_t seed);

// Shared helpers (also used by eval): load one split at one fidelity, and
// encode a trajectory's normalized snapshots into a latent series.
std::vector<Trajectory> load_split(const DatasetManifest& m, Split split,
                                   Fidelity fidelity);
std::vector<std::vector<float>> encode_series(const CaePair& encoder_pair,
                                              const Trajectory& traj,
                                              const NormRecord& norm);

}  // namespace mfs
