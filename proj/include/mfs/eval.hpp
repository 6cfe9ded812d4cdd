#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfs/data.hpp"
#include "mfs/models.hpp"

// Recurrent long-horizon evaluation, the paper-style metrics (per-step MSE
// and spread, SSIM, error histograms), the spatially correlated noise
// generator and the noise-robustness protocol.

namespace mfs {

struct MetricSeries {
  std::vector<double> mse;      // per predicted timestep, mean over the test set
  std::vector<double> std_dev;  // spread of per-trajectory MSE per timestep
  std::vector<double> cumulative_mse;  // running mean over steps 0..t
  int horizon = 0;
};

struct EvalResult {
  MetricSeries series;
  std::vector<Field> error_fields;  // |prediction - truth| at the final step
  double final_step_mse = 0.0;
  double mean_mse = 0.0;        // mean of the per-step series
  double final_step_ssim = 0.0; // SSIM on normalized fields at the final step
};

// For each split trajectory: encode the first k_in true snapshots with the
// high encoder, run the circular forecast, decode at fidelity_out,
// denormalize and compare per step against the ground truth at that
// fidelity.
EvalResult evaluate_model(const LstmParams& lstm, const CaeParams& cae,
                          const DatasetManifest& m, Split split, int horizon,
                          Fidelity fidelity_out, int threads = 1);

// Validation scalar used by training and tuning: mean over the horizon of
// the full-space MSE.
double recurrent_full_mse(const LstmParams& lstm, const CaeParams& cae,
                          const DatasetManifest& m, Split split, int horizon,
                          Fidelity fidelity_out);

// Standard SSIM between two equal-shape planes with an 11x11 Gaussian window
// (sigma 1.5), K1=0.01, K2=0.03, mean over window positions. The window
// shrinks to the largest odd size that fits when a plane is smaller than 11.
double ssim(std::span<const float> a, std::span<const float> b, int height,
            int width, double data_range = 1.0);
// Per-channel SSIM of two fields, averaged.
double ssim_field(const Field& a, const Field& b, double data_range = 1.0);

struct Histogram {
  std::vector<double> edges;   // bins+1 edges
  std::vector<int64_t> counts; // bins
};
Histogram error_histogram(const std::vector<Field>& error_fields, int bins,
                          double lo, double hi);

// Matern-type spatial correlation (1 + r/L) * exp(-r/L).
double matern_correlation(double r, double length);

struct NoiseConfig {
  double length = 4.0;        // correlation length, grid units
  std::vector<float> sigma;   // per-channel amplitude, physical units
  uint64_t seed = 0;
};

// Dense-factorization sampler for zero-mean Gaussian fields with covariance
// sigma^2 * matern_correlation(r). Factorized once per (grid, length) with
// diagonal jitter 1e-8.
class CorrelatedNoise {
 public:
  CorrelatedNoise(int height, int width, double length);
  // One unit-variance correlated field, [H*W].
  std::vector<float> sample(Rng& rng) const;

 private:
  int h_, w_;
  std::vector<double> chol_;  // lower-triangular factor, row-major
};

// A [C,H,W] perturbation with independent channels scaled by cfg.sigma.
Field sample_correlated_noise(System system, int height, int width,
                              double domain, const NoiseConfig& cfg, Rng& rng);

// sigma = fraction (default 5%) of each channel's training range.
NoiseConfig default_noise_config(const NormRecord& norm, double fraction = 0.05,
                                 uint64_t seed = 0);

// Perturbs only the initial k_in snapshots, then runs evaluate_model's
// protocol; one result per supplied model on identical noisy inputs.
struct NamedLstm {
  std::string name;
  const LstmParams* params;
};
std::vector<std::pair<std::string, EvalResult>> noisy_eval(
    const std::vector<NamedLstm>& models, const CaeParams& cae,
    const DatasetManifest& m, Split split, const NoiseConfig& noise,
    int horizon, Fidelity fidelity_out, int threads = 1);

// CSV emission. summary rows mirror the paper tables' columns with the MSE%
// column referenced to the row named `baseline` (= 100).
void emit_metric_csv(const MetricSeries& s, const std::string& path);
void emit_histogram_csv(const Histogram& h, const std::string& path);
struct SummaryRow {
  std::string model;
  double mse = 0.0;  // absolute; emitted as percent of the baseline row
  double ssim = 0.0;
  double epoch_seconds = 0.0;
};
void emit_summary_csv(const std::vector<SummaryRow>& rows,
                      const std::string& baseline, const std::string& path);
void save_field_raw(const Field& f, const std::string& path);

}  // namespace mfs
