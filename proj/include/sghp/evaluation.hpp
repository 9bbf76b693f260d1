#pragma once
// Prediction metrics on the last event of each sequence, average precision,
// and comparison of learned kernels against a ground-truth Hawkes spec.
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sghp/data_model.hpp"
#include "sghp/hawkes_sim.hpp"
#include "sghp/sgk_model.hpp"

namespace sghp::eval {

struct LastEventPrediction {
  double predicted_gap = 0.0;
  double true_gap = 0.0;
  std::size_t predicted_type = 0;
  std::size_t true_type = 0;
  std::vector<double> type_probs;
};

/// One prediction per sequence for its final event from the full preceding
/// history. Noise for sequence n comes from derive_seed(noise_seed, {n}).
/// Throws sequence_too_short for any sequence shorter than two.
std::vector<LastEventPrediction> predict_last_events(const data::Dataset& ds, const model::ModelParams& params,
                                                     const model::ModelConfig& cfg, std::uint64_t noise_seed);

double rmse(const std::vector<double>& predicted, const std::vector<double>& truth);
/// Micro-averaged F1 over K classes for single-label predictions.
double f1_micro(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth,
                std::size_t num_types);
double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth);

double rmse_last_event(const data::Dataset& ds, const model::ModelParams& params, const model::ModelConfig& cfg,
                       std::uint64_t noise_seed);
double f1_micro_last_event(const data::Dataset& ds, const model::ModelParams& params,
                           const model::ModelConfig& cfg, std::uint64_t noise_seed);

/// Mean gap following an event of each type over every consecutive pair in
/// `train`; types never followed by an event get the overall mean gap.
std::vector<double> per_type_mean_gaps(const data::Dataset& train);
/// RMSE of predicting each sequence's last gap by the mean for the type of
/// the preceding event.
double constant_baseline_rmse(const data::Dataset& ds, const std::vector<double>& mean_gaps);

/// Average precision (step-wise area under the precision-recall curve);
/// tied scores form one threshold. Throws no_positive_labels.
double average_precision(const std::vector<std::pair<double, bool>>& scored);

struct KernelGrid {
  std::size_t source = 0;  // u
  std::size_t target = 0;  // v
  std::vector<double> time;
  std::vector<double> learned;
  std::optional<std::vector<double>> truth;
};

struct PairRecovery {
  std::size_t source = 0;
  std::size_t target = 0;
  double linf = 0.0;  // after peak normalisation; NaN when the learned curve is all zero
  double learned_peak = 0.0;
  double truth_peak = 0.0;
  bool learned_is_zero = false;
};

/// 0, 0.05, ..., 8.
std::vector<double> default_grid();
std::vector<double> make_grid(double start, double stop, double step);

std::vector<double> learned_kernel(const model::ModelParams& params, const model::ModelConfig& cfg,
                                   std::size_t source, std::size_t target, const std::vector<double>& grid);

/// Peak-normalised L-infinity distance and argmax locations of two curves
/// sampled on `grid`.
PairRecovery compare_curves(const std::vector<double>& learned, const std::vector<double>& truth,
                            const std::vector<double>& grid);

/// Peak-normalised comparison for every ordered pair. Argmax ties go to the
/// earliest time. Throws type_count_mismatch, invalid_grid, or
/// degenerate_truth (truth kernel zero on the whole grid).
std::vector<PairRecovery> kernel_recovery(const model::ModelParams& params, const model::ModelConfig& cfg,
                                          const sim::HawkesSpec& truth, const std::vector<double>& grid);

/// Pairs default to all K^2 ordered pairs when empty.
std::vector<KernelGrid> export_kernel_grids(const model::ModelParams& params, const model::ModelConfig& cfg,
                                            std::vector<std::pair<std::size_t, std::size_t>> pairs,
                                            const std::vector<double>& grid, const sim::HawkesSpec* truth = nullptr);

/// Header `time,learned[,truth]`, 17 significant digits.
std::string kernel_grid_csv(const KernelGrid& grid);
KernelGrid parse_kernel_grid_csv(const std::string& text, std::size_t source = 0, std::size_t target = 0);

struct MetricsReport {
  double rmse = 0.0;
  double f1_micro = 0.0;
  double baseline_rmse = 0.0;  // NaN when no training set was supplied
  std::optional<double> aps;
  std::size_t num_sequences = 0;
  std::vector<PairRecovery> recovery;
};

std::string metrics_to_json(const MetricsReport& report);

}  // namespace sghp::eval
