#pragma once
// Mini-batch training of the gated-kernel model: per-sequence tapes, summed
// gradients, global-norm clipping, Adam, early stopping on validation loss.
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sghp/data_model.hpp"
#include "sghp/diffcore.hpp"
#include "sghp/sgk_model.hpp"

namespace sghp::train {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  diff::AdamConfig adam;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  std::size_t noise_samples = 10;
  std::size_t embed_dim = 16;
  bool use_squared_distance = true;
  bool include_self_term = true;
  bool per_sample_l1 = false;
  double clip_norm = 5.0;  // <= 0 disables clipping

  void check() const;
  model::ModelConfig model_config(std::size_t num_types, std::size_t covariate_dim) const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based; 0 before any epoch
  std::size_t parameter_count = 0;
  std::size_t steps = 0;
  bool stopped_early = false;
  /// True when the validation set had no usable sequence and the training
  /// loss drove model selection instead.
  bool selected_on_train = false;
};

struct TrainResult {
  model::ModelConfig config;
  model::ModelParams params;
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Sequences shorter than two events carry no target and are skipped.
/// Throws sghp::Error: dataset_mismatch (K or C differ), sequence_too_short
/// (no usable training sequence), non_finite_loss (message names the batch).
TrainResult train(const data::Dataset& train_set, const data::Dataset& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Loss and gradients of one sequence, noise drawn from `noise_seed`.
diff::Evaluation sequence_loss_and_gradient(const data::EventSequence& seq, const model::ModelParams& params,
                                            const model::ModelConfig& cfg, std::uint64_t noise_seed);

double sequence_loss(const data::EventSequence& seq, const model::ModelParams& params,
                     const model::ModelConfig& cfg, std::uint64_t noise_seed);

/// Mean sequence loss over usable sequences (length >= 2). The noise for
/// sequence n comes from derive_seed(noise_seed, {n}) so the value does not
/// depend on anything but the arguments. Throws sequence_too_short when no
/// sequence is usable.
double evaluate_loss(const data::Dataset& ds, const model::ModelParams& params, const model::ModelConfig& cfg,
                     std::uint64_t noise_seed);

std::string report_to_json(const TrainReport& report);
/// epoch,train_loss,val_loss
std::string loss_csv(const TrainReport& report);

}  // namespace sghp::train
