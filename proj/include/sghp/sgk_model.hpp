#pragma once

// Sigmoid-gated kernel model: type and temporal embeddings, per-type-pair
// gated triggering kernels whose parameters come from small softplus heads,
// a kernel-weighted history encoder, a stochastic arrival-time decoder and a
// softmax type decoder.
//
// Two evaluation routes exist. The free functions below work on plain
// doubles for one event or one history vector (inference, kernel export,
// metrics). build_sequence_graph lays a whole sequence onto a diff::Tape in
// vectorized form so the loss can be differentiated.

#include <cstdint>
#include <string>
#include <vector>

#include "sghp/data_model.hpp"
#include "sghp/diffcore.hpp"
#include "sghp/random.hpp"

namespace sghp::model {

using diff::Tensor;

struct ModelConfig {
  std::size_t num_types = 2;       // K
  std::size_t embed_dim = 16;      // D, must be even
  std::size_t covariate_dim = 0;   // C
  std::size_t noise_samples = 10;  // M
  /// RQ factor uses d^2 (true) or d (false).
  bool use_squared_distance = true;
  /// History sum includes the i == j term.
  bool include_self_term = true;
  /// l1 term averaged over the M samples instead of applied to their mean.
  bool per_sample_l1 = false;

  /// 2D without covariates, 3D with.
  std::size_t history_dim() const noexcept { return (covariate_dim > 0 ? 3 : 2) * embed_dim; }
  void check() const;
  bool operator==(const ModelConfig&) const = default;
};

/// theta = {sigma, alpha, ell, p, s}, all strictly positive.
struct GateKernelParams {
  double sigma = 1.0;
  double alpha = 1.0;
  double ell = 1.0;
  double p = 1.0;
  double s = 1.0;
};

/// Order of the rows of kernel_head_weights.
enum KernelParam : std::size_t { kSigma = 0, kAlpha, kEll, kShift, kRate, kNumKernelParams };

struct ModelParams {
  Tensor type_embeddings;      // K x D
  Tensor temporal_scales;      // 1 x D, omega
  Tensor kernel_head_weights;  // 5 x 2D, one row per KernelParam
  Tensor kernel_head_bias;     // 1 x 5
  Tensor covariate_weights;    // D x C, only when C > 0
  Tensor covariate_bias;       // 1 x D, only when C > 0
  Tensor history_mix;          // H x H, W_h
  Tensor noise_mix;            // H x H, W_n
  Tensor time_head_weights;    // 1 x H
  Tensor time_head_bias;       // 1 x 1
  Tensor type_head_weights;    // K x H
  Tensor type_head_bias;       // 1 x K

  /// Named arrays in a fixed order (covariate arrays omitted when C = 0).
  diff::NamedArrays to_arrays() const;
  static ModelParams from_arrays(const diff::NamedArrays& arrays, const ModelConfig& cfg);
  /// Shape check against a config.
  void check(const ModelConfig& cfg) const;
  bool all_finite() const;
  bool operator==(const ModelParams&) const = default;
};

/// Embeddings and head weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)],
/// omega = 1.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Closed-form count of trainable scalars for a config.
std::size_t parameter_count(const ModelConfig& cfg);
/// Sum of the sizes of the arrays actually held.
std::size_t array_element_count(const ModelParams& params);

/// Angular frequency 1 / 10000^(2d / D) of embedding element d.
double angular_frequency(std::size_t d, std::size_t embed_dim);

/// Element d is sin(w_d i + omega_d t) for even d, cos(...) for odd d.
/// position is the 1-based index of the event in its sequence.
std::vector<double> temporal_encoding(std::size_t position, double t, const ModelParams& params,
                                      const ModelConfig& cfg);
std::vector<double> type_embedding(std::size_t k, const ModelParams& params);
/// [type embedding | temporal encoding | covariate embedding when C > 0]
std::vector<double> event_embedding(const data::Event& event, std::size_t position, const ModelParams& params,
                                    const ModelConfig& cfg);

/// Kernel parameters for the influence of type u on type v: each component
/// is softplus(w_r . [e_v | e_u] + b_r).
GateKernelParams kernel_params(std::size_t u, std::size_t v, const ModelParams& params);

/// sigma^2 (1 + dist / (2 alpha ell^2))^-alpha (1 + e^(p - d))^-s with
/// dist = d^2 or d per cfg.use_squared_distance.
double gated_kernel(double d, const GateKernelParams& theta, const ModelConfig& cfg);
double gated_kernel(double d, const GateKernelParams& theta, bool squared_distance);
double rq_kernel(double d, double sigma, double alpha, double ell);

/// h_j = sum_{i <= j} q_{k_i k_j}(|t_i - t_j|) x_i over the first
/// `prefix_length` events (j = prefix_length, 1-based). With the self term
/// disabled a one-event prefix yields the zero vector.
std::vector<double> encode_history(const data::EventSequence& seq, std::size_t prefix_length,
                                   const ModelParams& params, const ModelConfig& cfg);

struct ArrivalPrediction {
  std::vector<double> samples;
  double mean = 0.0;
};

/// noise holds M rows of length H drawn from U[0, 1).
ArrivalPrediction predict_arrival(const std::vector<double>& history, const std::vector<std::vector<double>>& noise,
                                  const ModelParams& params);
std::vector<double> predict_type(const std::vector<double>& history, const ModelParams& params);

/// M rows of H uniform draws.
std::vector<std::vector<double>> draw_noise(Rng& rng, std::size_t samples, std::size_t history_dim);

/// Tape nodes for one sequence. Row r of the matrices corresponds to the
/// prediction of event r + 1 (0-based) from the history through event r.
struct SequenceGraph {
  diff::Var history;      // (L-1) x H
  diff::Var arrival;      // (L-1) x 1, sample-mean predicted gaps
  diff::Var samples;      // (L-1) M x 1, sample predictions (row-major by event)
  diff::Var type_logits;  // (L-1) x K
  diff::Var time_loss;    // scalar
  diff::Var type_loss;    // scalar
  diff::Var loss;         // scalar
};

/// Registers every parameter array on the tape under its name and records
/// the sequence loss: sum over j of |gap_pred(j+1) - gap(j+1)| plus the
/// cross-entropy of type j+1. Consumes (L-1) M H uniforms from `noise`.
/// Throws sghp::Error("sequence_too_short") when L < 2.
SequenceGraph build_sequence_graph(diff::Tape& tape, const data::EventSequence& seq, const ModelParams& params,
                                   const ModelConfig& cfg, Rng& noise);

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

std::string save_checkpoint(const ModelConfig& cfg, const ModelParams& params);
Checkpoint load_checkpoint(const std::string& text);
void write_checkpoint_file(const std::string& path, const ModelConfig& cfg, const ModelParams& params);
Checkpoint read_checkpoint_file(const std::string& path);

}  // namespace sghp::model
