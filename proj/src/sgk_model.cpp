#include "sghp/sgk_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sghp/error.hpp"

namespace sghp::model {

using diff::Tape;
using diff::Var;

namespace {

constexpr const char* kTypeEmbeddings = "type_embeddings";
constexpr const char* kTemporalScales = "temporal_scales";
constexpr const char* kKernelWeights = "kernel_head_weights";
constexpr const char* kKernelBias = "kernel_head_bias";
constexpr const char* kCovariateWeights = "covariate_weights";
constexpr const char* kCovariateBias = "covariate_bias";
constexpr const char* kHistoryMix = "history_mix";
constexpr const char* kNoiseMix = "noise_mix";
constexpr const char* kTimeWeights = "time_head_weights";
constexpr const char* kTimeBias = "time_head_bias";
constexpr const char* kTypeWeights = "type_head_weights";
constexpr const char* kTypeBias = "type_head_bias";

struct ArraySpec {
  const char* name;
  Tensor ModelParams::*member;
  std::size_t rows;
  std::size_t cols;
  double fan_in;  // 0 marks "fill with one"
};

std::vector<ArraySpec> layout(const ModelConfig& cfg) {
  const std::size_t K = cfg.num_types, D = cfg.embed_dim, C = cfg.covariate_dim, H = cfg.history_dim();
  std::vector<ArraySpec> out = {
      {kTypeEmbeddings, &ModelParams::type_embeddings, K, D, static_cast<double>(K)},
      {kTemporalScales, &ModelParams::temporal_scales, 1, D, 0.0},
      {kKernelWeights, &ModelParams::kernel_head_weights, kNumKernelParams, 2 * D, 2.0 * D},
      {kKernelBias, &ModelParams::kernel_head_bias, 1, kNumKernelParams, 2.0 * D},
  };
  if (C > 0) {
    out.push_back({kCovariateWeights, &ModelParams::covariate_weights, D, C, static_cast<double>(C)});
    out.push_back({kCovariateBias, &ModelParams::covariate_bias, 1, D, static_cast<double>(C)});
  }
  const double h = static_cast<double>(H);
  out.push_back({kHistoryMix, &ModelParams::history_mix, H, H, h});
  out.push_back({kNoiseMix, &ModelParams::noise_mix, H, H, h});
  out.push_back({kTimeWeights, &ModelParams::time_head_weights, 1, H, h});
  out.push_back({kTimeBias, &ModelParams::time_head_bias, 1, 1, h});
  out.push_back({kTypeWeights, &ModelParams::type_head_weights, K, H, h});
  out.push_back({kTypeBias, &ModelParams::type_head_bias, 1, K, h});
  return out;
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

// ----------------------------------------------------------------- config and params

void ModelConfig::check() const {
  if (num_types == 0) throw Error("invalid_config", "num_types must be positive");
  if (embed_dim == 0 || embed_dim % 2 != 0) throw Error("invalid_config", "embedding dimension must be even and positive");
  if (noise_samples == 0) throw Error("invalid_config", "noise sample count must be at least 1");
}

diff::NamedArrays ModelParams::to_arrays() const {
  diff::NamedArrays out;
  out[kTypeEmbeddings] = type_embeddings;
  out[kTemporalScales] = temporal_scales;
  out[kKernelWeights] = kernel_head_weights;
  out[kKernelBias] = kernel_head_bias;
  if (covariate_weights.size() > 0) {
    out[kCovariateWeights] = covariate_weights;
    out[kCovariateBias] = covariate_bias;
  }
  out[kHistoryMix] = history_mix;
  out[kNoiseMix] = noise_mix;
  out[kTimeWeights] = time_head_weights;
  out[kTimeBias] = time_head_bias;
  out[kTypeWeights] = type_head_weights;
  out[kTypeBias] = type_head_bias;
  return out;
}

ModelParams ModelParams::from_arrays(const diff::NamedArrays& arrays, const ModelConfig& cfg) {
  ModelParams p;
  const auto specs = layout(cfg);
  if (arrays.size() != specs.size()) throw Error("invalid_checkpoint", "unexpected set of parameter arrays");
  for (const auto& s : specs) {
    const auto it = arrays.find(s.name);
    if (it == arrays.end()) throw Error("invalid_checkpoint", std::string("missing parameter array ") + s.name);
    p.*(s.member) = it->second;
  }
  p.check(cfg);
  return p;
}

void ModelParams::check(const ModelConfig& cfg) const {
  for (const auto& s : layout(cfg)) {
    const Tensor& t = this->*(s.member);
    if (t.rows() != s.rows || t.cols() != s.cols)
      throw Error("shape_mismatch", std::string("parameter array has the wrong shape: ") + s.name);
  }
  if (cfg.covariate_dim == 0 && (covariate_weights.size() > 0 || covariate_bias.size() > 0))
    throw Error("shape_mismatch", "covariate arrays present without covariates");
}

bool ModelParams::all_finite() const {
  for (const auto& [_, t] : to_arrays())
    if (!t.all_finite()) return false;
  return true;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.check();
  Rng rng(derive_seed(seed, {0x1417ULL}));
  ModelParams p;
  for (const auto& s : layout(cfg)) {
    Tensor t(s.rows, s.cols, 1.0);
    if (s.fan_in > 0.0) {
      const double bound = 1.0 / std::sqrt(s.fan_in);
      for (double& x : t.data()) x = rng.uniform(-bound, bound);
    }
    p.*(s.member) = std::move(t);
  }
  return p;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t K = cfg.num_types, D = cfg.embed_dim, C = cfg.covariate_dim, H = cfg.history_dim();
  return K * D + D + 5 * (2 * D + 1) + (C > 0 ? C * D + D : 0) + 2 * H * H + (H + 1) + K * H + K;
}

std::size_t array_element_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& [_, t] : params.to_arrays()) n += t.size();
  return n;
}

// ----------------------------------------------------------------- plain-double route

double angular_frequency(std::size_t d, std::size_t embed_dim) {
  return 1.0 / std::pow(10000.0, 2.0 * static_cast<double>(d) / static_cast<double>(embed_dim));
}

std::vector<double> temporal_encoding(std::size_t position, double t, const ModelParams& params,
                                      const ModelConfig& cfg) {
  const std::size_t D = cfg.embed_dim;
  std::vector<double> out(D);
  for (std::size_t d = 0; d < D; ++d) {
    const double arg = angular_frequency(d, D) * static_cast<double>(position) + params.temporal_scales[d] * t;
    out[d] = d % 2 == 0 ? std::sin(arg) : std::cos(arg);
  }
  return out;
}

std::vector<double> type_embedding(std::size_t k, const ModelParams& params) {
  const Tensor& w = params.type_embeddings;
  if (k >= w.rows()) throw Error("type_out_of_range", "type index out of range");
  return {w.values().begin() + static_cast<std::ptrdiff_t>(k * w.cols()),
          w.values().begin() + static_cast<std::ptrdiff_t>((k + 1) * w.cols())};
}

std::vector<double> event_embedding(const data::Event& event, std::size_t position, const ModelParams& params,
                                    const ModelConfig& cfg) {
  if (event.covariates.size() != cfg.covariate_dim)
    throw Error("covariate_mismatch", "event covariates do not match the model");
  std::vector<double> x = type_embedding(event.type, params);
  const auto te = temporal_encoding(position, event.time, params, cfg);
  x.insert(x.end(), te.begin(), te.end());
  if (cfg.covariate_dim > 0) {
    const Tensor& w = params.covariate_weights;
    for (std::size_t r = 0; r < cfg.embed_dim; ++r)
      x.push_back(dot(&w.values()[r * w.cols()], event.covariates.data(), cfg.covariate_dim) +
                  params.covariate_bias[r]);
  }
  return x;
}

GateKernelParams kernel_params(std::size_t u, std::size_t v, const ModelParams& params) {
  const auto eu = type_embedding(u, params);
  auto input = type_embedding(v, params);
  input.insert(input.end(), eu.begin(), eu.end());
  const Tensor& w = params.kernel_head_weights;
  double theta[kNumKernelParams];
  for (std::size_t r = 0; r < kNumKernelParams; ++r)
    theta[r] = diff::softplus(dot(&w.values()[r * w.cols()], input.data(), input.size()) + params.kernel_head_bias[r]);
  return {theta[kSigma], theta[kAlpha], theta[kEll], theta[kShift], theta[kRate]};
}

double gated_kernel(double d, const GateKernelParams& th, bool squared_distance) {
  const double dist = squared_distance ? d * d : d;
  // Both factors in exp-of-log form so large p - d or dist cannot overflow.
  const double rq = std::exp(-th.alpha * std::log1p(dist / (2.0 * th.alpha * th.ell * th.ell)));
  const double gate = std::exp(-th.s * diff::softplus(th.p - d));
  return th.sigma * th.sigma * rq * gate;
}

double gated_kernel(double d, const GateKernelParams& theta, const ModelConfig& cfg) {
  return gated_kernel(d, theta, cfg.use_squared_distance);
}

double rq_kernel(double d, double sigma, double alpha, double ell) {
  return sigma * sigma * std::pow(1.0 + d * d / (2.0 * alpha * ell * ell), -alpha);
}

std::vector<double> encode_history(const data::EventSequence& seq, std::size_t prefix_length,
                                   const ModelParams& params, const ModelConfig& cfg) {
  if (prefix_length == 0) throw Error("empty_prefix", "history needs at least one event");
  if (prefix_length > seq.size()) throw Error("index_out_of_range", "prefix longer than the sequence");
  const std::size_t j = prefix_length - 1;
  const auto& target = seq.events[j];
  std::vector<double> h(cfg.history_dim(), 0.0);
  const std::size_t end = cfg.include_self_term ? j + 1 : j;
  for (std::size_t i = 0; i < end; ++i) {
    const auto& e = seq.events[i];
    const double q = gated_kernel(std::abs(e.time - target.time), kernel_params(e.type, target.type, params), cfg);
    const auto x = event_embedding(e, i + 1, params, cfg);
    for (std::size_t c = 0; c < h.size(); ++c) h[c] += q * x[c];
  }
  return h;
}

ArrivalPrediction predict_arrival(const std::vector<double>& history, const std::vector<std::vector<double>>& noise,
                                  const ModelParams& params) {
  const std::size_t H = history.size();
  if (params.history_mix.rows() != H) throw Error("shape_mismatch", "history vector has the wrong length");
  std::vector<double> mixed(H);
  for (std::size_t r = 0; r < H; ++r) mixed[r] = dot(&params.history_mix.values()[r * H], history.data(), H);

  ArrivalPrediction out;
  for (const auto& n : noise) {
    if (n.size() != H) throw Error("shape_mismatch", "noise vector has the wrong length");
    double z = params.time_head_bias[0];
    for (std::size_t r = 0; r < H; ++r)
      z += params.time_head_weights[r] * (mixed[r] + dot(&params.noise_mix.values()[r * H], n.data(), H));
    out.samples.push_back(diff::softplus(z));
  }
  double s = 0.0;
  for (double x : out.samples) s += x;
  out.mean = out.samples.empty() ? 0.0 : s / static_cast<double>(out.samples.size());
  return out;
}

std::vector<double> predict_type(const std::vector<double>& history, const ModelParams& params) {
  const Tensor& w = params.type_head_weights;
  if (w.cols() != history.size()) throw Error("shape_mismatch", "history vector has the wrong length");
  std::vector<double> logits(w.rows());
  for (std::size_t k = 0; k < w.rows(); ++k)
    logits[k] = dot(&w.values()[k * w.cols()], history.data(), history.size()) + params.type_head_bias[k];
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) z += (l = std::exp(l - mx));
  for (double& l : logits) l /= z;
  return logits;
}

std::vector<std::vector<double>> draw_noise(Rng& rng, std::size_t samples, std::size_t history_dim) {
  std::vector<std::vector<double>> out(samples, std::vector<double>(history_dim));
  for (auto& row : out)
    for (double& x : row) x = rng.uniform();
  return out;
}

// ----------------------------------------------------------------- tape route

SequenceGraph build_sequence_graph(Tape& tape, const data::EventSequence& seq, const ModelParams& params,
                                   const ModelConfig& cfg, Rng& noise) {
  cfg.check();
  params.check(cfg);
  const std::size_t L = seq.size();
  if (L < 2) throw Error("sequence_too_short", "sequence too short: need at least two events");
  const std::size_t K = cfg.num_types, D = cfg.embed_dim, C = cfg.covariate_dim, H = cfg.history_dim();
  const std::size_t M = cfg.noise_samples;
  const std::size_t rows = L - 1;  // histories h_1 .. h_{L-1} predict events 2 .. L
  for (const auto& e : seq.events) {
    if (e.type >= K) throw Error("type_out_of_range", "type index out of range");
    if (e.covariates.size() != C) throw Error("covariate_mismatch", "event covariates do not match the model");
  }

  std::map<std::string, Var> p;
  for (const auto& [name, value] : params.to_arrays()) p[name] = tape.parameter(name, value);

  // Event embeddings X = [E | T | U], L x H.
  std::vector<std::size_t> types(L);
  for (std::size_t i = 0; i < L; ++i) types[i] = seq.events[i].type;
  Var type_part = diff::gather_rows(p.at(kTypeEmbeddings), types);

  Tensor times(L, 1), phase(L, D);
  for (std::size_t i = 0; i < L; ++i) {
    times[i] = seq.events[i].time;
    for (std::size_t d = 0; d < D; ++d) phase(i, d) = angular_frequency(d, D) * static_cast<double>(i + 1);
  }
  Var arg = diff::add(diff::matmul(tape.constant(times), p.at(kTemporalScales)), tape.constant(phase));
  std::vector<std::size_t> even, odd;
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t d = 0; d < D; ++d) (d % 2 == 0 ? even : odd).push_back(i * D + d);
  Var sin_part = diff::scatter(diff::sin(diff::gather(arg, even)), even, L, D);
  Var cos_part = diff::scatter(diff::cos(diff::gather(arg, odd)), odd, L, D);
  Var temporal_part = diff::add(sin_part, cos_part);

  std::vector<Var> blocks = {type_part, temporal_part};
  if (C > 0) {
    Tensor z(L, C);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t c = 0; c < C; ++c) z(i, c) = seq.events[i].covariates[c];
    blocks.push_back(diff::add_rowwise(diff::matmul(tape.constant(z), diff::transpose(p.at(kCovariateWeights))),
                                       p.at(kCovariateBias)));
  }
  Var x = diff::concat_cols(blocks);

  // Kernel parameters for all K^2 ordered pairs; row u*K + v is [e_v | e_u].
  std::vector<std::size_t> pair_u, pair_v;
  for (std::size_t u = 0; u < K; ++u)
    for (std::size_t v = 0; v < K; ++v) {
      pair_u.push_back(u);
      pair_v.push_back(v);
    }
  Var pair_inputs = diff::concat_cols(std::vector<Var>{diff::gather_rows(p.at(kTypeEmbeddings), pair_v),
                                                       diff::gather_rows(p.at(kTypeEmbeddings), pair_u)});
  Var theta = diff::softplus(diff::add_rowwise(diff::matmul(pair_inputs, diff::transpose(p.at(kKernelWeights))),
                                               p.at(kKernelBias)));

  // One entry per (i, j) with i <= j (or i < j) for j < L - 1.
  std::vector<std::size_t> slot, pair_param[kNumKernelParams];
  std::vector<double> lag, dist;
  for (std::size_t j = 0; j < rows; ++j) {
    const std::size_t end = cfg.include_self_term ? j + 1 : j;
    for (std::size_t i = 0; i < end; ++i) {
      const std::size_t pair = types[i] * K + types[j];
      for (std::size_t r = 0; r < kNumKernelParams; ++r) pair_param[r].push_back(pair * kNumKernelParams + r);
      const double d = std::abs(seq.events[j].time - seq.events[i].time);
      lag.push_back(d);
      dist.push_back(cfg.use_squared_distance ? d * d : d);
      slot.push_back(j * L + i);
    }
  }

  Var history;
  if (slot.empty()) {
    history = tape.constant(Tensor(rows, H));
  } else {
    Var sigma = diff::gather(theta, pair_param[kSigma]);
    Var alpha = diff::gather(theta, pair_param[kAlpha]);
    Var ell = diff::gather(theta, pair_param[kEll]);
    Var shift = diff::gather(theta, pair_param[kShift]);
    Var rate = diff::gather(theta, pair_param[kRate]);
    Var rq_scale = diff::scale(diff::mul(alpha, diff::mul(ell, ell)), 2.0);
    Var rq = diff::exp(diff::neg(diff::mul(alpha, diff::log1p(diff::div(tape.constant(Tensor::column(dist)), rq_scale)))));
    Var gate = diff::exp(diff::neg(diff::mul(rate, diff::softplus(diff::sub(shift, tape.constant(Tensor::column(lag)))))));
    Var q = diff::mul(diff::mul(sigma, sigma), diff::mul(rq, gate));
    history = diff::matmul(diff::scatter(q, slot, rows, L), x);
  }

  // Arrival decoder: W_t (W_h h + W_n n) + b_t = (W_h^T W_t) . h + (W_n^T W_t) . n + b_t.
  Var time_col = diff::transpose(p.at(kTimeWeights));
  Var history_dir = diff::matmul(diff::transpose(p.at(kHistoryMix)), time_col);
  Var noise_dir = diff::matmul(diff::transpose(p.at(kNoiseMix)), time_col);
  Tensor noise_draws(rows * M, H);
  for (double& v : noise_draws.data()) v = noise.uniform();
  std::vector<std::size_t> repeat;
  for (std::size_t j = 0; j < rows; ++j)
    for (std::size_t m = 0; m < M; ++m) repeat.push_back(j);
  Var pre = diff::add(diff::add(diff::gather(diff::matmul(history, history_dir), repeat),
                                diff::matmul(tape.constant(std::move(noise_draws)), noise_dir)),
                      p.at(kTimeBias));
  Var samples = diff::softplus(pre);
  Var arrival = diff::matmul(diff::reshape(samples, rows, M), tape.constant(Tensor(M, 1, 1.0 / static_cast<double>(M))));

  std::vector<double> gaps(rows);
  std::vector<std::size_t> next_types(rows);
  for (std::size_t j = 0; j < rows; ++j) {
    gaps[j] = seq.events[j + 1].time - seq.events[j].time;
    next_types[j] = types[j + 1];
  }
  Var time_loss;
  if (cfg.per_sample_l1) {
    std::vector<double> rep_gaps;
    for (auto j : repeat) rep_gaps.push_back(gaps[j]);
    time_loss = diff::scale(diff::sum(diff::abs(diff::sub(samples, tape.constant(Tensor::column(rep_gaps))))),
                            1.0 / static_cast<double>(M));
  } else {
    time_loss = diff::sum(diff::abs(diff::sub(arrival, tape.constant(Tensor::column(gaps)))));
  }

  Var logits = diff::add_rowwise(diff::matmul(history, diff::transpose(p.at(kTypeWeights))), p.at(kTypeBias));
  Var type_loss = diff::softmax_cross_entropy(logits, next_types);

  return {history, arrival, samples, logits, time_loss, type_loss, diff::add(time_loss, type_loss)};
}

// ----------------------------------------------------------------- checkpoints

namespace {

using Json = nlohmann::ordered_json;

Json config_to_json(const ModelConfig& c) {
  return Json{{"num_types", c.num_types},
              {"embed_dim", c.embed_dim},
              {"covariate_dim", c.covariate_dim},
              {"noise_samples", c.noise_samples},
              {"use_squared_distance", c.use_squared_distance},
              {"include_self_term", c.include_self_term},
              {"per_sample_l1", c.per_sample_l1}};
}

ModelConfig config_from_json(const Json& j) {
  ModelConfig c;
  c.num_types = j.at("num_types").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.covariate_dim = j.at("covariate_dim").get<std::size_t>();
  c.noise_samples = j.at("noise_samples").get<std::size_t>();
  c.use_squared_distance = j.at("use_squared_distance").get<bool>();
  c.include_self_term = j.at("include_self_term").get<bool>();
  c.per_sample_l1 = j.value("per_sample_l1", false);
  c.check();
  return c;
}

}  // namespace

std::string save_checkpoint(const ModelConfig& cfg, const ModelParams& params) {
  params.check(cfg);
  Json arrays = Json::object();
  for (const auto& [name, t] : params.to_arrays())
    arrays[name] = Json{{"shape", {t.rows(), t.cols()}}, {"data", t.values()}};
  Json doc{{"format", "sghp-checkpoint"}, {"version", 1}, {"config", config_to_json(cfg)}, {"arrays", arrays}};
  return doc.dump(1) + "\n";
}

Checkpoint load_checkpoint(const std::string& text) {
  try {
    const Json doc = Json::parse(text);
    if (doc.value("format", "") != "sghp-checkpoint") throw Error("invalid_checkpoint", "not a checkpoint document");
    Checkpoint ck;
    ck.config = config_from_json(doc.at("config"));
    diff::NamedArrays arrays;
    for (const auto& [name, a] : doc.at("arrays").items()) {
      const auto shape = a.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw Error("invalid_checkpoint", "array shape must have two entries");
      arrays[name] = Tensor(shape[0], shape[1], a.at("data").get<std::vector<double>>());
    }
    ck.params = ModelParams::from_arrays(arrays, ck.config);
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_checkpoint", std::string("malformed checkpoint: ") + e.what());
  }
}

void write_checkpoint_file(const std::string& path, const ModelConfig& cfg, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io_error", "cannot write checkpoint " + path);
  out << save_checkpoint(cfg, params);
  if (!out) throw Error("io_error", "write failed for " + path);
}

Checkpoint read_checkpoint_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_error", "cannot open checkpoint " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return load_checkpoint(buf.str());
}

}  // namespace sghp::model
