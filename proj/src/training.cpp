#include "sghp/training.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "sghp/error.hpp"
#include "sghp/random.hpp"

namespace sghp::train {

namespace {

// Seed paths under the master seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kNoiseStream = 3;
constexpr std::uint64_t kEvalStream = 4;

std::vector<std::size_t> usable(const data::Dataset& ds) {
  std::vector<std::size_t> idx;
  for (std::size_t n = 0; n < ds.size(); ++n)
    if (ds.sequences[n].size() >= 2) idx.push_back(n);
  return idx;
}

void add_into(diff::NamedArrays& acc, const diff::NamedArrays& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (auto& [name, t] : acc) {
    const auto& src = g.at(name).values();
    auto dst = t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

}  // namespace

void TrainConfig::check() const {
  if (batch_size == 0) throw Error("invalid_config", "batch_size must be at least 1");
  if (max_epochs == 0) throw Error("invalid_config", "max_epochs must be at least 1");
  if (!(adam.learning_rate > 0.0)) throw Error("invalid_config", "learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw Error("invalid_config", "Adam betas must lie in [0, 1)");
  if (!(adam.epsilon > 0.0)) throw Error("invalid_config", "Adam epsilon must be positive");
  model_config(1, 0).check();
}

model::ModelConfig TrainConfig::model_config(std::size_t num_types, std::size_t covariate_dim) const {
  model::ModelConfig m;
  m.num_types = num_types;
  m.covariate_dim = covariate_dim;
  m.embed_dim = embed_dim;
  m.noise_samples = noise_samples;
  m.use_squared_distance = use_squared_distance;
  m.include_self_term = include_self_term;
  m.per_sample_l1 = per_sample_l1;
  return m;
}

diff::Evaluation sequence_loss_and_gradient(const data::EventSequence& seq, const model::ModelParams& params,
                                            const model::ModelConfig& cfg, std::uint64_t noise_seed) {
  diff::Tape tape;
  Rng noise(noise_seed);
  auto g = model::build_sequence_graph(tape, seq, params, cfg, noise);
  return diff::evaluate(tape, g.loss);
}

double sequence_loss(const data::EventSequence& seq, const model::ModelParams& params,
                     const model::ModelConfig& cfg, std::uint64_t noise_seed) {
  diff::Tape tape;
  Rng noise(noise_seed);
  return model::build_sequence_graph(tape, seq, params, cfg, noise).loss.scalar();
}

double evaluate_loss(const data::Dataset& ds, const model::ModelParams& params, const model::ModelConfig& cfg,
                     std::uint64_t noise_seed) {
  const auto idx = usable(ds);
  if (idx.empty()) throw Error("sequence_too_short", "sequence too short: no sequence with at least two events");
  double total = 0.0;
  for (auto n : idx) total += sequence_loss(ds.sequences[n], params, cfg, derive_seed(noise_seed, {n}));
  return total / static_cast<double>(idx.size());
}

TrainResult train(const data::Dataset& train_set, const data::Dataset& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.check();
  if (!val_set.sequences.empty() &&
      (val_set.num_types != train_set.num_types || val_set.covariate_dim != train_set.covariate_dim))
    throw Error("dataset_mismatch", "training and validation sets differ in type count or covariate length");
  const auto train_idx = usable(train_set);
  if (train_idx.empty())
    throw Error("sequence_too_short", "sequence too short: no training sequence with at least two events");
  const auto val_idx = usable(val_set);

  TrainResult result;
  result.config = cfg.model_config(train_set.num_types, train_set.covariate_dim);
  const auto& mcfg = result.config;
  auto params = model::init_params(mcfg, derive_seed(cfg.seed, {kInitStream}));
  result.params = params;
  result.report.parameter_count = model::parameter_count(mcfg);
  result.report.selected_on_train = val_idx.empty();

  diff::AdamState adam;
  adam.config = cfg.adam;
  diff::NamedArrays arrays = params.to_arrays();
  const std::uint64_t eval_seed = derive_seed(cfg.seed, {kEvalStream});

  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order = train_idx;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng shuffle(derive_seed(cfg.seed, {kShuffleStream, epoch}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double epoch_loss = 0.0;
    for (std::size_t b = 0, batch = 0; b < order.size(); b += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      diff::NamedArrays grads;
      double batch_loss = 0.0;
      for (std::size_t k = b; k < end; ++k) {
        const std::size_t n = order[k];
        diff::Evaluation ev;
        try {
          ev = sequence_loss_and_gradient(train_set.sequences[n], params, mcfg,
                                          derive_seed(cfg.seed, {kNoiseStream, epoch, n}));
        } catch (const diff::DomainError& e) {
          std::ostringstream msg;
          msg << "non-finite loss in epoch " << epoch << " batch " << batch << " (" << e.what() << ")";
          throw Error("non_finite_loss", msg.str());
        }
        batch_loss += ev.value;
        add_into(grads, ev.gradients);
      }
      if (!std::isfinite(batch_loss) || !std::isfinite(diff::global_norm(grads))) {
        std::ostringstream msg;
        msg << "non-finite loss in epoch " << epoch << " batch " << batch;
        throw Error("non_finite_loss", msg.str());
      }
      epoch_loss += batch_loss;
      if (cfg.clip_norm > 0.0) diff::clip_global_norm(grads, cfg.clip_norm);
      diff::adam_step(arrays, grads, adam);
      params = model::ModelParams::from_arrays(arrays, mcfg);
      ++result.report.steps;
    }
    if (!params.all_finite()) throw Error("non_finite_loss", "parameters became non-finite");

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());
    rec.val_loss = val_idx.empty() ? evaluate_loss(train_set, params, mcfg, eval_seed)
                                   : evaluate_loss(val_set, params, mcfg, eval_seed);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < best) {
      best = rec.val_loss;
      since_best = 0;
      result.params = params;
      result.report.best_epoch = epoch;
    } else if (++since_best > cfg.patience) {
      result.report.stopped_early = true;
      break;
    }
  }
  return result;
}

std::string report_to_json(const TrainReport& report) {
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const auto& e : report.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"seconds", e.seconds}});
  nlohmann::ordered_json doc{{"best_epoch", report.best_epoch},
                             {"epochs_run", report.epochs.size()},
                             {"steps", report.steps},
                             {"stopped_early", report.stopped_early},
                             {"selected_on_train", report.selected_on_train},
                             {"parameter_count", report.parameter_count},
                             {"epochs", epochs}};
  return doc.dump(2) + "\n";
}

std::string loss_csv(const TrainReport& report) {
  std::ostringstream out;
  out << std::setprecision(17) << "epoch,train_loss,val_loss\n";
  for (const auto& e : report.epochs) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << '\n';
  return out.str();
}

}  // namespace sghp::train
