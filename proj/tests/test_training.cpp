#include <cmath>
#include <sstream>

#include "doctest.h"
#include "sghp/error.hpp"
#include "sghp/hawkes_sim.hpp"
#include "sghp/training.hpp"

using namespace sghp;

namespace {

data::Dataset small_set(std::size_t n, std::uint64_t seed) {
  sim::SimulationOptions o;
  o.num_sequences = n;
  o.horizon = 12.0;
  o.seed = seed;
  return sim::simulate_dataset(sim::appendix_a_spec(sim::kDefaultPowerLawSupport), o);
}

train::TrainConfig quick_config() {
  train::TrainConfig cfg;
  cfg.embed_dim = 4;
  cfg.noise_samples = 2;
  cfg.batch_size = 8;
  cfg.max_epochs = 4;
  cfg.adam.learning_rate = 1e-2;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("training is deterministic") {
  auto tr = small_set(20, 1), va = small_set(5, 2);
  auto cfg = quick_config();
  auto a = train::train(tr, va, cfg), b = train::train(tr, va, cfg);
  REQUIRE(a.report.epochs.size() == b.report.epochs.size());
  for (std::size_t e = 0; e < a.report.epochs.size(); ++e) {
    CHECK(a.report.epochs[e].train_loss == b.report.epochs[e].train_loss);
    CHECK(a.report.epochs[e].val_loss == b.report.epochs[e].val_loss);
  }
  CHECK(a.params == b.params);
  CHECK(train::loss_csv(a.report) == train::loss_csv(b.report));
  cfg.seed = 12;
  CHECK_FALSE(train::train(tr, va, cfg).params == a.params);
}

TEST_CASE("training loss improves on a small synthetic set") {
  auto tr = small_set(50, 3), va = small_set(10, 4);
  auto cfg = quick_config();
  cfg.max_epochs = 15;
  auto r = train::train(tr, va, cfg);
  REQUIRE(r.report.best_epoch >= 1);
  CHECK(r.report.best_epoch <= r.report.epochs.size());
  CHECK(r.report.epochs[r.report.best_epoch - 1].train_loss < r.report.epochs.front().train_loss);
  CHECK(r.params.all_finite());
  for (const auto& e : r.report.epochs) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.val_loss));
  }
}

TEST_CASE("early stopping and best-epoch selection") {
  auto tr = small_set(20, 5), va = small_set(5, 6);
  auto cfg = quick_config();
  cfg.patience = 0;
  cfg.max_epochs = 40;
  cfg.adam.learning_rate = 0.3;  // noisy enough that validation stalls quickly
  auto r = train::train(tr, va, cfg);
  const auto& ep = r.report.epochs;
  if (r.report.stopped_early) {
    REQUIRE(ep.size() >= 2);
    // stop right after the first non-improving epoch
    CHECK(ep.back().val_loss >= ep[ep.size() - 2].val_loss);
    for (std::size_t e = 1; e + 1 < ep.size(); ++e) CHECK(ep[e].val_loss < ep[e - 1].val_loss);
  }
  double best = ep[r.report.best_epoch - 1].val_loss;
  for (const auto& e : ep) CHECK(e.val_loss >= best);
  // the returned parameters are those of the best epoch
  const auto mcfg = r.config;
  CHECK(train::evaluate_loss(va, r.params, mcfg, derive_seed(cfg.seed, {4})) == best);
}

TEST_CASE("evaluate_loss") {
  auto ds = small_set(6, 7);
  train::TrainConfig cfg;
  cfg.embed_dim = 4;
  auto mcfg = cfg.model_config(2, 0);
  auto p = model::init_params(mcfg, 1);

  data::Dataset one = ds;
  one.sequences.resize(1);
  CHECK(train::evaluate_loss(one, p, mcfg, 5) ==
        train::sequence_loss(one.sequences[0], p, mcfg, derive_seed(5, {0})));
  CHECK(train::evaluate_loss(ds, p, mcfg, 5) == train::evaluate_loss(ds, p, mcfg, 5));

  // duplicated dataset has the same mean, given W_n = 0 removes the noise
  p.noise_mix.fill(0.0);
  data::Dataset twice = ds;
  twice.sequences.insert(twice.sequences.end(), ds.sequences.begin(), ds.sequences.end());
  CHECK(train::evaluate_loss(twice, p, mcfg, 5) == doctest::Approx(train::evaluate_loss(ds, p, mcfg, 5)));

  data::Dataset shorts{2, 0, "", {data::EventSequence{{{0, 1.0, {}}}}}};
  CHECK_THROWS_AS(train::evaluate_loss(shorts, p, mcfg, 5), Error);
}

TEST_CASE("training errors") {
  auto cfg = quick_config();
  auto tr = small_set(4, 8);
  data::Dataset other = tr;
  other.num_types = 3;
  CHECK_THROWS_WITH_AS(train::train(tr, other, cfg), doctest::Contains("differ"), Error);

  data::Dataset shorts{2, 0, "", {data::EventSequence{{{0, 1.0, {}}}}}};
  try {
    train::train(shorts, shorts, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.code()) == "sequence_too_short");
  }

  data::Dataset huge{2, 0, "", {data::EventSequence{{{0, 0.0, {}}, {1, 1e200, {}}, {0, 2e200, {}}}}}};
  try {
    train::train(huge, data::Dataset{2, 0, "", {}}, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.code()) == "non_finite_loss");
    CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
  }

  auto bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(train::train(tr, tr, bad), Error);
}

TEST_CASE("empty validation set falls back to training loss") {
  auto cfg = quick_config();
  cfg.max_epochs = 2;
  auto r = train::train(small_set(6, 9), data::Dataset{2, 0, "", {}}, cfg);
  CHECK(r.report.selected_on_train);
  CHECK(r.report.epochs.size() == 2);
}

TEST_CASE("report formats") {
  train::TrainReport rep;
  rep.epochs = {{1, 2.5, 3.0, 0.1}, {2, 2.0, 2.75, 0.1}};
  rep.best_epoch = 2;
  rep.parameter_count = 10;
  CHECK(train::loss_csv(rep) == "epoch,train_loss,val_loss\n1,2.5,3\n2,2,2.75\n");
  auto js = train::report_to_json(rep);
  CHECK(js.find("\"best_epoch\": 2") != std::string::npos);
  CHECK(js.find("\"parameter_count\": 10") != std::string::npos);
}
