#include <cmath>
#include <numbers>

#include "doctest.h"
#include "sghp/error.hpp"
#include "sghp/sgk_model.hpp"

using namespace sghp;
using namespace sghp::model;

namespace {

data::EventSequence random_sequence(Rng& rng, std::size_t n, std::size_t K, std::size_t C = 0) {
  data::EventSequence s;
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    t += rng.exponential(1.0) + 1e-3;
    data::Event e{rng.below(K), t, {}};
    for (std::size_t c = 0; c < C; ++c) e.covariates.push_back(rng.uniform(-1.0, 1.0));
    s.events.push_back(e);
  }
  return s;
}

// Straight transcription of the model definition, deliberately without any
// of the library's helpers.
std::vector<double> history_oracle(const data::EventSequence& seq, std::size_t j, const ModelParams& p,
                                   const ModelConfig& cfg) {
  const std::size_t D = cfg.embed_dim;
  auto embed = [&](std::size_t k) {
    std::vector<double> e(D);
    for (std::size_t d = 0; d < D; ++d) e[d] = p.type_embeddings(k, d);
    return e;
  };
  std::vector<double> h(cfg.history_dim(), 0.0);
  const auto& tj = seq.events[j];
  for (std::size_t i = 0; i <= j; ++i) {
    if (i == j && !cfg.include_self_term) continue;
    const auto& ev = seq.events[i];
    // kernel parameters, input [e_target | e_source]
    std::vector<double> in = embed(tj.type), src = embed(ev.type);
    in.insert(in.end(), src.begin(), src.end());
    double th[5];
    for (int r = 0; r < 5; ++r) {
      double z = p.kernel_head_bias(0, r);
      for (std::size_t c = 0; c < in.size(); ++c) z += p.kernel_head_weights(r, c) * in[c];
      th[r] = std::log(1.0 + std::exp(z));
    }
    const double d = std::fabs(tj.time - ev.time);
    const double dist = cfg.use_squared_distance ? d * d : d;
    const double q = th[0] * th[0] * std::pow(1.0 + dist / (2.0 * th[1] * th[2] * th[2]), -th[1]) *
                     std::pow(1.0 + std::exp(th[3] - d), -th[4]);
    std::vector<double> x = embed(ev.type);
    for (std::size_t dd = 0; dd < D; ++dd) {
      const double arg = std::pow(10000.0, -2.0 * dd / double(D)) * double(i + 1) + p.temporal_scales(0, dd) * ev.time;
      x.push_back(dd % 2 == 0 ? std::sin(arg) : std::cos(arg));
    }
    for (std::size_t r = 0; cfg.covariate_dim > 0 && r < D; ++r) {
      double z = p.covariate_bias(0, r);
      for (std::size_t c = 0; c < cfg.covariate_dim; ++c) z += p.covariate_weights(r, c) * ev.covariates[c];
      x.push_back(z);
    }
    for (std::size_t c = 0; c < h.size(); ++c) h[c] += q * x[c];
  }
  return h;
}

ModelConfig small_config(std::size_t K = 2, std::size_t D = 4, std::size_t M = 2, std::size_t C = 0) {
  ModelConfig cfg;
  cfg.num_types = K;
  cfg.embed_dim = D;
  cfg.noise_samples = M;
  cfg.covariate_dim = C;
  return cfg;
}

}  // namespace

TEST_CASE("temporal encoding examples") {
  auto cfg = small_config(2, 4);
  auto p = init_params(cfg, 1);
  auto e = temporal_encoding(0, 0.0, p, cfg);
  CHECK(e[0] == 0.0);
  CHECK(e[1] == 1.0);
  CHECK(e[2] == 0.0);
  CHECK(e[3] == 1.0);

  auto cfg2 = small_config(2, 2);
  auto p2 = init_params(cfg2, 1);
  auto e2 = temporal_encoding(1, 0.0, p2, cfg2);
  CHECK(e2[0] == doctest::Approx(0.8414709848).epsilon(1e-9));
  CHECK(angular_frequency(0, 16) == 1.0);
  CHECK(angular_frequency(4, 16) == doctest::Approx(0.01));

  Rng rng(3);
  for (int n = 0; n < 200; ++n) {
    auto v = temporal_encoding(rng.below(100), rng.uniform(0, 1e4), p, cfg);
    for (double x : v) CHECK(std::fabs(x) <= 1.0);
  }
}

TEST_CASE("type embedding rows and range") {
  auto cfg = small_config(2, 2);
  auto p = init_params(cfg, 1);
  p.type_embeddings = Tensor(2, 2, {1, 0, 0, 1});
  CHECK(type_embedding(0, p) == std::vector<double>{1, 0});
  CHECK(type_embedding(1, p) == std::vector<double>{0, 1});
  CHECK_THROWS_AS(type_embedding(2, p), Error);
}

TEST_CASE("event embedding layout") {
  auto cfg = small_config(2, 4);
  auto p = init_params(cfg, 2);
  CHECK(event_embedding({1, 0.5, {}}, 1, p, cfg).size() == 8);

  auto cfgc = small_config(2, 4, 2, 3);
  auto pc = init_params(cfgc, 2);
  auto x = event_embedding({0, 0.5, {0, 0, 0}}, 1, pc, cfgc);
  REQUIRE(x.size() == 12);
  for (std::size_t d = 0; d < 4; ++d) CHECK(x[8 + d] == pc.covariate_bias[d]);
  CHECK_THROWS_AS(event_embedding({0, 0.5, {1.0}}, 1, pc, cfgc), Error);
}

TEST_CASE("kernel parameters") {
  auto cfg = small_config(2, 4);
  auto p = init_params(cfg, 3);
  p.kernel_head_weights.fill(0.0);
  p.kernel_head_bias.fill(0.0);
  auto th = kernel_params(0, 1, p);
  for (double v : {th.sigma, th.alpha, th.ell, th.p, th.s}) CHECK(v == doctest::Approx(std::log(2.0)));

  p = init_params(cfg, 3);
  auto a = kernel_params(0, 1, p), b = kernel_params(1, 0, p);
  CHECK(a.sigma != b.sigma);

  // hand-computed: one nonzero weight on the first element of e_v
  p.kernel_head_weights.fill(0.0);
  p.kernel_head_bias.fill(0.0);
  p.type_embeddings = Tensor(2, 4, {1, 0, 0, 0, 2, 0, 0, 0});
  p.kernel_head_weights(kSigma, 0) = 1.0;  // e_v component
  p.kernel_head_weights(kRate, 4) = 1.0;   // e_u component
  auto c = kernel_params(0, 1, p);         // u = 0, v = 1
  CHECK(c.sigma == doctest::Approx(std::log1p(std::exp(2.0))));
  CHECK(c.s == doctest::Approx(std::log1p(std::exp(1.0))));
}

TEST_CASE("gated and rational quadratic kernels") {
  GateKernelParams th{1, 1, 1, 0, 1};
  CHECK(gated_kernel(0.0, th, true) == doctest::Approx(0.5));
  CHECK(rq_kernel(std::sqrt(2.0), 1, 1, 1) == doctest::Approx(0.5));

  // large delay: gate goes to one, kernel tends to the RQ factor
  GateKernelParams g{1.3, 0.7, 2.0, 1.5, 2.0};
  CHECK(gated_kernel(60.0, g, true) == doctest::Approx(rq_kernel(60.0, 1.3, 0.7, 2.0)).epsilon(1e-12));
  // huge p - d does not overflow
  GateKernelParams big{1, 1, 1, 800, 1};
  CHECK(gated_kernel(0.0, big, true) >= 0.0);
  CHECK(std::isfinite(gated_kernel(0.0, big, true)));

  // gate increases with d, RQ factor decreases
  double prev_gate = 0.0, prev_rq = 2.0;
  for (double d = 0.0; d < 10.0; d += 0.25) {
    const double gate = std::pow(1.0 + std::exp(g.p - d), -g.s);
    CHECK(gate >= prev_gate);
    CHECK(gated_kernel(d, g, true) == doctest::Approx(rq_kernel(d, g.sigma, g.alpha, g.ell) * gate));
    const double rq = rq_kernel(d, 1, 1, 1);
    CHECK(rq <= prev_rq);
    prev_gate = gate;
    prev_rq = rq;
  }
  GateKernelParams lin{1, 1, 1, 0, 1};
  CHECK(gated_kernel(2.0, lin, false) == doctest::Approx(std::pow(2.0, -1) / (1 + std::exp(-2.0))));
}

TEST_CASE("history encoding matches the double-loop oracle") {
  Rng rng(11);
  for (bool self : {true, false})
    for (bool sq : {true, false})
      for (std::size_t C : {0u, 2u}) {
        auto cfg = small_config(3, 4, 2, C);
        cfg.include_self_term = self;
        cfg.use_squared_distance = sq;
        auto p = init_params(cfg, 5 + C);
        for (std::size_t n = 1; n <= 20; ++n) {
          auto seq = random_sequence(rng, n, 3, C);
          for (std::size_t j = 1; j <= n; ++j) {
            auto h = encode_history(seq, j, p, cfg);
            auto o = history_oracle(seq, j - 1, p, cfg);
            REQUIRE(h.size() == o.size());
            for (std::size_t c = 0; c < h.size(); ++c) CHECK(h[c] == doctest::Approx(o[c]).epsilon(1e-10));
          }
        }
      }
}

TEST_CASE("history encoding is causal and handles the self term") {
  auto cfg = small_config(2, 4);
  auto p = init_params(cfg, 6);
  Rng rng(2);
  auto seq = random_sequence(rng, 10, 2);
  auto h5 = encode_history(seq, 5, p, cfg);
  auto changed = seq;
  for (std::size_t i = 5; i < 10; ++i) {
    changed.events[i].type = 1 - changed.events[i].type;
    changed.events[i].time += 3.0;
  }
  CHECK(encode_history(changed, 5, p, cfg) == h5);

  cfg.include_self_term = false;
  for (double x : encode_history(seq, 1, p, cfg)) CHECK(x == 0.0);
  CHECK_THROWS_AS(encode_history(seq, 0, p, cfg), Error);
  CHECK_THROWS_AS(encode_history(seq, 11, p, cfg), Error);
}

TEST_CASE("arrival decoder") {
  auto cfg = small_config(2, 4, 5);
  auto p = init_params(cfg, 7);
  Rng rng(1);
  auto seq = random_sequence(rng, 6, 2);
  auto h = encode_history(seq, 4, p, cfg);

  std::vector<std::vector<double>> same(5, std::vector<double>(8, 0.3));
  auto a = predict_arrival(h, same, p);
  for (double s : a.samples) CHECK(s == doctest::Approx(a.samples[0]));
  CHECK(a.mean == doctest::Approx(a.samples[0]));

  for (int n = 0; n < 50; ++n) {
    auto b = predict_arrival(h, draw_noise(rng, 5, 8), p);
    for (double s : b.samples) CHECK(s > 0.0);
  }

  p.noise_mix.fill(0.0);
  auto c = predict_arrival(h, draw_noise(rng, 5, 8), p);
  for (double s : c.samples) CHECK(s == doctest::Approx(c.samples[0]));
  // hand computation with W_n = 0
  double z = p.time_head_bias[0];
  for (std::size_t r = 0; r < 8; ++r) {
    double m = 0.0;
    for (std::size_t c2 = 0; c2 < 8; ++c2) m += p.history_mix(r, c2) * h[c2];
    z += p.time_head_weights[r] * m;
  }
  CHECK(c.mean == doctest::Approx(std::log1p(std::exp(z))));
}

TEST_CASE("type decoder") {
  auto cfg = small_config(2, 2);
  auto p = init_params(cfg, 8);
  std::vector<double> h{0.3, -1.0, 2.0, 0.5};
  p.type_head_weights.fill(0.0);
  p.type_head_bias.fill(0.0);
  auto u = predict_type(h, p);
  CHECK(u[0] == doctest::Approx(0.5));
  CHECK(u[1] == doctest::Approx(0.5));

  p.type_head_bias = Tensor(1, 2, {1.0, 0.0});
  auto v = predict_type(h, p);
  CHECK(v[0] == doctest::Approx(0.7310585786));
  CHECK(v[1] == doctest::Approx(0.2689414214));

  p = init_params(cfg, 9);
  auto w = predict_type(h, p);
  p.type_head_bias[0] += 100.0;
  p.type_head_bias[1] += 100.0;
  auto w2 = predict_type(h, p);
  CHECK(w[0] == doctest::Approx(w2[0]).epsilon(1e-12));
  CHECK(w[0] + w[1] == doctest::Approx(1.0));
}

TEST_CASE("tape route agrees with the plain route") {
  Rng rng(21);
  for (std::size_t C : {0u, 3u})
    for (bool self : {true, false}) {
      auto cfg = small_config(3, 6, 4, C);
      cfg.include_self_term = self;
      auto p = init_params(cfg, 30 + C);
      auto seq = random_sequence(rng, 12, 3, C);

      diff::Tape tape;
      Rng noise(99);
      auto g = build_sequence_graph(tape, seq, p, cfg, noise);

      Rng noise2(99);
      double time_loss = 0.0, type_loss = 0.0;
      for (std::size_t j = 1; j < seq.size(); ++j) {
        auto h = encode_history(seq, j, p, cfg);
        for (std::size_t c = 0; c < h.size(); ++c)
          CHECK(g.history.value()(j - 1, c) == doctest::Approx(h[c]).epsilon(1e-10));
        auto a = predict_arrival(h, draw_noise(noise2, cfg.noise_samples, cfg.history_dim()), p);
        CHECK(g.arrival.value()[j - 1] == doctest::Approx(a.mean).epsilon(1e-10));
        time_loss += std::fabs(a.mean - (seq.events[j].time - seq.events[j - 1].time));
        type_loss -= std::log(predict_type(h, p)[seq.events[j].type]);
      }
      CHECK(g.time_loss.scalar() == doctest::Approx(time_loss).epsilon(1e-10));
      CHECK(g.type_loss.scalar() == doctest::Approx(type_loss).epsilon(1e-10));
      CHECK(g.loss.scalar() == doctest::Approx(time_loss + type_loss).epsilon(1e-10));
    }
}

TEST_CASE("sequence loss properties") {
  auto cfg = small_config(2, 4, 2);
  Rng rng(4);
  for (int n = 0; n < 20; ++n) {
    auto p = init_params(cfg, n);
    auto seq = random_sequence(rng, 2 + rng.below(10), 2);
    diff::Tape tape;
    auto g = build_sequence_graph(tape, seq, p, cfg, rng);
    CHECK(g.loss.scalar() >= 0.0);
  }

  // Near-perfect prediction: a 2-event sequence whose gap equals the decoder
  // output and type head strongly favouring the true type.
  auto p = init_params(cfg, 1);
  p.noise_mix.fill(0.0);
  p.history_mix.fill(0.0);
  p.time_head_bias[0] = std::log(std::exp(0.75) - 1.0);  // softplus^-1(0.75)
  p.type_head_weights.fill(0.0);
  p.type_head_bias = Tensor(1, 2, {0.0, 60.0});
  data::EventSequence seq{{{0, 1.0, {}}, {1, 1.75, {}}}};
  diff::Tape tape;
  auto g = build_sequence_graph(tape, seq, p, cfg, rng);
  CHECK(g.time_loss.scalar() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.type_loss.scalar() < 1e-20);

  data::EventSequence one{{{0, 1.0, {}}}};
  diff::Tape t2;
  CHECK_THROWS_AS(build_sequence_graph(t2, one, p, cfg, rng), Error);
}

TEST_CASE("per-sample l1 variant") {
  auto cfg = small_config(2, 4, 3);
  cfg.per_sample_l1 = true;
  auto p = init_params(cfg, 2);
  Rng rng(8);
  auto seq = random_sequence(rng, 5, 2);
  diff::Tape tape;
  auto g = build_sequence_graph(tape, seq, p, cfg, rng);
  double expect = 0.0;
  for (std::size_t j = 0; j + 1 < seq.size(); ++j)
    for (std::size_t m = 0; m < 3; ++m)
      expect += std::fabs(g.samples.value()[j * 3 + m] - (seq.events[j + 1].time - seq.events[j].time)) / 3.0;
  CHECK(g.time_loss.scalar() == doctest::Approx(expect));
}

TEST_CASE("sequence loss gradients match finite differences") {
  auto cfg = small_config(2, 4, 2);
  data::EventSequence toy{{{0, 0.4, {}}, {1, 1.1, {}}, {0, 2.3, {}}}};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto p = init_params(cfg, seed);
    diff::Tape tape;
    Rng noise(seed);
    auto g = build_sequence_graph(tape, toy, p, cfg, noise);
    CHECK(diff::grad_check(tape, g.loss, 1e-6) <= 1e-4);
  }
  auto cfgc = small_config(2, 4, 2, 2);
  data::EventSequence toyc{{{0, 0.4, {0.5, -1}}, {1, 1.1, {0.2, 0.1}}, {1, 2.0, {-0.3, 0.9}}}};
  auto pc = init_params(cfgc, 4);
  diff::Tape tape;
  Rng noise(4);
  auto g = build_sequence_graph(tape, toyc, pc, cfgc, noise);
  CHECK(diff::grad_check(tape, g.loss, 1e-6) <= 1e-4);
}

TEST_CASE("parameter count") {
  for (std::size_t C : {0u, 3u}) {
    auto cfg = small_config(2, 16, 10, C);
    CHECK(parameter_count(cfg) == array_element_count(init_params(cfg, 1)));
  }
  CHECK(parameter_count(small_config(2, 16)) == 2360);
  auto cfg = small_config(5, 8, 2, 4);
  CHECK(parameter_count(cfg) == array_element_count(init_params(cfg, 1)));
}

TEST_CASE("initialisation is deterministic and bounded") {
  auto cfg = small_config(2, 16);
  auto a = init_params(cfg, 42), b = init_params(cfg, 42), c = init_params(cfg, 43);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (double w : a.temporal_scales.values()) CHECK(w == 1.0);
  for (double w : a.history_mix.values()) CHECK(std::fabs(w) <= 1.0 / std::sqrt(32.0));
  ModelConfig odd = cfg;
  odd.embed_dim = 3;
  CHECK_THROWS_AS(init_params(odd, 1), Error);
}

TEST_CASE("checkpoint round trip") {
  for (std::size_t C : {0u, 2u}) {
    auto cfg = small_config(3, 4, 3, C);
    cfg.use_squared_distance = false;
    auto p = init_params(cfg, 77);
    auto text = save_checkpoint(cfg, p);
    auto ck = load_checkpoint(text);
    CHECK(ck.config == cfg);
    CHECK(ck.params == p);
    CHECK(save_checkpoint(ck.config, ck.params) == text);
  }
  CHECK_THROWS_AS(load_checkpoint("{}"), Error);
  CHECK_THROWS_AS(load_checkpoint("not json"), Error);
  auto cfg = small_config();
  auto p = init_params(cfg, 1);
  p.history_mix = Tensor(2, 2);
  CHECK_THROWS_AS(save_checkpoint(cfg, p), Error);
}
