#include "sghp/hawkes_sim.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "sghp/error.hpp"
#include "sghp/random.hpp"

namespace sghp::sim {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

constexpr double kPi = std::numbers::pi;

double power_law_raw(const PowerLawProduct& k, double t) { return k.c * t * std::pow(k.shift + t, k.exponent); }

double sine_raw(const ClippedSine& k, double t) { return std::max(0.0, std::sin(t) / k.scale); }

// ----------------------------------------------------------------- quadrature

// Gauss-Kronrod 7/15 abscissae and weights on [-1, 1].
constexpr std::array<double, 8> kXgk = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                                        0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                                        0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                                        0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> kWgk = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                                        0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                                        0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                                        0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr std::array<double, 4> kWg = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                                       0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Piece {
  double value;
  double error;
};

Piece gauss_kronrod(const std::function<double(double)>& f, double lo, double hi) {
  const double c = 0.5 * (lo + hi);
  const double h = 0.5 * (hi - lo);
  const double fc = f(c);
  double kronrod = fc * kWgk[7];
  double gauss = fc * kWg[3];
  for (std::size_t j = 0; j < 7; ++j) {
    const double dx = h * kXgk[j];
    const double pair = f(c - dx) + f(c + dx);
    kronrod += kWgk[j] * pair;
    if (j % 2 == 1) gauss += kWg[j / 2] * pair;
  }
  return {kronrod * h, std::abs((kronrod - gauss) * h)};
}

double adapt(const std::function<double(double)>& f, double lo, double hi, Piece whole, double tol, int depth) {
  if (whole.error <= tol || whole.error <= 1e-15 * std::abs(whole.value)) return whole.value;
  if (depth >= 48) throw Error("quadrature_failed", "adaptive quadrature did not converge");
  const double mid = 0.5 * (lo + hi);
  const Piece left = gauss_kronrod(f, lo, mid);
  const Piece right = gauss_kronrod(f, mid, hi);
  return adapt(f, lo, mid, left, 0.5 * tol, depth + 1) + adapt(f, mid, hi, right, 0.5 * tol, depth + 1);
}

}  // namespace

double integrate(const std::function<double(double)>& f, double lo, double hi, double rel_tol) {
  if (!(hi > lo)) return 0.0;
  const Piece whole = gauss_kronrod(f, lo, hi);
  // Absolute floor so integrands that vanish identically terminate.
  const double tol = std::max(rel_tol * std::abs(whole.value), 1e-300);
  const double v = adapt(f, lo, hi, whole, tol, 0);
  if (!std::isfinite(v)) throw Error("quadrature_failed", "quadrature produced a non-finite value");
  return v;
}

// ----------------------------------------------------------------- kernels

double kernel_value(const KernelSpec& k, double t) {
  if (t < 0.0) return 0.0;
  return std::visit(Overloaded{
                        [t](const PowerLawProduct& p) { return t > p.support ? 0.0 : power_law_raw(p, t); },
                        [t](const Exponential& e) { return e.a * std::exp(-e.b * t); },
                        [t](const ExpMixture& m) {
                          double s = 0.0;
                          for (const auto& [a, b] : m.terms) s += a * std::exp(-b * t);
                          return s;
                        },
                        [t](const ClippedSine& c) { return t > c.horizon ? 0.0 : sine_raw(c, t); },
                    },
                    k);
}

double kernel_sup(const KernelSpec& k, double lo, double hi) {
  lo = std::max(lo, 0.0);
  return std::visit(Overloaded{
                        [&](const PowerLawProduct& p) {
                          if (lo > p.support) return 0.0;
                          const double top = std::min(hi, p.support);
                          double best = std::max(power_law_raw(p, lo), power_law_raw(p, top));
                          if (p.exponent < -1.0) {
                            const double peak = p.shift / (-1.0 - p.exponent);
                            if (peak >= lo && peak <= top) best = std::max(best, power_law_raw(p, peak));
                          }
                          return best;
                        },
                        [&](const Exponential& e) { return kernel_value(e, lo); },
                        [&](const ExpMixture& m) { return kernel_value(m, lo); },
                        [&](const ClippedSine& c) {
                          if (lo > c.horizon) return 0.0;
                          const double top = std::min(hi, c.horizon);
                          // First crest pi/2 + 2 pi n at or after lo.
                          const double n = std::ceil((lo - kPi / 2) / (2 * kPi));
                          const double crest = kPi / 2 + 2 * kPi * n;
                          if (crest <= top) return 1.0 / c.scale;
                          return std::max(sine_raw(c, lo), sine_raw(c, top));
                        },
                    },
                    k);
}

double kernel_integral(const KernelSpec& k, double lo, double hi) {
  lo = std::max(lo, 0.0);
  if (!(hi > lo)) return 0.0;
  return std::visit(Overloaded{
                        [&](const PowerLawProduct& p) {
                          const double top = std::min(hi, p.support);
                          if (!(top > lo)) return 0.0;
                          return integrate([&p](double t) { return power_law_raw(p, t); }, lo, top);
                        },
                        [&](const Exponential& e) {
                          return e.a / e.b * (std::exp(-e.b * lo) - std::exp(-e.b * hi));
                        },
                        [&](const ExpMixture& m) {
                          double s = 0.0;
                          for (const auto& [a, b] : m.terms) s += a / b * (std::exp(-b * lo) - std::exp(-b * hi));
                          return s;
                        },
                        [&](const ClippedSine& c) {
                          const double top = std::min(hi, c.horizon);
                          double s = 0.0;
                          // Split at multiples of pi where the clipping kinks.
                          double a = lo;
                          while (a < top) {
                            const double next = std::min(top, (std::floor(a / kPi) + 1.0) * kPi);
                            if (std::sin(0.5 * (a + next)) > 0.0)
                              s += integrate([&c](double t) { return std::sin(t) / c.scale; }, a, next);
                            a = next;
                          }
                          return s;
                        },
                    },
                    k);
}

double kernel_mass(const KernelSpec& k) {
  if (const auto* p = std::get_if<PowerLawProduct>(&k); p && std::isinf(p->support)) {
    constexpr double kCut = 1e6;
    const double body = kernel_integral(k, 0.0, kCut);
    // c t (shift + t)^e <= c t^(e + 1); integrable tail only for e < -2.
    if (!(p->exponent < -2.0)) return std::numeric_limits<double>::infinity();
    return body + p->c * std::pow(kCut, p->exponent + 2.0) / (-p->exponent - 2.0);
  }
  return std::visit(Overloaded{
                        [](const PowerLawProduct& p) { return kernel_integral(p, 0.0, p.support); },
                        [](const Exponential& e) { return e.a / e.b; },
                        [](const ExpMixture& m) {
                          double s = 0.0;
                          for (const auto& [a, b] : m.terms) s += a / b;
                          return s;
                        },
                        [](const ClippedSine& c) { return kernel_integral(c, 0.0, c.horizon); },
                    },
                    k);
}

// ----------------------------------------------------------------- spec checks

void check_spec(const HawkesSpec& spec) {
  const std::size_t K = spec.num_types();
  if (K == 0) throw Error("invalid_spec", "spec has no event types");
  if (spec.kernels.size() != K) throw Error("invalid_spec", "kernel matrix must be K x K");
  for (double mu : spec.background)
    if (!(mu > 0.0) || !std::isfinite(mu)) throw Error("invalid_spec", "background intensities must be positive");
  for (const auto& row : spec.kernels) {
    if (row.size() != K) throw Error("invalid_spec", "kernel matrix must be K x K");
    for (const auto& k : row) {
      const bool ok = std::visit(
          Overloaded{
              [](const PowerLawProduct& p) { return p.c >= 0.0 && p.shift > 0.0 && p.support >= 0.0; },
              [](const Exponential& e) { return e.a >= 0.0 && e.b > 0.0; },
              [](const ExpMixture& m) {
                return std::all_of(m.terms.begin(), m.terms.end(),
                                   [](const auto& ab) { return ab.first >= 0.0 && ab.second > 0.0; });
              },
              [](const ClippedSine& c) { return c.scale > 0.0 && c.horizon >= 0.0; },
          },
          k);
      if (!ok) throw Error("invalid_spec", "kernel parameters out of range");
    }
  }
}

std::vector<std::vector<double>> branching_matrix(const HawkesSpec& spec) {
  std::vector<std::vector<double>> b(spec.num_types(), std::vector<double>(spec.num_types()));
  for (std::size_t i = 0; i < spec.num_types(); ++i)
    for (std::size_t k = 0; k < spec.num_types(); ++k) b[i][k] = kernel_mass(spec.kernels[i][k]);
  return b;
}

double spectral_radius(const std::vector<std::vector<double>>& matrix) {
  const auto n = static_cast<Eigen::Index>(matrix.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
      m(i, j) = v;
    }
  Eigen::EigenSolver<Eigen::MatrixXd> solver(m, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

void check_stable(const HawkesSpec& spec) {
  check_spec(spec);
  const double rho = spectral_radius(branching_matrix(spec));
  if (!(rho < 1.0)) {
    std::ostringstream msg;
    msg << "branching matrix spectral radius " << rho << " >= 1";
    throw Error("unstable_spec", msg.str());
  }
}

// ----------------------------------------------------------------- intensity

double intensity(const HawkesSpec& spec, const data::EventSequence& history, double t, std::size_t k) {
  if (k >= spec.num_types()) throw Error("type_out_of_range", "type index out of range");
  if (!history.events.empty() && t < history.events.back().time)
    throw Error("time_before_history", "query time precedes the end of the history");
  double lambda = spec.background[k];
  for (const auto& e : history.events)
    if (e.time < t) lambda += kernel_value(spec.kernels[e.type][k], t - e.time);
  return lambda;
}

namespace {

bool monotone(const KernelSpec& k) {
  return std::holds_alternative<Exponential>(k) || std::holds_alternative<ExpMixture>(k);
}

data::EventSequence thin(const HawkesSpec& spec, double horizon, Rng& rng) {
  const std::size_t K = spec.num_types();
  bool all_monotone = true;
  for (const auto& row : spec.kernels)
    for (const auto& k : row) all_monotone = all_monotone && monotone(k);
  // Window over which the bound must hold; unbounded when every kernel is
  // non-increasing (the left-endpoint intensity is then the supremum).
  const double window = all_monotone ? std::numeric_limits<double>::infinity() : 1.0;

  double mu_total = 0.0;
  for (double mu : spec.background) mu_total += mu;

  data::EventSequence seq;
  std::vector<double> lambda(K);
  double t = 0.0;
  while (t < horizon) {
    const double hi = std::min(horizon, t + window);
    double bound = mu_total;
    for (const auto& e : seq.events)
      for (std::size_t k = 0; k < K; ++k) bound += kernel_sup(spec.kernels[e.type][k], t - e.time, hi - e.time);

    const double candidate = t + rng.exponential(bound);
    if (candidate >= hi) {
      t = hi;
      continue;
    }
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      lambda[k] = spec.background[k];
      for (const auto& e : seq.events) lambda[k] += kernel_value(spec.kernels[e.type][k], candidate - e.time);
      total += lambda[k];
    }
    t = candidate;
    if (rng.uniform() * bound >= total) continue;

    double pick = rng.uniform() * total;
    std::size_t type = 0;
    while (type + 1 < K && pick >= lambda[type]) pick -= lambda[type++];
    seq.events.push_back({type, candidate, {}});
  }
  return seq;
}

}  // namespace

data::EventSequence simulate_sequence(const HawkesSpec& spec, double horizon, std::uint64_t seed) {
  check_stable(spec);
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw Error("invalid_horizon", "horizon must be positive");
  Rng rng(seed);
  return thin(spec, horizon, rng);
}

data::Dataset simulate_dataset(const HawkesSpec& spec, const SimulationOptions& options) {
  check_stable(spec);
  if (!(options.horizon > 0.0) || !std::isfinite(options.horizon))
    throw Error("invalid_horizon", "horizon must be positive");
  data::Dataset ds;
  ds.num_types = spec.num_types();
  ds.time_unit = options.time_unit;
  ds.sequences.reserve(options.num_sequences);
  for (std::size_t n = 0; n < options.num_sequences; ++n) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng(derive_seed(options.seed, {n, attempt}));
      auto seq = thin(spec, options.horizon, rng);
      if (!seq.events.empty()) {
        ds.sequences.push_back(std::move(seq));
        break;
      }
      if (attempt > 10000) throw Error("empty_simulation", "horizon too short to produce any event");
    }
  }
  return ds;
}

// ----------------------------------------------------------------- goodness of fit

std::vector<double> compensator_rescale(const HawkesSpec& spec, const data::EventSequence& seq) {
  check_spec(spec);
  const std::size_t K = spec.num_types();
  for (const auto& e : seq.events)
    if (e.type >= K) throw Error("type_out_of_range", "type index out of range");
  double mu_total = 0.0;
  for (double mu : spec.background) mu_total += mu;

  std::vector<double> out;
  out.reserve(seq.size());
  double prev = 0.0;
  for (std::size_t j = 0; j < seq.size(); ++j) {
    const double tj = seq.events[j].time;
    double inc = mu_total * (tj - prev);
    for (std::size_t i = 0; i < j; ++i) {
      const auto& e = seq.events[i];
      for (std::size_t k = 0; k < K; ++k) inc += kernel_integral(spec.kernels[e.type][k], prev - e.time, tj - e.time);
    }
    out.push_back(inc);
    prev = tj;
  }
  return out;
}

double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 1.18) {
    // P(K <= x) = sqrt(2 pi) / x * sum_k exp(-(2k-1)^2 pi^2 / (8 x^2))
    const double y = -kPi * kPi / (8.0 * lambda * lambda);
    double s = 0.0;
    for (int k = 1; k <= 20; ++k) s += std::exp(y * (2 * k - 1) * (2 * k - 1));
    return std::clamp(1.0 - std::sqrt(2.0 * kPi) / lambda * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) s += (k % 2 == 1 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(s, 0.0, 1.0);
}

KsResult ks_test_exp1(std::span<const double> samples) {
  if (samples.empty()) throw Error("empty_sample", "KS test needs at least one sample");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double cdf = x[i] <= 0.0 ? 0.0 : -std::expm1(-x[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - cdf, cdf - static_cast<double>(i) / n});
  }
  const double root_n = std::sqrt(n);
  return {d, kolmogorov_survival((root_n + 0.12 + 0.11 / root_n) * d)};
}

// ----------------------------------------------------------------- built-ins and IO

HawkesSpec appendix_a_spec(double power_law_support) {
  HawkesSpec spec;
  spec.background = {0.1, 0.2};
  spec.kernels = {
      {PowerLawProduct{0.2, 0.5, -1.3, power_law_support}, Exponential{0.03, 0.3}},
      {ExpMixture{{{0.05, 0.2}, {0.16, 0.8}}}, ClippedSine{8.0, 4.0}},
  };
  return spec;
}

namespace {

using Json = nlohmann::ordered_json;

Json kernel_to_json(const KernelSpec& k) {
  return std::visit(Overloaded{
                        [](const PowerLawProduct& p) {
                          Json j{{"kind", "power_law_product"}, {"c", p.c}, {"shift", p.shift}, {"exponent", p.exponent}};
                          if (std::isfinite(p.support)) j["support"] = p.support;
                          return j;
                        },
                        [](const Exponential& e) { return Json{{"kind", "exponential"}, {"a", e.a}, {"b", e.b}}; },
                        [](const ExpMixture& m) {
                          Json terms = Json::array();
                          for (const auto& [a, b] : m.terms) terms.push_back(Json::array({a, b}));
                          return Json{{"kind", "exp_mixture"}, {"terms", terms}};
                        },
                        [](const ClippedSine& c) {
                          return Json{{"kind", "clipped_sine"}, {"scale", c.scale}, {"horizon", c.horizon}};
                        },
                    },
                    k);
}

KernelSpec kernel_from_json(const Json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "power_law_product") {
    PowerLawProduct p{j.at("c").get<double>(), j.at("shift").get<double>(), j.at("exponent").get<double>()};
    if (j.contains("support")) p.support = j.at("support").get<double>();
    return p;
  }
  if (kind == "exponential") return Exponential{j.at("a").get<double>(), j.at("b").get<double>()};
  if (kind == "exp_mixture") {
    ExpMixture m;
    for (const auto& t : j.at("terms")) m.terms.emplace_back(t.at(0).get<double>(), t.at(1).get<double>());
    return m;
  }
  if (kind == "clipped_sine") return ClippedSine{j.at("scale").get<double>(), j.at("horizon").get<double>()};
  throw Error("invalid_spec", "unknown kernel kind " + kind);
}

}  // namespace

std::string spec_to_json(const HawkesSpec& spec) {
  Json kernels = Json::array();
  for (const auto& row : spec.kernels) {
    Json r = Json::array();
    for (const auto& k : row) r.push_back(kernel_to_json(k));
    kernels.push_back(std::move(r));
  }
  Json doc{{"num_types", spec.num_types()}, {"background", spec.background}, {"kernels", kernels}};
  return doc.dump(2) + "\n";
}

HawkesSpec spec_from_json(const std::string& text) {
  HawkesSpec spec;
  try {
    const Json doc = Json::parse(text);
    spec.background = doc.at("background").get<std::vector<double>>();
    for (const auto& row : doc.at("kernels")) {
      std::vector<KernelSpec> r;
      for (const auto& k : row) r.push_back(kernel_from_json(k));
      spec.kernels.push_back(std::move(r));
    }
    if (doc.contains("num_types") && doc.at("num_types").get<std::size_t>() != spec.num_types())
      throw Error("invalid_spec", "num_types disagrees with background length");
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_spec", std::string("malformed spec document: ") + e.what());
  }
  check_spec(spec);
  return spec;
}

HawkesSpec load_spec(const std::string& alias_or_path) {
  if (alias_or_path == "appendix-a") return appendix_a_spec();
  std::ifstream in(alias_or_path);
  if (!in) throw Error("io_error", "cannot open spec file " + alias_or_path);
  std::stringstream buf;
  buf << in.rdbuf();
  return spec_from_json(buf.str());
}

}  // namespace sghp::sim
