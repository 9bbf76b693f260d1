#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "sghp/data_model.hpp"

namespace sghp::sim {

/// c * t * (shift + t)^exponent on [0, support], zero beyond.
struct PowerLawProduct {
  double c = 0.0;
  double shift = 1.0;
  double exponent = -2.0;
  double support = std::numeric_limits<double>::infinity();
};

/// a * exp(-b t)
struct Exponential {
  double a = 0.0;
  double b = 1.0;
};

/// sum_m a_m * exp(-b_m t)
struct ExpMixture {
  std::vector<std::pair<double, double>> terms;
};

/// max(0, sin(t) / scale) on [0, horizon], zero beyond.
struct ClippedSine {
  double scale = 1.0;
  double horizon = 0.0;
};

using KernelSpec = std::variant<PowerLawProduct, Exponential, ExpMixture, ClippedSine>;

/// phi(t); zero for t < 0.
double kernel_value(const KernelSpec& k, double t);

/// Upper bound of phi on [lo, hi] (0 <= lo <= hi). Exact for every form.
double kernel_sup(const KernelSpec& k, double lo, double hi);

/// Integral of phi over [lo, hi] with 0 <= lo <= hi; closed form for the
/// exponential forms, adaptive quadrature otherwise.
double kernel_integral(const KernelSpec& k, double lo, double hi);

/// Integral of phi over [0, inf). Infinite when it diverges.
double kernel_mass(const KernelSpec& k);

struct HawkesSpec {
  std::vector<double> background;                 // mu_k
  std::vector<std::vector<KernelSpec>> kernels;   // kernels[i][k] = phi_ik, type i on type k

  std::size_t num_types() const noexcept { return background.size(); }
};

/// Shape and positivity checks. Throws sghp::Error.
void check_spec(const HawkesSpec& spec);

/// B(i, k) = integral of phi_ik over [0, inf).
std::vector<std::vector<double>> branching_matrix(const HawkesSpec& spec);
double spectral_radius(const std::vector<std::vector<double>>& matrix);

/// check_spec plus spectral radius of the branching matrix < 1.
void check_stable(const HawkesSpec& spec);

/// mu_k + sum over history events strictly before t of phi_{k_i k}(t - t_i).
double intensity(const HawkesSpec& spec, const data::EventSequence& history, double t, std::size_t k);

/// Ogata thinning on [0, horizon].
data::EventSequence simulate_sequence(const HawkesSpec& spec, double horizon, std::uint64_t seed);

struct SimulationOptions {
  std::size_t num_sequences = 100;
  double horizon = 100.0;
  std::uint64_t seed = 0;
  std::string time_unit = "unit";
};

/// num_sequences sequences, stream n seeded from (seed, n). Realizations
/// with no events are redrawn from the next substream of the same index.
data::Dataset simulate_dataset(const HawkesSpec& spec, const SimulationOptions& options);

/// Compensator increments Lambda(t_j) - Lambda(t_{j-1}) (with t_0 = 0) of the
/// type-summed intensity. i.i.d. Exp(1) under the true model.
std::vector<double> compensator_rescale(const HawkesSpec& spec, const data::EventSequence& seq);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test of samples against Exp(1).
KsResult ks_test_exp1(std::span<const double> samples);

/// Survival function of the Kolmogorov distribution, P(K > lambda).
double kolmogorov_survival(double lambda);

/// Default truncation applied to the Appendix power-law kernel.
inline constexpr double kDefaultPowerLawSupport = 8.0;

/// Two-type synthetic benchmark: mu = (0.1, 0.2) with power-law, exponential,
/// exponential-mixture and clipped-sine kernels.
HawkesSpec appendix_a_spec(double power_law_support = kDefaultPowerLawSupport);

/// Spec document (JSON) read/write, and lookup of the built-in aliases.
std::string spec_to_json(const HawkesSpec& spec);
HawkesSpec spec_from_json(const std::string& text);
/// "appendix-a" or a path to a JSON spec document.
HawkesSpec load_spec(const std::string& alias_or_path);

/// Adaptive Gauss-Kronrod (7/15) quadrature to the given relative tolerance.
/// Throws sghp::Error("quadrature_failed") when it cannot converge.
double integrate(const std::function<double(double)>& f, double lo, double hi, double rel_tol = 1e-8);

}  // namespace sghp::sim
