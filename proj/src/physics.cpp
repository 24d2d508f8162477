#include "qpburst/physics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "qpburst/errors.hpp"

namespace qpburst {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw DomainError(what);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

void PhysicsConstants::validate() const {
  require(n_cp > 0 && delta > 0 && volume > 0 && delta_t > 0 && hbar > 0 && k_b > 0,
          "physics constants must be strictly positive");
  require(epsilon > 0 && epsilon <= 1, "epsilon must lie in (0, 1]");
}

void QubitConfig::validate() const {
  require(omega_q > 0, "qubit angular frequency must be positive");
  if (!(fidelity >= 0 && fidelity <= 1 && p_ge >= 0 && p_ge <= 1))
    throw ConfigError("qubit " + name + ": fidelity and p_ge must lie in [0, 1]");
  if (fidelity + p_ge > 1 + 1e-15)
    throw ConfigError("qubit " + name + ": fidelity + p_ge exceeds 1");
  if (!(baseline_B >= 0 && baseline_B <= 1))
    throw ConfigError("qubit " + name + ": baseline_B must lie in [0, 1]");
  if (!(baseline_sigma >= 0)) throw ConfigError("qubit " + name + ": negative baseline_sigma");
}

std::vector<QubitConfig> reference_qubits(RunPeriod run) {
  struct Row {
    const char* name;
    double f_ghz;
    double fid07, pge07, fid13, pge13;  // percent
  };
  static constexpr Row rows[] = {
      {"Q1", 4.534, 99.96, 0.02, 99.75, 0.13},
      {"Q2", 4.370, 99.65, 0.20, 98.51, 0.79},
      {"Q4", 4.697, 99.70, 0.13, 99.25, 0.35},
      {"Q5", 4.453, 99.92, 0.04, 99.58, 0.22},
      {"Q8", 4.501, 99.16, 0.47, 98.04, 1.02},
  };
  std::vector<QubitConfig> out;
  for (const auto& row : rows) {
    QubitConfig q;
    q.name = row.name;
    q.omega_q = units::ghz_to_rad_per_s(row.f_ghz);
    const bool src = run == RunPeriod::source_run07;
    q.fidelity = (src ? row.fid07 : row.fid13) / 100.0;
    q.p_ge = (src ? row.pge07 : row.pge13) / 100.0;
    out.push_back(q);
  }
  return out;
}

void BurstParams::validate() const {
  require(e_dep >= 0, "e_dep must be non-negative");
  require(r > 0, "r must be positive");
  require(tau_ss > 0, "tau_ss must be positive");
  require(gamma >= 0, "gamma must be non-negative");
}

double decay_constant(const PhysicsConstants& c, const QubitConfig& q) {
  const double delta_j = c.delta * units::electron_volt;
  return std::sqrt(2.0 * q.omega_q * delta_j / (std::numbers::pi * std::numbers::pi * c.hbar));
}

ResponseCoefficients alpha_beta(const PhysicsConstants& constants, const QubitConfig& qubit) {
  constants.validate();
  require(qubit.omega_q > 0, "qubit angular frequency must be positive");
  ResponseCoefficients out;
  out.alpha = constants.delta_t * decay_constant(constants, qubit);
  out.beta = constants.n_cp * constants.volume * constants.delta / constants.epsilon;
  return out;
}

double injected_density(double e_dep, const PhysicsConstants& c) {
  return e_dep * c.epsilon / (c.n_cp * c.volume * c.delta);
}

ResponseModel::ResponseModel(const PhysicsConstants& constants, const QubitConfig& qubit)
    : coeff_(alpha_beta(constants, qubit)),
      fidelity_(qubit.fidelity),
      p_ge_(qubit.p_ge),
      p_eg_(std::max(0.0, 1.0 - qubit.fidelity - qubit.p_ge)) {
  qubit.validate();
}

double ResponseModel::burst_exponent(double t, const BurstParams& p) const {
  if (p.e_dep <= 0) return 0.0;
  const double tau = p.tau_ss * units::ms;
  const double r = units::per_ns_to_per_s(p.r);
  const double grow = std::expm1(t / tau);
  const double denom = p.e_dep * tau * r * grow + coeff_.beta * (grow + 1.0);
  if (!std::isfinite(denom)) return 0.0;
  return coeff_.alpha * p.e_dep / denom;
}

double ResponseModel::relaxation(double t, const BurstParams& p) const {
  const double x = t >= 0 ? burst_exponent(t, p) : 0.0;
  return -std::expm1(-x - p.gamma);
}

double ResponseModel::observed(double t, const BurstParams& p) const {
  return relaxation(t, p) * fidelity_ + p_ge_;
}

double relaxation_probability(double t, const BurstParams& p, const PhysicsConstants& constants,
                              const QubitConfig& qubit) {
  require(t >= 0, "relaxation_probability requires t >= 0");
  p.validate();
  return ResponseModel(constants, qubit).relaxation(t, p);
}

double observed_probability(double p_r, const QubitConfig& qubit) {
  require(p_r >= 0 && p_r <= 1, "p_r must lie in [0, 1]");
  if (qubit.fidelity + qubit.p_ge > 1 + 1e-15)
    throw ConfigError("qubit " + qubit.name + ": fidelity + p_ge exceeds 1");
  return p_r * qubit.fidelity + qubit.p_ge;
}

double gamma_from_baseline(const QubitConfig& qubit) {
  const double excess = qubit.baseline_B - qubit.p_ge;
  if (excess < 0 || qubit.baseline_B >= qubit.fidelity + qubit.p_ge || qubit.fidelity <= 0)
    throw DomainError("unphysical baseline for qubit " + qubit.name);
  return -std::log1p(-excess / qubit.fidelity);
}

RTRates rt_rates_from_reduced(const RTReduced& red) {
  require(red.r_prime >= 0 && red.r_prime < 1, "r_prime must lie in [0, 1)");
  require(red.tau_ss > 0, "tau_ss must be positive");
  require(red.x_i >= 0 && red.x_0 >= 0, "densities must be non-negative");
  double k = 0.0;
  if (red.r_prime > 0) {
    require(red.x_i > 0, "r_prime > 0 needs a positive injected density");
    k = red.r_prime / ((1.0 - red.r_prime) * red.x_i);
  }
  RTRates out;
  out.r = k / red.tau_ss;
  out.s_0 = (1.0 - 2.0 * k * red.x_0) / red.tau_ss;
  out.g = red.x_0 * (1.0 - k * red.x_0) / red.tau_ss;
  return out;
}

double rt_steady_state(const RTRates& rates) {
  if (rates.g == 0) return 0.0;
  const double disc = rates.s_0 * rates.s_0 + 4.0 * rates.r * rates.g;
  const double denom = rates.s_0 + std::sqrt(disc);
  if (denom <= 0) return std::numeric_limits<double>::infinity();
  return 2.0 * rates.g / denom;
}

RTReduced rt_reduced_from_rates(const RTRates& rates, double x_i) {
  require(rates.r >= 0 && rates.g >= 0, "r and g must be non-negative");
  require(x_i >= 0, "x_i must be non-negative");
  RTReduced out;
  out.x_i = x_i;
  out.x_0 = rt_steady_state(rates);
  const double inv_tau = rates.s_0 + 2.0 * rates.r * out.x_0;
  require(inv_tau > 0 && std::isfinite(inv_tau), "rates have no finite linear-loss time");
  out.tau_ss = 1.0 / inv_tau;
  const double u = rates.r * out.tau_ss * x_i;
  out.r_prime = u / (1.0 + u);
  return out;
}

RTParams make_rt_params(const RTReduced& reduced, double c_coeff, double gamma_0) {
  const RTRates rates = rt_rates_from_reduced(reduced);
  RTParams out;
  out.r_prime = reduced.r_prime;
  out.x_i = reduced.x_i;
  out.x_0 = reduced.x_0;
  out.s_0 = rates.s_0;
  out.g = rates.g;
  out.c_coeff = c_coeff;
  out.gamma_0 = gamma_0;
  return out;
}

double decay_rate_analytic(double t, const RTParams& rt, double tau_ss) {
  require(t >= 0, "decay_rate_analytic requires t >= 0");
  require(tau_ss > 0, "tau_ss must be positive");
  return rt.c_coeff * rt.x_i * (1.0 - rt.r_prime) / (std::exp(t / tau_ss) - rt.r_prime) +
         rt.gamma_0;
}

namespace {

double rt_rhs(double x, const RTRates& k) { return -k.r * x * x - k.s_0 * x + k.g; }

std::vector<double> rk4_on_grid(double x_init, const RTRates& k, std::span<const double> grid,
                                double step) {
  std::vector<double> out;
  out.reserve(grid.size());
  double x = x_init;
  double t = 0.0;
  for (double target : grid) {
    const double span = target - t;
    if (span > 0) {
      const auto n = static_cast<long long>(std::ceil(span / step));
      const double h = span / static_cast<double>(n);
      for (long long i = 0; i < n; ++i) {
        const double k1 = rt_rhs(x, k);
        const double k2 = rt_rhs(x + 0.5 * h * k1, k);
        const double k3 = rt_rhs(x + 0.5 * h * k2, k);
        const double k4 = rt_rhs(x + h * k3, k);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        x = std::max(x, 0.0);
      }
      t = target;
    }
    out.push_back(x);
  }
  return out;
}

}  // namespace

std::vector<double> integrate_rothwarf_taylor(double x_init, const RTRates& rates,
                                              std::span<const double> t_grid,
                                              const RKSettings& settings) {
  require(x_init >= 0, "x_init must be non-negative");
  require(rates.r >= 0 && rates.s_0 >= 0 && rates.g >= 0, "rate coefficients must be >= 0");
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    require(t_grid[i] >= 0, "time grid must start at or after 0");
    require(i == 0 || t_grid[i] >= t_grid[i - 1], "time grid must be non-decreasing");
  }
  if (t_grid.empty()) return {};

  double step = settings.max_step;
  if (step <= 0) {
    const double x_ss = rt_steady_state(rates);
    const double linear_rate = rates.s_0 + 2.0 * rates.r * (std::isfinite(x_ss) ? x_ss : 0.0);
    const double peak_rate = rates.s_0 + 2.0 * rates.r * std::max(x_init, x_ss);
    step = t_grid.back() > 0 ? t_grid.back() / 1e4 : 1.0;
    if (linear_rate > 0) step = std::min(step, 1e-4 / linear_rate);
    if (peak_rate > 0 && std::isfinite(peak_rate)) step = std::min(step, 1e-2 / peak_rate);
  }

  const auto coarse = rk4_on_grid(x_init, rates, t_grid, step);
  auto fine = rk4_on_grid(x_init, rates, t_grid, 0.5 * step);
  for (std::size_t i = 0; i < fine.size(); ++i) {
    const double diff = std::abs(coarse[i] - fine[i]);
    if (diff > settings.validation_tolerance * std::max(std::abs(fine[i]), 1e-300))
      throw IntegrationError("Rothwarf-Taylor integration unstable at the chosen step size");
  }
  return fine;
}

double kaplan_recombination(double f_supp, double tau_0) {
  require(f_supp > 0 && tau_0 > 0, "suppression factor and tau_0 must be positive");
  return 21.8 / (f_supp * tau_0);
}

SeparationFidelity separation_fidelity(double mu_g, double sigma_g, double mu_e, double sigma_e,
                                       double threshold) {
  require(sigma_g > 0 && sigma_e > 0, "Gaussian widths must be positive");
  SeparationFidelity out;
  if (mu_g <= mu_e) {
    out.p_ge = normal_cdf((threshold - mu_e) / sigma_e);
    out.p_eg = normal_cdf((mu_g - threshold) / sigma_g);
  } else {
    out.p_ge = normal_cdf((mu_e - threshold) / sigma_e);
    out.p_eg = normal_cdf((threshold - mu_g) / sigma_g);
  }
  out.fidelity = 1.0 - out.p_ge - out.p_eg;
  return out;
}

}  // namespace qpburst
