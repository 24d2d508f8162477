#include "qpburst/fit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "qpburst/errors.hpp"

namespace qpburst {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

double Prior::log_density(double x) const {
  if (!contains(x)) return kNegInf;
  switch (kind) {
    case PriorKind::flat:
      return -std::log(hi - lo);
    case PriorKind::log_flat:
      return -std::log(x) - std::log(std::log(hi / lo));
    case PriorKind::gaussian: {
      const double z = (x - mean) / sigma;
      return -0.5 * z * z;
    }
  }
  return kNegInf;
}

void Prior::validate() const {
  if (!(lo < hi)) throw ConfigError("prior needs lo < hi");
  switch (kind) {
    case PriorKind::flat:
      if (!std::isfinite(lo) || !std::isfinite(hi)) throw ConfigError("flat prior must be bounded");
      break;
    case PriorKind::log_flat:
      if (!(lo > 0) || !std::isfinite(hi)) throw ConfigError("log-flat prior needs 0 < lo < hi < inf");
      break;
    case PriorKind::gaussian:
      if (!(sigma > 0)) throw ConfigError("gaussian prior needs sigma > 0");
      break;
  }
}

void PriorSpec::validate() const {
  for (const auto* p : {&e_dep, &r, &tau_ss, &gamma})
    if (*p) (*p)->validate();
}

BinomialLikelihood::BinomialLikelihood(const BinnedWaveform& w, const QubitConfig& qubit,
                                       const PhysicsConstants& constants,
                                       bool include_pre_trigger, int sub_samples) {
  w.validate();
  if (sub_samples < 1) throw ConfigError("sub_samples must be at least 1");
  sub_ = sub_samples;
  width_ = w.bin_width;
  const auto coeff = alpha_beta(constants, qubit);
  qubit.validate();
  alpha_ = coeff.alpha;
  beta_ = coeff.beta;
  fidelity_ = qubit.fidelity;
  p_ge_ = qubit.p_ge;
  p_eg_ = std::max(0.0, 1.0 - qubit.fidelity - qubit.p_ge);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w.N[i] == 0) continue;
    if (!include_pre_trigger && w.bin_centers[i] < 0) continue;
    t_.push_back(w.bin_centers[i]);
    n_.push_back(w.n[i]);
    m_.push_back(w.N[i] - w.n[i]);
    log_comb_ += std::lgamma(w.N[i] + 1.0) - std::lgamma(w.n[i] + 1.0) -
                 std::lgamma(w.N[i] - w.n[i] + 1.0);
  }
}

double BinomialLikelihood::operator()(const BurstParams& p) const {
  const double tau = p.tau_ss * units::ms;
  const double rt = units::per_ns_to_per_s(p.r) * tau * p.e_dep;
  const double num = alpha_ * p.e_dep;
  auto exponent = [&](double t, double growth) {
    if (t < 0 || p.e_dep <= 0) return 0.0;
    const double g = t < 1e-2 * tau ? std::expm1(t / tau) : growth - 1.0;
    const double denom = rt * g + beta_ * growth;
    return std::isfinite(denom) ? num / denom : 0.0;
  };
  double ll = log_comb_;
  // e^{t/tau} advanced multiplicatively; bins are evenly spaced, so the step
  // factor only changes across gaps left by empty bins.
  double growth = 0.0, last_t = 0.0, last_dt = -1.0, step = 1.0;
  bool started = false;
  std::vector<double> sub_growth;
  if (sub_ > 1) {
    sub_growth.resize(static_cast<std::size_t>(sub_));
    for (int k = 0; k < sub_; ++k)
      sub_growth[static_cast<std::size_t>(k)] = std::exp(width_ * ((k + 0.5) / sub_ - 0.5) / tau);
  }
  for (std::size_t i = 0; i < t_.size(); ++i) {
    const double t = t_[i];
    if (t >= 0 && p.e_dep > 0) {
      if (!started) {
        growth = std::exp(t / tau);
        started = true;
      } else {
        const double dt = t - last_t;
        if (dt != last_dt) {
          step = std::exp(dt / tau);
          last_dt = dt;
        }
        growth *= step;
      }
      last_t = t;
    }
    double q = 0.0;  // survival
    if (sub_ == 1) {
      q = std::exp(-exponent(t, growth) - p.gamma);
    } else {
      for (int k = 0; k < sub_; ++k) {
        const double tk = t + width_ * ((k + 0.5) / sub_ - 0.5);
        const double gk = tk >= 0 ? (started ? growth : std::exp(t / tau)) * sub_growth[static_cast<std::size_t>(k)] : 1.0;
        q += std::exp(-exponent(tk, gk) - p.gamma);
      }
      q /= sub_;
    }
    const double p_obs = fidelity_ * (1.0 - q) + p_ge_;
    const double p_not = p_eg_ + fidelity_ * q;
    if (n_[i] > 0) {
      if (p_obs <= 0) return kNegInf;
      ll += n_[i] * std::log(p_obs);
    }
    if (m_[i] > 0) {
      if (p_not <= 0) return kNegInf;
      ll += m_[i] * std::log(p_not);
    }
  }
  return ll;
}

double binomial_log_probability(std::span<const int> n, std::span<const int> N,
                                std::span<const double> p) {
  if (n.size() != N.size() || n.size() != p.size())
    throw PreconditionError("binomial_log_probability: array lengths differ");
  double ll = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (N[i] == 0) continue;
    if (n[i] < 0 || n[i] > N[i] || !(p[i] >= 0 && p[i] <= 1))
      throw DomainError("binomial_log_probability: need 0 <= n <= N and 0 <= p <= 1");
    ll += std::lgamma(N[i] + 1.0) - std::lgamma(n[i] + 1.0) - std::lgamma(N[i] - n[i] + 1.0);
    if (n[i] > 0) {
      if (p[i] <= 0) return kNegInf;
      ll += n[i] * std::log(p[i]);
    }
    if (n[i] < N[i]) {
      if (p[i] >= 1) return kNegInf;
      ll += (N[i] - n[i]) * std::log1p(-p[i]);
    }
  }
  return ll;
}

double binomial_loglik(const BinnedWaveform& w, const BurstParams& params,
                       const QubitConfig& qubit, const PhysicsConstants& constants) {
  return BinomialLikelihood(w, qubit, constants)(params);
}

double log_prior(const BurstParams& p, const PriorSpec& priors) {
  double lp = 0.0;
  if (priors.e_dep) lp += priors.e_dep->log_density(p.e_dep);
  if (priors.r) lp += priors.r->log_density(p.r);
  if (priors.tau_ss) lp += priors.tau_ss->log_density(p.tau_ss);
  if (priors.gamma) lp += priors.gamma->log_density(p.gamma);
  return lp;
}

double log_posterior(const BinnedWaveform& w, const BurstParams& params, const PriorSpec& priors,
                     const QubitConfig& qubit, const PhysicsConstants& constants) {
  const double lp = log_prior(params, priors);
  if (!std::isfinite(lp)) return kNegInf;
  return lp + binomial_loglik(w, params, qubit, constants);
}

namespace {

// Free parameter: which field, its prior and whether it is sampled in log.
struct FreeParam {
  const char* name;
  double BurstParams::*field;
  Prior prior;
  bool log_coord;
};

std::vector<FreeParam> free_params(const PriorSpec& priors) {
  std::vector<FreeParam> out;
  if (priors.e_dep) out.push_back({"e_dep", &BurstParams::e_dep, *priors.e_dep, true});
  if (priors.r) out.push_back({"r", &BurstParams::r, *priors.r, false});
  if (priors.tau_ss) out.push_back({"tau_ss", &BurstParams::tau_ss, *priors.tau_ss, true});
  if (priors.gamma) out.push_back({"gamma", &BurstParams::gamma, *priors.gamma, false});
  return out;
}

std::pair<double, double> grid_range(const FreeParam& fp) {
  double lo = fp.prior.lo, hi = fp.prior.hi;
  if (fp.prior.kind == PriorKind::gaussian) {
    lo = std::max(lo, fp.prior.mean - 2.5 * fp.prior.sigma);
    hi = std::min(hi, fp.prior.mean + 2.5 * fp.prior.sigma);
  }
  if (fp.log_coord) {
    lo = std::max(lo, 1e-300);
    return {std::log(lo), std::log(hi)};
  }
  return {lo, hi};
}

}  // namespace

PosteriorResult fit_posterior(const BinnedWaveform& w, const QubitConfig& qubit,
                              const PhysicsConstants& constants, const PriorSpec& priors,
                              const BurstParams& base, const FitSettings& settings,
                              bool include_pre_trigger) {
  priors.validate();
  const auto params = free_params(priors);
  if (params.empty()) throw PreconditionError("fit has no free parameters");
  const BinomialLikelihood like(w, qubit, constants, include_pre_trigger, settings.sub_samples);
  if (like.bins() == 0) throw PreconditionError("waveform has no valid bins to fit");

  auto to_params = [&](std::span<const double> z) {
    BurstParams p = base;
    for (std::size_t i = 0; i < params.size(); ++i)
      p.*(params[i].field) = params[i].log_coord ? std::exp(z[i]) : z[i];
    return p;
  };
  const LogDensity density = [&](std::span<const double> z) {
    double lp = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double x = params[i].log_coord ? std::exp(z[i]) : z[i];
      const double l = params[i].prior.log_density(x);
      if (!std::isfinite(l)) return kNegInf;
      lp += l + (params[i].log_coord ? z[i] : 0.0);
    }
    const double ll = like(to_params(z));
    return std::isfinite(ll) ? lp + ll : kNegInf;
  };

  // Starting point from a grid over the prior ranges (cell midpoints).
  const int g = std::max(2, settings.grid_points);
  const std::size_t d = params.size();
  std::vector<std::pair<double, double>> ranges;
  std::vector<double> steps;
  for (const auto& fp : params) {
    ranges.push_back(grid_range(fp));
    steps.push_back((ranges.back().second - ranges.back().first) / g);
  }
  std::vector<double> best(d), z(d);
  double best_lp = kNegInf;
  std::vector<int> idx(d, 0);
  while (true) {
    for (std::size_t i = 0; i < d; ++i) z[i] = ranges[i].first + (idx[i] + 0.5) * steps[i];
    const double lp = density(z);
    if (lp > best_lp) {
      best_lp = lp;
      best = z;
    }
    std::size_t k = 0;
    while (k < d && ++idx[k] == g) idx[k++] = 0;
    if (k == d) break;
  }
  if (!std::isfinite(best_lp)) throw FitError("no grid point has finite posterior density");

  std::vector<double> scales = steps;
  for (auto& s : scales) s *= 0.5;
  std::vector<std::string> names;
  for (const auto& fp : params) names.emplace_back(fp.name);
  auto result = mh_sample(density, best, scales, names, settings.sampler);

  for (auto& chain : result.draws)
    for (std::size_t i = 0; i < d; ++i)
      if (params[i].log_coord)
        for (double& v : chain[i]) v = std::exp(v);
  for (std::size_t i = 0; i < d; ++i)
    if (params[i].log_coord) result.mode[i] = std::exp(result.mode[i]);
  summarize(result, settings.sampler.rhat_threshold);
  if (!result.converged &&
      std::find(result.warnings.begin(), result.warnings.end(),
                "non-convergence: split R-hat above threshold") == result.warnings.end())
    result.warnings.push_back("non-convergence: split R-hat above threshold");

  const std::array<std::pair<const char*, double>, 4> all = {
      {{"e_dep", base.e_dep}, {"r", base.r}, {"tau_ss", base.tau_ss}, {"gamma", base.gamma}}};
  for (const auto& [name, value] : all)
    if (!result.has(name)) result.fixed.emplace_back(name, value);
  return result;
}

PosteriorResult fit_he_average(const BinnedWaveform& ap, const QubitConfig& qubit,
                               const PhysicsConstants& constants, const FitSettings& settings) {
  PriorSpec priors;
  priors.r = Prior::flat(1e-4, 0.2);
  priors.tau_ss = Prior::log_flat(0.1, 50.0);
  priors.gamma = Prior::flat(0.0, 2.0);
  BurstParams base;
  base.e_dep = kHighEnergyFitEdep;
  return fit_posterior(ap, qubit, constants, priors, base, settings, true);
}

PosteriorResult fit_le_average(const BinnedWaveform& ap, const QubitConfig& qubit,
                               const PhysicsConstants& constants, double r_fixed,
                               const FitSettings& settings) {
  if (ap.size() == 0 || std::all_of(ap.N.begin(), ap.N.end(), [](int n) { return n == 0; }))
    throw PreconditionError("low-energy fit needs a non-empty average pulse");
  if (!(r_fixed > 0)) throw DomainError("fixed r must be positive");
  PriorSpec priors;
  priors.e_dep = Prior::log_flat(1.0, 1e6);
  priors.tau_ss = Prior::log_flat(0.1, 50.0);
  priors.gamma = Prior::flat(0.0, 2.0);
  BurstParams base;
  base.r = r_fixed;
  return fit_posterior(ap, qubit, constants, priors, base, settings, true);
}

PosteriorResult fit_waveform(const BinnedWaveform& w, const QubitConfig& qubit,
                             const PhysicsConstants& constants, const GaussianPrior& r_prior,
                             const FitSettings& settings) {
  if (!(r_prior.mean > 0 && r_prior.sigma > 0)) throw ConfigError("r prior needs mean, sigma > 0");
  const PulseFeatures f = compute_features(w);
  QubitConfig q = qubit;
  q.baseline_B = std::clamp(f.baseline_B, qubit.p_ge,
                            std::nextafter(qubit.fidelity + qubit.p_ge, 0.0));
  BurstParams base;
  base.gamma = q.baseline_B > qubit.p_ge ? gamma_from_baseline(q) : 0.0;
  PriorSpec priors;
  priors.e_dep = Prior::log_flat(1.0, 1e6);
  priors.tau_ss = Prior::log_flat(0.1, 50.0);
  priors.r = Prior::gaussian(r_prior.mean, r_prior.sigma, 0.0,
                             std::numeric_limits<double>::infinity());
  auto result = fit_posterior(w, qubit, constants, priors, base, settings, false);
  if (f.p_max < f.baseline_B + 3.0 * f.baseline_sigma) result.warnings.push_back("low-signal");
  return result;
}

double noise_floor_energy(const QubitConfig& qubit, const PhysicsConstants& constants,
                          const BurstParams& shape, double excess, double t_eval) {
  if (!(excess > 0)) throw DomainError("noise floor needs a positive excess");
  const ResponseModel model(constants, qubit);
  BurstParams p = shape;
  p.e_dep = 0.0;
  const double floor = model.observed(t_eval, p);
  auto signal = [&](double e) {
    p.e_dep = e;
    return model.observed(t_eval, p) - floor;
  };
  double lo = 1e-6, hi = 1e9;
  if (signal(hi) < excess) return hi;
  for (int i = 0; i < 200; ++i) {
    const double mid = std::sqrt(lo * hi);
    (signal(mid) < excess ? lo : hi) = mid;
    if (hi / lo < 1 + 1e-12) break;
  }
  return std::sqrt(lo * hi);
}

}  // namespace qpburst
