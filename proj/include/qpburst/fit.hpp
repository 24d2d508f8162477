#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qpburst/mcmc.hpp"
#include "qpburst/physics.hpp"
#include "qpburst/waveform.hpp"

namespace qpburst {

enum class PriorKind { flat, log_flat, gaussian };

struct Prior {
  PriorKind kind = PriorKind::flat;
  double lo = 0.0;
  double hi = 1.0;
  double mean = 0.0;   // gaussian only
  double sigma = 1.0;  // gaussian only

  static Prior flat(double lo, double hi) { return {PriorKind::flat, lo, hi, 0.0, 1.0}; }
  static Prior log_flat(double lo, double hi) { return {PriorKind::log_flat, lo, hi, 0.0, 1.0}; }
  static Prior gaussian(double mean, double sigma, double lo, double hi) {
    return {PriorKind::gaussian, lo, hi, mean, sigma};
  }

  bool contains(double x) const { return x > lo && x < hi; }
  // Unnormalized for the gaussian kind; -inf outside the support.
  double log_density(double x) const;
  void validate() const;
};

// A parameter without a prior is held at the value given in the base
// BurstParams.
struct PriorSpec {
  std::optional<Prior> e_dep;
  std::optional<Prior> r;
  std::optional<Prior> tau_ss;
  std::optional<Prior> gamma;

  void validate() const;
};

// Binomial log-likelihood of a binned waveform with per-bin constants
// precomputed; bins with N = 0 are skipped.
class BinomialLikelihood {
 public:
  // With sub_samples > 1 the model probability of each bin is the average
  // over that many evenly spaced times across the bin.
  BinomialLikelihood(const BinnedWaveform& w, const QubitConfig& qubit,
                     const PhysicsConstants& constants, bool include_pre_trigger = true,
                     int sub_samples = 1);

  // Returns -inf when a bin with data has zero model probability.
  double operator()(const BurstParams& p) const;
  double combinatorial_constant() const { return log_comb_; }
  std::size_t bins() const { return t_.size(); }

 private:
  std::vector<double> t_;
  std::vector<double> n_;
  std::vector<double> m_;  // N - n
  double log_comb_ = 0.0;
  int sub_ = 1;
  double width_ = 0.0;
  double alpha_, beta_, fidelity_, p_ge_, p_eg_;
};

// Sum over bins of ln C(N, n) + n ln p + (N - n) ln(1 - p); -inf when a bin
// is impossible under its probability.
double binomial_log_probability(std::span<const int> n, std::span<const int> N,
                                std::span<const double> p);

double binomial_loglik(const BinnedWaveform& w, const BurstParams& params, const QubitConfig& qubit,
                       const PhysicsConstants& constants);

double log_prior(const BurstParams& params, const PriorSpec& priors);

double log_posterior(const BinnedWaveform& w, const BurstParams& params, const PriorSpec& priors,
                     const QubitConfig& qubit, const PhysicsConstants& constants);

struct FitSettings {
  SamplerSettings sampler;
  int grid_points = 10;  // per free parameter for the starting-point search
  int sub_samples = 1;   // model evaluations averaged per bin
};

// Samples the free parameters of `priors`. Draws are reported in interface units
// (e_dep in eV, r in ns^-1, tau_ss in ms).
PosteriorResult fit_posterior(const BinnedWaveform& w, const QubitConfig& qubit,
                              const PhysicsConstants& constants, const PriorSpec& priors,
                              const BurstParams& base, const FitSettings& settings = {},
                              bool include_pre_trigger = true);

inline constexpr double kHighEnergyFitEdep = 1e5;  // [eV]

// Free r, tau_ss, gamma with e_dep held at kHighEnergyFitEdep.
PosteriorResult fit_he_average(const BinnedWaveform& ap, const QubitConfig& qubit,
                               const PhysicsConstants& constants, const FitSettings& settings = {});

// Free tau_ss, e_dep, gamma with r held at r_fixed [ns^-1].
PosteriorResult fit_le_average(const BinnedWaveform& ap, const QubitConfig& qubit,
                               const PhysicsConstants& constants, double r_fixed,
                               const FitSettings& settings = {});

struct GaussianPrior {
  double mean = 0.005;  // [ns^-1]
  double sigma = 0.00025;
};

// Free e_dep and tau_ss with r marginalized under r_prior; gamma fixed from
// the waveform's own pre-trigger baseline.
PosteriorResult fit_waveform(const BinnedWaveform& w, const QubitConfig& qubit,
                             const PhysicsConstants& constants, const GaussianPrior& r_prior,
                             const FitSettings& settings = {});

// Energy whose peak excess over baseline equals `excess` in observed error
// probability at time t_eval after the trigger; used as the uncertainty of
// qubits without a significant pulse.
double noise_floor_energy(const QubitConfig& qubit, const PhysicsConstants& constants,
                          const BurstParams& shape, double excess, double t_eval);

}  // namespace qpburst
