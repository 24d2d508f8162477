#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qpburst/rng.hpp"

namespace qpburst {

using LogDensity = std::function<double(std::span<const double>)>;

struct SamplerSettings {
  int n_chains = 4;
  int n_steps = 20000;  // per chain, burn-in included
  int burn_in = 5000;
  std::uint64_t seed = 1;
  bool adapt = true;
  double init_spread = 0.5;  // chain starts jittered by this many proposal scales
  double rhat_threshold = 1.1;

  void validate() const;
};

struct ParameterSummary {
  std::string name;
  double median = 0.0;
  double lo = 0.0;  // 16th percentile
  double hi = 0.0;  // 84th percentile
  double mean = 0.0;
  double sd = 0.0;
  double mcse = 0.0;  // Monte Carlo standard error of the mean
  double rhat = 1.0;

  double half_width() const { return 0.5 * (hi - lo); }
};

struct PosteriorResult {
  std::vector<std::string> names;
  // draws[c][k] holds the post-burn-in draws of parameter k in chain c.
  std::vector<std::vector<std::vector<double>>> draws;
  std::vector<ParameterSummary> summaries;
  double acceptance_rate = 0.0;
  bool converged = true;
  double max_log_density = 0.0;
  std::vector<double> mode;  // best visited point
  std::vector<std::string> warnings;
  std::vector<std::pair<std::string, double>> fixed;  // parameters held constant

  bool has(const std::string& name) const;
  const ParameterSummary& summary(const std::string& name) const;
  std::vector<double> pooled(const std::string& name) const;
};

// Random-walk Metropolis-Hastings on the coordinates of `log_density`.
// During burn-in each chain tunes its proposal scale toward an acceptance of
// 0.2-0.4 and switches to the empirical covariance halfway through; proposals
// are frozen afterwards.
PosteriorResult mh_sample(const LogDensity& log_density, std::vector<double> init,
                          std::vector<double> proposal_scales, std::vector<std::string> names,
                          const SamplerSettings& settings = {});

// Recomputes summaries after the draws were mapped to other coordinates.
void summarize(PosteriorResult& result, double rhat_threshold = 1.1);

// Split-R-hat over chains of equal length.
double split_rhat(const std::vector<std::vector<double>>& chains);

// Batch-means standard error of the mean.
double mc_standard_error(std::span<const double> draws);

double standard_normal(Rng& rng);

}  // namespace qpburst
