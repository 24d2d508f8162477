#include "qpburst/mcmc.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "qpburst/errors.hpp"
#include "qpburst/waveform.hpp"

namespace qpburst {

void SamplerSettings::validate() const {
  if (n_chains < 1) throw ConfigError("need at least one chain");
  if (burn_in < 0 || n_steps <= burn_in + 1) throw ConfigError("n_steps must exceed burn_in");
}

bool PosteriorResult::has(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

const ParameterSummary& PosteriorResult::summary(const std::string& name) const {
  for (const auto& s : summaries)
    if (s.name == name) return s;
  throw PreconditionError("posterior has no parameter " + name);
}

std::vector<double> PosteriorResult::pooled(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw PreconditionError("posterior has no parameter " + name);
  const auto k = static_cast<std::size_t>(it - names.begin());
  std::vector<double> out;
  for (const auto& chain : draws) out.insert(out.end(), chain[k].begin(), chain[k].end());
  return out;
}

double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::span<const double>> halves;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    if (h < 2) return std::numeric_limits<double>::quiet_NaN();
    halves.emplace_back(c.data(), h);
    halves.emplace_back(c.data() + c.size() - h, h);
  }
  const double n = static_cast<double>(halves.front().size());
  const double m = static_cast<double>(halves.size());
  std::vector<double> means;
  double w = 0.0;
  for (const auto& h : halves) {
    double mu = 0.0;
    for (double v : h) mu += v;
    mu /= n;
    double s2 = 0.0;
    for (double v : h) s2 += (v - mu) * (v - mu);
    w += s2 / (n - 1);
    means.push_back(mu);
  }
  w /= m;
  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= n / (m - 1);
  if (w <= 0) return b <= 0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (n - 1) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

double mc_standard_error(std::span<const double> draws) {
  const std::size_t n = draws.size();
  if (n < 4) return std::numeric_limits<double>::quiet_NaN();
  const auto batch = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(double(n))));
  const std::size_t n_batches = n / batch;
  if (n_batches < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> means(n_batches, 0.0);
  for (std::size_t b = 0; b < n_batches; ++b) {
    for (std::size_t i = 0; i < batch; ++i) means[b] += draws[b * batch + i];
    means[b] /= static_cast<double>(batch);
  }
  double mu = 0.0;
  for (double v : means) mu += v;
  mu /= static_cast<double>(n_batches);
  double s2 = 0.0;
  for (double v : means) s2 += (v - mu) * (v - mu);
  s2 /= static_cast<double>(n_batches - 1);
  return std::sqrt(s2 / static_cast<double>(n_batches));
}

void summarize(PosteriorResult& result, double rhat_threshold) {
  result.summaries.clear();
  result.converged = true;
  for (std::size_t k = 0; k < result.names.size(); ++k) {
    ParameterSummary s;
    s.name = result.names[k];
    std::vector<std::vector<double>> per_chain;
    std::vector<double> all;
    for (const auto& chain : result.draws) {
      per_chain.push_back(chain[k]);
      all.insert(all.end(), chain[k].begin(), chain[k].end());
    }
    if (all.empty()) throw PreconditionError("posterior has no draws");
    s.median = quantile(all, 0.5);
    s.lo = quantile(all, 0.15865525393145707);
    s.hi = quantile(all, 0.8413447460685429);
    double mu = 0.0;
    for (double v : all) mu += v;
    mu /= static_cast<double>(all.size());
    double s2 = 0.0;
    for (double v : all) s2 += (v - mu) * (v - mu);
    s.mean = mu;
    s.sd = all.size() > 1 ? std::sqrt(s2 / static_cast<double>(all.size() - 1)) : 0.0;
    double se2 = 0.0;
    for (const auto& c : per_chain) {
      const double e = mc_standard_error(c);
      se2 += std::isfinite(e) ? e * e : 0.0;
    }
    s.mcse = std::sqrt(se2) / static_cast<double>(per_chain.size());
    s.rhat = split_rhat(per_chain);
    if (!(s.rhat <= rhat_threshold)) result.converged = false;
    result.summaries.push_back(s);
  }
}

namespace {

struct ChainOutcome {
  std::vector<std::vector<double>> draws;  // [param][draw]
  std::size_t accepted = 0;
  std::size_t proposed = 0;
  double best_lp = -std::numeric_limits<double>::infinity();
  std::vector<double> best;
};

ChainOutcome run_chain(const LogDensity& f, std::vector<double> x, const std::vector<double>& scales,
                       const SamplerSettings& s, std::uint64_t seed) {
  const auto d = static_cast<Eigen::Index>(x.size());
  Rng rng(seed);
  ChainOutcome out;
  out.draws.assign(x.size(), {});
  for (auto& v : out.draws) v.reserve(static_cast<std::size_t>(s.n_steps - s.burn_in));

  double lp = f(x);
  out.best_lp = lp;
  out.best = x;

  Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) chol(i, i) = scales[static_cast<std::size_t>(i)];
  double log_scale = 0.0;
  const int window = 100;
  int window_accepts = 0;
  const int cov_start = s.burn_in / 4;
  const int cov_switch = s.burn_in / 2;
  std::vector<std::vector<double>> history;

  std::vector<double> prop(x.size());
  Eigen::VectorXd z(d);
  for (int step = 0; step < s.n_steps; ++step) {
    for (Eigen::Index i = 0; i < d; ++i) z[i] = standard_normal(rng);
    const Eigen::VectorXd delta = std::exp(log_scale) * (chol * z);
    for (Eigen::Index i = 0; i < d; ++i)
      prop[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] + delta[i];
    const double lp_prop = f(prop);
    const double u = uniform01(rng);
    bool accept = false;
    if (std::isfinite(lp_prop)) {
      const double log_ratio = lp_prop - lp;
      accept = log_ratio >= 0 || (u > 0 && std::log(u) < log_ratio);
      if (!std::isfinite(lp)) accept = true;
    }
    if (accept) {
      x = prop;
      lp = lp_prop;
      if (lp > out.best_lp) {
        out.best_lp = lp;
        out.best = x;
      }
    }
    if (step < s.burn_in) {
      window_accepts += accept;
      if (s.adapt) {
        if (step >= cov_start && step < cov_switch) history.push_back(x);
        if ((step + 1) % window == 0) {
          const double rate = static_cast<double>(window_accepts) / window;
          if (rate < 0.2) log_scale -= 0.35;
          else if (rate > 0.4) log_scale += 0.35;
          window_accepts = 0;
        }
        if (step + 1 == cov_switch && history.size() > static_cast<std::size_t>(4 * d + 10)) {
          Eigen::MatrixXd m(static_cast<Eigen::Index>(history.size()), d);
          for (std::size_t r = 0; r < history.size(); ++r)
            for (Eigen::Index c = 0; c < d; ++c)
              m(static_cast<Eigen::Index>(r), c) = history[r][static_cast<std::size_t>(c)];
          const Eigen::RowVectorXd mean = m.colwise().mean();
          const Eigen::MatrixXd centered = m.rowwise() - mean;
          Eigen::MatrixXd cov = centered.transpose() * centered / double(history.size() - 1);
          cov *= 2.38 * 2.38 / static_cast<double>(d);
          for (Eigen::Index i = 0; i < d; ++i)
            cov(i, i) += 1e-12 * scales[static_cast<std::size_t>(i)] *
                         scales[static_cast<std::size_t>(i)];
          Eigen::LLT<Eigen::MatrixXd> llt(cov);
          if (llt.info() == Eigen::Success && cov.allFinite()) {
            chol = llt.matrixL();
            log_scale = 0.0;
          }
          history.clear();
        }
      }
    } else {
      ++out.proposed;
      out.accepted += accept;
      for (std::size_t i = 0; i < x.size(); ++i) out.draws[i].push_back(x[i]);
    }
  }
  return out;
}

}  // namespace

PosteriorResult mh_sample(const LogDensity& log_density, std::vector<double> init,
                          std::vector<double> proposal_scales, std::vector<std::string> names,
                          const SamplerSettings& settings) {
  settings.validate();
  if (init.empty() || init.size() != proposal_scales.size() || init.size() != names.size())
    throw PreconditionError("mh_sample: init, scales and names must have equal, non-zero size");
  for (double s : proposal_scales)
    if (!(s > 0)) throw PreconditionError("mh_sample: proposal scales must be positive");
  if (!std::isfinite(log_density(init)))
    throw PreconditionError("mh_sample: initial point outside the support");

  PosteriorResult result;
  result.names = std::move(names);
  std::size_t accepted = 0, proposed = 0;
  result.max_log_density = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < settings.n_chains; ++c) {
    Rng start_rng(stream_seed(settings.seed, 2 * static_cast<std::uint64_t>(c) + 1));
    std::vector<double> start = init;
    if (settings.init_spread > 0) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        std::vector<double> trial = init;
        const double shrink = std::pow(0.8, attempt);
        for (std::size_t i = 0; i < trial.size(); ++i)
          trial[i] += shrink * settings.init_spread * proposal_scales[i] * standard_normal(start_rng);
        if (std::isfinite(log_density(trial))) {
          start = trial;
          break;
        }
      }
    }
    auto chain = run_chain(log_density, start, proposal_scales, settings,
                           stream_seed(settings.seed, 2 * static_cast<std::uint64_t>(c)));
    accepted += chain.accepted;
    proposed += chain.proposed;
    if (chain.best_lp > result.max_log_density) {
      result.max_log_density = chain.best_lp;
      result.mode = chain.best;
    }
    result.draws.push_back(std::move(chain.draws));
  }
  result.acceptance_rate = proposed ? static_cast<double>(accepted) / proposed : 0.0;
  summarize(result, settings.rhat_threshold);
  if (!result.converged) result.warnings.push_back("non-convergence: split R-hat above threshold");
  return result;
}

}  // namespace qpburst
