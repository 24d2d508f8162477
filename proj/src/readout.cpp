#include "qpburst/readout.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qpburst/errors.hpp"

namespace qpburst {

void MarkovParams::validate() const {
  if (!(p_wait >= 0 && p_wait <= 1 && p_tot >= 0 && p_tot <= 1))
    throw DomainError("Markov probabilities must lie in [0, 1]");
  if (!(dt_wait > 0 && dt_tot > 0)) throw DomainError("Markov intervals must be positive");
}

Matrix2 transition_matrix(const MarkovParams& m, MarkovConvention convention) {
  m.validate();
  const double stay_e =
      convention == MarkovConvention::as_printed ? m.p_tot * (1.0 - m.p_wait) : 1.0 - m.p_tot;
  Matrix2 p{};
  p[0][0] = stay_e;
  p[0][1] = 1.0 - stay_e;
  p[1][0] = 1.0 - m.p_wait;
  p[1][1] = m.p_wait;
  return p;
}

StationaryDistribution stationary_distribution(const MarkovParams& m,
                                               MarkovConvention convention) {
  const Matrix2 p = transition_matrix(m, convention);
  const double g_to_e = p[1][0];
  const double e_to_g = p[0][1];
  const double denom = g_to_e + e_to_g;
  if (denom == 0) throw DomainError("degenerate Markov chain: no stationary distribution");
  StationaryDistribution out;
  out.pi_e = g_to_e / denom;
  out.pi_g = e_to_g / denom;
  return out;
}

void SequenceSettings::validate() const {
  if (!(cycle_period > 0 && dt_wait > 0 && dt_tot > 0))
    throw ConfigError("sequence timing must be positive");
  constants.validate();
}

MarkovParams cycle_markov_params(double t, const std::optional<BurstInjection>& burst,
                                 const ResponseModel& model, const SequenceSettings& s) {
  double x = 0.0;
  if (burst && t >= burst->arrival_time)
    x = model.burst_exponent(t - burst->arrival_time, burst->params);
  const bool has_t1 = s.t1 > 0 && std::isfinite(s.t1);
  const double base_wait = has_t1 ? s.dt_wait / s.t1 : 0.0;
  const double base_tot = has_t1 ? s.dt_tot / s.t1 : 0.0;
  MarkovParams m;
  m.dt_wait = s.dt_wait;
  m.dt_tot = s.dt_tot;
  m.p_wait = -std::expm1(-x - base_wait);
  m.p_tot = -std::expm1(-x * s.dt_tot / s.constants.delta_t - base_tot);
  return m;
}

CycleSequence simulate_sequence(const QubitConfig& qubit,
                                const std::optional<BurstInjection>& burst, double t0,
                                std::size_t n_cycles, std::uint64_t seed,
                                const SequenceSettings& settings) {
  settings.validate();
  if (n_cycles == 0) throw PreconditionError("sequence needs at least one cycle");
  if (burst) burst->params.validate();
  const ResponseModel model(settings.constants, qubit);
  const double p_eg = model.p_eg();
  const double p_ge = model.p_ge();

  CycleSequence seq;
  seq.t0 = t0;
  seq.cycle_period = settings.cycle_period;
  seq.trigger_time = burst ? burst->arrival_time : t0;
  seq.qubit = qubit.name;
  seq.outcomes.resize(n_cycles);
  seq.valid.resize(n_cycles);
  seq.true_states.resize(n_cycles);

  Rng rng(seed);
  const bool static_chain = !burst;
  Matrix2 p{};
  if (static_chain) p = transition_matrix(cycle_markov_params(t0, burst, model, settings),
                                          settings.convention);

  int state = 0;
  for (std::size_t i = 0; i < n_cycles; ++i) {
    const double t = t0 + (static_cast<double>(i) + 0.5) * settings.cycle_period;
    if (!static_chain)
      p = transition_matrix(cycle_markov_params(t, burst, model, settings), settings.convention);
    const double u = uniform01(rng);
    if (i == 0) {
      const double g_to_e = p[1][0], e_to_g = p[0][1];
      const double pi_g = g_to_e + e_to_g > 0 ? e_to_g / (g_to_e + e_to_g) : 0.0;
      state = u < pi_g ? 1 : 0;
    } else {
      state = u < p[state][1] ? 1 : 0;
    }
    const double v = uniform01(rng);
    const bool read_ground = state == 1 ? v >= p_eg : v < p_ge;
    seq.true_states[i] = state == 1 ? Outcome::ground : Outcome::excited;
    seq.outcomes[i] = read_ground ? Outcome::ground : Outcome::excited;
    seq.valid[i] = i == 0 ? 1 : (seq.outcomes[i - 1] == Outcome::ground ? 1 : 0);
  }
  return seq;
}

CycleSequence simulate_sequence_for(const QubitConfig& qubit,
                                    const std::optional<BurstInjection>& burst, double duration,
                                    std::uint64_t seed, const SequenceSettings& settings) {
  if (!(duration > 0)) throw PreconditionError("duration must be positive");
  const auto n = static_cast<std::size_t>(std::max(1.0, std::floor(duration / settings.cycle_period)));
  const double t0 = burst ? burst->arrival_time : 0.0;
  return simulate_sequence(qubit, burst, t0, n, seed, settings);
}

void SourceSpec::validate() const {
  switch (kind) {
    case SpectrumKind::monoenergetic:
      if (!(energy > 0)) throw ConfigError("monoenergetic source needs a positive energy");
      break;
    case SpectrumKind::flat:
      if (!(e_min >= 0 && e_max > e_min)) throw ConfigError("flat source needs 0 <= e_min < e_max");
      break;
    case SpectrumKind::log_flat:
      if (!(e_min > 0 && e_max > e_min)) throw ConfigError("log-flat source needs 0 < e_min < e_max");
      break;
    case SpectrumKind::table:
      if (cdf.empty()) throw ConfigError("source spectrum table is empty");
      for (std::size_t i = 0; i < cdf.size(); ++i) {
        if (!(cdf[i].first >= 0 && cdf[i].second >= 0))
          throw ConfigError("source spectrum table needs non-negative entries");
        if (i > 0 && (cdf[i].first <= cdf[i - 1].first || cdf[i].second < cdf[i - 1].second))
          throw ConfigError("source spectrum table must be increasing");
      }
      if (!(cdf.back().second > cdf.front().second))
        throw ConfigError("source spectrum table carries no probability");
      break;
  }
  if (!(event_spacing > 0)) throw ConfigError("event spacing must be positive");
}

double SyntheticEvent::edep(const std::string& qubit) const {
  for (const auto& [name, e] : per_qubit_edep)
    if (name == qubit) return e;
  throw ConfigError("event has no qubit named " + qubit);
}

double sample_energy(const SourceSpec& spec, Rng& rng) {
  const double u = uniform01(rng);
  switch (spec.kind) {
    case SpectrumKind::monoenergetic:
      return spec.energy;
    case SpectrumKind::flat:
      return spec.e_min + u * (spec.e_max - spec.e_min);
    case SpectrumKind::log_flat:
      return spec.e_min * std::exp(u * std::log(spec.e_max / spec.e_min));
    case SpectrumKind::table: {
      const auto& t = spec.cdf;
      const double lo = t.front().second, hi = t.back().second;
      const double target = lo + u * (hi - lo);
      auto it = std::upper_bound(t.begin(), t.end(), target,
                                 [](double v, const auto& row) { return v < row.second; });
      if (it == t.begin()) return t.front().first;
      if (it == t.end()) return t.back().first;
      const auto& a = *(it - 1);
      const auto& b = *it;
      const double f = b.second > a.second ? (target - a.second) / (b.second - a.second) : 0.0;
      return a.first + f * (b.first - a.first);
    }
  }
  return spec.energy;
}

SyntheticEvent generate_synthetic_event(const SourceSpec& spec, std::uint64_t index,
                                        const ChipGeometry& geometry,
                                        const EfficiencyModel& efficiency, std::uint64_t seed) {
  Rng rng(stream_seed(seed, index));
  SyntheticEvent ev;
  ev.event_id = index;
  ev.true_position.x = uniform01(rng) * geometry.width;
  ev.true_position.y = uniform01(rng) * geometry.height;
  ev.true_energy_total = sample_energy(spec, rng);
  ev.arrival_time = static_cast<double>(index) * spec.event_spacing;
  for (const auto& site : geometry.sites) {
    const double r = distance(ev.true_position, site.position);
    ev.per_qubit_edep.emplace_back(site.name,
                                   expected_signal(r, ev.true_energy_total, efficiency));
  }
  return ev;
}

std::vector<SyntheticEvent> generate_synthetic_source(const SourceSpec& spec,
                                                      std::size_t n_events,
                                                      const ChipGeometry& geometry,
                                                      const EfficiencyModel& efficiency,
                                                      std::uint64_t seed) {
  spec.validate();
  geometry.validate();
  efficiency.validate();
  std::vector<SyntheticEvent> out;
  out.reserve(n_events);
  Rng timing(stream_seed(seed, std::numeric_limits<std::uint64_t>::max()));
  double clock = 0.0;
  for (std::size_t i = 0; i < n_events; ++i) {
    out.push_back(generate_synthetic_event(spec, i, geometry, efficiency, seed));
    if (spec.poisson_timing) {
      clock += -std::log1p(-uniform01(timing)) * spec.event_spacing;
      out.back().arrival_time = clock;
    }
  }
  return out;
}

}  // namespace qpburst
