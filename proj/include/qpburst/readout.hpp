#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qpburst/efficiency.hpp"
#include "qpburst/geometry.hpp"
#include "qpburst/physics.hpp"
#include "qpburst/rng.hpp"

namespace qpburst {

// State index convention for matrices and distributions: 0 = excited, 1 = ground.
enum class Outcome : std::uint8_t { excited = 0, ground = 1 };

struct MarkovParams {
  double p_wait = 0.0;          // relaxation probability during dt_wait
  double p_tot = 0.0;           // relaxation probability during dt_tot
  double dt_wait = 4e-6;        // [s]
  double dt_tot = 15.2e-6;      // [s]

  void validate() const;
};

// as_printed: P(e->e) = p_tot (1 - p_wait).
// survival:   P(e->e) = 1 - p_tot, kept for sensitivity checks.
enum class MarkovConvention { as_printed, survival };

using Matrix2 = std::array<std::array<double, 2>, 2>;

Matrix2 transition_matrix(const MarkovParams& m,
                          MarkovConvention convention = MarkovConvention::as_printed);

struct StationaryDistribution {
  double pi_e = 0.0;
  double pi_g = 0.0;
};

StationaryDistribution stationary_distribution(
    const MarkovParams& m, MarkovConvention convention = MarkovConvention::as_printed);

struct CycleSequence {
  std::vector<Outcome> outcomes;      // observed readout results
  std::vector<std::uint8_t> valid;    // 0 when the previous cycle read excited
  std::vector<Outcome> true_states;   // chain states before misclassification
  double t0 = 0.0;                    // absolute start time [s]
  double cycle_period = 15.3e-6;      // [s]
  double trigger_time = 0.0;          // absolute [s]
  std::string qubit;

  std::size_t size() const { return outcomes.size(); }
};

struct SequenceSettings {
  double cycle_period = 15.3e-6;  // [s]
  double dt_wait = 4e-6;          // [s]
  double dt_tot = 15.2e-6;        // [s]
  double t1 = 50e-6;              // baseline relaxation time [s]; <= 0 or inf disables
  MarkovConvention convention = MarkovConvention::as_printed;
  PhysicsConstants constants;

  void validate() const;
};

struct BurstInjection {
  double arrival_time = 0.0;  // absolute [s]
  BurstParams params;         // gamma is ignored: background comes from t1
};

// Markov probabilities of the cycle centred at absolute time t.
MarkovParams cycle_markov_params(double t, const std::optional<BurstInjection>& burst,
                                 const ResponseModel& model, const SequenceSettings& settings);

// Simulates n_cycles readout cycles starting at t0. The initial state is
// drawn from the stationary distribution of the first cycle.
CycleSequence simulate_sequence(const QubitConfig& qubit,
                                const std::optional<BurstInjection>& burst, double t0,
                                std::size_t n_cycles, std::uint64_t seed,
                                const SequenceSettings& settings = {});

// Convenience overload taking a duration; at least one cycle is simulated.
CycleSequence simulate_sequence_for(const QubitConfig& qubit,
                                    const std::optional<BurstInjection>& burst, double duration,
                                    std::uint64_t seed, const SequenceSettings& settings = {});

enum class SpectrumKind { monoenergetic, flat, log_flat, table };

struct SourceSpec {
  SpectrumKind kind = SpectrumKind::monoenergetic;
  double energy = 1e5;  // [eV] monoenergetic line
  double e_min = 1e4;   // [eV]
  double e_max = 1e6;   // [eV]
  // Tabulated CDF as (energy [eV], cumulative probability), both increasing.
  std::vector<std::pair<double, double>> cdf;
  double event_spacing = 1.0;  // [s] between consecutive arrivals
  bool poisson_timing = false;

  void validate() const;
};

struct SyntheticEvent {
  std::uint64_t event_id = 0;
  ChipPoint true_position;
  double true_energy_total = 0.0;                            // [eV]
  std::vector<std::pair<std::string, double>> per_qubit_edep;  // geometry site order
  double arrival_time = 0.0;                                 // [s]

  double edep(const std::string& qubit) const;
};

double sample_energy(const SourceSpec& spec, Rng& rng);

// Event i uses the random stream stream_seed(seed, i), so any subset of
// events can be regenerated independently.
SyntheticEvent generate_synthetic_event(const SourceSpec& spec, std::uint64_t index,
                                        const ChipGeometry& geometry,
                                        const EfficiencyModel& efficiency, std::uint64_t seed);

std::vector<SyntheticEvent> generate_synthetic_source(const SourceSpec& spec,
                                                      std::size_t n_events,
                                                      const ChipGeometry& geometry,
                                                      const EfficiencyModel& efficiency,
                                                      std::uint64_t seed);

}  // namespace qpburst
