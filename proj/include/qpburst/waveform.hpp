#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "qpburst/readout.hpp"

namespace qpburst {

struct BinnedWaveform {
  std::string qubit;
  double trigger_time = 0.0;       // absolute [s]
  double bin_width = 0.0;          // [s]
  std::size_t pre_trigger_bins = 0;
  std::vector<int> n;              // error counts
  std::vector<int> N;              // valid trials
  std::vector<double> bin_centers; // [s] relative to the trigger

  std::size_t size() const { return n.size(); }
  double p(std::size_t i) const { return N[i] > 0 ? static_cast<double>(n[i]) / N[i] : 0.0; }
  std::size_t empty_bins() const;
  void validate(int max_trials = -1) const;
};

BinnedWaveform bin_sequence(const CycleSequence& seq, std::size_t bin_size = 40);

struct WindowSettings {
  std::size_t pre_trigger_bins = 25;
  std::size_t post_trigger_bins = 50;
  std::size_t bin_size = 40;
  bool jitter = false;  // arrival uniform within the trigger bin

  double bin_width(const SequenceSettings& s) const {
    return static_cast<double>(bin_size) * s.cycle_period;
  }
};

// Simulates a triggered window around trigger_time; a missing burst gives a
// baseline-only record.
BinnedWaveform simulate_waveform(const QubitConfig& qubit, const std::optional<BurstParams>& burst,
                                 double trigger_time, std::uint64_t seed,
                                 const SequenceSettings& seq = {}, const WindowSettings& win = {});

struct PulseFeatures {
  double baseline_B = 0.0;
  double baseline_sigma = 0.0;
  double p_max = 0.0;
  double t_max = 0.0;  // left edge of the maximum bin relative to the trigger [s]
  double i_5ms = 0.0;
  double i_tot = 0.0;
  double i_tail = 0.0;
  int n_sat = 0;

  double tail_fraction() const { return i_tot > 0 ? i_tail / i_tot : 0.0; }
};

PulseFeatures compute_features(const BinnedWaveform& w, std::size_t pre_trigger_bins);
inline PulseFeatures compute_features(const BinnedWaveform& w) {
  return compute_features(w, w.pre_trigger_bins);
}

struct EventRecord {
  std::uint64_t event_id = 0;
  double trigger_time = 0.0;
  std::vector<BinnedWaveform> waveforms;

  const BinnedWaveform* find(const std::string& qubit) const;
};

// Features of one qubit in one event; the unit the cuts operate on.
struct QubitEventFeatures {
  std::uint64_t event_id = 0;
  double trigger_time = 0.0;
  std::string qubit;
  PulseFeatures features;
};

std::vector<QubitEventFeatures> extract_features(std::span<const EventRecord> events);

struct CutConfig {
  double baseline_nsigma = 2.0;
  bool stability_cut = true;
  std::size_t jump_half_window = 20;  // events on each side
  double jump_threshold = 3.0;        // robust standard deviations
  double tail_quantile = 0.995;
  double nsat_quantile = 0.995;
  double signal_nsigma = 3.0;

  void validate() const;
};

struct QubitCutThresholds {
  double baseline_mean = 0.0;
  double baseline_std = 0.0;
  double tail_fraction_max = 1.0;
  double n_sat_max = 0.0;
  std::set<std::uint64_t> unstable_events;
};

struct CutThresholds {
  std::map<std::string, QubitCutThresholds> per_qubit;
};

// First pass: statistics over the ensemble, frozen for the filtering pass.
CutThresholds derive_cut_thresholds(std::span<const QubitEventFeatures> rows,
                                    const CutConfig& config = {});

// Rolling median/MAD baseline-jump detector over one qubit's time-ordered
// baselines; returns a flag per entry.
std::vector<bool> detect_baseline_jumps(std::span<const double> baselines,
                                        std::size_t half_window, double threshold);

struct CutFlags {
  bool baseline = true;
  bool stability = true;
  bool tail = true;
  bool n_sat = true;
  bool analysis = true;  // p_max above B + n sigma_B

  bool quality() const { return baseline && stability && tail && n_sat; }
  bool total() const { return quality() && analysis; }
};

CutFlags evaluate_cuts(const QubitEventFeatures& row, const QubitCutThresholds& t,
                       const CutConfig& config = {});

struct QubitEfficiency {
  std::string qubit;  // "all" for the combined row
  std::size_t events = 0;
  std::size_t fail_baseline = 0;
  std::size_t fail_stability = 0;
  std::size_t fail_tail = 0;
  std::size_t fail_n_sat = 0;
  std::size_t pass_quality = 0;
  std::size_t pass_analysis = 0;
  std::size_t pass_total = 0;

  double eff_quality() const { return events ? double(pass_quality) / events : 0.0; }
  double eff_analysis() const { return events ? double(pass_analysis) / events : 0.0; }
  double eff_total() const { return events ? double(pass_total) / events : 0.0; }
};

struct CutReport {
  CutThresholds thresholds;
  std::vector<CutFlags> flags;              // parallel to the input rows
  std::vector<QubitEfficiency> efficiencies;  // per qubit, then "all"

  const QubitEfficiency& efficiency(const std::string& qubit) const;
};

CutReport apply_quality_cuts(std::span<const QubitEventFeatures> rows,
                             const CutThresholds& thresholds, const CutConfig& config = {});
CutReport apply_quality_cuts(std::span<const QubitEventFeatures> rows,
                             const CutConfig& config = {});

// Rows that pass the quality cuts under `report`.
std::vector<QubitEventFeatures> passing_rows(std::span<const QubitEventFeatures> rows,
                                             const CutReport& report);

struct LowEnergySlice {
  int n_sigma = 0;
  std::vector<std::size_t> members;  // indices into the input
};

// Bands B + n sigma_B < p_max < B + (n+1) sigma_B with p_max < p_cap, for
// n = n_start, n_start + 1, ... up to the first band whose ensemble-mean
// upper edge exceeds p_cap.
std::vector<LowEnergySlice> select_low_energy(std::span<const PulseFeatures> features,
                                              int n_start = 3, double p_cap = 0.6);

struct HighEnergySelection {
  int n_sat_above = 0;  // pulses with n_sat > n_sat_above
  std::vector<std::size_t> members;
};

// With k the largest observed n_sat, selections n_sat > j for
// j = max(k - 3, 3) .. k - 1; selections with fewer than 2 pulses are dropped.
std::vector<HighEnergySelection> select_high_energy(std::span<const PulseFeatures> features);

BinnedWaveform average_pulse(std::span<const BinnedWaveform* const> selection);
BinnedWaveform average_pulse(std::span<const BinnedWaveform> selection);

double quantile(std::vector<double> values, double q);

}  // namespace qpburst
