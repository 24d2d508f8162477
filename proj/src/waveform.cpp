#include "qpburst/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qpburst/errors.hpp"

namespace qpburst {

std::size_t BinnedWaveform::empty_bins() const {
  return static_cast<std::size_t>(std::count(N.begin(), N.end(), 0));
}

void BinnedWaveform::validate(int max_trials) const {
  if (n.size() != N.size() || n.size() != bin_centers.size())
    throw SchemaError("waveform " + qubit + ": array lengths differ");
  if (pre_trigger_bins > n.size()) throw SchemaError("waveform " + qubit + ": bad trigger bin");
  if (!(bin_width > 0)) throw SchemaError("waveform " + qubit + ": bin width must be positive");
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (n[i] < 0 || n[i] > N[i]) throw SchemaError("waveform " + qubit + ": need 0 <= n <= N");
    if (max_trials >= 0 && N[i] > max_trials)
      throw SchemaError("waveform " + qubit + ": N exceeds the bin size");
  }
}

BinnedWaveform bin_sequence(const CycleSequence& seq, std::size_t bin_size) {
  if (bin_size == 0) throw PreconditionError("bin size must be positive");
  if (seq.size() < bin_size) throw PreconditionError("sequence shorter than one bin");
  const std::size_t n_bins = seq.size() / bin_size;
  BinnedWaveform w;
  w.qubit = seq.qubit;
  w.trigger_time = seq.trigger_time;
  w.bin_width = static_cast<double>(bin_size) * seq.cycle_period;
  const double offset = (seq.trigger_time - seq.t0) / w.bin_width;
  const double pre = std::floor(offset + 1e-9);
  w.pre_trigger_bins = static_cast<std::size_t>(std::clamp(pre, 0.0, double(n_bins)));
  w.n.assign(n_bins, 0);
  w.N.assign(n_bins, 0);
  w.bin_centers.resize(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    w.bin_centers[b] = seq.t0 + (static_cast<double>(b) + 0.5) * w.bin_width - seq.trigger_time;
    for (std::size_t k = b * bin_size; k < (b + 1) * bin_size; ++k) {
      if (!seq.valid[k]) continue;
      ++w.N[b];
      if (seq.outcomes[k] == Outcome::ground) ++w.n[b];
    }
  }
  return w;
}

BinnedWaveform simulate_waveform(const QubitConfig& qubit, const std::optional<BurstParams>& burst,
                                 double trigger_time, std::uint64_t seed,
                                 const SequenceSettings& seq, const WindowSettings& win) {
  const double width = win.bin_width(seq);
  const double t0 = trigger_time - static_cast<double>(win.pre_trigger_bins) * width;
  const std::size_t n_cycles = (win.pre_trigger_bins + win.post_trigger_bins) * win.bin_size;
  std::optional<BurstInjection> injection;
  std::uint64_t stream = seed;
  if (burst) {
    double arrival = trigger_time;
    if (win.jitter) {
      Rng jitter_rng(mix_seed(seed ^ 0x6a09e667f3bcc909ULL));
      arrival += uniform01(jitter_rng) * width;
    }
    injection = BurstInjection{arrival, *burst};
  }
  auto cycles = simulate_sequence(qubit, injection, t0, n_cycles, stream, seq);
  cycles.trigger_time = trigger_time;
  return bin_sequence(cycles, win.bin_size);
}

PulseFeatures compute_features(const BinnedWaveform& w, std::size_t pre_trigger_bins) {
  if (pre_trigger_bins < 2) throw PreconditionError("need at least 2 pre-trigger bins");
  if (pre_trigger_bins > w.size()) throw PreconditionError("pre-trigger region exceeds window");
  PulseFeatures f;
  std::vector<double> pre;
  for (std::size_t i = 0; i < pre_trigger_bins; ++i)
    if (w.N[i] > 0) pre.push_back(w.p(i));
  if (pre.empty()) throw FeatureError("waveform " + w.qubit + ": no valid pre-trigger bins");
  const double m = std::accumulate(pre.begin(), pre.end(), 0.0) / static_cast<double>(pre.size());
  double ss = 0.0;
  for (double v : pre) ss += (v - m) * (v - m);
  f.baseline_B = m;
  f.baseline_sigma = pre.size() > 1 ? std::sqrt(ss / static_cast<double>(pre.size() - 1)) : 0.0;

  bool found = false;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w.N[i] == 0) continue;
    const double p = w.p(i);
    if (!found || p > f.p_max) {
      f.p_max = p;
      f.t_max = w.bin_centers[i] - 0.5 * w.bin_width;
      found = true;
    }
    if (w.n[i] == w.N[i]) ++f.n_sat;
    const double t = w.bin_centers[i];
    constexpr double eps = 1e-12;
    if (t >= -eps && t <= 5e-3 + eps) f.i_5ms += w.n[i];
    if (t >= -eps && t <= 30.6e-3 + eps) f.i_tot += w.n[i];
    if (t >= 10e-3 - eps && t <= 30.6e-3 + eps) f.i_tail += w.n[i];
  }
  return f;
}

const BinnedWaveform* EventRecord::find(const std::string& qubit) const {
  for (const auto& w : waveforms)
    if (w.qubit == qubit) return &w;
  return nullptr;
}

std::vector<QubitEventFeatures> extract_features(std::span<const EventRecord> events) {
  std::vector<QubitEventFeatures> out;
  for (const auto& ev : events)
    for (const auto& w : ev.waveforms)
      out.push_back({ev.event_id, ev.trigger_time, w.qubit, compute_features(w)});
  return out;
}

void CutConfig::validate() const {
  if (!(baseline_nsigma > 0 && jump_threshold > 0 && signal_nsigma >= 0))
    throw ConfigError("cut thresholds must be positive");
  if (!(tail_quantile > 0 && tail_quantile <= 1 && nsat_quantile > 0 && nsat_quantile <= 1))
    throw ConfigError("cut quantiles must lie in (0, 1]");
  if (jump_half_window == 0) throw ConfigError("jump window must be positive");
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw PreconditionError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

}  // namespace

std::vector<bool> detect_baseline_jumps(std::span<const double> baselines,
                                        std::size_t half_window, double threshold) {
  std::vector<bool> flags(baselines.size(), false);
  if (baselines.size() < 5) return flags;
  // Noise scale from successive differences: a step only spoils two of them.
  std::vector<double> diffs;
  for (std::size_t j = 1; j < baselines.size(); ++j) diffs.push_back(std::abs(baselines[j] - baselines[j - 1]));
  const double robust_sigma = 1.4826 * median(diffs) / std::sqrt(2.0);
  if (!(robust_sigma > 0)) return flags;
  for (std::size_t j = 0; j < baselines.size(); ++j) {
    const std::size_t lo = j >= half_window ? j - half_window : 0;
    const std::size_t hi = std::min(baselines.size(), j + half_window + 1);
    const double med = median(std::vector<double>(baselines.begin() + lo, baselines.begin() + hi));
    flags[j] = std::abs(baselines[j] - med) > threshold * robust_sigma;
  }
  return flags;
}

CutThresholds derive_cut_thresholds(std::span<const QubitEventFeatures> rows,
                                    const CutConfig& config) {
  config.validate();
  std::map<std::string, std::vector<const QubitEventFeatures*>> by_qubit;
  for (const auto& r : rows) by_qubit[r.qubit].push_back(&r);

  CutThresholds out;
  for (auto& [name, list] : by_qubit) {
    std::stable_sort(list.begin(), list.end(), [](auto* a, auto* b) {
      return a->trigger_time != b->trigger_time ? a->trigger_time < b->trigger_time
                                                : a->event_id < b->event_id;
    });
    QubitCutThresholds t;
    std::vector<double> base, tail, nsat;
    for (auto* r : list) {
      base.push_back(r->features.baseline_B);
      tail.push_back(r->features.tail_fraction());
      nsat.push_back(r->features.n_sat);
    }
    const double n = static_cast<double>(base.size());
    t.baseline_mean = std::accumulate(base.begin(), base.end(), 0.0) / n;
    double ss = 0.0;
    for (double b : base) ss += (b - t.baseline_mean) * (b - t.baseline_mean);
    t.baseline_std = base.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    t.tail_fraction_max = quantile(tail, config.tail_quantile);
    t.n_sat_max = quantile(nsat, config.nsat_quantile);
    if (config.stability_cut) {
      const auto jumps = detect_baseline_jumps(base, config.jump_half_window, config.jump_threshold);
      for (std::size_t i = 0; i < list.size(); ++i)
        if (jumps[i]) t.unstable_events.insert(list[i]->event_id);
    }
    out.per_qubit.emplace(name, std::move(t));
  }
  return out;
}

CutFlags evaluate_cuts(const QubitEventFeatures& row, const QubitCutThresholds& t,
                       const CutConfig& config) {
  CutFlags f;
  const auto& x = row.features;
  if (t.baseline_std > 0)
    f.baseline = std::abs(x.baseline_B - t.baseline_mean) <= config.baseline_nsigma * t.baseline_std;
  f.stability = !t.unstable_events.contains(row.event_id);
  f.tail = x.tail_fraction() <= t.tail_fraction_max;
  f.n_sat = x.n_sat <= t.n_sat_max;
  f.analysis = x.p_max > x.baseline_B + config.signal_nsigma * x.baseline_sigma;
  return f;
}

const QubitEfficiency& CutReport::efficiency(const std::string& qubit) const {
  for (const auto& e : efficiencies)
    if (e.qubit == qubit) return e;
  throw PreconditionError("cut report has no qubit " + qubit);
}

CutReport apply_quality_cuts(std::span<const QubitEventFeatures> rows,
                             const CutThresholds& thresholds, const CutConfig& config) {
  CutReport report;
  report.thresholds = thresholds;
  std::map<std::string, QubitEfficiency> per_qubit;
  struct EventState {
    bool quality = true, analysis = true;
  };
  std::map<std::uint64_t, EventState> events;
  for (const auto& row : rows) {
    auto it = thresholds.per_qubit.find(row.qubit);
    if (it == thresholds.per_qubit.end())
      throw PreconditionError("no cut thresholds for qubit " + row.qubit);
    const CutFlags f = evaluate_cuts(row, it->second, config);
    report.flags.push_back(f);
    auto& e = per_qubit[row.qubit];
    e.qubit = row.qubit;
    ++e.events;
    e.fail_baseline += !f.baseline;
    e.fail_stability += !f.stability;
    e.fail_tail += !f.tail;
    e.fail_n_sat += !f.n_sat;
    e.pass_quality += f.quality();
    e.pass_analysis += f.analysis;
    e.pass_total += f.total();
    auto& ev = events[row.event_id];
    ev.quality = ev.quality && f.quality();
    ev.analysis = ev.analysis && f.analysis;
  }
  for (auto& [name, e] : per_qubit) report.efficiencies.push_back(e);
  QubitEfficiency all;
  all.qubit = "all";
  for (const auto& [id, ev] : events) {
    ++all.events;
    all.pass_quality += ev.quality;
    all.pass_analysis += ev.analysis;
    all.pass_total += ev.quality && ev.analysis;
  }
  for (const auto& e : report.efficiencies) {
    all.fail_baseline += e.fail_baseline;
    all.fail_stability += e.fail_stability;
    all.fail_tail += e.fail_tail;
    all.fail_n_sat += e.fail_n_sat;
  }
  report.efficiencies.push_back(all);
  return report;
}

CutReport apply_quality_cuts(std::span<const QubitEventFeatures> rows, const CutConfig& config) {
  return apply_quality_cuts(rows, derive_cut_thresholds(rows, config), config);
}

std::vector<QubitEventFeatures> passing_rows(std::span<const QubitEventFeatures> rows,
                                             const CutReport& report) {
  if (report.flags.size() != rows.size())
    throw PreconditionError("cut report does not match the feature rows");
  std::vector<QubitEventFeatures> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (report.flags[i].quality()) out.push_back(rows[i]);
  return out;
}

std::vector<LowEnergySlice> select_low_energy(std::span<const PulseFeatures> features,
                                              int n_start, double p_cap) {
  if (n_start < 3) throw PreconditionError("low-energy slices start at n >= 3");
  std::vector<LowEnergySlice> out;
  if (features.empty()) return out;
  double mean_b = 0.0, mean_s = 0.0;
  for (const auto& f : features) {
    mean_b += f.baseline_B;
    mean_s += f.baseline_sigma;
  }
  mean_b /= static_cast<double>(features.size());
  mean_s /= static_cast<double>(features.size());
  if (!(mean_s > 0)) return out;
  for (int n = n_start; n < n_start + 10000; ++n) {
    if (mean_b + (n + 1) * mean_s > p_cap) break;
    LowEnergySlice slice;
    slice.n_sigma = n;
    for (std::size_t i = 0; i < features.size(); ++i) {
      const auto& f = features[i];
      const double lo = f.baseline_B + n * f.baseline_sigma;
      const double hi = f.baseline_B + (n + 1) * f.baseline_sigma;
      if (f.p_max > lo && f.p_max < hi && f.p_max < p_cap) slice.members.push_back(i);
    }
    out.push_back(std::move(slice));
  }
  return out;
}

std::vector<HighEnergySelection> select_high_energy(std::span<const PulseFeatures> features) {
  std::vector<HighEnergySelection> out;
  int k = 0;
  for (const auto& f : features) k = std::max(k, f.n_sat);
  if (k == 0) return out;
  for (int j = std::max(k - 3, 3); j <= k - 1; ++j) {
    HighEnergySelection sel;
    sel.n_sat_above = j;
    for (std::size_t i = 0; i < features.size(); ++i)
      if (features[i].n_sat > j) sel.members.push_back(i);
    if (sel.members.size() >= 2) out.push_back(std::move(sel));
  }
  return out;
}

BinnedWaveform average_pulse(std::span<const BinnedWaveform* const> selection) {
  if (selection.size() < 2) throw PreconditionError("average pulse needs at least 2 waveforms");
  BinnedWaveform out = *selection.front();
  for (std::size_t k = 1; k < selection.size(); ++k) {
    const auto& w = *selection[k];
    if (w.size() != out.size() || w.pre_trigger_bins != out.pre_trigger_bins ||
        std::abs(w.bin_width - out.bin_width) > 1e-12 * out.bin_width)
      throw AlignmentError("average pulse: waveforms have different binning");
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (std::abs(w.bin_centers[i] - out.bin_centers[i]) > 1e-9 * out.bin_width)
        throw AlignmentError("average pulse: waveforms are not aligned at the trigger");
      out.n[i] += w.n[i];
      out.N[i] += w.N[i];
    }
  }
  return out;
}

BinnedWaveform average_pulse(std::span<const BinnedWaveform> selection) {
  std::vector<const BinnedWaveform*> ptrs;
  for (const auto& w : selection) ptrs.push_back(&w);
  return average_pulse(std::span<const BinnedWaveform* const>(ptrs));
}

}  // namespace qpburst
