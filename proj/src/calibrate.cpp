#include "qpburst/calibrate.hpp"

#include <cmath>

#include "qpburst/errors.hpp"

namespace qpburst {

CalibrationEstimate combine_variants(std::span<const ParameterSummary> variants) {
  if (variants.empty()) throw PreconditionError("no calibration variants to combine");
  CalibrationEstimate out;
  out.variants = variants.size();
  const double n = static_cast<double>(variants.size());
  for (const auto& v : variants) {
    out.value += v.median / n;
    out.stat += v.half_width() / n;
  }
  if (variants.size() > 1) {
    double ss = 0.0;
    for (const auto& v : variants) ss += (v.median - out.value) * (v.median - out.value);
    out.syst = std::sqrt(ss / (n - 1));
  }
  out.total = std::hypot(out.stat, out.syst);
  return out;
}

namespace {

CalibrationVariant run_variant(const std::string& kind, int cut,
                               const std::vector<const BinnedWaveform*>& members,
                               const PosteriorResult& post) {
  CalibrationVariant v;
  v.kind = kind;
  v.cut = cut;
  v.n_pulses = members.size();
  v.params = post.summaries;
  v.converged = post.converged;
  return v;
}

}  // namespace

QubitCalibration calibrate_qubit(const QubitConfig& qubit, const PhysicsConstants& constants,
                                 std::span<const BinnedWaveform* const> waveforms,
                                 const FitSettings& settings) {
  QubitCalibration cal;
  cal.qubit = qubit.name;
  std::vector<PulseFeatures> feats;
  for (const auto* w : waveforms) feats.push_back(compute_features(*w));

  std::vector<ParameterSummary> r_he, tau_he;
  const auto he = select_high_energy(feats);
  if (he.empty()) throw FitError("qubit " + qubit.name + ": no high-energy selection with >= 2 pulses");
  for (const auto& sel : he) {
    std::vector<const BinnedWaveform*> members;
    for (auto i : sel.members) members.push_back(waveforms[i]);
    const auto ap = average_pulse(std::span<const BinnedWaveform* const>(members));
    const auto post = fit_he_average(ap, qubit, constants, settings);
    cal.variants.push_back(run_variant("HE", sel.n_sat_above, members, post));
    if (!post.converged) {
      cal.warnings.push_back("HE n_sat > " + std::to_string(sel.n_sat_above) + " did not converge");
      continue;
    }
    r_he.push_back(post.summary("r"));
    tau_he.push_back(post.summary("tau_ss"));
  }
  if (r_he.empty()) throw FitError("qubit " + qubit.name + ": no converged high-energy fit");
  cal.r = combine_variants(r_he);
  cal.tau_ss_he = combine_variants(tau_he);

  std::vector<ParameterSummary> tau_le;
  for (const auto& slice : select_low_energy(feats)) {
    if (slice.members.size() < 2) continue;
    std::vector<const BinnedWaveform*> members;
    for (auto i : slice.members) members.push_back(waveforms[i]);
    const auto ap = average_pulse(std::span<const BinnedWaveform* const>(members));
    const auto post = fit_le_average(ap, qubit, constants, cal.r.value, settings);
    cal.variants.push_back(run_variant("LE", slice.n_sigma, members, post));
    if (!post.converged) {
      cal.warnings.push_back("LE n = " + std::to_string(slice.n_sigma) + " did not converge");
      continue;
    }
    tau_le.push_back(post.summary("tau_ss"));
  }
  if (tau_le.empty()) {
    cal.warnings.push_back("no low-energy selection; tau_ss taken from the high-energy fits");
    cal.tau_ss = cal.tau_ss_he;
  } else {
    cal.tau_ss = combine_variants(tau_le);
  }
  return cal;
}

}  // namespace qpburst
