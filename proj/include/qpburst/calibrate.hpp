#pragma once

#include <span>
#include <string>
#include <vector>

#include "qpburst/fit.hpp"

namespace qpburst {

struct CalibrationEstimate {
  double value = 0.0;
  double stat = 0.0;  // mean 68% half-width over variants
  double syst = 0.0;  // spread of the variant medians
  double total = 0.0;
  std::size_t variants = 0;
};

// Central value = mean of variant medians, stat = mean half-width,
// syst = sample standard deviation of the medians, total = stat (+) syst.
CalibrationEstimate combine_variants(std::span<const ParameterSummary> variants);

struct CalibrationVariant {
  std::string kind;  // "HE" or "LE"
  int cut = 0;       // n_sat > cut for HE, n for the LE band
  std::size_t n_pulses = 0;
  std::vector<ParameterSummary> params;
  bool converged = true;
};

struct QubitCalibration {
  std::string qubit;
  CalibrationEstimate r;        // [ns^-1], high-energy selections
  CalibrationEstimate tau_ss;   // [ms], low-energy selections
  CalibrationEstimate tau_ss_he;
  std::vector<CalibrationVariant> variants;
  std::vector<std::string> warnings;
};

// Runs the high-energy average-pulse fits for r, then the low-energy fits
// for tau_ss with r fixed. `waveforms` should already pass quality cuts.
QubitCalibration calibrate_qubit(const QubitConfig& qubit, const PhysicsConstants& constants,
                                 std::span<const BinnedWaveform* const> waveforms,
                                 const FitSettings& settings = {});

}  // namespace qpburst
