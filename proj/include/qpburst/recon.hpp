#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "qpburst/efficiency.hpp"
#include "qpburst/geometry.hpp"

namespace qpburst {

// Pearson correlation of two amplitude series of equal length.
double amplitude_correlation(std::span<const double> phi, std::span<const double> xi);

struct QubitSignal {
  std::string qubit;
  double s_obs = 0.0;  // [eV]
  double sigma = 0.0;  // [eV]
};

inline constexpr double kDeltaChi2OneSigma = 3.53;
inline constexpr double kDeltaChi2TwoSigma = 8.02;
inline constexpr double kDeltaChi2ThreeSigma = 14.16;

struct VertexSolution {
  double x = 0.0;      // [mm]
  double y = 0.0;      // [mm]
  double e_tot = 0.0;  // [eV]
  double chi2_min = 0.0;
  // Grid cells whose profiled chi2 lies within each level; boundary cells only.
  std::vector<ChipPoint> contour_1s;
  std::vector<ChipPoint> contour_2s;
  std::vector<ChipPoint> contour_3s;
  // Cell counts of the full regions (nesting: n_1s <= n_2s <= n_3s).
  std::size_t region_1s = 0;
  std::size_t region_2s = 0;
  std::size_t region_3s = 0;
  bool fiducial_pass = false;
  std::vector<std::string> warnings;
};

struct VertexSettings {
  double grid_pitch = 0.05;  // [mm]
  bool refine = true;
  bool contours = true;
};

// Weighted-least-squares E_tot at a fixed vertex; fills chi2 if non-null.
double best_energy_at(const ChipPoint& p, std::span<const QubitSignal> signals,
                      const ChipGeometry& geometry, const EfficiencyModel& model,
                      double* chi2 = nullptr);

double vertex_chi2(const ChipPoint& p, double e_tot, std::span<const QubitSignal> signals,
                   const ChipGeometry& geometry, const EfficiencyModel& model);

VertexSolution reconstruct_vertex(std::span<const QubitSignal> signals,
                                  const ChipGeometry& geometry, const EfficiencyModel& model,
                                  const VertexSettings& settings = {});

bool fiducial_cut(const VertexSolution& v, const ChipGeometry& geometry);

struct SpectrumBinning {
  double e_min = 1e4;  // [eV]
  double e_max = 1e7;  // [eV]
  int n_bins = 30;     // log-spaced

  void validate() const;
  std::vector<double> edges() const;
};

struct Spectrum {
  std::vector<double> edges;  // n_bins + 1, [eV]
  std::vector<double> counts;
  std::vector<double> errors;  // Poisson, sqrt(counts) before normalization
  std::size_t underflow = 0;
  std::size_t overflow = 0;
};

// Histogram of e_tot. A positive live_time [s] and efficiency turn counts
// into rates: counts / (live_time * efficiency).
Spectrum build_spectrum(std::span<const double> energies, const SpectrumBinning& binning,
                        double live_time = 0.0, double efficiency = 1.0);

}  // namespace qpburst
