#pragma once

#include <span>
#include <string>
#include <vector>

namespace qpburst {

// Phonon collection efficiency versus distance R [mm] from the impact:
//   eff(R) = a exp(-b R) + c exp(-d R) + h
// The fast component is labelled (a, b); fits keep b >= d.
struct EfficiencyModel {
  double a = 0.0;
  double b = 0.0;  // [mm^-1]
  double c = 0.0;
  double d = 0.0;  // [mm^-1]
  double h = 0.0;

  double operator()(double r_mm) const;
  void validate() const;
};

// Curve used when no efficiency table is configured. Obtained by fitting the
// placeholder reference table shipped in data/efficiency_reference.csv.
EfficiencyModel default_efficiency_model();
inline constexpr const char* kDefaultEfficiencyLabel = "placeholder-pa0.1-v1";

double expected_signal(double r_mm, double e_tot, const EfficiencyModel& model);

struct EfficiencyPoint {
  double r_mm = 0.0;
  double efficiency = 0.0;
};

struct EfficiencyFit {
  EfficiencyModel model;
  double residual_rms = 0.0;   // RMS of ln(data) - ln(model)
  int starts_converged = 0;
  int starts_total = 0;
  int components = 2;          // exponential components kept (0, 1 or 2)
};

EfficiencyFit fit_efficiency_curve(std::span<const EfficiencyPoint> table);

// Two-column CSV (R_mm, efficiency) with a header line; '#' lines ignored.
std::vector<EfficiencyPoint> read_efficiency_csv(const std::string& path);

}  // namespace qpburst
