#pragma once

#include <string>
#include <vector>

#include "qpburst/physics.hpp"

namespace qpburst {

struct QubitSite {
  std::string name;
  ChipPoint position;  // [mm]
};

struct ChipGeometry {
  double width = 5.0;   // [mm]
  double height = 5.0;  // [mm]
  std::vector<QubitSite> sites;
  std::vector<ChipPoint> fiducial;  // simple polygon, either orientation

  const QubitSite& site(const std::string& name) const;
  bool contains(const ChipPoint& p) const;
  double fiducial_area_fraction() const;
  void validate() const;
};

// Ten qubits in two rows of five on a 5 x 5 mm chip, with a fiducial region
// inset 0.7 mm from the edges and a notch cut out of the top-right corner.
ChipGeometry default_geometry();

// Names of the slow-recovery qubits used for energy and vertex analysis.
std::vector<std::string> default_analysis_qubits();

double polygon_area(const std::vector<ChipPoint>& polygon);
bool point_in_polygon(const ChipPoint& p, const std::vector<ChipPoint>& polygon);
double distance(const ChipPoint& a, const ChipPoint& b);

}  // namespace qpburst
