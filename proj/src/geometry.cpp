#include "qpburst/geometry.hpp"

#include <cmath>

#include "qpburst/errors.hpp"

namespace qpburst {

const QubitSite& ChipGeometry::site(const std::string& name) const {
  for (const auto& s : sites)
    if (s.name == name) return s;
  throw ConfigError("geometry has no qubit named " + name);
}

bool ChipGeometry::contains(const ChipPoint& p) const {
  return p.x >= 0 && p.x <= width && p.y >= 0 && p.y <= height;
}

double ChipGeometry::fiducial_area_fraction() const {
  return polygon_area(fiducial) / (width * height);
}

void ChipGeometry::validate() const {
  if (!(width > 0 && height > 0)) throw ConfigError("chip extents must be positive");
  for (const auto& s : sites)
    if (!contains(s.position)) throw ConfigError("qubit " + s.name + " lies outside the chip");
  for (std::size_t i = 0; i < sites.size(); ++i)
    for (std::size_t j = i + 1; j < sites.size(); ++j)
      if (sites[i].name == sites[j].name) throw ConfigError("duplicate qubit " + sites[i].name);
  if (!fiducial.empty() && fiducial.size() < 3)
    throw ConfigError("fiducial polygon needs at least three vertices");
  for (const auto& p : fiducial)
    if (!contains(p)) throw ConfigError("fiducial polygon leaves the chip");
}

ChipGeometry default_geometry() {
  ChipGeometry g;
  const double xs[] = {0.9, 1.7, 2.5, 3.3, 4.1};
  for (int row = 0; row < 2; ++row)
    for (int col = 0; col < 5; ++col)
      g.sites.push_back({"Q" + std::to_string(row * 5 + col + 1), {xs[col], row == 0 ? 1.25 : 3.75}});
  g.fiducial = {{0.7, 0.7}, {4.3, 0.7}, {4.3, 3.1}, {3.1, 3.1}, {3.1, 4.3}, {0.7, 4.3}};
  return g;
}

std::vector<std::string> default_analysis_qubits() { return {"Q1", "Q2", "Q4", "Q5", "Q8"}; }

double polygon_area(const std::vector<ChipPoint>& poly) {
  double twice = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return std::abs(twice) / 2.0;
}

// Even-odd ray casting.
bool point_in_polygon(const ChipPoint& p, const std::vector<ChipPoint>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

double distance(const ChipPoint& a, const ChipPoint& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace qpburst
