#pragma once

#include <stdexcept>
#include <cmath>
#include <string>

#include "qpburst/geometry.hpp"
#include "qpburst/physics.hpp"

namespace qpburst::test {

inline QubitConfig reference_qubit(const std::string& name) {
  for (auto q : reference_qubits(RunPeriod::source_run07))
    if (q.name == name) {
      q.position = default_geometry().site(name).position;
      return q;
    }
  throw std::runtime_error("unknown qubit " + name);
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace qpburst::test
