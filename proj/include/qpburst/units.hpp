#pragma once

// Conversion factors between the units used at the public API (eV, ns^-1,
// ms, us, GHz, mm) and the SI base units used internally.

#include <numbers>

namespace qpburst::units {

inline constexpr double electron_volt = 1.602176634e-19;  // J
inline constexpr double hbar = 1.054571817e-34;           // J s
inline constexpr double k_boltzmann = 1.380649e-23;       // J / K

inline constexpr double us = 1e-6;
inline constexpr double ms = 1e-3;
inline constexpr double ns = 1e-9;
inline constexpr double um3 = 1e-18;  // m^3

inline constexpr double per_ns_to_per_s(double r) { return r * 1e9; }
inline constexpr double per_s_to_per_ns(double r) { return r * 1e-9; }
inline constexpr double ghz_to_rad_per_s(double f) { return 2.0 * std::numbers::pi * f * 1e9; }

}  // namespace qpburst::units
