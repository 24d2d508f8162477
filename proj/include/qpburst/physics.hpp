#pragma once

// Quasiparticle density and qubit relaxation models.
//
// Units at this interface: energies in eV, recombination constant r in ns^-1,
// linear-loss time tau_ss in ms, times since trigger in s. Everything is
// converted to SI before any arithmetic.

#include <span>
#include <string>
#include <vector>

#include "qpburst/units.hpp"

namespace qpburst {

struct PhysicsConstants {
  double n_cp = 4e24;                // Cooper-pair density [m^-3]
  double delta = 180e-6;             // superconducting gap [eV]
  double volume = 6975e-18;          // island volume [m^3]
  double epsilon = 0.57;             // phonon-to-QP efficiency
  double delta_t = 3e-6;             // effective measurement interval [s]
  double hbar = units::hbar;         // [J s]
  double k_b = units::k_boltzmann;   // [J / K]

  void validate() const;
};

struct ChipPoint {
  double x = 0.0;  // [mm]
  double y = 0.0;  // [mm]
};

struct QubitConfig {
  std::string name;
  double omega_q = 0.0;         // angular frequency [rad/s]
  double fidelity = 1.0;        // separation fidelity F
  double p_ge = 0.0;            // P(read g | prepared e)
  ChipPoint position;           // [mm]
  double baseline_B = 0.0;      // mean pre-trigger error probability
  double baseline_sigma = 0.0;  // spread of the pre-trigger error probability

  double p_eg() const { return 1.0 - fidelity - p_ge; }
  void validate() const;
};

// Data-taking period for the built-in qubit table.
enum class RunPeriod { source_run07, background_run13 };

// The five slow-recovery qubits with their measured frequencies and
// separation fidelities. Positions and baselines are left at zero.
std::vector<QubitConfig> reference_qubits(RunPeriod run);

struct BurstParams {
  double e_dep = 0.0;   // energy deposited in the island [eV]
  double r = 0.005;     // recombination constant [ns^-1]
  double tau_ss = 6.0;  // linear-loss time [ms]
  double gamma = 0.0;   // background relaxation exponent

  void validate() const;
};

struct ResponseCoefficients {
  double alpha = 0.0;  // dimensionless
  double beta = 0.0;   // [eV]
};

ResponseCoefficients alpha_beta(const PhysicsConstants& constants, const QubitConfig& qubit);

// Precomputed form of the relaxation model for repeated evaluation.
class ResponseModel {
 public:
  ResponseModel(const PhysicsConstants& constants, const QubitConfig& qubit);

  const ResponseCoefficients& coefficients() const { return coeff_; }
  double fidelity() const { return fidelity_; }
  double p_ge() const { return p_ge_; }
  double p_eg() const { return p_eg_; }

  // QP-induced survival exponent at t >= 0 (without the gamma term).
  double burst_exponent(double t, const BurstParams& p) const;
  // Relaxation probability; for t < 0 only the gamma term contributes.
  double relaxation(double t, const BurstParams& p) const;
  double observed(double t, const BurstParams& p) const;

 private:
  ResponseCoefficients coeff_;
  double fidelity_;
  double p_ge_;
  double p_eg_;
};

double relaxation_probability(double t, const BurstParams& p, const PhysicsConstants& constants,
                              const QubitConfig& qubit);

double observed_probability(double p_r, const QubitConfig& qubit);

// Inverts the readout folding at zero deposited energy so that the model
// reproduces the qubit's baseline error probability.
double gamma_from_baseline(const QubitConfig& qubit);

// Rothwarf-Taylor rate coefficients, all in s^-1 (x is normalized by n_cp).
struct RTRates {
  double r = 0.0;
  double s_0 = 0.0;
  double g = 0.0;
};

// Reduced parametrization of the same dynamics. tau_ss in s.
struct RTReduced {
  double r_prime = 0.0;
  double tau_ss = 0.0;
  double x_i = 0.0;
  double x_0 = 0.0;
};

struct RTParams {
  double r_prime = 0.0;
  double x_i = 0.0;
  double x_0 = 0.0;
  double s_0 = 0.0;      // [s^-1]
  double g = 0.0;        // [s^-1]
  double c_coeff = 0.0;  // C [s^-1]
  double gamma_0 = 0.0;  // [s^-1]
};

RTRates rt_rates_from_reduced(const RTReduced& reduced);
RTReduced rt_reduced_from_rates(const RTRates& rates, double x_i);
RTParams make_rt_params(const RTReduced& reduced, double c_coeff, double gamma_0);

// C = sqrt(2 omega_q Delta / (pi^2 hbar)) [s^-1].
double decay_constant(const PhysicsConstants& constants, const QubitConfig& qubit);

// x_i = E_dep epsilon / (n_cp V Delta).
double injected_density(double e_dep, const PhysicsConstants& constants);

double decay_rate_analytic(double t, const RTParams& rt, double tau_ss);

struct RKSettings {
  double max_step = 0.0;             // [s]; 0 selects the default
  double validation_tolerance = 1e-4;
};

// Fixed-step RK4 integration of dx/dt = -r x^2 - s_0 x + g, sampled on
// t_grid (seconds, non-decreasing, starting at or after 0). The trajectory
// is recomputed with half the step and compared point by point.
std::vector<double> integrate_rothwarf_taylor(double x_init, const RTRates& rates,
                                              std::span<const double> t_grid,
                                              const RKSettings& settings = {});

// Positive root of r x^2 + s_0 x = g.
double rt_steady_state(const RTRates& rates);

// r = 21.8 / (F tau_0); tau_0 in ns, result in ns^-1.
double kaplan_recombination(double f_supp, double tau_0);

struct SeparationFidelity {
  double fidelity = 0.0;
  double p_ge = 0.0;
  double p_eg = 0.0;
};

// Ground is assigned to the side of the threshold holding mu_g (below when
// mu_g <= mu_e).
SeparationFidelity separation_fidelity(double mu_g, double sigma_g, double mu_e, double sigma_e,
                                       double threshold);

}  // namespace qpburst
