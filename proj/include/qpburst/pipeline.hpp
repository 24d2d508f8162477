#pragma once

#include <functional>
#include <string>
#include <vector>

#include "qpburst/calibrate.hpp"
#include "qpburst/config.hpp"
#include "qpburst/eventio.hpp"
#include "qpburst/recon.hpp"

namespace qpburst {

struct RunContext {
  RunConfig config;
  std::string out_dir;           // run directory; every command reads and writes here
  unsigned workers = 1;
  std::string calibration_path;  // empty: <out_dir>/calibration.json
  std::function<void(const std::string&)> log;
};

// Runs fn(0..n-1) on `workers` threads; the first exception is rethrown.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn);

std::string events_path(const RunContext& ctx);

struct SimulateSummary {
  std::size_t n_events = 0;
};
SimulateSummary cmd_simulate(const RunContext& ctx);

CutReport cmd_process(const RunContext& ctx);

std::vector<QubitCalibration> cmd_calibrate(const RunContext& ctx);

struct EstimateSummary {
  double median = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct FitRecord {
  std::uint64_t event_id = 0;
  std::string qubit;
  bool quality_pass = false;
  bool analysis_pass = false;
  bool fitted = false;
  bool converged = false;
  EstimateSummary e_dep;   // [eV]
  EstimateSummary tau_ss;  // [ms]
  EstimateSummary r;       // [ns^-1]
  double gamma = 0.0;
  double acceptance = 0.0;
  double rhat_max = 0.0;
  double noise_floor_ev = 0.0;
  double p_max = 0.0;
  double baseline_B = 0.0;
  double baseline_sigma = 0.0;
  std::vector<std::string> warnings;
};

std::vector<FitRecord> cmd_fit(const RunContext& ctx);

struct VertexRecord {
  std::uint64_t event_id = 0;
  VertexSolution solution;
  bool edep_pass = false;
  bool in_spectrum = false;
  std::size_t n_signal_qubits = 0;
};

struct ReconstructSummary {
  std::vector<VertexRecord> vertices;
  Spectrum spectrum;
  std::size_t skipped_quality = 0;
  std::size_t skipped_no_signal = 0;
  std::string efficiency_label;
};

ReconstructSummary cmd_reconstruct(const RunContext& ctx);

CutThresholds read_cut_thresholds(const std::string& path);
std::vector<QubitCalibration> read_calibration(const std::string& path);
std::vector<FitRecord> read_fits(const std::string& path);
std::vector<VertexRecord> read_vertices(const std::string& path);

}  // namespace qpburst
