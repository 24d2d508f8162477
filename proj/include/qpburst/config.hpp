#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qpburst/fit.hpp"
#include "qpburst/geometry.hpp"
#include "qpburst/readout.hpp"
#include "qpburst/recon.hpp"
#include "qpburst/waveform.hpp"

namespace qpburst {

// How per-qubit deposits are generated: from impacts on the chip through the
// efficiency model, or drawn directly from the source spectrum per qubit.
enum class DepositMode { source, direct };

struct SimulationConfig {
  std::uint64_t seed = 1;
  std::size_t n_events = 100;
  SequenceSettings sequence;  // its constants are overwritten by RunConfig::constants
  WindowSettings window;
  DepositMode deposit = DepositMode::source;
  SourceSpec source;
  double r = 0.005;    // burst shape [ns^-1]
  double tau_ss = 6.0; // [ms]
};

struct AnalysisConfig {
  std::vector<std::string> qubits;  // empty: every configured qubit
  CutConfig cuts;
  FitSettings fit;
  FitSettings calibration_fit;
  VertexSettings vertex;
  SpectrumBinning spectrum;
  double max_qubit_edep = 500.0;   // [eV]
  double live_time = 0.0;          // [s]; 0 leaves the spectrum in counts
  double spectrum_efficiency = 1.0;
  std::string efficiency_table;    // empty: built-in default curve
  bool sigma_includes_systematics = false;
  double noise_floor_nsigma = 1.0;
};

struct IoConfig {
  std::string out_dir = "run";
  bool binary_events = false;
  bool chain_dump = false;
};

struct RunConfig {
  PhysicsConstants constants;
  std::vector<QubitConfig> qubits;
  ChipGeometry geometry;
  SimulationConfig simulation;
  AnalysisConfig analysis;
  IoConfig io;

  void validate() const;
  std::vector<std::string> analysis_qubits() const;
  const QubitConfig& qubit(const std::string& name) const;
  SequenceSettings sequence_settings() const;
};

// Five slow-recovery qubits on the default layout with the built-in constants.
RunConfig default_config();

// Keys absent from the document keep their defaults; unknown keys are errors.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

// Fully resolved configuration as pretty-printed JSON with sorted keys.
std::string to_json(const RunConfig& config);
// 16 hex digits of FNV-1a-64 over the compact canonical JSON.
std::string config_hash(const RunConfig& config);

// Efficiency curve selected by the configuration and a label naming it.
EfficiencyModel resolve_efficiency(const RunConfig& config, std::string* label = nullptr);

}  // namespace qpburst
