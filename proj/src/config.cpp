#include "qpburst/config.hpp"

#include <fstream>
#include <numbers>

#include "json.hpp"
#include <set>
#include <sstream>

#include "qpburst/errors.hpp"

namespace qpburst {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object and rejects anything it was not asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  void scaled(const std::string& key, double& out, double factor) {
    double v = out / factor;
    get(key, v);
    out = v * factor;
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.contains(it.key())) throw ConfigError("unknown key " + path_ + "." + it.key());
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* spectrum_name(SpectrumKind k) {
  switch (k) {
    case SpectrumKind::monoenergetic: return "monoenergetic";
    case SpectrumKind::flat: return "flat";
    case SpectrumKind::log_flat: return "log_flat";
    case SpectrumKind::table: return "table";
  }
  return "monoenergetic";
}

SpectrumKind spectrum_kind(const std::string& s) {
  if (s == "monoenergetic") return SpectrumKind::monoenergetic;
  if (s == "flat") return SpectrumKind::flat;
  if (s == "log_flat") return SpectrumKind::log_flat;
  if (s == "table") return SpectrumKind::table;
  throw ConfigError("unknown source kind " + s);
}

void read_fit(Section s, FitSettings& f) {
  s.get("chains", f.sampler.n_chains);
  s.get("steps", f.sampler.n_steps);
  s.get("burn_in", f.sampler.burn_in);
  s.get("adapt", f.sampler.adapt);
  s.get("rhat_threshold", f.sampler.rhat_threshold);
  s.get("grid_points", f.grid_points);
  s.get("sub_samples", f.sub_samples);
  s.finish();
}

json write_fit(const FitSettings& f) {
  return {{"chains", f.sampler.n_chains},         {"steps", f.sampler.n_steps},
          {"burn_in", f.sampler.burn_in},         {"adapt", f.sampler.adapt},
          {"rhat_threshold", f.sampler.rhat_threshold}, {"grid_points", f.grid_points},
          {"sub_samples", f.sub_samples}};
}

}  // namespace

void RunConfig::validate() const {
  constants.validate();
  geometry.validate();
  if (qubits.empty()) throw ConfigError("at least one qubit must be configured");
  std::set<std::string> names;
  for (const auto& q : qubits) {
    q.validate();
    if (!names.insert(q.name).second) throw ConfigError("duplicate qubit " + q.name);
    geometry.site(q.name);
    if (q.position.x < 0 || q.position.y < 0 || q.position.x > geometry.width ||
        q.position.y > geometry.height)
      throw ConfigError("qubit " + q.name + " lies outside the chip");
  }
  for (const auto& n : analysis.qubits)
    if (!names.contains(n)) throw ConfigError("analysis qubit " + n + " is not configured");
  simulation.sequence.validate();
  simulation.source.validate();
  if (simulation.window.pre_trigger_bins < 2) throw ConfigError("need >= 2 pre-trigger bins");
  if (simulation.window.post_trigger_bins < 1 || simulation.window.bin_size < 1)
    throw ConfigError("window needs post-trigger bins and a bin size");
  if (!(simulation.r > 0 && simulation.tau_ss > 0)) throw ConfigError("burst shape must be positive");
  analysis.cuts.validate();
  analysis.fit.sampler.validate();
  analysis.calibration_fit.sampler.validate();
  analysis.spectrum.validate();
  if (!(analysis.vertex.grid_pitch > 0)) throw ConfigError("vertex grid pitch must be positive");
  if (!(analysis.max_qubit_edep > 0)) throw ConfigError("max_qubit_edep must be positive");
  if (!(analysis.noise_floor_nsigma > 0)) throw ConfigError("noise_floor_nsigma must be positive");
  if (analysis.live_time < 0 || !(analysis.spectrum_efficiency > 0))
    throw ConfigError("spectrum normalization must be positive");
}

std::vector<std::string> RunConfig::analysis_qubits() const {
  if (!analysis.qubits.empty()) return analysis.qubits;
  std::vector<std::string> out;
  for (const auto& q : qubits) out.push_back(q.name);
  return out;
}

const QubitConfig& RunConfig::qubit(const std::string& name) const {
  for (const auto& q : qubits)
    if (q.name == name) return q;
  throw ConfigError("no qubit named " + name);
}

SequenceSettings RunConfig::sequence_settings() const {
  SequenceSettings s = simulation.sequence;
  s.constants = constants;
  return s;
}

RunConfig default_config() {
  RunConfig c;
  c.geometry = default_geometry();
  c.qubits = reference_qubits(RunPeriod::source_run07);
  for (auto& q : c.qubits) q.position = c.geometry.site(q.name).position;
  c.simulation.source.kind = SpectrumKind::flat;
  c.simulation.source.e_min = 5e4;
  c.simulation.source.e_max = 4e5;
  c.analysis.fit.sampler.n_steps = 20000;
  c.analysis.fit.sampler.burn_in = 5000;
  c.analysis.calibration_fit = c.analysis.fit;
  return c;
}

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c = default_config();
  Section top(root, "config");

  if (const json* j = top.child("constants")) {
    Section s(*j, "constants");
    s.get("n_cp", c.constants.n_cp);
    s.get("delta_ev", c.constants.delta);
    s.scaled("volume_um3", c.constants.volume, units::um3);
    s.get("epsilon", c.constants.epsilon);
    s.scaled("delta_t_us", c.constants.delta_t, units::us);
    s.finish();
  }

  if (const json* j = top.child("geometry")) {
    Section s(*j, "geometry");
    s.get("width_mm", c.geometry.width);
    s.get("height_mm", c.geometry.height);
    if (const json* sites = s.child("sites")) {
      if (!sites->is_array()) throw ConfigError("geometry.sites must be an array");
      c.geometry.sites.clear();
      for (const auto& item : *sites) {
        Section q(item, "geometry.sites[]");
        QubitSite site;
        q.get("name", site.name);
        q.get("x_mm", site.position.x);
        q.get("y_mm", site.position.y);
        q.finish();
        c.geometry.sites.push_back(site);
      }
    }
    if (const json* poly = s.child("fiducial")) {
      if (!poly->is_array()) throw ConfigError("geometry.fiducial must be an array");
      c.geometry.fiducial.clear();
      for (const auto& v : *poly) {
        if (!v.is_array() || v.size() != 2) throw ConfigError("fiducial vertices are [x, y] pairs");
        c.geometry.fiducial.push_back({v[0].get<double>(), v[1].get<double>()});
      }
    }
    s.finish();
  }

  if (const json* j = top.child("qubits")) {
    if (!j->is_array()) throw ConfigError("qubits must be an array");
    c.qubits.clear();
    for (const auto& item : *j) {
      Section s(item, "qubits[]");
      QubitConfig q;
      double f_ghz = 0.0;
      s.get("name", q.name);
      s.get("frequency_ghz", f_ghz);
      q.omega_q = units::ghz_to_rad_per_s(f_ghz);
      s.get("fidelity", q.fidelity);
      s.get("p_ge", q.p_ge);
      s.get("baseline_B", q.baseline_B);
      s.get("baseline_sigma", q.baseline_sigma);
      bool explicit_position = false;
      if (item.contains("x_mm") || item.contains("y_mm")) explicit_position = true;
      s.get("x_mm", q.position.x);
      s.get("y_mm", q.position.y);
      s.finish();
      if (!explicit_position) q.position = c.geometry.site(q.name).position;
      c.qubits.push_back(q);
    }
  } else {
    for (auto& q : c.qubits) q.position = c.geometry.site(q.name).position;
  }

  if (const json* j = top.child("simulation")) {
    Section s(*j, "simulation");
    auto& sim = c.simulation;
    s.get("seed", sim.seed);
    s.get("n_events", sim.n_events);
    s.scaled("cycle_period_us", sim.sequence.cycle_period, units::us);
    s.scaled("dt_wait_us", sim.sequence.dt_wait, units::us);
    s.scaled("dt_tot_us", sim.sequence.dt_tot, units::us);
    s.scaled("t1_us", sim.sequence.t1, units::us);
    std::string conv = sim.sequence.convention == MarkovConvention::as_printed ? "as_printed" : "survival";
    s.get("markov_convention", conv);
    if (conv == "as_printed") sim.sequence.convention = MarkovConvention::as_printed;
    else if (conv == "survival") sim.sequence.convention = MarkovConvention::survival;
    else throw ConfigError("simulation.markov_convention must be as_printed or survival");
    s.get("pre_trigger_bins", sim.window.pre_trigger_bins);
    s.get("post_trigger_bins", sim.window.post_trigger_bins);
    s.get("bin_size", sim.window.bin_size);
    s.get("jitter", sim.window.jitter);
    std::string deposit = sim.deposit == DepositMode::source ? "source" : "direct";
    s.get("deposit", deposit);
    if (deposit == "source") sim.deposit = DepositMode::source;
    else if (deposit == "direct") sim.deposit = DepositMode::direct;
    else throw ConfigError("simulation.deposit must be source or direct");
    s.get("r_per_ns", sim.r);
    s.get("tau_ss_ms", sim.tau_ss);
    if (const json* src = s.child("source")) {
      Section ss(*src, "simulation.source");
      std::string kind = spectrum_name(sim.source.kind);
      ss.get("kind", kind);
      sim.source.kind = spectrum_kind(kind);
      ss.get("energy_ev", sim.source.energy);
      ss.get("e_min_ev", sim.source.e_min);
      ss.get("e_max_ev", sim.source.e_max);
      ss.get("cdf", sim.source.cdf);
      ss.get("event_spacing_s", sim.source.event_spacing);
      ss.get("poisson_timing", sim.source.poisson_timing);
      ss.finish();
    }
    s.finish();
  }

  if (const json* j = top.child("analysis")) {
    Section s(*j, "analysis");
    auto& an = c.analysis;
    s.get("qubits", an.qubits);
    if (const json* cuts = s.child("cuts")) {
      Section cs(*cuts, "analysis.cuts");
      cs.get("baseline_nsigma", an.cuts.baseline_nsigma);
      cs.get("stability_cut", an.cuts.stability_cut);
      cs.get("jump_half_window", an.cuts.jump_half_window);
      cs.get("jump_threshold", an.cuts.jump_threshold);
      cs.get("tail_quantile", an.cuts.tail_quantile);
      cs.get("nsat_quantile", an.cuts.nsat_quantile);
      cs.get("signal_nsigma", an.cuts.signal_nsigma);
      cs.finish();
    }
    if (const json* f = s.child("mcmc")) read_fit(Section(*f, "analysis.mcmc"), an.fit);
    if (const json* f = s.child("calibration_mcmc"))
      read_fit(Section(*f, "analysis.calibration_mcmc"), an.calibration_fit);
    if (const json* v = s.child("vertex")) {
      Section vs(*v, "analysis.vertex");
      vs.get("grid_pitch_mm", an.vertex.grid_pitch);
      vs.get("refine", an.vertex.refine);
      vs.finish();
    }
    if (const json* sp = s.child("spectrum")) {
      Section ss(*sp, "analysis.spectrum");
      ss.get("e_min_ev", an.spectrum.e_min);
      ss.get("e_max_ev", an.spectrum.e_max);
      ss.get("n_bins", an.spectrum.n_bins);
      ss.get("live_time_s", an.live_time);
      ss.get("efficiency", an.spectrum_efficiency);
      ss.finish();
    }
    s.get("max_qubit_edep_ev", an.max_qubit_edep);
    s.get("efficiency_table", an.efficiency_table);
    s.get("sigma_includes_systematics", an.sigma_includes_systematics);
    s.get("noise_floor_nsigma", an.noise_floor_nsigma);
    s.finish();
  }

  if (const json* j = top.child("io")) {
    Section s(*j, "io");
    s.get("out_dir", c.io.out_dir);
    s.get("binary_events", c.io.binary_events);
    s.get("chain_dump", c.io.chain_dump);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

namespace {

json to_json_value(const RunConfig& c) {
  json j;
  j["constants"] = {{"n_cp", c.constants.n_cp},
                    {"delta_ev", c.constants.delta},
                    {"volume_um3", c.constants.volume / units::um3},
                    {"epsilon", c.constants.epsilon},
                    {"delta_t_us", c.constants.delta_t / units::us}};
  json sites = json::array();
  for (const auto& s : c.geometry.sites)
    sites.push_back({{"name", s.name}, {"x_mm", s.position.x}, {"y_mm", s.position.y}});
  json poly = json::array();
  for (const auto& p : c.geometry.fiducial) poly.push_back({p.x, p.y});
  j["geometry"] = {{"width_mm", c.geometry.width},
                   {"height_mm", c.geometry.height},
                   {"sites", sites},
                   {"fiducial", poly}};
  json qubits = json::array();
  for (const auto& q : c.qubits)
    qubits.push_back({{"name", q.name},
                      {"frequency_ghz", q.omega_q / (2.0 * std::numbers::pi * 1e9)},
                      {"fidelity", q.fidelity},
                      {"p_ge", q.p_ge},
                      {"baseline_B", q.baseline_B},
                      {"baseline_sigma", q.baseline_sigma},
                      {"x_mm", q.position.x},
                      {"y_mm", q.position.y}});
  j["qubits"] = qubits;
  const auto& sim = c.simulation;
  j["simulation"] = {
      {"seed", sim.seed},
      {"n_events", sim.n_events},
      {"cycle_period_us", sim.sequence.cycle_period / units::us},
      {"dt_wait_us", sim.sequence.dt_wait / units::us},
      {"dt_tot_us", sim.sequence.dt_tot / units::us},
      {"t1_us", sim.sequence.t1 / units::us},
      {"markov_convention",
       sim.sequence.convention == MarkovConvention::as_printed ? "as_printed" : "survival"},
      {"pre_trigger_bins", sim.window.pre_trigger_bins},
      {"post_trigger_bins", sim.window.post_trigger_bins},
      {"bin_size", sim.window.bin_size},
      {"jitter", sim.window.jitter},
      {"deposit", sim.deposit == DepositMode::source ? "source" : "direct"},
      {"r_per_ns", sim.r},
      {"tau_ss_ms", sim.tau_ss},
      {"source",
       {{"kind", spectrum_name(sim.source.kind)},
        {"energy_ev", sim.source.energy},
        {"e_min_ev", sim.source.e_min},
        {"e_max_ev", sim.source.e_max},
        {"cdf", sim.source.cdf},
        {"event_spacing_s", sim.source.event_spacing},
        {"poisson_timing", sim.source.poisson_timing}}}};
  const auto& an = c.analysis;
  j["analysis"] = {
      {"qubits", an.qubits},
      {"cuts",
       {{"baseline_nsigma", an.cuts.baseline_nsigma},
        {"stability_cut", an.cuts.stability_cut},
        {"jump_half_window", an.cuts.jump_half_window},
        {"jump_threshold", an.cuts.jump_threshold},
        {"tail_quantile", an.cuts.tail_quantile},
        {"nsat_quantile", an.cuts.nsat_quantile},
        {"signal_nsigma", an.cuts.signal_nsigma}}},
      {"mcmc", write_fit(an.fit)},
      {"calibration_mcmc", write_fit(an.calibration_fit)},
      {"vertex", {{"grid_pitch_mm", an.vertex.grid_pitch}, {"refine", an.vertex.refine}}},
      {"spectrum",
       {{"e_min_ev", an.spectrum.e_min},
        {"e_max_ev", an.spectrum.e_max},
        {"n_bins", an.spectrum.n_bins},
        {"live_time_s", an.live_time},
        {"efficiency", an.spectrum_efficiency}}},
      {"max_qubit_edep_ev", an.max_qubit_edep},
      {"efficiency_table", an.efficiency_table},
      {"sigma_includes_systematics", an.sigma_includes_systematics},
      {"noise_floor_nsigma", an.noise_floor_nsigma}};
  j["io"] = {{"out_dir", c.io.out_dir},
             {"binary_events", c.io.binary_events},
             {"chain_dump", c.io.chain_dump}};
  return j;
}

}  // namespace

std::string to_json(const RunConfig& config) { return to_json_value(config).dump(2) + "\n"; }

std::string config_hash(const RunConfig& config) {
  json j = to_json_value(config);
  j.erase("io");  // output locations do not change results
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

EfficiencyModel resolve_efficiency(const RunConfig& config, std::string* label) {
  if (config.analysis.efficiency_table.empty()) {
    if (label) *label = kDefaultEfficiencyLabel;
    return default_efficiency_model();
  }
  const auto table = read_efficiency_csv(config.analysis.efficiency_table);
  const auto fit = fit_efficiency_curve(table);
  if (label) *label = "table:" + config.analysis.efficiency_table;
  return fit.model;
}

}  // namespace qpburst
