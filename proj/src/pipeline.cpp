#include "qpburst/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "qpburst/errors.hpp"
#include "qpburst/version.hpp"

namespace qpburst {

using nlohmann::json;
namespace fs = std::filesystem;

void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(n);
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

namespace {

fs::path out_file(const RunContext& ctx, const std::string& name) {
  return fs::path(ctx.out_dir) / name;
}

void log(const RunContext& ctx, const std::string& msg) {
  if (ctx.log) ctx.log(msg);
}

void prepare(const RunContext& ctx, const std::string& command) {
  ctx.config.validate();
  std::error_code ec;
  fs::create_directories(ctx.out_dir, ec);
  if (ec) throw IoError("cannot create run directory " + ctx.out_dir + ": " + ec.message());
  std::ofstream out(out_file(ctx, command + ".config.json"));
  if (!out) throw IoError("cannot write the frozen config for " + command);
  json frozen = json::parse(to_json(ctx.config));
  frozen["config_hash"] = config_hash(ctx.config);
  frozen["tool_version"] = kToolVersion;
  frozen["command"] = command;
  out << frozen.dump(2) << '\n';
}

void require_file(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p))
    throw DependencyError("missing " + p.string() + "; run `qpburst " + producer + "` first");
}

std::ofstream open_csv(const fs::path& p, const RunContext& ctx, const std::string& columns) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << "# qpburst " << kToolVersion << " config=" << config_hash(ctx.config) << '\n';
  out << columns << '\n';
  out.precision(17);
  return out;
}

json file_header(const RunContext& ctx, const char* kind, std::size_t n) {
  return {{"kind", kind},
          {"schema_version", kEventSchemaVersion},
          {"config_hash", config_hash(ctx.config)},
          {"tool_version", kToolVersion},
          {"n_records", n}};
}

std::uint64_t qubit_index(const RunConfig& c, const std::string& name) {
  for (std::size_t i = 0; i < c.qubits.size(); ++i)
    if (c.qubits[i].name == name) return i;
  throw ConfigError("no qubit named " + name);
}

EventFile load_events(const RunContext& ctx) {
  const auto path = events_path(ctx);
  require_file(path, "simulate");
  auto file = read_events(path);
  std::sort(file.events.begin(), file.events.end(),
            [](const auto& a, const auto& b) { return a.event_id < b.event_id; });
  return file;
}

json estimate_json(const CalibrationEstimate& e) {
  return {{"value", e.value}, {"stat", e.stat}, {"syst", e.syst}, {"total", e.total},
          {"variants", e.variants}};
}

CalibrationEstimate estimate_from_json(const json& j) {
  CalibrationEstimate e;
  e.value = j.at("value").get<double>();
  e.stat = j.at("stat").get<double>();
  e.syst = j.at("syst").get<double>();
  e.total = j.at("total").get<double>();
  e.variants = j.at("variants").get<std::size_t>();
  return e;
}

json summary_json(const ParameterSummary& s) {
  return {{"median", s.median}, {"lo", s.lo},     {"hi", s.hi},
          {"mean", s.mean},     {"sd", s.sd},     {"mcse", s.mcse},
          {"rhat", s.rhat}};
}

ParameterSummary summary_from_json(const std::string& name, const json& j) {
  ParameterSummary s;
  s.name = name;
  s.median = j.at("median").get<double>();
  s.lo = j.at("lo").get<double>();
  s.hi = j.at("hi").get<double>();
  s.mean = j.at("mean").get<double>();
  s.sd = j.at("sd").get<double>();
  s.mcse = j.at("mcse").get<double>();
  s.rhat = j.at("rhat").get<double>();
  return s;
}

json est_json(const EstimateSummary& e) { return {{"median", e.median}, {"lo", e.lo}, {"hi", e.hi}}; }

EstimateSummary est_from_json(const json& j) {
  return {j.at("median").get<double>(), j.at("lo").get<double>(), j.at("hi").get<double>()};
}

std::vector<std::string> read_lines_after_header(const std::string& path, const char* kind) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path + " is empty");
  try {
    const auto h = json::parse(line);
    if (h.at("kind").get<std::string>() != kind) throw SchemaError(path + " is not a " + kind + " file");
    if (h.at("schema_version").get<int>() != kEventSchemaVersion)
      throw SchemaError(path + ": unsupported schema version");
  } catch (const json::exception& e) {
    throw SchemaError(path + ": bad header: " + e.what());
  }
  std::vector<std::string> out;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

}  // namespace

std::string events_path(const RunContext& ctx) {
  return out_file(ctx, ctx.config.io.binary_events ? "events.qpev" : "events.jsonl").string();
}

SimulateSummary cmd_simulate(const RunContext& ctx) {
  prepare(ctx, "simulate");
  const auto& cfg = ctx.config;
  const auto& sim = cfg.simulation;
  const auto eff = resolve_efficiency(cfg);
  const auto seq = cfg.sequence_settings();

  std::vector<SyntheticEvent> truth;
  if (sim.deposit == DepositMode::source) {
    truth = generate_synthetic_source(sim.source, sim.n_events, cfg.geometry, eff, sim.seed);
  } else {
    sim.source.validate();
    for (std::size_t i = 0; i < sim.n_events; ++i) {
      SyntheticEvent ev;
      ev.event_id = i;
      ev.arrival_time = static_cast<double>(i) * sim.source.event_spacing;
      Rng rng(stream_seed(stream_seed(sim.seed, i), 0xD1EC7ULL));
      for (const auto& q : cfg.qubits) {
        const double e = sample_energy(sim.source, rng);
        ev.per_qubit_edep.emplace_back(q.name, e);
        ev.true_energy_total += e;
      }
      truth.push_back(std::move(ev));
    }
  }

  EventFile file;
  file.header = {kEventSchemaVersion, config_hash(cfg), kToolVersion, truth.size()};
  file.events.resize(truth.size());
  parallel_for(truth.size(), ctx.workers, [&](std::size_t i) {
    const auto& t = truth[i];
    EventRecord ev;
    ev.event_id = t.event_id;
    ev.trigger_time = t.arrival_time;
    const auto event_seed = stream_seed(sim.seed, t.event_id);
    for (std::size_t k = 0; k < cfg.qubits.size(); ++k) {
      const auto& q = cfg.qubits[k];
      BurstParams b;
      b.r = sim.r;
      b.tau_ss = sim.tau_ss;
      b.e_dep = t.edep(q.name);
      ev.waveforms.push_back(
          simulate_waveform(q, b, t.arrival_time, stream_seed(event_seed, k + 1), seq, sim.window));
    }
    file.events[i] = std::move(ev);
  });

  if (cfg.io.binary_events) write_events_binary(events_path(ctx), file);
  else write_events_jsonl(events_path(ctx), file);

  std::vector<TruthRecord> records;
  for (const auto& t : truth)
    records.push_back({t.event_id, t.true_position, t.true_energy_total, t.arrival_time, t.per_qubit_edep});
  write_truth_jsonl(out_file(ctx, "truth.jsonl").string(), file.header, records);
  log(ctx, "simulated " + std::to_string(truth.size()) + " events");
  return {truth.size()};
}

CutReport cmd_process(const RunContext& ctx) {
  prepare(ctx, "process");
  const auto& cfg = ctx.config;
  const auto file = load_events(ctx);
  const auto names = cfg.analysis_qubits();
  std::vector<QubitEventFeatures> rows;
  for (const auto& ev : file.events)
    for (const auto& name : names) {
      const auto* w = ev.find(name);
      if (!w) throw SchemaError("event " + std::to_string(ev.event_id) + " has no qubit " + name);
      rows.push_back({ev.event_id, ev.trigger_time, name, compute_features(*w)});
    }
  const auto report = apply_quality_cuts(rows, cfg.analysis.cuts);

  auto csv = open_csv(out_file(ctx, "features.csv"), ctx,
                      "event_id,qubit,trigger_time_s,baseline_B,baseline_sigma,p_max,t_max_ms,"
                      "i_5ms,i_tot,i_tail,n_sat,pass_baseline,pass_stability,pass_tail,pass_nsat,"
                      "pass_quality,pass_analysis");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const auto& f = r.features;
    const auto& c = report.flags[i];
    csv << r.event_id << ',' << r.qubit << ',' << r.trigger_time << ',' << f.baseline_B << ','
        << f.baseline_sigma << ',' << f.p_max << ',' << f.t_max * 1e3 << ',' << f.i_5ms << ','
        << f.i_tot << ',' << f.i_tail << ',' << f.n_sat << ',' << c.baseline << ','
        << c.stability << ',' << c.tail << ',' << c.n_sat << ',' << c.quality() << ','
        << c.analysis << '\n';
  }

  json thresholds = json::object();
  for (const auto& [q, t] : report.thresholds.per_qubit)
    thresholds[q] = {{"baseline_mean", t.baseline_mean},
                     {"baseline_std", t.baseline_std},
                     {"tail_fraction_max", t.tail_fraction_max},
                     {"n_sat_max", t.n_sat_max},
                     {"unstable_events", t.unstable_events}};
  json effs = json::array();
  for (const auto& e : report.efficiencies)
    effs.push_back({{"qubit", e.qubit},
                    {"events", e.events},
                    {"fail_baseline", e.fail_baseline},
                    {"fail_stability", e.fail_stability},
                    {"fail_tail", e.fail_tail},
                    {"fail_n_sat", e.fail_n_sat},
                    {"pass_quality", e.pass_quality},
                    {"pass_analysis", e.pass_analysis},
                    {"pass_total", e.pass_total},
                    {"eps_Q", e.eff_quality()},
                    {"eps_A", e.eff_analysis()},
                    {"eps_tot", e.eff_total()}});
  json doc = {{"kind", "qpburst-cut-report"},
              {"schema_version", kEventSchemaVersion},
              {"config_hash", config_hash(cfg)},
              {"tool_version", kToolVersion},
              {"thresholds", thresholds},
              {"efficiencies", effs}};
  std::ofstream out(out_file(ctx, "cut_report.json"));
  if (!out) throw IoError("cannot write cut_report.json");
  out << doc.dump(2) << '\n';
  log(ctx, "processed " + std::to_string(file.events.size()) + " events");
  return report;
}

CutThresholds read_cut_thresholds(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  CutThresholds out;
  try {
    const auto doc = json::parse(in);
    if (doc.at("kind").get<std::string>() != "qpburst-cut-report")
      throw SchemaError(path + " is not a cut report");
    for (const auto& [q, t] : doc.at("thresholds").items()) {
      QubitCutThresholds c;
      c.baseline_mean = t.at("baseline_mean").get<double>();
      c.baseline_std = t.at("baseline_std").get<double>();
      c.tail_fraction_max = t.at("tail_fraction_max").get<double>();
      c.n_sat_max = t.at("n_sat_max").get<double>();
      c.unstable_events = t.at("unstable_events").get<std::set<std::uint64_t>>();
      out.per_qubit.emplace(q, std::move(c));
    }
  } catch (const json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
  return out;
}

std::vector<QubitCalibration> cmd_calibrate(const RunContext& ctx) {
  prepare(ctx, "calibrate");
  const auto& cfg = ctx.config;
  const auto cut_path = out_file(ctx, "cut_report.json");
  require_file(cut_path, "process");
  const auto thresholds = read_cut_thresholds(cut_path.string());
  const auto file = load_events(ctx);
  const auto names = cfg.analysis_qubits();

  std::vector<QubitCalibration> results(names.size());
  std::vector<std::string> errors(names.size());
  parallel_for(names.size(), ctx.workers, [&](std::size_t k) {
    const auto& name = names[k];
    const auto it = thresholds.per_qubit.find(name);
    if (it == thresholds.per_qubit.end())
      throw DependencyError("cut report has no thresholds for " + name + "; rerun process");
    std::vector<const BinnedWaveform*> pass;
    for (const auto& ev : file.events) {
      const auto* w = ev.find(name);
      if (!w) continue;
      const QubitEventFeatures row{ev.event_id, ev.trigger_time, name, compute_features(*w)};
      if (evaluate_cuts(row, it->second, cfg.analysis.cuts).quality()) pass.push_back(w);
    }
    FitSettings fs = cfg.analysis.calibration_fit;
    fs.sampler.seed = stream_seed(cfg.simulation.seed, 0xCA1B000000ULL + qubit_index(cfg, name));
    try {
      results[k] = calibrate_qubit(cfg.qubit(name), cfg.constants, pass, fs);
    } catch (const FitError& e) {
      results[k].qubit = name;
      errors[k] = e.what();
    } catch (const PreconditionError& e) {
      results[k].qubit = name;
      errors[k] = e.what();
    }
  });

  json qubits = json::object();
  auto csv = open_csv(out_file(ctx, "calibration_variants.csv"), ctx,
                      "qubit,kind,cut,n_pulses,param,median,lo,hi,rhat,converged");
  std::size_t ok = 0;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto& c = results[k];
    if (!errors[k].empty()) {
      qubits[names[k]] = {{"status", "failed"}, {"error", errors[k]}};
      log(ctx, "calibration of " + names[k] + " failed: " + errors[k]);
      continue;
    }
    ++ok;
    json variants = json::array();
    for (const auto& v : c.variants) {
      json params = json::object();
      for (const auto& p : v.params) {
        params[p.name] = summary_json(p);
        csv << c.qubit << ',' << v.kind << ',' << v.cut << ',' << v.n_pulses << ',' << p.name
            << ',' << p.median << ',' << p.lo << ',' << p.hi << ',' << p.rhat << ','
            << v.converged << '\n';
      }
      variants.push_back({{"kind", v.kind},
                          {"cut", v.cut},
                          {"n_pulses", v.n_pulses},
                          {"converged", v.converged},
                          {"params", params}});
    }
    qubits[names[k]] = {{"status", "ok"},
                        {"r_per_ns", estimate_json(c.r)},
                        {"tau_ss_ms", estimate_json(c.tau_ss)},
                        {"tau_ss_he_ms", estimate_json(c.tau_ss_he)},
                        {"variants", variants},
                        {"warnings", c.warnings}};
  }
  json doc = {{"kind", "qpburst-calibration"},
              {"schema_version", kEventSchemaVersion},
              {"config_hash", config_hash(cfg)},
              {"tool_version", kToolVersion},
              {"qubits", qubits}};
  std::ofstream out(out_file(ctx, "calibration.json"));
  if (!out) throw IoError("cannot write calibration.json");
  out << doc.dump(2) << '\n';
  if (ok == 0) throw FitError("calibration failed for every qubit");
  std::vector<QubitCalibration> good;
  for (std::size_t k = 0; k < names.size(); ++k)
    if (errors[k].empty()) good.push_back(results[k]);
  return good;
}

std::vector<QubitCalibration> read_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<QubitCalibration> out;
  try {
    const auto doc = json::parse(in);
    if (doc.at("kind").get<std::string>() != "qpburst-calibration")
      throw SchemaError(path + " is not a calibration file");
    for (const auto& [name, q] : doc.at("qubits").items()) {
      if (q.at("status").get<std::string>() != "ok") continue;
      QubitCalibration c;
      c.qubit = name;
      c.r = estimate_from_json(q.at("r_per_ns"));
      c.tau_ss = estimate_from_json(q.at("tau_ss_ms"));
      c.tau_ss_he = estimate_from_json(q.at("tau_ss_he_ms"));
      for (const auto& v : q.at("variants")) {
        CalibrationVariant cv;
        cv.kind = v.at("kind").get<std::string>();
        cv.cut = v.at("cut").get<int>();
        cv.n_pulses = v.at("n_pulses").get<std::size_t>();
        cv.converged = v.at("converged").get<bool>();
        for (const auto& [pn, pj] : v.at("params").items()) cv.params.push_back(summary_from_json(pn, pj));
        c.variants.push_back(std::move(cv));
      }
      c.warnings = q.at("warnings").get<std::vector<std::string>>();
      out.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
  return out;
}

namespace {

json fit_json(const FitRecord& f) {
  return {{"event_id", f.event_id},
          {"qubit", f.qubit},
          {"quality_pass", f.quality_pass},
          {"analysis_pass", f.analysis_pass},
          {"fitted", f.fitted},
          {"converged", f.converged},
          {"e_dep_ev", est_json(f.e_dep)},
          {"tau_ss_ms", est_json(f.tau_ss)},
          {"r_per_ns", est_json(f.r)},
          {"gamma", f.gamma},
          {"acceptance", f.acceptance},
          {"rhat_max", f.rhat_max},
          {"noise_floor_ev", f.noise_floor_ev},
          {"p_max", f.p_max},
          {"baseline_B", f.baseline_B},
          {"baseline_sigma", f.baseline_sigma},
          {"warnings", f.warnings}};
}

FitRecord fit_from_json(const json& j) {
  FitRecord f;
  f.event_id = j.at("event_id").get<std::uint64_t>();
  f.qubit = j.at("qubit").get<std::string>();
  f.quality_pass = j.at("quality_pass").get<bool>();
  f.analysis_pass = j.at("analysis_pass").get<bool>();
  f.fitted = j.at("fitted").get<bool>();
  f.converged = j.at("converged").get<bool>();
  f.e_dep = est_from_json(j.at("e_dep_ev"));
  f.tau_ss = est_from_json(j.at("tau_ss_ms"));
  f.r = est_from_json(j.at("r_per_ns"));
  f.gamma = j.at("gamma").get<double>();
  f.acceptance = j.at("acceptance").get<double>();
  f.rhat_max = j.at("rhat_max").get<double>();
  f.noise_floor_ev = j.at("noise_floor_ev").get<double>();
  f.p_max = j.at("p_max").get<double>();
  f.baseline_B = j.at("baseline_B").get<double>();
  f.baseline_sigma = j.at("baseline_sigma").get<double>();
  f.warnings = j.at("warnings").get<std::vector<std::string>>();
  return f;
}

EstimateSummary to_estimate(const ParameterSummary& s) { return {s.median, s.lo, s.hi}; }

}  // namespace

std::vector<FitRecord> cmd_fit(const RunContext& ctx) {
  prepare(ctx, "fit");
  const auto& cfg = ctx.config;
  const fs::path cal_path =
      ctx.calibration_path.empty() ? out_file(ctx, "calibration.json") : fs::path(ctx.calibration_path);
  require_file(cal_path, "calibrate");
  const auto cut_path = out_file(ctx, "cut_report.json");
  require_file(cut_path, "process");
  const auto calibrations = read_calibration(cal_path.string());
  const auto thresholds = read_cut_thresholds(cut_path.string());
  const auto file = load_events(ctx);
  const auto names = cfg.analysis_qubits();

  std::map<std::string, const QubitCalibration*> cal_by_qubit;
  for (const auto& c : calibrations) cal_by_qubit[c.qubit] = &c;
  for (const auto& n : names) {
    if (!cal_by_qubit.contains(n)) throw DependencyError("no calibration for qubit " + n);
    if (!thresholds.per_qubit.contains(n)) throw DependencyError("no cut thresholds for qubit " + n);
  }

  const std::size_t n_tasks = file.events.size() * names.size();
  std::vector<FitRecord> records(n_tasks);
  if (cfg.io.chain_dump) fs::create_directories(out_file(ctx, "chains"));
  parallel_for(n_tasks, ctx.workers, [&](std::size_t task) {
    const auto& ev = file.events[task / names.size()];
    const auto& name = names[task % names.size()];
    const auto* w = ev.find(name);
    if (!w) throw SchemaError("event " + std::to_string(ev.event_id) + " has no qubit " + name);
    const auto& qubit = cfg.qubit(name);
    const auto& cal = *cal_by_qubit.at(name);
    FitRecord rec;
    rec.event_id = ev.event_id;
    rec.qubit = name;
    const QubitEventFeatures row{ev.event_id, ev.trigger_time, name, compute_features(*w)};
    const auto flags = evaluate_cuts(row, thresholds.per_qubit.at(name), cfg.analysis.cuts);
    rec.quality_pass = flags.quality();
    rec.analysis_pass = flags.analysis;
    rec.p_max = row.features.p_max;
    rec.baseline_B = row.features.baseline_B;
    rec.baseline_sigma = row.features.baseline_sigma;

    QubitConfig q = qubit;
    q.baseline_B = std::clamp(row.features.baseline_B, q.p_ge, std::nextafter(q.fidelity + q.p_ge, 0.0));
    BurstParams shape;
    shape.r = cal.r.value;
    shape.tau_ss = cal.tau_ss.value;
    shape.gamma = q.baseline_B > q.p_ge ? gamma_from_baseline(q) : 0.0;
    rec.gamma = shape.gamma;
    double sigma_b = row.features.baseline_sigma;
    if (!(sigma_b > 0)) {
      const double b = std::clamp(row.features.baseline_B, 1e-3, 1 - 1e-3);
      sigma_b = std::sqrt(b * (1 - b) / static_cast<double>(cfg.simulation.window.bin_size));
    }
    rec.noise_floor_ev = noise_floor_energy(qubit, cfg.constants, shape,
                                            cfg.analysis.noise_floor_nsigma * sigma_b,
                                            0.5 * w->bin_width);

    if (rec.quality_pass && rec.analysis_pass) {
      FitSettings fs = cfg.analysis.fit;
      fs.sampler.seed = stream_seed(cfg.simulation.seed, (ev.event_id << 8) + qubit_index(cfg, name));
      const GaussianPrior prior{cal.r.value, std::max(cal.r.total, 1e-6 * cal.r.value)};
      const auto post = fit_waveform(*w, qubit, cfg.constants, prior, fs);
      rec.fitted = true;
      rec.converged = post.converged;
      rec.e_dep = to_estimate(post.summary("e_dep"));
      rec.tau_ss = to_estimate(post.summary("tau_ss"));
      rec.r = to_estimate(post.summary("r"));
      rec.acceptance = post.acceptance_rate;
      for (const auto& s : post.summaries) rec.rhat_max = std::max(rec.rhat_max, s.rhat);
      rec.warnings = post.warnings;
      if (cfg.io.chain_dump)
        write_chain_dump(
            (out_file(ctx, "chains") / (std::to_string(ev.event_id) + "_" + name + ".qpchain")).string(),
            post);
    }
    records[task] = std::move(rec);
  });

  std::ofstream out(out_file(ctx, "fits.jsonl"));
  if (!out) throw IoError("cannot write fits.jsonl");
  out << file_header(ctx, "qpburst-fits", records.size()).dump() << '\n';
  for (const auto& r : records) out << fit_json(r).dump() << '\n';

  auto csv = open_csv(out_file(ctx, "fit_scatter.csv"), ctx,
                      "event_id,qubit,e_dep_ev,e_lo_ev,e_hi_ev,rel_sigma_e,tau_ss_ms,tau_lo_ms,"
                      "tau_hi_ms,rhat_max,converged");
  for (const auto& r : records) {
    if (!r.fitted) continue;
    const double rel = 0.5 * (r.e_dep.hi - r.e_dep.lo) / r.e_dep.median;
    csv << r.event_id << ',' << r.qubit << ',' << r.e_dep.median << ',' << r.e_dep.lo << ','
        << r.e_dep.hi << ',' << rel << ',' << r.tau_ss.median << ',' << r.tau_ss.lo << ','
        << r.tau_ss.hi << ',' << r.rhat_max << ',' << r.converged << '\n';
  }
  log(ctx, "fitted " + std::to_string(n_tasks) + " waveforms");
  return records;
}

std::vector<FitRecord> read_fits(const std::string& path) {
  std::vector<FitRecord> out;
  for (const auto& line : read_lines_after_header(path, "qpburst-fits")) {
    try {
      out.push_back(fit_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw SchemaError(path + ": " + e.what());
    }
  }
  return out;
}

namespace {

json points_json(const std::vector<ChipPoint>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back({p.x, p.y});
  return a;
}

std::vector<ChipPoint> points_from_json(const json& a) {
  std::vector<ChipPoint> out;
  for (const auto& p : a) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return out;
}

}  // namespace

ReconstructSummary cmd_reconstruct(const RunContext& ctx) {
  prepare(ctx, "reconstruct");
  const auto& cfg = ctx.config;
  const auto fits_path = out_file(ctx, "fits.jsonl");
  require_file(fits_path, "fit");
  const auto fits = read_fits(fits_path.string());
  ReconstructSummary summary;
  const auto eff = resolve_efficiency(cfg, &summary.efficiency_label);
  const auto names = cfg.analysis_qubits();

  std::map<std::uint64_t, std::vector<const FitRecord*>> by_event;
  for (const auto& f : fits) by_event[f.event_id].push_back(&f);

  struct Job {
    std::uint64_t id;
    std::vector<QubitSignal> signals;
    bool edep_pass;
    std::size_t n_signal;
  };
  std::vector<Job> jobs;
  for (const auto& [id, recs] : by_event) {
    bool quality = true;
    Job job{id, {}, true, 0};
    for (const auto* r : recs) {
      if (std::find(names.begin(), names.end(), r->qubit) == names.end()) continue;
      quality = quality && r->quality_pass;
      if (r->fitted && r->converged && !r->analysis_pass) continue;
      if (r->fitted && r->converged) {
        double sigma = 0.5 * (r->e_dep.hi - r->e_dep.lo);
        job.signals.push_back({r->qubit, r->e_dep.median, std::max(sigma, 1e-9)});
        job.edep_pass = job.edep_pass && r->e_dep.median < cfg.analysis.max_qubit_edep;
        ++job.n_signal;
      } else {
        job.signals.push_back({r->qubit, 0.0, r->noise_floor_ev});
      }
    }
    if (!quality) {
      ++summary.skipped_quality;
      continue;
    }
    if (job.n_signal == 0 || job.signals.size() < 3) {
      ++summary.skipped_no_signal;
      continue;
    }
    jobs.push_back(std::move(job));
  }

  summary.vertices.resize(jobs.size());
  parallel_for(jobs.size(), ctx.workers, [&](std::size_t i) {
    VertexRecord v;
    v.event_id = jobs[i].id;
    v.solution = reconstruct_vertex(jobs[i].signals, cfg.geometry, eff, cfg.analysis.vertex);
    v.edep_pass = jobs[i].edep_pass;
    v.in_spectrum = v.edep_pass && v.solution.fiducial_pass;
    v.n_signal_qubits = jobs[i].n_signal;
    summary.vertices[i] = std::move(v);
  });

  std::vector<double> energies;
  for (const auto& v : summary.vertices)
    if (v.in_spectrum) energies.push_back(v.solution.e_tot);
  summary.spectrum = build_spectrum(energies, cfg.analysis.spectrum, cfg.analysis.live_time,
                                    cfg.analysis.spectrum_efficiency);

  std::ofstream out(out_file(ctx, "vertices.jsonl"));
  if (!out) throw IoError("cannot write vertices.jsonl");
  json header = file_header(ctx, "qpburst-vertices", summary.vertices.size());
  header["efficiency_curve"] = summary.efficiency_label;
  out << header.dump() << '\n';
  for (const auto& v : summary.vertices) {
    const auto& s = v.solution;
    out << json{{"event_id", v.event_id},
                {"x_mm", s.x},
                {"y_mm", s.y},
                {"e_tot_ev", s.e_tot},
                {"chi2_min", s.chi2_min},
                {"fiducial_pass", s.fiducial_pass},
                {"edep_pass", v.edep_pass},
                {"in_spectrum", v.in_spectrum},
                {"n_signal_qubits", v.n_signal_qubits},
                {"region_cells", {s.region_1s, s.region_2s, s.region_3s}},
                {"contour_1s", points_json(s.contour_1s)},
                {"contour_2s", points_json(s.contour_2s)},
                {"contour_3s", points_json(s.contour_3s)},
                {"warnings", s.warnings}}
               .dump()
        << '\n';
  }

  const bool rates = cfg.analysis.live_time > 0;
  auto csv = open_csv(out_file(ctx, "spectrum.csv"), ctx,
                      rates ? "e_lo_ev,e_hi_ev,rate_per_s,error_per_s"
                            : "e_lo_ev,e_hi_ev,counts,error");
  for (std::size_t i = 0; i < summary.spectrum.counts.size(); ++i)
    csv << summary.spectrum.edges[i] << ',' << summary.spectrum.edges[i + 1] << ','
        << summary.spectrum.counts[i] << ',' << summary.spectrum.errors[i] << '\n';
  log(ctx, "reconstructed " + std::to_string(summary.vertices.size()) + " vertices, " +
               std::to_string(energies.size()) + " in the spectrum");
  return summary;
}

std::vector<VertexRecord> read_vertices(const std::string& path) {
  std::vector<VertexRecord> out;
  for (const auto& line : read_lines_after_header(path, "qpburst-vertices")) {
    try {
      const auto j = json::parse(line);
      VertexRecord v;
      v.event_id = j.at("event_id").get<std::uint64_t>();
      v.solution.x = j.at("x_mm").get<double>();
      v.solution.y = j.at("y_mm").get<double>();
      v.solution.e_tot = j.at("e_tot_ev").get<double>();
      v.solution.chi2_min = j.at("chi2_min").get<double>();
      v.solution.fiducial_pass = j.at("fiducial_pass").get<bool>();
      v.edep_pass = j.at("edep_pass").get<bool>();
      v.in_spectrum = j.at("in_spectrum").get<bool>();
      v.n_signal_qubits = j.at("n_signal_qubits").get<std::size_t>();
      const auto cells = j.at("region_cells");
      v.solution.region_1s = cells.at(0).get<std::size_t>();
      v.solution.region_2s = cells.at(1).get<std::size_t>();
      v.solution.region_3s = cells.at(2).get<std::size_t>();
      v.solution.contour_1s = points_from_json(j.at("contour_1s"));
      v.solution.contour_2s = points_from_json(j.at("contour_2s"));
      v.solution.contour_3s = points_from_json(j.at("contour_3s"));
      v.solution.warnings = j.at("warnings").get<std::vector<std::string>>();
      out.push_back(std::move(v));
    } catch (const json::exception& e) {
      throw SchemaError(path + ": " + e.what());
    }
  }
  return out;
}

}  // namespace qpburst
