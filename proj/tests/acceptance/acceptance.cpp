// Acceptance suite: one PASS/FAIL line per criterion on stdout.
#include <algorithm>
#include <atomic>
#include <boost/math/distributions/chi_squared.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "qpburst/config.hpp"
#include "qpburst/efficiency.hpp"
#include "qpburst/errors.hpp"
#include "qpburst/eventio.hpp"
#include "qpburst/fit.hpp"
#include "qpburst/geometry.hpp"
#include "qpburst/physics.hpp"
#include "qpburst/pipeline.hpp"
#include "qpburst/readout.hpp"
#include "qpburst/recon.hpp"
#include "qpburst/waveform.hpp"

using namespace qpburst;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void note(const std::string& s) {
  std::fprintf(stderr, "[acceptance] %s\n", s.c_str());
  std::fflush(stderr);
}

unsigned workers() { return std::max(1u, std::thread::hardware_concurrency()); }

QubitConfig qubit_at_site(const std::string& reference, const ChipPoint& where, const std::string& name) {
  for (auto q : reference_qubits(RunPeriod::source_run07))
    if (q.name == reference) {
      q.name = name;
      q.position = where;
      return q;
    }
  throw ConfigError("unknown reference qubit " + reference);
}

QubitConfig reference_qubit(const std::string& name) {
  return qubit_at_site(name, default_geometry().site(name).position, name);
}

double median_of(std::vector<double> v) { return quantile(std::move(v), 0.5); }

double stddev(const std::vector<double>& v) {
  double mu = 0;
  for (double x : v) mu += x;
  mu /= v.size();
  double s = 0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / (v.size() - 1));
}

FitSettings mock_fit_settings(std::uint64_t seed) {
  FitSettings f;
  f.sampler.n_steps = 6000;
  f.sampler.burn_in = 2000;
  f.sampler.seed = seed;
  return f;
}

// 1. Analytic decay rate against RK4 integration of the rate equation.
Verdict criterion_1() {
  const auto t0 = Clock::now();
  const PhysicsConstants c;
  const auto q = reference_qubit("Q1");
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> grid;
  for (int i = 0; i < 100; ++i) grid.push_back(0.03 * i / 99.0);
  double worst = 0;
  for (int n = 0; n < 50; ++n) {
    const double x_i = std::pow(10, -8 + 4 * u(rng));
    const RTReduced red{0.95 * u(rng), (1 + 15 * u(rng)) * 1e-3, x_i, 1e-2 * x_i * u(rng)};
    const auto rt = make_rt_params(red, decay_constant(c, q), 500 * u(rng));
    const auto x = integrate_rothwarf_taylor(red.x_i + red.x_0, rt_rates_from_reduced(red), grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double ode = rt.c_coeff * (x[i] - red.x_0) + rt.gamma_0;
      const double ana = decay_rate_analytic(grid[i], rt, red.tau_ss);
      worst = std::max(worst, std::abs(ode - ana) / std::abs(ana));
    }
  }
  const double dt = seconds_since(t0);
  return {worst < 1e-6 && dt < 5.0,
          fmt("analytic vs RK4 over 50 parameter sets x 100 times: max rel diff %.2e (< 1e-6), %.2f s (< 5 s)",
              worst, dt)};
}

struct MockFit {
  double e_true = 0;
  double e_med = 0;
  double e_hw = 0;
  double tau_med = 0;
  double tau_hw = 0;
  bool converged = false;
  double rhat_max = 0;
};

struct MockStudy {
  std::map<double, std::vector<MockFit>> by_energy;
  double seconds = 0;
};

std::optional<MockStudy> mock_cache;

const MockStudy& mock_study() {
  if (mock_cache) return *mock_cache;
  const auto t0 = Clock::now();
  const std::vector<double> energies{50, 100, 500, 5e3, 5e4};
  const int per_energy = 1000;
  const auto q = reference_qubit("Q1");
  std::vector<MockFit> all(energies.size() * per_energy);
  std::atomic<std::size_t> done{0};
  parallel_for(all.size(), workers(), [&](std::size_t i) {
    const double e = energies[i / per_energy];
    const auto w = simulate_waveform(q, BurstParams{e, 0.005, 6.0, 0.0}, 0.0, stream_seed(0xF154, i));
    const auto r = fit_waveform(w, q, PhysicsConstants{}, GaussianPrior{0.005, 0.00025},
                                mock_fit_settings(stream_seed(0xF155, i)));
    MockFit m;
    m.e_true = e;
    m.e_med = r.summary("e_dep").median;
    m.e_hw = r.summary("e_dep").half_width();
    m.tau_med = r.summary("tau_ss").median;
    m.tau_hw = r.summary("tau_ss").half_width();
    m.converged = r.converged;
    for (const auto& s : r.summaries) m.rhat_max = std::max(m.rhat_max, s.rhat);
    all[i] = m;
    const auto k = ++done;
    if (k % 500 == 0) note(fmt("mock fits %zu / %zu", k, all.size()));
  });
  MockStudy s;
  for (const auto& m : all) s.by_energy[m.e_true].push_back(m);
  s.seconds = seconds_since(t0);
  mock_cache = s;
  return *mock_cache;
}

double relative_tau_width(const std::vector<MockFit>& fits) {
  std::vector<double> v;
  for (const auto& f : fits) v.push_back(f.tau_hw / f.tau_med);
  return median_of(v);
}

// 2. Bias and tau sensitivity of per-waveform fits across deposited energies.
Verdict criterion_2() {
  const auto& s = mock_study();
  std::ostringstream d;
  bool a = true;
  for (double e : {50.0, 100.0, 500.0}) {
    std::vector<double> med;
    for (const auto& f : s.by_energy.at(e)) med.push_back(f.e_med);
    const double m = median_of(med);
    a = a && std::abs(m / e - 1) <= 0.15;
    d << fmt("median E(%g eV) = %.1f (%+.1f%%); ", e, m, 100 * (m / e - 1));
  }
  std::vector<double> he;
  for (const auto& f : s.by_energy.at(5e4)) he.push_back(f.e_med);
  const double he_med = median_of(he);
  const double se = 1.2533 * stddev(he) / std::sqrt(double(he.size()));
  const bool b = std::abs(he_med - 5e4) > 3 * se;
  d << fmt("median E(5e4 eV) = %.4g, bias %.1f SE; ", he_med, std::abs(he_med - 5e4) / se);
  const double w50 = relative_tau_width(s.by_energy.at(50));
  bool c = w50 > 0.5;
  d << fmt("tau 68%% half-width/median: %.1f%% at 50 eV (> 50%%)", 100 * w50);
  for (double e : {500.0, 5e3, 5e4}) {
    const double w = relative_tau_width(s.by_energy.at(e));
    c = c && w < 0.15;
    d << fmt(", %.1f%% at %g eV", 100 * w, e);
  }
  d << " (< 15%)";
  const bool fast = s.seconds < 1800;
  d << fmt("; a=%s b=%s c=%s; %.0f s for 5000 fits", a ? "ok" : "FAIL", b ? "ok" : "FAIL",
           c ? "ok" : "FAIL", s.seconds);
  return {a && b && c && fast, d.str()};
}

// 3. Per-waveform energy resolution at 100 eV.
Verdict criterion_3() {
  const auto& s = mock_study();
  std::vector<double> rel, med;
  for (const auto& f : s.by_energy.at(100)) {
    rel.push_back(f.e_hw / f.e_med);
    med.push_back(f.e_med);
  }
  const double res = median_of(rel);
  const double spread = 0.5 * (quantile(med, 0.8413447460685429) - quantile(med, 0.15865525393145707)) /
                        median_of(med);
  return {res >= 0.05 && res <= 0.20,
          fmt("sigma_E/E at 100 eV: posterior %.1f%% (in [5%%, 20%%]); trial-to-trial spread %.1f%%",
              100 * res, 100 * spread)};
}

// 4. Empirical occupancy of the readout Markov chain.
Verdict criterion_4() {
  const auto t0 = Clock::now();
  std::mt19937_64 draw(404);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  double worst = 0;
  const int n = 1000000;
  for (int k = 0; k < 20; ++k) {
    MarkovParams m;
    m.p_wait = u(draw);
    m.p_tot = u(draw);
    const auto p = transition_matrix(m);
    const auto pi = stationary_distribution(m);
    Rng rng(stream_seed(404, k));
    int state = 1;
    long excited = 0;
    for (int i = 0; i < n; ++i) {
      state = uniform01(rng) < p[state][1] ? 1 : 0;
      excited += state == 0;
    }
    const double sigma = std::sqrt(pi.pi_e * pi.pi_g / n);
    worst = std::max(worst, std::abs(double(excited) / n - pi.pi_e) / sigma);
  }
  const double dt = seconds_since(t0);
  return {worst < 4 && dt < 10,
          fmt("20 chains x 1e6 cycles: worst |pi_e - closed form| = %.2f binomial sigma (< 4), %.2f s (< 10 s)",
              worst, dt)};
}

RunContext make_context(const fs::path& dir, std::size_t n_events, std::uint64_t seed) {
  RunContext ctx;
  ctx.config = default_config();
  ctx.config.simulation.n_events = n_events;
  ctx.config.simulation.seed = seed;
  ctx.out_dir = dir.string();
  ctx.workers = workers();
  fs::remove_all(dir);
  return ctx;
}

RunContext calibration_context(const fs::path& dir, std::uint64_t seed) {
  auto ctx = make_context(dir, 200, seed);
  auto& src = ctx.config.simulation.source;
  ctx.config.simulation.deposit = DepositMode::direct;
  src.kind = SpectrumKind::log_flat;
  src.e_min = 20;
  src.e_max = 1e5;
  return ctx;
}

// 5. Calibration closure over 20 seeds.
Verdict criterion_5(const fs::path& work) {
  const auto t0 = Clock::now();
  const auto names = default_config().analysis_qubits();
  int trials = 0, both = 0, r_ok = 0, tau_ok = 0, failed = 0;
  std::vector<double> r_pull, tau_pull;
  for (int s = 0; s < 20; ++s) {
    auto ctx = calibration_context(work / fmt("calib_%02d", s), 5000 + s);
    cmd_simulate(ctx);
    cmd_process(ctx);
    std::vector<QubitCalibration> cal;
    try {
      cal = cmd_calibrate(ctx);
    } catch (const FitError&) {
    }
    for (const auto& n : names) {
      ++trials;
      const auto it = std::find_if(cal.begin(), cal.end(), [&](const auto& c) { return c.qubit == n; });
      if (it == cal.end()) {
        ++failed;
        continue;
      }
      const bool r = std::abs(it->r.value - 0.005) <= it->r.total;
      const bool t = std::abs(it->tau_ss.value - 6.0) <= it->tau_ss.total;
      r_pull.push_back((it->r.value - 0.005) / it->r.total);
      tau_pull.push_back((it->tau_ss.value - 6.0) / it->tau_ss.total);
      r_ok += r;
      tau_ok += t;
      both += r && t;
    }
    note(fmt("calibration seed %d: %d / %d qubit-fits recovered so far", s, both, trials));
  }
  const double frac = double(both) / trials;
  return {frac >= 0.9,
          fmt("r and tau_ss within quoted total uncertainty for %d / %d (seed, qubit) calibrations = %.0f%% "
              "(>= 90%%); r alone %d, tau_ss alone %d, failed %d; median pull r %+.2f, tau_ss %+.2f; %.0f s",
              both, trials, 100 * frac, r_ok, tau_ok, failed, r_pull.empty() ? 0.0 : median_of(r_pull),
              tau_pull.empty() ? 0.0 : median_of(tau_pull), seconds_since(t0))};
}

std::vector<QubitSignal> noisy_signals(const ChipPoint& v, double e, const ChipGeometry& g,
                                       const EfficiencyModel& m, std::mt19937_64* rng) {
  std::normal_distribution<double> noise(0, 1);
  std::vector<QubitSignal> out;
  for (const auto& n : default_analysis_qubits()) {
    const double s = expected_signal(distance(v, g.site(n).position), e, m);
    out.push_back({n, rng ? s + 0.1 * s * noise(*rng) : s, 0.1 * s});
  }
  return out;
}

// 6. Vertex coverage and exact inversion.
Verdict criterion_6() {
  const auto g = default_geometry();
  const auto m = default_efficiency_model();
  const VertexSettings settings;
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> ux(0, g.width), uy(0, g.height), le(std::log(5e4), std::log(4e5));
  auto fiducial_point = [&] {
    ChipPoint v{ux(rng), uy(rng)};
    while (!point_in_polygon(v, g.fiducial)) v = {ux(rng), uy(rng)};
    return v;
  };
  int inside = 0, nested = 0;
  for (int t = 0; t < 200; ++t) {
    const ChipPoint v = fiducial_point();
    const double e = std::exp(le(rng));
    const auto sig = noisy_signals(v, e, g, m, &rng);
    const auto sol = reconstruct_vertex(sig, g, m, settings);
    inside += vertex_chi2(v, e, sig, g, m) - sol.chi2_min <= kDeltaChi2OneSigma;
    nested += sol.region_1s <= sol.region_2s && sol.region_2s <= sol.region_3s;
  }
  double worst_chi2 = 0, worst_pos = 0;
  for (int t = 0; t < 50; ++t) {
    const int i = static_cast<int>(ux(rng) / settings.grid_pitch), j = static_cast<int>(uy(rng) / settings.grid_pitch);
    const ChipPoint v{i * settings.grid_pitch, j * settings.grid_pitch};
    const auto sol = reconstruct_vertex(noisy_signals(v, 3.74e5, g, m, nullptr), g, m, settings);
    worst_chi2 = std::max(worst_chi2, sol.chi2_min);
    worst_pos = std::max(worst_pos, distance({sol.x, sol.y}, v));
  }
  const double cov = inside / 200.0;
  return {std::abs(cov - 0.68) <= 0.07 && nested == 200 && worst_chi2 < 1e-10 && worst_pos < settings.grid_pitch,
          fmt("1-sigma coverage %.1f%% of 200 (68 +- 7%%), nested %d/200; noise-free: max chi2_min %.1e (< 1e-10), "
              "max position error %.2e mm (< %.2f)",
              100 * cov, nested, worst_chi2, worst_pos, settings.grid_pitch)};
}

// Two-sample chi-square on histograms with unequal totals; adjacent bins are
// merged until each merged bin holds at least five entries in total.
std::pair<double, int> two_sample_chi2(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<std::pair<double, double>> merged;
  double ca = 0, cb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca += a[i];
    cb += b[i];
    if (ca + cb >= 5) {
      merged.emplace_back(ca, cb);
      ca = cb = 0;
    }
  }
  if (ca + cb > 0) {
    if (merged.empty()) merged.emplace_back(ca, cb);
    else {
      merged.back().first += ca;
      merged.back().second += cb;
    }
  }
  double na = 0, nb = 0;
  for (const auto& [x, y] : merged) {
    na += x;
    nb += y;
  }
  double chi2 = 0;
  for (const auto& [x, y] : merged) {
    const double diff = std::sqrt(nb / na) * x - std::sqrt(na / nb) * y;
    chi2 += diff * diff / (x + y);
  }
  return {chi2, static_cast<int>(merged.size()) - 1};
}

// 7. Spectrum shape closure through the full pipeline.
Verdict criterion_7(const fs::path& work) {
  const auto t0 = Clock::now();
  auto cal = calibration_context(work / "spectrum_calibration", 7100);
  cmd_simulate(cal);
  cmd_process(cal);
  cmd_calibrate(cal);

  auto ctx = make_context(work / "spectrum_run", 500, 7200);
  ctx.config.analysis.fit = mock_fit_settings(0);
  ctx.calibration_path = (fs::path(cal.out_dir) / "calibration.json").string();
  cmd_simulate(ctx);
  cmd_process(ctx);
  note("spectrum closure: fitting 500 events");
  cmd_fit(ctx);
  const auto rec = cmd_reconstruct(ctx);

  std::map<std::uint64_t, double> truth;
  for (const auto& t : read_truth_jsonl((fs::path(ctx.out_dir) / "truth.jsonl").string()))
    truth[t.event_id] = t.e_tot;
  std::vector<double> true_e, reco_e;
  for (const auto& v : rec.vertices)
    if (v.in_spectrum) {
      true_e.push_back(truth.at(v.event_id));
      reco_e.push_back(v.solution.e_tot);
    }
  if (true_e.size() < 20)
    return {false, fmt("only %zu events reached the spectrum", true_e.size())};
  const auto& binning = ctx.config.analysis.spectrum;
  const auto hist_true = build_spectrum(true_e, binning), hist_reco = build_spectrum(reco_e, binning);
  auto with_flow = [](const Spectrum& s) {
    std::vector<double> v{double(s.underflow)};
    v.insert(v.end(), s.counts.begin(), s.counts.end());
    v.push_back(double(s.overflow));
    return v;
  };
  const auto [chi2, dof] = two_sample_chi2(with_flow(hist_true), with_flow(hist_reco));
  const double p = dof > 0 ? boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), chi2)) : 0.0;
  std::vector<double> ratio;
  for (std::size_t i = 0; i < true_e.size(); ++i) ratio.push_back(reco_e[i] / true_e[i]);
  return {p > 0.01,
          fmt("%zu of 500 events in spectrum; reconstructed vs true shape chi2 = %.1f / %d dof, p = %.3f (> 0.01); "
              "median E_reco/E_true %.3f; %.0f s",
              true_e.size(), chi2, dof, p, median_of(ratio), seconds_since(t0))};
}

// 8. Amplitude correlation versus qubit separation on 10-qubit datasets.
Verdict criterion_8() {
  const auto t0 = Clock::now();
  const auto g = default_geometry();
  const auto eff = default_efficiency_model();
  const auto refs = default_analysis_qubits();
  std::vector<QubitConfig> qubits;
  for (const auto& site : g.sites) {
    std::string nearest = refs.front();
    for (const auto& r : refs)
      if (distance(site.position, g.site(r).position) < distance(site.position, g.site(nearest).position))
        nearest = r;
    qubits.push_back(qubit_at_site(nearest, site.position, site.name));
  }
  const SourceSpec src = default_config().simulation.source;
  int wins = 0;
  std::ostringstream d;
  for (int s = 0; s < 20; ++s) {
    const auto events = generate_synthetic_source(src, 300, g, eff, 8000 + s);
    std::vector<std::vector<double>> amp(qubits.size(), std::vector<double>(events.size()));
    parallel_for(events.size(), workers(), [&](std::size_t i) {
      for (std::size_t k = 0; k < qubits.size(); ++k) {
        const auto w = simulate_waveform(qubits[k], BurstParams{events[i].edep(qubits[k].name), 0.005, 6.0, 0.0},
                                         0.0, stream_seed(stream_seed(8000 + s, i), k));
        amp[k][i] = compute_features(w).i_tot;
      }
    });
    double near = 0, far = 0;
    int nn = 0, nf = 0;
    for (std::size_t i = 0; i < qubits.size(); ++i)
      for (std::size_t j = i + 1; j < qubits.size(); ++j) {
        const double dist = distance(qubits[i].position, qubits[j].position);
        const double rho = amplitude_correlation(amp[i], amp[j]);
        if (dist < 1.5) {
          near += rho;
          ++nn;
        } else if (dist > 3.0) {
          far += rho;
          ++nf;
        }
      }
    wins += near / nn > far / nf;
    if (s == 0) d << fmt("seed 0: near %.3f vs far %.3f; ", near / nn, far / nf);
  }
  d << fmt("near-pair mean correlation exceeds far-pair in %d / 20 seeds (>= 19); %.0f s", wins, seconds_since(t0));
  return {wins >= 19, d.str()};
}

// 9. Sampler sanity.
Verdict criterion_9() {
  const LogDensity beta = [](std::span<const double> x) -> double {
    const double p = x[0];
    if (!(p > 0 && p < 1)) return -INFINITY;
    return 30 * std::log(p) + 70 * std::log1p(-p);
  };
  SamplerSettings st;
  st.seed = 909;
  const auto r = mh_sample(beta, {0.5}, {0.05}, {"p"}, st);
  const auto& s = r.summary("p");
  const double z = std::abs(s.mean - 31.0 / 102.0) / s.mcse;

  const auto& study = mock_study();
  std::size_t converged = 0, total = 0, bad = 0;
  for (const auto& [e, fits] : study.by_energy)
    for (const auto& f : fits) {
      ++total;
      if (!f.converged) continue;
      ++converged;
      bad += !(f.rhat_max < 1.1);
    }

  const auto q = reference_qubit("Q2");
  const auto w = simulate_waveform(q, BurstParams{150, 0.005, 6, 0}, 0.0, 9);
  const auto a = fit_waveform(w, q, PhysicsConstants{}, {}, mock_fit_settings(99));
  const auto b = fit_waveform(w, q, PhysicsConstants{}, {}, mock_fit_settings(99));
  const bool identical = a.draws == b.draws;
  return {z < 3 && bad == 0 && identical,
          fmt("Beta(31,71) mean off by %.2f MCSE (< 3); R-hat < 1.1 on %zu / %zu converged mock fits (%zu of %zu "
              "converged); identical chains per seed: %s",
              z, converged - bad, converged, converged, total, identical ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "qpburst_acceptance").string();
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--workdir", work, "scratch directory for pipeline runs");
  CLI11_PARSE(app, argc, argv);
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty())
    for (int i = 1; i <= 9; ++i) selected.insert(i);
  fs::create_directories(work);

  bool all = true;
  for (int k : selected) {
    const auto t0 = Clock::now();
    Verdict o;
    try {
      switch (k) {
        case 1: o = criterion_1(); break;
        case 2: o = criterion_2(); break;
        case 3: o = criterion_3(); break;
        case 4: o = criterion_4(); break;
        case 5: o = criterion_5(work); break;
        case 6: o = criterion_6(); break;
        case 7: o = criterion_7(work); break;
        case 8: o = criterion_8(); break;
        case 9: o = criterion_9(); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("CRITERION %d %s  %s  [%.0f s]\n", k, o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
