#include "qpburst/recon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qpburst/errors.hpp"

namespace qpburst {

double amplitude_correlation(std::span<const double> phi, std::span<const double> xi) {
  if (phi.size() != xi.size()) throw PreconditionError("correlation needs equal-length series");
  if (phi.size() < 3) throw PreconditionError("correlation needs at least 3 events");
  const double n = static_cast<double>(phi.size());
  double mp = 0.0, mx = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (!std::isfinite(phi[i]) || !std::isfinite(xi[i]))
      throw PreconditionError("correlation needs finite amplitudes");
    mp += phi[i];
    mx += xi[i];
  }
  mp /= n;
  mx /= n;
  double spp = 0.0, sxx = 0.0, spx = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    spp += (phi[i] - mp) * (phi[i] - mp);
    sxx += (xi[i] - mx) * (xi[i] - mx);
    spx += (phi[i] - mp) * (xi[i] - mx);
  }
  if (spp <= 0 || sxx <= 0) throw DomainError("undefined correlation: zero variance");
  return std::clamp(spx / std::sqrt(spp * sxx), -1.0, 1.0);
}

namespace {

struct Term {
  ChipPoint pos;
  double s = 0.0;
  double w = 0.0;  // 1 / sigma^2
};

std::vector<Term> make_terms(std::span<const QubitSignal> signals, const ChipGeometry& geometry) {
  std::vector<Term> terms;
  for (const auto& s : signals) {
    if (!std::isfinite(s.s_obs)) throw PreconditionError("signal of " + s.qubit + " is not finite");
    if (!(s.sigma > 0)) throw PreconditionError("signal of " + s.qubit + " needs sigma > 0");
    if (std::isinf(s.sigma)) continue;
    terms.push_back({geometry.site(s.qubit).position, s.s_obs, 1.0 / (s.sigma * s.sigma)});
  }
  return terms;
}

double energy_and_chi2(const ChipPoint& p, const std::vector<Term>& terms,
                       const EfficiencyModel& m, double* chi2) {
  double sff = 0.0, sfs = 0.0, sss = 0.0;
  for (const auto& t : terms) {
    const double f = m(distance(p, t.pos));
    sff += t.w * f * f;
    sfs += t.w * f * t.s;
    sss += t.w * t.s * t.s;
  }
  const double e = sff > 0 ? std::max(0.0, sfs / sff) : 0.0;
  if (chi2) *chi2 = std::max(0.0, sss - 2.0 * e * sfs + e * e * sff);
  return e;
}

double chi2_of(const ChipPoint& p, double e, const std::vector<Term>& terms,
               const EfficiencyModel& m) {
  double c = 0.0;
  for (const auto& t : terms) {
    const double r = t.s - e * m(distance(p, t.pos));
    c += t.w * r * r;
  }
  return c;
}

// Nelder-Mead over (x, y) with E_tot profiled out.
ChipPoint refine_simplex(ChipPoint start, double scale, const std::vector<Term>& terms,
                         const EfficiencyModel& m, const ChipGeometry& g) {
  auto f = [&](const ChipPoint& p) {
    if (p.x < 0 || p.y < 0 || p.x > g.width || p.y > g.height)
      return std::numeric_limits<double>::infinity();
    double c = 0.0;
    energy_and_chi2(p, terms, m, &c);
    return c;
  };
  std::array<ChipPoint, 3> s = {start, ChipPoint{start.x + scale, start.y},
                                ChipPoint{start.x, start.y + scale}};
  std::array<double, 3> v = {f(s[0]), f(s[1]), f(s[2])};
  for (int it = 0; it < 400; ++it) {
    std::array<int, 3> order = {0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
    const int best = order[0], mid = order[1], worst = order[2];
    const double spread = std::max(std::abs(s[worst].x - s[best].x), std::abs(s[worst].y - s[best].y));
    if (spread < 1e-9 && std::abs(v[worst] - v[best]) < 1e-14 * (1 + v[best])) break;
    const ChipPoint c{0.5 * (s[best].x + s[mid].x), 0.5 * (s[best].y + s[mid].y)};
    auto along = [&](double k) {
      return ChipPoint{c.x + k * (s[worst].x - c.x), c.y + k * (s[worst].y - c.y)};
    };
    const ChipPoint xr = along(-1.0);
    const double fr = f(xr);
    if (fr < v[best]) {
      const ChipPoint xe = along(-2.0);
      const double fe = f(xe);
      if (fe < fr) { s[worst] = xe; v[worst] = fe; }
      else { s[worst] = xr; v[worst] = fr; }
    } else if (fr < v[mid]) {
      s[worst] = xr;
      v[worst] = fr;
    } else {
      const ChipPoint xc = fr < v[worst] ? along(-0.5) : along(0.5);
      const double fc = f(xc);
      if (fc < std::min(fr, v[worst])) {
        s[worst] = xc;
        v[worst] = fc;
      } else {
        for (int k : {mid, worst}) {
          s[k] = ChipPoint{0.5 * (s[k].x + s[best].x), 0.5 * (s[k].y + s[best].y)};
          v[k] = f(s[k]);
        }
      }
    }
  }
  int b = 0;
  for (int k = 1; k < 3; ++k)
    if (v[k] < v[b]) b = k;
  return s[b];
}

bool collinear(const std::vector<Term>& terms) {
  if (terms.size() < 3) return true;
  const auto& a = terms[0].pos;
  for (std::size_t i = 1; i < terms.size(); ++i)
    for (std::size_t j = i + 1; j < terms.size(); ++j) {
      const auto& b = terms[i].pos;
      const auto& c = terms[j].pos;
      if (std::abs((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)) > 1e-9) return false;
    }
  return true;
}

}  // namespace

double best_energy_at(const ChipPoint& p, std::span<const QubitSignal> signals,
                      const ChipGeometry& geometry, const EfficiencyModel& model, double* chi2) {
  return energy_and_chi2(p, make_terms(signals, geometry), model, chi2);
}

double vertex_chi2(const ChipPoint& p, double e_tot, std::span<const QubitSignal> signals,
                   const ChipGeometry& geometry, const EfficiencyModel& model) {
  return chi2_of(p, e_tot, make_terms(signals, geometry), model);
}

VertexSolution reconstruct_vertex(std::span<const QubitSignal> signals,
                                  const ChipGeometry& geometry, const EfficiencyModel& model,
                                  const VertexSettings& settings) {
  if (signals.size() < 3) throw PreconditionError("vertex fit needs at least 3 qubits");
  if (!(settings.grid_pitch > 0)) throw ConfigError("grid pitch must be positive");
  const auto terms = make_terms(signals, geometry);
  if (terms.empty()) throw PreconditionError("no information: every sigma is infinite");
  VertexSolution sol;
  if (collinear(terms)) sol.warnings.push_back("degenerate geometry: qubits are collinear");

  const int nx = static_cast<int>(std::floor(geometry.width / settings.grid_pitch + 1e-9)) + 1;
  const int ny = static_cast<int>(std::floor(geometry.height / settings.grid_pitch + 1e-9)) + 1;
  std::vector<double> chi(static_cast<std::size_t>(nx) * ny);
  double best = std::numeric_limits<double>::infinity();
  ChipPoint best_p;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const ChipPoint p{i * settings.grid_pitch, j * settings.grid_pitch};
      double c = 0.0;
      energy_and_chi2(p, terms, model, &c);
      chi[static_cast<std::size_t>(j) * nx + i] = c;
      if (c < best) {
        best = c;
        best_p = p;
      }
    }

  ChipPoint p = best_p;
  if (settings.refine) {
    const ChipPoint r = refine_simplex(best_p, settings.grid_pitch, terms, model, geometry);
    double c = 0.0;
    energy_and_chi2(r, terms, model, &c);
    if (c <= best) {
      p = r;
      best = c;
    }
  }
  sol.x = p.x;
  sol.y = p.y;
  sol.e_tot = energy_and_chi2(p, terms, model, &sol.chi2_min);

  if (settings.contours) {
    const std::array<double, 3> levels = {kDeltaChi2OneSigma, kDeltaChi2TwoSigma,
                                          kDeltaChi2ThreeSigma};
    std::array<std::vector<ChipPoint>*, 3> outs = {&sol.contour_1s, &sol.contour_2s,
                                                   &sol.contour_3s};
    std::array<std::size_t*, 3> counts = {&sol.region_1s, &sol.region_2s, &sol.region_3s};
    for (std::size_t l = 0; l < 3; ++l) {
      const double cut = sol.chi2_min + levels[l];
      auto inside = [&](int i, int j) {
        return i >= 0 && j >= 0 && i < nx && j < ny &&
               chi[static_cast<std::size_t>(j) * nx + i] <= cut;
      };
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
          if (!inside(i, j)) continue;
          ++*counts[l];
          if (!inside(i - 1, j) || !inside(i + 1, j) || !inside(i, j - 1) || !inside(i, j + 1))
            outs[l]->push_back({i * settings.grid_pitch, j * settings.grid_pitch});
        }
    }
  }
  sol.fiducial_pass = fiducial_cut(sol, geometry);
  return sol;
}

bool fiducial_cut(const VertexSolution& v, const ChipGeometry& geometry) {
  return point_in_polygon({v.x, v.y}, geometry.fiducial);
}

void SpectrumBinning::validate() const {
  if (!(e_min > 0 && e_max > e_min && n_bins > 0)) throw ConfigError("invalid spectrum binning");
}

std::vector<double> SpectrumBinning::edges() const {
  validate();
  std::vector<double> e(static_cast<std::size_t>(n_bins) + 1);
  const double step = std::log(e_max / e_min) / n_bins;
  for (int i = 0; i <= n_bins; ++i) e[static_cast<std::size_t>(i)] = e_min * std::exp(step * i);
  e.back() = e_max;
  return e;
}

Spectrum build_spectrum(std::span<const double> energies, const SpectrumBinning& binning,
                        double live_time, double efficiency) {
  Spectrum s;
  s.edges = binning.edges();
  s.counts.assign(static_cast<std::size_t>(binning.n_bins), 0.0);
  for (double e : energies) {
    if (e < s.edges.front()) {
      ++s.underflow;
      continue;
    }
    if (e >= s.edges.back()) {
      ++s.overflow;
      continue;
    }
    const auto it = std::upper_bound(s.edges.begin(), s.edges.end(), e);
    ++s.counts[static_cast<std::size_t>(it - s.edges.begin() - 1)];
  }
  s.errors.resize(s.counts.size());
  double norm = 1.0;
  if (live_time > 0) {
    if (!(efficiency > 0)) throw ConfigError("spectrum efficiency must be positive");
    norm = 1.0 / (live_time * efficiency);
  }
  for (std::size_t i = 0; i < s.counts.size(); ++i) {
    s.errors[i] = std::sqrt(s.counts[i]) * norm;
    s.counts[i] *= norm;
  }
  return s;
}

}  // namespace qpburst
