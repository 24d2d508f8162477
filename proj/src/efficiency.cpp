#include "qpburst/efficiency.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "qpburst/errors.hpp"

namespace qpburst {

double EfficiencyModel::operator()(double r_mm) const {
  return a * std::exp(-b * r_mm) + c * std::exp(-d * r_mm) + h;
}

void EfficiencyModel::validate() const {
  if (!(a >= 0 && b >= 0 && c >= 0 && d >= 0 && h >= 0))
    throw ConfigError("efficiency model parameters must be non-negative");
  if (a + c + h > 1) throw ConfigError("efficiency model exceeds unity at R = 0");
}

EfficiencyModel default_efficiency_model() {
  // Frozen output of fit_efficiency_curve on data/efficiency_reference.csv.
  return EfficiencyModel{2.0e-3, 3.0, 8.0e-4, 0.6, 5.0e-5};
}

double expected_signal(double r_mm, double e_tot, const EfficiencyModel& model) {
  if (!(r_mm >= 0)) throw DomainError("distance must be non-negative");
  return e_tot * model(r_mm);
}

namespace {

// Parameters are optimized as logarithms so that every component stays
// non-negative; `mask` selects which of (a, b, c, d, h) are present.
struct LogModel {
  std::array<bool, 5> mask{};

  double eval(const Eigen::VectorXd& theta, double r) const {
    double v = 0.0;
    int k = 0;
    double a = 0, b = 0, c = 0, d = 0, h = 0;
    if (mask[0]) a = std::exp(theta[k++]);
    if (mask[1]) b = std::exp(theta[k++]);
    if (mask[2]) c = std::exp(theta[k++]);
    if (mask[3]) d = std::exp(theta[k++]);
    if (mask[4]) h = std::exp(theta[k++]);
    if (mask[0]) v += a * std::exp(-b * r);
    if (mask[2]) v += c * std::exp(-d * r);
    v += h;
    return v;
  }

  EfficiencyModel unpack(const Eigen::VectorXd& theta) const {
    EfficiencyModel m;
    int k = 0;
    if (mask[0]) m.a = std::exp(theta[k++]);
    if (mask[1]) m.b = std::exp(theta[k++]);
    if (mask[2]) m.c = std::exp(theta[k++]);
    if (mask[3]) m.d = std::exp(theta[k++]);
    if (mask[4]) m.h = std::exp(theta[k++]);
    return m;
  }
};

struct LmOutcome {
  Eigen::VectorXd theta;
  double cost = std::numeric_limits<double>::infinity();
  bool converged = false;
};

Eigen::VectorXd log_residuals(const LogModel& model, const Eigen::VectorXd& theta,
                              std::span<const EfficiencyPoint> pts) {
  Eigen::VectorXd res(static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i)
    res[static_cast<Eigen::Index>(i)] =
        std::log(pts[i].efficiency) - std::log(model.eval(theta, pts[i].r_mm));
  return res;
}

LmOutcome levenberg_marquardt(const LogModel& model, Eigen::VectorXd theta,
                              std::span<const EfficiencyPoint> pts) {
  const auto n_par = theta.size();
  Eigen::VectorXd res = log_residuals(model, theta, pts);
  double cost = res.squaredNorm();
  double lambda = 1e-3;
  LmOutcome out;
  for (int iter = 0; iter < 400; ++iter) {
    Eigen::MatrixXd jac(res.size(), n_par);
    for (Eigen::Index j = 0; j < n_par; ++j) {
      const double eps = 1e-6;
      Eigen::VectorXd up = theta, dn = theta;
      up[j] += eps;
      dn[j] -= eps;
      jac.col(j) = (log_residuals(model, up, pts) - log_residuals(model, dn, pts)) / (2 * eps);
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * res;
    bool improved = false;
    for (int tries = 0; tries < 30 && !improved; ++tries) {
      Eigen::MatrixXd damped = jtj;
      damped.diagonal() += lambda * (jtj.diagonal().array() + 1e-12).matrix();
      const Eigen::VectorXd step = damped.ldlt().solve(-grad);
      const Eigen::VectorXd trial = theta + step;
      const Eigen::VectorXd trial_res = log_residuals(model, trial, pts);
      const double trial_cost = trial_res.squaredNorm();
      if (std::isfinite(trial_cost) && trial_cost < cost) {
        const double drop = cost - trial_cost;
        theta = trial;
        res = trial_res;
        const bool tiny_step = step.norm() < 1e-10 * (1.0 + theta.norm());
        const bool tiny_drop = drop < 1e-14 * (1.0 + cost);
        cost = trial_cost;
        lambda = std::max(lambda / 3.0, 1e-12);
        improved = true;
        if (tiny_step || tiny_drop || cost < 1e-26) {
          out.converged = true;
          out.theta = theta;
          out.cost = cost;
          return out;
        }
      } else {
        lambda *= 4.0;
      }
    }
    if (!improved) {
      // No downhill step at any damping: a stationary point.
      out.converged = grad.norm() < 1e-6 * (1.0 + cost);
      break;
    }
  }
  out.theta = theta;
  out.cost = cost;
  return out;
}

// Weighted linear least squares for the amplitudes at fixed decay constants,
// minimizing the relative residual; used to seed each start.
Eigen::Vector3d seed_amplitudes(double b, double d, std::span<const EfficiencyPoint> pts) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(pts.size()), 3);
  Eigen::VectorXd y(static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double w = 1.0 / pts[i].efficiency;
    const auto row = static_cast<Eigen::Index>(i);
    x(row, 0) = w * std::exp(-b * pts[i].r_mm);
    x(row, 1) = w * std::exp(-d * pts[i].r_mm);
    x(row, 2) = w;
    y[row] = 1.0;
  }
  Eigen::Vector3d amp = x.colPivHouseholderQr().solve(y);
  double floor_value = std::numeric_limits<double>::max();
  for (const auto& p : pts) floor_value = std::min(floor_value, p.efficiency);
  for (int i = 0; i < 3; ++i)
    if (!(amp[i] > 1e-3 * floor_value)) amp[i] = 1e-3 * floor_value;
  return amp;
}

}  // namespace

EfficiencyFit fit_efficiency_curve(std::span<const EfficiencyPoint> table) {
  if (table.size() < 6) throw FitError("efficiency fit needs at least 6 points");
  for (const auto& p : table)
    if (!(p.r_mm >= 0 && p.efficiency > 0))
      throw FitError("efficiency table needs R >= 0 and efficiency > 0");

  const double n = static_cast<double>(table.size());
  auto rms = [n](double cost) { return std::sqrt(cost / n); };

  EfficiencyFit best;
  best.starts_total = 0;

  // Two-component fits from decade-spanning random starts.
  std::mt19937_64 rng(0x5eedf17ULL);
  std::uniform_real_distribution<double> log_b(std::log(0.1), std::log(30.0));
  std::uniform_real_distribution<double> log_d(std::log(0.01), std::log(3.0));
  LogModel full{{true, true, true, true, true}};
  double best_cost = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_theta;
  constexpr int kStarts = 24;
  for (int s = 0; s < kStarts; ++s) {
    double b = std::exp(log_b(rng)), d = std::exp(log_d(rng));
    if (b < d) std::swap(b, d);
    if (b < 1.05 * d) b = 1.05 * d;
    const auto amp = seed_amplitudes(b, d, table);
    Eigen::VectorXd theta(5);
    theta << std::log(amp[0]), std::log(b), std::log(amp[1]), std::log(d), std::log(amp[2]);
    const auto fit = levenberg_marquardt(full, theta, table);
    ++best.starts_total;
    if (fit.converged) ++best.starts_converged;
    if (fit.converged && fit.cost < best_cost) {
      best_cost = fit.cost;
      best_theta = fit.theta;
    }
  }
  if (best.starts_converged == 0)
    throw FitError("efficiency fit: none of " + std::to_string(kStarts) +
                   " starts converged (check the table for non-monotone or noisy data)");
  best.model = full.unpack(best_theta);
  best.residual_rms = rms(best_cost);
  best.components = 2;
  if (best.model.b < best.model.d) {
    std::swap(best.model.a, best.model.c);
    std::swap(best.model.b, best.model.d);
  }

  // Simpler nested models win when they describe the data as well.
  constexpr double kSimplerTolerance = 1e-6;
  LogModel single{{true, true, false, false, true}};
  double single_cost = std::numeric_limits<double>::infinity();
  Eigen::VectorXd single_theta;
  for (double b0 : {0.1, 0.3, 1.0, 3.0, 10.0, 30.0}) {
    const auto amp = seed_amplitudes(b0, b0, table);
    Eigen::VectorXd theta(3);
    theta << std::log(amp[0] + amp[1]), std::log(b0), std::log(amp[2]);
    const auto fit = levenberg_marquardt(single, theta, table);
    if (fit.converged && fit.cost < single_cost) {
      single_cost = fit.cost;
      single_theta = fit.theta;
    }
  }
  if (std::isfinite(single_cost) && rms(single_cost) <= best.residual_rms + kSimplerTolerance) {
    best.model = single.unpack(single_theta);
    best.residual_rms = rms(single_cost);
    best.components = 1;
  }

  double mean_log = 0.0;
  for (const auto& p : table) mean_log += std::log(p.efficiency) / n;
  double flat_cost = 0.0;
  for (const auto& p : table) flat_cost += std::pow(std::log(p.efficiency) - mean_log, 2);
  if (rms(flat_cost) <= best.residual_rms + kSimplerTolerance) {
    best.model = EfficiencyModel{0, 0, 0, 0, std::exp(mean_log)};
    best.residual_rms = rms(flat_cost);
    best.components = 0;
  }
  return best;
}

std::vector<EfficiencyPoint> read_efficiency_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open efficiency table " + path);
  std::vector<EfficiencyPoint> out;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (line.find_first_of("abcdefghijklmnopqrstuvwxyzR_") != std::string::npos) continue;
    }
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    EfficiencyPoint p;
    if (!(row >> p.r_mm >> p.efficiency)) throw SchemaError("malformed efficiency row: " + line);
    out.push_back(p);
  }
  return out;
}

}  // namespace qpburst
