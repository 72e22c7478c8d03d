#pragma once

// Tracking-degradation bound for the filtered closed loop. Given a Lyapunov
// function V with
//   rho |e|^2 <= V,   dV/dt + dV/dx (f + g k_d) <= -gamma V - sigma |dV/dx g|^2,
// the filtered loop satisfies
//   |e(t)| <= sqrt(V0 / rho) exp(-gamma t / 2) + sup|k_cbf| / (2 sqrt(gamma rho sigma)).
//
// Piecewise-constant setpoint schedules make V jump at switch times, so the
// bound is restarted at the start of every schedule segment.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "boxcbf/cbf_core.hpp"
#include "boxcbf/sim.hpp"

namespace boxcbf::iss {

class InvalidCertificate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IssCertificate {
  double rho = 0.0;
  double gamma = 0.0;
  double sigma = 0.0;
  // V(x, t) and e(x, t) on the state the nominal controller acts on.
  std::function<double(const Vector&, double)> V;
  std::function<Vector(const Vector&, double)> error;

  double beta(double v0, double s) const { return std::sqrt(v0 / rho) * std::exp(-0.5 * gamma * s); }
  double iota(double mu) const { return mu / (2.0 * std::sqrt(gamma * rho * sigma)); }
};

// Solves A^T P + P A = -Q through the Kronecker form.
inline Matrix solve_lyapunov(const Matrix& A, const Matrix& Q) {
  const auto n = A.rows();
  const Matrix I = Matrix::Identity(n, n);
  Matrix K = Matrix::Zero(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      K.block(i * n, j * n, n, n) = A(j, i) * I;  // (A^T kron I)
      K.block(i * n, j * n, n, n) += (i == j ? 1.0 : 0.0) * A.transpose();  // (I kron A^T)
    }
  }
  const Vector q = Eigen::Map<const Vector>(Q.data(), n * n);
  const Vector p = K.fullPivLu().solve(-q);
  Matrix P = Eigen::Map<const Matrix>(p.data(), n, n);
  return 0.5 * (P + P.transpose());
}

struct PdCertificateData {
  Matrix P;  // 2x2 block on (e_i, edot_i), shared by every channel
  Matrix Q;
  double rho_grid = 0.0;
  double gamma_max = 0.0;
  double sigma_grid = 0.0;
};

// Quadratic certificate V = sum_i (e_i, edot_i) P (e_i, edot_i)^T for the
// double integrator tracked by k_d = g e_z - kp e - kd edot (piecewise-constant
// references). The error dynamics per channel are
//   [e; edot]' = [[0, 1], [-kp, -kd]] [e; edot] + [0; 1] k_cbf_i.
// Constants come from minimizing the defining ratios over a grid of unit
// directions; gamma takes half of its admissible maximum and the grid minima
// are shrunk by `grid_safety` to cover grid under-sampling.
inline IssCertificate make_pd_tracking_certificate(const sim::SetpointSchedule& schedule,
                                                   const sim::NominalGains& gains,
                                                   PdCertificateData* data = nullptr,
                                                   int grid_points = 7200,
                                                   double grid_safety = 0.95) {
  if (!(gains.kp > 0.0) || !(gains.kd > 0.0)) {
    throw InvalidCertificate("PD certificate requires positive gains");
  }
  Matrix A(2, 2);
  A << 0.0, 1.0, -gains.kp, -gains.kd;
  const Matrix Q = Matrix::Identity(2, 2);
  const Matrix P = solve_lyapunov(A, Q);

  double rho = std::numeric_limits<double>::infinity();
  double gamma_max = std::numeric_limits<double>::infinity();
  for (int k = 0; k < grid_points; ++k) {
    const double phi = 2.0 * std::numbers::pi * k / grid_points;
    const Vector xi{{std::cos(phi), std::sin(phi)}};
    const double v = xi.dot(P * xi);
    if (std::abs(xi(0)) > 1e-9) rho = std::min(rho, v / (xi(0) * xi(0)));
    gamma_max = std::min(gamma_max, xi.dot(Q * xi) / v);
  }
  const double gamma = 0.5 * gamma_max;
  double sigma = std::numeric_limits<double>::infinity();
  for (int k = 0; k < grid_points; ++k) {
    const double phi = 2.0 * std::numbers::pi * k / grid_points;
    const Vector xi{{std::cos(phi), std::sin(phi)}};
    const double lg = 2.0 * (P * xi)(1);
    if (std::abs(lg) < 1e-9) continue;
    sigma = std::min(sigma, (xi.dot(Q * xi) - gamma * xi.dot(P * xi)) / (lg * lg));
  }

  IssCertificate cert;
  cert.rho = grid_safety * rho;
  cert.gamma = gamma;
  cert.sigma = grid_safety * sigma;
  cert.error = [schedule](const Vector& s, double t) -> Vector {
    return s.head(2) - schedule.target(t).head(2);
  };
  cert.V = [schedule, P](const Vector& s, double t) {
    const Vector& tg = schedule.target(t);
    double v = 0.0;
    for (int i = 0; i < 2; ++i) {
      const Vector xi{{s(i) - tg(i), s(2 + i)}};
      v += xi.dot(P * xi);
    }
    return v;
  };
  if (data) *data = {P, Q, rho, gamma_max, sigma};
  return cert;
}

struct CertificateValidation {
  std::size_t samples = 0;
  double max_lower_bound_violation = 0.0;  // max(rho |e|^2 - V, 0), relative
  double max_dissipation_violation = 0.0;  // relative excess in the decay inequality
  bool pass = false;
};

// Checks both certificate inequalities at random (x, t) drawn from the given
// box. Derivatives of V are central finite differences, so the check does not
// rely on any closed form the certificate was built from.
inline CertificateValidation validate_certificate(
    const IssCertificate& cert, const SystemModel& model,
    const std::function<Vector(const Vector&, double)>& nominal, const Vector& box_lower,
    const Vector& box_upper, double t_max, std::size_t samples, std::uint64_t seed = 0,
    const std::function<long(double)>& segment_of = {}, double tol = 1e-6, double fd_step = 1e-6) {
  CertificateValidation out;
  if (!(cert.rho > 0.0 && cert.gamma > 0.0 && cert.sigma > 0.0) || !cert.V || !cert.error) {
    return out;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto n = box_lower.size();

  while (out.samples < samples) {
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i) = box_lower(i) + (box_upper(i) - box_lower(i)) * unit(rng);
    }
    const double t = t_max * unit(rng);
    if (segment_of && (segment_of(t - fd_step) != segment_of(t + fd_step))) continue;
    ++out.samples;

    const double v = cert.V(x, t);
    const Vector e = cert.error(x, t);
    const double scale = 1.0 + std::abs(v);
    out.max_lower_bound_violation =
        std::max(out.max_lower_bound_violation, (cert.rho * e.squaredNorm() - v) / scale);

    Vector grad(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      Vector xp = x, xm = x;
      xp(i) += fd_step;
      xm(i) -= fd_step;
      grad(i) = (cert.V(xp, t) - cert.V(xm, t)) / (2.0 * fd_step);
    }
    const double dvdt = (cert.V(x, t + fd_step) - cert.V(x, t - fd_step)) / (2.0 * fd_step);
    const Vector lg = model.control_matrix(x).transpose() * grad;
    const double lhs = dvdt + grad.dot(model.dynamics(x, nominal(x, t)));
    const double rhs = -cert.gamma * v - cert.sigma * lg.squaredNorm();
    out.max_dissipation_violation = std::max(out.max_dissipation_violation, (lhs - rhs) / scale);
  }
  out.pass = out.max_lower_bound_violation <= tol && out.max_dissipation_violation <= tol;
  return out;
}

struct IssReport {
  std::size_t steps = 0;
  std::size_t violations = 0;
  double max_excess = -std::numeric_limits<double>::infinity();  // max(|e| - bound)
  double worst_time = 0.0;
  // Boundedness of e restated at the level of outputs and references.
  double max_error = 0.0;
  double max_output = 0.0;
  double max_reference = 0.0;
  bool bounded = false;
  bool pass = false;
};

inline IssReport check_iss_bound(const sim::SimTrace& trace, const IssCertificate& cert,
                                 const CertificateValidation& validation, double tol = 1e-6) {
  if (!validation.pass) throw InvalidCertificate("certificate failed grid validation");
  IssReport rep;
  long segment = std::numeric_limits<long>::min();
  double t0 = 0.0;
  double v0 = 0.0;
  double sup_kcbf = 0.0;
  for (const auto& s : trace.steps) {
    if (s.segment != segment) {
      segment = s.segment;
      t0 = s.t;
      v0 = cert.V(s.filter_state, s.t);
      sup_kcbf = 0.0;
    }
    sup_kcbf = std::max(sup_kcbf, s.decision.k_cbf.norm());
    const double bound = cert.beta(v0, s.t - t0) + cert.iota(sup_kcbf);
    const double err = s.error.norm();
    const double excess = err - bound;
    if (excess > rep.max_excess) {
      rep.max_excess = excess;
      rep.worst_time = s.t;
    }
    if (excess > tol) ++rep.violations;
    rep.max_error = std::max(rep.max_error, err);
    rep.max_output = std::max(rep.max_output, s.y.norm());
    rep.max_reference = std::max(rep.max_reference, s.y_d.norm());
    ++rep.steps;
  }
  rep.bounded = std::isfinite(rep.max_error) && std::isfinite(rep.max_output) &&
                std::isfinite(rep.max_reference) &&
                rep.max_error <= rep.max_output + rep.max_reference + 1e-12;
  rep.pass = rep.violations == 0 && rep.bounded;
  return rep;
}

}  // namespace boxcbf::iss
