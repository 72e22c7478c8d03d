#pragma once

// Brute-force reference solver for
//
//   min_u  1/2 (u - k_d)^T G (u - k_d)   s.t.  c_j + d_j^T u >= 0,  j = 0..2m-1,
//
// where rows come in opposite-sign pairs (d_{2i+1} = -d_{2i}). Every active set
// of size <= m that does not contain both rows of a pair is tried; the KKT
// system of each candidate is solved directly. Intended for m <= 8.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "boxcbf/cbf_core.hpp"

namespace boxcbf {

struct QpInstance {
  Matrix G;
  Vector k_d;
  Vector c;  // 2m
  Matrix D;  // 2m x m, rows d_j^T

  int input_dim() const noexcept { return static_cast<int>(G.rows()); }

  void validate() const {
    const auto m = G.rows();
    if (G.cols() != m || k_d.size() != m || c.size() != 2 * m || D.rows() != 2 * m ||
        D.cols() != m) {
      throw ConstructionError("QpInstance: inconsistent dimensions");
    }
    const double scale = std::max(1.0, G.cwiseAbs().maxCoeff());
    if ((G - G.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw ConstructionError("QpInstance: G is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(G, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues().minCoeff() > 0.0)) {
      throw ConstructionError("QpInstance: G is not positive definite");
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      const double pair_scale = std::max(1.0, D.row(2 * i).cwiseAbs().maxCoeff());
      if ((D.row(2 * i) + D.row(2 * i + 1)).cwiseAbs().maxCoeff() > 1e-12 * pair_scale) {
        throw ConstructionError("QpInstance: constraint rows must come in opposite-sign pairs");
      }
    }
  }

  double objective(const Vector& u) const {
    const Vector e = u - k_d;
    return 0.5 * e.dot(G * e);
  }
  Vector slacks(const Vector& u) const { return c + D * u; }
};

// Instance for the box-ECBF filter at x. G defaults to the Gram matrix B^T B.
inline QpInstance make_qp_instance(std::span<const OutputChannel> channels,
                                   const SystemModel& model, const Vector& x, const Vector& k_d,
                                   const Matrix* weight = nullptr) {
  const int m = model.input_dim;
  if (static_cast<int>(channels.size()) != m) {
    throw ConstructionError("make_qp_instance: need one channel per input");
  }
  QpInstance inst;
  inst.k_d = k_d;
  inst.c.resize(2 * m);
  inst.D.resize(2 * m, m);
  Matrix B(m, m);
  for (int i = 0; i < m; ++i) {
    const auto& ch = channels[static_cast<std::size_t>(i)];
    const auto ev = evaluate_channel(ch, x);
    inst.c(2 * i) = ev.a + ch.alpha1() * (ev.y - ch.lower());
    inst.c(2 * i + 1) = -ev.a - ch.alpha1() * (ev.y - ch.upper());
    inst.D.row(2 * i) = ev.b.transpose();
    inst.D.row(2 * i + 1) = -ev.b.transpose();
    B.row(i) = ev.b.transpose();
  }
  inst.G = weight ? *weight : Matrix(B.transpose() * B);
  inst.validate();
  return inst;
}

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
  double max() const noexcept { return std::max({stationarity, primal, dual, complementarity}); }
};

inline KktResiduals kkt_residuals(const QpInstance& inst, const Vector& u, const Vector& lambda) {
  if (u.size() != inst.k_d.size() || lambda.size() != inst.c.size()) {
    throw ConstructionError("kkt_residuals: shape mismatch");
  }
  const Vector slack = inst.slacks(u);
  KktResiduals r;
  r.stationarity = (inst.G * (u - inst.k_d) - inst.D.transpose() * lambda).cwiseAbs().maxCoeff();
  r.primal = std::max(0.0, -slack.minCoeff());
  r.dual = std::max(0.0, -lambda.minCoeff());
  r.complementarity = lambda.cwiseProduct(slack).cwiseAbs().maxCoeff();
  return r;
}

struct OracleCandidate {
  std::vector<int> active;
  Vector u;
  Vector lambda;
  double objective = 0.0;
};

struct OracleSolution {
  Vector u;
  Vector lambda;  // 2m, interleaved
  std::vector<int> active;
  double objective = 0.0;
  std::size_t candidates_tried = 0;
  std::vector<OracleCandidate> accepted;
};

struct OracleOptions {
  double dual_tol = 1e-12;
  double primal_tol = 1e-10;
  double max_condition = 1e12;
};

namespace detail {

template <typename Visit>
void enumerate_pair_free_subsets(int m, Visit&& visit) {
  // Each channel is absent, lower-active or upper-active; keep |A| <= m
  // (always true here, since at most one row per pair is chosen).
  std::vector<int> choice(static_cast<std::size_t>(m), 0);
  std::vector<int> active;
  while (true) {
    active.clear();
    for (int i = 0; i < m; ++i) {
      const int ci = choice[static_cast<std::size_t>(i)];
      if (ci == 1) active.push_back(2 * i);
      if (ci == 2) active.push_back(2 * i + 1);
    }
    visit(active);
    int pos = 0;
    while (pos < m && choice[static_cast<std::size_t>(pos)] == 2) {
      choice[static_cast<std::size_t>(pos)] = 0;
      ++pos;
    }
    if (pos == m) break;
    ++choice[static_cast<std::size_t>(pos)];
  }
}

}  // namespace detail

inline OracleSolution solve_active_set_enumeration(const QpInstance& inst,
                                                   const OracleOptions& opt = {}) {
  inst.validate();
  const int m = inst.input_dim();
  const auto nc = static_cast<Eigen::Index>(2 * m);

  OracleSolution best;
  best.objective = std::numeric_limits<double>::infinity();
  std::size_t tried = 0;

  detail::enumerate_pair_free_subsets(m, [&](const std::vector<int>& active) {
    ++tried;
    const auto k = static_cast<Eigen::Index>(active.size());
    // [ G   -D_A^T ] [u]   [G k_d]
    // [ D_A    0   ] [l] = [-c_A ]
    Matrix K = Matrix::Zero(m + k, m + k);
    Vector rhs(m + k);
    K.topLeftCorner(m, m) = inst.G;
    rhs.head(m) = inst.G * inst.k_d;
    for (Eigen::Index a = 0; a < k; ++a) {
      const int j = active[static_cast<std::size_t>(a)];
      K.block(0, m + a, m, 1) = -inst.D.row(j).transpose();
      K.block(m + a, 0, 1, m) = inst.D.row(j);
      rhs(m + a) = -inst.c(j);
    }
    Eigen::PartialPivLU<Matrix> lu(K);
    const double rcond = lu.rcond();
    if (!(rcond * opt.max_condition >= 1.0)) {
      std::ostringstream os;
      os << "oracle: KKT system ill-conditioned (estimated condition " << 1.0 / rcond << ")";
      throw ConditioningError(os.str(), 1.0 / rcond);
    }
    const Vector sol = lu.solve(rhs);
    Vector lambda = Vector::Zero(nc);
    for (Eigen::Index a = 0; a < k; ++a) lambda(active[static_cast<std::size_t>(a)]) = sol(m + a);
    const Vector u = sol.head(m);

    if (k > 0 && sol.tail(k).minCoeff() < -opt.dual_tol) return;
    if (inst.slacks(u).minCoeff() < -opt.primal_tol) return;

    OracleCandidate cand{active, u, lambda, inst.objective(u)};
    if (cand.objective < best.objective) {
      best.u = cand.u;
      best.lambda = cand.lambda;
      best.active = cand.active;
      best.objective = cand.objective;
    }
    best.accepted.push_back(std::move(cand));
  });

  best.candidates_tried = tried;
  if (best.accepted.empty()) {
    throw InfeasibleError("oracle: no active set satisfies the KKT conditions");
  }
  return best;
}

}  // namespace boxcbf
