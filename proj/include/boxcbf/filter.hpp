#pragma once

// Closed-form multi-ECBF safety filter. With the Gram weighting G = B^T B the
// 2m box constraints decouple and each multiplier is a clipped scalar:
//
//   u* = k_d + sum_i (lambda_lower_i - lambda_upper_i) G^{-1} b_i,
//   lambda_lower_i = max(0, -omega_lower_i),  lambda_upper_i = max(0, -omega_upper_i).
//
// G^{-1} b_i equals column i of B^{-1}, so only B is factored.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "boxcbf/cbf_core.hpp"

namespace boxcbf {

inline constexpr double kFeasibilityTolerance = 1e-9;
inline constexpr double kComplementarityTolerance = 1e-9;

enum class Side { lower, upper };

struct ActiveConstraint {
  int channel = 0;
  Side side = Side::lower;
  // Position in the interleaved ordering (lower_0, upper_0, lower_1, ...).
  int index() const noexcept { return 2 * channel + (side == Side::upper ? 1 : 0); }
  friend bool operator==(const ActiveConstraint&, const ActiveConstraint&) = default;
};

struct FilterDecision {
  Vector u_star;
  Vector k_d;
  Vector k_cbf;  // u_star - k_d
  Vector lambda_lower;
  Vector lambda_upper;
  Vector omega_lower;
  Vector omega_upper;
  Vector slack_lower;  // constraint left-hand sides at u_star
  Vector slack_upper;
  std::vector<ActiveConstraint> active_set;  // constraints with a positive multiplier
  double sigma_min = 0.0;                    // of B(x)

  // Interleaved 2m-vectors matching the constraint ordering.
  Vector lambdas() const {
    Vector out(2 * lambda_lower.size());
    for (Eigen::Index i = 0; i < lambda_lower.size(); ++i) {
      out(2 * i) = lambda_lower(i);
      out(2 * i + 1) = lambda_upper(i);
    }
    return out;
  }
  Vector slacks() const {
    Vector out(2 * slack_lower.size());
    for (Eigen::Index i = 0; i < slack_lower.size(); ++i) {
      out(2 * i) = slack_lower(i);
      out(2 * i + 1) = slack_upper(i);
    }
    return out;
  }
};

namespace detail {

inline void check_channel_count(std::span<const OutputChannel> channels, const SystemModel& model) {
  if (static_cast<int>(channels.size()) != model.input_dim) {
    throw ConstructionError("filter: model '" + model.name + "' needs exactly " +
                            std::to_string(model.input_dim) + " channels");
  }
}

inline Matrix stack_rows(const std::vector<EcbfEvaluation>& evals) {
  const auto m = static_cast<Eigen::Index>(evals.size());
  Matrix B(m, m);
  for (Eigen::Index i = 0; i < m; ++i) B.row(i) = evals[static_cast<std::size_t>(i)].b.transpose();
  return B;
}

inline void fill_slacks(std::span<const OutputChannel> channels,
                        const std::vector<EcbfEvaluation>& evals, const Vector& u,
                        Vector& lower, Vector& upper) {
  const auto m = static_cast<Eigen::Index>(channels.size());
  lower.resize(m);
  upper.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& ch = channels[static_cast<std::size_t>(i)];
    const auto& ev = evals[static_cast<std::size_t>(i)];
    const double bu = ev.b.dot(u);
    lower(i) = ev.a + bu + ch.alpha1() * (ev.y - ch.lower());
    upper(i) = -ev.a - bu - ch.alpha1() * (ev.y - ch.upper());
  }
}

}  // namespace detail

inline FilterDecision closed_form_filter(std::span<const OutputChannel> channels,
                                         const SystemModel& model, const Vector& x,
                                         const Vector& k_d) {
  detail::check_channel_count(channels, model);
  const int m = model.input_dim;
  if (k_d.size() != m) throw ConstructionError("filter: k_d has the wrong length");

  std::vector<EcbfEvaluation> evals;
  evals.reserve(channels.size());
  for (const auto& ch : channels) evals.push_back(evaluate_channel(ch, x));

  const Matrix B = detail::stack_rows(evals);
  FilterDecision d;
  double condition = 0.0;
  d.sigma_min = smallest_singular_value(B, &condition);
  if (!(d.sigma_min >= kSingularTolerance)) {
    throw RankError("filter: decoupling matrix of '" + model.name + "' is singular", d.sigma_min);
  }

  d.k_d = k_d;
  d.omega_lower.resize(m);
  d.omega_upper.resize(m);
  d.lambda_lower.resize(m);
  d.lambda_upper.resize(m);
  for (int i = 0; i < m; ++i) {
    const auto& ch = channels[static_cast<std::size_t>(i)];
    const auto& ev = evals[static_cast<std::size_t>(i)];
    const double bk = ev.b.dot(k_d);
    d.omega_lower(i) = ev.a + ch.alpha1() * (ev.y - ch.lower()) + bk;
    d.omega_upper(i) = -ev.a - ch.alpha1() * (ev.y - ch.upper()) - bk;
    d.lambda_lower(i) = std::max(0.0, -d.omega_lower(i));
    d.lambda_upper(i) = std::max(0.0, -d.omega_upper(i));
  }

  const Vector mu = d.lambda_lower - d.lambda_upper;
  d.k_cbf = B.partialPivLu().solve(mu);
  d.u_star = k_d + d.k_cbf;
  detail::fill_slacks(channels, evals, d.u_star, d.slack_lower, d.slack_upper);

  for (int i = 0; i < m; ++i) {
    if (d.lambda_lower(i) > 0.0) d.active_set.push_back({i, Side::lower});
    if (d.lambda_upper(i) > 0.0) d.active_set.push_back({i, Side::upper});
  }
  return d;
}

// Left-hand sides of the 2m constraints at u, interleaved (lower_i, upper_i).
inline Vector constraint_slacks(std::span<const OutputChannel> channels, const SystemModel& model,
                                const Vector& x, const Vector& u) {
  detail::check_channel_count(channels, model);
  std::vector<EcbfEvaluation> evals;
  for (const auto& ch : channels) evals.push_back(evaluate_channel(ch, x));
  Vector lower, upper;
  detail::fill_slacks(channels, evals, u, lower, upper);
  Vector out(2 * lower.size());
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    out(2 * i) = lower(i);
    out(2 * i + 1) = upper(i);
  }
  return out;
}

struct GramCheck {
  double max_deviation = 0.0;  // max_{i,j} |b_i^T G^{-1} b_j - delta_ij|
  double gram_condition = 0.0;
  double sigma_min = 0.0;
};

// Forms G = B^T B explicitly so the check is independent of the B^{-1} route.
inline GramCheck gram_orthogonality_check(const SystemModel& model, const Vector& x) {
  const auto dm = decoupling_matrix(model, x);
  const Matrix G = dm.B.transpose() * dm.B;
  const Matrix Ginv_Bt = G.ldlt().solve(dm.B.transpose());
  const Matrix M = dm.B * Ginv_Bt;
  GramCheck out;
  out.max_deviation = (M - Matrix::Identity(M.rows(), M.cols())).cwiseAbs().maxCoeff();
  out.gram_condition = dm.condition * dm.condition;
  out.sigma_min = dm.sigma_min;
  return out;
}

}  // namespace boxcbf
