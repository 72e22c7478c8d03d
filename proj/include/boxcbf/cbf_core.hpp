#pragma once

// Exponential-CBF bookkeeping for box constraints on the outputs of a square
// control-affine system  xdot = f(x) + g(x) u.
//
// Each output y_i with relative degree r_i and bounds [lower_i, upper_i] is
// encoded by the pair  h_lower = y_i - lower_i,  h_upper = upper_i - y_i.
// The ECBF gains alpha_i are derived from user-supplied negative real roots.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "boxcbf/errors.hpp"

namespace boxcbf {

using StateFn = std::function<double(const Vector&)>;
using VectorFn = std::function<Vector(const Vector&)>;
using MatrixFn = std::function<Matrix(const Vector&)>;
using RegionFn = std::function<bool(const Vector&)>;

// Analytic Lie-derivative data for one output. lie_f_chain returns
// (L_f y, L_f^2 y, ..., L_f^r y); b_row returns (L_g L_f^{r-1} y)^T.
struct OutputChannelEvaluator {
  std::string name;
  int rel_degree = 1;
  StateFn y;
  VectorFn lie_f_chain;
  VectorFn b_row;
  RegionFn in_valid_region = [](const Vector&) { return true; };
};

struct SystemModel {
  std::string name;
  int state_dim = 0;
  int input_dim = 0;
  VectorFn drift;
  MatrixFn control_matrix;
  std::vector<OutputChannelEvaluator> outputs;
  RegionFn in_valid_region = [](const Vector&) { return true; };

  std::vector<std::string> state_names;
  std::vector<std::string> input_names;
  // Box used when drawing random states; the region predicate still applies.
  Vector sample_lower;
  Vector sample_upper;

  Vector dynamics(const Vector& x, const Vector& u) const {
    return drift(x) + control_matrix(x) * u;
  }

  int output_index(const std::string& output_name) const {
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      if (outputs[i].name == output_name) return static_cast<int>(i);
    }
    return -1;
  }

  void validate() const {
    if (state_dim <= 0 || input_dim <= 0) {
      throw ConstructionError("model '" + name + "': dimensions must be positive");
    }
    if (static_cast<int>(outputs.size()) != input_dim) {
      throw ConstructionError("model '" + name + "': output count must equal input_dim");
    }
    if (!drift || !control_matrix) {
      throw ConstructionError("model '" + name + "': drift and control_matrix are required");
    }
    for (const auto& out : outputs) {
      if (out.rel_degree < 1 || !out.y || !out.lie_f_chain || !out.b_row) {
        throw ConstructionError("model '" + name + "': output '" + out.name + "' is incomplete");
      }
    }
  }
};

// Coefficients alpha = (alpha_1, ..., alpha_r) of
//   s^r + alpha_r s^{r-1} + ... + alpha_1 = prod_k (s - nu_k).
inline Vector alpha_from_roots(std::span<const double> roots) {
  if (roots.empty()) throw ConstructionError("alpha_from_roots: at least one root is required");
  for (std::size_t k = 0; k < roots.size(); ++k) {
    if (!std::isfinite(roots[k]) || !(roots[k] < 0.0)) {
      std::ostringstream os;
      os << "alpha_from_roots: root " << k << " = " << roots[k]
         << " must be finite and strictly negative";
      throw ConstructionError(os.str());
    }
  }
  // poly[k] is the coefficient of s^k.
  std::vector<double> poly{1.0};
  for (double nu : roots) {
    std::vector<double> next(poly.size() + 1, 0.0);
    for (std::size_t k = 0; k < poly.size(); ++k) {
      next[k + 1] += poly[k];
      next[k] -= nu * poly[k];
    }
    poly = std::move(next);
  }
  const auto r = static_cast<Eigen::Index>(roots.size());
  Vector alpha(r);
  for (Eigen::Index k = 0; k < r; ++k) alpha(k) = poly[static_cast<std::size_t>(k)];
  return alpha;
}

// Row i holds c_{i,k} with psi_i = sum_k c_{i,k} L_f^k h, i.e. the ascending
// coefficients of prod_{j<=i} (s - nu_j). `levels` rows are produced; the
// default r rows stop before the input-dependent level psi_r.
inline Matrix psi_coefficients(std::span<const double> roots, int levels = -1) {
  const int r = static_cast<int>(roots.size());
  if (levels < 0) levels = r;
  if (levels > r + 1) throw ConstructionError("psi_coefficients: at most r+1 levels exist");
  for (double nu : roots) {
    if (!std::isfinite(nu)) throw ConstructionError("psi_coefficients: non-finite root");
  }
  Matrix coeffs = Matrix::Zero(levels, levels);
  if (levels == 0) return coeffs;
  coeffs(0, 0) = 1.0;
  for (int i = 1; i < levels; ++i) {
    const double nu = roots[static_cast<std::size_t>(i - 1)];
    for (int k = 0; k <= i; ++k) {
      const double shifted = k > 0 ? coeffs(i - 1, k - 1) : 0.0;
      const double scaled = k < i ? coeffs(i - 1, k) : 0.0;
      coeffs(i, k) = shifted - nu * scaled;
    }
  }
  return coeffs;
}

// One box-constrained output with its ECBF parameters. Immutable.
class OutputChannel {
 public:
  OutputChannel(OutputChannelEvaluator evaluator, double lower, double upper,
                std::vector<double> roots)
      : evaluator_(std::move(evaluator)), lower_(lower), upper_(upper), roots_(std::move(roots)) {
    const std::string label = "channel '" + evaluator_.name + "'";
    if (!std::isfinite(lower_) || !std::isfinite(upper_)) {
      throw ConstructionError(label + ": bounds must be finite");
    }
    if (!(upper_ > lower_)) {
      std::ostringstream os;
      os << label << ": upper bound " << upper_ << " must exceed lower bound " << lower_;
      throw ConstructionError(os.str());
    }
    if (static_cast<int>(roots_.size()) != evaluator_.rel_degree) {
      std::ostringstream os;
      os << label << ": expected " << evaluator_.rel_degree << " roots (relative degree), got "
         << roots_.size();
      throw ConstructionError(os.str());
    }
    try {
      alpha_ = alpha_from_roots(roots_);
    } catch (const ConstructionError& e) {
      throw ConstructionError(label + ": " + e.what());
    }
    if (!(alpha_(0) > 0.0)) throw ConstructionError(label + ": alpha_1 must be positive");
    psi_ = psi_coefficients(roots_);
  }

  const std::string& name() const noexcept { return evaluator_.name; }
  const OutputChannelEvaluator& evaluator() const noexcept { return evaluator_; }
  int rel_degree() const noexcept { return evaluator_.rel_degree; }
  double lower() const noexcept { return lower_; }
  double upper() const noexcept { return upper_; }
  const std::vector<double>& roots() const noexcept { return roots_; }
  const Vector& alpha() const noexcept { return alpha_; }
  double alpha1() const noexcept { return alpha_(0); }
  const Matrix& psi_matrix() const noexcept { return psi_; }

 private:
  OutputChannelEvaluator evaluator_;
  double lower_;
  double upper_;
  std::vector<double> roots_;
  Vector alpha_;
  Matrix psi_;
};

struct EcbfEvaluation {
  double y = 0.0;
  double h_lower = 0.0;
  double h_upper = 0.0;
  Vector H_lower;  // (h_lower, L_f y, ..., L_f^{r-1} y)
  Vector H_upper;  // (h_upper, -L_f y, ..., -L_f^{r-1} y)
  double a = 0.0;
  Vector b;
  Vector psi_lower;  // psi_0 .. psi_{r-1}
  Vector psi_upper;
};

inline EcbfEvaluation evaluate_channel(const OutputChannel& channel, const Vector& x) {
  const auto& ev = channel.evaluator();
  if (!x.allFinite()) throw RegionError("channel '" + channel.name() + "': non-finite state");
  if (!ev.in_valid_region(x)) {
    throw RegionError("channel '" + channel.name() + "': state outside the valid region");
  }
  const int r = channel.rel_degree();
  const Vector chain = ev.lie_f_chain(x);
  if (chain.size() != r) {
    throw ConstructionError("channel '" + channel.name() + "': lie_f_chain length mismatch");
  }

  EcbfEvaluation out;
  out.y = ev.y(x);
  out.h_lower = out.y - channel.lower();
  out.h_upper = channel.upper() - out.y;
  out.H_lower.resize(r);
  out.H_upper.resize(r);
  out.H_lower(0) = out.h_lower;
  out.H_upper(0) = out.h_upper;
  for (int j = 1; j < r; ++j) {
    out.H_lower(j) = chain(j - 1);
    out.H_upper(j) = -chain(j - 1);
  }

  const Vector& alpha = channel.alpha();
  out.a = chain(r - 1);
  for (int j = 1; j < r; ++j) out.a += alpha(j) * chain(j - 1);
  out.b = ev.b_row(x);

  const Matrix& c = channel.psi_matrix();
  out.psi_lower = c.triangularView<Eigen::Lower>() * out.H_lower;
  out.psi_upper = c.triangularView<Eigen::Lower>() * out.H_upper;
  return out;
}

inline constexpr double kSingularTolerance = 1e-9;

struct DecouplingMatrix {
  Matrix B;
  double sigma_min = 0.0;
  double condition = 0.0;
};

inline double smallest_singular_value(const Matrix& m, double* condition = nullptr) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (condition) {
    *condition = smin > 0.0 ? s(0) / smin : std::numeric_limits<double>::infinity();
  }
  return smin;
}

// Stacks b_i(x)^T; the region predicate is not consulted here.
inline DecouplingMatrix decoupling_matrix(const SystemModel& model, const Vector& x,
                                          double singular_tol = kSingularTolerance) {
  const int m = model.input_dim;
  DecouplingMatrix out;
  out.B.resize(m, m);
  for (int i = 0; i < m; ++i) {
    const Vector b = model.outputs[static_cast<std::size_t>(i)].b_row(x);
    if (b.size() != m) throw ConstructionError("model '" + model.name + "': b_row length mismatch");
    out.B.row(i) = b.transpose();
  }
  out.sigma_min = smallest_singular_value(out.B, &out.condition);
  if (!(out.sigma_min >= singular_tol)) {
    std::ostringstream os;
    os << "decoupling matrix of '" << model.name << "' is singular (sigma_min = " << out.sigma_min
       << ")";
    throw RankError(os.str(), out.sigma_min);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Numeric relative-degree audit.

struct RelDegreeOptions {
  double fd_step = 1e-5;
  double tol = 1e-6;
  double singular_tol = kSingularTolerance;
};

enum class RelDegreeFailure {
  none,
  outside_region,
  singular_decoupling,
  input_in_lower_derivative,  // L_g L_f^j y != 0 for some j < r-1
  chain_mismatch,             // lie_f_chain inconsistent with d/dt along f
  b_row_mismatch,             // b_row inconsistent with d/dt along g
};

inline const char* to_string(RelDegreeFailure f) {
  switch (f) {
    case RelDegreeFailure::none: return "ok";
    case RelDegreeFailure::outside_region: return "outside valid region (decoupling not certified)";
    case RelDegreeFailure::singular_decoupling: return "singular decoupling matrix";
    case RelDegreeFailure::input_in_lower_derivative: return "input appears below relative degree";
    case RelDegreeFailure::chain_mismatch: return "lie_f_chain mismatch";
    case RelDegreeFailure::b_row_mismatch: return "b_row mismatch";
  }
  return "unknown";
}

struct RelDegreeSample {
  Vector state;
  bool pass = true;
  RelDegreeFailure failure = RelDegreeFailure::none;
  double sigma_min = 0.0;
  double worst_residual = 0.0;  // scaled residual over all FD checks
  int worst_channel = -1;
  int worst_order = -1;
};

struct RelDegreeReport {
  std::vector<RelDegreeSample> samples;
  std::size_t failures = 0;
  bool all_pass() const noexcept { return failures == 0; }
  const RelDegreeSample* worst() const {
    const RelDegreeSample* w = nullptr;
    for (const auto& s : samples) {
      if (!s.pass && (!w || s.worst_residual > w->worst_residual)) w = &s;
    }
    return w;
  }
};

namespace detail {

// L_f^j y for j = 0..r (index 0 is y itself).
inline double lie_level(const OutputChannelEvaluator& ev, const Vector& x, int j) {
  if (j == 0) return ev.y(x);
  return ev.lie_f_chain(x)(j - 1);
}

inline double directional_fd(const OutputChannelEvaluator& ev, const Vector& x, int level,
                             const Vector& dir, double h) {
  return (lie_level(ev, x + h * dir, level) - lie_level(ev, x - h * dir, level)) / (2.0 * h);
}

}  // namespace detail

inline RelDegreeSample verify_relative_degree_at(const SystemModel& model, const Vector& x,
                                                 const RelDegreeOptions& opt = {}) {
  RelDegreeSample s;
  s.state = x;
  auto fail = [&s](RelDegreeFailure f) {
    if (s.pass) s.failure = f;
    s.pass = false;
  };

  const Vector f = model.drift(x);
  const Matrix g = model.control_matrix(x);
  for (std::size_t i = 0; i < model.outputs.size(); ++i) {
    const auto& ev = model.outputs[i];
    const int r = ev.rel_degree;
    const Vector chain = ev.lie_f_chain(x);
    const double scale = 1.0 + std::max(std::abs(ev.y(x)), chain.cwiseAbs().maxCoeff());
    auto record = [&](double residual, int order, RelDegreeFailure kind) {
      const double scaled = residual / scale;
      if (scaled > s.worst_residual) {
        s.worst_residual = scaled;
        s.worst_channel = static_cast<int>(i);
        s.worst_order = order;
      }
      if (scaled > opt.tol) fail(kind);
    };

    for (int j = 0; j < r; ++j) {
      const double along_f = detail::directional_fd(ev, x, j, f, opt.fd_step);
      record(std::abs(along_f - chain(j)), j, RelDegreeFailure::chain_mismatch);
    }
    const Vector b = ev.b_row(x);
    for (int k = 0; k < model.input_dim; ++k) {
      const Vector gk = g.col(k);
      for (int j = 0; j + 1 < r; ++j) {
        record(std::abs(detail::directional_fd(ev, x, j, gk, opt.fd_step)), j,
               RelDegreeFailure::input_in_lower_derivative);
      }
      const double top = detail::directional_fd(ev, x, r - 1, gk, opt.fd_step);
      record(std::abs(top - b(k)), r - 1, RelDegreeFailure::b_row_mismatch);
    }
  }

  try {
    s.sigma_min = decoupling_matrix(model, x, opt.singular_tol).sigma_min;
  } catch (const RankError& e) {
    s.sigma_min = e.sigma_min();
    fail(RelDegreeFailure::singular_decoupling);
  }
  if (!model.in_valid_region(x)) fail(RelDegreeFailure::outside_region);
  return s;
}

inline RelDegreeReport verify_relative_degree(const SystemModel& model,
                                              std::span<const Vector> samples,
                                              const RelDegreeOptions& opt = {}) {
  if (!(opt.fd_step > 0.0)) throw ConstructionError("verify_relative_degree: fd_step must be > 0");
  RelDegreeReport report;
  report.samples.reserve(samples.size());
  for (const auto& x : samples) {
    report.samples.push_back(verify_relative_degree_at(model, x, opt));
    if (!report.samples.back().pass) ++report.failures;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Safe-set membership over the state-only levels psi_0 .. psi_{r-1}.

struct ChannelMembership {
  bool lower_member = false;
  bool upper_member = false;
  double lower_margin = 0.0;  // min_j psi_lower_j
  double upper_margin = 0.0;
  Vector psi_lower;
  Vector psi_upper;
};

struct Membership {
  std::vector<ChannelMembership> channels;
  bool member = true;
  double margin = std::numeric_limits<double>::infinity();
};

inline Membership safe_set_membership(std::span<const OutputChannel> channels, const Vector& x) {
  Membership out;
  for (const auto& ch : channels) {
    const auto ev = evaluate_channel(ch, x);
    ChannelMembership cm;
    cm.psi_lower = ev.psi_lower;
    cm.psi_upper = ev.psi_upper;
    cm.lower_margin = ev.psi_lower.minCoeff();
    cm.upper_margin = ev.psi_upper.minCoeff();
    cm.lower_member = cm.lower_margin >= 0.0;
    cm.upper_member = cm.upper_margin >= 0.0;
    out.member = out.member && cm.lower_member && cm.upper_member;
    out.margin = std::min({out.margin, cm.lower_margin, cm.upper_margin});
    out.channels.push_back(std::move(cm));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Randomized check of the Farkas-type compatibility condition restricted to the
// kernel of sum_j lambda_j d_j, which (b_i independent) forces
// lambda_lower_i == lambda_upper_i.

struct CompatibilityReport {
  std::size_t trials = 0;
  std::size_t violations = 0;           // sum lambda c < 0 on the kernel
  std::size_t identity_violations = 0;  // implementation bug signal
  double min_weighted_sum = std::numeric_limits<double>::infinity();
  double max_identity_error = 0.0;
  double max_kernel_residual = 0.0;
  Vector witness;  // 2m multipliers of the worst draw, interleaved (lower, upper)
  bool pass() const noexcept { return violations == 0 && identity_violations == 0; }
};

inline CompatibilityReport compatibility_certificate(std::span<const OutputChannel> channels,
                                                     const SystemModel& model, const Vector& x,
                                                     std::size_t trials, std::uint64_t seed = 0,
                                                     double identity_tol = 1e-10) {
  const int m = model.input_dim;
  if (static_cast<int>(channels.size()) != m) {
    throw ConstructionError("compatibility_certificate: need one channel per input");
  }
  decoupling_matrix(model, x);

  std::vector<EcbfEvaluation> evals;
  evals.reserve(channels.size());
  for (const auto& ch : channels) evals.push_back(evaluate_channel(ch, x));

  Vector c(2 * m);
  Matrix D(2 * m, m);
  for (int i = 0; i < m; ++i) {
    const auto& ch = channels[static_cast<std::size_t>(i)];
    const auto& ev = evals[static_cast<std::size_t>(i)];
    c(2 * i) = ev.a + ch.alpha1() * (ev.y - ch.lower());
    c(2 * i + 1) = -ev.a - ch.alpha1() * (ev.y - ch.upper());
    D.row(2 * i) = ev.b.transpose();
    D.row(2 * i + 1) = -ev.b.transpose();
  }

  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> magnitude(1.0);
  std::bernoulli_distribution zeroed(0.25);

  CompatibilityReport report;
  report.trials = trials;
  report.witness = Vector::Zero(2 * m);
  for (std::size_t t = 0; t < trials; ++t) {
    Vector lambda = Vector::Zero(2 * m);
    if (t > 0) {
      for (int i = 0; i < m; ++i) {
        const double v = zeroed(rng) ? 0.0 : magnitude(rng);
        lambda(2 * i) = v;
        lambda(2 * i + 1) = v;
      }
    }
    const double weighted = lambda.dot(c);
    double closed = 0.0;
    double scale = 1.0;
    for (int i = 0; i < m; ++i) {
      const auto& ch = channels[static_cast<std::size_t>(i)];
      closed += lambda(2 * i) * ch.alpha1() * (ch.upper() - ch.lower());
      scale += lambda(2 * i) * (std::abs(c(2 * i)) + std::abs(c(2 * i + 1)));
    }
    const double identity_error = std::abs(weighted - closed) / scale;
    report.max_identity_error = std::max(report.max_identity_error, identity_error);
    report.max_kernel_residual =
        std::max(report.max_kernel_residual, (D.transpose() * lambda).cwiseAbs().maxCoeff());
    if (identity_error > identity_tol) ++report.identity_violations;
    if (weighted < 0.0) ++report.violations;
    if (weighted < report.min_weighted_sum) {
      report.min_weighted_sum = weighted;
      report.witness = lambda;
    }
  }
  return report;
}

}  // namespace boxcbf
