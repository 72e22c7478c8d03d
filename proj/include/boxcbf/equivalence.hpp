#pragma once

// Randomized comparison of the closed-form filter against the enumeration
// oracle on (state, nominal input) pairs drawn from a model's valid region.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "boxcbf/cbf_core.hpp"
#include "boxcbf/filter.hpp"
#include "boxcbf/models.hpp"
#include "boxcbf/qp_oracle.hpp"
#include "boxcbf/sampling.hpp"

namespace boxcbf {

// Channels used by the verification commands for each bundled model.
inline std::vector<OutputChannel> default_channels(const SystemModel& model) {
  std::vector<OutputChannel> out;
  for (const auto& ev : model.outputs) {
    double lo = -1.0, hi = 1.0;
    if (ev.name == "z") lo = 0.0, hi = 2.0;
    out.emplace_back(ev, lo, hi, std::vector<double>(static_cast<std::size_t>(ev.rel_degree), -1.0));
  }
  return out;
}

inline SystemModel bundled_model(const std::string& name, double theta_margin = 0.01) {
  if (name == "planar_drone") return models::planar_drone_model({models::kDefaultGravity, theta_margin});
  if (name == "double_integrator") return models::double_integrator_model();
  throw ConstructionError("unknown model '" + name + "' (expected planar_drone or double_integrator)");
}

struct EquivalenceStats {
  std::size_t samples = 0;
  double max_relative_deviation = 0.0;  // |u_cf - u_qp| / (1 + |u_qp|)
  double max_absolute_deviation = 0.0;
  KktResiduals worst_kkt;               // closed-form decision, componentwise max
  KktResiduals worst_oracle_kkt;
  double max_pair_sum_error = 0.0;      // relative
  std::size_t case_iv_count = 0;        // omega_lower < 0 and omega_upper < 0
  std::size_t max_active = 0;
  std::size_t both_sides_active = 0;
  std::size_t active_set_mismatches = 0;
  Vector worst_state;
  Vector worst_kd;
};

inline void merge_max(KktResiduals& into, const KktResiduals& r) {
  into.stationarity = std::max(into.stationarity, r.stationarity);
  into.primal = std::max(into.primal, r.primal);
  into.dual = std::max(into.dual, r.dual);
  into.complementarity = std::max(into.complementarity, r.complementarity);
}

inline EquivalenceStats run_equivalence(const SystemModel& model,
                                        std::span<const OutputChannel> channels,
                                        std::size_t samples, std::uint64_t seed,
                                        double kd_bound = 20.0) {
  EquivalenceStats st;
  const int m = model.input_dim;
  for (std::size_t s = 0; s < samples; ++s) {
    auto rng = sample_rng(seed, s);
    const Vector x = sample_state(model, rng);
    const Vector k_d = uniform_in_box(Vector::Constant(m, -kd_bound), Vector::Constant(m, kd_bound), rng);

    const auto cf = closed_form_filter(channels, model, x, k_d);
    const auto inst = make_qp_instance(channels, model, x, k_d);
    const auto qp = solve_active_set_enumeration(inst);

    const double abs_dev = (cf.u_star - qp.u).norm();
    const double rel_dev = abs_dev / (1.0 + qp.u.norm());
    if (rel_dev >= st.max_relative_deviation) {
      st.max_relative_deviation = rel_dev;
      st.worst_state = x;
      st.worst_kd = k_d;
    }
    st.max_absolute_deviation = std::max(st.max_absolute_deviation, abs_dev);
    merge_max(st.worst_kkt, kkt_residuals(inst, cf.u_star, cf.lambdas()));
    merge_max(st.worst_oracle_kkt, kkt_residuals(inst, qp.u, qp.lambda));

    for (int i = 0; i < m; ++i) {
      const auto& ch = channels[static_cast<std::size_t>(i)];
      const double expected = ch.alpha1() * (ch.upper() - ch.lower());
      const double err = std::abs(cf.slack_lower(i) + cf.slack_upper(i) - expected) /
                         std::max(1.0, std::abs(expected));
      st.max_pair_sum_error = std::max(st.max_pair_sum_error, err);
      if (cf.omega_lower(i) < 0.0 && cf.omega_upper(i) < 0.0) ++st.case_iv_count;
      if (cf.lambda_lower(i) > 0.0 && cf.lambda_upper(i) > 0.0) ++st.both_sides_active;
    }
    st.max_active = std::max(st.max_active, cf.active_set.size());

    std::vector<int> cf_active;
    for (const auto& a : cf.active_set) cf_active.push_back(a.index());
    // The oracle may report a weakly active constraint (zero multiplier) either way.
    std::vector<int> qp_strict;
    for (int j : qp.active) {
      if (qp.lambda(j) > 1e-9) qp_strict.push_back(j);
    }
    std::vector<int> cf_strict;
    for (int j : cf_active) {
      if (cf.lambdas()(j) > 1e-9) cf_strict.push_back(j);
    }
    if (qp_strict != cf_strict) ++st.active_set_mismatches;
    ++st.samples;
  }
  return st;
}

}  // namespace boxcbf
