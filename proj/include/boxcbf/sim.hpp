#pragma once

// Fixed-step closed-loop simulation with the closed-form filter applied at
// every step (zero-order hold over dt), plus the forward-invariance audit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "boxcbf/cbf_core.hpp"
#include "boxcbf/filter.hpp"
#include "boxcbf/models.hpp"

namespace boxcbf::sim {

enum class Integrator { rk4, euler };

inline Vector integrate_step(const SystemModel& plant, const Vector& x, const Vector& u, double dt,
                             Integrator method = Integrator::rk4) {
  if (method == Integrator::euler) return x + dt * plant.dynamics(x, u);
  const Vector k1 = plant.dynamics(x, u);
  const Vector k2 = plant.dynamics(x + 0.5 * dt * k1, u);
  const Vector k3 = plant.dynamics(x + 0.5 * dt * k2, u);
  const Vector k4 = plant.dynamics(x + dt * k3, u);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Piecewise-constant targets. With period > 0 the list repeats every period
// seconds; segment ids keep increasing across repetitions.
struct SetpointSchedule {
  std::vector<double> times;
  std::vector<Vector> targets;
  double period = 0.0;

  void validate() const {
    if (times.empty() || times.size() != targets.size()) {
      throw ConstructionError("setpoints: need at least one (time, target) pair");
    }
    if (times.front() != 0.0) throw ConstructionError("setpoints: first setpoint must start at t = 0");
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (!(times[i] > times[i - 1])) throw ConstructionError("setpoints: times must increase");
    }
    if (period < 0.0 || (period > 0.0 && !(period > times.back()))) {
      throw ConstructionError("setpoints: period must exceed the last setpoint time");
    }
  }

  // (segment id, index into targets)
  std::pair<long, std::size_t> locate(double t) const {
    long cycle = 0;
    double local = t;
    if (period > 0.0) {
      cycle = static_cast<long>(std::floor(t / period));
      local = t - static_cast<double>(cycle) * period;
    }
    std::size_t idx = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (local >= times[i]) idx = i;
    }
    return {cycle * static_cast<long>(times.size()) + static_cast<long>(idx), idx};
  }

  const Vector& target(double t) const { return targets[locate(t).second]; }
  long segment(double t) const { return locate(t).first; }
};

struct ChannelSpec {
  std::string name;
  double lower = 0.0;
  double upper = 0.0;
  std::vector<double> roots;
};

struct NominalGains {
  double kp = 4.0;
  double kd = 4.0;
  // Horizontal position loop of the drone controller (produces the attitude reference).
  double kp_x = 4.0;
  double kd_x = 4.0;
};

struct Scenario {
  std::string model = "planar_drone";  // planar_drone | double_integrator | drone_with_rom
  double gravity = models::kDefaultGravity;
  double theta_margin = 0.01;
  models::RomAdapterParams adapter;
  std::vector<ChannelSpec> channels;
  NominalGains nominal;
  SetpointSchedule setpoints;
  Vector x0;
  double t_final = 20.0;
  double dt = 1e-3;
  Integrator integrator = Integrator::rk4;
};

// Everything the loop needs: the integrated plant, the model the filter is
// designed on, and the maps between them. For the plain models the maps are
// identities.
struct ClosedLoop {
  SystemModel plant;
  SystemModel filter_model;
  std::vector<OutputChannel> channels;
  std::function<Vector(const Vector&)> to_filter_state;
  std::function<Vector(const Vector& filter_state, double t)> nominal;
  std::function<Vector(const Vector& u_star, const Vector& plant_state)> to_plant_input;
  std::function<Vector(double t)> output_reference;  // y_d(t)
};

// Cascaded setpoint controller for the drone: a PD law on z with gravity
// feedforward through F, and a PD law on theta whose reference comes from a
// horizontal position loop.
inline Vector drone_setpoint_controller(const Vector& x, const Vector& target, const NominalGains& k,
                                        double g) {
  using namespace models::drone;
  const double az = k.kp * (target(kZ) - x(kZ)) - k.kd * x(kZdot);
  const double ax = k.kp_x * (target(kX) - x(kX)) - k.kd_x * x(kXdot);
  const double thrust = (g + az) / std::cos(x(kTheta));
  const double theta_ref = std::atan2(-ax, g);
  const double moment = k.kp * (theta_ref - x(kTheta)) - k.kd * x(kThetadot);
  return Vector{{thrust, moment}};
}

// PD tracker for the double integrator with gravity compensation on v_z.
inline Vector double_integrator_pd(const Vector& s, const Vector& target_xz, const NominalGains& k,
                                   double g) {
  using namespace models::rom;
  return Vector{{k.kp * (target_xz(0) - s(kX)) - k.kd * s(kXdot),
                 g + k.kp * (target_xz(1) - s(kZ)) - k.kd * s(kZdot)}};
}

inline std::vector<OutputChannel> make_channels(const SystemModel& model,
                                                const std::vector<ChannelSpec>& specs) {
  std::vector<OutputChannel> out;
  for (const auto& ev : model.outputs) {
    const auto it = std::find_if(specs.begin(), specs.end(),
                                 [&](const ChannelSpec& s) { return s.name == ev.name; });
    if (it == specs.end()) {
      throw ConstructionError("model '" + model.name + "' requires channel '" + ev.name + "'");
    }
    out.emplace_back(ev, it->lower, it->upper, it->roots);
  }
  for (const auto& s : specs) {
    if (model.output_index(s.name) < 0) {
      throw ConstructionError("channel '" + s.name + "' is not an output of '" + model.name + "'");
    }
  }
  return out;
}

inline int plant_state_dim(const std::string& model) {
  if (model == "double_integrator") return 4;
  if (model == "planar_drone" || model == "drone_with_rom") return 6;
  throw ConstructionError("unknown model '" + model + "'");
}

inline ClosedLoop build_closed_loop(const Scenario& sc) {
  ClosedLoop loop;
  const double g = sc.gravity;
  const auto schedule = sc.setpoints;
  const auto gains = sc.nominal;
  auto identity = [](const Vector& x) { return x; };

  if (sc.model == "planar_drone") {
    loop.plant = models::planar_drone_model({g, sc.theta_margin});
    loop.filter_model = loop.plant;
    loop.to_filter_state = identity;
    loop.nominal = [schedule, gains, g](const Vector& x, double t) {
      return drone_setpoint_controller(x, schedule.target(t), gains, g);
    };
    loop.to_plant_input = [](const Vector& u, const Vector&) { return u; };
    loop.output_reference = [schedule](double t) {
      const Vector& tg = schedule.target(t);
      return Vector{{tg(models::drone::kZ), tg(models::drone::kTheta)}};
    };
  } else if (sc.model == "double_integrator" || sc.model == "drone_with_rom") {
    const bool full = sc.model == "drone_with_rom";
    loop.filter_model = models::double_integrator_model({g});
    // Targets are given in plant coordinates; both layouts start with (x, z).
    loop.nominal = [schedule, gains, g](const Vector& s, double t) {
      return double_integrator_pd(s, schedule.target(t).head(2), gains, g);
    };
    loop.output_reference = [schedule](double t) -> Vector { return schedule.target(t).head(2); };
    if (full) {
      loop.plant = models::planar_drone_model({g, sc.theta_margin});
      loop.to_filter_state = [](const Vector& x) { return models::drone_to_rom_state(x); };
      const auto adapter = sc.adapter;
      adapter.validate();
      loop.to_plant_input = [adapter](const Vector& v, const Vector& x) {
        const auto cmd = models::rom_to_drone_adapter(v, x, adapter);
        return Vector{{cmd.thrust, cmd.moment}};
      };
    } else {
      loop.plant = loop.filter_model;
      loop.to_filter_state = identity;
      loop.to_plant_input = [](const Vector& u, const Vector&) { return u; };
    }
  } else {
    throw ConstructionError("unknown model '" + sc.model + "'");
  }
  loop.channels = make_channels(loop.filter_model, sc.channels);
  return loop;
}

inline void validate_scenario(const Scenario& sc) {
  if (!(sc.dt > 0.0)) throw ConstructionError("dt must be positive");
  if (!(sc.t_final >= sc.dt)) throw ConstructionError("t_final must be at least dt");
  sc.setpoints.validate();
  const int n = plant_state_dim(sc.model);
  if (sc.x0.size() != n) {
    throw ConstructionError("x0 must have " + std::to_string(n) + " entries for '" + sc.model + "'");
  }
  for (const auto& tg : sc.setpoints.targets) {
    if (tg.size() != n) {
      throw ConstructionError("setpoint targets must have " + std::to_string(n) + " entries");
    }
  }
}

// ---------------------------------------------------------------------------

enum class SimStatus { completed, region_exit, diverged, rank_failure };

inline const char* to_string(SimStatus s) {
  switch (s) {
    case SimStatus::completed: return "completed";
    case SimStatus::region_exit: return "region_exit";
    case SimStatus::diverged: return "diverged";
    case SimStatus::rank_failure: return "rank_failure";
  }
  return "unknown";
}

struct TraceStep {
  double t = 0.0;
  long segment = 0;
  Vector state;         // plant state
  Vector filter_state;  // state the filter is evaluated on
  Vector y;
  Vector y_d;
  Vector error;  // y - y_d
  FilterDecision decision;
  Vector plant_input;
  std::vector<Vector> psi_lower;  // per channel, levels 0..r-1
  std::vector<Vector> psi_upper;
  double sup_kcbf = 0.0;  // running sup of ||k_cbf|| up to this step
};

struct SimTrace {
  std::vector<TraceStep> steps;
  double dt = 0.0;
  SimStatus status = SimStatus::completed;
  std::string message;
  bool x0_in_safe_set = true;
  std::vector<std::string> channel_names;
  std::vector<int> rel_degrees;
  std::vector<double> alpha1;
  std::vector<double> lower;
  std::vector<double> upper;

  bool completed() const noexcept { return status == SimStatus::completed; }
  int input_dim() const noexcept { return static_cast<int>(channel_names.size()); }
};

inline SimTrace simulate(const ClosedLoop& loop, const Vector& x0, double t_final, double dt,
                         Integrator method = Integrator::rk4,
                         const std::function<long(double)>& segment_of = {}) {
  SimTrace trace;
  trace.dt = dt;
  for (const auto& ch : loop.channels) {
    trace.channel_names.push_back(ch.name());
    trace.rel_degrees.push_back(ch.rel_degree());
    trace.alpha1.push_back(ch.alpha1());
    trace.lower.push_back(ch.lower());
    trace.upper.push_back(ch.upper());
  }

  const long n_steps = std::lround(t_final / dt);
  trace.steps.reserve(static_cast<std::size_t>(n_steps) + 1);
  Vector x = x0;
  double sup_kcbf = 0.0;

  try {
    const Vector xf0 = loop.to_filter_state(x0);
    trace.x0_in_safe_set = loop.plant.in_valid_region(x0) &&
                           safe_set_membership(loop.channels, xf0).member;
  } catch (const RegionError&) {
    trace.x0_in_safe_set = false;
  }

  for (long k = 0; k <= n_steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (!x.allFinite()) {
      trace.status = SimStatus::diverged;
      trace.message = "non-finite state at t = " + std::to_string(t);
      break;
    }
    if (!loop.plant.in_valid_region(x)) {
      trace.status = SimStatus::region_exit;
      trace.message = "state left the valid region at t = " + std::to_string(t);
      break;
    }

    TraceStep step;
    step.t = t;
    step.segment = segment_of ? segment_of(t) : 0;
    step.state = x;
    step.filter_state = loop.to_filter_state(x);
    try {
      step.decision = closed_form_filter(loop.channels, loop.filter_model, step.filter_state,
                                         loop.nominal(step.filter_state, t));
    } catch (const RegionError& e) {
      trace.status = SimStatus::region_exit;
      trace.message = e.what();
      break;
    } catch (const RankError& e) {
      trace.status = SimStatus::rank_failure;
      trace.message = e.what();
      break;
    }

    const auto m = static_cast<Eigen::Index>(loop.channels.size());
    step.y.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto ev = evaluate_channel(loop.channels[static_cast<std::size_t>(i)], step.filter_state);
      step.y(i) = ev.y;
      step.psi_lower.push_back(ev.psi_lower);
      step.psi_upper.push_back(ev.psi_upper);
    }
    step.y_d = loop.output_reference(t);
    step.error = step.y - step.y_d;
    sup_kcbf = std::max(sup_kcbf, step.decision.k_cbf.norm());
    step.sup_kcbf = sup_kcbf;
    step.plant_input = loop.to_plant_input(step.decision.u_star, x);

    trace.steps.push_back(std::move(step));
    if (k == n_steps) break;
    x = integrate_step(loop.plant, x, trace.steps.back().plant_input, dt, method);
  }
  return trace;
}

inline SimTrace simulate(const Scenario& sc) {
  validate_scenario(sc);
  const auto loop = build_closed_loop(sc);
  const auto schedule = sc.setpoints;
  return simulate(loop, sc.x0, sc.t_final, sc.dt, sc.integrator,
                  [schedule](double t) { return schedule.segment(t); });
}

// ---------------------------------------------------------------------------

inline double invariance_tolerance(double dt) { return std::max(1e-6, 1e-3 * dt); }

struct AuditOptions {
  std::optional<double> tol;  // defaults to invariance_tolerance(dt)
  double complementarity_tol = 1e-8;
};

struct ChannelAudit {
  std::string name;
  Vector min_psi_lower;  // per level, min over time
  Vector min_psi_upper;
  double min_slack_lower = std::numeric_limits<double>::infinity();
  double min_slack_upper = std::numeric_limits<double>::infinity();
  double max_lambda_lower = 0.0;
  double max_lambda_upper = 0.0;
};

struct AuditReport {
  std::vector<ChannelAudit> channels;
  double tol = 0.0;
  double min_h = std::numeric_limits<double>::infinity();
  double min_psi = std::numeric_limits<double>::infinity();
  double min_slack = std::numeric_limits<double>::infinity();
  double max_complementarity = 0.0;
  std::size_t max_active = 0;
  std::size_t both_sides_active_steps = 0;
  std::size_t steps = 0;
  std::size_t steps_with_two_active = 0;
  bool completed = true;
  bool hypothesis_violated = false;  // x0 outside S: failure is expected, not an error
  bool invariance_ok = false;
  bool structure_ok = false;
  bool pass() const noexcept { return completed && invariance_ok && structure_ok; }
};

inline AuditReport audit_invariance(const SimTrace& trace, const AuditOptions& opt = {}) {
  AuditReport rep;
  rep.tol = opt.tol.value_or(invariance_tolerance(trace.dt));
  rep.completed = trace.completed();
  rep.hypothesis_violated = !trace.x0_in_safe_set;
  rep.steps = trace.steps.size();
  const auto m = trace.channel_names.size();
  for (std::size_t i = 0; i < m; ++i) {
    ChannelAudit ca;
    ca.name = trace.channel_names[i];
    const int r = trace.rel_degrees[i];
    ca.min_psi_lower = Vector::Constant(r, std::numeric_limits<double>::infinity());
    ca.min_psi_upper = Vector::Constant(r, std::numeric_limits<double>::infinity());
    rep.channels.push_back(std::move(ca));
  }

  for (const auto& s : trace.steps) {
    const auto& d = s.decision;
    for (std::size_t i = 0; i < m; ++i) {
      auto& ca = rep.channels[i];
      const auto ii = static_cast<Eigen::Index>(i);
      ca.min_psi_lower = ca.min_psi_lower.cwiseMin(s.psi_lower[i]);
      ca.min_psi_upper = ca.min_psi_upper.cwiseMin(s.psi_upper[i]);
      ca.min_slack_lower = std::min(ca.min_slack_lower, d.slack_lower(ii));
      ca.min_slack_upper = std::min(ca.min_slack_upper, d.slack_upper(ii));
      ca.max_lambda_lower = std::max(ca.max_lambda_lower, d.lambda_lower(ii));
      ca.max_lambda_upper = std::max(ca.max_lambda_upper, d.lambda_upper(ii));
      rep.min_h = std::min({rep.min_h, s.psi_lower[i](0), s.psi_upper[i](0)});
      if (d.lambda_lower(ii) > 0.0 && d.lambda_upper(ii) > 0.0) ++rep.both_sides_active_steps;
    }
    rep.max_complementarity =
        std::max(rep.max_complementarity, d.lambdas().cwiseProduct(d.slacks()).cwiseAbs().maxCoeff());
    rep.max_active = std::max(rep.max_active, d.active_set.size());
    if (d.active_set.size() == 2) ++rep.steps_with_two_active;
  }
  for (const auto& ca : rep.channels) {
    rep.min_psi = std::min({rep.min_psi, ca.min_psi_lower.minCoeff(), ca.min_psi_upper.minCoeff()});
    rep.min_slack = std::min({rep.min_slack, ca.min_slack_lower, ca.min_slack_upper});
  }
  rep.invariance_ok = rep.min_h >= -rep.tol && rep.min_psi >= -rep.tol && rep.min_slack >= -rep.tol;
  rep.structure_ok = rep.max_active <= m && rep.both_sides_active_steps == 0 &&
                     rep.max_complementarity <= opt.complementarity_tol;
  return rep;
}

// Intervals (in steps) during which exactly `count` multipliers are positive.
struct ActiveInterval {
  double t_begin = 0.0;
  double t_end = 0.0;
  std::size_t steps = 0;
};

inline std::vector<ActiveInterval> intervals_with_active_count(const SimTrace& trace,
                                                               std::size_t count) {
  std::vector<ActiveInterval> out;
  bool open = false;
  for (const auto& s : trace.steps) {
    const bool hit = s.decision.active_set.size() == count;
    if (hit && !open) {
      out.push_back({s.t, s.t, 0});
      open = true;
    }
    if (hit) {
      out.back().t_end = s.t;
      ++out.back().steps;
    }
    if (!hit) open = false;
  }
  return out;
}

}  // namespace boxcbf::sim
