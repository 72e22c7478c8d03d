#include <catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <vector>

#include "boxcbf/sim.hpp"

using namespace boxcbf;
using namespace boxcbf::sim;
using Catch::Matchers::WithinAbs;

namespace {

Scenario golden_drone() {
  Scenario d;
  d.model = "planar_drone";
  d.channels = {{"z", 0.5, 2.0, {-1.0, -1.0}}, {"theta", -1.0, 1.0, {-1.0, -1.0}}};
  d.setpoints.times = {0.0, 5.0};
  d.setpoints.targets = {Vector{{1.0, 1.0, 0.0, 0.0, 0.0, 0.0}}, Vector{{-1.0, 0.2, 0.0, 0.0, 0.0, 0.0}}};
  d.setpoints.period = 10.0;
  d.x0 = Vector{{0.0, 1.0, 0.0, 0.0, 0.0, 0.0}};
  return d;
}

Scenario corners(const std::string& model) {
  Scenario s;
  s.model = model;
  s.channels = {{"x", -1.0, 1.0, {-1.0, -1.0}}, {"z", 0.0, 2.0, {-1.0, -1.0}}};
  s.setpoints.times = {0.0, 5.0, 10.0, 15.0};
  const double pts[4][2] = {{0.9, 1.85}, {-0.9, 0.15}, {0.9, 0.15}, {-0.9, 1.85}};
  const int n = plant_state_dim(model);
  for (const auto& p : pts) {
    Vector t = Vector::Zero(n);
    t(0) = p[0];
    t(1) = p[1];
    s.setpoints.targets.push_back(t);
  }
  s.x0 = Vector::Zero(n);
  s.x0(1) = 1.0;
  return s;
}

// Drone under constant thrust and moment: spins while translating, so no
// polynomial in t solves it and RK4 has a genuine truncation error.
Vector spinning_flight(double dt, double t_final, Integrator method) {
  const auto m = models::planar_drone_model({9.81, 0.0});
  const Vector u{{12.0, 0.8}};
  Vector x = Vector::Zero(6);
  const long n = std::lround(t_final / dt);
  for (long k = 0; k < n; ++k) x = integrate_step(m, x, u, dt, method);
  return x;
}

}  // namespace

TEST_CASE("integrator order") {
  const double T = 1.5;
  const double dts[] = {0.1, 0.05, 0.025};
  std::vector<double> err;
  for (double dt : dts) {
    err.push_back((spinning_flight(dt, T, Integrator::rk4) - spinning_flight(dt / 2, T, Integrator::rk4)).norm());
  }
  const double order1 = std::log2(err[0] / err[1]);
  const double order2 = std::log2(err[1] / err[2]);
  INFO("rk4 observed orders " << order1 << ", " << order2);
  CHECK(std::abs(order2 - 4.0) <= 0.5);

  std::vector<double> eerr;
  for (double dt : dts) {
    eerr.push_back((spinning_flight(dt, T, Integrator::euler) - spinning_flight(dt / 2, T, Integrator::euler)).norm());
  }
  CHECK(std::abs(std::log2(eerr[1] / eerr[2]) - 1.0) <= 0.3);
}

TEST_CASE("rk4 integrates free fall exactly") {
  const auto m = models::double_integrator_model();
  Vector x{{0.0, 10.0, 1.0, 2.0}};
  const double dt = 0.1;
  for (int k = 0; k < 20; ++k) x = integrate_step(m, x, Vector::Zero(2), dt);
  const double t = 2.0;
  CHECK_THAT(x(0), WithinAbs(1.0 * t, 1e-12));
  CHECK_THAT(x(1), WithinAbs(10.0 + 2.0 * t - 0.5 * 9.81 * t * t, 1e-12));
  CHECK_THAT(x(3), WithinAbs(2.0 - 9.81 * t, 1e-12));
}

TEST_CASE("setpoint schedule") {
  SetpointSchedule s;
  s.times = {0.0, 5.0};
  s.targets = {Vector::Constant(1, 1.0), Vector::Constant(1, 2.0)};
  s.period = 10.0;
  s.validate();
  CHECK(s.target(0.0)(0) == 1.0);
  CHECK(s.target(4.999)(0) == 1.0);
  CHECK(s.target(5.0)(0) == 2.0);
  CHECK(s.target(12.0)(0) == 1.0);
  CHECK(s.segment(0.0) == 0);
  CHECK(s.segment(5.0) == 1);
  CHECK(s.segment(10.0) == 2);
  CHECK(s.segment(17.0) == 3);

  SetpointSchedule once = s;
  once.period = 0.0;
  CHECK(once.target(100.0)(0) == 2.0);
  CHECK(once.segment(100.0) == 1);

  SetpointSchedule bad = s;
  bad.period = 4.0;
  CHECK_THROWS_AS(bad.validate(), ConstructionError);
  bad = s;
  bad.times = {1.0, 5.0};
  CHECK_THROWS_AS(bad.validate(), ConstructionError);
  bad = s;
  bad.times = {0.0, 0.0};
  CHECK_THROWS_AS(bad.validate(), ConstructionError);
}

TEST_CASE("scenario validation") {
  auto s = golden_drone();
  s.x0 = Vector::Zero(4);
  CHECK_THROWS_AS(simulate(s), ConstructionError);
  s = golden_drone();
  s.channels.pop_back();
  CHECK_THROWS_AS(simulate(s), ConstructionError);
  s = golden_drone();
  s.channels.push_back({"x", -1.0, 1.0, {-1.0, -1.0}});
  CHECK_THROWS_AS(simulate(s), ConstructionError);
  s = golden_drone();
  s.model = "quadrotor";
  CHECK_THROWS_AS(simulate(s), ConstructionError);
}

TEST_CASE("golden drone scenario stays inside its box") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto trace = simulate(golden_drone());
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(seconds <= 10.0);
  REQUIRE(trace.completed());
  CHECK(trace.steps.size() == 20001);
  CHECK(trace.x0_in_safe_set);
  const auto rep = audit_invariance(trace);
  CHECK(rep.min_h >= -1e-6);
  CHECK(rep.min_slack >= -1e-6);
  CHECK(rep.invariance_ok);
  CHECK(rep.structure_ok);
  CHECK(rep.max_active <= 2);
  CHECK(rep.both_sides_active_steps == 0);
  // The attitude constraint does real work in this scenario.
  CHECK(rep.channels[1].max_lambda_lower + rep.channels[1].max_lambda_upper > 0.0);
  for (const auto& s : trace.steps) {
    CHECK(s.y(0) >= 0.5 - 1e-6);
    CHECK(s.y(0) <= 2.0 + 1e-6);
  }
}

TEST_CASE("corner setpoints activate two multipliers at once") {
  for (const char* model : {"double_integrator", "drone_with_rom"}) {
    const auto trace = simulate(corners(model));
    REQUIRE(trace.completed());
    const auto rep = audit_invariance(trace);
    INFO(model << ": min_h " << rep.min_h << ", min_slack " << rep.min_slack);
    CHECK(rep.pass());
    CHECK_FALSE(intervals_with_active_count(trace, 2).empty());
    CHECK(rep.max_active <= 2);
  }
}

TEST_CASE("resting double integrator is an equilibrium") {
  Scenario s;
  s.model = "double_integrator";
  s.channels = {{"x", -100.0, 100.0, {-1.0, -1.0}}, {"z", -100.0, 100.0, {-1.0, -1.0}}};
  s.setpoints.times = {0.0};
  s.setpoints.targets = {Vector{{0.0, 1.0, 0.0, 0.0}}};
  s.x0 = Vector{{0.0, 1.0, 0.0, 0.0}};
  s.t_final = 2.0;
  const auto trace = simulate(s);
  REQUIRE(trace.completed());
  for (const auto& st : trace.steps) {
    CHECK(st.decision.k_d == Vector{{0.0, 9.81}});
    CHECK(st.decision.active_set.empty());
    CHECK((st.state - s.x0).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("initial state outside the safe set is flagged") {
  auto s = golden_drone();
  s.x0 = Vector{{0.0, 0.4, 0.0, 0.0, -1.0, 0.0}};
  s.t_final = 2.0;
  const auto trace = simulate(s);
  CHECK_FALSE(trace.x0_in_safe_set);
  const auto rep = audit_invariance(trace);
  CHECK(rep.hypothesis_violated);
  CHECK_FALSE(rep.invariance_ok);
}

TEST_CASE("leaving the valid region stops the run") {
  auto s = golden_drone();
  s.channels[1] = {"theta", -3.0, 3.0, {-1.0, -1.0}};
  s.t_final = 5.0;
  auto loop = build_closed_loop(s);
  loop.nominal = [](const Vector&, double) { return Vector{{9.81, 20.0}}; };
  const auto trace = simulate(loop, s.x0, s.t_final, s.dt);
  CHECK(trace.status == SimStatus::region_exit);
  CHECK_FALSE(trace.steps.empty());
  CHECK(trace.steps.size() < 5001);
  CHECK_FALSE(audit_invariance(trace).pass());
}

TEST_CASE("invariance margins converge as dt shrinks") {
  auto s = golden_drone();
  s.t_final = 10.0;
  std::vector<double> min_h;
  for (double dt : {1e-2, 5e-3, 1e-3, 2.5e-4}) {
    s.dt = dt;
    const auto trace = simulate(s);
    REQUIRE(trace.completed());
    min_h.push_back(audit_invariance(trace).min_h);
  }
  const double ref = min_h.back();
  INFO("min_h by dt: " << min_h[0] << ", " << min_h[1] << ", " << min_h[2] << ", " << min_h[3]);
  // The minimum is taken over grid samples, so below the coarsest step the
  // differences are sampling noise; they must still be far below the coarse error.
  const double coarse = std::abs(min_h[0] - ref);
  CHECK(coarse > 1e-5);
  CHECK(std::abs(min_h[1] - ref) <= 0.1 * coarse);
  CHECK(std::abs(min_h[2] - ref) <= 0.1 * coarse);
}

TEST_CASE("simulation is deterministic") {
  auto s = corners("drone_with_rom");
  s.t_final = 3.0;
  const auto a = simulate(s);
  const auto b = simulate(s);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t k = 0; k < a.steps.size(); ++k) {
    CHECK(a.steps[k].state == b.steps[k].state);
    CHECK(a.steps[k].decision.u_star == b.steps[k].decision.u_star);
  }
}

TEST_CASE("trace records outputs, references and errors") {
  auto s = golden_drone();
  s.t_final = 6.0;
  const auto trace = simulate(s);
  REQUIRE(trace.completed());
  for (const auto& st : trace.steps) {
    CHECK(st.error == st.y - st.y_d);
    CHECK(st.segment == (st.t < 5.0 ? 0 : 1));
    CHECK(st.psi_lower.size() == 2);
    CHECK((st.decision.k_cbf - (st.decision.u_star - st.decision.k_d)).cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + st.decision.u_star.norm()));
  }
  CHECK(trace.steps.back().y_d == Vector{{0.2, 0.0}});
}
