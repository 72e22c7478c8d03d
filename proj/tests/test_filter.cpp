#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "boxcbf/filter.hpp"
#include "boxcbf/models.hpp"
#include "boxcbf/qp_oracle.hpp"
#include "boxcbf/sampling.hpp"

using namespace boxcbf;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<OutputChannel> drone_channels(const SystemModel& m) {
  return {OutputChannel(m.outputs[0], 0.0, 2.0, {-1.0, -1.0}),
          OutputChannel(m.outputs[1], -1.0, 1.0, {-1.0, -1.0})};
}

std::vector<OutputChannel> di_channels(const SystemModel& m) {
  return {OutputChannel(m.outputs[0], -1.0, 1.0, {-1.0, -1.0}),
          OutputChannel(m.outputs[1], 0.0, 2.0, {-1.0, -1.0})};
}

}  // namespace

TEST_CASE("inactive filter passes the nominal input through") {
  const auto m = models::planar_drone_model();
  const auto ch = drone_channels(m);
  const Vector x{{0.0, 1.0, 0.0, 0.0, 0.0, 0.0}};
  const Vector hover{{9.81, 0.0}};
  const auto d = closed_form_filter(ch, m, x, hover);
  CHECK((d.omega_lower.array() >= 0.0).all());
  CHECK((d.omega_upper.array() >= 0.0).all());
  CHECK(d.u_star == hover);
  CHECK(d.k_cbf.isZero());
  CHECK(d.active_set.empty());
}

// Reference values from an interior-point QP solve of the same instance.
TEST_CASE("drone near the altitude ceiling") {
  const auto m = models::planar_drone_model();
  const auto ch = drone_channels(m);
  const Vector x{{0.0, 1.9, 0.0, 0.0, 1.0, 0.0}};
  const Vector k_d{{9.81, 0.0}};
  const auto d = closed_form_filter(ch, m, x, k_d);
  CHECK_THAT(d.omega_upper(0), WithinAbs(-1.9, 1e-12));
  CHECK_THAT(d.lambda_upper(0), WithinAbs(1.9, 1e-12));
  CHECK(d.lambda_lower(0) == 0.0);
  CHECK_THAT(d.omega_lower(1), WithinAbs(1.0, 1e-15));
  CHECK_THAT(d.omega_upper(1), WithinAbs(1.0, 1e-15));
  CHECK_THAT(d.u_star(0), WithinAbs(7.91, 1e-12));
  CHECK(d.u_star(1) == 0.0);
  REQUIRE(d.active_set.size() == 1);
  CHECK(d.active_set[0].channel == 0);
  CHECK(d.active_set[0].side == Side::upper);
  CHECK(d.active_set[0].index() == 1);

  const auto qp = solve_active_set_enumeration(make_qp_instance(ch, m, x, k_d));
  CHECK((qp.u - d.u_star).norm() <= 1e-12);
  CHECK((qp.lambda - d.lambdas()).norm() <= 1e-12);
}

TEST_CASE("tilted drone with two active constraints") {
  const auto m = models::planar_drone_model();
  const auto ch = drone_channels(m);
  const Vector x{{0.3, 0.2, 0.5, 0.1, -1.5, 0.8}};
  const Vector k_d{{12.0, 3.0}};
  const auto d = closed_form_filter(ch, m, x, k_d);
  CHECK_THAT(d.u_star(0), WithinAbs(14.369018423562565, 1e-9));
  CHECK_THAT(d.u_star(1), WithinAbs(-1.1, 1e-12));
  CHECK_THAT(d.lambda_lower(0), WithinAbs(2.079009257315528, 1e-9));
  CHECK_THAT(d.lambda_upper(1), WithinAbs(4.1, 1e-12));
  CHECK(d.active_set.size() == 2);
  CHECK_THAT(d.slack_lower(0), WithinAbs(0.0, 1e-12));
  CHECK_THAT(d.slack_upper(1), WithinAbs(0.0, 1e-12));
}

TEST_CASE("identity decoupling reduces to componentwise correction") {
  const auto m = models::double_integrator_model();
  const auto ch = di_channels(m);
  const auto states = sample_states_with_corners(m, 500, 9);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> kd(-20.0, 20.0);
  for (const auto& s : states) {
    const Vector k_d{{kd(rng), kd(rng)}};
    const auto d = closed_form_filter(ch, m, s, k_d);
    for (int i = 0; i < 2; ++i) {
      CHECK(d.u_star(i) == k_d(i) + d.lambda_lower(i) - d.lambda_upper(i));
    }
  }
}

TEST_CASE("double integrator slack at the origin") {
  const auto m = models::double_integrator_model();
  const auto ch = di_channels(m);
  const Vector s = Vector::Zero(4);
  const Vector sl = constraint_slacks(ch, m, s, Vector::Zero(2));
  CHECK(sl(0) == 1.0);
  CHECK(sl(1) == 1.0);
}

TEST_CASE("filter invariants on random drone states") {
  const auto m = models::planar_drone_model();
  const auto ch = drone_channels(m);
  std::uniform_real_distribution<double> kd(-20.0, 20.0);
  for (std::size_t k = 0; k < 2000; ++k) {
    auto rng = sample_rng(17, k);
    const Vector x = sample_state(m, rng);
    const Vector k_d{{kd(rng), kd(rng)}};
    const auto d = closed_form_filter(ch, m, x, k_d);
    INFO("x = " << x.transpose() << ", k_d = " << k_d.transpose());
    CHECK(d.slacks().minCoeff() >= -1e-9);
    CHECK(d.active_set.size() <= 2);
    for (int i = 0; i < 2; ++i) {
      CHECK_FALSE((d.omega_lower(i) < 0.0 && d.omega_upper(i) < 0.0));
      CHECK_FALSE((d.lambda_lower(i) > 0.0 && d.lambda_upper(i) > 0.0));
      const double pair = d.slack_lower(i) + d.slack_upper(i);
      const double expected = ch[static_cast<std::size_t>(i)].alpha1() *
                              (ch[static_cast<std::size_t>(i)].upper() - ch[static_cast<std::size_t>(i)].lower());
      CHECK_THAT(pair, WithinRel(expected, 1e-10));
      CHECK(std::abs(d.omega_lower(i) + d.omega_upper(i) - expected) <= 1e-10 * expected + 1e-12);
    }
    const Vector both = d.lambdas().cwiseProduct(d.slacks());
    CHECK(both.cwiseAbs().maxCoeff() <= 1e-8 * (1.0 + d.lambdas().norm()));
    CHECK(d.slacks() == constraint_slacks(ch, m, x, d.u_star));
  }
}

TEST_CASE("filter rejects singular and out-of-region states") {
  const auto tight = models::planar_drone_model({9.81, 0.0});
  const auto ch = drone_channels(tight);
  Vector vertical = Vector::Zero(6);
  vertical(models::drone::kTheta) = std::numbers::pi / 2.0;
  CHECK_THROWS_AS(closed_form_filter(ch, tight, vertical, Vector::Zero(2)), RankError);

  const auto m = models::planar_drone_model();
  const auto ch2 = drone_channels(m);
  Vector past = Vector::Zero(6);
  past(models::drone::kTheta) = 1.57;
  CHECK_THROWS_AS(closed_form_filter(ch2, m, past, Vector::Zero(2)), RegionError);
  CHECK_THROWS_AS(closed_form_filter(ch2, m, Vector::Zero(6), Vector::Zero(3)), ConstructionError);
}

TEST_CASE("gram orthogonality") {
  const auto di = models::double_integrator_model();
  CHECK(gram_orthogonality_check(di, Vector::Zero(4)).max_deviation == 0.0);

  const auto m = models::planar_drone_model();
  Vector x = Vector::Zero(6);
  x(models::drone::kTheta) = 0.5;
  CHECK(gram_orthogonality_check(m, x).max_deviation <= 1e-10);

  x(models::drone::kTheta) = 1.56;
  const auto near = gram_orthogonality_check(m, x);
  const double c = std::cos(1.56);
  CHECK_THAT(near.gram_condition, WithinRel(1.0 / (c * c), 1e-9));
  CHECK(near.max_deviation <= 1e-10 * near.gram_condition);
}
