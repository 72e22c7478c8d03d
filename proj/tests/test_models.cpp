#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "boxcbf/filter.hpp"
#include "boxcbf/models.hpp"
#include "boxcbf/sampling.hpp"

using namespace boxcbf;
using namespace boxcbf::models;
using Catch::Matchers::WithinAbs;

TEST_CASE("planar drone") {
  const auto m = planar_drone_model();
  CHECK(m.state_dim == 6);
  CHECK(m.input_dim == 2);
  const Vector rest = Vector::Zero(6);
  CHECK(m.drift(rest) == Vector{{0.0, 0.0, 0.0, 0.0, -9.81, 0.0}});
  CHECK(decoupling_matrix(m, rest).B == Matrix::Identity(2, 2));

  const Vector hover_input{{9.81, 0.0}};
  const Vector xdot = m.dynamics(rest, hover_input);
  CHECK(xdot(drone::kXdot) == 0.0);
  CHECK(xdot(drone::kZdot) == 0.0);
  CHECK(xdot.isZero());

  // Leaning forward (negative theta) with thrust accelerates in +x.
  Vector lean = Vector::Zero(6);
  lean(drone::kTheta) = -0.3;
  CHECK(m.dynamics(lean, hover_input)(drone::kXdot) > 0.0);
}

TEST_CASE("planar drone valid region") {
  const auto m = planar_drone_model();
  Vector x = Vector::Zero(6);
  x(drone::kTheta) = std::numbers::pi / 2.0 - 0.01;
  CHECK(m.in_valid_region(x));
  x(drone::kTheta) = 1.57;
  CHECK_FALSE(m.in_valid_region(x));

  const auto edge = planar_drone_model({9.81, 0.0});
  x(drone::kTheta) = std::numbers::pi / 2.0;
  CHECK(edge.in_valid_region(x));
  CHECK_THROWS_AS(decoupling_matrix(edge, x), RankError);

  CHECK_THROWS_AS(planar_drone_model({9.81, -0.1}), ConstructionError);
  CHECK_THROWS_AS(planar_drone_model({9.81, 2.0}), ConstructionError);
  CHECK_THROWS_AS(planar_drone_model({0.0, 0.01}), ConstructionError);
}

TEST_CASE("double integrator") {
  const auto m = double_integrator_model();
  CHECK(m.drift(Vector::Zero(4)) == Vector{{0.0, 0.0, 0.0, -9.81}});
  const auto states = sample_states_with_corners(m, 100, 4);
  for (const auto& s : states) {
    CHECK(decoupling_matrix(m, s).B == Matrix::Identity(2, 2));
    CHECK(m.in_valid_region(s));
  }
  CHECK(m.dynamics(Vector::Zero(4), Vector{{0.0, 9.81}}).isZero());
}

TEST_CASE("reduced-order state") {
  const Vector x{{1.0, 2.0, 0.3, 4.0, 5.0, 6.0}};
  CHECK(drone_to_rom_state(x) == Vector{{1.0, 2.0, 4.0, 5.0}});
}

TEST_CASE("adapter") {
  const Vector level = Vector::Zero(6);
  const auto hover = rom_to_drone_adapter(Vector{{0.0, 9.81}}, level);
  CHECK(hover.thrust == 9.81);
  CHECK(hover.theta_d == 0.0);
  CHECK(hover.moment == 0.0);

  const auto up = rom_to_drone_adapter(Vector{{0.0, 3.0}}, level);
  CHECK(up.theta_d == 0.0);
  CHECK(up.thrust == 3.0);

  const auto diag = rom_to_drone_adapter(Vector{{1.0, 1.0}}, level);
  CHECK_THAT(diag.theta_d, WithinAbs(-std::numbers::pi / 4.0, 1e-15));
  CHECK_THAT(diag.moment, WithinAbs(40.0 * -std::numbers::pi / 4.0, 1e-13));

  const auto zero = rom_to_drone_adapter(Vector::Zero(2), level);
  CHECK(zero.theta_d == 0.0);
  CHECK(zero.thrust == 0.0);

  // At the desired attitude the thrust reproduces the commanded acceleration.
  const Vector v{{2.0, 11.0}};
  Vector aligned = Vector::Zero(6);
  aligned(drone::kTheta) = std::atan2(-v(0), v(1));
  const auto cmd = rom_to_drone_adapter(v, aligned);
  const auto m = planar_drone_model();
  const Vector acc = m.dynamics(aligned, Vector{{cmd.thrust, cmd.moment}});
  CHECK_THAT(acc(drone::kXdot), WithinAbs(v(0), 1e-12));
  CHECK_THAT(acc(drone::kZdot), WithinAbs(v(1) - 9.81, 1e-12));
  CHECK_THAT(cmd.moment, WithinAbs(0.0, 1e-12));

  CHECK_THROWS_AS(RomAdapterParams({0.0, 1.0}).validate(), ConstructionError);
}
