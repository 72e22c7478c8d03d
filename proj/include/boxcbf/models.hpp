#pragma once

// Bundled systems: the planar drone, the planar double integrator with
// gravity (reduced-order model of the drone), and the thrust/attitude adapter
// that lets the drone track double-integrator accelerations.

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "boxcbf/cbf_core.hpp"

namespace boxcbf::models {

inline constexpr double kDefaultGravity = 9.81;

struct PlanarDroneParams {
  double gravity = kDefaultGravity;
  double theta_margin = 0.01;  // valid region |theta| <= pi/2 - margin

  void validate() const {
    if (!(gravity > 0.0)) throw ConstructionError("planar_drone: gravity must be positive");
    if (!(theta_margin >= 0.0 && theta_margin < std::numbers::pi / 2.0)) {
      throw ConstructionError("planar_drone: theta_margin must lie in [0, pi/2)");
    }
  }
};

struct DoubleIntegratorParams {
  double gravity = kDefaultGravity;

  void validate() const {
    if (!(gravity > 0.0)) throw ConstructionError("double_integrator: gravity must be positive");
  }
};

struct RomAdapterParams {
  double kp_theta = 40.0;
  double kd_theta = 12.0;

  void validate() const {
    if (!(kp_theta > 0.0) || !(kd_theta > 0.0)) {
      throw ConstructionError("rom adapter: attitude gains must be positive");
    }
  }
};

namespace drone {
// State layout (x, z, theta, xdot, zdot, thetadot); input (F, M).
inline constexpr int kX = 0, kZ = 1, kTheta = 2, kXdot = 3, kZdot = 4, kThetadot = 5;
}  // namespace drone

// Normalized planar drone (unit mass and inertia):
//   xddot = -F sin(theta),  zddot = F cos(theta) - g,  thetaddot = M.
// Outputs y = (z, theta), both of relative degree 2.
inline SystemModel planar_drone_model(const PlanarDroneParams& params = {}) {
  params.validate();
  using namespace drone;
  const double g = params.gravity;
  const double theta_max = std::numbers::pi / 2.0 - params.theta_margin;
  const RegionFn region = [theta_max](const Vector& x) { return std::abs(x(kTheta)) <= theta_max; };

  SystemModel m;
  m.name = "planar_drone";
  m.state_dim = 6;
  m.input_dim = 2;
  m.drift = [g](const Vector& x) {
    Vector f(6);
    f << x(kXdot), x(kZdot), x(kThetadot), 0.0, -g, 0.0;
    return f;
  };
  m.control_matrix = [](const Vector& x) {
    Matrix gm = Matrix::Zero(6, 2);
    gm(kXdot, 0) = -std::sin(x(kTheta));
    gm(kZdot, 0) = std::cos(x(kTheta));
    gm(kThetadot, 1) = 1.0;
    return gm;
  };
  m.in_valid_region = region;

  OutputChannelEvaluator z;
  z.name = "z";
  z.rel_degree = 2;
  z.y = [](const Vector& x) { return x(kZ); };
  z.lie_f_chain = [g](const Vector& x) { return Vector{{x(kZdot), -g}}; };
  z.b_row = [](const Vector& x) { return Vector{{std::cos(x(kTheta)), 0.0}}; };
  z.in_valid_region = region;

  OutputChannelEvaluator theta;
  theta.name = "theta";
  theta.rel_degree = 2;
  theta.y = [](const Vector& x) { return x(kTheta); };
  theta.lie_f_chain = [](const Vector& x) { return Vector{{x(kThetadot), 0.0}}; };
  theta.b_row = [](const Vector&) { return Vector{{0.0, 1.0}}; };
  theta.in_valid_region = region;

  m.outputs = {z, theta};
  m.state_names = {"x", "z", "theta", "xdot", "zdot", "thetadot"};
  m.input_names = {"F", "M"};
  m.sample_lower = Vector{{-3.0, -1.0, -theta_max, -5.0, -5.0, -5.0}};
  m.sample_upper = Vector{{3.0, 3.0, theta_max, 5.0, 5.0, 5.0}};
  m.validate();
  return m;
}

namespace rom {
// State layout (x, z, xdot, zdot); input (v_x, v_z) thrust acceleration.
inline constexpr int kX = 0, kZ = 1, kXdot = 2, kZdot = 3;
}  // namespace rom

// Planar double integrator with gravity; outputs y = (x, z), B = I.
inline SystemModel double_integrator_model(const DoubleIntegratorParams& params = {}) {
  params.validate();
  using namespace rom;
  const double g = params.gravity;

  SystemModel m;
  m.name = "double_integrator";
  m.state_dim = 4;
  m.input_dim = 2;
  m.drift = [g](const Vector& s) {
    Vector f(4);
    f << s(kXdot), s(kZdot), 0.0, -g;
    return f;
  };
  m.control_matrix = [](const Vector&) {
    Matrix gm = Matrix::Zero(4, 2);
    gm(kXdot, 0) = 1.0;
    gm(kZdot, 1) = 1.0;
    return gm;
  };

  OutputChannelEvaluator x;
  x.name = "x";
  x.rel_degree = 2;
  x.y = [](const Vector& s) { return s(kX); };
  x.lie_f_chain = [](const Vector& s) { return Vector{{s(kXdot), 0.0}}; };
  x.b_row = [](const Vector&) { return Vector{{1.0, 0.0}}; };

  OutputChannelEvaluator z;
  z.name = "z";
  z.rel_degree = 2;
  z.y = [](const Vector& s) { return s(kZ); };
  z.lie_f_chain = [g](const Vector& s) { return Vector{{s(kZdot), -g}}; };
  z.b_row = [](const Vector&) { return Vector{{0.0, 1.0}}; };

  m.outputs = {x, z};
  m.state_names = {"x", "z", "xdot", "zdot"};
  m.input_names = {"vx", "vz"};
  m.sample_lower = Vector{{-3.0, -1.0, -5.0, -5.0}};
  m.sample_upper = Vector{{3.0, 3.0, 5.0, 5.0}};
  m.validate();
  return m;
}

// Reduced-order state (x, z, xdot, zdot) of a drone state.
inline Vector drone_to_rom_state(const Vector& drone_state) {
  return Vector{{drone_state(drone::kX), drone_state(drone::kZ), drone_state(drone::kXdot),
                 drone_state(drone::kZdot)}};
}

struct AdapterOutput {
  double thrust = 0.0;
  double moment = 0.0;
  double theta_d = 0.0;
};

// Thrust is the left pseudo-inverse of the thrust direction (-sin, cos)
// applied to v; the desired attitude points that direction along v and is
// tracked by a PD law. theta_d = atan2(-v_x, v_z) is the sign consistent with
// xddot = -F sin(theta).
inline AdapterOutput rom_to_drone_adapter(const Vector& v, const Vector& drone_state,
                                          const RomAdapterParams& params = {}) {
  const double theta = drone_state(drone::kTheta);
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  AdapterOutput out;
  out.thrust = (-s * v(0) + c * v(1)) / (s * s + c * c);
  out.theta_d = (v(0) == 0.0 && v(1) == 0.0) ? 0.0 : std::atan2(-v(0), v(1));
  out.moment = params.kp_theta * (out.theta_d - theta) - params.kd_theta * drone_state(drone::kThetadot);
  return out;
}

}  // namespace boxcbf::models
