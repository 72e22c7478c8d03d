#include <catch_amalgamated.hpp>

#include <cmath>

#include "boxcbf/iss.hpp"
#include "boxcbf/sim.hpp"

using namespace boxcbf;
using namespace boxcbf::sim;
using Catch::Matchers::WithinAbs;

namespace {

Scenario di_corners() {
  Scenario s;
  s.model = "double_integrator";
  s.channels = {{"x", -1.0, 1.0, {-1.0, -1.0}}, {"z", 0.0, 2.0, {-1.0, -1.0}}};
  s.setpoints.times = {0.0, 5.0, 10.0, 15.0};
  s.setpoints.targets = {Vector{{0.9, 1.85, 0.0, 0.0}}, Vector{{-0.9, 0.15, 0.0, 0.0}},
                         Vector{{0.9, 0.15, 0.0, 0.0}}, Vector{{-0.9, 1.85, 0.0, 0.0}}};
  s.x0 = Vector{{0.0, 1.0, 0.0, 0.0}};
  return s;
}

iss::CertificateValidation validate(const iss::IssCertificate& cert, const Scenario& s,
                                    std::size_t samples = 2000) {
  const auto loop = build_closed_loop(s);
  const auto schedule = s.setpoints;
  return iss::validate_certificate(cert, loop.filter_model, loop.nominal, loop.filter_model.sample_lower,
                                   loop.filter_model.sample_upper, s.t_final, samples, 1,
                                   [schedule](double t) { return schedule.segment(t); });
}

}  // namespace

TEST_CASE("lyapunov equation") {
  const Matrix A{{0.0, 1.0}, {-4.0, -4.0}};
  const Matrix P = iss::solve_lyapunov(A, Matrix::Identity(2, 2));
  const Matrix residual = A.transpose() * P + P * A + Matrix::Identity(2, 2);
  CHECK(residual.cwiseAbs().maxCoeff() <= 1e-12);
  // Closed form for the companion matrix of s^2 + kd s + kp with Q = I.
  const double kp = 4.0, kd = 4.0;
  CHECK_THAT(P(1, 1), WithinAbs((1.0 + 1.0 / kp) / (2.0 * kd), 1e-12));
  CHECK_THAT(P(0, 1), WithinAbs(1.0 / (2.0 * kp), 1e-12));
  CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(P).eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("PD certificate constants") {
  const auto s = di_corners();
  iss::PdCertificateData data;
  const auto cert = iss::make_pd_tracking_certificate(s.setpoints, s.nominal, &data);
  CHECK(cert.rho > 0.0);
  CHECK(cert.gamma > 0.0);
  CHECK(cert.sigma > 0.0);
  CHECK(cert.gamma == 0.5 * data.gamma_max);
  // rho is the smallest eigenvalue-like ratio of P restricted to position errors.
  const double exact_rho = data.P(0, 0) - data.P(0, 1) * data.P(0, 1) / data.P(1, 1);
  CHECK(cert.rho <= exact_rho);
  CHECK(cert.rho >= 0.9 * exact_rho);
  CHECK(cert.beta(4.0, 0.0) == std::sqrt(4.0 / cert.rho));
  CHECK(cert.iota(0.0) == 0.0);

  NominalGains bad;
  bad.kd = 0.0;
  CHECK_THROWS_AS(iss::make_pd_tracking_certificate(s.setpoints, bad), iss::InvalidCertificate);
}

TEST_CASE("certificate inequalities hold on sampled states") {
  const auto s = di_corners();
  const auto cert = iss::make_pd_tracking_certificate(s.setpoints, s.nominal);
  const auto v = validate(cert, s);
  CHECK(v.samples == 2000);
  CHECK(v.max_lower_bound_violation <= 1e-6);
  CHECK(v.max_dissipation_violation <= 1e-6);
  CHECK(v.pass);

  // An inflated decay rate must be caught.
  auto greedy = cert;
  greedy.gamma *= 4.0;
  CHECK_FALSE(validate(greedy, s).pass);
  auto loose = cert;
  loose.rho *= 3.0;
  CHECK_FALSE(validate(loose, s).pass);
}

TEST_CASE("tracking bound on the corner trace") {
  const auto s = di_corners();
  const auto cert = iss::make_pd_tracking_certificate(s.setpoints, s.nominal);
  const auto v = validate(cert, s);
  const auto trace = simulate(s);
  REQUIRE(trace.completed());
  const auto rep = iss::check_iss_bound(trace, cert, v);
  INFO("max excess " << rep.max_excess << " at t = " << rep.worst_time);
  CHECK(rep.violations == 0);
  CHECK(rep.bounded);
  CHECK(rep.pass);

  iss::CertificateValidation failed;
  CHECK_THROWS_AS(iss::check_iss_bound(trace, cert, failed), iss::InvalidCertificate);
}

TEST_CASE("inactive filter gives pure exponential decay") {
  auto s = di_corners();
  for (auto& c : s.channels) c.lower -= 100.0, c.upper += 100.0;
  s.t_final = 10.0;
  const auto cert = iss::make_pd_tracking_certificate(s.setpoints, s.nominal);
  const auto trace = simulate(s);
  REQUIRE(trace.completed());
  for (const auto& st : trace.steps) REQUIRE(st.decision.k_cbf.isZero());
  const auto rep = iss::check_iss_bound(trace, cert, validate(cert, s));
  CHECK(rep.pass);
  // Well after a switch the error is small, as the decay term predicts.
  const auto& late = trace.steps[4999];
  CHECK(late.error.norm() <= cert.beta(cert.V(trace.steps[0].filter_state, 0.0), late.t) + 1e-6);
}

TEST_CASE("constant correction settles inside the ultimate bound") {
  auto s = di_corners();
  const auto cert = iss::make_pd_tracking_certificate(s.setpoints, s.nominal);
  const auto m = models::double_integrator_model();
  const Vector k{{0.7, -0.4}};
  const Vector target{{0.0, 1.0}};
  Vector x{{1.0, 0.0, 0.0, 0.0}};
  for (int i = 0; i < 40000; ++i) {
    const Vector u = double_integrator_pd(x, target, s.nominal, 9.81) + k;
    x = integrate_step(m, x, u, 1e-3);
  }
  const Vector e = x.head(2) - target;
  CHECK_THAT(e(0), WithinAbs(k(0) / s.nominal.kp, 1e-9));
  CHECK_THAT(e(1), WithinAbs(k(1) / s.nominal.kp, 1e-9));
  CHECK(e.norm() <= cert.iota(k.norm()));
}

TEST_CASE("error boundedness on completed traces") {
  const auto trace = simulate(di_corners());
  double max_e = 0.0, max_y = 0.0, max_r = 0.0;
  for (const auto& st : trace.steps) {
    max_e = std::max(max_e, st.error.norm());
    max_y = std::max(max_y, st.y.norm());
    max_r = std::max(max_r, st.y_d.norm());
  }
  CHECK(std::isfinite(max_e));
  CHECK(max_e <= max_y + max_r);
}
