#pragma once

// Subcommand bodies for the boxcbf executable. Each returns the process exit
// code: 0 success, 1 check failed, 2 usage or input error.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "boxcbf/config.hpp"
#include "boxcbf/equivalence.hpp"
#include "boxcbf/sampling.hpp"
#include "boxcbf/sim.hpp"
#include "boxcbf/trace_io.hpp"

namespace boxcbf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

struct SimulateOptions {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<int> decimate;
  // Value of BOXCBF_SEED, if set; overrides the config seed.
  std::optional<std::string> seed_override;
  std::size_t compat_states = 20;
  std::size_t compat_draws = 10;
};

inline std::optional<std::string> seed_from_env() {
  if (const char* s = std::getenv("BOXCBF_SEED")) return std::string(s);
  return std::nullopt;
}

// Compatibility spot-check on evenly spaced trace states, seeded by the run seed.
inline CompatibilityReport trace_compatibility(const sim::ClosedLoop& loop, const sim::SimTrace& trace,
                                               std::size_t states, std::size_t draws,
                                               std::uint64_t seed) {
  CompatibilityReport total;
  if (trace.steps.empty() || states == 0) return total;
  const std::size_t stride = std::max<std::size_t>(1, trace.steps.size() / states);
  for (std::size_t k = 0; k < trace.steps.size(); k += stride) {
    const auto rep = compatibility_certificate(loop.channels, loop.filter_model,
                                               trace.steps[k].filter_state, draws, seed + k);
    total.trials += rep.trials;
    total.violations += rep.violations;
    total.identity_violations += rep.identity_violations;
    total.max_identity_error = std::max(total.max_identity_error, rep.max_identity_error);
    if (rep.min_weighted_sum < total.min_weighted_sum) {
      total.min_weighted_sum = rep.min_weighted_sum;
      total.witness = rep.witness;
    }
  }
  return total;
}

inline int cmd_simulate(const SimulateOptions& opt, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  try {
    rc = load_config(opt.config_path);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  if (opt.seed_override) {
    const auto& s = *opt.seed_override;
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
      err << "error: BOXCBF_SEED: expected a non-negative integer, got '" << s << "'\n";
      return kExitUsage;
    }
    rc.seed = v;
  }
  if (opt.decimate) {
    if (*opt.decimate < 1) {
      err << "error: --decimate must be at least 1\n";
      return kExitUsage;
    }
    rc.decimate = *opt.decimate;
  }

  const auto& sc = rc.scenario;
  const auto loop = sim::build_closed_loop(sc);
  const auto schedule = sc.setpoints;
  const auto trace = sim::simulate(loop, sc.x0, sc.t_final, sc.dt, sc.integrator,
                                   [schedule](double t) { return schedule.segment(t); });
  const auto audit = sim::audit_invariance(trace);
  const auto compat = trace_compatibility(loop, trace, opt.compat_states, opt.compat_draws, rc.seed);

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(opt.out_dir, ec);
  if (ec) {
    err << "error: cannot create output directory '" << opt.out_dir << "': " << ec.message() << '\n';
    return kExitUsage;
  }
  const io::TraceLabels labels{loop.plant.state_names, loop.filter_model.input_names};
  const fs::path dir(opt.out_dir);
  {
    std::ofstream csv(dir / "trace.csv", std::ios::binary);
    io::write_trace_csv(csv, trace, labels, rc.decimate);
  }
  {
    std::ofstream a(dir / "audit.txt");
    a << "config: " << opt.config_path << '\n' << "model: " << sc.model << '\n'
      << "seed: " << rc.seed << '\n';
    io::write_audit(a, trace, audit);
    a << "compatibility: " << compat.trials << " draws, " << compat.violations << " violations, "
      << "max identity error " << io::fmt_double(compat.max_identity_error) << '\n';
  }
  {
    std::ofstream p(dir / "plot.gp");
    io::write_plot_script(p, trace, labels);
  }

  const bool ok = audit.pass() && compat.pass();
  out << sc.model << ": " << sim::to_string(trace.status) << ", " << trace.steps.size()
      << " steps, min_h " << io::fmt_double(audit.min_h) << ", min_slack "
      << io::fmt_double(audit.min_slack) << ", max_active " << audit.max_active
      << ", steps with two active " << audit.steps_with_two_active << '\n';
  if (!trace.message.empty()) out << "  " << trace.message << '\n';
  out << (ok ? "audit PASS" : "audit FAIL") << " (" << (dir / "audit.txt").string() << ")\n";
  return ok ? kExitOk : kExitCheckFailed;
}

struct CompareQpOptions {
  std::string model;
  long samples = 10000;
  std::uint64_t seed = 0;
  double tolerance = 1e-7;
};

inline int cmd_compare_qp(const CompareQpOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.samples <= 0) {
    err << "error: -n must be a positive sample count\n";
    return kExitUsage;
  }
  SystemModel model;
  try {
    model = bundled_model(opt.model);
  } catch (const ConstructionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  const auto channels = default_channels(model);
  const auto st = run_equivalence(model, channels, static_cast<std::size_t>(opt.samples), opt.seed);

  out << std::setprecision(6) << std::scientific;
  out << "model " << model.name << ", " << st.samples << " samples, seed " << opt.seed << '\n'
      << "max relative deviation  " << st.max_relative_deviation << '\n'
      << "max absolute deviation  " << st.max_absolute_deviation << '\n'
      << "closed-form KKT residuals: stationarity " << st.worst_kkt.stationarity << ", primal "
      << st.worst_kkt.primal << ", dual " << st.worst_kkt.dual << ", complementarity "
      << st.worst_kkt.complementarity << '\n'
      << "oracle KKT residuals:      stationarity " << st.worst_oracle_kkt.stationarity
      << ", primal " << st.worst_oracle_kkt.primal << ", dual " << st.worst_oracle_kkt.dual
      << ", complementarity " << st.worst_oracle_kkt.complementarity << '\n'
      << "max active " << st.max_active << ", both sides active " << st.both_sides_active
      << ", active-set mismatches " << st.active_set_mismatches << '\n';
  out.unsetf(std::ios::floatfield);
  const bool ok = st.max_relative_deviation <= opt.tolerance;
  out << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? kExitOk : kExitCheckFailed;
}

struct VerifyRelDegOptions {
  std::string model;
  long samples = 1000;
  std::uint64_t seed = 0;
  double theta_margin = 0.01;
};

inline int cmd_verify_reldeg(const VerifyRelDegOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.samples <= 0) {
    err << "error: -n must be a positive sample count\n";
    return kExitUsage;
  }
  SystemModel model;
  try {
    model = bundled_model(opt.model, opt.theta_margin);
  } catch (const ConstructionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  const auto states = sample_states_with_corners(model, static_cast<std::size_t>(opt.samples), opt.seed);
  const auto rep = verify_relative_degree(model, states);

  out << "model " << model.name << ", " << rep.samples.size() << " samples, " << rep.failures
      << " failures\n";
  std::size_t shown = 0;
  for (const auto& s : rep.samples) {
    if (s.pass) continue;
    if (shown++ == 5) {
      out << "  ...\n";
      break;
    }
    out << "  " << to_string(s.failure) << " at x = (";
    for (Eigen::Index i = 0; i < s.state.size(); ++i) out << (i ? ", " : "") << s.state(i);
    out << "), sigma_min(B) = " << io::fmt_double(s.sigma_min) << '\n';
  }
  out << (rep.all_pass() ? "PASS" : "FAIL") << '\n';
  return rep.all_pass() ? kExitOk : kExitCheckFailed;
}

}  // namespace boxcbf::cli
