#pragma once

// Trace emission: CSV with a header row, a human-readable audit summary and a
// gnuplot script laying out outputs, inputs, constraint values and multipliers.

#include <cstddef>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "boxcbf/sim.hpp"

namespace boxcbf::io {

struct TraceLabels {
  std::vector<std::string> state_names;  // plant state
  std::vector<std::string> input_names;  // filtered input
};

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// t, state..., y_<ch>..., u_<in>..., kcbf_<in>..., slack_<ch>_{lower,upper}...,
// psi_<ch>_lower_<j>..., psi_<ch>_upper_<j>..., lambda_<ch>_{lower,upper}..., err_<ch>...
inline std::vector<std::string> csv_header(const sim::SimTrace& trace, const TraceLabels& labels) {
  const auto& ch = trace.channel_names;
  std::vector<std::string> h{"t"};
  for (const auto& s : labels.state_names) h.push_back(s);
  for (const auto& c : ch) h.push_back("y_" + c);
  for (const auto& u : labels.input_names) h.push_back("u_" + u);
  for (const auto& u : labels.input_names) h.push_back("kcbf_" + u);
  for (const auto& c : ch) {
    h.push_back("slack_" + c + "_lower");
    h.push_back("slack_" + c + "_upper");
  }
  for (std::size_t i = 0; i < ch.size(); ++i) {
    for (const char* side : {"lower", "upper"}) {
      for (int j = 0; j < trace.rel_degrees[i]; ++j) {
        h.push_back("psi_" + ch[i] + "_" + side + "_" + std::to_string(j));
      }
    }
  }
  for (const auto& c : ch) {
    h.push_back("lambda_" + c + "_lower");
    h.push_back("lambda_" + c + "_upper");
  }
  for (const auto& c : ch) h.push_back("err_" + c);
  return h;
}

inline void write_csv_row(std::ostream& os, const sim::TraceStep& s) {
  std::string line = fmt_double(s.t);
  auto put = [&line](double v) {
    line += ',';
    line += fmt_double(v);
  };
  auto put_all = [&put](const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) put(v(i));
  };
  const auto& d = s.decision;
  put_all(s.state);
  put_all(s.y);
  put_all(d.u_star);
  put_all(d.k_cbf);
  put_all(d.slacks());
  for (std::size_t i = 0; i < s.psi_lower.size(); ++i) {
    put_all(s.psi_lower[i]);
    put_all(s.psi_upper[i]);
  }
  put_all(d.lambdas());
  put_all(s.error);
  line += '\n';
  os << line;
}

// Every `decimate`-th step plus the last one.
inline void write_trace_csv(std::ostream& os, const sim::SimTrace& trace, const TraceLabels& labels,
                            int decimate = 1) {
  const auto header = csv_header(trace, labels);
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << '\n';
  const std::size_t n = trace.steps.size();
  const auto k = static_cast<std::size_t>(decimate < 1 ? 1 : decimate);
  for (std::size_t i = 0; i < n; ++i) {
    if (i % k == 0 || i + 1 == n) write_csv_row(os, trace.steps[i]);
  }
}

inline void write_audit(std::ostream& os, const sim::SimTrace& trace, const sim::AuditReport& rep) {
  auto line = [&os](const char* key, const std::string& value) { os << key << ": " << value << '\n'; };
  line("status", sim::to_string(trace.status));
  if (!trace.message.empty()) line("message", trace.message);
  line("steps", std::to_string(rep.steps));
  line("dt", fmt_double(trace.dt));
  line("x0_in_safe_set", trace.x0_in_safe_set ? "yes" : "no");
  line("tolerance", fmt_double(rep.tol));
  line("min_h", fmt_double(rep.min_h));
  line("min_psi", fmt_double(rep.min_psi));
  line("min_slack", fmt_double(rep.min_slack));
  line("max_complementarity", fmt_double(rep.max_complementarity));
  line("max_active", std::to_string(rep.max_active));
  line("both_sides_active_steps", std::to_string(rep.both_sides_active_steps));
  line("steps_with_two_active", std::to_string(rep.steps_with_two_active));
  for (const auto& c : rep.channels) {
    os << "channel " << c.name << ":\n";
    for (Eigen::Index j = 0; j < c.min_psi_lower.size(); ++j) {
      os << "  min_psi_" << j << ": lower " << fmt_double(c.min_psi_lower(j)) << ", upper "
         << fmt_double(c.min_psi_upper(j)) << '\n';
    }
    os << "  min_slack: lower " << fmt_double(c.min_slack_lower) << ", upper "
       << fmt_double(c.min_slack_upper) << '\n';
    os << "  max_lambda: lower " << fmt_double(c.max_lambda_lower) << ", upper "
       << fmt_double(c.max_lambda_upper) << '\n';
  }
  const auto two = sim::intervals_with_active_count(trace, 2);
  os << "intervals_with_two_active: " << two.size() << '\n';
  for (const auto& iv : two) {
    os << "  [" << fmt_double(iv.t_begin) << ", " << fmt_double(iv.t_end) << "] " << iv.steps
       << " steps\n";
  }
  if (rep.hypothesis_violated) line("note", "initial state outside the safe set");
  line("invariance", rep.invariance_ok ? "ok" : "violated");
  line("structure", rep.structure_ok ? "ok" : "violated");
  line("result", rep.pass() ? "PASS" : "FAIL");
}

// 2x2 panels: outputs against their bounds, inputs, constraint values, multipliers.
inline void write_plot_script(std::ostream& os, const sim::SimTrace& trace, const TraceLabels& labels,
                              const std::string& csv_name = "trace.csv") {
  const auto header = csv_header(trace, labels);
  auto col = [&header](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return std::to_string(i + 1);
    }
    return std::string("0");
  };
  const auto& ch = trace.channel_names;
  const std::string src = "'" + csv_name + "'";

  os << "set datafile separator ','\n"
     << "set datafile columnheaders\n"
     << "set terminal pngcairo size 1400,900\n"
     << "set output 'trace.png'\n"
     << "set multiplot layout 2,2\n"
     << "set key outside right\n"
     << "set xlabel 't [s]'\n";

  os << "set title 'outputs and bounds'\nplot ";
  for (std::size_t i = 0; i < ch.size(); ++i) {
    if (i) os << ", \\\n     ";
    os << src << " using 1:" << col("y_" + ch[i]) << " with lines title '" << ch[i] << "', "
       << fmt_double(trace.lower[i]) << " with lines dashtype 2 title '" << ch[i] << " lower', "
       << fmt_double(trace.upper[i]) << " with lines dashtype 2 title '" << ch[i] << " upper'";
  }
  os << "\n";

  os << "set title 'inputs'\nplot ";
  for (std::size_t k = 0; k < labels.input_names.size(); ++k) {
    if (k) os << ", \\\n     ";
    const auto& u = labels.input_names[k];
    os << src << " using 1:" << col("u_" + u) << " with lines title '" << u << "'";
  }
  os << "\n";

  os << "set title 'constraint values'\nplot ";
  for (std::size_t i = 0; i < ch.size(); ++i) {
    for (const char* side : {"lower", "upper"}) {
      if (i || std::string(side) == "upper") os << ", \\\n     ";
      const auto name = "slack_" + ch[i] + "_" + side;
      os << src << " using 1:" << col(name) << " with lines title '" << ch[i] << " " << side
         << "'";
    }
  }
  os << "\n";

  os << "set title 'multipliers'\nplot ";
  for (std::size_t i = 0; i < ch.size(); ++i) {
    for (const char* side : {"lower", "upper"}) {
      if (i || std::string(side) == "upper") os << ", \\\n     ";
      const auto name = "lambda_" + ch[i] + "_" + side;
      os << src << " using 1:" << col(name) << " with lines title '" << ch[i] << " " << side
         << "'";
    }
  }
  os << "\n";
  os << "unset multiplot\n";
}

}  // namespace boxcbf::io
