#pragma once

// Flat key = value scenario files with dotted sections:
//
//   model = planar_drone
//   channel.z.lower = 0.5
//   channel.z.roots = -1, -1
//   setpoint.0.target = 1, 1, 0, 0, 0, 0
//
// '#' starts a comment. Unknown and repeated keys are errors. docs/config.md
// lists every key.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "boxcbf/sim.hpp"

namespace boxcbf {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string source, int line, std::string key, const std::string& what)
      : std::runtime_error(format(source, line, key, what)),
        source_(std::move(source)), line_(line), key_(std::move(key)) {}

  const std::string& source() const noexcept { return source_; }
  int line() const noexcept { return line_; }
  const std::string& key() const noexcept { return key_; }

 private:
  static std::string format(const std::string& src, int line, const std::string& key,
                            const std::string& what) {
    std::ostringstream os;
    os << src;
    if (line > 0) os << ":" << line;
    if (!key.empty()) os << ": " << key;
    os << ": " << what;
    return os.str();
  }
  std::string source_;
  int line_;
  std::string key_;
};

struct RunConfig {
  sim::Scenario scenario;
  std::uint64_t seed = 0;
  int decimate = 1;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

struct Entry {
  std::string value;
  int line = 0;
  bool used = false;
};

class KeyValues {
 public:
  KeyValues(std::string source, std::map<std::string, Entry> entries)
      : source_(std::move(source)), entries_(std::move(entries)) {}

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const auto it = entries_.find(key);
    throw ConfigError(source_, it == entries_.end() ? 0 : it->second.line, key, what);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  const std::string* raw(const std::string& key) {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    it->second.used = true;
    return &it->second.value;
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const auto* v = raw(key);
    return v ? *v : fallback;
  }

  double number(const std::string& key, double fallback) {
    const auto* v = raw(key);
    if (!v) return fallback;
    double d = 0.0;
    if (!parse_double(*v, d)) fail(key, "expected a number, got '" + *v + "'");
    return d;
  }

  double required_number(const std::string& key) {
    if (!has(key)) throw ConfigError(source_, 0, key, "missing required key");
    return number(key, 0.0);
  }

  std::vector<double> list(const std::string& key) {
    const auto* v = raw(key);
    if (!v) throw ConfigError(source_, 0, key, "missing required key");
    std::vector<double> out;
    std::string_view rest = *v;
    while (true) {
      const auto comma = rest.find(',');
      const auto item = rest.substr(0, comma);
      double d = 0.0;
      if (!parse_double(item, d)) {
        fail(key, "expected a comma-separated list of numbers, got '" + *v + "'");
      }
      out.push_back(d);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    return out;
  }

  long integer(const std::string& key, long fallback) {
    const auto* v = raw(key);
    if (!v) return fallback;
    const auto s = trim(*v);
    long out = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
      fail(key, "expected an integer, got '" + *v + "'");
    }
    return out;
  }

  // Distinct middle components of keys "<prefix>.<name>.<field>", in file order.
  std::vector<std::string> groups(const std::string& prefix) const {
    std::vector<std::pair<int, std::string>> found;
    const std::string p = prefix + ".";
    for (const auto& [k, e] : entries_) {
      if (k.rfind(p, 0) != 0) continue;
      const auto dot = k.find('.', p.size());
      if (dot == std::string::npos) continue;
      std::string name = k.substr(p.size(), dot - p.size());
      const auto it = std::find_if(found.begin(), found.end(),
                                   [&](const auto& f) { return f.second == name; });
      if (it == found.end()) {
        found.emplace_back(e.line, name);
      } else {
        it->first = std::min(it->first, e.line);
      }
    }
    std::sort(found.begin(), found.end());
    std::vector<std::string> out;
    for (auto& f : found) out.push_back(std::move(f.second));
    return out;
  }

  void reject_unused() const {
    const Entry* first = nullptr;
    std::string key;
    for (const auto& [k, e] : entries_) {
      if (!e.used && (!first || e.line < first->line)) {
        first = &e;
        key = k;
      }
    }
    if (first) throw ConfigError(source_, first->line, key, "unknown key");
  }

  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::map<std::string, Entry> entries_;
};

inline KeyValues tokenize(std::istream& in, const std::string& source) {
  std::map<std::string, Entry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source, lineno, "", "expected 'key = value', got '" + std::string(s) + "'");
    }
    const std::string key(trim(s.substr(0, eq)));
    const std::string value(trim(s.substr(eq + 1)));
    if (key.empty()) throw ConfigError(source, lineno, "", "empty key");
    if (value.empty()) throw ConfigError(source, lineno, key, "empty value");
    if (const auto it = entries.find(key); it != entries.end()) {
      throw ConfigError(source, lineno, key,
                        "duplicate key (first set on line " + std::to_string(it->second.line) + ")");
    }
    entries.emplace(key, Entry{value, lineno, false});
  }
  return KeyValues(source, std::move(entries));
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline RunConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  auto kv = detail::tokenize(in, source);
  RunConfig rc;
  auto& sc = rc.scenario;

  sc.model = kv.string("model", sc.model);
  int n = 0;
  try {
    n = sim::plant_state_dim(sc.model);
  } catch (const ConstructionError&) {
    kv.fail("model", "unknown model '" + sc.model +
                         "' (expected planar_drone, double_integrator or drone_with_rom)");
  }
  sc.gravity = kv.number("model.gravity", sc.gravity);
  if (!(sc.gravity > 0.0)) kv.fail("model.gravity", "must be positive");
  sc.theta_margin = kv.number("model.theta_margin", sc.theta_margin);
  if (!(sc.theta_margin >= 0.0 && sc.theta_margin < 1.5707963267948966)) {
    kv.fail("model.theta_margin", "must lie in [0, pi/2)");
  }
  sc.adapter.kp_theta = kv.number("adapter.kp_theta", sc.adapter.kp_theta);
  sc.adapter.kd_theta = kv.number("adapter.kd_theta", sc.adapter.kd_theta);
  if (!(sc.adapter.kp_theta > 0.0)) kv.fail("adapter.kp_theta", "must be positive");
  if (!(sc.adapter.kd_theta > 0.0)) kv.fail("adapter.kd_theta", "must be positive");

  for (const auto& name : kv.groups("channel")) {
    const std::string p = "channel." + name + ".";
    sim::ChannelSpec ch;
    ch.name = name;
    ch.lower = kv.required_number(p + "lower");
    ch.upper = kv.required_number(p + "upper");
    if (!(ch.lower < ch.upper)) {
      kv.fail(p + "upper", "channel '" + name + "': lower bound must be strictly below upper bound");
    }
    ch.roots = kv.list(p + "roots");
    for (double r : ch.roots) {
      if (!(r < 0.0)) kv.fail(p + "roots", "channel '" + name + "': roots must be negative");
    }
    sc.channels.push_back(std::move(ch));
  }
  if (sc.channels.empty()) throw ConfigError(source, 0, "channel", "no channels configured");

  sc.nominal.kp = kv.number("nominal.kp", sc.nominal.kp);
  sc.nominal.kd = kv.number("nominal.kd", sc.nominal.kd);
  sc.nominal.kp_x = kv.number("nominal.kp_x", sc.nominal.kp_x);
  sc.nominal.kd_x = kv.number("nominal.kd_x", sc.nominal.kd_x);

  std::vector<std::pair<double, Vector>> points;
  for (const auto& id : kv.groups("setpoint")) {
    const std::string p = "setpoint." + id + ".";
    const double t = kv.required_number(p + "time");
    const auto target = kv.list(p + "target");
    if (static_cast<int>(target.size()) != n) {
      kv.fail(p + "target", "expected " + std::to_string(n) + " entries for '" + sc.model + "'");
    }
    points.emplace_back(t, detail::to_vector(target));
  }
  if (points.empty()) throw ConfigError(source, 0, "setpoint", "no setpoints configured");
  std::stable_sort(points.begin(), points.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [t, tg] : points) {
    sc.setpoints.times.push_back(t);
    sc.setpoints.targets.push_back(std::move(tg));
  }
  sc.setpoints.period = kv.number("setpoint.period", 0.0);

  const auto x0 = kv.list("x0");
  if (static_cast<int>(x0.size()) != n) {
    kv.fail("x0", "expected " + std::to_string(n) + " entries for '" + sc.model + "'");
  }
  sc.x0 = detail::to_vector(x0);
  sc.t_final = kv.number("t_final", sc.t_final);
  sc.dt = kv.number("dt", sc.dt);
  if (!(sc.dt > 0.0)) kv.fail("dt", "must be positive");
  if (!(sc.t_final >= sc.dt)) kv.fail("t_final", "must be at least dt");

  const auto integ = kv.string("integrator", "rk4");
  if (integ == "rk4") {
    sc.integrator = sim::Integrator::rk4;
  } else if (integ == "euler") {
    sc.integrator = sim::Integrator::euler;
  } else {
    kv.fail("integrator", "expected rk4 or euler, got '" + integ + "'");
  }

  const long seed = kv.integer("seed", 0);
  if (seed < 0) kv.fail("seed", "must be non-negative");
  rc.seed = static_cast<std::uint64_t>(seed);
  const long dec = kv.integer("decimate", 1);
  if (dec < 1) kv.fail("decimate", "must be at least 1");
  rc.decimate = static_cast<int>(dec);

  kv.reject_unused();

  try {
    sim::validate_scenario(sc);
    const auto loop = sim::build_closed_loop(sc);
    (void)loop;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(source, 0, "", e.what());
  }
  return rc;
}

inline RunConfig parse_config_string(const std::string& text, const std::string& source = "<string>") {
  std::istringstream in(text);
  return parse_config(in, source);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "", "cannot open file");
  return parse_config(in, path);
}

}  // namespace boxcbf
