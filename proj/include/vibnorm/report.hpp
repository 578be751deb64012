#pragma once

// Configuration, sweep orchestration and CSV/summary output for the command
// line tool. A run evaluates every (position, viscosity, T) combination with
// the fast engine, the dense reference, or both.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "vibnorm/engine.hpp"
#include "vibnorm/error.hpp"
#include "vibnorm/model.hpp"
#include "vibnorm/oracle.hpp"
#include "vibnorm/parallel.hpp"

namespace vibnorm {

enum class Mode { fast, reference, both };

inline Mode parse_mode(const std::string& s) {
  if (s == "fast") return Mode::fast;
  if (s == "reference") return Mode::reference;
  if (s == "both") return Mode::both;
  throw ConfigError("mode must be fast, reference or both (got '" + s + "')");
}

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::fast: return "fast";
    case Mode::reference: return "reference";
    case Mode::both: return "both";
  }
  return "?";
}

struct SystemDescriptor {
  std::string type;  ///< example1, ladder, example3 or explicit
  int n = 0;         ///< example1 / ladder
  int d = 0;         ///< example3
  double k4 = 0.0;   ///< example3
  double alpha = 0.005;
  Eigen::MatrixXd M;  ///< explicit
  Eigen::MatrixXd K;
  Eigen::VectorXd e;
};

struct RunConfig {
  SystemDescriptor system;
  std::vector<int> positions;  ///< damper positions; empty for explicit systems with "e"
  double p = 0.5;
  std::optional<int> r;
  std::optional<double> r_percent;
  std::vector<double> horizons;
  double tol = 1e-5;
  double tol_s = 0.05;
  int n_t = 20;
  int n_1 = 599;
  double s1_fraction = 1.0 / 25.0;
  int b0 = 8;
  int b_max = 12;
  std::optional<double> gamma_max;
  std::vector<double> viscosities;
  Mode mode = Mode::fast;
  int threads = 1;
  double drop_factor = 0.5;
  std::string output = "report.csv";
};

namespace detail {

class SchemaErrors {
 public:
  void add(std::string msg) { errors_.push_back(std::move(msg)); }
  bool empty() const { return errors_.empty(); }
  std::string joined() const {
    std::string out = "invalid configuration:";
    for (const auto& e : errors_) out += "\n  - " + e;
    return out;
  }

 private:
  std::vector<std::string> errors_;
};

using nlohmann::json;

inline void check_keys(const json& obj, const std::vector<std::string>& allowed,
                       const std::string& where, SchemaErrors& errs) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      errs.add(where + ": unknown key '" + it.key() + "'");
    }
  }
}

template <class T>
std::optional<T> get_number(const json& obj, const std::string& key, const std::string& where,
                            SchemaErrors& errs) {
  if (!obj.contains(key)) return std::nullopt;
  const json& v = obj.at(key);
  if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) {
      errs.add(where + "." + key + " must be an integer");
      return std::nullopt;
    }
  } else {
    if (!v.is_number()) {
      errs.add(where + "." + key + " must be a number");
      return std::nullopt;
    }
  }
  return v.get<T>();
}

inline std::optional<std::vector<double>> get_vector(const json& obj, const std::string& key,
                                                     const std::string& where, SchemaErrors& errs) {
  if (!obj.contains(key)) return std::nullopt;
  const json& v = obj.at(key);
  if (!v.is_array()) {
    errs.add(where + "." + key + " must be an array of numbers");
    return std::nullopt;
  }
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) {
      errs.add(where + "." + key + " must contain only numbers");
      return std::nullopt;
    }
    out.push_back(x.get<double>());
  }
  return out;
}

inline std::optional<Eigen::MatrixXd> get_matrix(const json& obj, const std::string& key,
                                                 const std::string& where, SchemaErrors& errs) {
  if (!obj.contains(key)) return std::nullopt;
  const json& v = obj.at(key);
  if (!v.is_array() || v.empty()) {
    errs.add(where + "." + key + " must be a non-empty array of rows");
    return std::nullopt;
  }
  const std::size_t rows = v.size();
  Eigen::MatrixXd M;
  for (std::size_t i = 0; i < rows; ++i) {
    const json& row = v[i];
    if (!row.is_array() || (i > 0 && row.size() != static_cast<std::size_t>(M.cols()))) {
      errs.add(where + "." + key + " rows must be arrays of equal length");
      return std::nullopt;
    }
    if (i == 0) M.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(row.size()));
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (!row[j].is_number()) {
        errs.add(where + "." + key + " entries must be numbers");
        return std::nullopt;
      }
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j].get<double>();
    }
  }
  return M;
}

// K as {"diag": [...], "off": [...]} (symmetric tridiagonal).
inline std::optional<Eigen::MatrixXd> get_bands(const json& obj, const std::string& key,
                                                const std::string& where, SchemaErrors& errs) {
  if (!obj.contains(key)) return std::nullopt;
  const json& b = obj.at(key);
  if (!b.is_object()) {
    errs.add(where + "." + key + " must be an object with 'diag' and 'off'");
    return std::nullopt;
  }
  check_keys(b, {"diag", "off"}, where + "." + key, errs);
  const auto diag = get_vector(b, "diag", where + "." + key, errs);
  const auto off = get_vector(b, "off", where + "." + key, errs);
  if (!diag || !off) {
    if (!diag) errs.add(where + "." + key + ".diag is required");
    if (!off) errs.add(where + "." + key + ".off is required");
    return std::nullopt;
  }
  if (off->size() + 1 != diag->size()) {
    errs.add(where + "." + key + ".off must have one entry fewer than diag");
    return std::nullopt;
  }
  const auto n = static_cast<Eigen::Index>(diag->size());
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = (*diag)[static_cast<std::size_t>(i)];
    if (i + 1 < n) {
      K(i, i + 1) = (*off)[static_cast<std::size_t>(i)];
      K(i + 1, i) = (*off)[static_cast<std::size_t>(i)];
    }
  }
  return K;
}

inline bool is_sorted_positive(const std::vector<double>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0)) return false;
  }
  return true;
}

inline SystemDescriptor parse_system(const json& sys, SchemaErrors& errs) {
  SystemDescriptor d;
  if (!sys.is_object()) {
    errs.add("system must be an object");
    return d;
  }
  if (!sys.contains("type") || !sys.at("type").is_string()) {
    errs.add("system.type is required (example1, ladder, example3 or explicit)");
    return d;
  }
  d.type = sys.at("type").get<std::string>();
  const std::string where = "system";
  if (auto a = get_number<double>(sys, "alpha", where, errs)) {
    if (!(*a > 0.0)) errs.add("system.alpha must be positive");
    d.alpha = *a;
  }
  if (d.type == "example1" || d.type == "ladder") {
    check_keys(sys, {"type", "n", "alpha"}, where, errs);
    const auto n = get_number<int>(sys, "n", where, errs);
    if (!n) {
      errs.add("system.n is required");
    } else if (*n <= 0 || (d.type == "example1" && *n % 4 != 0)) {
      errs.add(d.type == "example1" ? "system.n must be a positive multiple of 4"
                                    : "system.n must be positive");
    } else {
      d.n = *n;
    }
  } else if (d.type == "example3") {
    check_keys(sys, {"type", "d", "k4", "alpha"}, where, errs);
    const auto dd = get_number<int>(sys, "d", where, errs);
    const auto k4 = get_number<double>(sys, "k4", where, errs);
    if (!dd || *dd <= 0 || *dd % 2 != 0) errs.add("system.d must be a positive even integer");
    if (!k4 || !(*k4 > 0.0)) errs.add("system.k4 is required and must be positive");
    if (dd) d.d = *dd;
    if (k4) d.k4 = *k4;
  } else if (d.type == "explicit") {
    check_keys(sys, {"type", "M", "M_diag", "K", "K_bands", "e", "alpha"}, where, errs);
    if (auto M = get_matrix(sys, "M", where, errs)) {
      d.M = *M;
    } else if (auto md = get_vector(sys, "M_diag", where, errs)) {
      d.M = Eigen::Map<const Eigen::VectorXd>(md->data(), static_cast<Eigen::Index>(md->size()))
                .asDiagonal();
    } else {
      errs.add("system.M or system.M_diag is required");
    }
    if (auto K = get_matrix(sys, "K", where, errs)) {
      d.K = *K;
    } else if (auto Kb = get_bands(sys, "K_bands", where, errs)) {
      d.K = *Kb;
    } else {
      errs.add("system.K or system.K_bands is required");
    }
    if (auto e = get_vector(sys, "e", where, errs)) {
      d.e = Eigen::Map<const Eigen::VectorXd>(e->data(), static_cast<Eigen::Index>(e->size()));
    }
    if (d.M.size() && d.K.size() && (d.M.rows() != d.M.cols() || d.M.rows() != d.K.rows() ||
                                     d.K.rows() != d.K.cols())) {
      errs.add("system.M and system.K must be square and of equal size");
    }
    if (d.e.size() && d.M.size() && d.e.size() != d.M.rows()) {
      errs.add("system.e must have length n");
    }
    d.n = static_cast<int>(d.M.rows());
  } else {
    errs.add("system.type '" + d.type + "' is not one of example1, ladder, example3, explicit");
  }
  return d;
}

inline std::vector<double> parse_viscosities(const json& v, SchemaErrors& errs) {
  std::vector<double> out;
  if (v.is_array()) {
    for (const auto& x : v) {
      if (!x.is_number()) {
        errs.add("viscosities must contain only numbers");
        return {};
      }
      out.push_back(x.get<double>());
    }
  } else if (v.is_object()) {
    check_keys(v, {"start", "step", "count"}, "viscosities", errs);
    const auto start = get_number<double>(v, "start", "viscosities", errs);
    const auto step = get_number<double>(v, "step", "viscosities", errs);
    const auto count = get_number<int>(v, "count", "viscosities", errs);
    if (!start || !step || !count || *count < 1) {
      errs.add("viscosities range needs start, step and count >= 1");
      return {};
    }
    for (int i = 0; i < *count; ++i) out.push_back(*start + i * *step);
  } else {
    errs.add("viscosities must be an array or {start, step, count}");
  }
  for (double x : out) {
    if (!(x >= 0.0) || !std::isfinite(x)) errs.add("viscosities must be finite and nonnegative");
  }
  if (out.empty()) errs.add("viscosities must not be empty");
  return out;
}

}  // namespace detail

/// Validates the whole document and reports every problem at once.
inline RunConfig parse_config(const nlohmann::json& doc) {
  using detail::get_number;
  detail::SchemaErrors errs;
  RunConfig cfg;
  if (!doc.is_object()) throw ConfigError("invalid configuration:\n  - top level must be an object");
  detail::check_keys(doc,
                     {"system", "positions", "p", "r", "r_percent", "T", "T_list", "tol", "tol_s",
                      "n_t", "n_1", "s1_fraction", "b0", "b_max", "gamma_max", "viscosities",
                      "mode", "threads", "drop_factor", "output"},
                     "config", errs);

  if (!doc.contains("system")) {
    errs.add("system is required");
  } else {
    cfg.system = detail::parse_system(doc.at("system"), errs);
  }

  if (doc.contains("positions")) {
    const auto& pos = doc.at("positions");
    if (!pos.is_array()) {
      errs.add("positions must be an array of integers");
    } else {
      for (const auto& x : pos) {
        if (!x.is_number_integer()) {
          errs.add("positions must contain only integers");
          break;
        }
        cfg.positions.push_back(x.get<int>());
      }
    }
  }
  const int n = cfg.system.type == "example3" ? 3 * cfg.system.d + 1 : cfg.system.n;
  const int max_pos = cfg.system.type == "example3" ? 2 * cfg.system.d : n;
  for (int p : cfg.positions) {
    if (p < 1 || (max_pos > 0 && p > max_pos)) {
      errs.add("position " + std::to_string(p) + " outside 1.." + std::to_string(max_pos));
    }
  }
  if (cfg.positions.empty() && !(cfg.system.type == "explicit" && cfg.system.e.size())) {
    errs.add("positions is required unless an explicit system provides e");
  }

  if (auto p = get_number<double>(doc, "p", "config", errs)) cfg.p = *p;
  if (!(cfg.p >= 0.0 && cfg.p <= 1.0)) errs.add("p must lie in [0, 1]");
  cfg.r = get_number<int>(doc, "r", "config", errs);
  cfg.r_percent = get_number<double>(doc, "r_percent", "config", errs);
  if (cfg.r && cfg.r_percent) errs.add("give either r or r_percent, not both");
  if (!cfg.r && !cfg.r_percent) errs.add("r or r_percent is required");
  if (cfg.r && n > 0 && (*cfg.r < 1 || *cfg.r > n)) errs.add("r must lie in 1..n");
  if (cfg.r_percent && !(*cfg.r_percent > 0.0 && *cfg.r_percent <= 100.0)) {
    errs.add("r_percent must lie in (0, 100]");
  }

  if (auto T = get_number<double>(doc, "T", "config", errs)) cfg.horizons.push_back(*T);
  if (auto Ts = detail::get_vector(doc, "T_list", "config", errs)) {
    if (!cfg.horizons.empty()) errs.add("give either T or T_list, not both");
    cfg.horizons = *Ts;
  }
  if (cfg.horizons.empty()) errs.add("T or T_list is required");
  if (!detail::is_sorted_positive(cfg.horizons)) errs.add("horizons must be positive");

  if (auto v = get_number<double>(doc, "tol", "config", errs)) cfg.tol = *v;
  if (auto v = get_number<double>(doc, "tol_s", "config", errs)) cfg.tol_s = *v;
  if (auto v = get_number<int>(doc, "n_t", "config", errs)) cfg.n_t = *v;
  if (auto v = get_number<int>(doc, "n_1", "config", errs)) cfg.n_1 = *v;
  if (auto v = get_number<double>(doc, "s1_fraction", "config", errs)) cfg.s1_fraction = *v;
  if (auto v = get_number<int>(doc, "b0", "config", errs)) cfg.b0 = *v;
  if (auto v = get_number<int>(doc, "b_max", "config", errs)) cfg.b_max = *v;
  cfg.gamma_max = get_number<double>(doc, "gamma_max", "config", errs);
  if (!(cfg.tol > 0.0)) errs.add("tol must be positive");
  if (!(cfg.tol_s > 0.0)) errs.add("tol_s must be positive");
  if (cfg.n_t < 1) errs.add("n_t must be at least 1");
  if (cfg.n_1 < 3 || cfg.n_1 % 2 == 0) errs.add("n_1 must be odd and at least 3");
  if (!(cfg.s1_fraction > 0.0)) errs.add("s1_fraction must be positive");
  if (cfg.b0 < 1 || cfg.b_max < cfg.b0 || cfg.b_max > 24) errs.add("need 1 <= b0 <= b_max <= 24");
  if (cfg.gamma_max && !(*cfg.gamma_max >= 0.0)) errs.add("gamma_max must be nonnegative");

  if (!doc.contains("viscosities")) {
    errs.add("viscosities is required");
  } else {
    cfg.viscosities = detail::parse_viscosities(doc.at("viscosities"), errs);
  }

  if (doc.contains("mode")) {
    if (!doc.at("mode").is_string()) {
      errs.add("mode must be a string");
    } else {
      try {
        cfg.mode = parse_mode(doc.at("mode").get<std::string>());
      } catch (const ConfigError& e) {
        errs.add(e.what());
      }
    }
  }
  if (auto t = get_number<int>(doc, "threads", "config", errs)) cfg.threads = *t;
  if (cfg.threads < 1) errs.add("threads must be at least 1");
  if (auto f = get_number<double>(doc, "drop_factor", "config", errs)) cfg.drop_factor = *f;
  if (!(cfg.drop_factor > 0.0 && cfg.drop_factor < 1.0)) errs.add("drop_factor must lie in (0, 1)");
  if (doc.contains("output")) {
    if (doc.at("output").is_string()) {
      cfg.output = doc.at("output").get<std::string>();
    } else {
      errs.add("output must be a string");
    }
  }

  if (!errs.empty()) throw ConfigError(errs.joined());
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid configuration:\n  - JSON parse error: " + std::string(e.what()));
  }
  return parse_config(doc);
}

/// Physical system for one damper position (0 selects the explicit e).
inline SecondOrderSystem build_system(const SystemDescriptor& d, int position) {
  if (d.type == "example1") return build_example1(d.n, position, d.alpha);
  if (d.type == "ladder") return build_ladder(d.n, position, d.alpha);
  if (d.type == "example3") return build_example3(d.d, d.k4, position, d.alpha);
  if (d.type == "explicit") {
    SecondOrderSystem sys;
    sys.M = d.M;
    sys.K = d.K;
    sys.alpha = d.alpha;
    sys.damper_e = position == 0 ? d.e : unit_vector(d.M.rows(), position);
    return sys;
  }
  throw ConfigError("unknown system type '" + d.type + "'");
}

inline int resolve_r(const RunConfig& cfg, Eigen::Index n) {
  if (cfg.r) return *cfg.r;
  const int r = static_cast<int>(std::lround(static_cast<double>(n) * *cfg.r_percent / 100.0));
  return std::clamp(r, 1, static_cast<int>(n));
}

inline QuadratureSpec quadrature_spec(const RunConfig& cfg, const ModalSystem& modal) {
  QuadratureSpec spec;
  spec.tol = cfg.tol;
  spec.tol_s = cfg.tol_s;
  spec.n_t = cfg.n_t;
  spec.n_1 = cfg.n_1;
  spec.S1 = cfg.s1_fraction * modal.omega_max();
  spec.b0 = cfg.b0;
  spec.b_max = cfg.b_max;
  spec.gamma_max = cfg.gamma_max;
  return spec;
}

struct SweepRow {
  int position = 0;
  double viscosity = 0.0;
  double T = 0.0;
  std::optional<double> fast_value;
  std::optional<double> ref_value;
  std::optional<double> rel_err;
  double fast_ms = 0.0;
  double ref_ms = 0.0;
  std::size_t inner_nodes_max = 0;
  int adaptive_depth_max = 0;
  bool fast_failed = false;
  bool ref_failed = false;
  std::string message;  ///< failure detail; not part of the CSV

  bool ok() const { return !fast_failed && !ref_failed; }
};

struct SweepReport {
  Mode mode = Mode::fast;
  int threads = 1;
  std::vector<SweepRow> rows;

  bool ok() const {
    return std::all_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.ok(); });
  }
};

inline constexpr const char* kCsvHeader =
    "position,viscosity,T,fast_value,ref_value,rel_err,fast_ms,ref_ms,inner_nodes_max,"
    "adaptive_depth_max";

namespace detail {

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string opt_field(const std::optional<double>& v, bool failed) {
  if (failed) return "error";
  return v ? fmt(*v) : std::string();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("csv line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

}  // namespace detail

inline std::string to_csv(const SweepReport& report) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const SweepRow& r : report.rows) {
    out += std::to_string(r.position) + ',' + detail::fmt(r.viscosity) + ',' + detail::fmt(r.T) +
           ',' + detail::opt_field(r.fast_value, r.fast_failed) + ',' +
           detail::opt_field(r.ref_value, r.ref_failed) + ',' +
           (r.rel_err ? detail::fmt(*r.rel_err) : std::string()) + ',' + detail::fmt(r.fast_ms) +
           ',' + detail::fmt(r.ref_ms) + ',' + std::to_string(r.inner_nodes_max) + ',' +
           std::to_string(r.adaptive_depth_max) + '\n';
  }
  return out;
}

/// Inverse of to_csv for the CSV-visible fields (mode, threads and failure
/// messages are not stored in the file).
inline SweepReport parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw ConfigError("csv: unexpected header '" + line + "'");
  SweepReport report;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 10) {
      throw ConfigError("csv line " + std::to_string(lineno) + ": expected 10 fields");
    }
    SweepRow r;
    r.position = static_cast<int>(detail::parse_double(f[0], lineno));
    r.viscosity = detail::parse_double(f[1], lineno);
    r.T = detail::parse_double(f[2], lineno);
    auto opt = [&](const std::string& s, bool& failed) -> std::optional<double> {
      if (s == "error") {
        failed = true;
        return std::nullopt;
      }
      if (s.empty()) return std::nullopt;
      return detail::parse_double(s, lineno);
    };
    r.fast_value = opt(f[3], r.fast_failed);
    r.ref_value = opt(f[4], r.ref_failed);
    if (!f[5].empty()) r.rel_err = detail::parse_double(f[5], lineno);
    r.fast_ms = detail::parse_double(f[6], lineno);
    r.ref_ms = detail::parse_double(f[7], lineno);
    r.inner_nodes_max = static_cast<std::size_t>(detail::parse_double(f[8], lineno));
    r.adaptive_depth_max = static_cast<int>(detail::parse_double(f[9], lineno));
    report.rows.push_back(std::move(r));
  }
  return report;
}

struct CurvePoint {
  double viscosity = 0.0;
  double value = 0.0;
};

/// Smallest viscosity whose value is at most drop_factor times the value at
/// the smallest viscosity; nullopt if the curve never drops that far.
inline std::optional<double> effective_viscosity(std::span<const CurvePoint> curve,
                                                 double drop_factor = 0.5) {
  if (curve.size() < 2) throw ContractViolation("effective_viscosity needs at least 2 points");
  if (!(drop_factor > 0.0 && drop_factor < 1.0)) {
    throw ConfigError("drop_factor must lie in (0, 1)");
  }
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (!(curve[i].viscosity > curve[i - 1].viscosity)) {
      throw ContractViolation("effective_viscosity needs a curve sorted by viscosity");
    }
  }
  const double threshold = drop_factor * curve.front().value;
  for (const CurvePoint& c : curve) {
    if (c.value <= threshold) return c.viscosity;
  }
  return std::nullopt;
}

struct PositionSummary {
  int position = 0;
  std::size_t rows = 0;
  std::size_t failed = 0;
  std::optional<double> mean_rel_err;
  std::optional<double> mean_speedup;  ///< mean of ref_ms / fast_ms
  std::vector<std::pair<double, std::optional<double>>> effective_viscosity;  ///< per T
};

inline std::vector<PositionSummary> summarize(const SweepReport& report, double drop_factor = 0.5) {
  std::vector<int> order;
  for (const SweepRow& r : report.rows) {
    if (std::find(order.begin(), order.end(), r.position) == order.end()) order.push_back(r.position);
  }
  std::vector<PositionSummary> out;
  for (int pos : order) {
    PositionSummary s;
    s.position = pos;
    double err_sum = 0.0, speed_sum = 0.0;
    std::size_t err_n = 0, speed_n = 0;
    std::map<double, std::vector<CurvePoint>> curves;
    for (const SweepRow& r : report.rows) {
      if (r.position != pos) continue;
      ++s.rows;
      if (!r.ok()) ++s.failed;
      if (r.rel_err) {
        err_sum += *r.rel_err;
        ++err_n;
      }
      if (r.fast_value && r.ref_value && r.fast_ms > 0.0) {
        speed_sum += r.ref_ms / r.fast_ms;
        ++speed_n;
      }
      const std::optional<double> v = r.ref_value ? r.ref_value : r.fast_value;
      if (v) curves[r.T].push_back({r.viscosity, *v});
    }
    if (err_n) s.mean_rel_err = err_sum / static_cast<double>(err_n);
    if (speed_n) s.mean_speedup = speed_sum / static_cast<double>(speed_n);
    for (auto& [T, curve] : curves) {
      std::sort(curve.begin(), curve.end(),
                [](const CurvePoint& a, const CurvePoint& b) { return a.viscosity < b.viscosity; });
      std::optional<double> veff;
      if (curve.size() >= 2) veff = effective_viscosity(curve, drop_factor);
      s.effective_viscosity.emplace_back(T, veff);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string hardware_string() {
  std::string model = "unknown cpu";
  std::ifstream cpu("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpu, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
      break;
    }
  }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads";
}

inline std::string format_summary(const SweepReport& report, double drop_factor = 0.5) {
  std::ostringstream os;
  os << "mode " << mode_name(report.mode) << ", threads " << report.threads << ", "
     << hardware_string() << '\n';
  for (const PositionSummary& s : summarize(report, drop_factor)) {
    os << "position " << s.position << ": " << s.rows << " rows";
    if (s.failed) os << " (" << s.failed << " failed)";
    if (s.mean_rel_err) os << ", mean rel err " << std::scientific << std::setprecision(3) << *s.mean_rel_err;
    if (s.mean_speedup) os << ", mean speedup " << std::fixed << std::setprecision(2) << *s.mean_speedup;
    os << std::defaultfloat << '\n';
    for (const auto& [T, v] : s.effective_viscosity) {
      os << "  T " << T << ": effective viscosity ";
      if (v) {
        os << *v;
      } else {
        os << "none";
      }
      os << '\n';
    }
  }
  for (const SweepRow& r : report.rows) {
    if (!r.ok()) {
      os << "error at position " << r.position << ", viscosity " << r.viscosity << ", T " << r.T
         << ": " << r.message << '\n';
    }
  }
  return os.str();
}

struct RunOptions {
  std::optional<Mode> mode;   ///< overrides the config
  std::optional<int> threads;
};

/// Runs every configured sweep. Failures are recorded per row, never thrown;
/// configuration problems still throw ConfigError.
inline SweepReport run(const RunConfig& cfg, const RunOptions& opt = {}) {
  SweepReport report;
  report.mode = opt.mode.value_or(cfg.mode);
  report.threads = opt.threads.value_or(cfg.threads);
  const bool want_fast = report.mode != Mode::reference;
  const bool want_ref = report.mode != Mode::fast;
  const int threads = report.threads;

  std::vector<int> positions = cfg.positions;
  if (positions.empty()) positions.push_back(0);

  for (int pos : positions) {
    const std::size_t first_row = report.rows.size();
    for (double v : cfg.viscosities) {
      for (double T : cfg.horizons) {
        SweepRow row;
        row.position = pos;
        row.viscosity = v;
        row.T = T;
        report.rows.push_back(row);
      }
    }
    auto rows_at = [&](std::size_t vi) {
      return report.rows.begin() + static_cast<std::ptrdiff_t>(first_row + vi * cfg.horizons.size());
    };
    auto fail_all = [&](bool fast, const std::string& msg) {
      for (std::size_t i = first_row; i < report.rows.size(); ++i) {
        (fast ? report.rows[i].fast_failed : report.rows[i].ref_failed) = true;
        if (report.rows[i].message.empty()) report.rows[i].message = msg;
      }
    };

    ModalSystem modal;
    try {
      modal = modal_transform(build_system(cfg.system, pos));
    } catch (const Error& e) {
      if (want_fast) fail_all(true, e.what());
      if (want_ref) fail_all(false, e.what());
      continue;
    }
    NormProblem problem{cfg.p, resolve_r(cfg, modal.n()), cfg.horizons.front()};

    if (want_fast) {
      try {
        const auto t0 = detail::Clock::now();
        const QuadratureSpec spec = with_resolved_gamma(modal, quadrature_spec(cfg, modal), cfg.viscosities);
        const auto freq = build_frequency_tables(modal, spec, threads);
        std::vector<OfflineTables> per_T;
        for (double T : cfg.horizons) per_T.push_back({freq, build_time_tables(*freq, T, spec.n_t)});
        const double offline_ms = detail::ms_since(t0);
        const double offline_share =
            offline_ms / static_cast<double>(cfg.viscosities.size() * cfg.horizons.size());

        for (std::size_t vi = 0; vi < cfg.viscosities.size(); ++vi) {
          auto it = rows_at(vi);
          try {
            const double gamma = modal.gamma(cfg.viscosities[vi]);
            check_gamma(gamma, *freq);
            const auto t1 = detail::Clock::now();
            const RowCoefficients rc = row_coefficients(modal, *freq, problem.r, gamma, threads);
            const double coeff_share = detail::ms_since(t1) / static_cast<double>(cfg.horizons.size());
            for (std::size_t ti = 0; ti < cfg.horizons.size(); ++ti, ++it) {
              problem.T = cfg.horizons[ti];
              const auto t2 = detail::Clock::now();
              const NormValue nv = integrate_norm(modal, problem, spec, per_T[ti], rc, threads);
              it->fast_value = nv.value;
              it->fast_ms = detail::ms_since(t2) + coeff_share + offline_share;
              it->inner_nodes_max = nv.diagnostics.inner_nodes_max;
              it->adaptive_depth_max = nv.diagnostics.adaptive_depth_max;
            }
          } catch (const Error& e) {
            for (auto jt = rows_at(vi); jt != rows_at(vi) + static_cast<std::ptrdiff_t>(cfg.horizons.size()); ++jt) {
              jt->fast_failed = true;
              jt->fast_value.reset();
              if (jt->message.empty()) jt->message = e.what();
            }
          }
        }
      } catch (const Error& e) {
        fail_all(true, e.what());
      }
    }

    if (want_ref) {
      for (std::size_t vi = 0; vi < cfg.viscosities.size(); ++vi) {
        auto it = rows_at(vi);
        try {
          const auto t0 = detail::Clock::now();
          const StateSpace ss = state_space(modal, problem, cfg.viscosities[vi]);
          const Eigen::MatrixXd X = lyap(ss.A, ss.Z());
          const double lyap_share = detail::ms_since(t0) / static_cast<double>(cfg.horizons.size());
          const double trace = X.trace();
          for (std::size_t ti = 0; ti < cfg.horizons.size(); ++ti, ++it) {
            const auto t1 = detail::Clock::now();
            it->ref_value = trace - congruence_trace(expm(ss.A, cfg.horizons[ti]), X);
            it->ref_ms = detail::ms_since(t1) + lyap_share;
          }
        } catch (const Error& e) {
          for (auto jt = rows_at(vi); jt != rows_at(vi) + static_cast<std::ptrdiff_t>(cfg.horizons.size()); ++jt) {
            jt->ref_failed = true;
            jt->ref_value.reset();
            if (jt->message.empty()) jt->message = e.what();
          }
        }
      }
    }

    for (std::size_t i = first_row; i < report.rows.size(); ++i) {
      SweepRow& r = report.rows[i];
      if (r.fast_value && r.ref_value) {
        r.rel_err = std::abs(*r.fast_value - *r.ref_value) / std::abs(*r.ref_value);
      }
    }
  }
  return report;
}

struct BenchmarkReport {
  int threads = 1;
  std::string hardware;
  std::vector<PositionSummary> positions;
  std::optional<double> mean_speedup;  ///< over all rows with both values
  SweepReport sweep;
};

/// run() in mode both, plus the per-position mean of ref_ms / fast_ms.
inline BenchmarkReport benchmark(const RunConfig& cfg, std::optional<int> threads = std::nullopt) {
  BenchmarkReport b;
  RunOptions opt;
  opt.mode = Mode::both;
  opt.threads = threads;
  b.sweep = run(cfg, opt);
  b.threads = b.sweep.threads;
  b.hardware = hardware_string();
  b.positions = summarize(b.sweep, cfg.drop_factor);
  double sum = 0.0;
  std::size_t count = 0;
  for (const SweepRow& r : b.sweep.rows) {
    if (r.fast_value && r.ref_value && r.fast_ms > 0.0) {
      sum += r.ref_ms / r.fast_ms;
      ++count;
    }
  }
  if (count) b.mean_speedup = sum / static_cast<double>(count);
  return b;
}

inline std::string format_benchmark(const BenchmarkReport& b) {
  std::ostringstream os;
  os << "threads " << b.threads << ", " << b.hardware << '\n';
  for (const PositionSummary& s : b.positions) {
    os << "position " << s.position << ": mean speedup ";
    if (s.mean_speedup) {
      os << std::fixed << std::setprecision(2) << *s.mean_speedup;
    } else {
      os << "n/a";
    }
    if (s.mean_rel_err) os << ", mean rel err " << std::scientific << std::setprecision(3) << *s.mean_rel_err;
    os << std::defaultfloat << '\n';
  }
  os << "overall mean speedup ";
  if (b.mean_speedup) {
    os << std::fixed << std::setprecision(2) << *b.mean_speedup;
  } else {
    os << "n/a";
  }
  os << '\n';
  return os.str();
}

}  // namespace vibnorm
