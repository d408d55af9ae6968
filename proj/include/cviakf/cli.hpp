#pragma once

// Command implementations behind tools/cviakf. Argument parsing lives in the
// tool; everything here takes resolved option structs so tests can drive the
// commands in-process.

#include "cviakf/selfcheck.hpp"
#include "cviakf/simulator.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace cviakf::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2 };

/// Bad flags, unknown keys, unparsable option values.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Unreadable or malformed input files, unwritable outputs.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// number formatting / parsing (locale independent, exact round trip)

inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_number(std::int64_t v) { return std::to_string(v); }

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_number(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size() || text.empty()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<double> parse_number_list(std::string_view text, std::string_view what) {
  std::vector<double> out;
  for (auto part : split(text, ',')) {
    const auto v = parse_number(part);
    if (!v) throw UsageError(std::string(what) + ": not a number: '" + std::string(trim(part)) + "'");
    out.push_back(*v);
  }
  return out;
}

/// One value -> value * I, N values -> diagonal, N*N values -> row-major.
template <int N>
Matrix<N> parse_matrix(std::string_view text, std::string_view what) {
  const auto v = parse_number_list(text, what);
  if (v.size() == 1) return v[0] * Matrix<N>::Identity();
  if (v.size() == static_cast<std::size_t>(N)) {
    return Eigen::Map<const Vector<N>>(v.data()).asDiagonal();
  }
  if (v.size() == static_cast<std::size_t>(N * N)) {
    return Eigen::Map<const Eigen::Matrix<double, N, N, Eigen::RowMajor>>(v.data());
  }
  throw UsageError(std::string(what) + ": expected 1, " + std::to_string(N) + " or " + std::to_string(N * N) +
                   " values, got " + std::to_string(v.size()));
}

template <int N>
Vector<N> parse_vector(std::string_view text, std::string_view what) {
  const auto v = parse_number_list(text, what);
  if (v.size() != static_cast<std::size_t>(N)) {
    throw UsageError(std::string(what) + ": expected " + std::to_string(N) + " values, got " +
                     std::to_string(v.size()));
  }
  return Eigen::Map<const Vector<N>>(v.data());
}

// ---------------------------------------------------------------------------
// config files: flat "key = value" lines, '#' comments, FilterConfig names

using ConfigEntries = std::map<std::string, std::string, std::less<>>;

inline ConfigEntries parse_config_text(std::string_view text, std::string_view source = "config") {
  ConfigEntries out;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(std::string(source) + ":" + std::to_string(line_no) + ": expected key = value");
    }
    out[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ConfigEntries load_config_file(const std::filesystem::path& path) {
  return parse_config_text(read_file(path), path.string());
}

inline void apply_config(FilterConfig4x2& cfg, const ConfigEntries& entries) {
  for (const auto& [key, value] : entries) {
    auto number = [&]() {
      const auto v = parse_number(value);
      if (!v) throw UsageError("config key " + key + ": not a number: '" + value + "'");
      return *v;
    };
    auto integer = [&]() {
      const double v = number();
      if (v != std::floor(v) || std::abs(v) > 9.0e15) throw UsageError("config key " + key + ": not an integer");
      return static_cast<std::int64_t>(v);
    };
    if (key == "tau_p") cfg.tau_p = number();
    else if (key == "tau_r") cfg.tau_r = number();
    else if (key == "rho_r") cfg.rho_r = number();
    else if (key == "nominal_q") cfg.nominal_q = parse_matrix<kStateDim>(value, key);
    else if (key == "nominal_r") cfg.nominal_r = parse_matrix<kMeasDim>(value, key);
    else if (key == "conv_threshold") cfg.conv_threshold = number();
    else if (key == "max_iters") cfg.max_iters = static_cast<int>(integer());
    else if (key == "learning_rate") cfg.learning_rate = number();
    else if (key == "sample_count") cfg.sample_count = static_cast<int>(integer());
    else if (key == "seed") {
      std::uint64_t s = 0;
      const auto res = std::from_chars(value.data(), value.data() + value.size(), s);
      if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
        throw UsageError("config key seed: not an unsigned integer");
      }
      cfg.seed = s;
    } else if (key == "resample_each_iteration") {
      if (value == "true" || value == "1") cfg.resample_each_iteration = true;
      else if (value == "false" || value == "0") cfg.resample_each_iteration = false;
      else throw UsageError("config key resample_each_iteration: expected true/false");
    } else if (key == "stop_rule") {
      if (value == "state_mean") cfg.stop_rule = ConvergenceTest::StateMean;
      else if (value == "all_factors") cfg.stop_rule = ConvergenceTest::AllFactors;
      else throw UsageError("config key stop_rule: expected state_mean or all_factors");
    } else {
      throw UsageError("unknown config key: " + key);
    }
  }
}

/// Command-line values that override the config file.
struct ConfigOverrides {
  std::optional<int> samples;
  std::optional<double> learning_rate;
  std::optional<int> max_iters;
};

inline void apply_overrides(FilterConfig4x2& cfg, const ConfigOverrides& o) {
  if (o.samples) cfg.sample_count = *o.samples;
  if (o.learning_rate) cfg.learning_rate = *o.learning_rate;
  if (o.max_iters) cfg.max_iters = *o.max_iters;
}

// ---------------------------------------------------------------------------
// CSV output

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw InputError("cannot write " + path.string());
  }

  template <class... T>
  void row(const T&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
    out_ << '\n';
  }

  void close() {
    out_.close();
    if (!out_) throw InputError("write failed: " + path_.string());
  }

 private:
  static std::string cell(double v) { return format_number(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::string_view v) { return std::string(v); }
  static std::string cell(const char* v) { return v; }
  static std::string cell(const std::string& v) { return v; }

  std::filesystem::path path_;
  std::ofstream out_;
};

inline void write_track_csv(const std::filesystem::path& path, const std::vector<int>& steps,
                            const TrackResult& track) {
  CsvWriter csv(path);
  csv.row("k", "x", "vx", "y", "vy", "var_x", "var_vx", "var_y", "var_vy", "iterations");
  for (Eigen::Index i = 0; i < track.estimates.rows(); ++i) {
    const auto& e = track.estimates;
    const auto& c = track.cov_diag;
    csv.row(steps[static_cast<std::size_t>(i)], e(i, 0), e(i, 1), e(i, 2), e(i, 3), c(i, 0), c(i, 1), c(i, 2), c(i, 3),
            track.iterations[static_cast<std::size_t>(i)]);
  }
  csv.close();
}

inline std::pair<const char*, const char*> measurement_columns(SensorKind kind) {
  return kind == SensorKind::LinearPosition ? std::pair{"x", "y"} : std::pair{"range", "azimuth_rad"};
}

inline void write_measurements_csv(const std::filesystem::path& path, SensorKind kind,
                                   const MeasurementSeries& y) {
  CsvWriter csv(path);
  const auto [a, b] = measurement_columns(kind);
  csv.row("k", a, b);
  for (Eigen::Index i = 0; i < y.rows(); ++i) csv.row(static_cast<int>(i) + 1, y(i, 0), y(i, 1));
  csv.close();
}

inline void write_truth_csv(const std::filesystem::path& path, const Trajectory& truth) {
  CsvWriter csv(path);
  csv.row("k", "x", "vx", "y", "vy");
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    csv.row(static_cast<int>(i) + 1, truth(i, 0), truth(i, 1), truth(i, 2), truth(i, 3));
  }
  csv.close();
}

// ---------------------------------------------------------------------------
// measurement files

struct MeasurementFile {
  std::vector<int> steps;
  MeasurementSeries values;
};

/// Header "k,<a>,<b>" with the sensor's column names, then one row per step
/// with strictly increasing integer k.
inline MeasurementFile parse_measurements(std::string_view text, SensorKind kind,
                                          std::string_view source = "measurements") {
  auto fail = [&](int line, const std::string& msg) -> InputError {
    return InputError(std::string(source) + ":" + std::to_string(line) + ": " + msg);
  };
  const auto [col_a, col_b] = measurement_columns(kind);
  std::vector<std::string_view> lines = split(text, '\n');
  if (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw fail(1, "missing header");

  const auto header = split(lines[0], ',');
  if (header.size() != 3 || trim(header[0]) != "k" || trim(header[1]) != col_a || trim(header[2]) != col_b) {
    throw fail(1, std::string("expected header k,") + col_a + "," + col_b);
  }

  MeasurementFile out;
  std::vector<double> flat;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const int line_no = static_cast<int>(li) + 1;
    if (trim(lines[li]).empty()) throw fail(line_no, "empty row");
    const auto cells = split(lines[li], ',');
    if (cells.size() != 3) throw fail(line_no, "expected 3 columns, got " + std::to_string(cells.size()));
    const auto k = parse_number(cells[0]);
    if (!k || *k != std::floor(*k) || std::abs(*k) > 1e9) throw fail(line_no, "k is not an integer");
    const int step = static_cast<int>(*k);
    if (!out.steps.empty() && step <= out.steps.back()) throw fail(line_no, "k must increase strictly");
    const auto a = parse_number(cells[1]);
    const auto b = parse_number(cells[2]);
    if (!a || !b || !std::isfinite(*a) || !std::isfinite(*b)) throw fail(line_no, "malformed measurement value");
    if (kind == SensorKind::RangeAzimuth) {
      if (*a < 0.0) throw fail(line_no, "range must be >= 0");
      if (!(*b > -std::numbers::pi && *b <= std::numbers::pi)) throw fail(line_no, "azimuth outside (-pi, pi]");
    }
    out.steps.push_back(step);
    flat.push_back(*a);
    flat.push_back(*b);
  }
  if (out.steps.empty()) throw fail(2, "no measurement rows");
  out.values = Eigen::Map<const MeasurementSeries>(flat.data(), static_cast<Eigen::Index>(out.steps.size()), kMeasDim);
  return out;
}

inline MeasurementFile load_measurements(const std::filesystem::path& path, SensorKind kind) {
  return parse_measurements(read_file(path), kind, path.string());
}

// ---------------------------------------------------------------------------
// commands

inline std::optional<SensorKind> parse_sensor_kind(std::string_view text) {
  if (text == "linear") return SensorKind::LinearPosition;
  if (text == "range-azimuth") return SensorKind::RangeAzimuth;
  return std::nullopt;
}

inline std::vector<Method> parse_method_list(std::string_view text) {
  std::vector<Method> out;
  for (auto part : split(text, ',')) {
    const auto m = parse_method(trim(part));
    if (!m) throw UsageError("unknown method: '" + std::string(trim(part)) + "'");
    if (std::find(out.begin(), out.end(), *m) != out.end()) {
      throw UsageError("duplicate method: '" + std::string(trim(part)) + "'");
    }
    out.push_back(*m);
  }
  return out;
}

inline nlohmann::ordered_json matrix_json(const auto& m) {
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline nlohmann::ordered_json config_json(const FilterConfig4x2& cfg) {
  nlohmann::ordered_json j;
  j["tau_p"] = cfg.tau_p;
  j["tau_r"] = cfg.tau_r;
  j["rho_r"] = cfg.rho_r;
  j["nominal_q"] = matrix_json(cfg.nominal_q);
  j["nominal_r"] = matrix_json(cfg.nominal_r);
  j["conv_threshold"] = cfg.conv_threshold;
  j["max_iters"] = cfg.max_iters;
  j["learning_rate"] = cfg.learning_rate;
  j["sample_count"] = cfg.sample_count;
  j["seed"] = cfg.seed;
  j["resample_each_iteration"] = cfg.resample_each_iteration;
  j["stop_rule"] = cfg.stop_rule == ConvergenceTest::StateMean ? "state_mean" : "all_factors";
  return j;
}

inline std::string vector_text(const auto& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_number(v(i));
  return s;
}

struct SimulateOptions {
  std::string scenario;
  int runs = 100;
  std::uint64_t seed = 42;
  std::string methods = "kftcm,kfncm,cviakf";
  std::optional<std::filesystem::path> config_file;
  ConfigOverrides overrides;
  std::filesystem::path out = ".";
  std::optional<int> dump_run;
  unsigned workers = 0;
};

inline int cmd_simulate(const SimulateOptions& opt, std::ostream& log, std::ostream& err) {
  try {
    const auto id = parse_scenario_id(opt.scenario);
    if (!id) throw UsageError("unknown scenario: '" + opt.scenario + "' (expected s1, s2, s3 or s4)");
    if (opt.runs < 1) throw UsageError("--runs must be >= 1");
    if (opt.dump_run && (*opt.dump_run < 0 || *opt.dump_run >= opt.runs)) {
      throw UsageError("--dump-run must lie in [0, runs)");
    }
    const auto methods = parse_method_list(opt.methods);
    if (methods.empty()) throw UsageError("no methods given");

    const Scenario sc = make_scenario(*id);
    FilterConfig4x2 cfg = default_config(sc);
    if (opt.config_file) apply_config(cfg, load_config_file(*opt.config_file));
    apply_overrides(cfg, opt.overrides);
    cfg.seed = opt.seed;
    try {
      cfg.validate();
    } catch (const DomainError& e) {
      throw UsageError(e.what());
    }

    std::error_code ec;
    std::filesystem::create_directories(opt.out, ec);
    if (ec || !std::filesystem::is_directory(opt.out)) {
      throw InputError("cannot create output directory " + opt.out.string());
    }

    MonteCarloOptions mc;
    mc.workers = opt.workers;
    mc.dump_run = opt.dump_run;
    const MonteCarloResult result = run_monte_carlo(sc, methods, opt.runs, cfg, opt.seed, mc);

    CsvWriter armse_csv(opt.out / "armse.csv");
    armse_csv.row("method", "position_armse", "velocity_armse", "mean_iterations");
    for (const auto& row : result.table()) {
      armse_csv.row(row.method, row.position_armse, row.velocity_armse, row.mean_iterations);
    }
    armse_csv.close();

    for (const auto& m : result.methods) {
      CsvWriter csv(opt.out / ("rmse_" + std::string(to_string(m.method)) + ".csv"));
      csv.row("step", "position_rmse", "velocity_rmse");
      for (std::size_t k = 0; k < m.position_rmse.size(); ++k) {
        csv.row(static_cast<int>(k) + 1, m.position_rmse[k], m.velocity_rmse[k]);
      }
      csv.close();
    }

    nlohmann::ordered_json manifest;
    manifest["command"] = "simulate";
    manifest["scenario"] = std::string(to_string(sc.id));
    manifest["sensor"] = std::string(to_string(sc.measurement.kind));
    manifest["steps"] = sc.steps;
    manifest["runs"] = opt.runs;
    manifest["seed"] = opt.seed;
    auto names = nlohmann::ordered_json::array();
    for (Method m : methods) names.push_back(std::string(to_string(m)));
    manifest["methods"] = names;
    manifest["config"] = config_json(cfg);
    manifest["p0"] = matrix_json(sc.p0);
    auto summary = nlohmann::ordered_json::array();
    for (const auto& m : result.methods) {
      nlohmann::ordered_json s;
      s["method"] = std::string(to_string(m.method));
      s["position_armse"] = m.position_armse;
      s["velocity_armse"] = m.velocity_armse;
      s["mean_iterations"] = m.mean_iterations;
      s["nonconverged_steps"] = m.nonconverged_steps;
      summary.push_back(s);
    }
    manifest["results"] = summary;

    if (result.dump) {
      const RunDump& d = *result.dump;
      const std::string tag = "run" + std::to_string(d.run);
      write_measurements_csv(opt.out / ("measurements_" + tag + ".csv"), sc.measurement.kind, d.data.measurements);
      write_truth_csv(opt.out / ("truth_" + tag + ".csv"), d.data.truth);
      std::vector<int> steps(static_cast<std::size_t>(sc.steps));
      for (int k = 0; k < sc.steps; ++k) steps[static_cast<std::size_t>(k)] = k + 1;
      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        write_track_csv(opt.out / ("track_" + tag + "_" + std::string(to_string(methods[mi])) + ".csv"), steps,
                        d.tracks[mi]);
      }
      nlohmann::ordered_json dj;
      dj["run"] = d.run;
      dj["x_init"] = vector_text(d.x_init);
      dj["filter_seed"] = d.filter_seed;
      manifest["dump"] = dj;
    }

    std::ofstream mf(opt.out / "manifest.json", std::ios::binary);
    if (!mf) throw InputError("cannot write " + (opt.out / "manifest.json").string());
    mf << manifest.dump(2) << '\n';
    if (!mf) throw InputError("write failed: manifest.json");

    for (const auto& row : result.table()) {
      log << row.method << ": position " << format_number(row.position_armse) << " m, velocity "
          << format_number(row.velocity_armse) << " m/s, iterations " << format_number(row.mean_iterations) << '\n';
    }
    return kOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

struct TrackOptions {
  std::filesystem::path measurements;
  std::string model = "linear";
  std::optional<std::string> x0;
  std::optional<std::string> p0;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> config_file;
  ConfigOverrides overrides;
  std::filesystem::path out = "track.csv";
};

/// Default initial state: position from the first measurement, zero velocity.
inline State initial_state_from(SensorKind kind, const Measurement& y) {
  if (kind == SensorKind::LinearPosition) return {y(0), 0.0, y(1), 0.0};
  return {y(0) * std::cos(y(1)), 0.0, y(0) * std::sin(y(1)), 0.0};
}

inline int cmd_track(const TrackOptions& opt, std::ostream& log, std::ostream& err) {
  try {
    const auto kind = parse_sensor_kind(opt.model);
    if (!kind) throw UsageError("unknown model: '" + opt.model + "' (expected linear or range-azimuth)");

    // Tuning presets follow the built-in scenarios of the same sensor kind.
    const Scenario preset = make_scenario(*kind == SensorKind::LinearPosition ? ScenarioId::S1 : ScenarioId::S3);
    FilterConfig4x2 cfg = default_config(preset);
    if (opt.config_file) apply_config(cfg, load_config_file(*opt.config_file));
    apply_overrides(cfg, opt.overrides);
    if (opt.seed) cfg.seed = *opt.seed;
    try {
      cfg.validate();
    } catch (const DomainError& e) {
      throw UsageError(e.what());
    }

    const MeasurementFile file = load_measurements(opt.measurements, *kind);
    const State x_init = opt.x0 ? parse_vector<kStateDim>(*opt.x0, "--x0")
                                : initial_state_from(*kind, file.values.row(0).transpose());
    const StateMatrix p_init = opt.p0 ? parse_matrix<kStateDim>(*opt.p0, "--p0") : preset.p0;
    if (!is_spd<kStateDim>(p_init)) throw UsageError("--p0 must be symmetric positive definite");

    const TrackResult track = run_cviakf(preset.transition, preset.measurement, file.values, x_init, p_init, cfg,
                                         cfg.seed, {}, file.steps);
    write_track_csv(opt.out, file.steps, track);
    log << "tracked " << file.steps.size() << " steps, mean iterations " << format_number(track.mean_iterations())
        << ", non-converged " << track.nonconverged_steps << '\n';
    return kOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

struct SelfcheckOptions {
  int trials = 1000;
  int states = 50;
  std::uint64_t seed = 1;
};

template <class Estimator = ReparameterizedGradient>
int cmd_selfcheck(const SelfcheckOptions& opt, std::ostream& log, std::ostream& err,
                  const Estimator& estimator = {}) {
  if (opt.trials < 1 || opt.states < 1) {
    err << "error: --trials and --states must be >= 1\n";
    return kUsage;
  }
  try {
    const CheckReport reports[] = {
        gradient_check(opt.states, opt.seed, 64, 1e-5, estimator),
        pd_preservation_check(opt.trials, opt.seed + 1),
    };
    bool ok = true;
    for (const auto& r : reports) {
      log << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.trials - r.failures << "/" << r.trials
          << " ok, worst " << format_number(r.worst) << '\n';
      ok = ok && r.passed;
    }
    return ok ? kOk : kFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace cviakf::cli
