#pragma once

// File formats: matrices as {"rows", "cols", "data"} JSON or headerless CSV,
// targets, training configs, labelled datasets and the report documents the
// command-line tool writes.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "resid/error.hpp"
#include "resid/factorize.hpp"
#include "resid/landscape.hpp"
#include "resid/matcore.hpp"
#include "resid/memorize.hpp"
#include "resid/rng.hpp"
#include "resid/sampling.hpp"
#include "resid/train.hpp"

namespace resid {

using Json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

/// Shortest round-trip decimal form; "nan", "inf", "-inf" for the rest.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::InvalidArgument, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::InvalidArgument, "cannot write " + path);
  out << text;
}

inline Json matrix_to_json(const Mat& m) {
  Json data = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Json vector_to_json(const Vec& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Mat matrix_from_json(const Json& j) {
  require(j.is_object() && j.contains("rows") && j.contains("cols") && j.contains("data"),
          ErrorKind::Format, "matrix JSON needs rows, cols and data");
  require(j["rows"].is_number_integer() && j["cols"].is_number_integer() && j["data"].is_array(),
          ErrorKind::Format, "matrix JSON has mistyped fields");
  const auto rows = j["rows"].get<long long>();
  const auto cols = j["cols"].get<long long>();
  require(rows >= 0 && cols >= 0, ErrorKind::Format, "negative matrix shape");
  const Json& data = j["data"];
  require(static_cast<long long>(data.size()) == rows * cols, ErrorKind::Format,
          "matrix data has " + std::to_string(data.size()) + " entries, expected " +
              std::to_string(rows * cols));
  Mat m(rows, cols);
  for (long long k = 0; k < rows * cols; ++k) {
    require(data[static_cast<std::size_t>(k)].is_number(), ErrorKind::Format,
            "matrix entry " + std::to_string(k) + " is not a number");
    m(k / cols, k % cols) = data[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

inline Vec vector_from_json(const Json& j) {
  require(j.is_array(), ErrorKind::Format, "expected a JSON array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_number(), ErrorKind::Format, "vector entry is not a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(std::string_view field, std::size_t line) {
  field = trim(field);
  double x = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), x);
  require(res.ec == std::errc() && res.ptr == field.data() + field.size() && !field.empty(),
          ErrorKind::Format,
          "line " + std::to_string(line) + ": '" + std::string(field) + "' is not a number");
  return x;
}

/// Comma-separated numeric rows; blank lines are skipped.
inline std::vector<std::vector<double>> parse_csv_rows(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      row.push_back(parse_double(rest.substr(0, comma), lineno));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorKind::Format, "line " + std::to_string(lineno) + " has " +
                                         std::to_string(row.size()) + " fields, expected " +
                                         std::to_string(rows.front().size()));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline bool looks_like_json(const std::string& text) {
  const auto p = text.find_first_not_of(" \t\r\n");
  return p != std::string::npos && text[p] == '{';
}

}  // namespace detail

inline Mat parse_matrix_csv(const std::string& text) {
  const auto rows = detail::parse_csv_rows(text);
  require(!rows.empty(), ErrorKind::Format, "empty matrix CSV");
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline std::string matrix_to_csv(const Mat& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::Format, what + ": " + e.what());
  }
}

/// Matrix from JSON or CSV text.
inline Mat parse_matrix(const std::string& text) {
  if (detail::looks_like_json(text)) return matrix_from_json(parse_json(text, "matrix"));
  return parse_matrix_csv(text);
}

inline Mat read_matrix(const std::string& path) { return parse_matrix(read_text_file(path)); }

/// {"R": M, "Sigma": M, "noise_var": x} (Sigma and noise_var optional), a
/// bare matrix, or {"random": {"dim": d, "gamma": g}} drawn from `seed`.
inline Target target_from_json(const Json& j, std::uint64_t seed = 0) {
  require(j.is_object(), ErrorKind::Format, "target must be a JSON object");
  if (j.contains("rows")) return Target(matrix_from_json(j));
  if (j.contains("random")) {
    const Json& r = j["random"];
    require(r.is_object() && r.contains("dim") && r["dim"].is_number_integer() &&
                r.contains("gamma") && r["gamma"].is_number(),
            ErrorKind::Format, "random target needs integer dim and numeric gamma");
    const auto dim = r["dim"].get<long long>();
    const double gamma = r["gamma"].get<double>();
    require(dim >= 1 && gamma >= 0.0, ErrorKind::Format, "random target needs dim >= 1, gamma >= 0");
    Rng rng = make_rng(seed, "target");
    return Target(random_target_matrix(dim, gamma, rng));
  }
  require(j.contains("R"), ErrorKind::Format, "target JSON needs R");
  Mat r = matrix_from_json(j["R"]);
  Mat sigma = j.contains("Sigma") ? matrix_from_json(j["Sigma"]) : Mat::Identity(r.rows(), r.rows());
  double noise = 0.0;
  if (j.contains("noise_var")) {
    require(j["noise_var"].is_number(), ErrorKind::Format, "noise_var must be a number");
    noise = j["noise_var"].get<double>();
  }
  return Target(std::move(r), std::move(sigma), noise);
}

inline Target read_target(const std::string& path, std::uint64_t seed = 0) {
  const std::string text = read_text_file(path);
  if (!detail::looks_like_json(text)) return Target(parse_matrix_csv(text));
  return target_from_json(parse_json(text, path), seed);
}

inline Json target_to_json(const Target& t) {
  return Json{{"R", matrix_to_json(t.R())},
              {"Sigma", matrix_to_json(t.sigma())},
              {"noise_var", t.noise_var()}};
}

namespace detail {

template <class T>
T get_field(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j[key].get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorKind::Format, std::string("config field '") + key + "' has the wrong type");
  }
}

}  // namespace detail

/// Training config. Keys: target (see target_from_json), depth,
/// parameterization ("residual" | "standard"), init ("zero" | "gaussian" |
/// "factorized", or {"kind", "sigma"}), step_size, max_steps, stop_excess,
/// tau_monitor, seed, backtracking, project_tau.
inline TrainConfig train_config_from_json(const Json& j) {
  require(j.is_object(), ErrorKind::Format, "config must be a JSON object");
  static const std::vector<std::string> known = {
      "target", "depth", "parameterization", "init", "step_size", "max_steps", "stop_excess",
      "tau_monitor", "seed", "backtracking", "project_tau"};
  for (const auto& item : j.items())
    require(std::find(known.begin(), known.end(), item.key()) != known.end(), ErrorKind::Format,
            "unknown config key '" + item.key() + "'");
  require(j.contains("target") && j.contains("depth"), ErrorKind::Format,
          "config needs target and depth");

  const auto seed = detail::get_field<std::uint64_t>(j, "seed", 0);
  TrainConfig c{.target = target_from_json(j["target"], seed)};
  c.seed = seed;
  c.depth = detail::get_field<int>(j, "depth", 1);

  const auto param = detail::get_field<std::string>(j, "parameterization", "residual");
  require(param == "residual" || param == "standard", ErrorKind::Format,
          "parameterization must be residual or standard");
  c.parameterization = param == "residual" ? Parameterization::Residual : Parameterization::Standard;

  if (j.contains("init")) {
    const Json& ij = j["init"];
    std::string kind;
    if (ij.is_string()) {
      kind = ij.get<std::string>();
    } else {
      require(ij.is_object(), ErrorKind::Format, "init must be a string or an object");
      kind = detail::get_field<std::string>(ij, "kind", "zero");
      c.init.sigma = detail::get_field<double>(ij, "sigma", 0.0);
    }
    if (kind == "zero") {
      c.init.kind = InitKind::Zero;
    } else if (kind == "gaussian") {
      c.init.kind = InitKind::GaussianScale;
    } else if (kind == "factorized") {
      c.init.kind = InitKind::Factorized;
    } else {
      throw Error(ErrorKind::Format, "unknown init kind '" + kind + "'");
    }
  }
  c.step_size = detail::get_field<double>(j, "step_size", c.step_size);
  c.max_steps = detail::get_field<int>(j, "max_steps", c.max_steps);
  c.stop_excess = detail::get_field<double>(j, "stop_excess", c.stop_excess);
  c.backtracking = detail::get_field<bool>(j, "backtracking", false);
  if (j.contains("tau_monitor")) c.tau_monitor = detail::get_field<double>(j, "tau_monitor", 0.0);
  if (j.contains("project_tau")) c.project_tau = detail::get_field<double>(j, "project_tau", 0.0);
  try {
    validate(c);
  } catch (const Error& e) {
    throw Error(ErrorKind::Format, e.what());
  }
  return c;
}

inline Json train_config_to_json(const TrainConfig& c) {
  const char* init = c.init.kind == InitKind::Zero            ? "zero"
                     : c.init.kind == InitKind::GaussianScale ? "gaussian"
                                                              : "factorized";
  Json j{{"target", target_to_json(c.target)},
         {"depth", c.depth},
         {"parameterization", c.parameterization == Parameterization::Residual ? "residual" : "standard"},
         {"init", {{"kind", init}, {"sigma", c.init.sigma}}},
         {"step_size", c.step_size},
         {"max_steps", c.max_steps},
         {"stop_excess", c.stop_excess},
         {"seed", c.seed},
         {"backtracking", c.backtracking}};
  if (c.tau_monitor) j["tau_monitor"] = *c.tau_monitor;
  if (c.project_tau) j["project_tau"] = *c.project_tau;
  return j;
}

/// Rows of d feature columns followed by an integer label column.
inline Dataset parse_dataset_csv(const std::string& text, std::optional<double> rho = std::nullopt) {
  const auto rows = detail::parse_csv_rows(text);
  require(!rows.empty(), ErrorKind::Format, "empty dataset CSV");
  require(rows.front().size() >= 2, ErrorKind::Format,
          "dataset rows need at least one feature and a label");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows.front().size() - 1);
  Mat points(n, d);
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < d; ++j) points(i, j) = row[static_cast<std::size_t>(j)];
    const double label = row.back();
    require(std::isfinite(label) && label == std::floor(label) && std::abs(label) < 1e9,
            ErrorKind::Format, "row " + std::to_string(i + 1) + " has a non-integer label");
    labels.push_back(static_cast<int>(label));
  }
  return Dataset::make(std::move(points), std::move(labels), rho);
}

inline std::string dataset_to_csv(const Dataset& data) {
  std::string out;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) out += format_double(data.points(i, j)) + ',';
    out += std::to_string(data.labels[static_cast<std::size_t>(i)]) + '\n';
  }
  return out;
}

inline Json stack_to_json(const LayerStack& s) {
  Json layers = Json::array();
  for (const Mat& a : s.layers()) layers.push_back(matrix_to_json(a));
  return layers;
}

inline LayerStack stack_from_json(const Json& j) {
  require(j.is_array() && !j.empty(), ErrorKind::Format, "layers must be a non-empty array");
  std::vector<Mat> layers;
  for (const Json& l : j) layers.push_back(matrix_from_json(l));
  return LayerStack(std::move(layers));
}

inline Json report_to_json(const FactorizationReport& r) {
  Json origins = Json::array();
  for (LayerOrigin o : r.origins) origins.push_back(to_string(o));
  return Json{{"layers", stack_to_json(r.stack)},
              {"origins", std::move(origins)},
              {"depth", r.stack.depth()},
              {"gamma", r.gamma},
              {"norm_bound_claimed", r.norm_bound_claimed},
              {"maxnorm_achieved", r.maxnorm_achieved},
              {"reconstruction_rel_error", r.reconstruction_rel_error},
              {"certified", r.certified()},
              {"depth_split",
               {{"p", r.depth_split.p}, {"q", r.depth_split.q}, {"padding", r.depth_split.padding}}}};
}

inline Json block_to_json(const ResidualBlock& b) {
  return Json{{"U", matrix_to_json(b.U)}, {"V", matrix_to_json(b.V)}, {"s", vector_to_json(b.s)}};
}

inline ResidualBlock block_from_json(const Json& j) {
  require(j.is_object() && j.contains("U") && j.contains("V") && j.contains("s"), ErrorKind::Format,
          "block needs U, V and s");
  return ResidualBlock{matrix_from_json(j["U"]), matrix_from_json(j["V"]), vector_from_json(j["s"])};
}

inline Json net_to_json(const MemorizerNet& net) {
  Json blocks = Json::array();
  for (const auto& b : net.blocks) blocks.push_back(block_to_json(b));
  return Json{{"A0", matrix_to_json(net.A0)},
              {"blocks", std::move(blocks)},
              {"final_block", block_to_json(net.final_block)},
              {"surrogates", matrix_to_json(net.surrogates)},
              {"metadata",
               {{"k", net.k},
                {"ell", net.ell},
                {"rho", net.rho},
                {"rho_prime", net.rho_prime},
                {"seed", net.seed},
                {"attempts", net.attempts},
                {"parameter_count", net.parameter_count()},
                {"bias_count", net.bias_count()}}}};
}

inline MemorizerNet net_from_json(const Json& j) {
  require(j.is_object() && j.contains("A0") && j.contains("blocks") && j.contains("final_block") &&
              j.contains("surrogates") && j.contains("metadata"),
          ErrorKind::Format, "network JSON needs A0, blocks, final_block, surrogates, metadata");
  MemorizerNet net;
  net.A0 = matrix_from_json(j["A0"]);
  require(j["blocks"].is_array(), ErrorKind::Format, "blocks must be an array");
  for (const Json& b : j["blocks"]) net.blocks.push_back(block_from_json(b));
  net.final_block = block_from_json(j["final_block"]);
  net.surrogates = matrix_from_json(j["surrogates"]);
  const Json& m = j["metadata"];
  net.k = detail::get_field<Eigen::Index>(m, "k", net.A0.rows());
  net.ell = detail::get_field<int>(m, "ell", static_cast<int>(net.blocks.size()));
  net.rho = detail::get_field<double>(m, "rho", 0.0);
  net.rho_prime = detail::get_field<double>(m, "rho_prime", 0.0);
  net.seed = detail::get_field<std::uint64_t>(m, "seed", 0);
  net.attempts = detail::get_field<int>(m, "attempts", 0);
  return net;
}

inline Json fit_to_json(const FitReport& f) {
  Json j{{"fraction", f.fraction},
         {"max_deviation", f.max_deviation},
         {"layer_deviation", f.layer_deviation},
         {"layers_hold", f.layers_hold()}};
  j["first_broken_layer"] = f.first_broken_layer ? Json(*f.first_broken_layer) : Json(nullptr);
  return j;
}

inline constexpr const char* kTraceHeader = "step,excess,grad_norm,maxnorm,bound_slack";

inline std::string trace_to_csv(const TrainTrace& t) {
  std::string out = std::string(kTraceHeader) + '\n';
  for (const StepRecord& r : t.records) {
    out += std::to_string(r.step) + ',' + format_double(r.excess) + ',' +
           format_double(r.grad_norm) + ',' + format_double(r.maxnorm) + ',' +
           format_double(r.bound_slack) + '\n';
  }
  return out;
}

/// Everything needed to rerun a command, embedded in each JSON output.
struct RunManifest {
  std::string command;
  Json parameters = Json::object();
  std::uint64_t seed = 0;
  std::string version = kVersion;
  double duration_seconds = 0.0;
  std::vector<std::string> outputs;

  Json to_json() const {
    return Json{{"command", command},     {"parameters", parameters},
                {"seed", seed},           {"version", version},
                {"duration_seconds", duration_seconds}, {"outputs", outputs}};
  }
};

}  // namespace resid
