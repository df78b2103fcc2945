#pragma once

// The `resid` command-line tool. run() is the whole program minus process plumbing.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "resid/error.hpp"
#include "resid/factorize.hpp"
#include "resid/io.hpp"
#include "resid/landscape.hpp"
#include "resid/memorize.hpp"
#include "resid/rng.hpp"
#include "resid/train.hpp"

namespace resid::cli {

enum Exit : int {
  kOk = 0,
  kCheckFailed = 1,
  kNegativeDeterminant = 2,
  kDepthTooSmall = 3,
  kBoundViolated = 4,
  kDiverged = 5,
  kMemorizeFailed = 6,
  kUsage = 64,
  kDataFormat = 65,
};

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  bool quiet = false;
};

struct Context {
  Globals g;
  std::ostream& out;
  std::ostream& err;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void say(const std::string& line) const {
    if (!g.quiet) err << line << '\n';
  }

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }

  /// Writes the document to --out, or to stdout when no path is given.
  void emit(const Json& doc) const {
    if (g.out.empty()) {
      out << doc.dump(2) << '\n';
    } else {
      write_text_file(g.out, doc.dump(2) + '\n');
    }
  }
};

inline RunManifest manifest(const Context& ctx, std::string command, Json params,
                            std::vector<std::string> outputs) {
  RunManifest m;
  m.command = std::move(command);
  m.parameters = std::move(params);
  m.seed = ctx.g.seed;
  m.duration_seconds = ctx.elapsed();
  if (!ctx.g.out.empty()) outputs.insert(outputs.begin(), ctx.g.out);
  outputs.erase(std::remove(outputs.begin(), outputs.end(), std::string()), outputs.end());
  m.outputs = std::move(outputs);
  return m;
}

struct FactorizeArgs {
  std::string target;
  int depth = 0;
  bool psd = false;
  bool augment = false;
  bool rescale = false;
};

inline int cmd_factorize(const FactorizeArgs& a, const Context& ctx) {
  Mat r = read_target(a.target, ctx.g.seed).R();
  double scale = 1.0;
  if (a.rescale) {
    auto rs = rescale_target(r);
    r = std::move(rs.r);
    scale = rs.scale;
  }
  if (a.augment && r.determinant() < 0.0) r = augment_negative_det(r);

  FactorizationReport rep;
  try {
    rep = a.psd ? factorize_psd(r, a.depth) : factorize_general(r, a.depth);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NegativeDeterminant) {
      ctx.err << e.what() << "\nrerun with --augment-neg-det to factor diag(R, -1) instead\n";
      return kNegativeDeterminant;
    }
    throw;
  }

  Json doc = report_to_json(rep);
  doc["scale"] = scale;
  doc["manifest"] = manifest(ctx, "factorize",
                             {{"target", a.target},
                              {"depth", a.depth},
                              {"psd", a.psd},
                              {"augment_neg_det", a.augment},
                              {"rescale", a.rescale}},
                             {})
                        .to_json();
  ctx.emit(doc);
  ctx.say("depth " + std::to_string(rep.stack.depth()) + ", maxnorm " +
          format_double(rep.maxnorm_achieved) + " (bound " + format_double(rep.norm_bound_claimed) +
          "), reconstruction error " + format_double(rep.reconstruction_rel_error) +
          (rep.certified() ? ", certified" : ", NOT certified"));
  return rep.certified() ? kOk : kCheckFailed;
}

struct LandscapeArgs {
  std::string target;
  double tau = 0.5;
  int samples = 1000;
  int depth = 4;
  std::string csv;
};

inline int cmd_landscape(const LandscapeArgs& a, const Context& ctx) {
  if (!(a.tau > 0.0 && a.tau < 1.0)) {
    ctx.err << "--tau must lie in (0, 1), got " << a.tau << '\n';
    return kUsage;
  }
  if (a.samples < 0 || a.depth < 1) {
    ctx.err << "--samples must be >= 0 and --depth >= 1\n";
    return kUsage;
  }
  const Target target = read_target(a.target, ctx.g.seed);

  std::string csv = "sample,lhs,rhs,excess,relative_slack,holds\n";
  Json rows = Json::array();
  double min_slack = std::numeric_limits<double>::infinity();
  int violations = 0;
  for (int i = 0; i < a.samples; ++i) {
    Rng rng = make_rng(ctx.g.seed, "landscape/sample", static_cast<std::uint64_t>(i));
    const LayerStack stack = sample_stack_in_ball(target.dim(), a.depth, a.tau, rng);
    const BoundCheck b = check_gradient_lower_bound(stack, target, a.tau);
    const double slack = b.relative_slack();
    min_slack = std::min(min_slack, slack);
    if (!b.holds) ++violations;
    csv += std::to_string(i) + ',' + format_double(b.lhs) + ',' + format_double(b.rhs) + ',' +
           format_double(b.excess) + ',' + format_double(slack) + ',' + (b.holds ? "1" : "0") + '\n';
    rows.push_back({{"lhs", b.lhs}, {"rhs", b.rhs}, {"excess", b.excess}, {"relative_slack", slack}});
  }
  if (!a.csv.empty()) write_text_file(a.csv, csv);

  Json doc{{"samples", rows},
           {"sample_count", a.samples},
           {"violations", violations},
           {"coefficient", lower_bound_coefficient(a.depth, a.tau, target.sigma_min_cov())}};
  doc["min_slack"] = a.samples > 0 ? Json(min_slack) : Json(nullptr);
  doc["manifest"] = manifest(ctx, "landscape check-bound",
                             {{"target", a.target}, {"tau", a.tau}, {"samples", a.samples},
                              {"depth", a.depth}},
                             {a.csv})
                        .to_json();
  ctx.emit(doc);
  ctx.say(std::to_string(a.samples) + " samples, " + std::to_string(violations) +
          " violations, min relative slack " +
          (a.samples > 0 ? format_double(min_slack) : std::string("n/a")));
  return violations == 0 ? kOk : kBoundViolated;
}

struct TrainArgs {
  std::string config;
  std::string trace;
};

inline int cmd_train(const TrainArgs& a, const Context& ctx) {
  std::optional<TrainConfig> config;
  try {
    Json j = parse_json(read_text_file(a.config), a.config);
    if (j.is_object() && !j.contains("seed")) j["seed"] = ctx.g.seed;
    config = train_config_from_json(j);
  } catch (const Error& e) {
    ctx.err << "malformed config: " << e.what() << '\n';
    return kUsage;
  }

  const TrainTrace trace = run_gd(*config);
  if (!a.trace.empty()) write_text_file(a.trace, trace_to_csv(trace));

  const StepRecord& last = trace.records.back();
  Json doc{{"termination", to_string(trace.termination)},
           {"steps", last.step},
           {"final_excess", last.excess},
           {"final_grad_norm", last.grad_norm},
           {"final_maxnorm", last.maxnorm},
           {"left_ball", trace.left_ball},
           {"initial_excess", trace.records.front().excess}};
  if (trace.termination != Termination::Diverged) doc["layers"] = stack_to_json(trace.final_stack);
  doc["manifest"] =
      manifest(ctx, "train", {{"config", train_config_to_json(*config)}}, {a.trace}).to_json();
  ctx.emit(doc);
  ctx.say(std::string("termination ") + to_string(trace.termination) + " after " +
          std::to_string(last.step) + " steps, excess " + format_double(last.excess));

  switch (trace.termination) {
    case Termination::Diverged:
      return kDiverged;
    case Termination::StopExcess:
      return kOk;
    case Termination::StuckCriticalPoint:
      return config->parameterization == Parameterization::Standard ? kOk : kCheckFailed;
    case Termination::MaxSteps:
      return kCheckFailed;
  }
  return kCheckFailed;
}

struct MemorizeArgs {
  std::string data;
  std::string rho = "auto";
  std::string projection = "isometric";
  double jl_constant = 10.0;
  int retries = 5;
  std::string report;
};

inline int cmd_memorize(const MemorizeArgs& a, const Context& ctx) {
  std::optional<double> rho;
  if (a.rho != "auto") {
    try {
      std::size_t used = 0;
      rho = std::stod(a.rho, &used);
      if (used != a.rho.size() || !(*rho > 0.0)) throw std::invalid_argument(a.rho);
    } catch (const std::exception&) {
      ctx.err << "--rho must be 'auto' or a positive number\n";
      return kUsage;
    }
  }
  MemorizeOptions opt;
  opt.jl_constant = a.jl_constant;
  opt.retries = a.retries;
  opt.projection = a.projection == "gaussian" ? ProjectionKind::Gaussian : ProjectionKind::Isometric;

  std::optional<Dataset> data;
  try {
    data = parse_dataset_csv(read_text_file(a.data), rho);
  } catch (const Error& e) {
    ctx.err << e.what() << '\n';
    if (e.kind() == ErrorKind::Format || e.kind() == ErrorKind::InvalidDataset) return kDataFormat;
    if (e.kind() == ErrorKind::DuplicatePoints) return kMemorizeFailed;
    throw;
  }

  std::optional<MemorizerNet> net;
  try {
    net = build_memorizer(*data, ctx.g.seed, opt);
  } catch (const Error& e) {
    ctx.err << e.what() << '\n';
    return kMemorizeFailed;
  }
  const FitReport fit = verify_fit(*net, *data);

  const Json params{{"data", a.data},
                    {"rho", data->rho},
                    {"rho_source", rho ? "given" : "auto"},
                    {"projection", a.projection},
                    {"jl_constant", a.jl_constant},
                    {"retries", a.retries}};
  const RunManifest m = manifest(ctx, "memorize", params, {a.report});
  Json doc = net_to_json(*net);
  doc["manifest"] = m.to_json();
  ctx.emit(doc);
  if (!a.report.empty()) {
    Json rep = fit_to_json(fit);
    rep["parameter_count"] = net->parameter_count();
    rep["parameter_bound"] = parameter_bound(data->dim(), net->k, net->ell, data->num_classes);
    rep["manifest"] = m.to_json();
    write_text_file(a.report, rep.dump(2) + '\n');
  }
  ctx.say("n " + std::to_string(data->size()) + ", rho " + format_double(data->rho) + ", k " +
          std::to_string(net->k) + ", blocks " + std::to_string(net->ell) + ", fit fraction " +
          format_double(fit.fraction) + ", max deviation " + format_double(fit.max_deviation));
  return fit.fraction == 1.0 ? kOk : kCheckFailed;
}

struct VerifyArgs {
  std::string report;
  std::string target;
  std::string net;
  std::string data;
};

inline int cmd_verify(const VerifyArgs& a, const Context& ctx) {
  const bool factor_mode = !a.report.empty() || !a.target.empty();
  const bool net_mode = !a.net.empty() || !a.data.empty();
  if (factor_mode == net_mode || (factor_mode && (a.report.empty() || a.target.empty())) ||
      (net_mode && (a.net.empty() || a.data.empty()))) {
    ctx.err << "verify needs either --report with --target, or --net with --data\n";
    return kUsage;
  }
  if (factor_mode) {
    Json rep;
    LayerStack stack;
    try {
      rep = parse_json(read_text_file(a.report), a.report);
      require(rep.is_object() && rep.contains("layers"), ErrorKind::Format, "report has no layers");
      stack = stack_from_json(rep["layers"]);
    } catch (const Error& e) {
      ctx.err << e.what() << '\n';
      return kDataFormat;
    }
    Mat r = read_target(a.target, ctx.g.seed).R();
    if (rep.contains("scale") && rep["scale"].is_number()) r *= rep["scale"].get<double>();
    if (stack.dim() == r.rows() + 1) r = augment_negative_det(r);
    const double err = verify_factorization(stack, r);
    const double maxnorm = stack.maxnorm();
    const double bound = rep.value("norm_bound_claimed", std::numeric_limits<double>::infinity());
    const bool ok = err <= kReconstructionTol && maxnorm <= bound;
    Json doc{{"reconstruction_rel_error", err}, {"maxnorm", maxnorm}, {"norm_bound_claimed", bound},
             {"passed", ok}};
    doc["manifest"] = manifest(ctx, "verify", {{"report", a.report}, {"target", a.target}}, {}).to_json();
    ctx.emit(doc);
    ctx.say("reconstruction error " + format_double(err) + ", maxnorm " + format_double(maxnorm) +
            (ok ? ", passed" : ", FAILED"));
    return ok ? kOk : kCheckFailed;
  }

  MemorizerNet net;
  std::optional<Dataset> data;
  try {
    net = net_from_json(parse_json(read_text_file(a.net), a.net));
    data = parse_dataset_csv(read_text_file(a.data));
  } catch (const Error& e) {
    ctx.err << e.what() << '\n';
    if (e.kind() == ErrorKind::Format || e.kind() == ErrorKind::InvalidDataset) return kDataFormat;
    if (e.kind() == ErrorKind::DuplicatePoints) return kMemorizeFailed;
    throw;
  }
  const FitReport fit = verify_fit(net, *data);
  Json doc = fit_to_json(fit);
  doc["manifest"] = manifest(ctx, "verify", {{"net", a.net}, {"data", a.data}}, {}).to_json();
  ctx.emit(doc);
  ctx.say("fit fraction " + format_double(fit.fraction) + ", max deviation " +
          format_double(fit.max_deviation));
  return fit.fraction == 1.0 && fit.layers_hold() ? kOk : kCheckFailed;
}

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NegativeDeterminant: return kNegativeDeterminant;
    case ErrorKind::DepthTooSmall: return kDepthTooSmall;
    case ErrorKind::DuplicatePoints:
    case ErrorKind::ProjectionFailed:
    case ErrorKind::SurrogateCorrelated: return kMemorizeFailed;
    case ErrorKind::InvalidArgument: return kUsage;
    case ErrorKind::Format: return kDataFormat;
    default: return kCheckFailed;
  }
}

/// Arguments exclude the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Near-identity factorization, linear residual landscape checks and exact "
               "memorization with residual ReLU networks",
               "resid"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Master seed for every random stage");
  app.add_option("--out", g.out, "Output JSON path (stdout when omitted)");
  app.add_flag("--quiet", g.quiet, "Suppress the summary line");

  FactorizeArgs fa;
  auto* fac = app.add_subcommand("factorize", "Factor R into near-identity residual layers");
  fac->add_option("--target", fa.target, "Target matrix (JSON or CSV)")->required();
  fac->add_option("--depth", fa.depth, "Number of layers")->required();
  fac->add_flag("--psd", fa.psd, "Use the symmetric PSD path");
  fac->add_flag("--augment-neg-det", fa.augment, "Factor diag(R, -1) when det(R) < 0");
  fac->add_flag("--rescale", fa.rescale, "Scale R so sigma_min <= 1 <= sigma_max first");

  LandscapeArgs la;
  auto* land = app.add_subcommand("landscape", "Linear residual landscape experiments");
  land->require_subcommand(1);
  auto* bound = land->add_subcommand("check-bound", "Sample the ball and test the gradient bound");
  bound->add_option("--target", la.target, "Target (JSON or CSV)")->required();
  bound->add_option("--tau", la.tau, "Ball radius in (0, 1)")->required();
  bound->add_option("--samples", la.samples, "Number of sampled stacks")->capture_default_str();
  bound->add_option("--depth", la.depth, "Layers per sampled stack")->capture_default_str();
  bound->add_option("--csv", la.csv, "Per-sample CSV path");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Gradient descent on the population risk");
  tr->add_option("--config", ta.config, "Training config JSON")->required();
  tr->add_option("--trace", ta.trace, "Per-step CSV path");

  MemorizeArgs ma;
  auto* mem = app.add_subcommand("memorize", "Build a residual network that fits a dataset");
  mem->add_option("--data", ma.data, "CSV: feature columns then an integer label")->required();
  mem->add_option("--rho", ma.rho, "Separation: 'auto' or a number")->capture_default_str();
  mem->add_option("--projection", ma.projection, "Embedding: isometric or gaussian")
      ->check(CLI::IsMember({"isometric", "gaussian"}))
      ->capture_default_str();
  mem->add_option("--jl-constant", ma.jl_constant, "Width constant c in k = c ln(n) / rho^2")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  mem->add_option("--retries", ma.retries, "Attempts per randomized stage")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  mem->add_option("--report", ma.report, "Fit report JSON path");

  VerifyArgs va;
  auto* ver = app.add_subcommand("verify", "Recheck a factorization report or a memorizer");
  ver->add_option("--report", va.report, "Factorization report JSON");
  ver->add_option("--target", va.target, "Target the report claims to factor");
  ver->add_option("--net", va.net, "Memorizer network JSON");
  ver->add_option("--data", va.data, "Dataset CSV the network should fit");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kUsage;
  }

  Context ctx{g, out, err};
  try {
    if (*fac) return cmd_factorize(fa, ctx);
    if (*land) return cmd_landscape(la, ctx);
    if (*tr) return cmd_train(ta, ctx);
    if (*mem) return cmd_memorize(ma, ctx);
    if (*ver) return cmd_verify(va, ctx);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exit_code_for(e.kind());
  }
  return kUsage;
}

}  // namespace resid::cli
