#pragma once

// Batch front end: manifest parsing, command dispatch and artifact writing.

#include "odre/engine.hpp"
#include "odre/io.hpp"
#include "odre/verify.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

namespace odre::cli {

using io::Json;

/// Process exit statuses.
enum Exit : int { kSuccess = 0, kUsage = 1, kFailed = 2, kInconclusive = 3 };

struct RunOptions {
  std::optional<std::string> out;     ///< overrides the manifest's "output"
  std::optional<std::uint64_t> seed;  ///< overrides the manifest's "seed"
  unsigned threads = 1;
};

struct RunResult {
  int exit_code = kSuccess;
  std::string summary;  ///< one line for standard output
  std::filesystem::path out_dir;
  std::vector<std::string> files;
};

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorCode::Usage, "cannot write " + p.string());
  f << content;
  require(static_cast<bool>(f), ErrorCode::Usage, "write failed for " + p.string());
}

inline std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

struct Context {
  const ModelSpec& model;
  std::uint64_t seed;
  std::filesystem::path dir;
  RunResult& result;

  void emit(const std::string& name, const std::string& content) {
    write_file(dir / name, content);
    result.files.push_back(name);
  }
};

inline State start_state(io::Fields& p, const std::string& key, const State& fallback, Json& resolved,
                         const ModelSpec& model) {
  State s = fallback;
  if (const Json* v = p.find(key)) s = io::state_from_json(*v, p.where() + "." + key);
  require(s.size() == state_dim(model.kernel), ErrorCode::Usage, key + ": state dimension does not match the kernel");
  check_state(model.kernel, s);
  resolved[key] = io::to_json(s);
  return s;
}

inline std::size_t positive(io::Fields& p, const std::string& key, std::int64_t fallback, Json& resolved) {
  const std::int64_t v = p.integer(key, fallback);
  require(v >= 1, ErrorCode::Usage, p.where() + "." + key + " must be positive");
  resolved[key] = v;
  return static_cast<std::size_t>(v);
}

// ---------------------------------------------------------------------------

inline void run_simulate(Context& c, io::Fields& p, Json& resolved) {
  const State s0 = start_state(p, "s0", reference_state(c.model), resolved, c.model);
  const std::int64_t t_min = p.integer("t_min", 0);
  resolved["t_min"] = t_min;
  const auto horizon = static_cast<std::int64_t>(positive(p, "horizon", 1000, resolved));
  p.finish();
  const auto tr = simulate(c.model, s0, {t_min, t_min + horizon - 1}, c.seed);
  std::ostringstream csv;
  io::write_trajectory_csv(csv, tr);
  c.emit("trajectory.csv", csv.str());
  double mean_lambda = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < tr.lambda.size(); ++i) {
    mean_lambda += norm(tr.lambda[i]);
    mean_y += tr.y[i];
  }
  mean_lambda /= static_cast<double>(tr.lambda.size());
  mean_y /= static_cast<double>(tr.y.size());
  c.emit("summary.json", io::dump(Json{{"steps", horizon},
                                       {"mean_abs_lambda", io::number(mean_lambda)},
                                       {"mean_y", io::number(mean_y)},
                                       {"diverged", tr.diverged}}));
  c.result.summary = "simulate: " + std::to_string(horizon) + " steps, mean |lambda| " +
                     fmt("%.6g", mean_lambda) + (tr.diverged ? ", diverged" : "");
  if (tr.diverged) c.result.exit_code = kFailed;
}

inline void run_couple(Context& c, io::Fields& p, Json& resolved) {
  const State ref = reference_state(c.model);
  const State s0 = start_state(p, "s0", ref, resolved, c.model);
  State far = ref;
  far[0] += 10.0;
  const State s0p = start_state(p, "s0_prime", far, resolved, c.model);
  const std::int64_t t_min = p.integer("t_min", 0);
  resolved["t_min"] = t_min;
  const auto horizon = static_cast<std::int64_t>(positive(p, "horizon", 400, resolved));
  const std::size_t replicas = positive(p, "replicas", 1, resolved);
  const std::int64_t min_tail = p.integer("min_tail", 50);
  require(min_tail >= 0, ErrorCode::Usage, "min_tail must be >= 0");
  resolved["min_tail"] = min_tail;
  p.finish();

  const auto path = generate_path(c.model.covariates, {t_min, t_min + horizon - 1}, environment_seed(c.seed));
  const std::uint64_t base = observation_seed(c.seed);
  std::vector<CouplingTrace> traces(replicas);
  parallel_for(replicas, [&](std::size_t r) {
    traces[r] = couple_forward(c.model, s0, s0p, path, split_seed(base, r), static_cast<std::size_t>(min_tail));
    if (r > 0) {
      // Only the first trace is exported in full.
      traces[r].lambda.clear();
      traces[r].lambda_prime.clear();
      traces[r].y.clear();
      traces[r].y_prime.clear();
      traces[r].met.clear();
    }
  });
  std::ostringstream trace_csv;
  io::write_trace_csv(trace_csv, traces[0], path);
  c.emit("trace.csv", trace_csv.str());

  std::ostringstream table;
  io::CsvWriter w(table);
  w.header({"replica", "meet_time", "censored", "lambda_gap_sum"});
  std::size_t met = 0, censored = 0;
  for (std::size_t r = 0; r < replicas; ++r) {
    const auto& t = traces[r];
    w << r;
    if (t.meet_time) w << *t.meet_time;
    else w << std::string("");
    w << static_cast<int>(t.censored) << t.lambda_gap_sum;
    w.end_row();
    if (t.censored) ++censored;
    else ++met;
  }
  c.emit("coupling.csv", table.str());
  const double freq = static_cast<double>(met) / static_cast<double>(replicas);
  c.emit("coupling.json", io::dump(Json{{"replicas", replicas},
                                        {"met_uncensored", met},
                                        {"censored", censored},
                                        {"meeting_frequency", freq},
                                        {"horizon", horizon}}));
  c.result.summary = "couple: meeting frequency " + fmt("%.4f", freq) + " over " + std::to_string(replicas) +
                     " replicas, " + std::to_string(censored) + " censored";
}

inline void run_backward(Context& c, io::Fields& p, Json& resolved) {
  const State s0 = start_state(p, "s0", reference_state(c.model), resolved, c.model);
  std::optional<State> s0p;
  if (p.has("s0_prime")) s0p = start_state(p, "s0_prime", s0, resolved, c.model);
  std::vector<std::int64_t> schedule{25, 50, 100, 200, 400};
  if (const Json* v = p.find("n")) {
    schedule.clear();
    require(v->is_array() && !v->empty(), ErrorCode::Usage, "params.n must be a nonempty array");
    for (const auto& e : *v) {
      require(e.is_number_integer() && e.get<std::int64_t>() >= 1, ErrorCode::Usage, "params.n entries must be >= 1");
      schedule.push_back(e.get<std::int64_t>());
    }
  }
  resolved["n"] = schedule;
  const std::size_t replicas = positive(p, "replicas", 2000, resolved);
  p.finish();

  const std::int64_t max_n = *std::max_element(schedule.begin(), schedule.end());
  const auto path = generate_path(c.model.covariates, {-max_n, 0}, environment_seed(c.seed));
  const std::uint64_t obs = observation_seed(c.seed);
  std::ostringstream csv;
  io::CsvWriter w(csv);
  const std::size_t d = state_dim(c.model.kernel);
  auto names = io::component_names("lambda", d);
  names.insert(names.begin(), {"n", "start", "replica"});
  w.header(names);
  Json rows = Json::array();
  std::string last;
  for (std::int64_t n : schedule) {
    Json row{{"n", n}};
    auto dump_measure = [&](const EmpiricalMeasure& mu, int start) {
      for (std::size_t r = 0; r < mu.points.size(); ++r) {
        w << n << start << r;
        for (double v : mu.points[r]) w << v;
        w.end_row();
      }
    };
    if (s0p) {
      const auto pair = backward_pair(c.model, s0, *s0p, n, path, replicas, obs);
      dump_measure(pair.from_s0, 0);
      dump_measure(pair.from_s0_prime, 1);
      row["coupled_bound"] = pair.coupled_bound;
      row["diverged"] = pair.from_s0.diverged + pair.from_s0_prime.diverged;
      if (pair.from_s0.diverged == 0 && pair.from_s0_prime.diverged == 0) {
        const auto res = wasserstein1(pair.from_s0, pair.from_s0_prime);
        row["w1"] = res.value;
        row["w1_spread"] = res.spread;
        row["w1_method"] = res.method;
        row["monotone_upper_bound"] = io::number(res.monotone_upper_bound);
        last = "W1 " + fmt("%.6g", res.value);
      }
    } else {
      const auto mu = backward_measure(c.model, s0, n, path, replicas, obs);
      dump_measure(mu, 0);
      row["diverged"] = mu.diverged;
    }
    rows.push_back(row);
  }
  c.emit("backward.csv", csv.str());
  c.emit("backward.json", io::dump(Json{{"schedule", rows}, {"replicas", replicas}}));
  c.result.summary = "backward: " + std::to_string(schedule.size()) + " measures of " + std::to_string(replicas) +
                     " replicas" + (last.empty() ? "" : ", final " + last);
}

inline void run_stationary(Context& c, io::Fields& p, Json& resolved) {
  StationaryOptions opt;
  opt.seed = c.seed;
  opt.start = start_state(p, "s0", reference_state(c.model), resolved, c.model);
  opt.tol = p.number("tol", 0.01);
  resolved["tol"] = opt.tol;
  opt.max_n = p.integer("max_n", 3200);
  resolved["max_n"] = opt.max_n;
  opt.replicas = positive(p, "replicas", 2000, resolved);
  p.finish();
  const auto res = stationary_sampler(c.model, opt);
  std::ostringstream csv;
  io::write_measure_csv(csv, res.measure);
  c.emit("stationary.csv", csv.str());
  Json history = Json::array();
  for (const auto& [n, gap] : res.history) history.push_back(Json{{"n", n}, {"gap", gap}});
  Json summary{{"converged", res.converged},
               {"diverged", res.diverged},
               {"n", res.n},
               {"achieved_gap", io::number(res.achieved_gap)},
               {"history", history},
               {"diagnostic", res.diagnostic}};
  if (res.converged) summary["invariance_gap"] = invariance_check(c.model, res, opt).gap;
  c.emit("stationary.json", io::dump(summary));
  c.result.summary = "stationary: " + res.diagnostic + ", n=" + std::to_string(res.n) + ", gap " +
                     fmt("%.6g", res.achieved_gap);
  if (!res.converged) c.result.exit_code = kFailed;
}

inline void run_verify(Context& c, io::Fields& p, Json& resolved) {
  VerifyConfig cfg;
  cfg.seed = c.seed;
  cfg.mc_n = positive(p, "mc_n", 100'000, resolved);
  cfg.grid_size = positive(p, "grid_size", 200, resolved);
  cfg.tol = p.number("tol", 1e-6);
  resolved["tol"] = cfg.tol;
  cfg.lipschitz_triples = positive(p, "lipschitz_triples", 1000, resolved);
  if (const Json* v = p.find("phi_override")) {
    cfg.phi_override = PhiSpec{io::numbers_of(*v, "params.phi_override")};
    resolved["phi_override"] = cfg.phi_override->coefficients;
  }
  p.finish();
  const auto rep = full_report(c.model, cfg);
  c.emit("report.json", io::dump(io::to_json(rep)));
  c.emit("report.txt", io::to_text(rep));
  c.result.summary = "verify: " + std::string(to_string(rep.overall)) + " (A1 " +
                     std::string(to_string(rep.a1.outcome)) + ", A2 " + std::string(to_string(rep.a2.outcome)) +
                     ", A3 " + std::string(to_string(rep.a3.outcome)) + ")";
  c.result.exit_code = exit_code(rep.overall);
}

inline void run_diagnose(Context& c, io::Fields& p, Json& resolved) {
  const std::int64_t t_min = p.integer("t_min", 0);
  resolved["t_min"] = t_min;
  const auto length = static_cast<std::int64_t>(positive(p, "length", 10'000, resolved));
  const std::int64_t H_in = p.integer("H", 0);
  require(H_in >= 0, ErrorCode::Usage, "params.H must be >= 0 (0 selects the default)");
  std::optional<int> h_in;
  std::optional<double> C_in;
  if (p.has("h")) h_in = static_cast<int>(p.integer("h"));
  if (p.has("C")) C_in = p.number("C");
  p.finish();

  const auto path = generate_path(c.model.covariates, {t_min, t_min + length - 1}, environment_seed(c.seed));
  const auto inputs = wstats_inputs(c.model);
  int h = h_in.value_or(0);
  double C = C_in.value_or(0.0);
  if (!h_in || !C_in) {
    // Defaults come from an independent pilot path of the same length.
    const auto pilot = generate_path(c.model.covariates, {t_min, t_min + length - 1}, split_seed(c.seed, 2));
    const auto d = default_regeneration_parameters(inputs, pilot, static_cast<int>(H_in));
    require(d.found || (h_in && C_in), ErrorCode::InvalidSpec,
            "no h in 1..50 and C in {2,...,1024} reaches event frequency 0.01 on the pilot path");
    if (!h_in) h = d.h;
    if (!C_in) C = d.C;
  }
  const auto stats = w_stats(inputs, path, h, static_cast<int>(H_in));
  const auto regen = regeneration_times(stats, C, h);
  resolved["h"] = h;
  resolved["C"] = C;
  resolved["H"] = stats.H;

  std::ostringstream csv;
  io::CsvWriter w(csv);
  w.header({"t", "W1", "W2", "W3", "W4", "regeneration", "M"});
  std::size_t k = 0;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const std::int64_t t = stats.t_first + static_cast<std::int64_t>(i);
    const bool is_time = k < regen.times.size() && regen.times[k] == t;
    if (is_time) ++k;
    w << t << stats.w1[i] << stats.w2[i] << stats.w3[i] << stats.w4[i] << static_cast<int>(is_time) << k;
    w.end_row();
  }
  c.emit("wstats.csv", csv.str());
  Json summary{{"h", h},
               {"C", C},
               {"H", stats.H},
               {"t_first", stats.t_first},
               {"interior_times", stats.size()},
               {"count", regen.times.size()},
               {"frequency", static_cast<double>(regen.times.size()) / static_cast<double>(stats.size())},
               {"tail_bounds", {io::number(stats.tail_w1), io::number(stats.tail_w2), io::number(stats.tail_w3),
                                io::number(stats.tail_w4)}},
               {"mean_log_gamma", stats.mean_log_gamma},
               {"mean_log_kappa", stats.mean_log_kappa},
               {"times", regen.times}};
  if (regen.minimal_C) summary["minimal_C"] = io::number(*regen.minimal_C);
  c.emit("regeneration.json", io::dump(summary));
  c.result.summary = "diagnose: h=" + std::to_string(h) + ", C=" + fmt("%g", C) + ", " +
                     std::to_string(regen.times.size()) + " regeneration times over " +
                     std::to_string(stats.size()) + " interior times";
}

}  // namespace detail

/// Executes a parsed manifest. Errors raised as odre::Error propagate.
inline RunResult run(const Json& manifest, const RunOptions& opt = {}) {
  set_threads(opt.threads);
  io::Fields top(manifest, "manifest");
  const std::string command = top.string("command");
  const ModelSpec model = io::model_from_json(top.get("model"));
  const std::uint64_t seed = opt.seed.value_or(top.unsigned_integer("seed", 1));
  std::optional<std::string> out = opt.out;
  if (const Json* v = top.find("output")) {
    require(v->is_string(), ErrorCode::Usage, "manifest.output must be a string");
    if (!out) out = v->get<std::string>();
  }
  require(out.has_value(), ErrorCode::Usage, "no output directory (use --out or manifest.output)");
  const Json empty = Json::object();
  const Json* params_json = top.find("params");
  io::Fields params(params_json ? *params_json : empty, "params");
  top.finish();

  RunResult result;
  result.out_dir = *out;
  std::filesystem::create_directories(result.out_dir);
  detail::Context ctx{model, seed, result.out_dir, result};
  Json resolved = Json::object();
  if (command == "simulate") detail::run_simulate(ctx, params, resolved);
  else if (command == "couple") detail::run_couple(ctx, params, resolved);
  else if (command == "backward") detail::run_backward(ctx, params, resolved);
  else if (command == "stationary") detail::run_stationary(ctx, params, resolved);
  else if (command == "verify") detail::run_verify(ctx, params, resolved);
  else if (command == "diagnose") detail::run_diagnose(ctx, params, resolved);
  else fail(ErrorCode::Usage, "unknown command \"" + command + "\"");

  const Json replay{{"command", command},
                    {"model", io::to_json(model)},
                    {"seed", seed},
                    {"params", resolved},
                    {"output", *out}};
  ctx.emit("replay.json", io::dump(replay));
  return result;
}

inline Json read_manifest(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::Usage, "cannot open manifest " + p.string());
  try {
    return Json::parse(f);
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::Usage, "manifest " + p.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace odre::cli
