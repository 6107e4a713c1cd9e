#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "permsort/baselines.hpp"
#include "permsort/io.hpp"
#include "permsort/objective.hpp"
#include "permsort/shuffler.hpp"

namespace permsort {

enum class Method { shuffle_softsort, softsort, gumbel_sinkhorn, kissing };

inline constexpr Method kAllMethods[] = {Method::gumbel_sinkhorn, Method::kissing, Method::softsort,
                                         Method::shuffle_softsort};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::shuffle_softsort: return "shuffle-softsort";
    case Method::softsort: return "softsort";
    case Method::gumbel_sinkhorn: return "gumbel-sinkhorn";
    case Method::kissing: return "kissing";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : kAllMethods)
    if (to_string(m) == s) return m;
  throw Error("unknown method '" + s + "' (expected shuffle-softsort, softsort, gumbel-sinkhorn or kissing)");
}

inline std::string to_string(ShuffleKind k) { return k == ShuffleKind::transpose ? "transpose" : "random"; }

inline ShuffleKind parse_shuffle(const std::string& s) {
  if (s == "transpose") return ShuffleKind::transpose;
  if (s == "random") return ShuffleKind::random;
  throw Error("unknown shuffle strategy '" + s + "' (expected transpose or random)");
}

/// Parses "RxC" (rows x columns).
inline GridShape parse_grid(const std::string& s) {
  const auto x = s.find_first_of("xX");
  if (x == std::string::npos || s.find_first_not_of("0123456789xX") != std::string::npos)
    throw Error("grid '" + s + "' is not of the form RxC");
  try {
    std::size_t used = 0;
    const unsigned long r = std::stoul(s.substr(0, x), &used);
    if (used != x) throw Error("");
    const std::string rest = s.substr(x + 1);
    const unsigned long c = std::stoul(rest, &used);
    if (used != rest.size() || r == 0 || c == 0) throw Error("");
    return {r, c};
  } catch (const std::exception&) {
    throw Error("grid '" + s + "' is not of the form RxC with positive integers");
  }
}

/// Square-ish grid for n elements: the largest divisor of n not above sqrt(n) rows.
inline GridShape default_grid(std::size_t n) {
  std::size_t r = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (r > 1 && n % r != 0) --r;
  return {r, n / r};
}

/// Every knob of a single sorting run.
struct TrainConfig {
  Method method = Method::shuffle_softsort;
  GridShape grid{};
  std::uint64_t seed = 0;
  LossWeights weights{};
  // SoftSort family
  double tau_start = 0.005;
  double tau_end = 3e-4;
  std::size_t runs = 100;
  std::size_t iters_per_run = 20;
  double lr = 3e-4;
  std::size_t block = kDefaultBlock;
  ShuffleKind shuffle = ShuffleKind::transpose;
  std::size_t repair_max_attempts = 5;
  // Baselines
  std::size_t baseline_steps = 300;
  std::size_t sinkhorn_iterations = 20;

  void validate(std::size_t n) const {
    check_grid(grid, n);
    if (n < 2) throw Error("need at least 2 elements");
    if (!(tau_end > 0.0) || !(tau_start >= tau_end)) throw Error("need tau-start >= tau-end > 0");
    if (runs == 0) throw Error("runs must be >= 1");
    if (!(lr > 0.0)) throw Error("lr must be positive");
    if (block == 0) throw Error("block must be >= 1");
    if (weights.lambda_s < 0.0 || weights.lambda_sigma < 0.0) throw Error("lambda weights must be non-negative");
    if (repair_max_attempts == 0) throw Error("repair max attempts must be >= 1");
    if (sinkhorn_iterations == 0) throw Error("sinkhorn iterations must be >= 1");
  }

  ShuffleSoftSortOptions shuffle_options() const {
    ShuffleSoftSortOptions o;
    o.schedule = {tau_start, tau_end, runs};
    o.iters_per_run = iters_per_run;
    o.adam.lr = lr;
    o.weights = weights;
    o.block = block;
    o.strategy = {shuffle, mix_seed(seed)};
    o.shuffle = method == Method::shuffle_softsort;
    o.repair_max_attempts = repair_max_attempts;
    o.seed = seed;
    return o;
  }

  SinkhornTrainOptions sinkhorn_options() const {
    SinkhornTrainOptions o;
    o.steps = baseline_steps;
    o.iterations = sinkhorn_iterations;
    o.weights = weights;
    o.seed = seed;
    return o;
  }

  KissingTrainOptions kissing_options() const {
    KissingTrainOptions o;
    o.steps = baseline_steps;
    o.weights = weights;
    o.seed = seed;
    return o;
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"method", to_string(c.method)},
          {"grid", c.grid.to_string()},
          {"seed", c.seed},
          {"lambda_s", c.weights.lambda_s},
          {"lambda_sigma", c.weights.lambda_sigma},
          {"tau_start", c.tau_start},
          {"tau_end", c.tau_end},
          {"runs", c.runs},
          {"iters_per_run", c.iters_per_run},
          {"lr", c.lr},
          {"block", c.block},
          {"shuffle", to_string(c.shuffle)},
          {"repair_max_attempts", c.repair_max_attempts},
          {"baseline_steps", c.baseline_steps},
          {"sinkhorn_iterations", c.sinkhorn_iterations}};
}

inline TrainConfig train_config_from_json(const nlohmann::ordered_json& j) {
  TrainConfig c;
  c.method = parse_method(j.at("method").get<std::string>());
  c.grid = parse_grid(j.at("grid").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.weights = {j.at("lambda_s").get<double>(), j.at("lambda_sigma").get<double>()};
  c.tau_start = j.at("tau_start").get<double>();
  c.tau_end = j.at("tau_end").get<double>();
  c.runs = j.at("runs").get<std::size_t>();
  c.iters_per_run = j.at("iters_per_run").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.block = j.at("block").get<std::size_t>();
  c.shuffle = parse_shuffle(j.at("shuffle").get<std::string>());
  c.repair_max_attempts = j.at("repair_max_attempts").get<std::size_t>();
  c.baseline_steps = j.at("baseline_steps").get<std::size_t>();
  c.sinkhorn_iterations = j.at("sinkhorn_iterations").get<std::size_t>();
  return c;
}

/// Learnable parameters of a method at n elements, from the closed forms.
inline std::uint64_t parameter_count(Method m, std::size_t n) {
  switch (m) {
    case Method::gumbel_sinkhorn: return sinkhorn_parameter_count(n);
    case Method::kissing: return kissing_parameter_count(n, min_rank_for(n));
    case Method::softsort:
    case Method::shuffle_softsort: return softsort_parameter_count(n);
  }
  return 0;
}

inline SortOutcome run_method(const Matrix& x, const TrainConfig& c) {
  c.validate(x.rows());
  switch (c.method) {
    case Method::shuffle_softsort: return run_shuffle_softsort(x, c.grid, c.shuffle_options());
    case Method::softsort: return run_single_softsort(x, c.grid, c.shuffle_options());
    case Method::gumbel_sinkhorn: return train_gumbel_sinkhorn(x, c.grid, c.sinkhorn_options());
    case Method::kissing: return train_kissing(x, c.grid, c.kissing_options());
  }
  throw Error("unknown method");
}

// ---------------------------------------------------------------------------
// Benchmark report

struct MethodReport {
  Method method = Method::shuffle_softsort;
  std::uint64_t parameter_count = 0;
  double seconds = 0.0;
  std::optional<double> quality;  // absent when the permutation is invalid or the run failed
  bool valid = false;
  bool repaired = false;
  LossBreakdown final_loss{};
  TrainConfig config{};
  std::string error;  // non-empty when the run threw
};

struct BenchmarkReport {
  std::size_t n = 0;
  GridShape grid{};
  std::uint64_t data_seed = 0;
  std::string note;
  std::vector<MethodReport> methods;

  const MethodReport* find(Method m) const {
    for (const auto& r : methods)
      if (r.method == m) return &r;
    return nullptr;
  }
};

inline const char* kObjectiveNote =
    "all methods are trained on the same objective: normalized 4-neighbour smoothness + 1.0 * column-sum "
    "penalty + 2.0 * relative std deviation penalty (no distance-matrix term); quality = 1 - mean neighbour "
    "distance / mean pairwise distance; softsort = same tau schedule and runs as shuffle-softsort with "
    "shuffling disabled";

inline nlohmann::ordered_json to_json(const LossBreakdown& l) {
  return {{"total", l.total},       {"l_nbr", l.l_nbr},       {"l_s", l.l_s},
          {"l_sigma", l.l_sigma},   {"lambda_s", l.lambda_s}, {"lambda_sigma", l.lambda_sigma}};
}

inline LossBreakdown loss_from_json(const nlohmann::ordered_json& j) {
  return {j.at("total").get<double>(),   j.at("l_nbr").get<double>(),    j.at("l_s").get<double>(),
          j.at("l_sigma").get<double>(), j.at("lambda_s").get<double>(), j.at("lambda_sigma").get<double>()};
}

inline nlohmann::ordered_json to_json(const BenchmarkReport& r) {
  nlohmann::ordered_json methods = nlohmann::ordered_json::array();
  for (const auto& m : r.methods) {
    nlohmann::ordered_json j{{"method", to_string(m.method)},
                             {"parameter_count", m.parameter_count},
                             {"seconds", m.seconds},
                             {"quality", m.quality ? nlohmann::ordered_json(*m.quality) : nlohmann::ordered_json()},
                             {"valid", m.valid},
                             {"repaired", m.repaired},
                             {"final_loss", to_json(m.final_loss)},
                             {"config", to_json(m.config)},
                             {"seed", m.config.seed}};
    if (!m.error.empty()) j["error"] = m.error;
    methods.push_back(std::move(j));
  }
  return {{"n", r.n},
          {"grid", r.grid.to_string()},
          {"data_seed", r.data_seed},
          {"note", r.note},
          {"methods", std::move(methods)}};
}

inline BenchmarkReport benchmark_from_json(const nlohmann::ordered_json& j) {
  BenchmarkReport r;
  r.n = j.at("n").get<std::size_t>();
  r.grid = parse_grid(j.at("grid").get<std::string>());
  r.data_seed = j.at("data_seed").get<std::uint64_t>();
  r.note = j.at("note").get<std::string>();
  for (const auto& m : j.at("methods")) {
    MethodReport mr;
    mr.method = parse_method(m.at("method").get<std::string>());
    mr.parameter_count = m.at("parameter_count").get<std::uint64_t>();
    mr.seconds = m.at("seconds").get<double>();
    if (!m.at("quality").is_null()) mr.quality = m.at("quality").get<double>();
    mr.valid = m.at("valid").get<bool>();
    mr.repaired = m.at("repaired").get<bool>();
    mr.final_loss = loss_from_json(m.at("final_loss"));
    mr.config = train_config_from_json(m.at("config"));
    if (m.contains("error")) mr.error = m.at("error").get<std::string>();
    r.methods.push_back(std::move(mr));
  }
  return r;
}

/// Aligned table in the layout of the usual memory / runtime / quality comparison.
inline std::string format_table(const BenchmarkReport& r) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-18s %12s %12s %9s %6s\n", "method", "memory", "runtime[s]", "quality", "valid");
  out += line;
  for (const auto& m : r.methods) {
    char q[32];
    if (m.quality)
      std::snprintf(q, sizeof q, "%.3f", *m.quality);
    else
      std::snprintf(q, sizeof q, "-");
    std::snprintf(line, sizeof line, "%-18s %12llu %12.1f %9s %6s\n", to_string(m.method).c_str(),
                  static_cast<unsigned long long>(m.parameter_count), m.seconds, q,
                  m.error.empty() ? (m.valid ? "yes" : "no") : "error");
    out += line;
  }
  return out;
}

struct BenchmarkOptions {
  std::size_t n = 1024;
  std::optional<GridShape> grid;
  std::uint64_t seed = 0;
  std::vector<Method> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  TrainConfig base{};  // method, grid and seed are filled in per method
  bool accounting_only = false;
};

/// Runs every requested method on the same seeded random colours. Each
/// method gets its own seed derived from the data seed; a method that throws
/// is recorded with its error and the others still run.
inline BenchmarkReport run_benchmark(const BenchmarkOptions& o) {
  BenchmarkReport report;
  report.n = o.n;
  report.grid = o.grid ? *o.grid : default_grid(o.n);
  report.data_seed = o.seed;
  report.note = kObjectiveNote;
  check_grid(report.grid, o.n);
  const Matrix x = o.accounting_only ? Matrix() : generate_colors(o.n, o.seed);
  for (std::size_t k = 0; k < o.methods.size(); ++k) {
    MethodReport mr;
    mr.method = o.methods[k];
    mr.config = o.base;
    mr.config.method = mr.method;
    mr.config.grid = report.grid;
    mr.config.seed = mix_seed(o.seed * 16 + static_cast<std::uint64_t>(mr.method) + 1);
    try {
      mr.parameter_count = parameter_count(mr.method, o.n);
      if (!o.accounting_only) {
        const auto t0 = std::chrono::steady_clock::now();
        const SortOutcome out = run_method(x, mr.config);
        mr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        mr.valid = out.validity.valid;
        mr.repaired = out.repaired;
        mr.final_loss = out.final_loss;
        if (mr.valid) mr.quality = quality(x, out.perm, report.grid, o.seed);
      }
    } catch (const std::exception& e) {
      mr.error = e.what();
    }
    report.methods.push_back(std::move(mr));
  }
  return report;
}

}  // namespace permsort
