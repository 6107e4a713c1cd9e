// Command-line front end: sort a data set onto a grid, run the method
// comparison, or run the finite-difference gradient suite.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "permsort/benchmark.hpp"
#include "permsort/gradcheck_suite.hpp"
#include "permsort/io.hpp"

namespace {

using namespace permsort;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitInvalid = 3;

struct CommonFlags {
  std::string method = "shuffle-softsort";
  std::string grid;
  std::uint64_t seed = 0;
  std::string shuffle = "transpose";
  TrainConfig config{};
};

void add_training_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--grid", f.grid, "Grid as RxC (rows x columns); defaults to the squarest fit");
  cmd->add_option("--seed", f.seed, "Seed for data generation and training");
  cmd->add_option("--tau-start", f.config.tau_start, "First SoftSort temperature")->capture_default_str();
  cmd->add_option("--tau-end", f.config.tau_end, "Last SoftSort temperature")->capture_default_str();
  cmd->add_option("--runs", f.config.runs, "SoftSort runs (shuffles)")->capture_default_str();
  cmd->add_option("--iters", f.config.iters_per_run, "Adam steps per run")->capture_default_str();
  cmd->add_option("--lr", f.config.lr, "Adam learning rate for SoftSort weights")->capture_default_str();
  cmd->add_option("--block", f.config.block, "Rows per streamed block")->capture_default_str();
  cmd->add_option("--lambda-s", f.config.weights.lambda_s, "Weight of the column-sum penalty")->capture_default_str();
  cmd->add_option("--lambda-sigma", f.config.weights.lambda_sigma, "Weight of the std penalty")->capture_default_str();
  cmd->add_option("--shuffle", f.shuffle, "Shuffle strategy")
      ->check(CLI::IsMember({"transpose", "random"}))
      ->capture_default_str();
  cmd->add_option("--repair-attempts", f.config.repair_max_attempts, "Duplicate repair attempts")
      ->capture_default_str();
  cmd->add_option("--baseline-steps", f.config.baseline_steps, "Adam steps for gumbel-sinkhorn and kissing")
      ->capture_default_str();
  cmd->add_option("--sinkhorn-iters", f.config.sinkhorn_iterations, "Sinkhorn iterations per training step")
      ->capture_default_str();
}

TrainConfig finish_config(const CommonFlags& f, std::size_t n) {
  TrainConfig c = f.config;
  c.method = parse_method(f.method);
  c.grid = f.grid.empty() ? default_grid(n) : parse_grid(f.grid);
  c.seed = f.seed;
  c.shuffle = parse_shuffle(f.shuffle);
  return c;
}

struct SortFlags {
  CommonFlags common;
  std::string input;
  std::size_t random_colors = 0;
  std::string png;
  std::string out;
  std::string report;
  std::size_t cell_px = 16;
  bool project = false;
};

int cmd_sort(const SortFlags& f) {
  Matrix x;
  try {
    x = f.input.empty() ? generate_colors(f.random_colors, f.common.seed) : load_csv(f.input);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }

  TrainConfig config;
  try {
    config = finish_config(f.common, x.rows());
    config.validate(x.rows());
    if (!f.png.empty() && x.cols() != 3 && !(f.project && x.cols() > 3))
      throw Error("--png needs 3-dimensional vectors (use --project to render the first three of D > 3)");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const SortOutcome out = run_method(x, config);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool valid = out.validity.valid;
  std::optional<double> q;
  if (valid) q = quality(x, out.perm, config.grid, config.seed);

  nlohmann::ordered_json summary{{"n", x.rows()},
                                 {"dimensions", x.cols()},
                                 {"parameter_count", out.parameter_count},
                                 {"seconds", seconds},
                                 {"valid", valid},
                                 {"repaired", out.repaired},
                                 {"quality", q ? nlohmann::ordered_json(*q) : nlohmann::ordered_json()},
                                 {"final_loss", to_json(out.final_loss)},
                                 {"config", to_json(config)}};
  std::fprintf(stderr, "%s: n=%zu grid=%s valid=%s quality=%s time=%.2fs\n", to_string(config.method).c_str(),
               x.rows(), config.grid.to_string().c_str(), valid ? "yes" : "no",
               q ? std::to_string(*q).c_str() : "-", seconds);

  try {
    if (!f.report.empty()) write_file(f.report, summary.dump(2) + "\n");
    if (!valid) {
      std::cerr << "error: " << to_string(config.method) << " produced an invalid permutation (duplicate target "
                << *out.validity.duplicate << ")\n";
      return kExitInvalid;
    }
    const std::string csv = permutation_csv(out.perm);
    if (f.out.empty())
      std::cout << csv;
    else
      write_file(f.out, csv);
    if (!f.png.empty()) render_grid_png(apply_hard(out.perm, x), config.grid, f.cell_px, f.png, f.project);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

struct BenchmarkFlags {
  CommonFlags common;
  std::size_t n = 1024;
  std::vector<std::string> methods;
  std::string report;
  bool accounting_only = false;
};

int cmd_benchmark(const BenchmarkFlags& f) {
  BenchmarkOptions o;
  try {
    o.n = f.n;
    o.seed = f.common.seed;
    if (!f.common.grid.empty()) o.grid = parse_grid(f.common.grid);
    o.base = f.common.config;
    o.base.shuffle = parse_shuffle(f.common.shuffle);
    o.accounting_only = f.accounting_only;
    if (!f.methods.empty()) {
      o.methods.clear();
      for (const auto& m : f.methods) o.methods.push_back(parse_method(m));
    }
    check_grid(o.grid ? *o.grid : default_grid(o.n), o.n);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  const BenchmarkReport report = run_benchmark(o);
  std::cout << format_table(report);
  for (const auto& m : report.methods)
    if (!m.error.empty()) std::cerr << to_string(m.method) << " failed: " << m.error << "\n";
  if (!f.report.empty()) {
    try {
      write_file(f.report, to_json(report).dump(2) + "\n");
    } catch (const IoError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitIo;
    }
  }
  return kExitOk;
}

int cmd_gradcheck(double tolerance) {
  bool ok = true;
  for (const auto& r : run_gradcheck_suite()) {
    const bool pass = r.max_rel_error < tolerance;
    ok = ok && pass;
    std::printf("%-32s n=%-4zu max_rel_err=%.3e %s\n", r.operation.c_str(), r.dimension, r.max_rel_error,
                pass ? "ok" : "FAIL");
  }
  return ok ? kExitOk : kExitInvalid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-based permutation learning for grid layouts"};
  app.require_subcommand(1);

  SortFlags sort_flags;
  auto* sort = app.add_subcommand("sort", "Arrange vectors on a grid with one method");
  sort->add_option("--method", sort_flags.common.method, "shuffle-softsort, softsort, gumbel-sinkhorn or kissing")
      ->check(CLI::IsMember({"shuffle-softsort", "softsort", "gumbel-sinkhorn", "kissing"}))
      ->capture_default_str();
  auto* input = sort->add_option("--input", sort_flags.input, "Headerless CSV of feature vectors");
  auto* colors = sort->add_option("--random-colors", sort_flags.random_colors, "Generate n random RGB colours")
                     ->check(CLI::PositiveNumber);
  input->excludes(colors);
  sort->add_option("--png", sort_flags.png, "Write the arranged grid as PNG");
  sort->add_option("--out", sort_flags.out, "Write original row indices in grid order (default: stdout)");
  sort->add_option("--report", sort_flags.report, "Write a JSON run summary");
  sort->add_option("--cell-px", sort_flags.cell_px, "PNG pixels per grid cell")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sort->add_flag("--project", sort_flags.project, "Render the first three dimensions when D > 3");
  add_training_flags(sort, sort_flags.common);

  BenchmarkFlags bench_flags;
  auto* bench = app.add_subcommand("benchmark", "Compare all methods on seeded random colours");
  bench->add_option("--random-colors", bench_flags.n, "Number of random colours")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench->add_option("--method", bench_flags.methods, "Restrict to these methods (repeatable)");
  bench->add_option("--report", bench_flags.report, "Write the JSON report");
  bench->add_flag("--accounting-only", bench_flags.accounting_only, "Only compute parameter counts");
  add_training_flags(bench, bench_flags.common);

  double tolerance = 1e-4;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every backward rule");
  grad->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (*sort && sort_flags.input.empty() && sort_flags.random_colors == 0) {
    std::cerr << "error: sort needs --input or --random-colors\n";
    return kExitUsage;
  }

  try {
    if (*sort) return cmd_sort(sort_flags);
    if (*bench) return cmd_benchmark(bench_flags);
    return cmd_gradcheck(tolerance);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
