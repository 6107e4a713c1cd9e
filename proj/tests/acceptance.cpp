// Acceptance suite: one PASS/FAIL line per criterion, exit status = number of failures.
//
//   permsort_acceptance            all criteria
//   permsort_acceptance 1 4 7      only the listed ones

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "permsort/benchmark.hpp"
#include "permsort/gradcheck_suite.hpp"
#include "permsort/io.hpp"

#ifndef PERMSORT_CLI
#error "PERMSORT_CLI must name the command-line binary"
#endif

using namespace permsort;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// ---------------------------------------------------------------------------
// 1. Parameter counts at N = 1024

Verdict parameter_counts() {
  BenchmarkOptions o;
  o.n = 1024;
  o.accounting_only = true;
  const auto t0 = std::chrono::steady_clock::now();
  const BenchmarkReport r = run_benchmark(o);
  const double secs = seconds_since(t0);
  const std::uint64_t gs = r.find(Method::gumbel_sinkhorn)->parameter_count;
  const std::uint64_t k = r.find(Method::kissing)->parameter_count;
  const std::uint64_t ss = r.find(Method::softsort)->parameter_count;
  const std::uint64_t sss = r.find(Method::shuffle_softsort)->parameter_count;
  const bool ok = gs == 1048576 && k == 26624 && ss == 1024 && sss == 1024 && min_rank_for(1024) == 13 && secs < 1.0;
  return {ok, "gumbel-sinkhorn " + std::to_string(gs) + ", kissing " + std::to_string(k) + " (M=" +
                  std::to_string(min_rank_for(1024)) + "), softsort " + std::to_string(ss) + ", shuffle-softsort " +
                  std::to_string(sss) + ", " + fmt("%.4f s", secs)};
}

// ---------------------------------------------------------------------------
// 2. Quality ordering on 1024 random colours, median over 5 seeds

constexpr double kOrderingMargin = 0.05;
constexpr double kSinkhornSlack = 0.05;

Verdict quality_ordering() {
  std::vector<double> sss, ss, gs;
  std::size_t gs_invalid = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    BenchmarkOptions o;
    o.n = 1024;
    o.seed = seed;
    o.methods = {Method::gumbel_sinkhorn, Method::softsort, Method::shuffle_softsort};
    const BenchmarkReport r = run_benchmark(o);
    auto q = [&](Method m) {
      const MethodReport* mr = r.find(m);
      if (!mr->error.empty()) std::fprintf(stderr, "  %s failed: %s\n", to_string(m).c_str(), mr->error.c_str());
      return mr->quality.value_or(0.0);  // an invalid permutation counts as quality 0
    };
    sss.push_back(q(Method::shuffle_softsort));
    ss.push_back(q(Method::softsort));
    gs.push_back(q(Method::gumbel_sinkhorn));
    if (!r.find(Method::gumbel_sinkhorn)->valid) ++gs_invalid;
    std::fprintf(stderr, "  seed %llu: shuffle-softsort %.4f softsort %.4f gumbel-sinkhorn %s (%.0f s)\n",
                 static_cast<unsigned long long>(seed), sss.back(), ss.back(),
                 r.find(Method::gumbel_sinkhorn)->valid ? fmt("%.4f", gs.back()).c_str() : "invalid",
                 seconds_since(t0));
  }
  const double m_sss = median(sss), m_ss = median(ss), m_gs = median(gs);
  const bool first = m_sss - m_ss >= kOrderingMargin;
  const bool second = m_gs >= m_sss - kSinkhornSlack;
  return {first && second, "median quality shuffle-softsort " + fmt("%.4f", m_sss) + ", softsort " + fmt("%.4f", m_ss) +
                               " (margin " + fmt("%.4f", m_sss - m_ss) + (first ? " ok" : " < 0.05") +
                               "), gumbel-sinkhorn " + fmt("%.4f", m_gs) + " with " + std::to_string(gs_invalid) +
                               "/5 invalid (" + (second ? "ok" : "below shuffle-softsort - 0.05") + "), " +
                               fmt("%.0f s", seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// 3. 3x3 grids against exhaustive search

constexpr double kOptimalitySlack = 0.15;

double exhaustive_min_nbr(const Matrix& x, const GridShape& g, double norm) {
  std::vector<std::size_t> p(x.rows());
  std::iota(p.begin(), p.end(), std::size_t{0});
  const auto pairs = grid_neighbors(g);
  double best = INFINITY;
  do {
    double s = 0.0;
    for (auto [a, b] : pairs) s += row_distance(x.row(p[a]), x.row(p[b]));
    best = std::min(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return best / (static_cast<double>(pairs.size()) * norm);
}

// Small grids need a temperature matched to their weight spacing and more
// shuffles than the 1024-colour defaults.
ShuffleSoftSortOptions small_grid_options(std::uint64_t seed) {
  ShuffleSoftSortOptions o;
  o.schedule = {0.5, 0.003, 200};
  o.iters_per_run = 30;
  o.adam.lr = 0.02;
  o.strategy = {ShuffleKind::random, mix_seed(seed)};
  o.seed = seed;
  return o;
}

Verdict small_instance_optimality() {
  const GridShape g{3, 3};
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string ratios;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix x = generate_colors(9, seed);
    const SortOutcome out = run_shuffle_softsort(x, g, small_grid_options(seed));
    const double best = exhaustive_min_nbr(x, g, mean_pairwise_distance(x, seed));
    const double ratio = out.final_loss.l_nbr / best;
    worst = std::max(worst, ratio);
    ratios += (ratios.empty() ? "" : " ") + fmt("%.3f", ratio);
  }
  const double secs = seconds_since(t0);
  return {worst <= 1.0 + kOptimalitySlack && secs < 120.0,
          "L_nbr / optimum per seed [" + ratios + "], worst " + fmt("%.3f", worst) + ", " + fmt("%.1f s", secs)};
}

// ---------------------------------------------------------------------------
// 4. Finite-difference gradient suite

constexpr double kGradTolerance = 1e-4;

Verdict gradient_suite() {
  const auto results = run_gradcheck_suite();
  const std::set<std::string> required = {"softsort",
                                          "sinkhorn",
                                          "gumbel_sinkhorn",
                                          "kissing_permutation (V)",
                                          "neighborhood_loss",
                                          "stochastic_constraint_loss",
                                          "std_loss",
                                          "apply_soft_rowwise (weights)",
                                          "total_loss (streaming)"};
  double worst = 0.0;
  std::string worst_op;
  std::set<std::string> seen;
  bool small = true;
  for (const auto& r : results) {
    seen.insert(r.operation);
    small = small && r.dimension <= 8 * 8;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_op = r.operation;
    }
  }
  const bool covered = std::includes(seen.begin(), seen.end(), required.begin(), required.end());
  return {covered && small && worst < kGradTolerance,
          std::to_string(results.size()) + " operations, max rel err " + fmt("%.2e", worst) + " (" + worst_op + ")" +
              (covered ? "" : ", missing operations")};
}

// ---------------------------------------------------------------------------
// 5. Validity guarantees

Verdict validity() {
  Rng rng(2024);
  std::size_t invalid = 0, degenerate = 0, repaired = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 4 + uniform_index(rng, 61);
    std::vector<std::size_t> rows;
    for (std::size_t r = 1; r <= n; ++r)
      if (n % r == 0) rows.push_back(r);
    const std::size_t ny = rows[uniform_index(rng, rows.size())];
    const GridShape g{ny, n / ny};
    Matrix x = generate_colors(n, mix_seed(trial));
    if (trial % 3 == 0) {
      // Few distinct colours, many exact duplicates.
      ++degenerate;
      const Matrix palette = generate_colors(2 + uniform_index(rng, 3), mix_seed(trial + 7));
      for (std::size_t i = 0; i < n; ++i) {
        const auto src = palette.row(i < palette.rows() ? i : uniform_index(rng, palette.rows()));
        std::copy(src.begin(), src.end(), x.row(i).begin());
      }
    }
    ShuffleSoftSortOptions o;
    o.schedule = {std::pow(10.0, -2.5 + 2.0 * uniform01(rng)), 0.0, 2 + uniform_index(rng, 6)};
    o.schedule.tau_end = o.schedule.tau_start * std::pow(10.0, -2.0 * uniform01(rng));
    o.iters_per_run = uniform_index(rng, 20);
    o.adam.lr = std::pow(10.0, -3.0 + 2.0 * uniform01(rng));
    o.block = 1 + uniform_index(rng, n);
    o.strategy = {uniform01(rng) < 0.5 ? ShuffleKind::transpose : ShuffleKind::random, static_cast<std::uint64_t>(trial)};
    o.repair_max_attempts = 1 + uniform_index(rng, 3);
    o.seed = trial;
    const SortOutcome out = run_shuffle_softsort(x, g, o);
    if (!is_valid(out.perm).valid || !out.validity.valid) ++invalid;
    if (out.repaired) ++repaired;
  }

  // Kissing: whatever the outcome, the flag must agree with an independent check.
  std::size_t kissing_flagged = 0, kissing_mismatch = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix x = generate_colors(64, seed);
    KissingTrainOptions ko;
    ko.steps = 30;
    ko.rank = 1 + seed % 2;
    ko.seed = seed;
    const SortOutcome k = train_kissing(x, {8, 8}, ko);
    std::vector<int> hits(64, 0);
    bool bijection = k.perm.size() == 64;
    for (std::size_t v : k.perm.perm) bijection = bijection && v < 64 && hits[v]++ == 0;
    if (bijection != k.validity.valid) ++kissing_mismatch;
    if (!k.validity.valid) ++kissing_flagged;
  }

  // The command line refuses to emit an invalid kissing result.
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "permsort_acceptance";
  std::filesystem::create_directories(dir);
  const std::string out_csv = (dir / "kissing.csv").string(), report = (dir / "kissing.json").string();
  std::filesystem::remove(out_csv);
  const std::string cmd = std::string("\"") + PERMSORT_CLI + "\" sort --method kissing --random-colors 256 --seed 1 " +
                          "--baseline-steps 40 --out \"" + out_csv + "\" --report \"" + report + "\" 2>/dev/null";
  const int status = std::system(cmd.c_str());
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  bool cli_consistent = false;
  std::string cli_detail;
  try {
    const bool valid = nlohmann::json::parse(read_file(report)).at("valid").get<bool>();
    cli_consistent = valid ? (code == 0 && std::filesystem::exists(out_csv))
                           : (code == 3 && !std::filesystem::exists(out_csv));
    cli_detail = std::string("cli kissing N=256 ") + (valid ? "valid" : "invalid") + " exit " + std::to_string(code);
  } catch (const std::exception& e) {
    cli_detail = std::string("cli kissing report unreadable: ") + e.what();
  }

  return {invalid == 0 && kissing_mismatch == 0 && kissing_flagged > 0 && cli_consistent,
          "1000 runs (" + std::to_string(degenerate) + " with duplicate vectors, " + std::to_string(repaired) +
              " repaired): " + std::to_string(invalid) + " invalid; kissing " + std::to_string(kissing_flagged) +
              "/5 flagged invalid, " + std::to_string(kissing_mismatch) + " flag mismatches; " + cli_detail + ", " +
              fmt("%.1f s", seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// 6. Streaming equivalence and memory

constexpr double kStreamTolerance = 1e-10;
constexpr std::size_t kScratchPerEntry = 8;  // O(N * D) allowance, doubles per input entry

Verdict streaming() {
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t side : {2u, 3u, 4u, 5u, 6u, 8u}) {
    const std::size_t n = side * side;
    const Matrix x = generate_colors(n, n);
    const GridObjective obj(x, grid_neighbors({side, side}), mean_pairwise_distance(x, 0));
    Rng rng(n);
    std::vector<double> w(n);
    for (double& v : w) v = uniform01(rng);
    for (double tau : {0.3, 0.02}) {
      const auto dense = softsort_loss_materialized(w, tau, x, obj);
      const Matrix p = softsort(w, tau);
      const Matrix y = matmul(p, x);
      for (std::size_t block = 1; block <= n; ++block) {
        const auto s = softsort_loss(w, tau, x, obj, block);
        const auto fwd = apply_soft_rowwise(w, tau, x, block);
        worst = std::max(worst, std::abs(s.loss.total - dense.loss.total));
        for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(s.grad_w[k] - dense.grad_w[k]));
        worst = std::max(worst, max_abs_difference(fwd.y, y));
        ++cases;
      }
    }
  }

  const std::size_t n = 4096, d = 3, block = 256;
  const Matrix x = generate_colors(n, 5);
  const GridObjective obj(x, grid_neighbors({64, 64}), mean_pairwise_distance(x, 5));
  std::vector<double> w = ascending_weights(n);
  Rng rng(9);
  for (double& v : w) v += 0.002 * uniform01(rng);
  std::size_t peak = 0;
  {
    AllocationScope scope;
    const auto l = softsort_loss(w, 0.01, x, obj, block);
    peak = scope.peak_bytes();
  }
  const std::size_t bound = block * n * sizeof(double) + kScratchPerEntry * n * d * sizeof(double);
  const std::size_t dense_bytes = n * n * sizeof(double);
  return {worst <= kStreamTolerance && peak <= bound,
          std::to_string(cases) + " (N, tau, block) cases, max diff " + fmt("%.2e", worst) + "; N=4096 block=256 peak " +
              std::to_string(peak) + " B <= " + std::to_string(bound) + " B (dense P alone: " +
              std::to_string(dense_bytes) + " B)"};
}

// ---------------------------------------------------------------------------
// 7. Structural invariants of the shuffled loop

Verdict structure() {
  std::vector<std::string> failures;
  for (const TauSchedule s : {TauSchedule{0.1, 1e-3, 20}, TauSchedule{0.005, 3e-4, 100}, TauSchedule{0.7, 0.7, 3},
                              TauSchedule{1.0, 1e-6, 7}}) {
    if (s.at(0) != s.tau_start || s.at(s.runs) != s.tau_end) failures.push_back("tau endpoints");
    for (std::size_t i = 1; i <= s.runs; ++i)
      if (s.tau_end < s.tau_start ? !(s.at(i) < s.at(i - 1)) : s.at(i) != s.at(i - 1))
        failures.push_back("tau monotonicity");
  }

  std::size_t checked_runs = 0;
  for (const GridShape g : {GridShape{8, 8}, GridShape{4, 9}}) {
    for (ShuffleKind kind : {ShuffleKind::transpose, ShuffleKind::random}) {
      const Matrix x = generate_colors(g.size(), g.n_x);
      ShuffleSoftSortOptions o;
      o.schedule = {0.05, 0.005, 12};
      o.iters_per_run = 15;
      o.adam.lr = 0.01;
      o.strategy = {kind, 3};
      run_shuffle_softsort(x, g, o, [&](const ShuffleState& s, const RunRecord&) {
        ++checked_runs;
        bool ok = is_valid(s.indices).valid;
        for (std::size_t i = 0; ok && i < x.rows(); ++i)
          for (std::size_t c = 0; c < x.cols(); ++c) ok = ok && s.vectors(i, c) == x(s.indices.perm[i], c);
        if (!ok) failures.push_back("tracking invariant");
      });
    }
  }

  for (std::size_t runs = 1; runs <= 6; ++runs) {
    for (ShuffleKind kind : {ShuffleKind::transpose, ShuffleKind::random}) {
      ShuffleSoftSortOptions o;
      o.schedule = {0.1, 1e-3, runs};
      o.iters_per_run = 0;
      o.strategy = {kind, runs};
      const Matrix x = generate_colors(30, runs);
      if (run_shuffle_softsort(x, {5, 6}, o).perm != HardPermutation::identity(30)) failures.push_back("zero-iteration");
    }
  }

  for (std::size_t side = 1; side <= 32; ++side) {
    const HardPermutation t = transpose_shuffle({side, side});
    if (compose(t, t) != HardPermutation::identity(side * side)) failures.push_back("transpose involution");
  }

  std::string detail = "tau endpoints exact, tracking invariant on " + std::to_string(checked_runs) +
                       " runs, zero-iteration identity for 1..6 runs, transpose involution for 1x1..32x32";
  if (!failures.empty()) detail = "failed: " + failures.front() + " (" + std::to_string(failures.size()) + " issues)";
  return {failures.empty(), detail};
}

// ---------------------------------------------------------------------------
// 8. Determinism of the command-line outputs

nlohmann::json without_timing(nlohmann::json j) {
  if (j.is_object()) {
    j.erase("seconds");
    for (auto& [k, v] : j.items()) v = without_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = without_timing(v);
  }
  return j;
}

Verdict determinism() {
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "permsort_acceptance";
  std::filesystem::create_directories(dir);
  std::vector<std::string> diffs;
  std::string summary;
  auto run = [&](int k) {
    const std::string tag = std::to_string(k);
    const std::string sort = std::string("\"") + PERMSORT_CLI + "\" sort --random-colors 256 --seed 11 --runs 12 " +
                             "--iters 10 --out \"" + (dir / ("perm" + tag + ".csv")).string() + "\" --png \"" +
                             (dir / ("grid" + tag + ".png")).string() + "\" --report \"" +
                             (dir / ("sort" + tag + ".json")).string() + "\" 2>/dev/null";
    const std::string bench = std::string("\"") + PERMSORT_CLI + "\" benchmark --random-colors 64 --seed 4 " +
                              "--runs 6 --iters 10 --baseline-steps 15 --report \"" +
                              (dir / ("bench" + tag + ".json")).string() + "\" >/dev/null 2>&1";
    return std::system(sort.c_str()) == 0 && std::system(bench.c_str()) == 0;
  };
  if (!run(1) || !run(2)) return {false, "command-line run failed"};
  for (const char* name : {"perm", "grid"}) {
    const std::string ext = std::string(name) == "perm" ? ".csv" : ".png";
    const std::string a = read_file((dir / (std::string(name) + "1" + ext)).string());
    const std::string b = read_file((dir / (std::string(name) + "2" + ext)).string());
    if (a != b || a.empty()) diffs.push_back(std::string(name) + ext);
  }
  for (const char* name : {"sort", "bench"}) {
    const auto a = without_timing(nlohmann::json::parse(read_file((dir / (std::string(name) + "1.json")).string())));
    const auto b = without_timing(nlohmann::json::parse(read_file((dir / (std::string(name) + "2.json")).string())));
    if (a.dump() != b.dump()) diffs.push_back(std::string(name) + ".json");
  }
  return {diffs.empty(), diffs.empty() ? "permutation CSV, PNG, sort report and benchmark report identical across two "
                                         "runs (timing fields excluded)"
                                       : "differences in " + diffs.front()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"parameter counts at N=1024", parameter_counts},
      {"quality ordering (1024 colours, 5 seeds)", quality_ordering},
      {"3x3 grids within 15% of exhaustive optimum", small_instance_optimality},
      {"finite-difference gradients", gradient_suite},
      {"valid bijections and flagged kissing failures", validity},
      {"streaming equivalence and peak memory", streaming},
      {"shuffled-loop structural invariants", structure},
      {"deterministic outputs", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::printf("[%s] %d. %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[k].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
