#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "permsort/baselines.hpp"
#include "permsort/numkernel.hpp"
#include "permsort/objective.hpp"
#include "permsort/permutation.hpp"

namespace permsort {

/// tau(i) = tau_start * (tau_end / tau_start)^(i / runs)
struct TauSchedule {
  double tau_start = 0.1;
  double tau_end = 1e-3;
  std::size_t runs = 20;

  void validate() const {
    if (!(tau_end > 0.0) || !(tau_start >= tau_end))
      throw Error("TauSchedule: need tau_start >= tau_end > 0 (got " + std::to_string(tau_start) + ", " +
                  std::to_string(tau_end) + ")");
    if (runs == 0) throw Error("TauSchedule: runs must be >= 1");
  }

  double at(std::size_t i) const {
    if (i == 0) return tau_start;
    if (i >= runs) return tau_end;
    return tau_start * std::pow(tau_end / tau_start, static_cast<double>(i) / static_cast<double>(runs));
  }
};

/// Reshape row-major indices to the n_y x n_x grid, transpose, flatten.
/// Slot k of the result holds the element previously at perm[k].
inline HardPermutation transpose_shuffle(const GridShape& g) {
  HardPermutation h;
  h.perm.resize(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) h.perm[k] = (k % g.n_y) * g.n_x + k / g.n_y;
  return h;
}

/// Fisher-Yates shuffle from the seeded generator.
inline HardPermutation random_shuffle(std::size_t n, std::uint64_t seed) {
  HardPermutation h = HardPermutation::identity(n);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(h.perm[i - 1], h.perm[uniform_index(rng, i)]);
  return h;
}

enum class ShuffleKind { transpose, random };

struct ShuffleStrategy {
  ShuffleKind kind = ShuffleKind::transpose;
  std::uint64_t seed = 0;
};

/// Working state of the shuffled sort.
///
/// Elements live in 1D slots. Slot k sits at grid cell cell_of_slot[k] of
/// the original grid and holds the original row indices.perm[k], so
/// vectors.row(k) == input.row(indices.perm[k]) at all times. `grid` is the
/// orientation in which the slots are read row-major (transposed on odd
/// runs of the transpose strategy).
struct ShuffleState {
  Matrix vectors;
  HardPermutation indices;
  std::vector<std::size_t> cell_of_slot;
  GridShape grid;

  static ShuffleState initial(const Matrix& x, const GridShape& g) {
    check_grid(g, x.rows());
    ShuffleState s{x, HardPermutation::identity(x.rows()), {}, g};
    s.cell_of_slot = HardPermutation::identity(x.rows()).perm;
    return s;
  }

  /// Slot k takes the contents of slot shuffle[k]; elements stay in their cells.
  void shuffle(const HardPermutation& shuffle) {
    vectors = apply_hard(shuffle, vectors);
    indices.perm = apply_hard(shuffle, indices.perm);
    cell_of_slot = apply_hard(shuffle, cell_of_slot);
  }

  /// Slot k takes the element of slot order[k]; slots stay in their cells.
  void reorder(const HardPermutation& order) {
    vectors = apply_hard(order, vectors);
    indices.perm = apply_hard(order, indices.perm);
  }

  /// Neighbouring slot pairs: grid adjacency read through cell_of_slot.
  std::vector<NeighborPair> slot_neighbors(const GridShape& original) const {
    std::vector<std::size_t> slot_of_cell(cell_of_slot.size());
    for (std::size_t k = 0; k < cell_of_slot.size(); ++k) slot_of_cell[cell_of_slot[k]] = k;
    auto pairs = grid_neighbors(original);
    for (auto& [a, b] : pairs) {
      a = slot_of_cell[a];
      b = slot_of_cell[b];
    }
    return pairs;
  }

  /// Original row for every grid cell, row-major in the original grid.
  HardPermutation arrangement() const {
    HardPermutation h;
    h.perm.resize(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) h.perm[cell_of_slot[k]] = indices.perm[k];
    return h;
  }
};

// ---------------------------------------------------------------------------
// Duplicate repair

/// Continues training `w` at temperature `tau` (repair extension hook).
using ExtendTraining = std::function<void(std::vector<double>& w, double tau)>;

/// Row argmax of SoftSort(w, tau), repaired if it has duplicates.
///
/// Each failed attempt halves tau and, when `extend` is set, trains further.
/// After `max_attempts`, every duplicated target stays with the row that
/// gives it the highest probability and the displaced rows take the unused
/// targets, both in ascending order.
inline HardPermutation repair_duplicates(std::vector<double>& w, double tau, std::size_t max_attempts,
                                         const ExtendTraining& extend = {}, std::size_t block = kDefaultBlock,
                                         bool* repaired = nullptr) {
  if (max_attempts == 0) throw Error("repair_duplicates: max_attempts must be >= 1");
  if (repaired) *repaired = false;
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    HardPermutation h = harden(SoftSortView(w, tau, block));
    if (is_valid(h)) return h;
    if (repaired) *repaired = true;
    tau *= 0.5;
    if (extend) extend(w, tau);
  }
  if (repaired) *repaired = true;
  const SoftSortView view(w, tau, block);
  const std::size_t n = view.size();
  HardPermutation h(harden(view));
  if (is_valid(h)) return h;

  std::vector<double> prob(n);
  view.for_each_block([&](std::size_t begin, const Matrix& blk) {
    for (std::size_t r = 0; r < blk.rows(); ++r) prob[begin + r] = blk(r, h.perm[begin + r]);
  });
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(n, kNone);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = h.perm[i];
    if (owner[j] == kNone || prob[i] > prob[owner[j]]) owner[j] = i;
  }
  std::vector<std::size_t> free_rows, free_targets;
  for (std::size_t i = 0; i < n; ++i)
    if (owner[h.perm[i]] != i) free_rows.push_back(i);
  for (std::size_t j = 0; j < n; ++j)
    if (owner[j] == kNone) free_targets.push_back(j);
  for (std::size_t k = 0; k < free_rows.size(); ++k) h.perm[free_rows[k]] = free_targets[k];
  return h;
}

// ---------------------------------------------------------------------------
// Training loop

struct ShuffleSoftSortOptions {
  TauSchedule schedule{};
  std::size_t iters_per_run = 200;
  AdamOptions adam{};
  LossWeights weights{};
  std::size_t block = kDefaultBlock;
  ShuffleStrategy strategy{};
  bool shuffle = true;
  std::size_t repair_max_attempts = 5;
  std::uint64_t seed = 0;
};

struct RunRecord {
  std::size_t run = 0;
  double tau = 0.0;
  LossBreakdown soft;      // loss of the trained soft permutation
  double hard_l_nbr = 0.0;  // smoothness of the hardened arrangement
  bool repaired = false;
};

using RunObserver = std::function<void(const ShuffleState&, const RunRecord&)>;

/// Trains SoftSort weights for `iters` Adam steps starting from `w`.
inline void train_softsort_weights(std::vector<double>& w, double tau, const Matrix& x, const GridObjective& obj,
                                   std::size_t iters, const AdamOptions& adam_options, std::size_t block) {
  Adam adam(w.size(), adam_options);
  for (std::size_t it = 0; it < iters; ++it) {
    const auto l = softsort_loss(w, tau, x, obj, block);
    adam.step(w, l.grad_w);
  }
}

/// Repeated SoftSort over shuffled index orders. Every run re-initializes
/// ascending weights (so the run starts from the current order), trains them
/// at that run's temperature, hardens, and moves the elements. With the
/// transpose strategy run 0 sorts along rows and each later run first
/// transposes the slot order, alternating row and column sorting.
inline SortOutcome run_shuffle_softsort(const Matrix& x, const GridShape& g, const ShuffleSoftSortOptions& o,
                                        const RunObserver& observer = {}) {
  const std::size_t n = x.rows();
  check_grid(g, n);
  if (n < 2) throw Error("run_shuffle_softsort: need at least 2 elements");
  o.schedule.validate();
  const double norm = mean_pairwise_distance(x, o.seed);
  GridObjective obj(x, grid_neighbors(g), norm, o.weights);
  ShuffleState state = ShuffleState::initial(x, g);
  SortOutcome out;
  out.parameter_count = softsort_parameter_count(n);

  for (std::size_t run = 0; run < o.schedule.runs; ++run) {
    const double tau = o.schedule.at(run);
    if (o.shuffle) {
      if (o.strategy.kind == ShuffleKind::transpose) {
        if (run > 0) {
          state.shuffle(transpose_shuffle(state.grid));
          state.grid = state.grid.transposed();
        }
      } else {
        state.shuffle(random_shuffle(n, mix_seed(o.strategy.seed + run)));
      }
    }
    obj.set_pairs(state.slot_neighbors(g));

    std::vector<double> w = ascending_weights(n);
    train_softsort_weights(w, tau, state.vectors, obj, o.iters_per_run, o.adam, o.block);
    RunRecord rec{run, tau, softsort_loss(w, tau, state.vectors, obj, o.block, false).loss, 0.0, false};

    const std::size_t extension = std::max<std::size_t>(1, o.iters_per_run / 2);
    const ExtendTraining extend = [&](std::vector<double>& wv, double t) {
      train_softsort_weights(wv, t, state.vectors, obj, extension, o.adam, o.block);
    };
    const HardPermutation h = repair_duplicates(w, tau, o.repair_max_attempts, extend, o.block, &rec.repaired);
    out.repaired = out.repaired || rec.repaired;
    state.reorder(h);
    rec.hard_l_nbr = neighborhood_loss(state.vectors, obj.pairs(), norm);
    out.history.push_back(rec.soft);
    if (observer) observer(state, rec);
  }

  out.perm = state.arrangement();
  out.validity = is_valid(out.perm);
  const Matrix arranged = apply_hard(out.perm, x);
  GridObjective final_obj(x, grid_neighbors(g), norm, o.weights);
  out.final_loss = final_obj.evaluate(arranged, std::vector<double>(n, 1.0), false).loss;
  return out;
}

/// The same loop with shuffling disabled: every run sorts the row-major order.
inline SortOutcome run_single_softsort(const Matrix& x, const GridShape& g, ShuffleSoftSortOptions o,
                                       const RunObserver& observer = {}) {
  o.shuffle = false;
  return run_shuffle_softsort(x, g, o, observer);
}

}  // namespace permsort
