// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#include "nmsparse/pruner.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>

#include "nmsparse/random.hpp"

namespace nmsparse {

namespace {

void require_divides(std::size_t cols, NMPattern p) {
  require_valid(p);
  if (cols % static_cast<std::size_t>(p.m) != 0) {
    throw Error(ErrorCode::InvalidPattern, "group size m=" + std::to_string(p.m) +
                                               " does not divide " + std::to_string(cols) +
                                               " columns");
  }
}

PruneResult summarize(const DenseMatrix& w, Mask mask) {
  PruneResult out;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) {
      const double a = std::fabs(w(r, c));
      if (mask(r, c)) {
        out.retained_magnitude += a;
      } else {
        out.lost_magnitude += a;
      }
    }
  }
  out.mask = std::move(mask);
  return out;
}

using Groups = std::vector<std::vector<std::size_t>>;

// Sum over rows of the n largest |w| among a group's columns.
class GroupScorer {
 public:
  GroupScorer(const DenseMatrix& w, NMPattern p) : rows_(w.rows()), cols_(w.cols()), p_(p) {
    abs_.resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) abs_[i] = std::fabs(w.data()[i]);
    buf_.resize(static_cast<std::size_t>(p.m));
  }

  double score(std::span<const std::size_t> cols) {
    double total = 0;
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t k = 0; k < cols.size(); ++k) buf_[k] = abs_[r * cols_ + cols[k]];
      std::partial_sort(buf_.begin(), buf_.begin() + p_.n, buf_.end(), std::greater<>());
      for (int k = 0; k < p_.n; ++k) total += buf_[static_cast<std::size_t>(k)];
    }
    return total;
  }

  double total(const Groups& groups) {
    double t = 0;
    for (const auto& g : groups) t += score(g);
    return t;
  }

 private:
  std::size_t rows_, cols_;
  NMPattern p_;
  std::vector<double> abs_;
  std::vector<double> buf_;
};

Permutation from_groups(Groups groups) {
  for (auto& g : groups) std::sort(g.begin(), g.end());
  std::sort(groups.begin(), groups.end());
  std::vector<std::size_t> perm;
  for (const auto& g : groups) perm.insert(perm.end(), g.begin(), g.end());
  return Permutation(std::move(perm));
}

Groups consecutive_groups(std::span<const std::size_t> order, std::size_t m) {
  Groups groups;
  for (std::size_t i = 0; i < order.size(); i += m) {
    groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                        order.begin() + static_cast<std::ptrdiff_t>(i + m));
  }
  return groups;
}

bool improves(double candidate, double incumbent) {
  return candidate > incumbent + 1e-12 * std::max(1.0, std::fabs(incumbent));
}

class ExhaustiveSearch {
 public:
  ExhaustiveSearch(GroupScorer& scorer, std::size_t cols, std::size_t m)
      : scorer_(scorer), cols_(cols), m_(m) {}

  Groups run(std::uint64_t& visited) {
    current_.clear();
    best_ = -1;
    std::vector<std::uint8_t> used(cols_, 0);
    recurse(used, 0.0);
    visited = visited_;
    return best_groups_;
  }

 private:
  void recurse(std::vector<std::uint8_t>& used, double partial) {
    const auto first = std::find(used.begin(), used.end(), 0);
    if (first == used.end()) {
      ++visited_;
      if (best_ < 0 || improves(partial, best_)) {
        best_ = partial;
        best_groups_ = current_;
      }
      return;
    }
    const auto lead = static_cast<std::size_t>(first - used.begin());
    std::vector<std::size_t> rest;
    for (std::size_t c = lead + 1; c < cols_; ++c) {
      if (!used[c]) rest.push_back(c);
    }
    // Combinations of m-1 partners for the smallest free column, ascending.
    std::vector<std::size_t> pick(m_ - 1);
    std::iota(pick.begin(), pick.end(), 0);
    while (true) {
      std::vector<std::size_t> group{lead};
      std::uint64_t key = std::uint64_t{1} << lead;
      for (std::size_t i : pick) {
        group.push_back(rest[i]);
        key |= std::uint64_t{1} << rest[i];
      }
      auto it = memo_.find(key);
      if (it == memo_.end()) it = memo_.emplace(key, scorer_.score(group)).first;
      for (std::size_t c : group) used[c] = 1;
      current_.push_back(group);
      recurse(used, partial + it->second);
      current_.pop_back();
      for (std::size_t c : group) used[c] = 0;

      // next combination
      std::size_t i = pick.size();
      while (i > 0 && pick[i - 1] == rest.size() - pick.size() + (i - 1)) --i;
      if (i == 0) break;
      ++pick[i - 1];
      for (std::size_t j = i; j < pick.size(); ++j) pick[j] = pick[j - 1] + 1;
    }
  }

  GroupScorer& scorer_;
  std::size_t cols_, m_;
  Groups current_;
  Groups best_groups_;
  double best_ = -1;
  std::uint64_t visited_ = 0;
  std::unordered_map<std::uint64_t, double> memo_;
};

// Steepest-ascent hill climbing over single column swaps between groups.
double hill_climb(GroupScorer& scorer, Groups& groups, std::uint64_t& evaluations,
                  std::uint64_t max_evaluations) {
  std::vector<double> scores;
  for (const auto& g : groups) scores.push_back(scorer.score(g));
  while (evaluations < max_evaluations) {
    double best_delta = 0;
    std::size_t bg1 = 0, bg2 = 0, ba = 0, bb = 0;
    bool found = false;
    for (std::size_t g1 = 0; g1 < groups.size() && evaluations < max_evaluations; ++g1) {
      for (std::size_t g2 = g1 + 1; g2 < groups.size() && evaluations < max_evaluations; ++g2) {
        for (std::size_t a = 0; a < groups[g1].size(); ++a) {
          for (std::size_t b = 0; b < groups[g2].size(); ++b) {
            auto x = groups[g1];
            auto y = groups[g2];
            std::swap(x[a], y[b]);
            ++evaluations;
            const double delta = scorer.score(x) + scorer.score(y) - scores[g1] - scores[g2];
            if (improves(delta, best_delta)) {
              best_delta = delta;
              bg1 = g1, bg2 = g2, ba = a, bb = b;
              found = true;
            }
          }
        }
      }
    }
    if (!found) break;
    std::swap(groups[bg1][ba], groups[bg2][bb]);
    scores[bg1] = scorer.score(groups[bg1]);
    scores[bg2] = scorer.score(groups[bg2]);
  }
  return std::accumulate(scores.begin(), scores.end(), 0.0);
}

std::vector<std::uint16_t> build_tile_masks() {
  std::vector<std::uint16_t> out;
  for (unsigned bits = 0; bits < (1u << 16); ++bits) {
    bool ok = true;
    for (unsigned r = 0; r < 4 && ok; ++r) ok = std::popcount((bits >> (r * 4)) & 0xfu) == 2;
    for (unsigned c = 0; c < 4 && ok; ++c) {
      unsigned col = 0;
      for (unsigned r = 0; r < 4; ++r) col += (bits >> (r * 4 + c)) & 1u;
      ok = col == 2;
    }
    if (ok) out.push_back(static_cast<std::uint16_t>(bits));
  }
  return out;
}

}  // namespace

PruneResult prune_magnitude(const DenseMatrix& w, NMPattern p) {
  require_divides(w.cols(), p);
  const auto m = static_cast<std::size_t>(p.m);
  Mask mask(w.rows(), w.cols());
  std::vector<std::size_t> order(m);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    for (std::size_t g = 0; g < w.cols(); g += m) {
      std::iota(order.begin(), order.end(), g);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return std::fabs(row[x]) > std::fabs(row[y]);
      });
      for (int k = 0; k < p.n; ++k) mask.set(r, order[static_cast<std::size_t>(k)], true);
    }
  }
  return summarize(w, std::move(mask));
}

DenseMatrix apply_mask(const DenseMatrix& w, const Mask& mask) {
  if (w.rows() != mask.rows() || w.cols() != mask.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "mask shape does not match matrix");
  }
  std::vector<double> out(w.data().begin(), w.data().end());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) {
      if (!mask(r, c)) out[r * w.cols() + c] = 0.0;
    }
  }
  return DenseMatrix(w.rows(), w.cols(), w.dtype(), std::move(out));
}

Permutation::Permutation(std::vector<std::size_t> perm) : perm_(std::move(perm)) {
  std::vector<std::uint8_t> seen(perm_.size(), 0);
  for (std::size_t v : perm_) {
    if (v >= perm_.size() || seen[v]) {
      throw Error(ErrorCode::InvalidArgument, "permutation is not a bijection");
    }
    seen[v] = 1;
  }
}

Permutation Permutation::identity(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  return Permutation(std::move(p));
}

bool Permutation::is_identity() const {
  for (std::size_t i = 0; i < perm_.size(); ++i) {
    if (perm_[i] != i) return false;
  }
  return true;
}

Permutation Permutation::inverse() const {
  std::vector<std::size_t> inv(perm_.size());
  for (std::size_t j = 0; j < perm_.size(); ++j) inv[perm_[j]] = j;
  return Permutation(std::move(inv));
}

DenseMatrix permute_columns(const DenseMatrix& w, const Permutation& perm) {
  if (perm.size() != w.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "permutation size " + std::to_string(perm.size()) +
                                              " != " + std::to_string(w.cols()) + " columns");
  }
  std::vector<double> out(w.size());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t j = 0; j < w.cols(); ++j) out[r * w.cols() + j] = w(r, perm[j]);
  }
  return DenseMatrix(w.rows(), w.cols(), w.dtype(), std::move(out));
}

DenseMatrix propagate_permutation(const DenseMatrix& producer, const Permutation& perm) {
  if (perm.size() != producer.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "permutation size " + std::to_string(perm.size()) +
                                              " != " + std::to_string(producer.rows()) +
                                              " producer rows");
  }
  std::vector<double> out(producer.size());
  for (std::size_t j = 0; j < producer.rows(); ++j) {
    const auto src = producer.row(perm[j]);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(j * producer.cols()));
  }
  return DenseMatrix(producer.rows(), producer.cols(), producer.dtype(), std::move(out));
}

std::vector<double> propagate_permutation(std::span<const double> v, const Permutation& perm) {
  if (perm.size() != v.size()) {
    throw Error(ErrorCode::ShapeMismatch, "permutation size does not match vector");
  }
  std::vector<double> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = v[perm[j]];
  return out;
}

Permutation expand_channel_permutation(const Permutation& channels, std::size_t kernel_area) {
  std::vector<std::size_t> cols;
  cols.reserve(channels.size() * kernel_area);
  for (std::size_t j = 0; j < channels.size(); ++j) {
    for (std::size_t t = 0; t < kernel_area; ++t) cols.push_back(channels[j] * kernel_area + t);
  }
  return Permutation(std::move(cols));
}

std::uint64_t partition_count(std::size_t columns, int m) {
  const auto mm = static_cast<std::size_t>(m);
  if (m <= 0 || columns % mm != 0) return 0;
  // Product over groups of C(remaining - 1, m - 1): the smallest free column
  // picks its m - 1 partners.
  unsigned __int128 total = 1;
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t remaining = columns; remaining > 0; remaining -= mm) {
    unsigned __int128 choose = 1;
    for (std::size_t i = 1; i < mm; ++i) {
      choose = choose * (remaining - i) / i;
    }
    total *= choose;
    if (total > kMax) return kMax;
  }
  return static_cast<std::uint64_t>(total);
}

PermutationSearch find_permutation(const DenseMatrix& w, NMPattern p, const SearchBudget& budget) {
  require_divides(w.cols(), p);
  const auto m = static_cast<std::size_t>(p.m);
  GroupScorer scorer(w, p);
  PermutationSearch out;
  const PruneResult baseline = prune_magnitude(w, p);
  out.baseline_retained = baseline.retained_magnitude;

  Groups best;
  if (budget.mode == SearchMode::Exhaustive) {
    const std::uint64_t count = partition_count(w.cols(), p.m);
    if (w.cols() > 64 || count > budget.max_evaluations) {
      throw Error(ErrorCode::InvalidArgument,
                  "exhaustive permutation search over " + std::to_string(w.cols()) +
                      " columns has " +
                      (count == std::numeric_limits<std::uint64_t>::max()
                           ? std::string("over 2^64")
                           : std::to_string(count)) +
                      " partitions, above the budget of " +
                      std::to_string(budget.max_evaluations) + "; use greedy");
    }
    ExhaustiveSearch search(scorer, w.cols(), m);
    best = search.run(out.evaluations);
  } else {
    const Permutation id = Permutation::identity(w.cols());
    best = consecutive_groups(id.data(), m);
    double best_total = hill_climb(scorer, best, out.evaluations, budget.max_evaluations);
    Rng rng(budget.seed);
    std::vector<std::size_t> order(id.data().begin(), id.data().end());
    for (std::size_t i = 0; i < budget.restarts && out.evaluations < budget.max_evaluations; ++i) {
      std::shuffle(order.begin(), order.end(), rng);
      Groups groups = consecutive_groups(order, m);
      const double total = hill_climb(scorer, groups, out.evaluations, budget.max_evaluations);
      if (improves(total, best_total)) {
        best_total = total;
        best = std::move(groups);
      }
    }
  }

  out.permutation = from_groups(std::move(best));
  out.result = prune_magnitude(permute_columns(w, out.permutation), p);
  if (!(out.result.retained_magnitude > baseline.retained_magnitude)) {
    out.permutation = Permutation::identity(w.cols());
    out.result = baseline;
  }
  return out;
}

std::span<const std::uint16_t> transposable_tile_masks() {
  static const std::vector<std::uint16_t> masks = build_tile_masks();
  return masks;
}

PruneResult find_transposable_mask(const DenseMatrix& w, TransposableMode mode) {
  if (w.rows() % 4 != 0 || w.cols() % 4 != 0) {
    throw Error(ErrorCode::ShapeMismatch, "transposable masks need both dimensions to be "
                                          "multiples of 4, got " +
                                              std::to_string(w.rows()) + "x" +
                                              std::to_string(w.cols()));
  }
  const auto candidates = transposable_tile_masks();
  Mask mask(w.rows(), w.cols());
  std::array<double, 16> mag{};
  std::array<std::size_t, 16> order{};

  for (std::size_t tr = 0; tr < w.rows(); tr += 4) {
    for (std::size_t tc = 0; tc < w.cols(); tc += 4) {
      for (std::size_t e = 0; e < 16; ++e) mag[e] = std::fabs(w(tr + e / 4, tc + e % 4));
      std::uint16_t chosen = 0;
      if (mode == TransposableMode::Exhaustive) {
        double best = -1;
        for (std::uint16_t cand : candidates) {
          double s = 0;
          for (std::size_t e = 0; e < 16; ++e) {
            if ((cand >> e) & 1u) s += mag[e];
          }
          if (s > best) {
            best = s;
            chosen = cand;
          }
        }
      } else {
        // Largest entries first; an entry is accepted while some valid tile
        // mask still contains everything accepted so far.
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return mag[x] > mag[y]; });
        for (std::size_t e : order) {
          const auto trial = static_cast<std::uint16_t>(chosen | (1u << e));
          const bool feasible = std::any_of(candidates.begin(), candidates.end(),
                                            [&](std::uint16_t c) { return (c & trial) == trial; });
          if (feasible) chosen = trial;
        }
      }
      for (std::size_t e = 0; e < 16; ++e) {
        if ((chosen >> e) & 1u) mask.set(tr + e / 4, tc + e % 4, true);
      }
    }
  }
  return summarize(w, std::move(mask));
}

}  // namespace nmsparse
