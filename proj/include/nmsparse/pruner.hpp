// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#ifndef NMSPARSE_PRUNER_HPP
#define NMSPARSE_PRUNER_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nmsparse/codec.hpp"
#include "nmsparse/dense.hpp"

namespace nmsparse {

struct PruneResult {
  Mask mask;
  double retained_magnitude = 0;  // sum |w| over kept positions
  double lost_magnitude = 0;      // sum |w| over pruned positions
};

/// Keeps the n largest |w| of every aligned group of m along each row. Equal
/// magnitudes keep the lower index. Throws InvalidPattern if m does not
/// divide the column count.
PruneResult prune_magnitude(const DenseMatrix& w, NMPattern p);

/// Elementwise w * mask. Throws ShapeMismatch.
DenseMatrix apply_mask(const DenseMatrix& w, const Mask& mask);

/// Bijection on [0, size). Position j of a permuted axis takes source
/// index (*this)[j].
class Permutation {
 public:
  Permutation() = default;
  /// Throws InvalidArgument unless `perm` is a bijection.
  explicit Permutation(std::vector<std::size_t> perm);
  static Permutation identity(std::size_t n);

  std::size_t size() const { return perm_.size(); }
  std::size_t operator[](std::size_t j) const { return perm_[j]; }
  std::span<const std::size_t> data() const { return perm_; }
  bool is_identity() const;
  Permutation inverse() const;

  friend bool operator==(const Permutation&, const Permutation&) = default;

 private:
  std::vector<std::size_t> perm_;
};

/// out[:, j] = w[:, perm[j]].
DenseMatrix permute_columns(const DenseMatrix& w, const Permutation& perm);

/// Reorders the rows of the layer that produces the permuted activations:
/// out[j, :] = producer[perm[j], :]. Composing this with permute_columns on
/// the consumer leaves the two-layer function unchanged. Throws ShapeMismatch.
DenseMatrix propagate_permutation(const DenseMatrix& producer, const Permutation& perm);

/// Same reordering applied to a per-output vector such as a bias.
std::vector<double> propagate_permutation(std::span<const double> v, const Permutation& perm);

/// Lifts a permutation of input channels to the columns of a convolution
/// weight matrix laid out as [out][channel][kernel position].
Permutation expand_channel_permutation(const Permutation& channels, std::size_t kernel_area);

enum class SearchMode { Exhaustive, Greedy };

struct SearchBudget {
  SearchMode mode = SearchMode::Greedy;
  /// Exhaustive: refuse when there are more distinct partitions than this.
  /// Greedy: maximum number of swap evaluations over all restarts.
  std::uint64_t max_evaluations = 1'000'000;
  /// Greedy random restarts after the identity start.
  std::size_t restarts = 4;
  std::uint64_t seed = 0;
};

struct PermutationSearch {
  Permutation permutation;
  /// Pruning of permute_columns(w, permutation).
  PruneResult result;
  double baseline_retained = 0;
  /// Distinct column-group partitions scored (exhaustive) or swap
  /// evaluations (greedy).
  std::uint64_t evaluations = 0;
};

/// Searches column permutations that maximize the magnitude kept by
/// prune_magnitude. Only the partition of columns into groups matters, so the
/// search runs over partitions; the identity partition is always a candidate
/// and is kept on ties. Throws InvalidPattern or, for an exhaustive search
/// larger than the budget, InvalidArgument.
PermutationSearch find_permutation(const DenseMatrix& w, NMPattern p, const SearchBudget& budget);

/// C! / ((m!)^(C/m) * (C/m)!), saturating at UINT64_MAX.
std::uint64_t partition_count(std::size_t columns, int m);

enum class TransposableMode { Greedy, Exhaustive };

/// 2:4 mask valid along rows and columns of every 4x4 tile. Throws
/// ShapeMismatch unless both dimensions are multiples of 4.
PruneResult find_transposable_mask(const DenseMatrix& w, TransposableMode mode);

/// The 90 4x4 masks with two kept entries per row and per column, as 16-bit
/// words with bit r*4+c set for a kept entry, ascending.
std::span<const std::uint16_t> transposable_tile_masks();

}  // namespace nmsparse

#endif  // NMSPARSE_PRUNER_HPP
