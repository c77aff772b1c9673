// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#ifndef NMSPARSE_CODEC_HPP
#define NMSPARSE_CODEC_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "nmsparse/dense.hpp"
#include "nmsparse/format.hpp"

namespace nmsparse {

/// Compressed N:M matrix: for every aligned group of m elements along a row,
/// n stored values plus their intra-group positions.
///
/// Values are R x (C*n/m), row-major, in group order. Metadata packs one
/// ceil(log2 m)-bit position per stored value, least-significant bits first
/// within each byte, in the same order as the values; each row starts on a
/// byte boundary. For 2:4 a group's two positions occupy one nibble with the
/// first position in the low two bits.
class SparseNM {
 public:
  SparseNM() = default;

  /// Validates sizes and metadata (positions in [0, m), strictly increasing
  /// within each group, zero padding bits). Throws MalformedMetadata or
  /// ShapeMismatch.
  static SparseNM from_parts(std::size_t rows, std::size_t cols, NMPattern pattern,
                             ElementType dtype, std::vector<double> values,
                             std::vector<std::uint8_t> meta);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  NMPattern pattern() const { return pattern_; }
  ElementType dtype() const { return dtype_; }
  std::size_t groups_per_row() const { return cols_ / static_cast<std::size_t>(pattern_.m); }
  std::size_t kept_per_row() const { return groups_per_row() * static_cast<std::size_t>(pattern_.n); }
  std::size_t meta_row_bytes() const { return meta_row_bytes(cols_, pattern_); }
  static std::size_t meta_row_bytes(std::size_t cols, NMPattern p);

  std::span<const double> values() const { return values_; }
  std::span<const std::uint8_t> meta() const { return meta_; }

  double value(std::size_t r, std::size_t slot) const { return values_[r * kept_per_row() + slot]; }
  /// Intra-group position of stored element `slot` of row `r`.
  int index(std::size_t r, std::size_t slot) const;
  /// Dense columns of all stored elements, row-major; one decode pass.
  std::vector<std::size_t> columns() const;
  /// Writes column * scale for stored elements [first, first + out.size()) of
  /// row r. first must be a multiple of n; the caller guarantees the products
  /// fit the element type.
  void scaled_columns(std::size_t r, std::size_t first, std::span<std::uint32_t> out,
                      std::size_t scale) const;
  void scaled_columns(std::size_t r, std::size_t first, std::span<std::size_t> out,
                      std::size_t scale) const;

  /// Dense column of stored element `slot` of row `r`.
  std::size_t column(std::size_t r, std::size_t slot) const {
    return (slot / static_cast<std::size_t>(pattern_.n)) * static_cast<std::size_t>(pattern_.m) +
           static_cast<std::size_t>(index(r, slot));
  }

  friend bool operator==(const SparseNM&, const SparseNM&) = default;

 private:
  friend SparseNM compress(const DenseMatrix& a, NMPattern p);

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  NMPattern pattern_{};
  ElementType dtype_ = ElementType::FP32;
  std::vector<double> values_;
  std::vector<std::uint8_t> meta_;
};

/// Boolean keep-mask. Conformance is checked per axis.
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t rows, std::size_t cols, bool fill = false)
      : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool keep) { bits_[r * cols_ + c] = keep ? 1 : 0; }
  std::size_t count() const;
  Mask transposed() const;

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

enum class Axis { Rows, Cols };

/// True iff every aligned group of m along `axis` has exactly n kept bits.
bool mask_conforms(const Mask& mask, NMPattern p, Axis axis = Axis::Rows);

struct GroupRef {
  std::size_t row = 0;
  std::size_t group = 0;
};

/// First (row, group) with more than n nonzeros, scanning row-major.
/// Throws InvalidPattern if m does not divide the column count.
std::optional<GroupRef> find_violation(const DenseMatrix& a, NMPattern p);

bool check_conformance(const DenseMatrix& a, NMPattern p);

/// Groups with fewer than n nonzeros are padded with the smallest unused
/// positions, so compression is deterministic. Throws NonConforming.
SparseNM compress(const DenseMatrix& a, NMPattern p);

DenseMatrix decompress(const SparseNM& s);

/// True when every padded slot holds the smallest unused position, i.e.
/// compress(decompress(s)) == s.
bool is_canonical(const SparseNM& s);

/// Values plus metadata, excluding any byte padding.
std::uint64_t storage_bits(const SparseNM& s);
/// Bits the same matrix occupies uncompressed.
std::uint64_t dense_bits(const SparseNM& s);

/// storage_bits for a hypothetical R x C matrix without building it.
std::uint64_t storage_bits(std::size_t rows, std::size_t cols, NMPattern p, ElementType t);

}  // namespace nmsparse

#endif  // NMSPARSE_CODEC_HPP
