// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#ifndef NMSPARSE_DENSE_HPP
#define NMSPARSE_DENSE_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "nmsparse/format.hpp"

namespace nmsparse {

/// Row-major R x C matrix. Elements are held as doubles, which represent
/// every value of every supported element type exactly; `dtype` says which
/// set of values is legal.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  /// Zero-filled.
  DenseMatrix(std::size_t rows, std::size_t cols, ElementType dtype = ElementType::FP32);
  /// Takes `data` as-is. Throws ShapeMismatch on a length mismatch and
  /// InvalidArgument if some element is not representable in `dtype`.
  DenseMatrix(std::size_t rows, std::size_t cols, ElementType dtype,
              std::vector<double> data);

  /// Rounds every element of `data` into `dtype`.
  static DenseMatrix rounded(std::size_t rows, std::size_t cols, ElementType dtype,
                             std::span<const double> data);
  static DenseMatrix identity(std::size_t n, ElementType dtype = ElementType::FP32);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  ElementType dtype() const { return dtype_; }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  /// Writes go through `set` so the dtype invariant holds.
  void set(std::size_t r, std::size_t c, double v);

  std::span<const double> data() const { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  DenseMatrix transposed() const;
  /// Same values re-tagged; every element must be representable in `dtype`.
  DenseMatrix as(ElementType dtype) const;

  friend bool operator==(const DenseMatrix& a, const DenseMatrix& b);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  ElementType dtype_ = ElementType::FP32;
  std::vector<double> data_;
};

/// Bitwise equality of element values (distinguishes -0 from +0).
bool bit_equal(const DenseMatrix& a, const DenseMatrix& b);

/// Reference GEMM. Inputs must carry `format.input`; the result carries
/// `format.result_type()`. Each output element accumulates over ascending k.
/// Products of FP32/TF32/FP16/BF16 inputs are rounded to FP32 (exact for
/// the narrow types); in FP16-accumulate mode each product and each partial
/// sum is rounded to FP16. INT8 products accumulate exactly in INT32.
DenseMatrix gemm_dense(const DenseMatrix& a, const DenseMatrix& b,
                       const NumericFormat& format);

/// Spacing between adjacent accumulator values at magnitude |x|.
double accumulator_ulp(double x, AccumulatorType acc);

/// Largest INT8 reduction depth for which INT32 accumulation cannot overflow.
inline constexpr std::size_t kMaxInt8Depth = 131072;

}  // namespace nmsparse

#endif  // NMSPARSE_DENSE_HPP
