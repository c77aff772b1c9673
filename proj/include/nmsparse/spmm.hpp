// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#ifndef NMSPARSE_SPMM_HPP
#define NMSPARSE_SPMM_HPP

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nmsparse/codec.hpp"
#include "nmsparse/dense.hpp"
#include "nmsparse/format.hpp"

namespace nmsparse {

/// Blocking and threading for one sparse GEMM. Output tiles are
/// tile_rows x tile_cols; the contracted dimension is walked in chunks of
/// tile_depth dense columns of A (a multiple of the pattern's m).
struct SpmmPlan {
  GemmShape shape;
  std::size_t tile_rows = 16;
  std::size_t tile_cols = 512;
  std::size_t tile_depth = 256;
  unsigned threads = 1;

  /// Default blocking for `shape`, depth rounded to a multiple of `m`.
  static SpmmPlan for_shape(GemmShape shape, int m = 4, unsigned threads = 1);
};

struct SpmmStats {
  std::uint64_t multiply_adds = 0;
};

/// C = A * B with A in compressed N:M form. Only stored values of A are
/// multiplied; each stored value's metadata position selects the row of B it
/// meets. Every output element accumulates over ascending k, exactly like
/// gemm_dense, and each output tile is owned by one worker, so the result is
/// the same for every plan.
///
/// Throws ShapeMismatch (A.cols != B.rows, plan shape, K rule),
/// UnsupportedFormat (operand types, FP32/FP32) or InvalidArgument (plan).
DenseMatrix spmm(const SparseNM& a, const DenseMatrix& b, const NumericFormat& format,
                 const SpmmPlan& plan, SpmmStats* stats = nullptr);

DenseMatrix spmm(const SparseNM& a, const DenseMatrix& b, const NumericFormat& format);

/// Multiply-adds a sparse GEMM of this shape performs: M*N*K*n/m.
std::uint64_t spmm_flops(const GemmShape& shape, NMPattern p);

struct BenchRow {
  GemmShape shape;
  double dense_ns = 0;
  double sparse_ns = 0;
  double speedup = 0;
  double flops_ratio = 0;
};

struct BenchReport {
  NumericFormat format;
  NMPattern pattern;
  std::vector<BenchRow> rows;

  static constexpr const char* kCsvHeader = "M,N,K,dense_ns,sparse_ns,speedup,flops_ratio";
  std::string to_csv() const;
};

/// Times gemm_dense against spmm on random operands (single thread), taking
/// the median over `repeats`. flops_ratio is the dense multiply-add count over
/// the sparse kernel's instrumented count.
BenchReport bench(const std::vector<GemmShape>& sizes, const NumericFormat& format,
                  std::size_t repeats, std::uint64_t seed = 1);
BenchReport bench(const std::vector<GemmShape>& sizes, const NumericFormat& format,
                  NMPattern pattern, std::size_t repeats, std::uint64_t seed = 1);

/// Parses "MxNxK[,MxNxK...]".
std::vector<GemmShape> parse_shapes(const std::string& text);

}  // namespace nmsparse

#endif  // NMSPARSE_SPMM_HPP
