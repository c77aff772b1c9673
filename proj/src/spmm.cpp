// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#include "nmsparse/spmm.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <limits>
#include <thread>

#include "kernels.hpp"

namespace nmsparse {

namespace {

struct Tile {
  std::size_t r0, r1, c0, c1;
};

template <typename Kernel, typename Offset>
std::vector<double> run(const SparseNM& a, const DenseMatrix& b, const SpmmPlan& plan,
                        std::uint64_t& macs) {
  using T = typename Kernel::Value;
  const std::size_t m = a.rows(), n = b.cols();
  const std::size_t kept = a.kept_per_row();
  const auto bv = detail::to_buffer<T>(b.data());
  std::vector<T> c(m * n, T{0});

  // Stored slots per depth chunk: tile_depth dense columns hold
  // tile_depth / m groups of n values.
  const std::size_t slots_per_chunk =
      plan.tile_depth / static_cast<std::size_t>(a.pattern().m) *
      static_cast<std::size_t>(a.pattern().n);

  std::vector<Tile> tiles;
  for (std::size_t r0 = 0; r0 < m; r0 += plan.tile_rows) {
    for (std::size_t c0 = 0; c0 < n; c0 += plan.tile_cols) {
      tiles.push_back({r0, std::min(m, r0 + plan.tile_rows), c0, std::min(n, c0 + plan.tile_cols)});
    }
  }

  std::atomic<std::size_t> next{0};
  std::atomic<std::uint64_t> counter{0};
  auto worker = [&] {
    std::uint64_t local = 0;
    // Values and B-row offsets of one row chunk, decoded just before use.
    std::vector<T> vals(std::min(kept, slots_per_chunk));
    std::vector<Offset> offs(vals.size());
    for (std::size_t t = next++; t < tiles.size(); t = next++) {
      const Tile& tile = tiles[t];
      const std::size_t width = tile.c1 - tile.c0;
      const T* bcol = &bv[tile.c0];
      for (std::size_t s0 = 0; s0 < kept; s0 += slots_per_chunk) {
        const std::size_t count = std::min(kept, s0 + slots_per_chunk) - s0;
        for (std::size_t i = tile.r0; i < tile.r1; ++i) {
          a.scaled_columns(i, s0, std::span(offs).first(count), n);
          const double* src = &a.values()[i * kept + s0];
          for (std::size_t s = 0; s < count; ++s) vals[s] = static_cast<T>(src[s]);
          detail::accumulate<Kernel>(
              count, [&](std::size_t s) { return std::pair(vals[s], bcol + offs[s]); },
              &c[i * n + tile.c0], width);
          local += count * width;
        }
      }
    }
    counter += local;
  };

  if (plan.threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < plan.threads; ++i) pool.emplace_back(worker);
  }
  macs = counter.load();
  return std::vector<double>(c.begin(), c.end());
}

}  // namespace

SpmmPlan SpmmPlan::for_shape(GemmShape shape, int m, unsigned threads) {
  SpmmPlan plan;
  plan.shape = shape;
  const auto mm = static_cast<std::size_t>(m);
  plan.tile_depth = std::max(mm, plan.tile_depth / mm * mm);
  plan.threads = threads;
  return plan;
}

DenseMatrix spmm(const SparseNM& a, const DenseMatrix& b, const NumericFormat& format,
                 const SpmmPlan& plan, SpmmStats* stats) {
  const GemmShape shape{a.rows(), b.cols(), a.cols()};
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch,
                "spmm: A has " + std::to_string(a.cols()) + " columns, B has " +
                    std::to_string(b.rows()) + " rows");
  }
  if (!(plan.shape == shape)) {
    throw Error(ErrorCode::ShapeMismatch, "spmm: plan shape does not match operands");
  }
  require_sparse_shape(shape, format, a.pattern());
  if (a.dtype() != format.input || b.dtype() != format.input) {
    throw Error(ErrorCode::UnsupportedFormat,
                "spmm: operands must be " + std::string(to_string(format.input)));
  }
  if (format.input == ElementType::INT8 && shape.k > kMaxInt8Depth) {
    throw Error(ErrorCode::ShapeMismatch, "spmm: INT8 depth exceeds INT32 headroom");
  }
  if (plan.tile_rows == 0 || plan.tile_cols == 0 || plan.tile_depth == 0 ||
      plan.tile_depth % static_cast<std::size_t>(a.pattern().m) != 0) {
    throw Error(ErrorCode::InvalidArgument,
                "spmm: tiles must be positive and tile depth a multiple of m");
  }

  std::uint64_t macs = 0;
  std::vector<double> out;
  // 32-bit offsets halve the index stream whenever B is small enough.
  auto dispatch = [&](auto kernel) {
    using K = decltype(kernel);
    out = b.size() <= std::numeric_limits<std::uint32_t>::max()
              ? run<K, std::uint32_t>(a, b, plan, macs)
              : run<K, std::size_t>(a, b, plan, macs);
  };
  switch (format.accumulator) {
    case AccumulatorType::INT32:
      dispatch(detail::Int32Kernel{});
      break;
    case AccumulatorType::FP32:
      dispatch(detail::Fp32Kernel{});
      break;
    case AccumulatorType::FP16:
      dispatch(detail::Fp16Kernel{});
      break;
  }
  if (stats) stats->multiply_adds = macs;
  return DenseMatrix(shape.m, shape.n, format.result_type(), std::move(out));
}

DenseMatrix spmm(const SparseNM& a, const DenseMatrix& b, const NumericFormat& format) {
  return spmm(a, b, format, SpmmPlan::for_shape({a.rows(), b.cols(), a.cols()}, a.pattern().m));
}

std::uint64_t spmm_flops(const GemmShape& shape, NMPattern p) {
  return static_cast<std::uint64_t>(shape.m) * shape.n * (shape.k / static_cast<std::size_t>(p.m)) *
         static_cast<std::uint64_t>(p.n);
}

}  // namespace nmsparse
