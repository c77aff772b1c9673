// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

// Inner loops shared by the dense reference GEMM and the sparse kernel. Both
// paths accumulate one output row at a time as a sequence of scaled row
// additions, so per-element accumulation order is ascending k in both.

#ifndef NMSPARSE_SRC_KERNELS_HPP
#define NMSPARSE_SRC_KERNELS_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "nmsparse/format.hpp"

namespace nmsparse::detail {

template <typename T>
std::vector<T> to_buffer(std::span<const double> src) {
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<T>(src[i]);
  return out;
}

// Each kernel defines one multiply-accumulate step on a scalar accumulator.
struct Int32Kernel {
  using Value = std::int32_t;
  static Value step(Value acc, Value a, Value b) { return acc + a * b; }
};

struct Fp32Kernel {
  using Value = float;
  static Value step(Value acc, Value a, Value b) { return acc + a * b; }
};

// Product and sum each rounded to binary16. Two binary16 values sum exactly
// in double, so the only rounding is the explicit one.
struct Fp16Kernel {
  using Value = float;
  static Value step(Value acc, Value a, Value b) {
    const double p = round_to_format(static_cast<double>(a * b), ElementType::FP16);
    return static_cast<float>(round_to_format(static_cast<double>(acc) + p, ElementType::FP16));
  }
};

// out[j] = step(...step(out[j], a_0, b_0[j])..., a_{count-1}, b_{count-1}[j])
// for j < width, where term(t) returns {a_t, b_t}. The output is held in a
// register block across all terms, so each element sees the terms in order.
template <typename Kernel, typename Term>
void accumulate(std::size_t count, Term term, typename Kernel::Value* out, std::size_t width) {
  using T = typename Kernel::Value;
  constexpr std::size_t kBlock = 32;
  std::size_t j0 = 0;
  for (; j0 + kBlock <= width; j0 += kBlock) {
    T r[kBlock];
    for (std::size_t j = 0; j < kBlock; ++j) r[j] = out[j0 + j];
    for (std::size_t t = 0; t < count; ++t) {
      const auto [a, b] = term(t);
      for (std::size_t j = 0; j < kBlock; ++j) r[j] = Kernel::step(r[j], a, b[j0 + j]);
    }
    for (std::size_t j = 0; j < kBlock; ++j) out[j0 + j] = r[j];
  }
  if (j0 < width) {
    const std::size_t w = width - j0;
    T r[kBlock];
    for (std::size_t j = 0; j < w; ++j) r[j] = out[j0 + j];
    for (std::size_t t = 0; t < count; ++t) {
      const auto [a, b] = term(t);
      for (std::size_t j = 0; j < w; ++j) r[j] = Kernel::step(r[j], a, b[j0 + j]);
    }
    for (std::size_t j = 0; j < w; ++j) out[j0 + j] = r[j];
  }
}

}  // namespace nmsparse::detail

#endif  // NMSPARSE_SRC_KERNELS_HPP
