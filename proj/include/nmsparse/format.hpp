// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#ifndef NMSPARSE_FORMAT_HPP
#define NMSPARSE_FORMAT_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "nmsparse/error.hpp"

namespace nmsparse {

/// Element storage type. INT32 only ever appears as a GEMM accumulator
/// result; it is not a valid GEMM input.
enum class ElementType : std::uint8_t { FP32, TF32, FP16, BF16, INT8, INT32 };

enum class AccumulatorType : std::uint8_t { FP32, FP16, INT32 };

/// Input operand type paired with an accumulator. Only the six
/// combinations supported by sparse-capable matrix units are valid:
/// FP32/FP32, TF32/FP32, FP16/FP32, BF16/FP32, FP16/FP16, INT8/INT32.
struct NumericFormat {
  ElementType input = ElementType::FP32;
  AccumulatorType accumulator = AccumulatorType::FP32;

  friend bool operator==(const NumericFormat&, const NumericFormat&) = default;

  bool valid() const;
  /// Every valid pair except FP32/FP32 has a sparse mode.
  bool sparse_capable() const;
  /// Element type a GEMM in this format produces.
  ElementType result_type() const;

  std::string name() const;
};

/// Throws UnsupportedFormat unless `f.valid()`.
void require_valid(const NumericFormat& f);

/// Parses names like "int8", "fp16", "fp16/fp16", "bf16/fp32". A bare input
/// type picks its default accumulator (FP32 for floats, INT32 for INT8).
std::optional<NumericFormat> parse_format(std::string_view text);

std::string_view to_string(ElementType t);
std::string_view to_string(AccumulatorType t);
std::optional<ElementType> parse_element_type(std::string_view text);

/// Storage width in bits (TF32 occupies a full 32-bit word).
int bit_width(ElementType t);

/// Rounds `x` to the nearest value of type `t`, ties to even. Float types
/// overflow to +-inf, integer types saturate.
double round_to_format(double x, ElementType t);

inline double round_to_format(double x, const NumericFormat& f) {
  return round_to_format(x, f.input);
}

bool representable(double x, ElementType t);

/// IEEE binary16 and bfloat16 bit encodings for values already representable
/// in those types.
std::uint16_t fp16_bits(double x);
double fp16_from_bits(std::uint16_t bits);
std::uint16_t bf16_bits(double x);
double bf16_from_bits(std::uint16_t bits);

/// N kept elements out of every aligned group of M.
struct NMPattern {
  int n = 2;
  int m = 4;

  friend bool operator==(const NMPattern&, const NMPattern&) = default;

  bool valid() const { return n > 0 && n < m && m <= 64; }
  /// Bits of positional metadata stored per kept element: ceil(log2 m).
  int index_bits() const;
  std::string name() const;
};

void require_valid(const NMPattern& p);
std::optional<NMPattern> parse_pattern(std::string_view text);

/// The pattern the hardware mode uses for a format: 1:2 for TF32, 2:4 else.
NMPattern hardware_pattern(const NumericFormat& f);

struct GemmShape {
  std::size_t m = 0;  // output rows
  std::size_t n = 0;  // output columns
  std::size_t k = 0;  // contracted dimension

  friend bool operator==(const GemmShape&, const GemmShape&) = default;
};

/// Required multiple of K for a sparse GEMM with inputs of type `t`: 16 for
/// 16-bit floats, 32 for INT8, 8 for TF32. Returns 0 when the type has no
/// sparse mode.
std::size_t sparse_k_multiple(ElementType t);

/// Throws unless the shape satisfies the sparse dimension rule for `f` and
/// `p.m` divides K.
void require_sparse_shape(const GemmShape& s, const NumericFormat& f,
                          const NMPattern& p);

}  // namespace nmsparse

#endif  // NMSPARSE_FORMAT_HPP
