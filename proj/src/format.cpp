// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#include "nmsparse/format.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cctype>
#include <cmath>
#include <limits>

namespace nmsparse {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::UnsupportedFormat: return "unsupported format";
    case ErrorCode::InvalidPattern: return "invalid pattern";
    case ErrorCode::NonConforming: return "non-conforming input";
    case ErrorCode::MalformedMetadata: return "malformed metadata";
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::InvalidRecipe: return "invalid recipe";
    case ErrorCode::BadMagic: return "bad magic";
    case ErrorCode::VersionMismatch: return "version mismatch";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::InvalidEntry: return "invalid entry";
    case ErrorCode::Io: return "i/o error";
  }
  return "unknown";
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

// Round to a binary floating format with `precision` significand bits
// (including the implicit one), smallest normal exponent `min_exp`.
double round_binary(double x, int precision, int min_exp, double max_finite) {
  if (!std::isfinite(x) || x == 0.0) return x;
  int e = 0;
  std::frexp(x, &e);  // |x| in [2^(e-1), 2^e)
  const int exp = std::max(e - 1, min_exp);
  const double quantum = std::ldexp(1.0, exp - (precision - 1));
  const double r = std::nearbyint(x / quantum) * quantum;
  if (std::fabs(r) > max_finite) {
    return std::copysign(std::numeric_limits<double>::infinity(), x);
  }
  return r;
}

constexpr double kFp16Max = 65504.0;
const double kBf16Max = std::ldexp(255.0, 120);   // (2 - 2^-7) * 2^127
const double kTf32Max = std::ldexp(2047.0, 117);  // (2 - 2^-10) * 2^127

double saturate_integer(double x, double lo, double hi) {
  if (std::isnan(x)) return 0.0;
  return std::clamp(std::nearbyint(x), lo, hi);
}

}  // namespace

bool NumericFormat::valid() const {
  switch (input) {
    case ElementType::FP32:
    case ElementType::TF32:
    case ElementType::BF16:
      return accumulator == AccumulatorType::FP32;
    case ElementType::FP16:
      return accumulator == AccumulatorType::FP32 ||
             accumulator == AccumulatorType::FP16;
    case ElementType::INT8:
      return accumulator == AccumulatorType::INT32;
    case ElementType::INT32:
      return false;
  }
  return false;
}

bool NumericFormat::sparse_capable() const {
  return valid() && input != ElementType::FP32;
}

ElementType NumericFormat::result_type() const {
  switch (accumulator) {
    case AccumulatorType::FP32: return ElementType::FP32;
    case AccumulatorType::FP16: return ElementType::FP16;
    case AccumulatorType::INT32: return ElementType::INT32;
  }
  return ElementType::FP32;
}

std::string NumericFormat::name() const {
  return std::string(to_string(input)) + "/" + std::string(to_string(accumulator));
}

void require_valid(const NumericFormat& f) {
  if (!f.valid()) {
    throw Error(ErrorCode::UnsupportedFormat,
                "format pair " + f.name() + " is not a supported input/accumulator pair");
  }
}

std::string_view to_string(ElementType t) {
  switch (t) {
    case ElementType::FP32: return "fp32";
    case ElementType::TF32: return "tf32";
    case ElementType::FP16: return "fp16";
    case ElementType::BF16: return "bf16";
    case ElementType::INT8: return "int8";
    case ElementType::INT32: return "int32";
  }
  return "?";
}

std::string_view to_string(AccumulatorType t) {
  switch (t) {
    case AccumulatorType::FP32: return "fp32";
    case AccumulatorType::FP16: return "fp16";
    case AccumulatorType::INT32: return "int32";
  }
  return "?";
}

std::optional<ElementType> parse_element_type(std::string_view text) {
  static constexpr std::array kAll = {ElementType::FP32, ElementType::TF32,
                                      ElementType::FP16, ElementType::BF16,
                                      ElementType::INT8, ElementType::INT32};
  const std::string s = lower(text);
  for (ElementType t : kAll) {
    if (s == to_string(t)) return t;
  }
  return std::nullopt;
}

std::optional<NumericFormat> parse_format(std::string_view text) {
  const auto slash = text.find('/');
  const auto input = parse_element_type(text.substr(0, slash));
  if (!input) return std::nullopt;
  NumericFormat f{*input, *input == ElementType::INT8 ? AccumulatorType::INT32
                                                      : AccumulatorType::FP32};
  if (slash != std::string_view::npos) {
    const std::string acc = lower(text.substr(slash + 1));
    if (acc == "fp32") {
      f.accumulator = AccumulatorType::FP32;
    } else if (acc == "fp16") {
      f.accumulator = AccumulatorType::FP16;
    } else if (acc == "int32") {
      f.accumulator = AccumulatorType::INT32;
    } else {
      return std::nullopt;
    }
  }
  if (!f.valid()) return std::nullopt;
  return f;
}

int bit_width(ElementType t) {
  switch (t) {
    case ElementType::FP32:
    case ElementType::TF32:
    case ElementType::INT32:
      return 32;
    case ElementType::FP16:
    case ElementType::BF16:
      return 16;
    case ElementType::INT8:
      return 8;
  }
  return 0;
}

double round_to_format(double x, ElementType t) {
  switch (t) {
    case ElementType::FP32:
      return static_cast<double>(static_cast<float>(x));
    case ElementType::TF32:
      return round_binary(x, 11, -126, kTf32Max);
    case ElementType::FP16:
      return round_binary(x, 11, -14, kFp16Max);
    case ElementType::BF16:
      return round_binary(x, 8, -126, kBf16Max);
    case ElementType::INT8:
      return saturate_integer(x, -128.0, 127.0);
    case ElementType::INT32:
      return saturate_integer(x, -2147483648.0, 2147483647.0);
  }
  return x;
}

bool representable(double x, ElementType t) {
  if (x == 0.0) return true;
  if (std::isnan(x)) return t != ElementType::INT8 && t != ElementType::INT32;
  return round_to_format(x, t) == x;
}

std::uint16_t fp16_bits(double x) {
  const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
  if (std::isnan(x)) return 0x7e00;
  const double a = std::fabs(x);
  if (std::isinf(a) || a > kFp16Max) return sign | 0x7c00;
  if (a == 0.0) return sign;
  int e = 0;
  std::frexp(a, &e);
  const int exp = e - 1;
  if (exp < -14) {
    // subnormal: a = mant * 2^-24
    const auto mant = static_cast<std::uint16_t>(std::nearbyint(std::ldexp(a, 24)));
    return sign | mant;
  }
  const auto mant =
      static_cast<std::uint16_t>(std::nearbyint(std::ldexp(a, 10 - exp)) - 1024.0);
  return static_cast<std::uint16_t>(sign | ((exp + 15) << 10) | mant);
}

double fp16_from_bits(std::uint16_t bits) {
  const double sign = (bits & 0x8000) ? -1.0 : 1.0;
  const int exp = (bits >> 10) & 0x1f;
  const int mant = bits & 0x3ff;
  if (exp == 0x1f) {
    return mant ? std::numeric_limits<double>::quiet_NaN()
                : sign * std::numeric_limits<double>::infinity();
  }
  if (exp == 0) return sign * std::ldexp(static_cast<double>(mant), -24);
  return sign * std::ldexp(static_cast<double>(mant + 1024), exp - 25);
}

std::uint16_t bf16_bits(double x) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
  return static_cast<std::uint16_t>(bits >> 16);
}

double bf16_from_bits(std::uint16_t bits) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

int NMPattern::index_bits() const {
  int bits = 0;
  while ((1 << bits) < m) ++bits;
  return bits;
}

std::string NMPattern::name() const {
  return std::to_string(n) + ":" + std::to_string(m);
}

void require_valid(const NMPattern& p) {
  if (!p.valid()) {
    throw Error(ErrorCode::InvalidPattern,
                "pattern " + p.name() + " must satisfy 0 < n < m <= 64");
  }
}

std::optional<NMPattern> parse_pattern(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) return std::nullopt;
  auto number = [](std::string_view s) -> std::optional<int> {
    int v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
  };
  const auto n = number(text.substr(0, colon)), m = number(text.substr(colon + 1));
  if (!n || !m) return std::nullopt;
  const NMPattern p{*n, *m};
  if (!p.valid()) return std::nullopt;
  return p;
}

NMPattern hardware_pattern(const NumericFormat& f) {
  return f.input == ElementType::TF32 ? NMPattern{1, 2} : NMPattern{2, 4};
}

std::size_t sparse_k_multiple(ElementType t) {
  switch (t) {
    case ElementType::FP16:
    case ElementType::BF16:
      return 16;
    case ElementType::INT8:
      return 32;
    case ElementType::TF32:
      return 8;
    case ElementType::FP32:
    case ElementType::INT32:
      return 0;
  }
  return 0;
}

void require_sparse_shape(const GemmShape& s, const NumericFormat& f,
                          const NMPattern& p) {
  require_valid(f);
  require_valid(p);
  if (!f.sparse_capable()) {
    throw Error(ErrorCode::UnsupportedFormat,
                "format " + f.name() + " has no sparse mode");
  }
  const std::size_t mult = sparse_k_multiple(f.input);
  if (s.k % mult != 0) {
    throw Error(ErrorCode::ShapeMismatch,
                "sparse GEMM K=" + std::to_string(s.k) + " must be a multiple of " +
                    std::to_string(mult) + " for " + std::string(to_string(f.input)));
  }
  if (s.k % static_cast<std::size_t>(p.m) != 0) {
    throw Error(ErrorCode::ShapeMismatch,
                "sparse GEMM K=" + std::to_string(s.k) + " must be a multiple of m=" +
                    std::to_string(p.m));
  }
}

}  // namespace nmsparse
