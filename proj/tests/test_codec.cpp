// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "nmsparse/codec.hpp"
#include "nmsparse/random.hpp"

using namespace nmsparse;

namespace {

// One row with nonzeros at positions 0,3 and 1,2 of its two groups.
DenseMatrix sample_row() {
  return DenseMatrix(1, 8, ElementType::FP16, {1.5, 0, 0, -2, 0, 3, 0.25, 0});
}

}  // namespace

TEST_CASE("check_conformance") {
  CHECK(check_conformance(sample_row(), {2, 4}));
  CHECK(check_conformance(DenseMatrix(3, 8), {2, 4}));
  const DenseMatrix bad(1, 4, ElementType::FP32, {1, 1, 1, 0});
  CHECK_FALSE(check_conformance(bad, {2, 4}));
  const DenseMatrix two_rows(2, 8, ElementType::FP32, {1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 3, 0});
  const auto v = find_violation(two_rows, {2, 4});
  REQUIRE(v.has_value());
  CHECK(v->row == 1);
  CHECK(v->group == 1);
  CHECK_THROWS_AS(check_conformance(DenseMatrix(1, 6), {2, 4}), Error);
}

TEST_CASE("compress stores values and positions of a sample row") {
  const SparseNM s = compress(sample_row(), {2, 4});
  CHECK(s.kept_per_row() == 4);
  CHECK(s.index(0, 0) == 0);
  CHECK(s.index(0, 1) == 3);
  CHECK(s.index(0, 2) == 1);
  CHECK(s.index(0, 3) == 2);
  CHECK(std::vector<double>(s.values().begin(), s.values().end()) ==
        std::vector<double>{1.5, -2, 3, 0.25});
  // 2-bit fields, first position in the low bits: 0 | 3<<2 | 1<<4 | 2<<6.
  REQUIRE(s.meta().size() == 1);
  CHECK(s.meta()[0] == 0x9c);
}

TEST_CASE("compress pads sparse groups with the smallest unused positions") {
  const SparseNM zero = compress(DenseMatrix(1, 4, ElementType::FP16), {2, 4});
  CHECK(zero.index(0, 0) == 0);
  CHECK(zero.index(0, 1) == 1);
  CHECK(zero.value(0, 0) == 0);
  CHECK(zero.value(0, 1) == 0);

  const SparseNM one = compress(DenseMatrix(1, 4, ElementType::FP32, {0, 0, 7, 0}), {2, 4});
  CHECK(one.index(0, 0) == 0);
  CHECK(one.index(0, 1) == 2);
  CHECK(one.value(0, 1) == 7);
  CHECK_THROWS_AS(compress(DenseMatrix(1, 4, ElementType::FP32, {1, 1, 1, 0}), {2, 4}), Error);
}

TEST_CASE("decompress places values at metadata positions") {
  // values [a, b], positions [0, 3]
  const SparseNM s = SparseNM::from_parts(1, 4, {2, 4}, ElementType::FP32, {5, 6}, {0x0c});
  const DenseMatrix d = decompress(s);
  CHECK(d == DenseMatrix(1, 4, ElementType::FP32, {5, 0, 0, 6}));
  CHECK(decompress(compress(DenseMatrix(0, 8), {2, 4})).empty());
}

TEST_CASE("malformed metadata is rejected") {
  // positions 3, 0 are not increasing
  CHECK_THROWS_AS(SparseNM::from_parts(1, 4, {2, 4}, ElementType::FP32, {1, 2}, {0x03}), Error);
  // equal positions
  CHECK_THROWS_AS(SparseNM::from_parts(1, 4, {2, 4}, ElementType::FP32, {1, 2}, {0x05}), Error);
  // m = 3 uses 2-bit fields, position 3 is out of range
  CHECK_THROWS_AS(SparseNM::from_parts(1, 3, {1, 3}, ElementType::FP32, {1}, {0x03}), Error);
  // padding bits above the used fields must be zero
  CHECK_THROWS_AS(SparseNM::from_parts(1, 4, {2, 4}, ElementType::FP32, {1, 2}, {0x1c}), Error);
  CHECK_THROWS_AS(SparseNM::from_parts(1, 4, {2, 4}, ElementType::FP32, {1}, {0x0c}), Error);
  try {
    SparseNM::from_parts(1, 4, {2, 4}, ElementType::FP32, {1, 2}, {0x03});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedMetadata);
  }
}

TEST_CASE("storage accounting") {
  const auto fp16 = compress(DenseMatrix(1, 4, ElementType::FP16), {2, 4});
  CHECK(storage_bits(fp16) == 36);
  CHECK(dense_bits(fp16) == 64);
  CHECK(1.0 - 36.0 / 64.0 == 0.4375);

  const auto int8 = compress(DenseMatrix(1, 4, ElementType::INT8), {2, 4});
  CHECK(storage_bits(int8) == 20);
  CHECK(dense_bits(int8) == 32);

  const auto half = compress(DenseMatrix(1, 2, ElementType::FP16), {1, 2});
  CHECK(storage_bits(half) == 17);
  CHECK(dense_bits(half) == 32);

  // closed form R * C * (n/m) * (width + ceil(log2 m))
  CHECK(storage_bits(16, 32, {2, 4}, ElementType::BF16) == 16 * 32 / 2 * 18);
  CHECK(storage_bits(3, 24, {1, 8}, ElementType::FP32) == 3 * 3 * 35);
}

TEST_CASE("roundtrip property over random conforming matrices") {
  Rng rng(2024);
  const std::vector<NMPattern> patterns = {{2, 4}, {1, 2}, {1, 4}, {3, 8}, {2, 3}};
  const std::vector<ElementType> types = {ElementType::FP32, ElementType::TF32, ElementType::FP16,
                                          ElementType::BF16, ElementType::INT8};
  std::uniform_int_distribution<std::size_t> rows(0, 12), groups(1, 10);
  for (int t = 0; t < 500; ++t) {
    const NMPattern p = patterns[static_cast<std::size_t>(t) % patterns.size()];
    const ElementType dt = types[static_cast<std::size_t>(t / 5) % types.size()];
    const std::size_t r = rows(rng), c = groups(rng) * static_cast<std::size_t>(p.m);
    const DenseMatrix a = random_conforming(r, c, p, dt, rng);
    const SparseNM s = compress(a, p);
    REQUIRE(bit_equal(decompress(s), a));
    REQUIRE(is_canonical(s));
    // from_parts re-validates strictly increasing positions
    REQUIRE(SparseNM::from_parts(r, c, p, dt, {s.values().begin(), s.values().end()},
                                 {s.meta().begin(), s.meta().end()}) == s);
    REQUIRE(storage_bits(s) == static_cast<std::uint64_t>(r) * c / static_cast<std::size_t>(p.m) *
                                   static_cast<std::size_t>(p.n) *
                                   static_cast<std::uint64_t>(bit_width(dt) + p.index_bits()));
  }
}

TEST_CASE("non-canonical padding is detected") {
  // group [0, 0, 7, 0] stored with positions 2, 3 instead of 0, 2
  const SparseNM s = SparseNM::from_parts(1, 4, {2, 4}, ElementType::FP32, {7, 0}, {0x0e});
  CHECK_FALSE(is_canonical(s));
  CHECK(decompress(s) == DenseMatrix(1, 4, ElementType::FP32, {0, 0, 7, 0}));
}

TEST_CASE("canonical check agrees with the compress fixed point") {
  Rng rng(11);
  for (int t = 0; t < 2000; ++t) {
    const NMPattern p = t % 2 ? NMPattern{1, 2} : NMPattern{2, 4};
    const auto m = static_cast<std::size_t>(p.m), n = static_cast<std::size_t>(p.n);
    const std::size_t rows = 1 + t % 3, groups = 1 + t % 5, cols = groups * m;
    std::vector<double> values;
    std::vector<std::uint8_t> meta(rows * SparseNM::meta_row_bytes(cols, p), 0);
    const std::size_t stride = SparseNM::meta_row_bytes(cols, p);
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t field = 0;
      for (std::size_t g = 0; g < groups; ++g) {
        std::vector<std::size_t> pos(m);
        std::iota(pos.begin(), pos.end(), 0);
        std::shuffle(pos.begin(), pos.end(), rng);
        std::sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n));
        for (std::size_t k = 0; k < n; ++k, ++field) {
          // mostly zeros so that padding choices matter
          values.push_back(rng() % 3 == 0 ? 1.0 + static_cast<double>(rng() % 4) : 0.0);
          for (int b = 0; b < p.index_bits(); ++b) {
            const std::size_t bit = field * static_cast<std::size_t>(p.index_bits()) +
                                    static_cast<std::size_t>(b);
            if ((pos[k] >> b) & 1) meta[r * stride + bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
          }
        }
      }
    }
    const SparseNM s = SparseNM::from_parts(rows, cols, p, ElementType::FP32, values, meta);
    CHECK(is_canonical(s) == (compress(decompress(s), p) == s));
  }
}

TEST_CASE("mask conformance along rows and columns") {
  Mask m(4, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    m.set(i, i, true);
    m.set(i, (i + 1) % 4, true);
  }
  CHECK(mask_conforms(m, {2, 4}, Axis::Rows));
  CHECK(mask_conforms(m, {2, 4}, Axis::Cols));
  m.set(0, 2, true);
  CHECK_FALSE(mask_conforms(m, {2, 4}, Axis::Rows));
  CHECK(m.transposed().transposed() == m);
  CHECK_FALSE(mask_conforms(Mask(2, 6), {2, 4}));
}
