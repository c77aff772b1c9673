// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nmsparse/random.hpp"
#include "nmsparse/spmm.hpp"

using namespace nmsparse;

namespace {

const NumericFormat kInt8{ElementType::INT8, AccumulatorType::INT32};
const NumericFormat kFp16{ElementType::FP16, AccumulatorType::FP32};

// Elementwise |x - y| <= 2 K ulp(acc) with ulp taken at the larger magnitude.
bool within_ulps(const DenseMatrix& x, const DenseMatrix& y, std::size_t k, AccumulatorType acc) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x.data()[i], b = y.data()[i];
    const double ulp = accumulator_ulp(std::max(std::fabs(a), std::fabs(b)), acc);
    if (std::fabs(a - b) > 2.0 * static_cast<double>(k) * ulp) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("selector rows gather rows of b") {
  // each row of a keeps a single 1.0 per group, so C row = sum of the selected B rows
  const std::size_t k = 16;
  DenseMatrix a(2, k, ElementType::FP16);
  a.set(0, 2, 1.0);
  a.set(1, 5, 1.0);
  a.set(1, 12, 1.0);
  Rng rng(3);
  const DenseMatrix b = random_dense(k, 8, ElementType::FP16, rng);
  const DenseMatrix c = spmm(compress(a, {2, 4}), b, kFp16);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(c(0, j) == b(2, j));
    CHECK(c(1, j) == static_cast<double>(static_cast<float>(b(5, j)) + static_cast<float>(b(12, j))));
  }
  CHECK(c.dtype() == ElementType::FP32);
}

TEST_CASE("INT8 32x64 by 64x16 is bit-equal to the dense oracle") {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const DenseMatrix a = random_conforming(32, 64, {2, 4}, ElementType::INT8, rng);
    const DenseMatrix b = random_dense(64, 16, ElementType::INT8, rng);
    const DenseMatrix c = spmm(compress(a, {2, 4}), b, kInt8);
    REQUIRE(bit_equal(c, gemm_dense(a, b, kInt8)));
    CHECK(c.dtype() == ElementType::INT32);
  }
}

TEST_CASE("float modes agree with the dense oracle within 2K ulp") {
  Rng rng(12);
  const std::vector<NumericFormat> formats = {
      {ElementType::FP16, AccumulatorType::FP32}, {ElementType::BF16, AccumulatorType::FP32},
      {ElementType::FP16, AccumulatorType::FP16}, {ElementType::TF32, AccumulatorType::FP32}};
  for (const NumericFormat& f : formats) {
    const NMPattern p = hardware_pattern(f);
    for (int t = 0; t < 10; ++t) {
      const std::size_t k = static_cast<std::size_t>(sparse_k_multiple(f.input)) * (1 + t % 4);
      const DenseMatrix a = random_conforming(9, k, p, f.input, rng);
      const DenseMatrix b = random_dense(k, 7, f.input, rng, 0.25);
      const DenseMatrix c = spmm(compress(a, p), b, f);
      REQUIRE(within_ulps(c, gemm_dense(a, b, f), k, f.accumulator));
    }
  }
}

TEST_CASE("multiply-add counter equals the closed form") {
  CHECK(spmm_flops({64, 64, 64}, {2, 4}) == 131072);
  CHECK(spmm_flops({64, 64, 64}, {1, 2}) == 131072);
  CHECK(spmm_flops({64, 64, 64}, {1, 4}) == 65536);
  Rng rng(5);
  const std::vector<std::pair<GemmShape, NMPattern>> cases = {
      {{64, 64, 64}, {2, 4}}, {{17, 3, 96}, {2, 4}}, {{8, 8, 32}, {1, 2}}, {{5, 9, 64}, {2, 4}}};
  for (const auto& [shape, p] : cases) {
    const DenseMatrix a = random_conforming(shape.m, shape.k, p, ElementType::INT8, rng);
    const DenseMatrix b = random_dense(shape.k, shape.n, ElementType::INT8, rng);
    SpmmStats stats;
    spmm(compress(a, p), b, kInt8, SpmmPlan::for_shape(shape, p.m), &stats);
    CHECK(stats.multiply_adds == spmm_flops(shape, p));
    CHECK(stats.multiply_adds == shape.m * shape.n * shape.k * static_cast<std::size_t>(p.n) /
                                     static_cast<std::size_t>(p.m));
  }
}

TEST_CASE("result does not depend on the plan") {
  Rng rng(8);
  const GemmShape shape{37, 45, 128};
  const DenseMatrix a8 = random_conforming(shape.m, shape.k, {2, 4}, ElementType::INT8, rng);
  const DenseMatrix b8 = random_dense(shape.k, shape.n, ElementType::INT8, rng);
  const DenseMatrix af = random_conforming(shape.m, shape.k, {2, 4}, ElementType::FP16, rng);
  const DenseMatrix bf = random_dense(shape.k, shape.n, ElementType::FP16, rng);
  const SparseNM s8 = compress(a8, {2, 4}), sf = compress(af, {2, 4});
  const DenseMatrix ref8 = spmm(s8, b8, kInt8), reff = spmm(sf, bf, kFp16);
  for (std::size_t tr : {1, 5, 64}) {
    for (std::size_t tc : {1, 16, 512}) {
      for (std::size_t td : {4, 8, 64}) {
        for (unsigned th : {1u, 3u}) {
          SpmmPlan plan{shape, tr, tc, td, th};
          SpmmStats stats;
          REQUIRE(bit_equal(spmm(s8, b8, kInt8, plan, &stats), ref8));
          REQUIRE(stats.multiply_adds == spmm_flops(shape, {2, 4}));
          REQUIRE(within_ulps(spmm(sf, bf, kFp16, plan), reff, shape.k, AccumulatorType::FP32));
        }
      }
    }
  }
}

TEST_CASE("spmm errors") {
  Rng rng(1);
  const SparseNM a = compress(random_conforming(4, 32, {2, 4}, ElementType::FP16, rng), {2, 4});
  const DenseMatrix b(32, 4, ElementType::FP16);
  auto code_of = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::Io;
  };
  CHECK(code_of([&] { spmm(a, DenseMatrix(16, 4, ElementType::FP16), kFp16); }) ==
        ErrorCode::ShapeMismatch);
  CHECK(code_of([&] {
          spmm(a, DenseMatrix(32, 4), {ElementType::FP32, AccumulatorType::FP32});
        }) == ErrorCode::UnsupportedFormat);
  // K = 24 is not a multiple of 16 for fp16
  const SparseNM a24 = compress(DenseMatrix(4, 24, ElementType::FP16), {2, 4});
  CHECK(code_of([&] { spmm(a24, DenseMatrix(24, 4, ElementType::FP16), kFp16); }) ==
        ErrorCode::ShapeMismatch);
  // INT8 needs K multiple of 32
  const SparseNM a16 = compress(DenseMatrix(4, 16, ElementType::INT8), {2, 4});
  CHECK_THROWS_AS(spmm(a16, DenseMatrix(16, 4, ElementType::INT8), kInt8), Error);
  // tile depth must be a multiple of m
  SpmmPlan bad = SpmmPlan::for_shape({4, 4, 32});
  bad.tile_depth = 6;
  CHECK_THROWS_AS(spmm(a, b, kFp16, bad), Error);
}

TEST_CASE("parse_shapes") {
  const auto s = parse_shapes("64x64x64,128x32x1024");
  REQUIRE(s.size() == 2);
  CHECK(s[1].m == 128);
  CHECK(s[1].n == 32);
  CHECK(s[1].k == 1024);
  CHECK_THROWS_AS(parse_shapes("64x64"), Error);
  CHECK_THROWS_AS(parse_shapes("axbxc"), Error);
}

TEST_CASE("bench report") {
  const BenchReport r = bench({{16, 16, 64}, {16, 16, 128}}, kFp16, 3);
  REQUIRE(r.rows.size() == 2);
  for (const BenchRow& row : r.rows) {
    CHECK(row.flops_ratio == 2.0);
    CHECK(row.dense_ns > 0);
    CHECK(row.sparse_ns > 0);
  }
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("M,N,K,dense_ns,sparse_ns,speedup,flops_ratio\n", 0) == 0);
  CHECK(csv.find("16,16,64,") != std::string::npos);
  CHECK(bench({{8, 8, 32}}, {ElementType::TF32, AccumulatorType::FP32}, 1).rows[0].flops_ratio == 2.0);
}
