// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#include "nmsparse/random.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

namespace nmsparse {

DenseMatrix random_dense(std::size_t rows, std::size_t cols, ElementType dtype, Rng& rng,
                         double scale) {
  std::vector<double> v(rows * cols);
  if (dtype == ElementType::INT8 || dtype == ElementType::INT32) {
    std::uniform_int_distribution<int> dist(-128, 127);
    for (auto& x : v) x = dist(rng);
  } else {
    std::normal_distribution<double> dist(0.0, scale);
    for (auto& x : v) x = round_to_format(dist(rng), dtype);
  }
  return DenseMatrix(rows, cols, dtype, std::move(v));
}

Mask random_mask(std::size_t rows, std::size_t cols, NMPattern p, Rng& rng) {
  require_valid(p);
  const auto m = static_cast<std::size_t>(p.m);
  Mask mask(rows, cols);
  std::vector<std::size_t> idx(m);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t g = 0; g + m <= cols; g += m) {
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      for (int k = 0; k < p.n; ++k) mask.set(r, g + idx[static_cast<std::size_t>(k)], true);
    }
  }
  return mask;
}

DenseMatrix random_conforming(std::size_t rows, std::size_t cols, NMPattern p,
                              ElementType dtype, Rng& rng) {
  require_valid(p);
  const auto m = static_cast<std::size_t>(p.m);
  const auto n = static_cast<std::size_t>(p.n);
  const bool integer = dtype == ElementType::INT8 || dtype == ElementType::INT32;
  std::uniform_int_distribution<int> int_dist(-128, 127);
  std::normal_distribution<double> real_dist(0.0, 1.0);
  std::vector<double> out(rows * cols, 0.0);
  std::vector<std::size_t> idx(m);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t g = 0; g + m <= cols; g += m) {
      std::iota(idx.begin(), idx.end(), 0);
      // Partial Fisher-Yates: the first n slots hold a uniform n-subset.
      for (std::size_t k = 0; k < n; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, m - 1);
        std::swap(idx[k], idx[pick(rng)]);
        double& x = out[r * cols + g + idx[k]];
        x = integer ? int_dist(rng) : round_to_format(real_dist(rng), dtype);
      }
    }
  }
  return DenseMatrix(rows, cols, dtype, std::move(out));
}

}  // namespace nmsparse
