// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#ifndef NMSPARSE_RANDOM_HPP
#define NMSPARSE_RANDOM_HPP

#include <cstddef>
#include <random>

#include "nmsparse/codec.hpp"
#include "nmsparse/dense.hpp"

namespace nmsparse {

using Rng = std::mt19937_64;

/// INT8/INT32: uniform over [-128, 127]. Float types: standard normal scaled
/// by `scale`, rounded into the type.
DenseMatrix random_dense(std::size_t rows, std::size_t cols, ElementType dtype, Rng& rng,
                         double scale = 1.0);

/// Random matrix with a random N:M keep mask applied; some groups end up
/// with fewer than n nonzeros.
DenseMatrix random_conforming(std::size_t rows, std::size_t cols, NMPattern p,
                              ElementType dtype, Rng& rng);

Mask random_mask(std::size_t rows, std::size_t cols, NMPattern p, Rng& rng);

}  // namespace nmsparse

#endif  // NMSPARSE_RANDOM_HPP
