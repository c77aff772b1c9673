// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#ifndef NMSPARSE_MANIFEST_HPP
#define NMSPARSE_MANIFEST_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "nmsparse/format.hpp"

namespace nmsparse {

enum class LayerKind : std::uint8_t {
  Conv,
  FullyConnected,
  Recurrent,
  Embedding,
  HeadTrainingOnly,
  Other,
};

std::string_view to_string(LayerKind k);
std::optional<LayerKind> parse_layer_kind(std::string_view text);

/// What the pruning policy needs to know about one layer. gemm_k is the
/// reduction depth: input features for fully-connected and recurrent layers,
/// C*R*S for convolutions.
struct LayerManifest {
  std::string name;
  LayerKind kind = LayerKind::FullyConnected;
  std::size_t gemm_k = 0;
  std::size_t in_channels = 0;
  NumericFormat dtype{ElementType::FP16, AccumulatorType::FP32};
  std::size_t phase = 0;
};

struct Eligibility {
  bool eligible = false;
  std::string reason;
};

/// Only learnable GEMM-like layers that run at inference are pruned:
/// embeddings and training-only heads are skipped, as are convolutions on
/// 3-channel input and any layer whose GEMM-K breaks the sparse K rule of
/// its format.
Eligibility eligible(const LayerManifest& layer);

}  // namespace nmsparse

#endif  // NMSPARSE_MANIFEST_HPP
