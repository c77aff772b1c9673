// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#include "nmsparse/manifest.hpp"

#include <array>

namespace nmsparse {

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::FullyConnected: return "fully_connected";
    case LayerKind::Recurrent: return "recurrent";
    case LayerKind::Embedding: return "embedding";
    case LayerKind::HeadTrainingOnly: return "head_training_only";
    case LayerKind::Other: return "other";
  }
  return "?";
}

std::optional<LayerKind> parse_layer_kind(std::string_view text) {
  static constexpr std::array kAll = {LayerKind::Conv,      LayerKind::FullyConnected,
                                      LayerKind::Recurrent, LayerKind::Embedding,
                                      LayerKind::HeadTrainingOnly, LayerKind::Other};
  for (LayerKind k : kAll) {
    if (text == to_string(k)) return k;
  }
  return std::nullopt;
}

Eligibility eligible(const LayerManifest& layer) {
  switch (layer.kind) {
    case LayerKind::Embedding:
      return {false, "embedding layers are lookup tables"};
    case LayerKind::HeadTrainingOnly:
      return {false, "layer is used only during training"};
    case LayerKind::Other:
      return {false, "layer has no learnable GEMM-like operation"};
    case LayerKind::Conv:
    case LayerKind::FullyConnected:
    case LayerKind::Recurrent:
      break;
  }
  if (layer.gemm_k == 0) return {false, "GEMM-K must be positive"};
  if (layer.kind == LayerKind::Conv && layer.in_channels == 3) {
    return {false, "first convolution on 3-channel input"};
  }
  if (!layer.dtype.sparse_capable()) {
    return {false, "format " + layer.dtype.name() + " has no sparse mode"};
  }
  const std::size_t mult = sparse_k_multiple(layer.dtype.input);
  if (layer.gemm_k % mult != 0) {
    return {false, "GEMM-K=" + std::to_string(layer.gemm_k) + " is not a multiple of " +
                       std::to_string(mult) + " for " +
                       std::string(to_string(layer.dtype.input))};
  }
  return {true, "eligible"};
}

}  // namespace nmsparse
