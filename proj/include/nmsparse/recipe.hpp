// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#ifndef NMSPARSE_RECIPE_HPP
#define NMSPARSE_RECIPE_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nmsparse/format.hpp"
#include "nmsparse/manifest.hpp"
#include "nmsparse/pruner.hpp"
#include "nmsparse/quant.hpp"
#include "nmsparse/tinynet.hpp"

namespace nmsparse {

enum class PhaseKind : std::uint8_t { TrainDense, Prune, RetrainSparse, FinetuneSparse, Calibrate };

std::string_view to_string(PhaseKind k);
std::optional<PhaseKind> parse_phase_kind(std::string_view text);

enum class PermuteMode : std::uint8_t { Off, Greedy, Exhaustive };

struct Phase {
  std::string name;
  PhaseKind kind = PhaseKind::TrainDense;
  /// Training phases. A retrain phase inherits the schedule of the dense
  /// phase it repeats unless it overrides keys.
  std::optional<Schedule> schedule;
  /// RetrainSparse: name of the dense phase being repeated.
  std::string repeats;
  /// Training phases: seed of the task this phase trains on (0 = the
  /// recipe's task). Retrain phases use their dense phase's task.
  std::uint64_t data_seed = 0;
  /// Prune options.
  NMPattern pattern{2, 4};
  PermuteMode permute = PermuteMode::Off;
  /// Calibrate options.
  CalibMethod method = CalibMethod::max();
  Granularity granularity = Granularity::PerRow;
};

/// A network, a synthetic task, and an ordered list of phases.
struct Recipe {
  std::string name = "recipe";
  std::uint64_t seed = 1;
  BlobSpec data;
  std::vector<std::size_t> hidden{64};
  /// Format the pruned layers would be deployed in; drives eligibility.
  NumericFormat dtype{ElementType::FP16, AccumulatorType::FP32};
  std::vector<Phase> phases;

  /// Layer sizes {inputs, hidden..., classes}.
  std::vector<std::size_t> layer_sizes() const;
};

/// Parses the key-value recipe format (see docs/recipe-format.md). Throws
/// InvalidRecipe naming the offending line.
Recipe parse_recipe(std::string_view text);

/// Throws InvalidRecipe describing the first broken ordering rule:
///  - exactly one prune phase, preceded by at least one train_dense phase;
///  - train_dense only before prune; retrain_sparse, finetune_sparse and
///    calibrate only after it;
///  - at least one retrain_sparse; each repeats a distinct train_dense phase,
///    in dense-phase order, with a byte-identical schedule descriptor;
///  - finetune_sparse follows every retrain_sparse; calibrate follows every
///    training phase.
void validate_recipe(const Recipe& recipe);

struct PhaseReport {
  std::string name;
  PhaseKind kind = PhaseKind::TrainDense;
  std::string schedule;  // descriptor, empty for non-training phases
  std::string paired_schedule;  // retrain: descriptor of the repeated phase
  double train_loss = 0;
  double train_accuracy = 0;
  double test_accuracy = 0;
  double sparsity = 0;  // fraction of zero weights over all layers
  std::size_t mask_violations = 0;  // retrain/finetune: worst count over all steps
  std::size_t pruned_layers = 0;
  double retained_fraction = 0;  // prune: kept magnitude / total, pruned layers
  bool int8_conforming = false;  // calibrate: quantized pruned weights still N:M
  std::vector<std::string> notes;
};

struct RecipeReport {
  std::string name;
  std::vector<PhaseReport> phases;
  double dense_test_accuracy = 0;  // after the last train_dense phase
  double final_test_accuracy = 0;  // after the last training phase
  TinyNet net;
  std::vector<Mask> masks;

  std::string to_text() const;
};

/// Validates, then executes the phases in order on `net`.
RecipeReport run_recipe(const Recipe& recipe, TinyNet net);
/// Same, starting from TinyNet::create(recipe.layer_sizes(), recipe.seed).
RecipeReport run_recipe(const Recipe& recipe);

/// Manifests for every layer of `net`, as the pruning policy sees them.
std::vector<LayerManifest> manifests(const TinyNet& net, const NumericFormat& dtype);

}  // namespace nmsparse

#endif  // NMSPARSE_RECIPE_HPP
