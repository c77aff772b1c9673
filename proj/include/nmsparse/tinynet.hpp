// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#ifndef NMSPARSE_TINYNET_HPP
#define NMSPARSE_TINYNET_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nmsparse/codec.hpp"
#include "nmsparse/dense.hpp"

namespace nmsparse {

struct Dataset {
  std::size_t features = 0;
  std::size_t classes = 0;
  std::vector<double> x;  // samples x features, row-major
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
};

/// Gaussian blobs: one random center per class, isotropic noise around it.
struct BlobSpec {
  std::size_t classes = 4;
  std::size_t features = 64;
  std::size_t train_per_class = 128;
  std::size_t test_per_class = 64;
  double separation = 1.0;  // std-dev of center coordinates
  double spread = 2.0;      // std-dev of per-sample noise
  std::uint64_t seed = 1;
};

struct BlobTask {
  Dataset train;
  Dataset test;
};

BlobTask make_blobs(const BlobSpec& spec);

/// Fully-connected layer computing W x + b, W stored out x in row-major.
struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  /// Weights as an FP32 matrix (values rounded).
  DenseMatrix weight_matrix() const;
};

/// Multi-layer perceptron: ReLU between layers, softmax cross-entropy loss,
/// SGD with momentum.
struct TinyNet {
  std::vector<Layer> layers;
  std::vector<Layer> velocity;  // optimizer state, same shapes as layers

  /// sizes = {inputs, hidden..., classes}; He-normal weights, zero biases.
  static TinyNet create(const std::vector<std::size_t>& sizes, std::uint64_t seed);

  std::size_t parameter_count() const;
  void reset_optimizer();

  friend bool operator==(const TinyNet& a, const TinyNet& b);
};

enum class LrCurve : std::uint8_t { Constant, Step, Cosine };

/// Optimizer and schedule. Two sessions with equal descriptors train
/// identically.
struct Schedule {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 0.05;
  LrCurve curve = LrCurve::Constant;
  std::size_t step_epochs = 10;  // Step: decay period
  double gamma = 0.1;            // Step: decay factor
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;  // batch shuffling

  double lr_at(std::size_t epoch) const;
  /// Canonical one-line serialization.
  std::string descriptor() const;

  friend bool operator==(const Schedule&, const Schedule&) = default;
};

struct TrainLog {
  std::vector<double> epoch_loss;  // mean training loss per epoch
  std::size_t steps = 0;
};

/// Called after every optimizer step.
using StepObserver = std::function<void(const TinyNet&)>;

/// Trains from the given weights with freshly reset optimizer state. Throws
/// Divergence if the loss becomes non-finite.
TinyNet train(TinyNet net, const Dataset& data, const Schedule& schedule,
              TrainLog* log = nullptr, const StepObserver& observer = {});

/// One mask per layer, shaped like its weight matrix. Optimizer state is
/// reset, masked weights are zeroed before the first step and re-zeroed
/// (with their momentum) after every step. Throws ShapeMismatch.
TinyNet retrain_sparse(TinyNet net, const std::vector<Mask>& masks, const Dataset& data,
                       const Schedule& schedule, TrainLog* log = nullptr,
                       const StepObserver& observer = {});

/// Number of masked-out weights that are not exactly zero.
std::size_t mask_violations(const TinyNet& net, const std::vector<Mask>& masks);

struct Gradients {
  double loss = 0;
  std::vector<Layer> grads;
};

/// Mean cross-entropy and its gradient over samples [begin, end) (no weight
/// decay term).
Gradients compute_gradients(const TinyNet& net, const Dataset& data, std::size_t begin,
                            std::size_t end);
double mean_loss(const TinyNet& net, const Dataset& data);
double accuracy(const TinyNet& net, const Dataset& data);

/// Flattened parameters in layer order (weights then bias per layer).
std::vector<double> parameters(const TinyNet& net);
void set_parameters(TinyNet& net, const std::vector<double>& params);
std::vector<double> flatten(const std::vector<Layer>& layers);

}  // namespace nmsparse

#endif  // NMSPARSE_TINYNET_HPP
