// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#include "nmsparse/tinynet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>

#include "nmsparse/random.hpp"

namespace nmsparse {

namespace {

void generate(Dataset& d, const std::vector<std::vector<double>>& centers,
              std::size_t per_class, double spread, Rng& rng) {
  std::normal_distribution<double> noise(0.0, spread);
  const std::size_t n = per_class * d.classes;
  d.x.resize(n * d.features);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % d.classes;
    d.y[i] = static_cast<int>(c);
    for (std::size_t f = 0; f < d.features; ++f) d.x[i * d.features + f] = centers[c][f] + noise(rng);
  }
}

Layer zeros_like(const Layer& l) {
  return Layer{l.in, l.out, std::vector<double>(l.weight.size(), 0.0),
               std::vector<double>(l.bias.size(), 0.0)};
}

// Activations of every layer for a batch; acts[0] is the input.
std::vector<std::vector<double>> forward(const TinyNet& net, const Dataset& data,
                                         std::span<const std::size_t> idx) {
  const std::size_t batch = idx.size();
  std::vector<std::vector<double>> acts(net.layers.size() + 1);
  acts[0].resize(batch * data.features);
  for (std::size_t s = 0; s < batch; ++s) {
    std::copy_n(&data.x[idx[s] * data.features], data.features, &acts[0][s * data.features]);
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& layer = net.layers[l];
    const bool last = l + 1 == net.layers.size();
    auto& out = acts[l + 1];
    out.assign(batch * layer.out, 0.0);
    for (std::size_t s = 0; s < batch; ++s) {
      const double* x = &acts[l][s * layer.in];
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double* w = &layer.weight[o * layer.in];
        double z = layer.bias[o];
        for (std::size_t i = 0; i < layer.in; ++i) z += w[i] * x[i];
        out[s * layer.out + o] = last ? z : std::max(z, 0.0);
      }
    }
  }
  return acts;
}

// Softmax probabilities in place; returns summed cross-entropy.
double softmax_xent(std::vector<double>& logits, std::size_t classes, const Dataset& data,
                    std::span<const std::size_t> idx) {
  double loss = 0;
  for (std::size_t s = 0; s < idx.size(); ++s) {
    double* z = &logits[s * classes];
    const double zmax = *std::max_element(z, z + classes);
    double sum = 0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
    const double lse = zmax + std::log(sum);
    loss += lse - z[data.y[idx[s]]];
    for (std::size_t c = 0; c < classes; ++c) z[c] = std::exp(z[c] - lse);
  }
  return loss;
}

Gradients gradients_for(const TinyNet& net, const Dataset& data, std::span<const std::size_t> idx) {
  Gradients g;
  for (const Layer& l : net.layers) g.grads.push_back(zeros_like(l));
  const std::size_t batch = idx.size();
  if (batch == 0) return g;
  auto acts = forward(net, data, idx);
  const std::size_t classes = net.layers.back().out;
  std::vector<double> delta = acts.back();
  g.loss = softmax_xent(delta, classes, data, idx) / static_cast<double>(batch);
  for (std::size_t s = 0; s < batch; ++s) {
    delta[s * classes + static_cast<std::size_t>(data.y[idx[s]])] -= 1.0;
  }
  for (double& d : delta) d /= static_cast<double>(batch);

  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const Layer& layer = net.layers[l];
    Layer& gl = g.grads[l];
    const auto& in = acts[l];
    for (std::size_t s = 0; s < batch; ++s) {
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = delta[s * layer.out + o];
        if (d == 0.0) continue;
        gl.bias[o] += d;
        double* gw = &gl.weight[o * layer.in];
        const double* x = &in[s * layer.in];
        for (std::size_t i = 0; i < layer.in; ++i) gw[i] += d * x[i];
      }
    }
    if (l == 0) break;
    std::vector<double> prev(batch * layer.in, 0.0);
    for (std::size_t s = 0; s < batch; ++s) {
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = delta[s * layer.out + o];
        if (d == 0.0) continue;
        const double* w = &layer.weight[o * layer.in];
        double* p = &prev[s * layer.in];
        for (std::size_t i = 0; i < layer.in; ++i) p[i] += d * w[i];
      }
    }
    for (std::size_t i = 0; i < prev.size(); ++i) {
      if (in[i] <= 0.0) prev[i] = 0.0;  // ReLU
    }
    delta = std::move(prev);
  }
  return g;
}

void zero_masked(Layer& layer, const Mask& mask) {
  for (std::size_t o = 0; o < layer.out; ++o) {
    for (std::size_t i = 0; i < layer.in; ++i) {
      if (!mask(o, i)) layer.weight[o * layer.in + i] = 0.0;
    }
  }
}

TinyNet run_training(TinyNet net, const Dataset& data, const Schedule& schedule,
                     const std::vector<Mask>* masks, TrainLog* log,
                     const StepObserver& observer) {
  if (data.size() == 0 || schedule.batch_size == 0) {
    throw Error(ErrorCode::InvalidArgument, "training needs data and a positive batch size");
  }
  net.reset_optimizer();
  if (masks) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) zero_masked(net.layers[l], (*masks)[l]);
  }
  Rng rng(schedule.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = schedule.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += schedule.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + schedule.batch_size);
      const auto idx = std::span<const std::size_t>(order).subspan(b0, b1 - b0);
      const Gradients g = gradients_for(net, data, idx);
      if (!std::isfinite(g.loss)) {
        throw Error(ErrorCode::Divergence, "loss became non-finite in epoch " + std::to_string(epoch));
      }
      epoch_loss += g.loss * static_cast<double>(idx.size());
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        Layer& w = net.layers[l];
        Layer& v = net.velocity[l];
        const Layer& gl = g.grads[l];
        for (std::size_t i = 0; i < w.weight.size(); ++i) {
          const double grad = gl.weight[i] + schedule.weight_decay * w.weight[i];
          v.weight[i] = schedule.momentum * v.weight[i] + grad;
          w.weight[i] -= lr * v.weight[i];
        }
        for (std::size_t i = 0; i < w.bias.size(); ++i) {
          v.bias[i] = schedule.momentum * v.bias[i] + gl.bias[i];
          w.bias[i] -= lr * v.bias[i];
        }
        if (masks) {
          zero_masked(w, (*masks)[l]);
          zero_masked(v, (*masks)[l]);
        }
      }
      if (log) ++log->steps;
      if (observer) observer(net);
    }
    if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return net;
}

}  // namespace

BlobTask make_blobs(const BlobSpec& spec) {
  if (spec.classes < 2 || spec.features == 0) {
    throw Error(ErrorCode::InvalidArgument, "blobs need at least 2 classes and 1 feature");
  }
  Rng rng(spec.seed);
  std::normal_distribution<double> center(0.0, spec.separation);
  std::vector<std::vector<double>> centers(spec.classes, std::vector<double>(spec.features));
  for (auto& c : centers) {
    for (auto& v : c) v = center(rng);
  }
  BlobTask task;
  task.train.features = task.test.features = spec.features;
  task.train.classes = task.test.classes = spec.classes;
  generate(task.train, centers, spec.train_per_class, spec.spread, rng);
  generate(task.test, centers, spec.test_per_class, spec.spread, rng);
  return task;
}

DenseMatrix Layer::weight_matrix() const {
  return DenseMatrix::rounded(out, in, ElementType::FP32, weight);
}

TinyNet TinyNet::create(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
  if (sizes.size() < 2) throw Error(ErrorCode::InvalidArgument, "a net needs at least 2 sizes");
  TinyNet net;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Layer layer{sizes[l], sizes[l + 1], std::vector<double>(sizes[l] * sizes[l + 1]),
                std::vector<double>(sizes[l + 1], 0.0)};
    std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(sizes[l])));
    for (double& w : layer.weight) w = init(rng);
    net.layers.push_back(std::move(layer));
  }
  net.reset_optimizer();
  return net;
}

std::size_t TinyNet::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void TinyNet::reset_optimizer() {
  velocity.clear();
  for (const Layer& l : layers) velocity.push_back(zeros_like(l));
}

bool operator==(const TinyNet& a, const TinyNet& b) {
  return flatten(a.layers) == flatten(b.layers);
}

double Schedule::lr_at(std::size_t epoch) const {
  switch (curve) {
    case LrCurve::Constant:
      return lr;
    case LrCurve::Step:
      return lr * std::pow(gamma, static_cast<double>(epoch / std::max<std::size_t>(step_epochs, 1)));
    case LrCurve::Cosine:
      return lr * 0.5 *
             (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(std::max<std::size_t>(epochs, 1))));
  }
  return lr;
}

std::string Schedule::descriptor() const {
  static constexpr const char* kCurves[] = {"constant", "step", "cosine"};
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "sgd-momentum epochs=%zu batch=%zu lr=%.17g curve=%s step_epochs=%zu "
                "gamma=%.17g momentum=%.17g weight_decay=%.17g seed=%llu",
                epochs, batch_size, lr, kCurves[static_cast<int>(curve)], step_epochs, gamma,
                momentum, weight_decay, static_cast<unsigned long long>(seed));
  return buf;
}

TinyNet train(TinyNet net, const Dataset& data, const Schedule& schedule, TrainLog* log,
              const StepObserver& observer) {
  return run_training(std::move(net), data, schedule, nullptr, log, observer);
}

TinyNet retrain_sparse(TinyNet net, const std::vector<Mask>& masks, const Dataset& data,
                       const Schedule& schedule, TrainLog* log, const StepObserver& observer) {
  if (masks.size() != net.layers.size()) {
    throw Error(ErrorCode::ShapeMismatch, "need one mask per layer");
  }
  for (std::size_t l = 0; l < masks.size(); ++l) {
    if (masks[l].rows() != net.layers[l].out || masks[l].cols() != net.layers[l].in) {
      throw Error(ErrorCode::ShapeMismatch, "mask " + std::to_string(l) + " does not match layer shape");
    }
  }
  return run_training(std::move(net), data, schedule, &masks, log, observer);
}

std::size_t mask_violations(const TinyNet& net, const std::vector<Mask>& masks) {
  std::size_t bad = 0;
  for (std::size_t l = 0; l < net.layers.size() && l < masks.size(); ++l) {
    const Layer& layer = net.layers[l];
    for (std::size_t o = 0; o < layer.out; ++o) {
      for (std::size_t i = 0; i < layer.in; ++i) {
        if (!masks[l](o, i) && layer.weight[o * layer.in + i] != 0.0) ++bad;
      }
    }
  }
  return bad;
}

Gradients compute_gradients(const TinyNet& net, const Dataset& data, std::size_t begin,
                            std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gradients_for(net, data, idx);
}

double mean_loss(const TinyNet& net, const Dataset& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto acts = forward(net, data, idx);
  return softmax_xent(acts.back(), net.layers.back().out, data, idx) /
         static_cast<double>(std::max<std::size_t>(data.size(), 1));
}

double accuracy(const TinyNet& net, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto acts = forward(net, data, idx);
  const std::size_t classes = net.layers.back().out;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const double* z = &acts.back()[s * classes];
    const auto pred = static_cast<int>(std::max_element(z, z + classes) - z);
    correct += pred == data.y[s];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<double> flatten(const std::vector<Layer>& layers) {
  std::vector<double> out;
  for (const Layer& l : layers) {
    out.insert(out.end(), l.weight.begin(), l.weight.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

std::vector<double> parameters(const TinyNet& net) { return flatten(net.layers); }

void set_parameters(TinyNet& net, const std::vector<double>& params) {
  if (params.size() != net.parameter_count()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter vector has the wrong length");
  }
  std::size_t k = 0;
  for (Layer& l : net.layers) {
    for (double& w : l.weight) w = params[k++];
    for (double& b : l.bias) b = params[k++];
  }
}

}  // namespace nmsparse
