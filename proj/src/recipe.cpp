// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#include "nmsparse/recipe.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace nmsparse {

namespace {

[[noreturn]] void reject(const std::string& msg) { throw Error(ErrorCode::InvalidRecipe, msg); }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool is_training(PhaseKind k) {
  return k == PhaseKind::TrainDense || k == PhaseKind::RetrainSparse ||
         k == PhaseKind::FinetuneSparse;
}

using KeyValues = std::vector<std::pair<std::string, std::string>>;

struct RawPhase {
  std::size_t line = 0;
  Phase phase;
  bool has_kind = false;
  KeyValues schedule_keys;
};

std::uint64_t to_u64(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const auto x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    reject(where + ": expected an unsigned integer, got '" + v + "'");
  }
}

double to_double(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    reject(where + ": expected a number, got '" + v + "'");
  }
}

void apply_schedule_key(Schedule& s, const std::string& key, const std::string& value,
                        const std::string& where) {
  if (key == "epochs") {
    s.epochs = to_u64(value, where);
  } else if (key == "batch") {
    s.batch_size = to_u64(value, where);
  } else if (key == "lr") {
    s.lr = to_double(value, where);
  } else if (key == "lr_curve") {
    if (value == "constant") {
      s.curve = LrCurve::Constant;
    } else if (value == "step") {
      s.curve = LrCurve::Step;
    } else if (value == "cosine") {
      s.curve = LrCurve::Cosine;
    } else {
      reject(where + ": lr_curve must be constant, step or cosine");
    }
  } else if (key == "step_epochs") {
    s.step_epochs = to_u64(value, where);
  } else if (key == "gamma") {
    s.gamma = to_double(value, where);
  } else if (key == "momentum") {
    s.momentum = to_double(value, where);
  } else if (key == "weight_decay") {
    s.weight_decay = to_double(value, where);
  } else if (key == "shuffle_seed") {
    s.seed = to_u64(value, where);
  }
}

constexpr std::array kScheduleKeys = {"epochs",   "batch",    "lr",           "lr_curve",
                                      "step_epochs", "gamma", "momentum", "weight_decay",
                                      "shuffle_seed"};

bool is_schedule_key(const std::string& key) {
  return std::find(kScheduleKeys.begin(), kScheduleKeys.end(), key) != kScheduleKeys.end();
}

void set_global(Recipe& r, const std::string& key, const std::string& value,
                const std::string& where) {
  if (key == "name") {
    r.name = value;
  } else if (key == "seed") {
    r.seed = to_u64(value, where);
  } else if (key == "classes") {
    r.data.classes = to_u64(value, where);
  } else if (key == "features") {
    r.data.features = to_u64(value, where);
  } else if (key == "train_per_class") {
    r.data.train_per_class = to_u64(value, where);
  } else if (key == "test_per_class") {
    r.data.test_per_class = to_u64(value, where);
  } else if (key == "separation") {
    r.data.separation = to_double(value, where);
  } else if (key == "spread") {
    r.data.spread = to_double(value, where);
  } else if (key == "data_seed") {
    r.data.seed = to_u64(value, where);
  } else if (key == "hidden") {
    r.hidden.clear();
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) r.hidden.push_back(to_u64(trim(item), where));
  } else if (key == "dtype") {
    const auto f = parse_format(value);
    if (!f) reject(where + ": unknown format '" + value + "'");
    r.dtype = *f;
  } else {
    reject(where + ": unknown key '" + key + "'");
  }
}

void set_phase(RawPhase& raw, const std::string& key, const std::string& value,
               const std::string& where) {
  Phase& p = raw.phase;
  if (key == "kind") {
    const auto k = parse_phase_kind(value);
    if (!k) reject(where + ": unknown phase kind '" + value + "'");
    p.kind = *k;
    raw.has_kind = true;
  } else if (is_schedule_key(key)) {
    raw.schedule_keys.emplace_back(key, value);
  } else if (key == "repeats") {
    p.repeats = value;
  } else if (key == "data_seed") {
    p.data_seed = to_u64(value, where);
  } else if (key == "pattern") {
    const auto pat = parse_pattern(value);
    if (!pat) reject(where + ": bad pattern '" + value + "'");
    p.pattern = *pat;
  } else if (key == "permute") {
    if (value == "off") {
      p.permute = PermuteMode::Off;
    } else if (value == "greedy") {
      p.permute = PermuteMode::Greedy;
    } else if (value == "exhaustive") {
      p.permute = PermuteMode::Exhaustive;
    } else {
      reject(where + ": permute must be off, greedy or exhaustive");
    }
  } else if (key == "method") {
    const auto m = parse_calib_method(value);
    if (!m) reject(where + ": bad calibration method '" + value + "'");
    p.method = *m;
  } else if (key == "granularity") {
    const auto g = parse_granularity(value);
    if (!g) reject(where + ": bad granularity '" + value + "'");
    p.granularity = *g;
  } else {
    reject(where + ": unknown key '" + key + "'");
  }
}

// Keys that only make sense for some phase kinds.
void check_keys_fit(const RawPhase& raw, const std::string& where, const KeyValues& keys) {
  const PhaseKind k = raw.phase.kind;
  for (const auto& [key, value] : keys) {
    bool ok = true;
    if (is_schedule_key(key) || key == "data_seed") ok = is_training(k);
    if (key == "repeats") ok = k == PhaseKind::RetrainSparse;
    if (key == "pattern" || key == "permute") ok = k == PhaseKind::Prune;
    if (key == "method" || key == "granularity") ok = k == PhaseKind::Calibrate;
    if (!ok) {
      reject(where + ": key '" + key + "' does not apply to a " + std::string(to_string(k)) +
             " phase");
    }
  }
}

void set_masked(std::vector<double>& w, const Mask& mask) {
  for (std::size_t o = 0; o < mask.rows(); ++o) {
    for (std::size_t i = 0; i < mask.cols(); ++i) {
      if (!mask(o, i)) w[o * mask.cols() + i] = 0.0;
    }
  }
}

double zero_fraction(const TinyNet& net) {
  std::size_t zeros = 0, total = 0;
  for (const Layer& l : net.layers) {
    for (double w : l.weight) zeros += w == 0.0;
    total += l.weight.size();
  }
  return total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
}

}  // namespace

std::string_view to_string(PhaseKind k) {
  switch (k) {
    case PhaseKind::TrainDense: return "train_dense";
    case PhaseKind::Prune: return "prune";
    case PhaseKind::RetrainSparse: return "retrain_sparse";
    case PhaseKind::FinetuneSparse: return "finetune_sparse";
    case PhaseKind::Calibrate: return "calibrate";
  }
  return "?";
}

std::optional<PhaseKind> parse_phase_kind(std::string_view text) {
  for (PhaseKind k : {PhaseKind::TrainDense, PhaseKind::Prune, PhaseKind::RetrainSparse,
                      PhaseKind::FinetuneSparse, PhaseKind::Calibrate}) {
    if (text == to_string(k)) return k;
  }
  return std::nullopt;
}

std::vector<std::size_t> Recipe::layer_sizes() const {
  std::vector<std::size_t> sizes{data.features};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(data.classes);
  return sizes;
}

Recipe parse_recipe(std::string_view text) {
  Recipe recipe;
  std::vector<RawPhase> raws;
  std::vector<KeyValues> raw_keys;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "line " + std::to_string(lineno);
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') reject(where + ": unterminated section header");
      const std::string inner = trim(std::string_view(body).substr(1, body.size() - 2));
      if (!inner.starts_with("phase ") || trim(inner.substr(6)).empty()) {
        reject(where + ": section must be [phase NAME]");
      }
      RawPhase raw;
      raw.line = lineno;
      raw.phase.name = trim(inner.substr(6));
      raws.push_back(std::move(raw));
      raw_keys.emplace_back();
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) reject(where + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty() || value.empty()) reject(where + ": empty key or value");
    if (raws.empty()) {
      set_global(recipe, key, value, where);
    } else {
      set_phase(raws.back(), key, value, where);
      raw_keys.back().emplace_back(key, value);
    }
  }

  // Resolve schedules: dense and finetune phases start from defaults seeded
  // by the recipe; retrain phases start from the phase they repeat.
  std::map<std::string, Schedule> dense_schedules;
  for (std::size_t i = 0; i < raws.size(); ++i) {
    RawPhase& raw = raws[i];
    const std::string where = "phase '" + raw.phase.name + "' (line " + std::to_string(raw.line) + ")";
    if (!raw.has_kind) reject(where + ": missing kind");
    check_keys_fit(raw, where, raw_keys[i]);
    const PhaseKind k = raw.phase.kind;
    if (!is_training(k)) continue;
    Schedule s;
    s.seed = recipe.seed;
    if (k == PhaseKind::RetrainSparse) {
      const auto it = dense_schedules.find(raw.phase.repeats);
      if (it != dense_schedules.end()) s = it->second;
    }
    for (const auto& [key, value] : raw.schedule_keys) apply_schedule_key(s, key, value, where);
    raw.phase.schedule = s;
    if (k == PhaseKind::TrainDense) dense_schedules[raw.phase.name] = s;
  }
  for (RawPhase& raw : raws) recipe.phases.push_back(std::move(raw.phase));
  validate_recipe(recipe);
  return recipe;
}

void validate_recipe(const Recipe& recipe) {
  const auto& ph = recipe.phases;
  if (ph.empty()) reject("recipe has no phases");
  if (recipe.data.classes < 2 || recipe.data.features == 0) {
    reject("the task needs at least 2 classes and 1 feature");
  }
  for (std::size_t h : recipe.hidden) {
    if (h == 0) reject("hidden layer sizes must be positive");
  }
  for (std::size_t i = 0; i < ph.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (ph[i].name == ph[j].name) reject("duplicate phase name '" + ph[i].name + "'");
    }
  }

  std::size_t prune_at = ph.size();
  for (std::size_t i = 0; i < ph.size(); ++i) {
    if (ph[i].kind != PhaseKind::Prune) continue;
    if (prune_at != ph.size()) reject("prune appears more than once (phase '" + ph[i].name + "')");
    prune_at = i;
  }
  if (prune_at == ph.size()) reject("recipe has no prune phase");

  std::vector<std::size_t> dense;
  std::size_t last_training = 0;
  bool any_retrain = false, any_finetune = false;
  std::size_t last_repeated = 0;
  bool repeated_any = false;
  for (std::size_t i = 0; i < ph.size(); ++i) {
    const Phase& p = ph[i];
    const std::string who = "phase '" + p.name + "' (" + std::string(to_string(p.kind)) + ")";
    const bool after = i > prune_at;
    if (is_training(p.kind)) {
      if (!p.schedule) reject(who + " has no schedule");
      if (p.schedule->epochs == 0 || p.schedule->batch_size == 0 || !(p.schedule->lr > 0)) {
        reject(who + " needs positive epochs, batch and lr");
      }
      last_training = i;
    }
    switch (p.kind) {
      case PhaseKind::TrainDense:
        if (after) reject(who + " comes after prune; dense training must precede pruning");
        dense.push_back(i);
        break;
      case PhaseKind::Prune:
        if (dense.empty()) reject(who + " has no trained dense phase before it");
        break;
      case PhaseKind::RetrainSparse: {
        if (!after) reject(who + " comes before prune");
        if (any_finetune) reject(who + " follows a finetune_sparse phase");
        const auto it = std::find_if(dense.begin(), dense.end(),
                                     [&](std::size_t d) { return ph[d].name == p.repeats; });
        if (p.repeats.empty() || it == dense.end()) {
          reject(who + " must repeat a train_dense phase (repeats = NAME)");
        }
        if (repeated_any && *it <= last_repeated) {
          reject(who + " repeats '" + p.repeats + "' out of order or twice");
        }
        if (p.schedule->descriptor() != ph[*it].schedule->descriptor()) {
          reject(who + " must use the same optimizer and schedule as '" + p.repeats +
                 "': " + p.schedule->descriptor() + " vs " + ph[*it].schedule->descriptor());
        }
        repeated_any = true;
        last_repeated = *it;
        any_retrain = true;
        break;
      }
      case PhaseKind::FinetuneSparse:
        if (!after) reject(who + " comes before prune");
        any_finetune = true;
        break;
      case PhaseKind::Calibrate:
        if (!after) reject(who + " comes before prune; calibrate the pruned network");
        break;
    }
  }
  if (!any_retrain) reject("recipe has no retrain_sparse phase after prune");
  for (std::size_t i = 0; i < ph.size(); ++i) {
    if (ph[i].kind == PhaseKind::Calibrate && i < last_training) {
      reject("phase '" + ph[i].name + "' (calibrate) must follow every training phase");
    }
  }
}

std::vector<LayerManifest> manifests(const TinyNet& net, const NumericFormat& dtype) {
  std::vector<LayerManifest> out;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    LayerManifest m;
    m.name = "fc" + std::to_string(l);
    m.kind = LayerKind::FullyConnected;
    m.gemm_k = net.layers[l].in;
    m.in_channels = net.layers[l].in;
    m.dtype = dtype;
    out.push_back(m);
  }
  return out;
}

RecipeReport run_recipe(const Recipe& recipe) {
  return run_recipe(recipe, TinyNet::create(recipe.layer_sizes(), recipe.seed));
}

RecipeReport run_recipe(const Recipe& recipe, TinyNet net) {
  validate_recipe(recipe);
  if (net.layers.empty() || net.layers.front().in != recipe.data.features ||
      net.layers.back().out != recipe.data.classes) {
    throw Error(ErrorCode::ShapeMismatch, "net does not match the recipe's task");
  }
  RecipeReport report;
  report.name = recipe.name;
  for (const Layer& l : net.layers) report.masks.emplace_back(l.out, l.in, true);

  std::map<std::uint64_t, BlobTask> tasks;
  auto task_for = [&](std::uint64_t seed) -> const BlobTask& {
    if (seed == 0) seed = recipe.data.seed;
    auto it = tasks.find(seed);
    if (it == tasks.end()) {
      BlobSpec spec = recipe.data;
      spec.seed = seed;
      it = tasks.emplace(seed, make_blobs(spec)).first;
    }
    return it->second;
  };
  std::map<std::string, std::uint64_t> phase_seed;
  const BlobTask* current = &task_for(0);
  std::vector<std::size_t> pruned;
  NMPattern pattern{2, 4};

  for (const Phase& p : recipe.phases) {
    PhaseReport pr;
    pr.name = p.name;
    pr.kind = p.kind;
    switch (p.kind) {
      case PhaseKind::TrainDense:
      case PhaseKind::RetrainSparse:
      case PhaseKind::FinetuneSparse: {
        std::uint64_t seed = p.data_seed;
        if (p.kind == PhaseKind::RetrainSparse) {
          seed = phase_seed.at(p.repeats);
          pr.paired_schedule = std::find_if(recipe.phases.begin(), recipe.phases.end(),
                                            [&](const Phase& q) { return q.name == p.repeats; })
                                   ->schedule->descriptor();
        }
        phase_seed[p.name] = seed;
        current = &task_for(seed);
        pr.schedule = p.schedule->descriptor();
        TrainLog log;
        if (p.kind == PhaseKind::TrainDense) {
          net = train(std::move(net), current->train, *p.schedule, &log);
        } else {
          std::size_t worst = 0;
          const auto& masks = report.masks;
          net = retrain_sparse(std::move(net), masks, current->train, *p.schedule, &log,
                               [&](const TinyNet& n) { worst = std::max(worst, mask_violations(n, masks)); });
          pr.mask_violations = worst;
        }
        pr.train_loss = log.epoch_loss.empty() ? mean_loss(net, current->train) : log.epoch_loss.back();
        pr.train_accuracy = accuracy(net, current->train);
        pr.test_accuracy = accuracy(net, current->test);
        if (p.kind == PhaseKind::TrainDense) {
          report.dense_test_accuracy = pr.test_accuracy;
        }
        report.final_test_accuracy = pr.test_accuracy;
        break;
      }
      case PhaseKind::Prune: {
        pattern = p.pattern;
        const auto mf = manifests(net, recipe.dtype);
        std::vector<bool> take(net.layers.size(), false);
        for (std::size_t l = 0; l < mf.size(); ++l) {
          const Eligibility e = eligible(mf[l]);
          take[l] = e.eligible && net.layers[l].in % static_cast<std::size_t>(pattern.m) == 0;
          pr.notes.push_back(mf[l].name + ": " + (take[l] ? "pruned" : "kept dense (" + e.reason + ")"));
        }
        if (p.permute != PermuteMode::Off) {
          SearchBudget budget;
          budget.mode = p.permute == PermuteMode::Greedy ? SearchMode::Greedy : SearchMode::Exhaustive;
          budget.seed = recipe.seed;
          for (std::size_t l = 1; l < net.layers.size(); ++l) {
            if (!take[l]) continue;
            Layer& layer = net.layers[l];
            const PermutationSearch found = find_permutation(layer.weight_matrix(), pattern, budget);
            if (found.permutation.is_identity()) continue;
            const Permutation& perm = found.permutation;
            std::vector<double> w(layer.weight.size());
            for (std::size_t o = 0; o < layer.out; ++o) {
              for (std::size_t j = 0; j < layer.in; ++j) w[o * layer.in + j] = layer.weight[o * layer.in + perm[j]];
            }
            layer.weight = std::move(w);
            Layer& producer = net.layers[l - 1];
            std::vector<double> pw(producer.weight.size());
            for (std::size_t j = 0; j < producer.out; ++j) {
              std::copy_n(&producer.weight[perm[j] * producer.in], producer.in, &pw[j * producer.in]);
            }
            producer.weight = std::move(pw);
            producer.bias = propagate_permutation(producer.bias, perm);
            pr.notes.push_back(mf[l].name + ": columns permuted, retained " +
                               std::to_string(found.baseline_retained) + " -> " +
                               std::to_string(found.result.retained_magnitude));
          }
        }
        double kept = 0, total = 0;
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
          if (!take[l]) continue;
          Layer& layer = net.layers[l];
          const PruneResult res = prune_magnitude(layer.weight_matrix(), pattern);
          report.masks[l] = res.mask;
          set_masked(layer.weight, res.mask);
          kept += res.retained_magnitude;
          total += res.retained_magnitude + res.lost_magnitude;
          ++pr.pruned_layers;
          pruned.push_back(l);
        }
        pr.retained_fraction = total > 0 ? kept / total : 1.0;
        pr.train_accuracy = accuracy(net, current->train);
        pr.test_accuracy = accuracy(net, current->test);
        break;
      }
      case PhaseKind::Calibrate: {
        TinyNet fake = net;
        pr.int8_conforming = true;
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
          const DenseMatrix w = net.layers[l].weight_matrix();
          const std::vector<DenseMatrix> stream{w};
          const ScaleSet s = calibrate(stream, p.method, p.granularity);
          const DenseMatrix q = quantize(w, s);
          if (std::find(pruned.begin(), pruned.end(), l) != pruned.end() &&
              !check_conformance(q, pattern)) {
            pr.int8_conforming = false;
          }
          const DenseMatrix back = dequantize(q, s);
          fake.layers[l].weight.assign(back.data().begin(), back.data().end());
        }
        pr.train_accuracy = accuracy(fake, current->train);
        pr.test_accuracy = accuracy(fake, current->test);
        break;
      }
    }
    pr.sparsity = zero_fraction(net);
    report.phases.push_back(std::move(pr));
  }
  report.net = std::move(net);
  return report;
}

std::string RecipeReport::to_text() const {
  std::ostringstream os;
  char buf[256];
  os << "recipe " << name << '\n';
  for (const PhaseReport& p : phases) {
    std::snprintf(buf, sizeof buf, "phase %s kind=%s train_acc=%.4f test_acc=%.4f sparsity=%.4f",
                  p.name.c_str(), std::string(to_string(p.kind)).c_str(), p.train_accuracy,
                  p.test_accuracy, p.sparsity);
    os << buf;
    if (!p.schedule.empty()) {
      std::snprintf(buf, sizeof buf, " train_loss=%.6f", p.train_loss);
      os << buf;
    }
    if (p.kind == PhaseKind::RetrainSparse || p.kind == PhaseKind::FinetuneSparse) {
      os << " mask_violations=" << p.mask_violations;
    }
    if (p.kind == PhaseKind::Prune) {
      std::snprintf(buf, sizeof buf, " pruned_layers=%zu retained_fraction=%.4f", p.pruned_layers,
                    p.retained_fraction);
      os << buf;
    }
    if (p.kind == PhaseKind::Calibrate) os << " int8_conforming=" << (p.int8_conforming ? "yes" : "no");
    os << '\n';
    if (!p.schedule.empty()) os << "  schedule: " << p.schedule << '\n';
    if (!p.paired_schedule.empty()) {
      os << "  schedule_matches_dense: " << (p.paired_schedule == p.schedule ? "yes" : "no") << '\n';
    }
    for (const std::string& n : p.notes) os << "  " << n << '\n';
  }
  std::snprintf(buf, sizeof buf, "summary dense_test_acc=%.4f final_test_acc=%.4f gap_points=%.2f\n",
                dense_test_accuracy, final_test_accuracy,
                100.0 * (dense_test_accuracy - final_test_accuracy));
  os << buf;
  return os.str();
}

}  // namespace nmsparse
