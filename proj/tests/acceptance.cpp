// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails or runs past its time limit.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "nmsparse/codec.hpp"
#include "nmsparse/pruner.hpp"
#include "nmsparse/quant.hpp"
#include "nmsparse/random.hpp"
#include "nmsparse/recipe.hpp"
#include "nmsparse/spmm.hpp"
#include "nmsparse/tinynet.hpp"

using namespace nmsparse;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Collects the first failure message; later failures are ignored.
class Checker {
 public:
  bool ok() const { return failure_.empty(); }
  void expect(bool cond, const std::function<std::string()>& what) {
    if (!cond && failure_.empty()) failure_ = what();
  }
  Outcome done(std::string detail) const {
    return ok() ? Outcome{true, std::move(detail)} : Outcome{false, failure_};
  }

 private:
  std::string failure_;
};

template <typename... Args>
std::string fmt(Args&&... args) {
  std::ostringstream os;
  os.precision(10);
  (os << ... << args);
  return os.str();
}

const ElementType kAllTypes[] = {ElementType::FP32, ElementType::TF32, ElementType::FP16,
                                 ElementType::BF16, ElementType::INT8, ElementType::INT32};

DenseMatrix fp16_matrix(std::size_t r, std::size_t c, Rng& rng) {
  return random_dense(r, c, ElementType::FP16, rng);
}

DenseMatrix small_integers(std::size_t r, std::size_t c, Rng& rng, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  std::vector<double> v(r * c);
  for (double& x : v) x = d(rng);
  return DenseMatrix(r, c, ElementType::FP32, std::move(v));
}

// Best retained magnitude over every n-subset of one group.
double best_subset(std::span<const double> g, int n) {
  const auto m = static_cast<unsigned>(g.size());
  double best = -1;
  for (unsigned bits = 0; bits < (1u << m); ++bits) {
    if (std::popcount(bits) != n) continue;
    double s = 0;
    for (unsigned i = 0; i < m; ++i) {
      if (bits >> i & 1u) s += std::fabs(g[i]);
    }
    best = std::max(best, s);
  }
  return best;
}

// ---------------------------------------------------------------------------

Outcome storage_arithmetic() {
  Checker ck;
  const std::uint64_t fp16 = storage_bits(1, 4, {2, 4}, ElementType::FP16);
  const std::uint64_t int8 = storage_bits(1, 4, {2, 4}, ElementType::INT8);
  ck.expect(fp16 == 36, [&] { return fmt("FP16 2:4 group uses ", fp16, " bits"); });
  ck.expect(int8 == 20, [&] { return fmt("INT8 2:4 group uses ", int8, " bits"); });
  const double fp16_saving = 1.0 - static_cast<double>(fp16) / 64.0;
  const double int8_saving = 1.0 - static_cast<double>(int8) / 32.0;
  ck.expect(fp16_saving == 0.4375, [&] { return fmt("FP16 saving ", fp16_saving); });
  ck.expect(int8_saving == 0.375, [&] { return fmt("INT8 saving ", int8_saving); });

  // the same numbers from compressed objects of several shapes
  Rng rng(1);
  for (std::size_t rows : {1, 3, 64}) {
    for (std::size_t groups : {1, 5, 64}) {
      const std::size_t cols = 4 * groups;
      for (ElementType t : {ElementType::FP16, ElementType::INT8}) {
        const SparseNM s = compress(random_conforming(rows, cols, {2, 4}, t, rng), {2, 4});
        const std::uint64_t per_group = t == ElementType::FP16 ? 36 : 20;
        ck.expect(storage_bits(s) == rows * groups * per_group,
                  [&] { return fmt(rows, "x", cols, " reports ", storage_bits(s), " bits"); });
        ck.expect(dense_bits(s) == rows * cols * static_cast<std::uint64_t>(bit_width(t)),
                  [&] { return fmt(rows, "x", cols, " dense ", dense_bits(s), " bits"); });
      }
    }
  }
  return ck.done(fmt("FP16 36/64 bits (saves ", fp16_saving * 100, "%), INT8 20/32 bits (saves ",
                     int8_saving * 100, "%)"));
}

Outcome codec_roundtrip() {
  Checker ck;
  Rng rng(2);
  std::uniform_int_distribution<std::size_t> rows_dist(1, 128);
  const NMPattern patterns[] = {{2, 4}, {1, 2}};
  std::size_t cases = 0, largest = 0;
  for (int t = 0; t < 10000 && ck.ok(); ++t) {
    const ElementType type = kAllTypes[t % 6];
    const NMPattern p = patterns[(t / 6) % 2];
    const auto m = static_cast<std::size_t>(p.m);
    const std::size_t rows = rows_dist(rng);
    const std::size_t cols = m * std::uniform_int_distribution<std::size_t>(1, 256 / m)(rng);
    const DenseMatrix a = random_conforming(rows, cols, p, type, rng);
    const SparseNM s = compress(a, p);
    ck.expect(bit_equal(decompress(s), a), [&] {
      return fmt("case ", t, ": ", rows, "x", cols, " ", to_string(type), " ", p.name(),
                 " does not roundtrip");
    });
    ck.expect(is_canonical(s), [&] { return fmt("case ", t, ": padding not canonical"); });
    ck.expect(storage_bits(s) == storage_bits(rows, cols, p, type),
              [&] { return fmt("case ", t, ": storage accounting"); });
    ++cases;
    largest = std::max(largest, rows * cols);
  }
  return ck.done(fmt(cases, " matrices, 6 element types, 2:4 and 1:2, largest ", largest,
                     " elements"));
}

bool within_ulps(const DenseMatrix& x, const DenseMatrix& y, std::size_t k, AccumulatorType acc,
                 double* worst) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
  bool ok = true;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x.data()[i], b = y.data()[i];
    const double ulp = accumulator_ulp(std::max(std::fabs(a), std::fabs(b)), acc);
    const double err = std::fabs(a - b) / ulp;
    *worst = std::max(*worst, err / static_cast<double>(k));
    ok = ok && err <= 2.0 * static_cast<double>(k);
  }
  return ok;
}

Outcome sparse_gemm_equivalence() {
  Checker ck;
  Rng rng(3);
  const NumericFormat formats[] = {{ElementType::INT8, AccumulatorType::INT32},
                                   {ElementType::FP16, AccumulatorType::FP32},
                                   {ElementType::BF16, AccumulatorType::FP32},
                                   {ElementType::FP16, AccumulatorType::FP16},
                                   {ElementType::TF32, AccumulatorType::FP32}};
  const NMPattern patterns[] = {{2, 4}, {1, 2}};
  std::uniform_int_distribution<std::size_t> dim(1, 48);
  std::uniform_int_distribution<std::size_t> depth(1, 8);
  std::size_t int_cases = 0, float_cases = 0;
  double worst = 0;  // largest float error in units of K ulp
  for (int t = 0; t < 1000 && ck.ok(); ++t) {
    const NumericFormat& f = formats[t % 5];
    const NMPattern p = patterns[(t / 5) % 2];
    const GemmShape shape{dim(rng), dim(rng), sparse_k_multiple(f.input) * depth(rng)};
    const DenseMatrix a = random_conforming(shape.m, shape.k, p, f.input, rng);
    const DenseMatrix b = random_dense(shape.k, shape.n, f.input, rng, 0.5);
    SpmmStats stats;
    const DenseMatrix c = spmm(compress(a, p), b, f, SpmmPlan::for_shape(shape, p.m), &stats);
    const DenseMatrix ref = gemm_dense(a, b, f);
    const std::uint64_t expected_macs = shape.m * shape.n * shape.k / 2;
    ck.expect(stats.multiply_adds == expected_macs, [&] {
      return fmt("case ", t, ": ", stats.multiply_adds, " multiply-adds, expected ",
                 expected_macs);
    });
    if (f.input == ElementType::INT8) {
      ck.expect(bit_equal(c, ref), [&] { return fmt("case ", t, ": INT8 result differs"); });
      ++int_cases;
    } else {
      ck.expect(within_ulps(c, ref, shape.k, f.accumulator, &worst), [&] {
        return fmt("case ", t, ": ", f.name(), " beyond 2K ulp");
      });
      ++float_cases;
    }
  }
  return ck.done(fmt(int_cases, " INT8 cases bit-equal, ", float_cases,
                     " float cases worst error ", worst, " K ulp, MACs = MNK/2"));
}

// All 4x4 masks with exactly two kept per row and per column.
std::vector<unsigned> transposable_oracle_masks() {
  std::vector<unsigned> out;
  for (unsigned bits = 0; bits < (1u << 16); ++bits) {
    bool ok = true;
    for (unsigned i = 0; i < 4 && ok; ++i) {
      int row = 0, col = 0;
      for (unsigned j = 0; j < 4; ++j) {
        row += bits >> (i * 4 + j) & 1u;
        col += bits >> (j * 4 + i) & 1u;
      }
      ok = row == 2 && col == 2;
    }
    if (ok) out.push_back(bits);
  }
  return out;
}

Outcome mask_optimality() {
  Checker ck;
  Rng rng(4);
  // 10,000 groups as 100 matrices of 25 rows x 4 groups; FP16 values sum exactly
  // in double, and the small-integer half has many ties
  std::size_t groups = 0;
  for (int t = 0; t < 100 && ck.ok(); ++t) {
    const DenseMatrix w = t % 2 ? fp16_matrix(25, 16, rng) : small_integers(25, 16, rng, -4, 4);
    const PruneResult res = prune_magnitude(w, {2, 4});
    double total = 0;
    for (std::size_t r = 0; r < w.rows(); ++r) {
      for (std::size_t g = 0; g < w.cols(); g += 4) {
        double kept = 0;
        int count = 0;
        for (std::size_t c = g; c < g + 4; ++c) {
          if (res.mask(r, c)) {
            kept += std::fabs(w(r, c));
            ++count;
          }
        }
        const double best = best_subset(w.row(r).subspan(g, 4), 2);
        ck.expect(count == 2 && kept == best, [&] {
          return fmt("matrix ", t, " row ", r, " group ", g / 4, ": kept ", kept, " of best ",
                     best);
        });
        total += best;
        ++groups;
      }
    }
    ck.expect(res.retained_magnitude == total,
              [&] { return fmt("matrix ", t, ": total ", res.retained_magnitude, " vs ", total); });
  }

  const std::vector<unsigned> candidates = transposable_oracle_masks();
  ck.expect(candidates.size() == 90, [&] { return fmt(candidates.size(), " candidates"); });
  std::size_t tiles = 0;
  for (int t = 0; t < 1000 && ck.ok(); ++t) {
    const DenseMatrix w = t % 2 ? fp16_matrix(4, 4, rng) : small_integers(4, 4, rng, -3, 3);
    const PruneResult res = find_transposable_mask(w, TransposableMode::Exhaustive);
    double best = 0;
    for (unsigned bits : candidates) {
      double s = 0;
      for (unsigned e = 0; e < 16; ++e) {
        if (bits >> e & 1u) s += std::fabs(w(e / 4, e % 4));
      }
      best = std::max(best, s);
    }
    ck.expect(mask_conforms(res.mask, {2, 4}, Axis::Rows) &&
                  mask_conforms(res.mask, {2, 4}, Axis::Cols),
              [&] { return fmt("tile ", t, ": mask not transposable"); });
    ck.expect(res.retained_magnitude == best,
              [&] { return fmt("tile ", t, ": ", res.retained_magnitude, " vs best ", best); });
    ++tiles;
  }
  return ck.done(fmt(groups, " groups match C(4,2) enumeration, ", tiles,
                     " tiles match the 90-candidate enumeration"));
}

double retained_after(const DenseMatrix& w, const std::vector<std::size_t>& perm) {
  double total = 0;
  std::vector<double> g(4);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c0 = 0; c0 < w.cols(); c0 += 4) {
      for (std::size_t i = 0; i < 4; ++i) g[i] = w(r, perm[c0 + i]);
      total += best_subset(g, 2);
    }
  }
  return total;
}

Outcome permutation_search() {
  Checker ck;
  Rng rng(5);
  ck.expect(partition_count(8, 4) == 35, [] { return std::string("partition count"); });
  const int enumerated = 50;
  for (int t = 0; t < enumerated && ck.ok(); ++t) {
    const DenseMatrix w = small_integers(8, 8, rng, -50, 50);
    const PermutationSearch s = find_permutation(w, {2, 4}, {SearchMode::Exhaustive});
    ck.expect(s.evaluations == 35,
              [&] { return fmt("matrix ", t, ": ", s.evaluations, " partitions visited"); });
    std::vector<std::size_t> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 0;
    do {
      best = std::max(best, retained_after(w, perm));
    } while (std::next_permutation(perm.begin(), perm.end()));
    ck.expect(s.result.retained_magnitude == best, [&] {
      return fmt("matrix ", t, ": exhaustive ", s.result.retained_magnitude, ", 8! best ", best);
    });
    const std::vector<std::size_t> found(s.permutation.data().begin(), s.permutation.data().end());
    ck.expect(retained_after(w, found) == best,
              [&] { return fmt("matrix ", t, ": returned permutation does not reach the best"); });
  }

  std::student_t_distribution<double> heavy(2.0);
  int improved = 0;
  const int trials = 1000;
  for (int t = 0; t < trials && ck.ok(); ++t) {
    std::vector<double> v(64);
    for (double& x : v) x = heavy(rng);
    const DenseMatrix w = DenseMatrix::rounded(8, 8, ElementType::FP16, v);
    SearchBudget budget;
    budget.seed = static_cast<std::uint64_t>(t);
    const PermutationSearch s = find_permutation(w, {2, 4}, budget);
    const double identity = prune_magnitude(w, {2, 4}).retained_magnitude;
    ck.expect(s.result.retained_magnitude >= identity, [&] {
      return fmt("matrix ", t, ": greedy ", s.result.retained_magnitude, " < identity ",
                 identity);
    });
    improved += s.result.retained_magnitude > identity ? 1 : 0;
  }
  return ck.done(fmt(enumerated, " matrices: 35 partitions, equal to 8! enumeration; greedy >= "
                     "identity on ", trials, " matrices (strictly better on ", improved, ")"));
}

DenseMatrix relu(const DenseMatrix& h, ElementType store) {
  std::vector<double> v(h.data().begin(), h.data().end());
  for (double& x : v) x = std::max(x, 0.0);
  return DenseMatrix::rounded(h.rows(), h.cols(), store, v);
}

Outcome permutation_correctness() {
  Checker ck;
  Rng rng(6);
  const std::size_t in = 64, hidden = 32, out = 16, batch = 8;
  const int trials = 200;
  for (int t = 0; t < trials && ck.ok(); ++t) {
    const bool integer = t % 2 == 0;
    const NumericFormat f = integer ? NumericFormat{ElementType::INT8, AccumulatorType::INT32}
                                    : NumericFormat{ElementType::FP16, AccumulatorType::FP32};
    const DenseMatrix w1 = random_dense(hidden, in, f.input, rng, 0.2);
    const DenseMatrix w2 = random_dense(out, hidden, f.input, rng, 0.2);
    const DenseMatrix x = random_dense(in, batch, f.input, rng);
    // the permutation a pruning search would apply to the consumer's columns
    SearchBudget budget;
    budget.seed = static_cast<std::uint64_t>(t);
    budget.restarts = 0;
    const Permutation p = find_permutation(w2, {2, 4}, budget).permutation;
    ck.expect(!p.is_identity(), [&] { return fmt("trial ", t, ": search kept the identity"); });

    const DenseMatrix h = relu(gemm_dense(w1, x, f), f.input);
    const DenseMatrix y = gemm_dense(w2, h, f);
    const DenseMatrix ph = relu(gemm_dense(propagate_permutation(w1, p), x, f), f.input);
    const DenseMatrix py = gemm_dense(permute_columns(w2, p), ph, f);
    if (integer) {
      ck.expect(bit_equal(py, y), [&] { return fmt("trial ", t, ": INT8 output changed"); });
      continue;
    }
    for (std::size_t i = 0; i < out; ++i) {
      for (std::size_t j = 0; j < batch; ++j) {
        double mass = 0;
        for (std::size_t k = 0; k < hidden; ++k) mass += std::fabs(w2(i, k) * h(k, j));
        const double bound = static_cast<double>(hidden) * accumulator_ulp(mass, f.accumulator);
        ck.expect(std::fabs(y(i, j) - py(i, j)) <= bound, [&] {
          return fmt("trial ", t, ": output (", i, ",", j, ") moved by ",
                     std::fabs(y(i, j) - py(i, j)));
        });
      }
    }
  }
  return ck.done(fmt(trials / 2, " INT8 networks bit-exact, ", trials / 2,
                     " FP16 networks within K ulp of the absolute sum"));
}

constexpr const char* kTrainPruneRetrain = R"(
name = train-prune-retrain
seed = 1
classes = 4
[phase dense]
kind = train_dense
epochs = 20
lr = 0.05
[phase prune]
kind = prune
[phase retrain]
kind = retrain_sparse
repeats = dense
)";

Outcome workflow_demo() {
  Checker ck;
  const Recipe recipe = parse_recipe(kTrainPruneRetrain);
  const RecipeReport r = run_recipe(recipe);
  ck.expect(r.phases.size() == 3, [&] { return fmt(r.phases.size(), " phases"); });
  if (!ck.ok()) return ck.done("");
  const PhaseReport& retrain = r.phases[2];
  const double gap = (r.dense_test_accuracy - r.final_test_accuracy) * 100.0;
  ck.expect(gap <= 1.0, [&] { return fmt("accuracy gap ", gap, " points"); });
  ck.expect(retrain.mask_violations == 0,
            [&] { return fmt(retrain.mask_violations, " masked weights became nonzero"); });
  ck.expect(retrain.schedule == r.phases[0].schedule && !retrain.schedule.empty(), [&] {
    return fmt("retrain schedule '", retrain.schedule, "' differs from '", r.phases[0].schedule,
               "'");
  });
  for (const Layer& l : r.net.layers) {
    ck.expect(check_conformance(l.weight_matrix(), {2, 4}),
              [&] { return std::string("final weights are not 2:4"); });
  }
  return ck.done(fmt("dense ", r.dense_test_accuracy * 100, "%, final ",
                     r.final_test_accuracy * 100, "%, gap ", gap,
                     " points, 0 mask violations, schedule ", retrain.schedule));
}

// Mean cross-entropy of an MLP with ReLU hidden layers, written out directly.
// Records every hidden pre-activation into *pre when given.
double loss_oracle(const TinyNet& net, const Dataset& d, std::vector<double>* pre = nullptr) {
  double total = 0;
  for (std::size_t s = 0; s < d.size(); ++s) {
    std::vector<double> a(d.x.begin() + static_cast<std::ptrdiff_t>(s * d.features),
                          d.x.begin() + static_cast<std::ptrdiff_t>((s + 1) * d.features));
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
      const Layer& l = net.layers[li];
      std::vector<double> z(l.out);
      for (std::size_t o = 0; o < l.out; ++o) {
        z[o] = l.bias[o];
        for (std::size_t i = 0; i < l.in; ++i) z[o] += l.weight[o * l.in + i] * a[i];
      }
      if (li + 1 < net.layers.size()) {
        if (pre) pre->insert(pre->end(), z.begin(), z.end());
        for (double& v : z) v = std::max(v, 0.0);
      }
      a = std::move(z);
    }
    const double zmax = *std::max_element(a.begin(), a.end());
    double sum = 0;
    for (double v : a) sum += std::exp(v - zmax);
    total += zmax + std::log(sum) - a[static_cast<std::size_t>(d.y[s])];
  }
  return total / static_cast<double>(d.size());
}

Outcome gradient_check() {
  Checker ck;
  Rng rng(8);
  std::normal_distribution<double> normal(0, 1);
  std::uniform_int_distribution<std::size_t> width(2, 6);
  double worst = 0;
  std::size_t params = 0;
  const int nets = 20;
  for (int t = 0; t < nets && ck.ok(); ++t) {
    std::vector<std::size_t> sizes{width(rng)};
    const std::size_t hidden_layers = 1 + static_cast<std::size_t>(t % 2);
    for (std::size_t h = 0; h < hidden_layers; ++h) sizes.push_back(width(rng));
    const std::size_t classes = 2 + static_cast<std::size_t>(t % 3);
    sizes.push_back(classes);
    const TinyNet net = TinyNet::create(sizes, 200 + static_cast<std::uint64_t>(t));
    // central differences are meaningless across a ReLU kink, so only keep
    // samples whose hidden pre-activations are all away from zero
    Dataset d{sizes[0], classes, {}, {}};
    while (d.size() < 8) {
      Dataset one{sizes[0], classes, {}, {0}};
      for (std::size_t i = 0; i < sizes[0]; ++i) one.x.push_back(normal(rng));
      std::vector<double> pre;
      loss_oracle(net, one, &pre);
      if (std::any_of(pre.begin(), pre.end(), [](double z) { return std::fabs(z) < 0.05; })) {
        continue;
      }
      d.x.insert(d.x.end(), one.x.begin(), one.x.end());
      d.y.push_back(static_cast<int>(d.size() % classes));
    }
    const Gradients g = compute_gradients(net, d, 0, d.size());
    const std::vector<double> analytic = flatten(g.grads);
    const std::vector<double> p = parameters(net);
    const double h = 1e-3;
    for (std::size_t i = 0; i < p.size(); ++i) {
      TinyNet probe = net;
      std::vector<double> q = p;
      q[i] = p[i] + h;
      set_parameters(probe, q);
      const double up = loss_oracle(probe, d);
      q[i] = p[i] - h;
      set_parameters(probe, q);
      const double numeric = (up - loss_oracle(probe, d)) / (2 * h);
      const double scale = std::max(std::fabs(numeric), std::fabs(analytic[i]));
      // a parameter behind a dead unit has both gradients at zero
      const double rel = scale < 1e-9 ? 0.0 : std::fabs(numeric - analytic[i]) / scale;
      worst = std::max(worst, rel);
      ck.expect(rel <= 1e-4, [&] {
        return fmt("net ", t, " parameter ", i, ": analytic ", analytic[i], ", numeric ", numeric);
      });
    }
    params += p.size();
  }
  return ck.done(fmt(nets, " nets, ", params, " parameters, worst relative error ", worst));
}

Outcome bench_trend() {
  Checker ck;
  const std::vector<GemmShape> sizes{{128, 128, 64}, {128, 128, 1024}, {128, 128, 2048}};
  const BenchReport r = bench(sizes, {ElementType::FP16, AccumulatorType::FP32}, 31, 1);
  ck.expect(r.rows.size() == sizes.size(), [&] { return fmt(r.rows.size(), " rows"); });
  if (!ck.ok()) return ck.done("");
  for (const BenchRow& row : r.rows) {
    ck.expect(row.flops_ratio == 2.0,
              [&] { return fmt("K=", row.shape.k, " flops_ratio ", row.flops_ratio); });
  }
  const double base = r.rows[0].speedup;
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    ck.expect(r.rows[i].speedup > base, [&] {
      return fmt("speedup at K=", r.rows[i].shape.k, " is ", r.rows[i].speedup,
                 ", not above ", base, " at K=64");
    });
  }
  std::string detail = "flops_ratio 2.0; speedup";
  for (const BenchRow& row : r.rows) detail += fmt(" K=", row.shape.k, ":", row.speedup);
  return ck.done(detail);
}

// KL-minimizing clip threshold by scanning every candidate directly.
double kl_oracle(const std::vector<std::uint64_t>& h, double width, std::size_t levels) {
  const std::size_t bins = h.size();
  double total = 0;
  for (auto c : h) total += static_cast<double>(c);
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t t = levels; t <= bins; ++t) {
    std::vector<double> p(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(t));
    for (std::size_t b = t; b < bins; ++b) p[t - 1] += static_cast<double>(h[b]);
    const std::size_t chunk = t / levels;
    std::vector<double> mass(levels, 0), occupied(levels, 0);
    auto level_of = [&](std::size_t b) { return std::min(b / chunk, levels - 1); };
    for (std::size_t b = 0; b < t; ++b) {
      mass[level_of(b)] += p[b];
      occupied[level_of(b)] += p[b] > 0 ? 1 : 0;
    }
    double kl = 0;
    for (std::size_t b = 0; b < t; ++b) {
      if (p[b] == 0) continue;
      kl += p[b] / total * std::log(p[b] / (mass[level_of(b)] / occupied[level_of(b)]));
    }
    if (kl < best) {
      best = kl;
      arg = t;
    }
  }
  return static_cast<double>(arg) * width;
}

Outcome quantization() {
  Checker ck;
  Rng rng(10);
  std::uniform_int_distribution<std::size_t> dim(1, 24);
  std::student_t_distribution<double> heavy(3.0);

  // max calibration over several sample tensors never clips any of them
  const int max_trials = 300;
  for (int t = 0; t < max_trials && ck.ok(); ++t) {
    const std::size_t rows = dim(rng), cols = dim(rng);
    std::vector<DenseMatrix> samples;
    for (int s = 0; s < 3; ++s) {
      std::vector<double> v(rows * cols);
      for (double& x : v) x = heavy(rng) * std::ldexp(1.0, t % 40 - 20);
      samples.push_back(DenseMatrix::rounded(rows, cols, ElementType::FP32, v));
    }
    const Granularity g = t % 2 ? Granularity::PerRow : Granularity::PerTensor;
    const ScaleSet scales = calibrate(samples, CalibMethod::max(), g);
    for (const DenseMatrix& x : samples) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double s = scales.scales[g == Granularity::PerRow ? r : 0];
        for (std::size_t c = 0; c < cols; ++c) {
          ck.expect(std::fabs(x(r, c)) <= 127.0 * s, [&] {
            return fmt("trial ", t, ": |", x(r, c), "| exceeds 127 * ", s);
          });
        }
      }
    }
  }

  // quantizing a pruned tensor keeps it 2:4 under every calibration method
  const CalibMethod methods[] = {CalibMethod::max(), CalibMethod::entropy(),
                                 CalibMethod::at_percentile(99.0)};
  const int conformance_trials = 10000;
  for (int t = 0; t < conformance_trials && ck.ok(); ++t) {
    const std::size_t rows = dim(rng), cols = 4 * dim(rng);
    std::vector<double> v(rows * cols);
    for (double& x : v) x = heavy(rng);
    const DenseMatrix w = DenseMatrix::rounded(rows, cols, ElementType::FP32, v);
    const PruneResult pr = prune_magnitude(w, {2, 4});
    const DenseMatrix pruned = apply_mask(w, pr.mask);
    const CalibMethod& method = methods[t % 3];
    const Granularity g = t % 2 ? Granularity::PerRow : Granularity::PerTensor;
    const DenseMatrix q = quantize(pruned, calibrate(std::vector<DenseMatrix>{pruned}, method, g));
    bool zeros_kept = true;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) zeros_kept &= pr.mask(r, c) || q(r, c) == 0.0;
    }
    ck.expect(q.dtype() == ElementType::INT8 && zeros_kept && check_conformance(q, {2, 4}),
              [&] { return fmt("trial ", t, ": quantized tensor is not 2:4"); });
  }

  // entropy calibration against the direct scan
  const int histograms = 100;
  for (int t = 0; t < histograms && ck.ok(); ++t) {
    std::vector<std::uint64_t> h(kHistogramBins, 0);
    const double tail = 30.0 + 10.0 * t;
    std::exponential_distribution<double> body(1.0 / tail);
    std::uniform_int_distribution<std::size_t> outlier(1000, kHistogramBins - 1);
    for (int i = 0; i < 20000; ++i) {
      h[std::min(kHistogramBins - 1, static_cast<std::size_t>(body(rng)))]++;
    }
    for (int i = 0; i < t % 7; ++i) h[outlier(rng)]++;
    const double width = 0.001 * (1 + t % 5);
    const double got = entropy_threshold(h, width);
    const double want = kl_oracle(h, width, kQuantLevels);
    ck.expect(got == want,
              [&] { return fmt("histogram ", t, ": threshold ", got, ", oracle ", want); });
  }
  return ck.done(fmt(max_trials, " max calibrations never clip, ", conformance_trials,
                     " pruned tensors stay 2:4 after quantization, ", histograms,
                     " entropy thresholds equal the KL scan"));
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  Outcome (*run)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {1, "storage arithmetic", 1, storage_arithmetic},
      {2, "codec roundtrip", 10, codec_roundtrip},
      {3, "sparse GEMM equivalence", 60, sparse_gemm_equivalence},
      {4, "mask optimality", 30, mask_optimality},
      {5, "permutation search", 60, permutation_search},
      {6, "permutation correctness", 10, permutation_correctness},
      {7, "train, prune, retrain workflow", 120, workflow_demo},
      {8, "gradient check", 10, gradient_check},
      {9, "bench trend", 300, bench_trend},
      {10, "quantization", 60, quantization},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt("exception: ", e.what())};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.pass && secs > c.limit_s) {
      o = {false, fmt("took ", secs, " s, limit ", c.limit_s, " s; ", o.detail)};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %2d %s (%.3f s, limit %g s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                secs, c.limit_s, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(criteria)) - failures,
              std::size(criteria));
  return failures == 0 ? 0 : 1;
}
