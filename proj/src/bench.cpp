// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#include <algorithm>
#include <chrono>
#include <functional>
#include <iomanip>
#include <sstream>

#include "nmsparse/random.hpp"
#include "nmsparse/spmm.hpp"

namespace nmsparse {

namespace {

double elapsed_ns(const std::function<void()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  body();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::nano>(t1 - t0).count();
}

double median(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  const std::size_t mid = samples.size() / 2;
  return samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
}

}  // namespace

std::string BenchReport::to_csv() const {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const BenchRow& r : rows) {
    os << r.shape.m << ',' << r.shape.n << ',' << r.shape.k << ',' << std::fixed
       << std::setprecision(0) << r.dense_ns << ',' << r.sparse_ns << ','
       << std::setprecision(4) << r.speedup << ',' << r.flops_ratio << '\n';
  }
  return os.str();
}

BenchReport bench(const std::vector<GemmShape>& sizes, const NumericFormat& format,
                  std::size_t repeats, std::uint64_t seed) {
  return bench(sizes, format, hardware_pattern(format), repeats, seed);
}

BenchReport bench(const std::vector<GemmShape>& sizes, const NumericFormat& format,
                  NMPattern pattern, std::size_t repeats, std::uint64_t seed) {
  BenchReport report{format, pattern, {}};
  struct Case {
    DenseMatrix a_dense;
    SparseNM a;
    DenseMatrix b;
    SpmmPlan plan;
    std::vector<double> dense_ns, sparse_ns;
  };
  Rng rng(seed);
  std::vector<Case> cases;
  for (const GemmShape& shape : sizes) {
    require_sparse_shape(shape, format, pattern);
    Case c;
    c.a_dense = random_conforming(shape.m, shape.k, pattern, format.input, rng);
    c.a = compress(c.a_dense, pattern);
    c.b = random_dense(shape.k, shape.n, format.input, rng);
    c.plan = SpmmPlan::for_shape(shape, pattern.m);
    cases.push_back(std::move(c));
  }

  std::vector<std::uint64_t> macs(cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    SpmmStats stats;
    spmm(cases[i].a, cases[i].b, format, cases[i].plan, &stats);  // warm-up and counter
    macs[i] = stats.multiply_adds;
  }
  // Every repeat times each size once with both kernels, so slow drifts in
  // machine load reach all rows alike.
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    for (Case& c : cases) {
      c.dense_ns.push_back(elapsed_ns([&] { gemm_dense(c.a_dense, c.b, format); }));
      c.sparse_ns.push_back(elapsed_ns([&] { spmm(c.a, c.b, format, c.plan); }));
    }
  }
  for (std::size_t i = 0; i < cases.size(); ++i) {
    BenchRow row;
    row.shape = sizes[i];
    row.dense_ns = median(cases[i].dense_ns);
    row.sparse_ns = median(cases[i].sparse_ns);
    row.speedup = row.dense_ns / row.sparse_ns;
    row.flops_ratio = static_cast<double>(sizes[i].m) * static_cast<double>(sizes[i].n) *
                      static_cast<double>(sizes[i].k) / static_cast<double>(macs[i]);
    report.rows.push_back(row);
  }
  return report;
}

std::vector<GemmShape> parse_shapes(const std::string& text) {
  std::vector<GemmShape> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    GemmShape s;
    char x1 = 0, x2 = 0;
    std::istringstream one(item);
    if (!(one >> s.m >> x1 >> s.n >> x2 >> s.k) || x1 != 'x' || x2 != 'x' || !one.eof()) {
      throw Error(ErrorCode::InvalidArgument, "bad GEMM size '" + item + "', expected MxNxK");
    }
    out.push_back(s);
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "no GEMM sizes given");
  return out;
}

}  // namespace nmsparse
