// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#ifndef NMSPARSE_QUANT_HPP
#define NMSPARSE_QUANT_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "nmsparse/codec.hpp"
#include "nmsparse/dense.hpp"
#include "nmsparse/spmm.hpp"

namespace nmsparse {

/// Activations use one scale per tensor; convolution weights one per output
/// channel; fully-connected weights one per row. On a 2-D weight matrix whose
/// rows are output channels, per-channel and per-row slice the same way.
enum class Granularity : std::uint8_t { PerTensor, PerChannel, PerRow };

std::string_view to_string(Granularity g);
std::optional<Granularity> parse_granularity(std::string_view text);

/// Symmetric INT8 scales, all positive and FP32-representable.
struct ScaleSet {
  Granularity granularity = Granularity::PerTensor;
  std::vector<double> scales;

  friend bool operator==(const ScaleSet&, const ScaleSet&) = default;
};

struct CalibMethod {
  enum class Kind : std::uint8_t { Max, Entropy, Percentile };
  Kind kind = Kind::Max;
  double percentile = 99.99;  // in (0, 100]

  static CalibMethod max() { return {Kind::Max, 99.99}; }
  static CalibMethod entropy() { return {Kind::Entropy, 99.99}; }
  static CalibMethod at_percentile(double p) { return {Kind::Percentile, p}; }
};

/// "max", "entropy", "percentile" or "percentile=P".
std::optional<CalibMethod> parse_calib_method(std::string_view text);

inline constexpr std::size_t kHistogramBins = 2048;
inline constexpr std::size_t kQuantLevels = 128;

/// Fixed-range histogram of |x| over [0, range]. Counts are integers, so
/// merging partial histograms is associative and order-independent.
class Histogram {
 public:
  explicit Histogram(double range, std::size_t bins = kHistogramBins);

  void add(double x);
  void add(std::span<const double> xs);
  /// Throws InvalidArgument if the ranges or bin counts differ.
  void merge(const Histogram& other);

  double range() const { return range_; }
  double bin_width() const { return range_ / static_cast<double>(counts_.size()); }
  std::span<const std::uint64_t> counts() const { return counts_; }

 private:
  double range_;
  std::vector<std::uint64_t> counts_;
};

/// Clip threshold minimizing KL(P || Q), where P is the histogram truncated
/// at threshold i * bin_width with the clipped tail folded into its last bin,
/// and Q is P merged into `levels` equal bin ranges and spread back uniformly
/// over the bins where P is nonzero. Scans every i from `levels` to
/// counts.size(); the smallest threshold wins ties. Returns 0 for an empty
/// histogram.
double entropy_threshold(std::span<const std::uint64_t> counts, double bin_width,
                         std::size_t levels = kQuantLevels);

/// One scale per slice of the calibration stream. Per-row/per-channel
/// slices require every sample to have the same row count. A slice that is
/// all zeros gets scale 1. Throws InvalidArgument for an empty stream or a
/// bad percentile, ShapeMismatch for inconsistent samples.
ScaleSet calibrate(std::span<const DenseMatrix> samples, CalibMethod method,
                   Granularity granularity);

/// q = clamp(round_nearest_even(x / scale), -128, 127). Throws ShapeMismatch
/// when the scale count does not fit the matrix.
DenseMatrix quantize(const DenseMatrix& x, const ScaleSet& s);

/// q * scale, rounded to FP32.
DenseMatrix dequantize(const DenseMatrix& q, const ScaleSet& s);

/// INT8 sparse GEMM with INT32 accumulation, rescaled to FP32 by
/// weight_scales (per tensor or per row of A) times a per-tensor activation
/// scale.
DenseMatrix quantized_sparse_gemm(const SparseNM& a, const DenseMatrix& b,
                                  const ScaleSet& weight_scales,
                                  const ScaleSet& activation_scales);

}  // namespace nmsparse

#endif  // NMSPARSE_QUANT_HPP
