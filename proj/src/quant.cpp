// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#include "nmsparse/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace nmsparse {

namespace {

// Smallest FP32 value >= x, so a scale never shrinks when stored.
double fp32_ceil(double x) {
  auto f = static_cast<float>(x);
  if (static_cast<double>(f) < x) f = std::nextafter(f, std::numeric_limits<float>::infinity());
  return static_cast<double>(f);
}

double scale_from_threshold(double threshold) {
  if (!(threshold > 0)) return 1.0;
  return std::max(fp32_ceil(threshold / 127.0),
                  static_cast<double>(std::numeric_limits<float>::denorm_min()));
}

std::size_t slice_count(const DenseMatrix& x, Granularity g) {
  return g == Granularity::PerTensor ? 1 : x.rows();
}

void require_positive(const ScaleSet& s) {
  for (double v : s.scales) {
    if (!(v > 0) || !std::isfinite(v)) {
      throw Error(ErrorCode::InvalidArgument, "scales must be positive and finite");
    }
  }
}

void require_fits(const DenseMatrix& x, const ScaleSet& s) {
  require_positive(s);
  if (s.scales.size() != slice_count(x, s.granularity)) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(to_string(s.granularity)) + " scale set has " +
                    std::to_string(s.scales.size()) + " scales for a " +
                    std::to_string(x.rows()) + "-row matrix");
  }
}

double slice_scale(const ScaleSet& s, std::size_t row) {
  return s.granularity == Granularity::PerTensor ? s.scales[0] : s.scales[row];
}

}  // namespace

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::PerTensor: return "per_tensor";
    case Granularity::PerChannel: return "per_channel";
    case Granularity::PerRow: return "per_row";
  }
  return "?";
}

std::optional<Granularity> parse_granularity(std::string_view text) {
  for (Granularity g : {Granularity::PerTensor, Granularity::PerChannel, Granularity::PerRow}) {
    if (text == to_string(g)) return g;
  }
  return std::nullopt;
}

std::optional<CalibMethod> parse_calib_method(std::string_view text) {
  if (text == "max") return CalibMethod::max();
  if (text == "entropy") return CalibMethod::entropy();
  if (text == "percentile") return CalibMethod::at_percentile(99.99);
  constexpr std::string_view prefix = "percentile=";
  if (text.starts_with(prefix)) {
    try {
      std::size_t used = 0;
      const std::string num(text.substr(prefix.size()));
      const double p = std::stod(num, &used);
      if (used != num.size() || !(p > 0 && p <= 100)) return std::nullopt;
      return CalibMethod::at_percentile(p);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

Histogram::Histogram(double range, std::size_t bins) : range_(range), counts_(bins, 0) {
  if (!(range > 0) || bins == 0) {
    throw Error(ErrorCode::InvalidArgument, "histogram needs a positive range and bins");
  }
}

void Histogram::add(double x) {
  const double a = std::fabs(x);
  const auto bins = counts_.size();
  auto b = static_cast<std::size_t>(std::min(a / range_ * static_cast<double>(bins),
                                             static_cast<double>(bins - 1)));
  ++counts_[b];
}

void Histogram::add(std::span<const double> xs) {
  for (double x : xs) add(x);
}

void Histogram::merge(const Histogram& other) {
  if (other.range_ != range_ || other.counts_.size() != counts_.size()) {
    throw Error(ErrorCode::InvalidArgument, "cannot merge histograms with different binning");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

double entropy_threshold(std::span<const std::uint64_t> counts, double bin_width,
                         std::size_t levels) {
  const std::size_t bins = counts.size();
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0 || bins == 0) return 0.0;
  if (levels == 0 || levels > bins) {
    throw Error(ErrorCode::InvalidArgument, "quantization levels must be in [1, bins]");
  }

  // Only occupied bins contribute; visiting them in ascending order keeps every
  // sum identical to a scan over all bins.
  std::vector<std::size_t> occupied;
  for (std::size_t b = 0; b < bins; ++b) {
    if (counts[b] != 0) occupied.push_back(b);
  }
  std::vector<std::uint64_t> suffix(bins + 1, 0);
  for (std::size_t b = bins; b-- > 0;) suffix[b] = suffix[b + 1] + counts[b];

  const double norm = static_cast<double>(total);
  std::vector<std::size_t> idx;
  std::vector<double> p, q;
  double best_kl = std::numeric_limits<double>::infinity();
  std::size_t best_i = bins;
  for (std::size_t i = levels; i <= bins; ++i) {
    idx.clear();
    p.clear();
    for (std::size_t b : occupied) {
      if (b + 1 >= i) break;
      idx.push_back(b);
      p.push_back(static_cast<double>(counts[b]));
    }
    const double last = static_cast<double>(counts[i - 1]) + static_cast<double>(suffix[i]);
    if (last != 0) {
      idx.push_back(i - 1);
      p.push_back(last);
    }

    const std::size_t merged = i / levels;
    q.assign(p.size(), 0.0);
    for (std::size_t k = 0; k < idx.size();) {
      const std::size_t level = std::min(idx[k] / merged, levels - 1);
      std::size_t end = k;
      double sum = 0;
      while (end < idx.size() && std::min(idx[end] / merged, levels - 1) == level) sum += p[end++];
      for (std::size_t j = k; j < end; ++j) q[j] = sum / static_cast<double>(end - k);
      k = end;
    }

    double kl = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double pb = p[k] / norm;
      const double qb = q[k] / norm;
      kl += pb * std::log(pb / qb);
    }
    if (kl < best_kl) {
      best_kl = kl;
      best_i = i;
    }
  }
  return static_cast<double>(best_i) * bin_width;
}

ScaleSet calibrate(std::span<const DenseMatrix> samples, CalibMethod method,
                   Granularity granularity) {
  if (samples.empty()) throw Error(ErrorCode::InvalidArgument, "empty calibration stream");
  if (method.kind == CalibMethod::Kind::Percentile &&
      !(method.percentile > 0 && method.percentile <= 100)) {
    throw Error(ErrorCode::InvalidArgument, "percentile must be in (0, 100]");
  }
  const std::size_t slices = slice_count(samples.front(), granularity);
  for (const DenseMatrix& s : samples) {
    if (slice_count(s, granularity) != slices) {
      throw Error(ErrorCode::ShapeMismatch, "calibration samples disagree on row count");
    }
  }

  // Each sample contributes either one whole-tensor slice or one row slice.
  auto for_each_slice = [&](std::size_t slice, auto&& fn) {
    for (const DenseMatrix& s : samples) {
      fn(granularity == Granularity::PerTensor ? s.data() : s.row(slice));
    }
  };

  ScaleSet out{granularity, std::vector<double>(slices, 1.0)};
  for (std::size_t slice = 0; slice < slices; ++slice) {
    double amax = 0;
    for_each_slice(slice, [&](std::span<const double> xs) {
      for (double x : xs) amax = std::max(amax, std::fabs(x));
    });
    if (amax == 0) continue;  // all-zero slice keeps scale 1

    double threshold = amax;
    switch (method.kind) {
      case CalibMethod::Kind::Max:
        break;
      case CalibMethod::Kind::Percentile: {
        std::vector<double> mags;
        for_each_slice(slice, [&](std::span<const double> xs) {
          for (double x : xs) mags.push_back(std::fabs(x));
        });
        std::sort(mags.begin(), mags.end());
        // nearest rank
        auto rank = static_cast<std::size_t>(
            std::ceil(method.percentile / 100.0 * static_cast<double>(mags.size())));
        rank = std::clamp<std::size_t>(rank, 1, mags.size());
        threshold = mags[rank - 1];
        break;
      }
      case CalibMethod::Kind::Entropy: {
        Histogram hist(amax);
        for_each_slice(slice, [&](std::span<const double> xs) { hist.add(xs); });
        threshold = entropy_threshold(hist.counts(), hist.bin_width());
        break;
      }
    }
    out.scales[slice] = scale_from_threshold(threshold);
  }
  return out;
}

DenseMatrix quantize(const DenseMatrix& x, const ScaleSet& s) {
  require_fits(x, s);
  std::vector<double> q(x.size());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double scale = slice_scale(s, r);
    for (std::size_t c = 0; c < x.cols(); ++c) {
      q[r * x.cols() + c] = round_to_format(x(r, c) / scale, ElementType::INT8);
    }
  }
  return DenseMatrix(x.rows(), x.cols(), ElementType::INT8, std::move(q));
}

DenseMatrix dequantize(const DenseMatrix& q, const ScaleSet& s) {
  require_fits(q, s);
  std::vector<double> out(q.size());
  for (std::size_t r = 0; r < q.rows(); ++r) {
    const double scale = slice_scale(s, r);
    for (std::size_t c = 0; c < q.cols(); ++c) {
      out[r * q.cols() + c] = round_to_format(q(r, c) * scale, ElementType::FP32);
    }
  }
  return DenseMatrix(q.rows(), q.cols(), ElementType::FP32, std::move(out));
}

DenseMatrix quantized_sparse_gemm(const SparseNM& a, const DenseMatrix& b,
                                  const ScaleSet& weight_scales,
                                  const ScaleSet& activation_scales) {
  if (weight_scales.scales.size() !=
      (weight_scales.granularity == Granularity::PerTensor ? 1 : a.rows())) {
    throw Error(ErrorCode::ShapeMismatch, "weight scales do not match the sparse operand");
  }
  if (activation_scales.granularity != Granularity::PerTensor ||
      activation_scales.scales.size() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "activation scales must be per-tensor");
  }
  require_positive(weight_scales);
  require_positive(activation_scales);
  const NumericFormat int8{ElementType::INT8, AccumulatorType::INT32};
  const DenseMatrix acc = spmm(a, b, int8);
  std::vector<double> out(acc.size());
  for (std::size_t r = 0; r < acc.rows(); ++r) {
    const double scale = slice_scale(weight_scales, r) * activation_scales.scales[0];
    for (std::size_t c = 0; c < acc.cols(); ++c) {
      out[r * acc.cols() + c] = round_to_format(acc(r, c) * scale, ElementType::FP32);
    }
  }
  return DenseMatrix(acc.rows(), acc.cols(), ElementType::FP32, std::move(out));
}

}  // namespace nmsparse
