// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#include "nmsparse/dense.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>

#include "kernels.hpp"

namespace nmsparse {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, ElementType dtype)
    : rows_(rows), cols_(cols), dtype_(dtype), data_(rows * cols, 0.0) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, ElementType dtype,
                         std::vector<double> data)
    : rows_(rows), cols_(cols), dtype_(dtype), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::ShapeMismatch,
                "data length " + std::to_string(data_.size()) + " != " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  }
  auto first_bad = [&](auto ok) {
    for (double v : data_) {
      if (!ok(v)) return std::optional<double>(v);
    }
    return std::optional<double>();
  };
  // The accumulator types get inline checks; kernel outputs are large.
  std::optional<double> bad;
  switch (dtype_) {
    case ElementType::FP32:
      bad = first_bad([](double v) { return static_cast<float>(v) == v || std::isnan(v); });
      break;
    case ElementType::INT32:
      bad = first_bad([](double v) {
        return v >= -2147483648.0 && v <= 2147483647.0 && std::trunc(v) == v;
      });
      break;
    default:
      bad = first_bad([this](double v) { return representable(v, dtype_); });
      break;
  }
  if (bad) {
    throw Error(ErrorCode::InvalidArgument, "value " + std::to_string(*bad) +
                                                " not representable in " +
                                                std::string(to_string(dtype_)));
  }
}

DenseMatrix DenseMatrix::rounded(std::size_t rows, std::size_t cols, ElementType dtype,
                                 std::span<const double> data) {
  if (data.size() != rows * cols) {
    throw Error(ErrorCode::ShapeMismatch, "data length does not match shape");
  }
  DenseMatrix out(rows, cols, dtype);
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.data_[i] = round_to_format(data[i], dtype);
  }
  return out;
}

DenseMatrix DenseMatrix::identity(std::size_t n, ElementType dtype) {
  DenseMatrix out(n, n, dtype);
  for (std::size_t i = 0; i < n; ++i) out.data_[i * n + i] = 1.0;
  return out;
}

void DenseMatrix::set(std::size_t r, std::size_t c, double v) {
  if (!representable(v, dtype_)) {
    throw Error(ErrorCode::InvalidArgument,
                "value " + std::to_string(v) + " not representable in " +
                    std::string(to_string(dtype_)));
  }
  data_[r * cols_ + c] = v;
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix out(cols_, rows_, dtype_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) out.data_[c * rows_ + r] = data_[r * cols_ + c];
  }
  return out;
}

DenseMatrix DenseMatrix::as(ElementType dtype) const {
  return DenseMatrix(rows_, cols_, dtype, data_);
}

bool operator==(const DenseMatrix& a, const DenseMatrix& b) {
  return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.dtype_ == b.dtype_ &&
         a.data_ == b.data_;
}

bool bit_equal(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.dtype() != b.dtype()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.data()[i]) != std::bit_cast<std::uint64_t>(b.data()[i])) {
      return false;
    }
  }
  return true;
}

double accumulator_ulp(double x, AccumulatorType acc) {
  const double a = std::fabs(x);
  switch (acc) {
    case AccumulatorType::INT32:
      return 1.0;
    case AccumulatorType::FP32: {
      const float f = static_cast<float>(a);
      if (f == 0.0f) return std::numeric_limits<float>::denorm_min();
      return static_cast<double>(std::nextafter(f, std::numeric_limits<float>::infinity()) - f);
    }
    case AccumulatorType::FP16: {
      int e = 0;
      std::frexp(a, &e);
      const int exp = a == 0.0 ? -14 : std::max(e - 1, -14);
      return std::ldexp(1.0, exp - 10);
    }
  }
  return 0.0;
}

DenseMatrix gemm_dense(const DenseMatrix& a, const DenseMatrix& b,
                       const NumericFormat& format) {
  require_valid(format);
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch,
                "gemm: a is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    ", b is " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  if (a.dtype() != format.input || b.dtype() != format.input) {
    throw Error(ErrorCode::UnsupportedFormat,
                "gemm: operands must be " + std::string(to_string(format.input)));
  }
  if (format.input == ElementType::INT8 && a.cols() > kMaxInt8Depth) {
    throw Error(ErrorCode::ShapeMismatch, "gemm: INT8 depth exceeds INT32 headroom");
  }
  const std::size_t m = a.rows(), n = b.cols(), k = a.cols();
  const ElementType out_type = format.result_type();
  std::vector<double> out(m * n);

  auto run = [&](auto kernel) {
    using K = decltype(kernel);
    using T = typename K::Value;
    const auto bv = detail::to_buffer<T>(b.data());
    std::vector<T> acc(n), arow(k);
    for (std::size_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), T{0});
      const std::span<const double> src = a.row(i);
      for (std::size_t kk = 0; kk < k; ++kk) arow[kk] = static_cast<T>(src[kk]);
      detail::accumulate<K>(
          k, [&](std::size_t kk) { return std::pair(arow[kk], &bv[kk * n]); }, acc.data(), n);
      std::copy(acc.begin(), acc.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
  };
  switch (format.accumulator) {
    case AccumulatorType::INT32:
      run(detail::Int32Kernel{});
      break;
    case AccumulatorType::FP32:
      run(detail::Fp32Kernel{});
      break;
    case AccumulatorType::FP16:
      run(detail::Fp16Kernel{});
      break;
  }
  return DenseMatrix(m, n, out_type, std::move(out));
}

}  // namespace nmsparse
