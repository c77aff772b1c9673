// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#include "nmsparse/codec.hpp"

#include <algorithm>
#include <string>

namespace nmsparse {

namespace {

void require_divides(std::size_t cols, NMPattern p) {
  require_valid(p);
  if (cols % static_cast<std::size_t>(p.m) != 0) {
    throw Error(ErrorCode::InvalidPattern, "group size m=" + std::to_string(p.m) +
                                               " does not divide " + std::to_string(cols) +
                                               " columns");
  }
}

int read_field(std::span<const std::uint8_t> row, std::size_t field, int bits) {
  int v = 0;
  const std::size_t base = field * static_cast<std::size_t>(bits);
  for (int t = 0; t < bits; ++t) {
    const std::size_t bit = base + static_cast<std::size_t>(t);
    v |= ((row[bit / 8] >> (bit % 8)) & 1) << t;
  }
  return v;
}

void write_field(std::span<std::uint8_t> row, std::size_t field, int bits, int v) {
  const std::size_t base = field * static_cast<std::size_t>(bits);
  for (int t = 0; t < bits; ++t) {
    const std::size_t bit = base + static_cast<std::size_t>(t);
    if ((v >> t) & 1) row[bit / 8] = static_cast<std::uint8_t>(row[bit / 8] | (1u << (bit % 8)));
  }
}

}  // namespace

std::size_t SparseNM::meta_row_bytes(std::size_t cols, NMPattern p) {
  const std::size_t fields = cols / static_cast<std::size_t>(p.m) * static_cast<std::size_t>(p.n);
  return (fields * static_cast<std::size_t>(p.index_bits()) + 7) / 8;
}

int SparseNM::index(std::size_t r, std::size_t slot) const {
  const std::size_t stride = meta_row_bytes();
  return read_field(std::span<const std::uint8_t>(meta_).subspan(r * stride, stride), slot,
                    pattern_.index_bits());
}

namespace {

template <typename Index>
void decode_columns(const SparseNM& s, std::size_t r, std::size_t first, std::span<Index> out,
                    std::size_t scale) {
  const auto m = static_cast<std::size_t>(s.pattern().m);
  const auto n = static_cast<std::size_t>(s.pattern().n);
  if (r >= s.rows() || first % n != 0 || first + out.size() > s.kept_per_row()) {
    throw Error(ErrorCode::ShapeMismatch, "column range outside the stored values");
  }
  const int bits = s.pattern().index_bits();
  const std::uint64_t mask = (std::uint64_t{1} << bits) - 1;
  const std::size_t bit_pos = first * static_cast<std::size_t>(bits);
  const std::uint8_t* meta = s.meta().data() + r * s.meta_row_bytes() + bit_pos / 8;
  const int skip = static_cast<int>(bit_pos % 8);
  std::uint64_t buf = 0;
  int avail = 0;
  if (skip != 0) {
    buf = static_cast<std::uint64_t>(*meta++) >> skip;
    avail = 8 - skip;
  }
  std::size_t base = first / n * m, in_group = 0;
  for (Index& o : out) {
    while (avail < bits) {
      buf |= static_cast<std::uint64_t>(*meta++) << avail;
      avail += 8;
    }
    o = static_cast<Index>((base + (buf & mask)) * scale);
    buf >>= bits;
    avail -= bits;
    if (++in_group == n) {
      in_group = 0;
      base += m;
    }
  }
}

}  // namespace

std::vector<std::size_t> SparseNM::columns() const {
  const std::size_t kept = kept_per_row();
  std::vector<std::size_t> out(rows_ * kept);
  for (std::size_t r = 0; r < rows_; ++r) {
    decode_columns<std::size_t>(*this, r, 0, std::span(out).subspan(r * kept, kept), 1);
  }
  return out;
}

void SparseNM::scaled_columns(std::size_t r, std::size_t first, std::span<std::uint32_t> out,
                              std::size_t scale) const {
  decode_columns(*this, r, first, out, scale);
}

void SparseNM::scaled_columns(std::size_t r, std::size_t first, std::span<std::size_t> out,
                              std::size_t scale) const {
  decode_columns(*this, r, first, out, scale);
}

SparseNM SparseNM::from_parts(std::size_t rows, std::size_t cols, NMPattern pattern,
                              ElementType dtype, std::vector<double> values,
                              std::vector<std::uint8_t> meta) {
  require_divides(cols, pattern);
  SparseNM s;
  s.rows_ = rows;
  s.cols_ = cols;
  s.pattern_ = pattern;
  s.dtype_ = dtype;
  if (values.size() != rows * s.kept_per_row()) {
    throw Error(ErrorCode::ShapeMismatch, "sparse values length " + std::to_string(values.size()) +
                                              " != " + std::to_string(rows * s.kept_per_row()));
  }
  if (meta.size() != rows * s.meta_row_bytes()) {
    throw Error(ErrorCode::ShapeMismatch, "sparse metadata length " + std::to_string(meta.size()) +
                                              " != " + std::to_string(rows * s.meta_row_bytes()));
  }
  for (double v : values) {
    if (!representable(v, dtype)) {
      throw Error(ErrorCode::InvalidArgument, "sparse value not representable in " +
                                                  std::string(to_string(dtype)));
    }
  }
  s.values_ = std::move(values);
  s.meta_ = std::move(meta);

  const auto n = static_cast<std::size_t>(pattern.n);
  const std::size_t used_bits = s.kept_per_row() * static_cast<std::size_t>(pattern.index_bits());
  const std::size_t stride = s.meta_row_bytes();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t g = 0; g < s.groups_per_row(); ++g) {
      int prev = -1;
      for (std::size_t k = 0; k < n; ++k) {
        const int idx = s.index(r, g * n + k);
        if (idx >= pattern.m || idx <= prev) {
          throw Error(ErrorCode::MalformedMetadata,
                      "row " + std::to_string(r) + " group " + std::to_string(g) +
                          ": positions must be strictly increasing and below " +
                          std::to_string(pattern.m));
        }
        prev = idx;
      }
    }
    for (std::size_t bit = used_bits; bit < stride * 8; ++bit) {
      if ((s.meta_[r * stride + bit / 8] >> (bit % 8)) & 1) {
        throw Error(ErrorCode::MalformedMetadata,
                    "row " + std::to_string(r) + ": nonzero metadata padding");
      }
    }
  }
  return s;
}

std::size_t Mask::count() const {
  std::size_t c = 0;
  for (auto b : bits_) c += b;
  return c;
}

Mask Mask::transposed() const {
  Mask out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) out.set(c, r, (*this)(r, c));
  }
  return out;
}

bool mask_conforms(const Mask& mask, NMPattern p, Axis axis) {
  if (!p.valid()) return false;
  const auto m = static_cast<std::size_t>(p.m);
  const std::size_t lines = axis == Axis::Rows ? mask.rows() : mask.cols();
  const std::size_t len = axis == Axis::Rows ? mask.cols() : mask.rows();
  if (len % m != 0) return false;
  for (std::size_t line = 0; line < lines; ++line) {
    for (std::size_t g = 0; g < len; g += m) {
      int kept = 0;
      for (std::size_t k = g; k < g + m; ++k) {
        kept += axis == Axis::Rows ? mask(line, k) : mask(k, line);
      }
      if (kept != p.n) return false;
    }
  }
  return true;
}

std::optional<GroupRef> find_violation(const DenseMatrix& a, NMPattern p) {
  require_divides(a.cols(), p);
  const auto m = static_cast<std::size_t>(p.m);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto row = a.row(r);
    for (std::size_t g = 0; g < a.cols() / m; ++g) {
      int nonzeros = 0;
      for (std::size_t k = 0; k < m; ++k) nonzeros += row[g * m + k] != 0.0;
      if (nonzeros > p.n) return GroupRef{r, g};
    }
  }
  return std::nullopt;
}

bool check_conformance(const DenseMatrix& a, NMPattern p) {
  return !find_violation(a, p).has_value();
}

SparseNM compress(const DenseMatrix& a, NMPattern p) {
  if (auto bad = find_violation(a, p)) {
    throw Error(ErrorCode::NonConforming,
                "row " + std::to_string(bad->row) + " group " + std::to_string(bad->group) +
                    " has more than " + std::to_string(p.n) + " nonzeros");
  }
  const auto m = static_cast<std::size_t>(p.m);
  const auto n = static_cast<std::size_t>(p.n);
  SparseNM s;
  s.rows_ = a.rows();
  s.cols_ = a.cols();
  s.pattern_ = p;
  s.dtype_ = a.dtype();
  const std::size_t kept = s.kept_per_row();
  const std::size_t stride = s.meta_row_bytes();
  s.values_.resize(a.rows() * kept);
  s.meta_.assign(a.rows() * stride, 0);

  std::vector<std::uint8_t> take(m);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto row = a.row(r);
    auto meta_row = std::span<std::uint8_t>(s.meta_).subspan(r * stride, stride);
    for (std::size_t g = 0; g < a.cols() / m; ++g) {
      std::fill(take.begin(), take.end(), 0);
      std::size_t chosen = 0;
      for (std::size_t k = 0; k < m; ++k) {
        if (row[g * m + k] != 0.0) {
          take[k] = 1;
          ++chosen;
        }
      }
      for (std::size_t k = 0; k < m && chosen < n; ++k) {
        if (!take[k]) {
          take[k] = 1;
          ++chosen;
        }
      }
      std::size_t slot = g * n;
      for (std::size_t k = 0; k < m; ++k) {
        if (!take[k]) continue;
        s.values_[r * kept + slot] = row[g * m + k];
        write_field(meta_row, slot, p.index_bits(), static_cast<int>(k));
        ++slot;
      }
    }
  }
  return s;
}

DenseMatrix decompress(const SparseNM& s) {
  std::vector<double> out(s.rows() * s.cols(), 0.0);
  const std::vector<std::size_t> cols = s.columns();
  for (std::size_t r = 0; r < s.rows(); ++r) {
    for (std::size_t slot = 0; slot < s.kept_per_row(); ++slot) {
      out[r * s.cols() + cols[r * s.kept_per_row() + slot]] = s.value(r, slot);
    }
  }
  return DenseMatrix(s.rows(), s.cols(), s.dtype(), std::move(out));
}

bool is_canonical(const SparseNM& s) {
  const auto m = static_cast<std::size_t>(s.pattern().m);
  const auto n = static_cast<std::size_t>(s.pattern().n);
  const std::size_t kept = s.kept_per_row();
  const std::size_t stride = s.meta_row_bytes();
  const std::size_t used_bits = kept * static_cast<std::size_t>(s.pattern().index_bits());
  std::vector<std::size_t> cols(kept), expect(n);
  std::vector<std::uint8_t> take(m);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    s.scaled_columns(r, 0, std::span(cols), 1);
    for (std::size_t g = 0; g < s.groups_per_row(); ++g) {
      // Nonzeros stay where they are; zero slots take the smallest unused positions.
      std::fill(take.begin(), take.end(), 0);
      std::size_t chosen = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t pos = cols[g * n + k] - g * m;
        if (pos >= m || take[pos]) return false;
        if (s.value(r, g * n + k) != 0.0) {
          take[pos] = 1;
          ++chosen;
        }
      }
      for (std::size_t k = 0; k < m && chosen < n; ++k) {
        if (!take[k]) {
          take[k] = 1;
          ++chosen;
        }
      }
      std::size_t slot = g * n;
      for (std::size_t k = 0; k < m; ++k) {
        if (take[k] && cols[slot++] != g * m + k) return false;
      }
    }
    for (std::size_t bit = used_bits; bit < stride * 8; ++bit) {
      if ((s.meta()[r * stride + bit / 8] >> (bit % 8)) & 1) return false;
    }
  }
  return true;
}

std::uint64_t storage_bits(std::size_t rows, std::size_t cols, NMPattern p, ElementType t) {
  const std::uint64_t kept = static_cast<std::uint64_t>(rows) * (cols / static_cast<std::size_t>(p.m)) *
                             static_cast<std::uint64_t>(p.n);
  return kept * static_cast<std::uint64_t>(bit_width(t) + p.index_bits());
}

std::uint64_t storage_bits(const SparseNM& s) {
  return storage_bits(s.rows(), s.cols(), s.pattern(), s.dtype());
}

std::uint64_t dense_bits(const SparseNM& s) {
  return static_cast<std::uint64_t>(s.rows()) * s.cols() *
         static_cast<std::uint64_t>(bit_width(s.dtype()));
}

}  // namespace nmsparse
