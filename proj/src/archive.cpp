// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#include "nmsparse/archive.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace nmsparse {

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::InvalidEntry, msg); }

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::size_t size() const { return out_.size(); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::span<const std::uint8_t> take(std::uint64_t n) {
    need(n);
    auto s = in_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) {
      throw Error(ErrorCode::Truncated, "archive truncated at byte " + std::to_string(pos_));
    }
  }
  std::uint64_t le(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::size_t element_bytes(ElementType t) { return static_cast<std::size_t>(bit_width(t) / 8); }

void encode_elements(Writer& w, std::span<const double> values, ElementType t) {
  for (double v : values) {
    if (std::isnan(v)) invalid("NaN elements cannot be archived");
    switch (t) {
      case ElementType::FP32:
      case ElementType::TF32:
        w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        break;
      case ElementType::FP16:
        w.u16(fp16_bits(v));
        break;
      case ElementType::BF16:
        w.u16(bf16_bits(v));
        break;
      case ElementType::INT8:
        w.u8(static_cast<std::uint8_t>(static_cast<std::int8_t>(v)));
        break;
      case ElementType::INT32:
        w.u32(static_cast<std::uint32_t>(static_cast<std::int32_t>(v)));
        break;
    }
  }
}

std::vector<double> decode_elements(std::span<const std::uint8_t> raw, std::size_t count,
                                    ElementType t) {
  Reader r(raw);
  std::vector<double> out(count);
  for (auto& v : out) {
    switch (t) {
      case ElementType::FP32:
      case ElementType::TF32:
        v = std::bit_cast<float>(r.u32());
        break;
      case ElementType::FP16:
        v = fp16_from_bits(r.u16());
        break;
      case ElementType::BF16:
        v = bf16_from_bits(r.u16());
        break;
      case ElementType::INT8:
        v = static_cast<std::int8_t>(r.u8());
        break;
      case ElementType::INT32:
        v = static_cast<std::int32_t>(r.u32());
        break;
    }
    if (std::isnan(v)) invalid("NaN elements are not supported");
    if (!representable(v, t)) invalid("element not representable in " + std::string(to_string(t)));
  }
  return out;
}

std::uint32_t dim(std::size_t d) {
  if (d > 0xffffffffu) invalid("dimension too large");
  return static_cast<std::uint32_t>(d);
}

std::size_t mask_row_bytes(std::size_t cols) { return (cols + 7) / 8; }

}  // namespace

std::string_view to_string(EntryKind k) {
  switch (k) {
    case EntryKind::Dense: return "dense";
    case EntryKind::SparseNM: return "sparse_nm";
    case EntryKind::ScaleSet: return "scale_set";
    case EntryKind::Mask: return "mask";
  }
  return "?";
}

const ArchiveEntry* TensorArchive::find(std::string_view name) const {
  for (const ArchiveEntry& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void TensorArchive::put(std::string name, EntryValue value) {
  for (ArchiveEntry& e : entries) {
    if (e.name == name) {
      e.value = std::move(value);
      return;
    }
  }
  entries.push_back({std::move(name), std::move(value)});
}

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive) {
  Writer w;
  for (char c : TensorArchive::kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(archive.version);
  w.u16(0);
  w.u32(dim(archive.entries.size()));
  std::set<std::string> names;
  for (const ArchiveEntry& e : archive.entries) {
    if (e.name.size() > 0xffff) invalid("entry name too long");
    if (!names.insert(e.name).second) invalid("duplicate entry name '" + e.name + "'");
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(e.name.data()), e.name.size()));
    w.u8(static_cast<std::uint8_t>(e.kind()));

    Writer payload;
    if (const auto* d = std::get_if<DenseMatrix>(&e.value)) {
      w.u8(static_cast<std::uint8_t>(d->dtype()));
      w.u8(2);
      w.u8(0);
      w.u32(dim(d->rows()));
      w.u32(dim(d->cols()));
      encode_elements(payload, d->data(), d->dtype());
    } else if (const auto* s = std::get_if<SparseNM>(&e.value)) {
      w.u8(static_cast<std::uint8_t>(s->dtype()));
      w.u8(2);
      w.u8(0);
      w.u32(dim(s->rows()));
      w.u32(dim(s->cols()));
      w.u8(static_cast<std::uint8_t>(s->pattern().n));
      w.u8(static_cast<std::uint8_t>(s->pattern().m));
      w.u16(0);
      encode_elements(payload, s->values(), s->dtype());
      payload.bytes(s->meta());
    } else if (const auto* sc = std::get_if<ScaleSet>(&e.value)) {
      w.u8(static_cast<std::uint8_t>(ElementType::FP32));
      w.u8(1);
      w.u8(0);
      w.u32(dim(sc->scales.size()));
      w.u8(static_cast<std::uint8_t>(sc->granularity));
      w.u8(0);
      w.u16(0);
      for (double v : sc->scales) {
        if (!(v > 0) || !representable(v, ElementType::FP32)) {
          invalid("scale set '" + e.name + "' needs positive FP32 scales");
        }
      }
      encode_elements(payload, sc->scales, ElementType::FP32);
    } else {
      const auto& m = std::get<Mask>(e.value);
      w.u8(static_cast<std::uint8_t>(ElementType::INT8));
      w.u8(2);
      w.u8(0);
      w.u32(dim(m.rows()));
      w.u32(dim(m.cols()));
      const std::size_t stride = mask_row_bytes(m.cols());
      std::vector<std::uint8_t> bits(m.rows() * stride, 0);
      for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
          if (m(r, c)) bits[r * stride + c / 8] |= static_cast<std::uint8_t>(1u << (c % 8));
        }
      }
      payload.bytes(bits);
    }
    w.u64(payload.size());
    w.bytes(payload.buffer());
  }
  return std::move(w.buffer());
}

TensorArchive decode_archive(std::span<const std::uint8_t> bytes) {
  const std::size_t probe = std::min<std::size_t>(bytes.size(), 4);
  if (probe > 0 && std::memcmp(bytes.data(), TensorArchive::kMagic, probe) != 0) {
    throw Error(ErrorCode::BadMagic, "bad magic: not an S24T archive");
  }
  Reader r(bytes);
  r.take(4);
  TensorArchive archive;
  archive.version = r.u16();
  if (archive.version != TensorArchive::kVersion) {
    throw Error(ErrorCode::VersionMismatch,
                "version mismatch: archive is v" + std::to_string(archive.version) +
                    ", reader supports v" + std::to_string(TensorArchive::kVersion));
  }
  if (r.u16() != 0) invalid("reserved header field is nonzero");
  const std::uint32_t count = r.u32();
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    const auto name_bytes = r.take(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    if (!names.insert(name).second) invalid("duplicate entry name '" + name + "'");
    const std::string who = "entry '" + name + "': ";

    const std::uint8_t kind = r.u8();
    const std::uint8_t dtype_tag = r.u8();
    const std::uint8_t ndims = r.u8();
    if (r.u8() != 0) invalid(who + "reserved byte is nonzero");
    if (kind > static_cast<std::uint8_t>(EntryKind::Mask)) invalid(who + "unknown kind " + std::to_string(kind));
    if (dtype_tag > static_cast<std::uint8_t>(ElementType::INT32)) {
      invalid(who + "unknown dtype " + std::to_string(dtype_tag));
    }
    const auto ekind = static_cast<EntryKind>(kind);
    const auto dtype = static_cast<ElementType>(dtype_tag);
    const std::uint8_t want_dims = ekind == EntryKind::ScaleSet ? 1 : 2;
    if (ndims != want_dims) invalid(who + "expected " + std::to_string(want_dims) + " dims");
    std::vector<std::size_t> dims(ndims);
    for (auto& d : dims) d = r.u32();

    NMPattern pattern;
    Granularity granularity = Granularity::PerTensor;
    if (ekind == EntryKind::SparseNM) {
      pattern.n = r.u8();
      pattern.m = r.u8();
      if (r.u16() != 0) invalid(who + "reserved pattern field is nonzero");
      if (!pattern.valid() || dims[1] % static_cast<std::size_t>(pattern.m) != 0) {
        invalid(who + "invalid pattern " + pattern.name());
      }
    } else if (ekind == EntryKind::ScaleSet) {
      const std::uint8_t g = r.u8();
      if (g > static_cast<std::uint8_t>(Granularity::PerRow)) invalid(who + "unknown granularity");
      granularity = static_cast<Granularity>(g);
      if (r.u8() != 0 || r.u16() != 0) invalid(who + "reserved scale field is nonzero");
      if (dtype != ElementType::FP32) invalid(who + "scale sets are stored as fp32");
    } else if (ekind == EntryKind::Mask && dtype != ElementType::INT8) {
      invalid(who + "masks carry the int8 dtype tag");
    }

    // 128-bit so hostile dims cannot wrap around to a small length.
    using Wide = unsigned __int128;
    Wide expected = 0;
    const auto esize = static_cast<Wide>(element_bytes(dtype));
    switch (ekind) {
      case EntryKind::Dense:
        expected = static_cast<Wide>(dims[0]) * dims[1] * esize;
        break;
      case EntryKind::SparseNM: {
        const Wide kept = dims[1] / static_cast<std::size_t>(pattern.m) *
                          static_cast<std::size_t>(pattern.n);
        expected = static_cast<Wide>(dims[0]) *
                   (kept * esize + SparseNM::meta_row_bytes(dims[1], pattern));
        break;
      }
      case EntryKind::ScaleSet:
        expected = static_cast<Wide>(dims[0]) * 4;
        break;
      case EntryKind::Mask:
        expected = static_cast<Wide>(dims[0]) * mask_row_bytes(dims[1]);
        break;
    }
    const std::uint64_t payload_len = r.u64();
    if (payload_len != expected) {
      invalid(who + "payload length " + std::to_string(payload_len) + " does not match dims");
    }
    const auto payload = r.take(payload_len);

    switch (ekind) {
      case EntryKind::Dense:
        archive.entries.push_back(
            {name, DenseMatrix(dims[0], dims[1], dtype,
                               decode_elements(payload, dims[0] * dims[1], dtype))});
        break;
      case EntryKind::SparseNM: {
        const std::size_t n_values = dims[0] * (dims[1] / static_cast<std::size_t>(pattern.m) *
                                                static_cast<std::size_t>(pattern.n));
        const std::size_t value_bytes = n_values * element_bytes(dtype);
        auto values = decode_elements(payload.subspan(0, value_bytes), n_values, dtype);
        const auto meta = payload.subspan(value_bytes);
        try {
          archive.entries.push_back(
              {name, SparseNM::from_parts(dims[0], dims[1], pattern, dtype, std::move(values),
                                          std::vector<std::uint8_t>(meta.begin(), meta.end()))});
        } catch (const Error& e) {
          invalid(who + e.what());
        }
        break;
      }
      case EntryKind::ScaleSet: {
        ScaleSet s{granularity, decode_elements(payload, dims[0], ElementType::FP32)};
        for (double v : s.scales) {
          if (!(v > 0)) invalid(who + "scales must be positive");
        }
        archive.entries.push_back({name, std::move(s)});
        break;
      }
      case EntryKind::Mask: {
        Mask m(dims[0], dims[1]);
        const std::size_t stride = mask_row_bytes(dims[1]);
        for (std::size_t row = 0; row < dims[0]; ++row) {
          for (std::size_t bit = 0; bit < stride * 8; ++bit) {
            const bool set = (payload[row * stride + bit / 8] >> (bit % 8)) & 1;
            if (bit >= dims[1]) {
              if (set) invalid(who + "nonzero mask padding");
            } else {
              m.set(row, bit, set);
            }
          }
        }
        archive.entries.push_back({name, std::move(m)});
        break;
      }
    }
  }
  if (!r.done()) invalid("trailing bytes after the last entry");
  return archive;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

void write_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  write_file(path, encode_archive(archive));
}

TensorArchive read_archive(const std::filesystem::path& path) {
  return decode_archive(read_file(path));
}

}  // namespace nmsparse
