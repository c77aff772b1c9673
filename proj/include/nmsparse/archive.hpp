// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#ifndef NMSPARSE_ARCHIVE_HPP
#define NMSPARSE_ARCHIVE_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nmsparse/codec.hpp"
#include "nmsparse/dense.hpp"
#include "nmsparse/quant.hpp"

namespace nmsparse {

// Byte layout: docs/archive-format.md.

enum class EntryKind : std::uint8_t { Dense = 0, SparseNM = 1, ScaleSet = 2, Mask = 3 };

std::string_view to_string(EntryKind k);

using EntryValue = std::variant<DenseMatrix, SparseNM, ScaleSet, Mask>;

struct ArchiveEntry {
  std::string name;
  EntryValue value;

  EntryKind kind() const { return static_cast<EntryKind>(value.index()); }
};

struct TensorArchive {
  static constexpr std::uint16_t kVersion = 1;
  static constexpr char kMagic[4] = {'S', '2', '4', 'T'};

  std::uint16_t version = kVersion;
  std::vector<ArchiveEntry> entries;

  const ArchiveEntry* find(std::string_view name) const;
  /// Replaces an entry of the same name or appends.
  void put(std::string name, EntryValue value);
};

/// Throws InvalidEntry for unencodable content (duplicate or over-long
/// names, NaN elements, non-positive scales).
std::vector<std::uint8_t> encode_archive(const TensorArchive& archive);

/// Throws BadMagic, VersionMismatch, Truncated or InvalidEntry.
TensorArchive decode_archive(std::span<const std::uint8_t> bytes);

/// File wrappers; I/O failures throw Io.
void write_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive read_archive(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace nmsparse

#endif  // NMSPARSE_ARCHIVE_HPP
