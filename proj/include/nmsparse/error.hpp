// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

#ifndef NMSPARSE_ERROR_HPP
#define NMSPARSE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace nmsparse {

enum class ErrorCode {
  ShapeMismatch,
  UnsupportedFormat,
  InvalidPattern,
  NonConforming,
  MalformedMetadata,
  InvalidArgument,
  Divergence,
  InvalidRecipe,
  // archive errors
  BadMagic,
  VersionMismatch,
  Truncated,
  InvalidEntry,
  Io,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nmsparse

#endif  // NMSPARSE_ERROR_HPP
