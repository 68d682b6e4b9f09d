// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_ERRORS_HPP_
#define NEURODIFF_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace neurodiff {

/// Broad failure classes. The CLI maps them onto process exit codes.
enum class ErrorKind {
  kShape,
  kConfig,
  kFormat,
  kData,
  kNumeric,
  kLookup,
  kState,
  kCompatibility,
  kIndex,
  kMetric,
  kMontage,
  kProvider,
  kIo,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define NEURODIFF_DEFINE_ERROR(Name, Kind)                        \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(Kind, what) {} \
  };

NEURODIFF_DEFINE_ERROR(ShapeError, ErrorKind::kShape)
NEURODIFF_DEFINE_ERROR(ConfigError, ErrorKind::kConfig)
NEURODIFF_DEFINE_ERROR(FormatError, ErrorKind::kFormat)
NEURODIFF_DEFINE_ERROR(DataError, ErrorKind::kData)
NEURODIFF_DEFINE_ERROR(NumericError, ErrorKind::kNumeric)
NEURODIFF_DEFINE_ERROR(LookupError, ErrorKind::kLookup)
NEURODIFF_DEFINE_ERROR(StateError, ErrorKind::kState)
NEURODIFF_DEFINE_ERROR(CompatibilityError, ErrorKind::kCompatibility)
NEURODIFF_DEFINE_ERROR(IndexError, ErrorKind::kIndex)
NEURODIFF_DEFINE_ERROR(MetricError, ErrorKind::kMetric)
NEURODIFF_DEFINE_ERROR(MontageError, ErrorKind::kMontage)
NEURODIFF_DEFINE_ERROR(ProviderError, ErrorKind::kProvider)
NEURODIFF_DEFINE_ERROR(IoError, ErrorKind::kIo)

#undef NEURODIFF_DEFINE_ERROR

}  // namespace neurodiff

#endif  // NEURODIFF_ERRORS_HPP_
