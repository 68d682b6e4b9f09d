// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/errors.hpp"

namespace neurodiff {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kData: return "data";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kLookup: return "lookup";
    case ErrorKind::kState: return "state";
    case ErrorKind::kCompatibility: return "compatibility";
    case ErrorKind::kIndex: return "index";
    case ErrorKind::kMetric: return "metric";
    case ErrorKind::kMontage: return "montage";
    case ErrorKind::kProvider: return "provider";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace neurodiff
