// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_IO_HPP_
#define NEURODIFF_IO_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace neurodiff::io {

std::string read_file(const std::filesystem::path& path);
/// Writes via a sibling temporary file and rename, so readers never see a
/// partial file.
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Little-endian float32 encoding; values are narrowed from double.
void append_f32(std::string& out, std::span<const double> values);
std::vector<double> decode_f32(std::string_view bytes);
/// Reads `count` floats starting at float offset `first` from an open file.
std::vector<double> read_f32_range(const std::filesystem::path& path, std::size_t first,
                                   std::size_t count);

void append_u32(std::string& out, std::uint32_t v);
void append_u64(std::string& out, std::uint64_t v);
std::uint32_t decode_u32(std::string_view bytes, std::size_t offset);
std::uint64_t decode_u64(std::string_view bytes, std::size_t offset);

/// Rounds through float32, matching what a write/read cycle yields.
double to_f32(double v);

}  // namespace neurodiff::io

#endif  // NEURODIFF_IO_HPP_
