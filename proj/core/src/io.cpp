// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "neurodiff/errors.hpp"

namespace neurodiff::io {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return std::move(ss).str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t decode_u32(std::string_view bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) throw FormatError("truncated 32-bit field");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

std::uint64_t decode_u64(std::string_view bytes, std::size_t offset) {
  if (offset + 8 > bytes.size()) throw FormatError("truncated 64-bit field");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

void append_f32(std::string& out, std::span<const double> values) {
  out.reserve(out.size() + 4 * values.size());
  for (double v : values) append_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::vector<double> decode_f32(std::string_view bytes) {
  if (bytes.size() % 4 != 0) {
    throw FormatError("float32 block of " + std::to_string(bytes.size()) +
                      " bytes is not a whole number of values");
  }
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::bit_cast<float>(decode_u32(bytes, 4 * i));
  }
  return out;
}

std::vector<double> read_f32_range(const fs::path& path, std::size_t first, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(static_cast<std::streamoff>(first * 4));
  std::string buf(count * 4, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    throw FormatError(path.string() + " is truncated: wanted values " + std::to_string(first) +
                      ".." + std::to_string(first + count));
  }
  return decode_f32(buf);
}

double to_f32(double v) { return static_cast<float>(v); }

}  // namespace neurodiff::io
