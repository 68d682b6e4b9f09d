// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "httplib.h"
#include "json.hpp"
#include "neurodiff/errors.hpp"
#include "neurodiff/io.hpp"
#include "neurodiff/nn/rng.hpp"

namespace neurodiff::embedding {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using nn::Tensor;

std::string_view to_string(Source source) {
  switch (source) {
    case Source::kFile: return "file";
    case Source::kSynthetic: return "synthetic";
    case Source::kRemote: return "remote";
  }
  return "unknown";
}

EmbeddingIndex::EmbeddingIndex(std::vector<std::string> ids, Tensor vectors, Source source)
    : ids_(std::move(ids)), vectors_(std::move(vectors)), source_(source) {
  if (vectors_.rank() != 2) {
    throw ShapeError("embedding matrix must be [n, dim], got " + nn::shape_str(vectors_.shape()));
  }
  if (vectors_.dim(0) != ids_.size()) {
    throw FormatError("embedding index has " + std::to_string(ids_.size()) + " ids but " +
                      std::to_string(vectors_.dim(0)) + " rows");
  }
  if (!vectors_.all_finite()) throw FormatError("embedding matrix has non-finite entries");
  dim_ = vectors_.dim(1);
  rows_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!rows_.emplace(ids_[i], i).second) {
      throw FormatError("duplicate image id '" + ids_[i] + "' in embedding index");
    }
  }
}

std::span<const double> EmbeddingIndex::row(const std::string& image_id) const {
  auto it = rows_.find(image_id);
  if (it == rows_.end()) {
    std::string msg = "no embedding for image id '" + image_id + "'";
    auto near = nearest_ids(ids_, image_id);
    if (!near.empty()) {
      msg += "; closest known ids:";
      for (const auto& n : near) msg += " '" + n + "'";
    }
    throw LookupError(msg);
  }
  return {vectors_.ptr() + it->second * dim_, dim_};
}

ConditionEmbedding EmbeddingIndex::get(const std::string& image_id) const {
  auto r = row(image_id);
  return {Tensor({1, dim_}, std::vector<double>(r.begin(), r.end())), image_id};
}

EmbeddingIndex load_embedding_file(const fs::path& dir, std::size_t expected_dim) {
  const fs::path index_path = dir / kIndexFile;
  const fs::path vectors_path = dir / kVectorsFile;
  json doc;
  try {
    doc = json::parse(io::read_file(index_path));
  } catch (const json::exception& e) {
    throw FormatError(index_path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("dim") || !doc["dim"].is_number_unsigned()) {
    throw FormatError(index_path.string() + ": field 'dim' missing or not a positive integer");
  }
  if (!doc.contains("ids") || !doc["ids"].is_array()) {
    throw FormatError(index_path.string() + ": field 'ids' missing or not an array");
  }
  const auto dim = doc["dim"].get<std::size_t>();
  if (dim == 0) throw FormatError(index_path.string() + ": field 'dim' must be positive");
  if (expected_dim != 0 && dim != expected_dim) {
    throw FormatError(index_path.string() + ": field 'dim' is " + std::to_string(dim) +
                      " but the cross-attention dimension is set to " +
                      std::to_string(expected_dim));
  }
  std::vector<std::string> ids;
  for (const auto& id : doc["ids"]) {
    if (!id.is_string()) throw FormatError(index_path.string() + ": field 'ids' holds a non-string");
    ids.push_back(id.get<std::string>());
  }
  auto values = io::decode_f32(io::read_file(vectors_path));
  if (values.size() != ids.size() * dim) {
    throw FormatError(vectors_path.string() + " holds " + std::to_string(values.size()) +
                      " values; field 'ids' lists " + std::to_string(ids.size()) + " rows of " +
                      std::to_string(dim));
  }
  if (ids.empty()) throw FormatError(index_path.string() + ": field 'ids' is empty");
  const std::size_t rows = ids.size();
  return EmbeddingIndex(std::move(ids), Tensor({rows, dim}, std::move(values)), Source::kFile);
}

void write_embedding_file(const EmbeddingIndex& index, const fs::path& dir) {
  ordered_json doc;
  doc["dim"] = index.dim();
  doc["ids"] = index.image_ids();
  std::string bytes;
  io::append_f32(bytes, index.vectors().data());
  io::write_file(dir / kVectorsFile, bytes);
  io::write_file(dir / kIndexFile, doc.dump(2) + "\n");
}

std::vector<double> synthetic_embedding(std::uint64_t seed, std::string_view image_id,
                                        std::size_t dim) {
  if (dim == 0) throw ConfigError("synthetic embedding width must be at least 1");
  nn::Rng rng(nn::derive_seed(seed, nn::hash_string(image_id)));
  std::vector<double> v(dim);
  double norm = 0.0;
  while (norm == 0.0) {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

EmbeddingIndex synthetic_index(std::uint64_t seed, const std::vector<std::string>& image_ids,
                               std::size_t dim) {
  Tensor vectors({image_ids.size(), dim});
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    auto v = synthetic_embedding(seed, image_ids[i], dim);
    std::copy(v.begin(), v.end(), vectors.ptr() + i * dim);
  }
  return EmbeddingIndex(image_ids, std::move(vectors), Source::kSynthetic);
}

namespace {

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

std::vector<std::string> nearest_ids(const std::vector<std::string>& known, std::string_view query,
                                     std::size_t limit) {
  std::vector<std::pair<std::size_t, const std::string*>> scored;
  scored.reserve(known.size());
  for (const auto& k : known) scored.emplace_back(edit_distance(k, query), &k);
  const std::size_t n = std::min(limit, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    [](const auto& a, const auto& b) {
                      return a.first != b.first ? a.first < b.first : *a.second < *b.second;
                    });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(*scored[i].second);
  return out;
}

std::vector<double> parse_remote_response(const std::string& body, const std::string& image_id,
                                          std::size_t dim) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::exception& e) {
    throw ProviderError("embedding service returned malformed JSON for '" + image_id +
                        "': " + e.what());
  }
  if (!doc.is_object() || !doc.contains("image_id") || !doc.contains("dim") ||
      !doc.contains("vector")) {
    throw ProviderError("embedding service response for '" + image_id +
                        "' lacks image_id, dim or vector");
  }
  if (!doc["image_id"].is_string() || doc["image_id"].get<std::string>() != image_id) {
    throw ProviderError("embedding service answered for '" + doc["image_id"].dump() +
                        "' instead of '" + image_id + "'");
  }
  if (!doc["dim"].is_number_unsigned() || doc["dim"].get<std::size_t>() != dim) {
    throw ProviderError("embedding service reports dim " + doc["dim"].dump() +
                        " but the cross-attention dimension is set to " + std::to_string(dim));
  }
  const auto& vec = doc["vector"];
  if (!vec.is_array() || vec.size() != dim) {
    throw ProviderError("embedding service vector for '" + image_id + "' has " +
                        std::to_string(vec.is_array() ? vec.size() : 0) + " entries, expected " +
                        std::to_string(dim));
  }
  std::vector<double> out;
  out.reserve(dim);
  for (const auto& x : vec) {
    if (!x.is_number() || !std::isfinite(x.get<double>())) {
      throw ProviderError("embedding service vector for '" + image_id +
                          "' has a non-finite or non-numeric entry");
    }
    out.push_back(x.get<double>());
  }
  return out;
}

RemoteProvider::RemoteProvider(RemoteOptions options) : options_(std::move(options)) {
  if (options_.url.empty()) throw ConfigError("remote embedding provider needs a url");
  if (options_.dim == 0) throw ConfigError("remote embedding width must be positive");
}

std::size_t RemoteProvider::cache_size() const {
  std::shared_lock lock(mutex_);
  return cache_.size();
}

std::string RemoteProvider::read_image(const std::string& image_id) const {
  if (options_.image_dir.empty()) {
    throw ProviderError("no image directory configured for remote embedding of '" + image_id + "'");
  }
  const fs::path exact = options_.image_dir / image_id;
  if (fs::is_regular_file(exact)) return io::read_file(exact);
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(options_.image_dir, ec)) {
    if (entry.is_regular_file() && entry.path().stem() == image_id) {
      return io::read_file(entry.path());
    }
  }
  throw ProviderError("no image file for '" + image_id + "' in " + options_.image_dir.string());
}

ConditionEmbedding RemoteProvider::get(const std::string& image_id) {
  {
    std::shared_lock lock(mutex_);
    auto it = cache_.find(image_id);
    if (it != cache_.end()) return {Tensor({1, options_.dim}, it->second), image_id};
  }
  return fetch(image_id, read_image(image_id));
}

ConditionEmbedding RemoteProvider::fetch(const std::string& image_id,
                                         const std::string& image_bytes) {
  {
    std::shared_lock lock(mutex_);
    auto it = cache_.find(image_id);
    if (it != cache_.end()) return {Tensor({1, options_.dim}, it->second), image_id};
  }
  httplib::Client client(options_.url);
  const auto secs = static_cast<time_t>(options_.timeout_s);
  const auto usecs = static_cast<time_t>((options_.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::MultipartFormDataItems items = {
      {"image_id", image_id, "", ""},
      {"image", image_bytes, image_id, "application/octet-stream"},
  };
  auto res = client.Post(options_.endpoint, items);
  if (!res) {
    throw ProviderError("embedding service " + options_.url + options_.endpoint +
                        " unreachable for '" + image_id + "': " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw ProviderError("embedding service returned HTTP " + std::to_string(res->status) +
                        " for '" + image_id + "': " + res->body.substr(0, 200));
  }
  auto vec = parse_remote_response(res->body, image_id, options_.dim);
  {
    std::unique_lock lock(mutex_);
    cache_.emplace(image_id, vec);
  }
  return {Tensor({1, options_.dim}, std::move(vec)), image_id};
}

}  // namespace neurodiff::embedding
