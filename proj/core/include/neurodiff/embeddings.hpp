// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_EMBEDDINGS_HPP_
#define NEURODIFF_EMBEDDINGS_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "neurodiff/conditioning.hpp"

namespace neurodiff::embedding {

using conditioning::ConditionEmbedding;

inline constexpr const char* kVectorsFile = "embeddings.f32";
inline constexpr const char* kIndexFile = "embeddings.index.json";

enum class Source { kFile, kSynthetic, kRemote };

std::string_view to_string(Source source);

/// Image embeddings keyed by image ID, one row each.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  /// `vectors` is [ids.size(), dim]. Throws on duplicate IDs, row-count
  /// mismatch or non-finite entries.
  EmbeddingIndex(std::vector<std::string> ids, nn::Tensor vectors, Source source);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  Source source() const { return source_; }
  const std::vector<std::string>& image_ids() const { return ids_; }
  const nn::Tensor& vectors() const { return vectors_; }

  bool contains(const std::string& image_id) const { return rows_.contains(image_id); }
  std::span<const double> row(const std::string& image_id) const;

  /// Single-token condition for `image_id`. Unknown IDs raise LookupError
  /// with the closest known IDs.
  ConditionEmbedding get(const std::string& image_id) const;

 private:
  std::vector<std::string> ids_;
  nn::Tensor vectors_;
  std::size_t dim_ = 0;
  Source source_ = Source::kFile;
  std::unordered_map<std::string, std::size_t> rows_;
};

/// Reads `embeddings.f32` + `embeddings.index.json` from `dir`.
/// `expected_dim` of 0 skips the width check.
EmbeddingIndex load_embedding_file(const std::filesystem::path& dir,
                                   std::size_t expected_dim = 768);
void write_embedding_file(const EmbeddingIndex& index, const std::filesystem::path& dir);

/// Unit-norm vector seeded by (seed, image_id); identical on every platform.
std::vector<double> synthetic_embedding(std::uint64_t seed, std::string_view image_id,
                                        std::size_t dim);
EmbeddingIndex synthetic_index(std::uint64_t seed, const std::vector<std::string>& image_ids,
                               std::size_t dim);

/// Up to `limit` known IDs ordered by edit distance to `query`.
std::vector<std::string> nearest_ids(const std::vector<std::string>& known,
                                     std::string_view query, std::size_t limit = 3);

/// Anything that can serve a condition per image ID.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual ConditionEmbedding get(const std::string& image_id) = 0;
  virtual std::size_t dim() const = 0;
};

/// Serves a loaded or synthetic index.
class IndexProvider : public EmbeddingProvider {
 public:
  explicit IndexProvider(EmbeddingIndex index) : index_(std::move(index)) {}
  ConditionEmbedding get(const std::string& image_id) override { return index_.get(image_id); }
  std::size_t dim() const override { return index_.dim(); }
  const EmbeddingIndex& index() const { return index_; }

 private:
  EmbeddingIndex index_;
};

struct RemoteOptions {
  /// Base URL, e.g. "http://127.0.0.1:8500".
  std::string url;
  std::string endpoint = "/embed";
  std::size_t dim = 768;
  double timeout_s = 30.0;
  /// Directory holding the image files; `<image_dir>/<image_id>` plus any
  /// extension is sent as the request body.
  std::filesystem::path image_dir;
};

/// Client for the embedding service.
///
/// Request: multipart POST to `endpoint` with form fields `image_id` (text)
/// and `image` (file bytes). Response: JSON {image_id, dim, vector}. Results
/// are cached per image ID; failures raise ProviderError and are not cached.
class RemoteProvider : public EmbeddingProvider {
 public:
  explicit RemoteProvider(RemoteOptions options);

  ConditionEmbedding get(const std::string& image_id) override;
  std::size_t dim() const override { return options_.dim; }

  /// Sends explicit image bytes, bypassing `image_dir`.
  ConditionEmbedding fetch(const std::string& image_id, const std::string& image_bytes);

  std::size_t cache_size() const;

 private:
  std::string read_image(const std::string& image_id) const;

  RemoteOptions options_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, std::vector<double>> cache_;
};

/// Parses and validates a service response body.
std::vector<double> parse_remote_response(const std::string& body, const std::string& image_id,
                                          std::size_t dim);

}  // namespace neurodiff::embedding

#endif  // NEURODIFF_EMBEDDINGS_HPP_
