// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/embeddings.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "neurodiff/errors.hpp"
#include "test_util.hpp"

namespace neurodiff::embedding {
namespace {

using nn::Tensor;
using testing::TempDir;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

TEST(SyntheticEmbedding, DeterministicUnitNorm) {
  auto a = synthetic_embedding(1, "img_a", 768);
  EXPECT_EQ(a, synthetic_embedding(1, "img_a", 768));
  EXPECT_NEAR(dot(a, a), 1.0, 1e-6);
  auto b = synthetic_embedding(1, "img_b", 768);
  EXPECT_LT(std::abs(dot(a, b)), 0.5);
  EXPECT_NE(a, synthetic_embedding(2, "img_a", 768));
  EXPECT_EQ(synthetic_embedding(7, "x", 1).size(), 1u);
  EXPECT_NEAR(std::abs(synthetic_embedding(7, "x", 1)[0]), 1.0, 1e-15);
}

// Pinned generator output. A change here invalidates stored synthetic
// datasets. The tolerance absorbs libm ulp differences in log/cos.
TEST(SyntheticEmbedding, FrozenValues) {
  auto v = synthetic_embedding(1, "img_a", 4);
  const double frozen[4] = {-0.50412374828950579, 0.46478922971841008, 0.72679079240474409,
                            -0.040066974230530343};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(v[i], frozen[i], 1e-12);
}

TEST(EmbeddingIndex, LookupAndNearestIds) {
  auto index = synthetic_index(3, {"cat_01", "cat_02", "dog_01"}, 16);
  EXPECT_EQ(index.size(), 3u);
  EXPECT_EQ(index.source(), Source::kSynthetic);
  auto c = index.get("cat_02");
  EXPECT_EQ(c.tokens.shape(), (nn::Shape{1, 16}));
  EXPECT_EQ(c.image_id, "cat_02");
  auto expected = synthetic_embedding(3, "cat_02", 16);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(c.tokens[i], expected[i]);
  EXPECT_EQ(index.get("cat_02").tokens, c.tokens);
  EXPECT_NE(index.get("cat_01").tokens, c.tokens);
  try {
    index.get("cat_03");
    FAIL();
  } catch (const LookupError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("cat_03"), std::string::npos);
    EXPECT_NE(msg.find("'cat_01'"), std::string::npos);
  }
  EXPECT_EQ(nearest_ids({"abc", "abd", "xyz"}, "abe", 2),
            (std::vector<std::string>{"abc", "abd"}));
}

TEST(EmbeddingIndex, RejectsBadContent) {
  EXPECT_THROW(EmbeddingIndex({"a", "a"}, Tensor({2, 4}), Source::kFile), FormatError);
  EXPECT_THROW(EmbeddingIndex({"a"}, Tensor({2, 4}), Source::kFile), FormatError);
  Tensor bad({1, 4});
  bad[2] = INFINITY;
  EXPECT_THROW(EmbeddingIndex({"a"}, bad, Source::kFile), FormatError);
}

TEST(EmbeddingFile, RoundTripByteForByte) {
  TempDir dir("emb");
  auto index = synthetic_index(5, {"a", "b", "c"}, 768);
  write_embedding_file(index, dir.path());
  auto loaded = load_embedding_file(dir.path());
  EXPECT_EQ(loaded.size(), 3u);
  EXPECT_EQ(loaded.dim(), 768u);
  EXPECT_EQ(loaded.source(), Source::kFile);
  EXPECT_EQ(loaded.image_ids(), index.image_ids());
  for (std::size_t i = 0; i < loaded.vectors().numel(); ++i) {
    EXPECT_EQ(loaded.vectors()[i], io::to_f32(index.vectors()[i]));
  }
  TempDir again("emb2");
  write_embedding_file(loaded, again.path());
  EXPECT_EQ(testing::slurp(dir / kVectorsFile), testing::slurp(again / kVectorsFile));
  EXPECT_EQ(testing::slurp(dir / kIndexFile), testing::slurp(again / kIndexFile));
}

TEST(EmbeddingFile, ValidationErrors) {
  TempDir dir("embbad");
  write_embedding_file(synthetic_index(5, {"a", "b"}, 512), dir.path());
  try {
    load_embedding_file(dir.path(), 768);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("cross-attention dimension is set to 768"),
              std::string::npos);
  }
  EXPECT_NO_THROW(load_embedding_file(dir.path(), 512));

  // Row count disagreeing with the id list.
  io::write_file(dir / kIndexFile, R"({"dim": 512, "ids": ["a", "b", "c"]})");
  try {
    load_embedding_file(dir.path(), 512);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("ids"), std::string::npos);
  }
  io::write_file(dir / kIndexFile, R"({"ids": ["a", "b"]})");
  EXPECT_THROW(load_embedding_file(dir.path(), 512), FormatError);
  io::write_file(dir / kIndexFile, "not json");
  EXPECT_THROW(load_embedding_file(dir.path(), 512), FormatError);
  TempDir empty("embnone");
  EXPECT_THROW(load_embedding_file(empty.path()), IoError);
}

// In-process service speaking the remote protocol.
class FakeService {
 public:
  explicit FakeService(std::size_t dim) : dim_(dim) {
    server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      if (!req.has_file("image_id") || !req.has_file("image")) {
        res.status = 400;
        return;
      }
      const std::string id = req.get_file_value("image_id").content;
      last_image = req.get_file_value("image").content;
      if (id == "broken") {
        res.status = 500;
        res.set_content("boom", "text/plain");
        return;
      }
      nlohmann::json doc;
      doc["image_id"] = id == "liar" ? "someone_else" : id;
      doc["dim"] = id == "narrow" ? dim_ / 2 : dim_;
      doc["vector"] = synthetic_embedding(42, id, id == "narrow" ? dim_ / 2 : dim_);
      res.set_content(doc.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeService() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::atomic<int> requests{0};
  std::string last_image;

 private:
  std::size_t dim_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST(RemoteProvider, FetchesValidatesAndCaches) {
  FakeService service(8);
  TempDir images("img");
  io::write_file(images / "cat.png", "PNGDATA");
  RemoteProvider provider({service.url(), "/embed", 8, 5.0, images.path()});
  auto c = provider.get("cat");
  EXPECT_EQ(service.last_image, "PNGDATA");
  EXPECT_EQ(c.tokens.shape(), (nn::Shape{1, 8}));
  auto expected = synthetic_embedding(42, "cat", 8);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(c.tokens[i], expected[i]);
  EXPECT_EQ(provider.get("cat").tokens, c.tokens);
  EXPECT_EQ(service.requests.load(), 1);
  EXPECT_EQ(provider.cache_size(), 1u);

  EXPECT_THROW(provider.fetch("broken", "x"), ProviderError);
  EXPECT_THROW(provider.fetch("liar", "x"), ProviderError);
  EXPECT_THROW(provider.fetch("narrow", "x"), ProviderError);
  EXPECT_THROW(provider.get("missing_image"), ProviderError);
  EXPECT_EQ(provider.cache_size(), 1u);
}

TEST(RemoteProvider, TransportFailureIsProviderError) {
  int port;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  RemoteProvider provider({"http://127.0.0.1:" + std::to_string(port), "/embed", 8, 1.0, {}});
  EXPECT_THROW(provider.fetch("cat", "bytes"), ProviderError);
}

TEST(RemoteResponse, Parsing) {
  EXPECT_EQ(parse_remote_response(R"({"image_id":"a","dim":2,"vector":[0.5,-1]})", "a", 2),
            (std::vector<double>{0.5, -1.0}));
  EXPECT_THROW(parse_remote_response(R"({"image_id":"a","dim":2,"vector":[0.5]})", "a", 2),
               ProviderError);
  EXPECT_THROW(parse_remote_response(R"({"image_id":"a","dim":2,"vector":[0.5,"x"]})", "a", 2),
               ProviderError);
  EXPECT_THROW(parse_remote_response("[]", "a", 2), ProviderError);
  EXPECT_THROW(parse_remote_response("{", "a", 2), ProviderError);
}

}  // namespace
}  // namespace neurodiff::embedding
