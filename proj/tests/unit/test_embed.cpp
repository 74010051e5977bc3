#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <future>
#include <thread>

#include "abcuq/embed.hpp"
#include "abcuq/random.hpp"

using namespace abcuq;

namespace {

class CountingEmbedder final : public Embedder {
 public:
  std::size_t dim() const override { return 2; }
  std::string model_name() const override { return "counting"; }
  mutable std::atomic<int> calls{0};
  mutable std::atomic<bool> fail{false};

 private:
  EmbeddingVector do_embed(std::string_view text) const override {
    ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    if (fail) throw Error(ErrorKind::Transport, "down");
    return EmbeddingVector({1.0, static_cast<double>(text.size())});
  }
};

class WrongDimEmbedder final : public Embedder {
 public:
  std::size_t dim() const override { return 3; }
  std::string model_name() const override { return "wrong"; }

 private:
  EmbeddingVector do_embed(std::string_view) const override { return EmbeddingVector({1.0, 2.0}); }
};

EmbeddingVector random_vec(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal();
  return EmbeddingVector(std::move(v));
}

double norm(const EmbeddingVector& v) {
  double s = 0.0;
  for (double x : v.values()) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST(HashedBagOfWords, EmptyTextIsInputError) {
  HashedBagOfWordsEmbedder e(64);
  try {
    e.embed("");
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::Input);
  }
  EXPECT_THROW(e.embed("  ,;  "), Error);
}

TEST(HashedBagOfWords, DeterministicAndUnitNorm) {
  HashedBagOfWordsEmbedder e(64);
  const auto a = e.embed("ulcer on tongue");
  const auto b = e.embed("ulcer on tongue");
  EXPECT_EQ(a, b);
  for (const char* text : {"ulcer on tongue", "A painless, bluish swelling on the lower lip",
                           "x", "fever fever fever rash"})
    EXPECT_NEAR(norm(e.embed(text)), 1.0, 1e-12);
  EXPECT_EQ(a.dim(), 64u);
}

TEST(HashedBagOfWords, TokenizesCaseInsensitively) {
  HashedBagOfWordsEmbedder e(32);
  EXPECT_EQ(e.embed("Ulcer ON tongue"), e.embed("ulcer on  tongue!"));
  EXPECT_EQ(HashedBagOfWordsEmbedder::tokenize("Red-white, patch2"),
            (std::vector<std::string>{"red", "white", "patch2"}));
}

TEST(Embedder, DimMismatchIsContractError) {
  WrongDimEmbedder e;
  try {
    e.embed("text");
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::Contract);
  }
}

TEST(CosineDistance, Examples) {
  const EmbeddingVector v({0.3, -1.2, 2.0});
  EXPECT_NEAR(cosine_distance(v, v), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(cosine_distance(EmbeddingVector({1.0, 0.0}), EmbeddingVector({0.0, 1.0})), 1.0);
  EXPECT_DOUBLE_EQ(cosine_distance(v, EmbeddingVector({-0.3, 1.2, -2.0})), 2.0);
}

TEST(CosineDistance, Errors) {
  try {
    cosine_distance(EmbeddingVector({1.0, 0.0}), EmbeddingVector({1.0, 0.0, 0.0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Contract);
  }
  try {
    cosine_distance(EmbeddingVector({0.0, 0.0}), EmbeddingVector({1.0, 0.0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
  }
}

TEST(CosineDistance, SymmetricScaleInvariantAndBounded) {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const auto dim = 1 + rng.uniform_index(16);
    const auto a = random_vec(rng, dim);
    const auto b = random_vec(rng, dim);
    const double d = cosine_distance(a, b);
    EXPECT_EQ(d, cosine_distance(b, a));
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
    const double c = std::exp(8.0 * rng.uniform() - 4.0);
    std::vector<double> scaled(a.values().begin(), a.values().end());
    for (double& x : scaled) x *= c;
    EXPECT_NEAR(cosine_distance(EmbeddingVector(scaled), b), d, 1e-12);
  }
}

TEST(CachingEmbedder, OneInnerCallPerText) {
  auto inner = std::make_shared<CountingEmbedder>();
  CachingEmbedder cache(inner);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(cache.embed("abc")[1], 3.0);
  EXPECT_EQ(inner->calls.load(), 1);
  cache.embed("abcd");
  EXPECT_EQ(inner->calls.load(), 2);
  EXPECT_EQ(cache.cached_entries(), 2u);
}

TEST(CachingEmbedder, ConcurrentCallersShareOneRequest) {
  auto inner = std::make_shared<CountingEmbedder>();
  CachingEmbedder cache(inner);
  std::vector<std::future<EmbeddingVector>> fs;
  for (int i = 0; i < 16; ++i)
    fs.push_back(std::async(std::launch::async, [&] { return cache.embed("same text"); }));
  for (auto& f : fs) EXPECT_EQ(f.get()[1], 9.0);
  EXPECT_EQ(inner->calls.load(), 1);
}

TEST(CachingEmbedder, FailuresAreNotCached) {
  auto inner = std::make_shared<CountingEmbedder>();
  CachingEmbedder cache(inner);
  inner->fail = true;
  EXPECT_THROW(cache.embed("x"), Error);
  inner->fail = false;
  EXPECT_NO_THROW(cache.embed("x"));
  EXPECT_EQ(inner->calls.load(), 2);
}

TEST(EmbedderConfig, RemoteNeedsEndpointAndModel) {
  EmbedderConfig cfg;
  cfg.kind = EmbedderKind::RemoteHttp;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.endpoint = "http://localhost:1/v1/embeddings";
  EXPECT_THROW(cfg.validate(), Error);
  cfg.model_name = "m";
  EXPECT_NO_THROW(cfg.validate());
  cfg.dim = 0;
  EXPECT_THROW(cfg.validate(), Error);
}
