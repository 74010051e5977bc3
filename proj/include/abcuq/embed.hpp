#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "abcuq/core.hpp"
#include "abcuq/error.hpp"
#include "abcuq/random.hpp"

namespace abcuq {

inline constexpr const char* kDefaultApiKeyEnv = "ABC_UQ_API_KEY";

enum class EmbedderKind { RemoteHttp, HashedBagOfWords };

struct EmbedderConfig {
  EmbedderKind kind = EmbedderKind::HashedBagOfWords;
  std::optional<std::string> endpoint;
  std::optional<std::string> model_name;
  std::size_t dim = 256;
  std::chrono::milliseconds timeout{30000};
  int max_retries = 3;
  std::chrono::milliseconds retry_backoff{250};
  bool cache_enabled = true;
  std::string api_key_env = kDefaultApiKeyEnv;

  void validate() const {
    require(dim > 0, ErrorKind::Config, "embedder dim must be > 0");
    require(max_retries >= 0, ErrorKind::Config, "embedder max_retries must be >= 0");
    if (kind == EmbedderKind::RemoteHttp) {
      require(endpoint && !endpoint->empty(), ErrorKind::Config, "remote embedder needs an endpoint");
      require(model_name && !model_name->empty(), ErrorKind::Config,
              "remote embedder needs a model name");
    }
  }
};

/// Maps text into the shared space where simulated and observed descriptions
/// are compared. Implementations must be safe for concurrent calls.
class Embedder {
 public:
  virtual ~Embedder() = default;

  EmbeddingVector embed(std::string_view text) const {
    require(!text.empty(), ErrorKind::Input, "cannot embed empty text");
    EmbeddingVector v = do_embed(text);
    require(v.dim() == dim(), ErrorKind::Contract,
            "embedding dim " + std::to_string(v.dim()) + " != configured " + std::to_string(dim()));
    return v;
  }

  virtual std::size_t dim() const = 0;
  virtual std::string model_name() const = 0;

 private:
  virtual EmbeddingVector do_embed(std::string_view text) const = 0;
};

/// Offline deterministic embedder: lowercase alphanumeric tokens hashed into
/// `dim` buckets, counted, then L2-normalized.
class HashedBagOfWordsEmbedder final : public Embedder {
 public:
  explicit HashedBagOfWordsEmbedder(std::size_t dim) : dim_(dim) {
    require(dim > 0, ErrorKind::Config, "embedder dim must be > 0");
  }

  std::size_t dim() const override { return dim_; }
  std::string model_name() const override { return "hashed-bow-" + std::to_string(dim_); }

  static std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
      const auto c = static_cast<unsigned char>(ch);
      // Bytes >= 0x80 are kept so UTF-8 words stay whole.
      const bool word = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
                        (c >= 'A' && c <= 'Z') || c >= 0x80;
      if (word) {
        cur.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : ch);
      } else if (!cur.empty()) {
        tokens.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
  }

 private:
  EmbeddingVector do_embed(std::string_view text) const override {
    std::vector<double> counts(dim_, 0.0);
    const auto tokens = tokenize(text);
    require(!tokens.empty(), ErrorKind::Input, "text has no alphanumeric tokens");
    for (const auto& tok : tokens) counts[fnv1a64(tok) % dim_] += 1.0;
    double norm2 = 0.0;
    for (double c : counts) norm2 += c * c;
    const double norm = std::sqrt(norm2);
    for (double& c : counts) c /= norm;
    return EmbeddingVector(std::move(counts));
  }

  std::size_t dim_;
};

/// Memoizes another embedder keyed by (model name, exact text bytes). Concurrent
/// requests for the same key share one underlying call.
class CachingEmbedder final : public Embedder {
 public:
  explicit CachingEmbedder(std::shared_ptr<const Embedder> inner) : inner_(std::move(inner)) {
    require(inner_ != nullptr, ErrorKind::Contract, "caching embedder needs an inner embedder");
  }

  std::size_t dim() const override { return inner_->dim(); }
  std::string model_name() const override { return inner_->model_name(); }

  std::size_t cached_entries() const {
    std::lock_guard lock(mu_);
    return cache_.size();
  }

 private:
  EmbeddingVector do_embed(std::string_view text) const override {
    Key key{inner_->model_name(), std::string(text)};
    std::shared_future<EmbeddingVector> fut;
    std::optional<std::promise<EmbeddingVector>> owner;
    {
      std::lock_guard lock(mu_);
      auto it = cache_.find(key);
      if (it != cache_.end()) {
        fut = it->second;
      } else {
        owner.emplace();
        fut = owner->get_future().share();
        cache_.emplace(key, fut);
      }
    }
    if (owner) {
      try {
        owner->set_value(inner_->embed(text));
      } catch (...) {
        // Failed lookups are not cached; the next caller retries.
        owner->set_exception(std::current_exception());
        std::lock_guard lock(mu_);
        cache_.erase(key);
      }
    }
    return fut.get();
  }

  using Key = std::pair<std::string, std::string>;

  std::shared_ptr<const Embedder> inner_;
  mutable std::mutex mu_;
  mutable std::map<Key, std::shared_future<EmbeddingVector>> cache_;
};

/// 1 - cosine similarity, in [0, 2]. Zero vectors are rejected.
inline double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
  require(a.dim() == b.dim(), ErrorKind::Contract,
          "dimension mismatch " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  require(na > 0.0 && nb > 0.0, ErrorKind::Input, "cosine distance undefined for a zero vector");
  const double d = 1.0 - dot / std::sqrt(na * nb);
  return std::clamp(d, 0.0, 2.0);
}

}  // namespace abcuq
