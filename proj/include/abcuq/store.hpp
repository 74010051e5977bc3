#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "abcuq/core.hpp"
#include "abcuq/embed.hpp"
#include "abcuq/error.hpp"
#include "abcuq/random.hpp"
#include "abcuq/sim.hpp"

namespace abcuq {

inline constexpr int kStoreFormatVersion = 1;
inline constexpr const char* kStoreFormatName = "abcuq-vector-store";

struct StoreEntry {
  std::string text;
  EmbeddingVector embedding;

  friend bool operator==(const StoreEntry&, const StoreEntry&) = default;
};

struct StoreMeta {
  std::string model_name;
  std::size_t dim = 0;
  std::vector<std::string> labels;
  std::string label_space_hash;  // hex fingerprint of `labels`
  std::string created_at;

  friend bool operator==(const StoreMeta&, const StoreMeta&) = default;
};

/// Pre-generated, pre-embedded class-conditioned descriptions. buckets[j]
/// holds the entries for label j in persisted order.
struct VectorStore {
  StoreMeta meta;
  std::vector<std::vector<StoreEntry>> buckets;

  std::size_t total_entries() const {
    std::size_t n = 0;
    for (const auto& b : buckets) n += b.size();
    return n;
  }

  friend bool operator==(const VectorStore&, const VectorStore&) = default;
};

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

inline std::string utc_timestamp_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline StoreMeta make_store_meta(const LabelSpace& space, const Embedder& embedder,
                                 std::string created_at) {
  return {embedder.model_name(), embedder.dim(), space.names(), hex64(space.fingerprint()),
          std::move(created_at)};
}

/// Simulates and embeds `per_class` entries for every label. Entry (j, i) uses
/// sub-stream derive_seed(seed, {j, i}), so output is independent of `parallel`.
inline VectorStore build_store(const LabelSpace& space, const Simulator& sim,
                               const Embedder& embedder, int per_class, std::uint64_t seed,
                               std::string created_at = utc_timestamp_now(), int parallel = 1) {
  require(per_class >= 1, ErrorKind::Contract, "per_class must be >= 1");
  require(sim.kind() != SimulatorKind::StoreReplay, ErrorKind::Contract,
          "cannot build a store from a store-replay simulator");
  require(sim.label_count() == space.k(), ErrorKind::Contract,
          "simulator label count does not match label space");
  VectorStore store;
  store.meta = make_store_meta(space, embedder, std::move(created_at));
  store.buckets.resize(space.k());

  auto one = [&](LabelIndex j, int i) -> StoreEntry {
    try {
      auto s = sim.simulate_embedded(j, derive_seed(seed, {j, static_cast<std::uint64_t>(i)}),
                                     embedder);
      require(s.embedding.dim() == embedder.dim(), ErrorKind::Contract, "embedding dim mismatch");
      return {std::move(s.text), std::move(s.embedding)};
    } catch (const Error& e) {
      throw Error(e.kind(), "label '" + space.name(j) + "' ordinal " + std::to_string(i) + ": " +
                                e.what());
    }
  };

  const int batch = std::max(parallel, 1);
  for (LabelIndex j = 0; j < space.k(); ++j) {
    auto& bucket = store.buckets[j];
    bucket.reserve(static_cast<std::size_t>(per_class));
    for (int start = 0; start < per_class; start += batch) {
      const int end = std::min(per_class, start + batch);
      if (batch == 1) {
        bucket.push_back(one(j, start));
        continue;
      }
      std::vector<std::future<StoreEntry>> inflight;
      for (int i = start; i < end; ++i) inflight.push_back(std::async(std::launch::async, one, j, i));
      for (auto& f : inflight) bucket.push_back(f.get());
    }
  }
  return store;
}

/// Uniform draw over the bucket of `label`.
inline const StoreEntry& sample_from_store(const VectorStore& store, LabelIndex label, Rng& rng) {
  require(label < store.buckets.size(), ErrorKind::Contract,
          "label " + std::to_string(label) + " outside store label space");
  const auto& bucket = store.buckets[label];
  require(!bucket.empty(), ErrorKind::Store,
          "empty store bucket for label " + std::to_string(label));
  return bucket[rng.uniform_index(bucket.size())];
}

inline void save_store(const VectorStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  nlohmann::json header = {
      {"format", kStoreFormatName},
      {"version", kStoreFormatVersion},
      {"model", store.meta.model_name},
      {"dim", store.meta.dim},
      {"labels", store.meta.labels},
      {"label_space_hash", store.meta.label_space_hash},
      {"created_at", store.meta.created_at},
  };
  out << header.dump() << '\n';
  for (std::size_t j = 0; j < store.buckets.size(); ++j) {
    for (const auto& e : store.buckets[j]) {
      nlohmann::json rec = {{"label", j}, {"text", e.text}, {"embedding", std::vector<double>(e.embedding.values().begin(), e.embedding.values().end())}};
      out << rec.dump() << '\n';
    }
  }
  out.flush();
  require(out.good(), ErrorKind::Io, "write to " + path.string() + " failed");
}

namespace detail {

template <class T>
T store_field(const nlohmann::json& j, const char* field, const std::string& where) {
  require(j.is_object() && j.contains(field), ErrorKind::Load,
          where + ": missing field '" + field + "'");
  try {
    return j.at(field).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::Load, where + ": field '" + field + "' has the wrong type");
  }
}

}  // namespace detail

inline VectorStore load_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open store " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Load, "store file is empty");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::Load, "header: not valid JSON");
  }
  const std::string where = "header";
  require(detail::store_field<std::string>(header, "format", where) == kStoreFormatName,
          ErrorKind::Load, "header: field 'format' is not " + std::string(kStoreFormatName));
  const int version = detail::store_field<int>(header, "version", where);
  require(version == kStoreFormatVersion, ErrorKind::Load,
          "header: field 'version' is " + std::to_string(version) + ", expected " +
              std::to_string(kStoreFormatVersion));

  VectorStore store;
  store.meta.model_name = detail::store_field<std::string>(header, "model", where);
  store.meta.dim = detail::store_field<std::size_t>(header, "dim", where);
  store.meta.labels = detail::store_field<std::vector<std::string>>(header, "labels", where);
  store.meta.label_space_hash = detail::store_field<std::string>(header, "label_space_hash", where);
  store.meta.created_at = detail::store_field<std::string>(header, "created_at", where);
  require(store.meta.dim > 0, ErrorKind::Load, "header: field 'dim' must be > 0");
  try {
    const LabelSpace space(store.meta.labels);
    require(hex64(space.fingerprint()) == store.meta.label_space_hash, ErrorKind::Load,
            "header: field 'label_space_hash' does not match 'labels'");
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Load) throw;
    throw Error(ErrorKind::Load, std::string("header: field 'labels' invalid: ") + e.what());
  }
  store.buckets.resize(store.meta.labels.size());

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string at = "line " + std::to_string(lineno);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::Load, at + ": not valid JSON");
    }
    require(rec.is_object() && rec.contains("label") && rec["label"].is_number_unsigned(),
            ErrorKind::Load, at + ": field 'label' missing or not a non-negative integer");
    const auto label = rec["label"].get<std::size_t>();
    require(label < store.buckets.size(), ErrorKind::Load,
            at + ": field 'label' = " + std::to_string(label) + " outside label space");
    auto text = detail::store_field<std::string>(rec, "text", at);
    auto values = detail::store_field<std::vector<double>>(rec, "embedding", at);
    require(values.size() == store.meta.dim, ErrorKind::Load,
            at + ": field 'embedding' has " + std::to_string(values.size()) +
                " values, header dim is " + std::to_string(store.meta.dim));
    try {
      store.buckets[label].push_back({std::move(text), EmbeddingVector(std::move(values))});
    } catch (const Error& e) {
      throw Error(ErrorKind::Load, at + ": field 'embedding' invalid: " + e.what());
    }
  }
  return store;
}

/// Replays stored (text, embedding) pairs; never calls a model or embedder.
class StoreReplaySimulator final : public Simulator {
 public:
  explicit StoreReplaySimulator(std::shared_ptr<const VectorStore> store, std::uint64_t seed = 0)
      : store_(std::move(store)), seed_(seed) {
    require(store_ != nullptr, ErrorKind::Config, "store replay needs a store");
  }

  SimulatorKind kind() const override { return SimulatorKind::StoreReplay; }
  std::size_t label_count() const override { return store_->buckets.size(); }
  const VectorStore& store() const { return *store_; }

 private:
  const StoreEntry& pick(LabelIndex label, std::uint64_t stream) const {
    Rng rng(derive_seed(seed_, {label, stream}));
    return sample_from_store(*store_, label, rng);
  }

  std::string do_simulate(LabelIndex label, std::uint64_t stream) const override {
    return pick(label, stream).text;
  }

  Simulation do_simulate_embedded(LabelIndex label, std::uint64_t stream,
                                  const Embedder&) const override {
    const auto& e = pick(label, stream);
    return {e.text, e.embedding};
  }

  std::shared_ptr<const VectorStore> store_;
  std::uint64_t seed_;
};

}  // namespace abcuq
