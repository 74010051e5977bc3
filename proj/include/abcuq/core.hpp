#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "abcuq/error.hpp"
#include "abcuq/random.hpp"

namespace abcuq {

using LabelIndex = std::size_t;

inline constexpr double kProbabilityTolerance = 1e-9;

/// Finite hypothesis set with stable indices 0..k-1.
class LabelSpace {
 public:
  LabelSpace() = default;

  explicit LabelSpace(std::vector<std::string> names) : names_(std::move(names)) {
    require(names_.size() >= 2, ErrorKind::Contract, "label space needs at least 2 labels");
    std::unordered_set<std::string> seen;
    for (const auto& n : names_) {
      require(!n.empty(), ErrorKind::Contract, "label names must be non-empty");
      require(seen.insert(n).second, ErrorKind::Contract, "duplicate label name '" + n + "'");
    }
  }

  std::size_t k() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  bool contains(LabelIndex i) const noexcept { return i < names_.size(); }

  const std::string& name(LabelIndex i) const {
    require(contains(i), ErrorKind::Contract, "label index " + std::to_string(i) + " outside space");
    return names_[i];
  }

  std::optional<LabelIndex> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return std::nullopt;
  }

  /// Order-sensitive fingerprint, stored in persisted files to catch mismatched spaces.
  std::uint64_t fingerprint() const {
    std::string joined;
    for (const auto& n : names_) {
      joined += n;
      joined.push_back('\x1f');
    }
    return fnv1a64(joined);
  }

  friend bool operator==(const LabelSpace&, const LabelSpace&) = default;

 private:
  std::vector<std::string> names_;
};

class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  explicit EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
    require(!values_.empty(), ErrorKind::Contract, "embedding must have dim > 0");
    for (double v : values_)
      require(std::isfinite(v), ErrorKind::Contract, "embedding contains a non-finite value");
  }

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  bool empty() const noexcept { return values_.empty(); }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<double> values_;
};

struct CaseRecord {
  std::string id;
  std::string description;
  std::optional<LabelIndex> gold_label;
  std::optional<EmbeddingVector> embedding;

  void validate(const LabelSpace& space) const {
    require(!description.empty(), ErrorKind::Contract, "case '" + id + "' has an empty description");
    if (gold_label)
      require(space.contains(*gold_label), ErrorKind::Contract,
              "case '" + id + "' gold label outside label space");
  }

  friend bool operator==(const CaseRecord&, const CaseRecord&) = default;
};

struct Particle {
  LabelIndex label = 0;
  double weight = 0.0;
  double distance = 0.0;
  std::optional<std::string> generation_text;
};

struct Population {
  std::vector<Particle> particles;
  double epsilon = 0.0;
  int t = 1;
  long simulations_used = 0;

  double weight_sum() const {
    double s = 0.0;
    for (const auto& p : particles) s += p.weight;
    return s;
  }

  /// Checks normalization and acceptance soundness; `expected_size` is the configured S.
  void validate(std::size_t expected_size) const {
    require(particles.size() == expected_size, ErrorKind::Contract,
            "population size " + std::to_string(particles.size()) + " != " +
                std::to_string(expected_size));
    require(std::abs(weight_sum() - 1.0) <= kProbabilityTolerance, ErrorKind::Contract,
            "population weights do not sum to 1");
    for (const auto& p : particles) {
      require(p.weight >= 0.0, ErrorKind::Contract, "negative particle weight");
      require(std::isfinite(p.distance) && p.distance >= 0.0, ErrorKind::Contract,
              "particle distance must be finite and >= 0");
      require(p.distance <= epsilon, ErrorKind::Contract, "particle distance exceeds epsilon");
    }
  }
};

enum class Method { Rejection, SMC, Logits, Elicited };

inline std::string_view method_code(Method m) {
  switch (m) {
    case Method::Logits: return "ML";
    case Method::Elicited: return "EP";
    case Method::Rejection: return "RS";
    case Method::SMC: return "SMC";
  }
  return "?";
}

inline std::optional<Method> parse_method_code(std::string_view code) {
  if (code == "ML") return Method::Logits;
  if (code == "EP") return Method::Elicited;
  if (code == "RS") return Method::Rejection;
  if (code == "SMC") return Method::SMC;
  return std::nullopt;
}

struct Posterior {
  std::vector<double> probs;
  Method method = Method::Rejection;
  long simulations_used = 0;
  long accepted = 0;
  bool partial = false;  // budget ran out before S acceptances
  bool stalled = false;  // an SMC population stalled; probs come from the previous one
};

inline void check_probability_vector(std::span<const double> probs,
                                     double tolerance = kProbabilityTolerance) {
  require(!probs.empty(), ErrorKind::Contract, "empty probability vector");
  double sum = 0.0;
  for (double p : probs) {
    require(std::isfinite(p) && p >= 0.0 && p <= 1.0 + tolerance, ErrorKind::Contract,
            "probability outside [0,1]");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= tolerance, ErrorKind::Contract,
          "probabilities sum to " + std::to_string(sum) + ", not 1");
}

/// Lowest index wins ties.
inline LabelIndex argmax_label(std::span<const double> probs) {
  require(!probs.empty(), ErrorKind::Contract, "argmax of empty vector");
  LabelIndex best = 0;
  for (LabelIndex i = 1; i < probs.size(); ++i) {
    require(std::isfinite(probs[i]), ErrorKind::Contract, "argmax over non-finite entry");
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

/// Weighted label frequencies over k labels. Weights are renormalized here, so
/// scaling every weight by a positive constant does not change the result.
inline std::vector<double> weighted_label_frequencies(std::span<const Particle> particles,
                                                      std::size_t k) {
  require(!particles.empty(), ErrorKind::Contract, "degenerate population");
  std::vector<double> probs(k, 0.0);
  double total = 0.0;
  for (const auto& p : particles) {
    require(p.label < k, ErrorKind::Contract, "particle label outside label space");
    require(p.weight >= 0.0, ErrorKind::Contract, "negative particle weight");
    probs[p.label] += p.weight;
    total += p.weight;
  }
  require(total > 0.0, ErrorKind::Contract, "degenerate population");
  for (double& v : probs) v /= total;
  return probs;
}

inline Posterior posterior_from_population(const Population& pop, const LabelSpace& space) {
  Posterior out;
  out.probs = weighted_label_frequencies(pop.particles, space.k());
  out.simulations_used = pop.simulations_used;
  out.accepted = static_cast<long>(pop.particles.size());
  return out;
}

struct PredictionRecord {
  std::string case_id;
  std::vector<double> probs;
  LabelIndex predicted = 0;
  std::optional<LabelIndex> gold;  // absent for out-of-distribution cases
  double confidence = 0.0;
  bool correct = false;
};

inline PredictionRecord make_prediction_record(std::string case_id, std::vector<double> probs,
                                               std::optional<LabelIndex> gold) {
  PredictionRecord r;
  r.case_id = std::move(case_id);
  r.predicted = argmax_label(probs);
  r.confidence = probs[r.predicted];
  r.gold = gold;
  r.correct = gold.has_value() && *gold == r.predicted;
  r.probs = std::move(probs);
  return r;
}

}  // namespace abcuq
