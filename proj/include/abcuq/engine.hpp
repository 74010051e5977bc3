#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <future>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "abcuq/core.hpp"
#include "abcuq/embed.hpp"
#include "abcuq/error.hpp"
#include "abcuq/random.hpp"
#include "abcuq/sim.hpp"

namespace abcuq {

// ---------------------------------------------------------------------------
// Prior and perturbation kernel
// ---------------------------------------------------------------------------

struct Prior {
  std::vector<double> probs;

  static Prior uniform(std::size_t k) {
    require(k >= 1, ErrorKind::Contract, "prior over an empty label set");
    return {std::vector<double>(k, 1.0 / static_cast<double>(k))};
  }

  void validate(std::size_t k) const {
    require(probs.size() == k, ErrorKind::Config,
            "prior has " + std::to_string(probs.size()) + " entries, label space has " +
                std::to_string(k));
    double sum = 0.0;
    for (double p : probs) {
      require(std::isfinite(p) && p >= 0.0, ErrorKind::Config, "prior entries must be >= 0");
      sum += p;
    }
    require(std::abs(sum - 1.0) <= kProbabilityTolerance, ErrorKind::Config,
            "prior must sum to 1");
  }
};

/// Discrete jump: keep the current label with probability p_stay, otherwise
/// redraw uniformly over all k labels (the current one included).
struct JumpKernel {
  double p_stay = 0.5;
  std::size_t k = 2;

  void validate() const {
    require(p_stay > 0.0 && p_stay <= 1.0, ErrorKind::Config, "p_stay must be in (0, 1]");
    require(k >= 2, ErrorKind::Config, "kernel needs k >= 2");
  }
};

inline double kernel_density(const JumpKernel& kernel, LabelIndex from, LabelIndex to) {
  require(from < kernel.k && to < kernel.k, ErrorKind::Contract, "kernel label outside space");
  const double jump = (1.0 - kernel.p_stay) / static_cast<double>(kernel.k);
  return from == to ? kernel.p_stay + jump : jump;
}

inline LabelIndex kernel_sample(const JumpKernel& kernel, LabelIndex from, Rng& rng) {
  require(from < kernel.k, ErrorKind::Contract, "kernel label outside space");
  if (rng.uniform() < kernel.p_stay) return from;
  return rng.uniform_index(kernel.k);
}

// ---------------------------------------------------------------------------
// Epsilon schedule
// ---------------------------------------------------------------------------

enum class EpsilonStrategy { AdaptiveQuantile, FixedList };

struct EpsilonSchedule {
  EpsilonStrategy strategy = EpsilonStrategy::AdaptiveQuantile;
  double quantile = 0.5;
  int initial_calibration_size = 0;  // 0 means 2*S
  std::vector<double> fixed;

  void validate() const {
    require(quantile > 0.0 && quantile < 1.0, ErrorKind::Config, "quantile must be in (0, 1)");
    require(initial_calibration_size >= 0, ErrorKind::Config,
            "initial_calibration_size must be >= 0");
    if (strategy == EpsilonStrategy::FixedList) {
      require(!fixed.empty(), ErrorKind::Config, "fixed epsilon list is empty");
      for (std::size_t i = 0; i < fixed.size(); ++i) {
        require(std::isfinite(fixed[i]) && fixed[i] >= 0.0, ErrorKind::Config,
                "fixed epsilons must be finite and >= 0");
        if (i > 0)
          require(fixed[i] < fixed[i - 1], ErrorKind::Config,
                  "fixed epsilons must be strictly decreasing");
      }
    }
  }
};

/// Empirical quantile with linear interpolation between order statistics.
inline double empirical_quantile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorKind::Contract, "quantile of an empty list");
  require(q >= 0.0 && q <= 1.0, ErrorKind::Contract, "quantile must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = static_cast<double>(values.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

/// Next threshold from the previous population's accepted distances. Clamped
/// strictly below prev_epsilon whenever prev_epsilon > 0.
inline double set_epsilon_adaptive(std::span<const double> prev_distances, double quantile,
                                   double prev_epsilon) {
  require(!prev_distances.empty(), ErrorKind::Contract, "no previous distances for adaptive epsilon");
  require(quantile > 0.0 && quantile < 1.0, ErrorKind::Contract, "quantile must be in (0, 1)");
  const double q = empirical_quantile({prev_distances.begin(), prev_distances.end()}, quantile);
  if (q >= prev_epsilon) return prev_epsilon * (1.0 - 1e-6);
  return q;
}

// ---------------------------------------------------------------------------
// Engine configuration and results
// ---------------------------------------------------------------------------

struct EngineConfig {
  int particles = 100;  // S
  int max_populations = 3;  // T
  std::optional<Prior> prior;  // uniform when absent
  double p_stay = 0.5;
  EpsilonSchedule schedule;
  int max_simulations_per_population = 0;  // 0 means 20*S
  int parallel_simulations = 1;
  std::uint64_t seed = 0;
  bool keep_texts = false;

  int calibration_size() const {
    return schedule.initial_calibration_size > 0 ? schedule.initial_calibration_size
                                                 : 2 * particles;
  }
  int budget() const {
    return max_simulations_per_population > 0 ? max_simulations_per_population : 20 * particles;
  }
  Prior prior_for(std::size_t k) const { return prior ? *prior : Prior::uniform(k); }

  void validate(std::size_t k) const {
    require(particles >= 2, ErrorKind::Config, "particles (S) must be >= 2");
    require(max_populations >= 1, ErrorKind::Config, "max_populations (T) must be >= 1");
    require(budget() >= particles, ErrorKind::Config,
            "max_simulations_per_population must be >= S");
    require(parallel_simulations >= 1, ErrorKind::Config, "parallel_simulations must be >= 1");
    JumpKernel{p_stay, k}.validate();
    prior_for(k).validate(k);
    schedule.validate();
    if (schedule.strategy == EpsilonStrategy::AdaptiveQuantile)
      require(calibration_size() <= budget(), ErrorKind::Config,
              "calibration size exceeds the per-population simulation budget");
  }
};

struct SmcResult {
  Posterior posterior;
  std::vector<Population> populations;  // completed populations, t = 1..
  bool converged = false;  // stopped before T because epsilon reached 0
};

namespace detail {

struct Candidate {
  LabelIndex label = 0;
  double distance = 0.0;
  std::string text;
};

inline EmbeddingVector observed_embedding(const CaseRecord& c, const Embedder& embedder) {
  if (c.embedding) return *c.embedding;
  return embedder.embed(c.description);
}

/// Generates candidates for ordinals [begin, end) of population t, in ordinal
/// order. `propose(rng)` draws the candidate label from the ordinal's sub-stream.
template <class Propose>
std::vector<Candidate> run_candidates(const EngineConfig& cfg, int t, long begin, long end,
                                      const Propose& propose, const Simulator& sim,
                                      const Embedder& embedder, const EmbeddingVector& observed) {
  auto one = [&](long ordinal) {
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(ordinal)}));
    Candidate c;
    c.label = propose(rng);
    auto s = sim.simulate_embedded(c.label, rng.next_u64(), embedder);
    c.distance = cosine_distance(s.embedding, observed);
    if (cfg.keep_texts) c.text = std::move(s.text);
    return c;
  };
  std::vector<Candidate> out;
  out.reserve(static_cast<std::size_t>(end - begin));
  if (cfg.parallel_simulations <= 1 || end - begin <= 1) {
    for (long i = begin; i < end; ++i) out.push_back(one(i));
    return out;
  }
  std::vector<std::future<Candidate>> inflight;
  inflight.reserve(static_cast<std::size_t>(end - begin));
  for (long i = begin; i < end; ++i) inflight.push_back(std::async(std::launch::async, one, i));
  for (auto& f : inflight) out.push_back(f.get());
  return out;
}

struct PopulationRun {
  std::vector<Candidate> accepted;
  long simulations_used = 0;
  double min_distance = std::numeric_limits<double>::infinity();
};

/// Draws candidates until S acceptances at `epsilon` or the budget runs out.
/// `pre` holds already-simulated candidates for the leading ordinals.
template <class Propose>
PopulationRun fill_population(const EngineConfig& cfg, int t, double epsilon,
                              std::vector<Candidate> pre, const Propose& propose,
                              const Simulator& sim, const Embedder& embedder,
                              const EmbeddingVector& observed) {
  const auto target = static_cast<std::size_t>(cfg.particles);
  const long budget = cfg.budget();
  PopulationRun run;
  long next = 0;
  auto scan = [&](std::vector<Candidate>& batch) {
    for (auto& c : batch) {
      ++next;
      run.min_distance = std::min(run.min_distance, c.distance);
      if (c.distance <= epsilon) {
        run.accepted.push_back(std::move(c));
        if (run.accepted.size() == target) return true;
      }
    }
    return false;
  };
  const long pre_size = static_cast<long>(pre.size());
  bool done = scan(pre);
  // Pre-simulated draws were all paid for even when S is reached early.
  long used_floor = pre_size;
  while (!done && next < budget) {
    const long end = std::min(budget, next + std::max(1, cfg.parallel_simulations));
    auto batch = run_candidates(cfg, t, next, end, propose, sim, embedder, observed);
    done = scan(batch);
  }
  run.simulations_used = std::max(next, used_floor);
  return run;
}

inline Population to_population(PopulationRun& run, int t, double epsilon,
                                 std::vector<double> weights) {
  Population pop;
  pop.t = t;
  pop.epsilon = epsilon;
  pop.simulations_used = run.simulations_used;
  pop.particles.reserve(run.accepted.size());
  for (std::size_t i = 0; i < run.accepted.size(); ++i) {
    auto& c = run.accepted[i];
    Particle p{c.label, weights[i], c.distance, std::nullopt};
    if (!c.text.empty()) p.generation_text = std::move(c.text);
    pop.particles.push_back(std::move(p));
  }
  return pop;
}

inline std::vector<double> equal_weights(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

/// Population t = 1: prior draws accepted at epsilon (or at the calibrated
/// epsilon when none is given). Throws EpsilonTooTight with zero acceptances.
inline Population first_population(const EngineConfig& cfg,
                                   const Simulator& sim, const Embedder& embedder,
                                   const EmbeddingVector& observed,
                                   std::optional<double> epsilon) {
  const auto prior = cfg.prior_for(sim.label_count());
  auto propose = [&](Rng& rng) { return rng.categorical(prior.probs); };
  std::vector<Candidate> pre;
  if (!epsilon) {
    pre = run_candidates(cfg, 1, 0, cfg.calibration_size(), propose, sim, embedder, observed);
    std::vector<double> d;
    d.reserve(pre.size());
    for (const auto& p : pre) d.push_back(p.distance);
    epsilon = empirical_quantile(std::move(d), cfg.schedule.quantile);
  }
  auto run = fill_population(cfg, 1, *epsilon, std::move(pre), propose, sim, embedder, observed);
  if (run.accepted.empty())
    throw EpsilonTooTight(*epsilon, run.min_distance, run.simulations_used);
  return to_population(run, 1, *epsilon, equal_weights(run.accepted.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

/// Unnormalized SMC importance weight of `label` given the previous population:
/// prior(label) / sum_j w_j * K(label | label_j).
inline double smc_importance_weight(LabelIndex label, const Population& previous,
                                    const Prior& prior, const JumpKernel& kernel) {
  double denom = 0.0;
  for (const auto& p : previous.particles) denom += p.weight * kernel_density(kernel, p.label, label);
  require(denom > 0.0, ErrorKind::Contract, "importance weight denominator is zero");
  return prior.probs.at(label) / denom;
}

/// Epsilon for rejection sampling derived the same way SMC sets its first
/// threshold: quantile of the first calibration-size prior draws.
inline double calibrate_epsilon(const CaseRecord& c, const EngineConfig& cfg,
                                const Simulator& sim, const Embedder& embedder) {
  cfg.validate(sim.label_count());
  const auto observed = detail::observed_embedding(c, embedder);
  const auto prior = cfg.prior_for(sim.label_count());
  auto propose = [&](Rng& rng) { return rng.categorical(prior.probs); };
  auto pre = detail::run_candidates(cfg, 1, 0, cfg.calibration_size(), propose, sim, embedder,
                                    observed);
  std::vector<double> d;
  for (const auto& p : pre) d.push_back(p.distance);
  return empirical_quantile(std::move(d), cfg.schedule.quantile);
}

/// ABC rejection: prior draws accepted when the simulated embedding lies within
/// `epsilon` of the observed one; posterior is the accepted label frequencies.
inline Posterior abc_rejection(const CaseRecord& c, const EngineConfig& cfg, const Simulator& sim,
                               const Embedder& embedder, double epsilon) {
  require(epsilon > 0.0, ErrorKind::Contract, "epsilon must be > 0");
  cfg.validate(sim.label_count());
  const auto observed = detail::observed_embedding(c, embedder);
  const auto pop = detail::first_population(cfg, sim, embedder, observed, epsilon);
  Posterior out;
  out.probs = weighted_label_frequencies(pop.particles, sim.label_count());
  out.method = Method::Rejection;
  out.simulations_used = pop.simulations_used;
  out.accepted = static_cast<long>(pop.particles.size());
  out.partial = pop.particles.size() < static_cast<std::size_t>(cfg.particles);
  return out;
}

/// SMC-ABC over class labels. Population 1 is a rejection population; each
/// later population resamples ancestors by weight, perturbs them with the
/// jump kernel and accepts at a strictly smaller epsilon.
inline SmcResult smc_abc(const CaseRecord& c, const EngineConfig& cfg, const Simulator& sim,
                         const Embedder& embedder) {
  const std::size_t k = sim.label_count();
  cfg.validate(k);
  const auto observed = detail::observed_embedding(c, embedder);
  const auto prior = cfg.prior_for(k);
  const JumpKernel kernel{cfg.p_stay, k};
  const bool fixed = cfg.schedule.strategy == EpsilonStrategy::FixedList;
  const int T = fixed ? std::min<int>(cfg.max_populations, static_cast<int>(cfg.schedule.fixed.size()))
                      : cfg.max_populations;
  const auto S = static_cast<std::size_t>(cfg.particles);

  SmcResult result;
  std::optional<double> eps1;
  if (fixed) eps1 = cfg.schedule.fixed.front();
  result.populations.push_back(detail::first_population(cfg, sim, embedder, observed, eps1));

  auto population_posterior = [&](const Population& pop) {
    Posterior post;
    post.probs = weighted_label_frequencies(pop.particles, k);
    post.accepted = static_cast<long>(pop.particles.size());
    return post;
  };
  auto finish = [&](Posterior post) {
    post.method = Method::SMC;
    long total = 0;
    for (const auto& p : result.populations) total += p.simulations_used;
    post.simulations_used = total;
    result.posterior = std::move(post);
    return result;
  };

  if (result.populations.back().particles.size() < S) {
    auto post = population_posterior(result.populations.back());
    post.partial = true;
    return finish(std::move(post));
  }

  for (int t = 2; t <= T; ++t) {
    const Population& prev = result.populations.back();
    double eps;
    if (fixed) {
      eps = cfg.schedule.fixed[static_cast<std::size_t>(t - 1)];
    } else {
      std::vector<double> d;
      d.reserve(prev.particles.size());
      for (const auto& p : prev.particles) d.push_back(p.distance);
      eps = set_epsilon_adaptive(d, cfg.schedule.quantile, prev.epsilon);
    }
    if (!(eps < prev.epsilon)) {
      // Only reachable when prev.epsilon is 0: every accepted distance is already 0.
      result.converged = true;
      break;
    }

    std::vector<double> prev_weights;
    prev_weights.reserve(prev.particles.size());
    for (const auto& p : prev.particles) prev_weights.push_back(p.weight);
    auto propose = [&](Rng& rng) {
      const auto ancestor = rng.categorical(prev_weights);
      return kernel_sample(kernel, prev.particles[ancestor].label, rng);
    };
    auto run = detail::fill_population(cfg, t, eps, {}, propose, sim, embedder, observed);
    if (run.accepted.size() < S) {
      auto post = population_posterior(result.populations.back());
      post.stalled = true;
      return finish(std::move(post));
    }

    // Per-label weights: the denominator depends on the candidate label only.
    std::vector<double> label_weight(k, -1.0);
    for (const auto& cand : run.accepted)
      if (label_weight[cand.label] < 0.0)
        label_weight[cand.label] = smc_importance_weight(cand.label, prev, prior, kernel);
    std::vector<double> weights;
    weights.reserve(S);
    double total = 0.0;
    for (const auto& cand : run.accepted) {
      weights.push_back(label_weight[cand.label]);
      total += weights.back();
    }
    require(total > 0.0, ErrorKind::Inference, "all SMC weights are zero");
    for (double& w : weights) w /= total;
    result.populations.push_back(detail::to_population(run, t, eps, std::move(weights)));
  }

  return finish(population_posterior(result.populations.back()));
}

}  // namespace abcuq
