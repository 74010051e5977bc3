#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace abcuq {

enum class ErrorKind {
  Contract,   // violated precondition or invariant of an API call
  Input,      // malformed user-provided value
  Transport,  // HTTP failure after retries
  Simulator,  // simulator produced unusable output
  Store,      // vector store lookup failure
  Load,       // persisted file could not be parsed
  Ingestion,  // dataset record rejected
  Config,     // run configuration rejected before any work
  Io,         // filesystem failure
  Inference,  // sampler could not produce a posterior
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Contract: return "contract error";
    case ErrorKind::Input: return "input error";
    case ErrorKind::Transport: return "transport error";
    case ErrorKind::Simulator: return "simulator error";
    case ErrorKind::Store: return "store error";
    case ErrorKind::Load: return "load error";
    case ErrorKind::Ingestion: return "ingestion error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Inference: return "inference error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when a sampler exhausts its simulation budget without a single
/// acceptance. Carries the smallest distance seen so callers can widen epsilon.
class EpsilonTooTight : public Error {
 public:
  EpsilonTooTight(double epsilon, double min_distance, long simulations)
      : Error(ErrorKind::Inference,
              "epsilon too tight: no acceptance at epsilon=" + std::to_string(epsilon) +
                  " after " + std::to_string(simulations) +
                  " simulations (min observed distance " + std::to_string(min_distance) + ")"),
        epsilon_(epsilon),
        min_distance_(min_distance) {}

  double epsilon() const noexcept { return epsilon_; }
  double min_distance() const noexcept { return min_distance_; }

 private:
  double epsilon_;
  double min_distance_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace abcuq
