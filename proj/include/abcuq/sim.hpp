#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "abcuq/chat.hpp"
#include "abcuq/core.hpp"
#include "abcuq/embed.hpp"
#include "abcuq/error.hpp"
#include "abcuq/random.hpp"

namespace abcuq {

inline constexpr std::string_view kLabelPlaceholder = "{label_name}";

inline constexpr std::string_view kPatientDescriptionTemplate =
    "Generate a brief, plain-English patient complaint consistent with a diagnosis of "
    "{label_name}. Do not name the diagnosis.";

inline constexpr std::string_view kSignSymptomListTemplate =
    "List the characteristic clinical signs and symptoms of {label_name} as short phrases.";

enum class SimulatorKind { RemoteChat, StoreReplay, SyntheticOracle };
enum class PromptMode { PatientDescription, SignSymptomList };

inline std::string_view default_template(PromptMode mode) {
  return mode == PromptMode::SignSymptomList ? kSignSymptomListTemplate
                                             : kPatientDescriptionTemplate;
}

struct OracleClass {
  EmbeddingVector centroid;
  double noise_scale = 0.0;
  std::vector<std::string> phrase_bank;
};

/// Test simulator definition: one entry per label. With an empty phrase bank
/// the oracle skips text and emits centroid + N(0, noise_scale^2) per component.
struct SyntheticOracleSpec {
  std::vector<OracleClass> classes;
  std::uint64_t rng_seed = 0;

  void validate(std::size_t k) const {
    require(classes.size() == k, ErrorKind::Config,
            "synthetic oracle needs one entry per label (" + std::to_string(k) + "), got " +
                std::to_string(classes.size()));
    for (const auto& c : classes) {
      require(c.centroid.dim() == classes.front().centroid.dim(), ErrorKind::Config,
              "synthetic oracle centroids must share one dimension");
      require(c.noise_scale >= 0.0, ErrorKind::Config, "noise_scale must be >= 0");
    }
  }
};

struct SimulatorConfig {
  SimulatorKind kind = SimulatorKind::SyntheticOracle;
  std::optional<std::string> endpoint;
  std::optional<std::string> model_name;
  double temperature = 0.2;
  PromptMode prompt_mode = PromptMode::PatientDescription;
  std::string prompt_template{kPatientDescriptionTemplate};
  int max_tokens = 256;
  std::optional<std::uint64_t> seed;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds retry_backoff{250};
  std::string api_key_env = kDefaultApiKeyEnv;
  std::optional<SyntheticOracleSpec> oracle;

  void validate() const {
    require(temperature >= 0.0, ErrorKind::Config, "temperature must be >= 0");
    require(max_retries >= 0, ErrorKind::Config, "simulator max_retries must be >= 0");
    if (kind == SimulatorKind::RemoteChat) {
      require(endpoint && !endpoint->empty(), ErrorKind::Config, "remote simulator needs an endpoint");
      require(model_name && !model_name->empty(), ErrorKind::Config,
              "remote simulator needs a model name");
      require(prompt_template.find(kLabelPlaceholder) != std::string::npos, ErrorKind::Config,
              "prompt template lacks the {label_name} placeholder");
    }
    if (kind == SimulatorKind::SyntheticOracle)
      require(oracle.has_value(), ErrorKind::Config, "synthetic oracle simulator needs an oracle spec");
  }

  ChatEndpointConfig chat_endpoint() const {
    ChatEndpointConfig c;
    c.endpoint = endpoint.value_or("");
    c.model_name = model_name.value_or("");
    c.timeout = timeout;
    c.max_retries = max_retries;
    c.retry_backoff = retry_backoff;
    c.api_key_env = api_key_env;
    return c;
  }
};

/// Substitutes every `{label_name}` occurrence.
inline std::string render_prompt(std::string_view tmpl, std::string_view label_name) {
  require(tmpl.find(kLabelPlaceholder) != std::string_view::npos, ErrorKind::Config,
          "prompt template lacks the {label_name} placeholder");
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto hit = tmpl.find(kLabelPlaceholder, pos);
    if (hit == std::string_view::npos) break;
    out.append(tmpl.substr(pos, hit - pos));
    out.append(label_name);
    pos = hit + kLabelPlaceholder.size();
  }
  out.append(tmpl.substr(pos));
  return out;
}

struct Simulation {
  std::string text;
  EmbeddingVector embedding;
};

/// Class-conditioned generator x_sim = G(label). `stream` is a per-call
/// sub-seed chosen by the caller (see derive_seed) so concurrent callers get
/// the same draws regardless of completion order. Implementations are
/// safe for concurrent use.
class Simulator {
 public:
  virtual ~Simulator() = default;

  virtual SimulatorKind kind() const = 0;
  virtual std::size_t label_count() const = 0;

  std::string simulate(LabelIndex label, std::uint64_t stream) const {
    check_label(label);
    auto text = do_simulate(label, stream);
    require(!text.empty(), ErrorKind::Simulator, "simulator returned empty text");
    return text;
  }

  Simulation simulate_embedded(LabelIndex label, std::uint64_t stream,
                               const Embedder& embedder) const {
    check_label(label);
    return do_simulate_embedded(label, stream, embedder);
  }

 protected:
  void check_label(LabelIndex label) const {
    require(label < label_count(), ErrorKind::Contract,
            "label " + std::to_string(label) + " outside label space");
  }

 private:
  virtual std::string do_simulate(LabelIndex label, std::uint64_t stream) const = 0;

  virtual Simulation do_simulate_embedded(LabelIndex label, std::uint64_t stream,
                                          const Embedder& embedder) const {
    auto text = simulate(label, stream);
    auto vec = embedder.embed(text);
    return {std::move(text), std::move(vec)};
  }
};

class SyntheticOracleSimulator final : public Simulator {
 public:
  explicit SyntheticOracleSimulator(SyntheticOracleSpec spec) : spec_(std::move(spec)) {
    spec_.validate(spec_.classes.size());
    require(spec_.classes.size() >= 2, ErrorKind::Config, "synthetic oracle needs >= 2 classes");
  }

  SimulatorKind kind() const override { return SimulatorKind::SyntheticOracle; }
  std::size_t label_count() const override { return spec_.classes.size(); }
  const SyntheticOracleSpec& spec() const { return spec_; }

 private:
  Rng stream_rng(LabelIndex label, std::uint64_t stream) const {
    return Rng(derive_seed(spec_.rng_seed, {label, stream}));
  }

  std::string do_simulate(LabelIndex label, std::uint64_t stream) const override {
    const auto& bank = spec_.classes[label].phrase_bank;
    if (bank.empty()) return "synthetic sample of label " + std::to_string(label);
    Rng rng = stream_rng(label, stream);
    return bank[rng.uniform_index(bank.size())];
  }

  Simulation do_simulate_embedded(LabelIndex label, std::uint64_t stream,
                                  const Embedder& embedder) const override {
    const auto& cls = spec_.classes[label];
    if (!cls.phrase_bank.empty()) {
      auto text = simulate(label, stream);
      auto vec = embedder.embed(text);
      return {std::move(text), std::move(vec)};
    }
    if (cls.noise_scale == 0.0) return {do_simulate(label, stream), cls.centroid};
    Rng rng = stream_rng(label, stream);
    std::vector<double> v(cls.centroid.values().begin(), cls.centroid.values().end());
    for (double& x : v) x += cls.noise_scale * rng.normal();
    return {do_simulate(label, stream), EmbeddingVector(std::move(v))};
  }

  SyntheticOracleSpec spec_;
};

/// LLM-backed simulator: renders the prompt template for the label name and
/// sends it as a single user turn. An empty completion is retried once.
class ChatSimulator final : public Simulator {
 public:
  ChatSimulator(std::shared_ptr<const ChatBackend> backend, SimulatorConfig cfg, LabelSpace space)
      : backend_(std::move(backend)), cfg_(std::move(cfg)), space_(std::move(space)) {
    require(backend_ != nullptr, ErrorKind::Config, "chat simulator needs a backend");
    require(cfg_.temperature >= 0.0, ErrorKind::Config, "temperature must be >= 0");
    require(cfg_.prompt_template.find(kLabelPlaceholder) != std::string::npos, ErrorKind::Config,
            "prompt template lacks the {label_name} placeholder");
  }

  SimulatorKind kind() const override { return SimulatorKind::RemoteChat; }
  std::size_t label_count() const override { return space_.k(); }

  std::string prompt_for(LabelIndex label) const {
    return render_prompt(cfg_.prompt_template, space_.name(label));
  }

 private:
  std::string do_simulate(LabelIndex label, std::uint64_t stream) const override {
    ChatRequest req;
    req.prompt = prompt_for(label);
    req.temperature = cfg_.temperature;
    req.max_tokens = cfg_.max_tokens;
    if (cfg_.seed) req.seed = derive_seed(*cfg_.seed, {label, stream}) >> 1;
    for (int attempt = 0; attempt < 2; ++attempt) {
      auto reply = backend_->complete(req);
      if (!reply.text.empty()) return std::move(reply.text);
    }
    throw Error(ErrorKind::Simulator,
                "model returned empty output twice for label '" + space_.name(label) + "'");
  }

  std::shared_ptr<const ChatBackend> backend_;
  SimulatorConfig cfg_;
  LabelSpace space_;
};

}  // namespace abcuq
