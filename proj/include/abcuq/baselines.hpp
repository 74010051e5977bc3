#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "abcuq/chat.hpp"
#include "abcuq/core.hpp"
#include "abcuq/error.hpp"

namespace abcuq {

// Multiple-choice prompt for the logits baseline. Placeholders: {options}
// ("1) A  2) B"), {option_numbers} ("1, 2, or 3"), {description}.
inline constexpr std::string_view kLogitsPromptTemplate =
    "Only choose the most likely diagnosis for the following patient description from the "
    "options provided: {options}\n"
    "Patient Description: {description}\n"
    "Diagnosis (only provide the option number ({option_numbers}), NO ADDITIONAL TEXT):";

// Elicitation prompt. Placeholders: {k}, {examples}, {question}, {options}
// ("1. A, 2. B"), {description}.
inline constexpr std::string_view kElicitPromptTemplate =
    "Provide your {k} best guesses and the probability that each is correct (0% to 100%) for "
    "the following question. Give ONLY the option number of your guess and probability, no "
    "other words or explanation.\n"
    "Example answer:\n"
    "{examples}\n"
    "Question: {question}\n"
    "Choices: {options}\n"
    "Patient Description: {description}\n"
    "Answer:";

inline constexpr std::string_view kDefaultElicitQuestion =
    "Given the below patient description, which diagnosis is likely to be present in the patient?";

struct BaselineConfig {
  double temperature = 0.2;
  int logits_max_tokens = 1;
  int elicit_max_tokens = 128;
  int top_logprobs = 20;
  int top_k = 3;  // clipped to k
  std::string logits_template{kLogitsPromptTemplate};
  std::string elicit_template{kElicitPromptTemplate};
  std::string question{kDefaultElicitQuestion};
};

namespace detail {

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  require(ec == std::errc(), ErrorKind::Contract, "number formatting failed");
  return std::string(buf, end);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

inline std::string render_logits_prompt(const CaseRecord& c, const LabelSpace& space,
                                        const BaselineConfig& cfg = {}) {
  std::string options, numbers;
  for (std::size_t i = 0; i < space.k(); ++i) {
    if (i > 0) options += "  ";
    options += std::to_string(i + 1) + ") " + space.name(i);
    if (i > 0) numbers += (i + 1 == space.k()) ? (space.k() > 2 ? ", or " : " or ") : ", ";
    numbers += std::to_string(i + 1);
  }
  auto out = detail::replace_all(cfg.logits_template, "{options}", options);
  out = detail::replace_all(out, "{option_numbers}", numbers);
  return detail::replace_all(out, "{description}", c.description);
}

inline std::string render_elicit_prompt(const CaseRecord& c, const LabelSpace& space,
                                        const BaselineConfig& cfg = {}) {
  const int top_k = std::clamp(cfg.top_k, 1, static_cast<int>(space.k()));
  // Worked example in the same G/P line format the parser expects.
  const std::vector<int> example_options = space.k() >= 3 ? std::vector<int>{1, 3, 2}
                                                          : std::vector<int>{1, 2};
  const std::vector<std::vector<int>> example_percents = {{100}, {60, 40}, {60, 35, 5}};
  const int shown = std::min<int>(top_k, static_cast<int>(example_options.size()));
  const auto& pct = example_percents[static_cast<std::size_t>(shown - 1)];
  std::string examples;
  for (int i = 0; i < shown; ++i) {
    if (i > 0) examples += "\n";
    const auto g = std::to_string(i + 1);
    examples += "- G" + g + ": " + std::to_string(example_options[static_cast<std::size_t>(i)]) +
                ", P" + g + ": " + std::to_string(pct[static_cast<std::size_t>(i)]) + "%";
  }
  std::string options;
  for (std::size_t i = 0; i < space.k(); ++i) {
    if (i > 0) options += ", ";
    options += std::to_string(i + 1) + ". " + space.name(i);
  }
  auto out = detail::replace_all(cfg.elicit_template, "{k}", std::to_string(top_k));
  out = detail::replace_all(out, "{examples}", examples);
  out = detail::replace_all(out, "{question}", cfg.question);
  out = detail::replace_all(out, "{options}", options);
  return detail::replace_all(out, "{description}", c.description);
}

// ---------------------------------------------------------------------------
// Model logits
// ---------------------------------------------------------------------------

/// Softmax over the option tokens "1".."k" found among first-token logprobs.
/// Tokens are matched after trimming whitespace; repeated spellings of one
/// option have their probabilities summed. Missing options get 0.
inline std::vector<double> logits_to_probs(std::span<const TokenLogprob> top, std::size_t k) {
  std::vector<std::optional<double>> best(k);
  std::vector<std::pair<std::size_t, double>> hits;
  for (const auto& t : top) {
    const auto tok = detail::trim(t.token);
    if (tok.empty() || tok.size() > 3 ||
        !std::all_of(tok.begin(), tok.end(), [](char ch) { return ch >= '0' && ch <= '9'; }))
      continue;
    const auto option = static_cast<std::size_t>(std::stoul(tok));
    if (option < 1 || option > k || !std::isfinite(t.logprob)) continue;
    hits.emplace_back(option - 1, t.logprob);
  }
  require(!hits.empty(), ErrorKind::Inference, "logits unavailable: no option token among top logprobs");
  double max_lp = hits.front().second;
  for (const auto& h : hits) max_lp = std::max(max_lp, h.second);
  std::vector<double> probs(k, 0.0);
  double total = 0.0;
  for (const auto& [idx, lp] : hits) {
    const double w = std::exp(lp - max_lp);
    probs[idx] += w;
    total += w;
  }
  for (double& p : probs) p /= total;
  return probs;
}

inline Posterior logits_probs(const CaseRecord& c, const LabelSpace& space, const ChatBackend& backend,
                              const BaselineConfig& cfg = {}) {
  ChatRequest req;
  req.case_id = c.id;
  req.prompt = render_logits_prompt(c, space, cfg);
  req.temperature = cfg.temperature;
  req.max_tokens = cfg.logits_max_tokens;
  req.top_logprobs = cfg.top_logprobs;
  const auto reply = backend.complete(req);
  Posterior out;
  out.probs = logits_to_probs(reply.first_token_top_logprobs, space.k());
  out.method = Method::Logits;
  out.simulations_used = 1;
  return out;
}

// ---------------------------------------------------------------------------
// Elicited probabilities
// ---------------------------------------------------------------------------

struct ElicitedGuess {
  std::vector<std::pair<LabelIndex, double>> guesses;  // (label, percent)
  std::string raw;
};

struct NonCompliant {
  std::string reason;
  std::string raw;
};

using ElicitParse = std::variant<ElicitedGuess, NonCompliant>;
using ElicitResult = std::variant<Posterior, NonCompliant>;

/// Parses lines of the form `G<i>: <option>, P<i>: <percent>%`. Case, spacing,
/// list bullets, a missing `%` and missing trailing lines are tolerated.
/// Options are 1-based positions in the label space.
inline ElicitParse parse_elicited(std::string_view text, std::size_t k) {
  static const std::regex line_re(
      R"(g\s*(\d+)\s*[:=]?\s*(\d+)\s*[,;]?\s*p\s*(\d+)\s*[:=]?\s*(\d+(?:\.\d+)?)\s*%?)",
      std::regex::icase | std::regex::ECMAScript);
  const std::string raw(text);
  std::map<LabelIndex, double> by_label;
  std::vector<LabelIndex> order;
  std::size_t start = 0;
  while (start <= raw.size()) {
    auto end = raw.find('\n', start);
    if (end == std::string::npos) end = raw.size();
    const std::string line = raw.substr(start, end - start);
    start = end + 1;
    auto it = std::sregex_iterator(line.begin(), line.end(), line_re);
    for (; it != std::sregex_iterator(); ++it) {
      const auto& m = *it;
      const auto option = std::stoull(m[2].str());
      if (option < 1 || option > k)
        return NonCompliant{"option " + m[2].str() + " is not one of the " + std::to_string(k) +
                                " choices",
                            raw};
      const double pct = std::stod(m[4].str());
      const LabelIndex label = static_cast<LabelIndex>(option - 1);
      auto [pos, fresh] = by_label.emplace(label, pct);
      if (fresh) {
        order.push_back(label);
      } else if (pos->second != pct) {
        return NonCompliant{"option " + m[2].str() + " repeated with conflicting percents", raw};
      }
    }
    if (end == raw.size()) break;
  }
  if (order.empty()) return NonCompliant{"no parseable guess", raw};
  ElicitedGuess g;
  g.raw = raw;
  double total = 0.0;
  for (LabelIndex l : order) {
    g.guesses.emplace_back(l, by_label[l]);
    total += by_label[l];
  }
  if (total <= 0.0) return NonCompliant{"percents sum to zero", raw};
  return g;
}

/// Percents renormalized to a probability vector; unlisted labels get 0.
inline std::vector<double> probs_from_guess(const ElicitedGuess& g, std::size_t k) {
  std::vector<double> probs(k, 0.0);
  double total = 0.0;
  for (const auto& [label, pct] : g.guesses) {
    require(label < k, ErrorKind::Contract, "guess label outside label space");
    probs[label] += pct;
    total += pct;
  }
  require(total > 0.0, ErrorKind::Contract, "guess percents sum to zero");
  for (double& p : probs) p /= total;
  return probs;
}

inline std::string serialize_guess(const ElicitedGuess& g) {
  std::string out;
  for (std::size_t i = 0; i < g.guesses.size(); ++i) {
    const auto n = std::to_string(i + 1);
    if (i > 0) out += "\n";
    out += "G" + n + ": " + std::to_string(g.guesses[i].first + 1) + ", P" + n + ": " +
           detail::format_number(g.guesses[i].second) + "%";
  }
  return out;
}

inline ElicitResult elicit_from_text(std::string_view text, std::size_t k) {
  auto parsed = parse_elicited(text, k);
  if (auto* nc = std::get_if<NonCompliant>(&parsed)) return *nc;
  Posterior out;
  out.probs = probs_from_guess(std::get<ElicitedGuess>(parsed), k);
  out.method = Method::Elicited;
  out.simulations_used = 1;
  return out;
}

inline ElicitResult elicit_probs(const CaseRecord& c, const LabelSpace& space,
                                 const ChatBackend& backend, const BaselineConfig& cfg = {}) {
  require(cfg.top_k >= 1, ErrorKind::Config, "top_k must be >= 1");
  ChatRequest req;
  req.case_id = c.id;
  req.prompt = render_elicit_prompt(c, space, cfg);
  req.temperature = cfg.temperature;
  req.max_tokens = cfg.elicit_max_tokens;
  return elicit_from_text(backend.complete(req).text, space.k());
}

inline bool is_compliant(const ElicitResult& r) { return std::holds_alternative<Posterior>(r); }

inline double compliance_rate(std::span<const ElicitResult> results) {
  require(!results.empty(), ErrorKind::Contract, "compliance rate of an empty list");
  const auto ok = std::count_if(results.begin(), results.end(), is_compliant);
  return static_cast<double>(ok) / static_cast<double>(results.size());
}

}  // namespace abcuq
