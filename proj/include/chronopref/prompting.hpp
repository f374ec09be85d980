#pragma once

#include <array>
#include <cctype>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "chronopref/design.hpp"
#include "chronopref/util/text.hpp"

namespace chronopref {

enum class Role { System, User, Assistant };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

inline Role parse_role(std::string_view s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  throw std::invalid_argument("unknown role '" + std::string(s) + "'");
}

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  ChatMessage() = default;
  ChatMessage(Role r, std::string c) : role(r), content(std::move(c)) {
    if (content.empty()) throw std::invalid_argument("chat message content must be non-empty");
  }
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

using Conversation = std::vector<ChatMessage>;

enum class ProtocolVariant { Standard, ChainOfThought };

inline std::string_view to_string(ProtocolVariant v) {
  return v == ProtocolVariant::Standard ? "standard" : "chain_of_thought";
}

inline ProtocolVariant parse_protocol(std::string_view s) {
  if (s == "standard") return ProtocolVariant::Standard;
  if (s == "chain_of_thought" || s == "cot") return ProtocolVariant::ChainOfThought;
  throw std::invalid_argument("unknown protocol '" + std::string(s) + "'");
}

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<std::string_view, 5> kPlaceholders{"{amount_1}", "{time_1}", "{amount_2}", "{time_2}",
                                                              "{unit}"};

/// Question body for one language with the five placeholders, each exactly once.
struct QuestionTemplate {
  std::string language;  // language code
  std::string body;

  void validate() const {
    for (auto ph : kPlaceholders) {
      const auto first = body.find(ph);
      if (first == std::string::npos)
        throw TemplateError("template for '" + language + "' is missing placeholder " + std::string(ph));
      if (body.find(ph, first + 1) != std::string::npos)
        throw TemplateError("template for '" + language + "' repeats placeholder " + std::string(ph));
    }
  }
};

/// Every text a protocol instance needs in one language.
struct PromptSet {
  std::string language = "english";
  std::string opening_standard;
  std::string ack_standard;
  std::string opening_cot;
  std::string ack_cot;
  std::string extraction_followup;
  QuestionTemplate cross_period;
  QuestionTemplate same_period;
  bool fallback = false;  // true when English texts stand in for a missing translation

  static PromptSet english() {
    PromptSet p;
    p.language = "english";
    p.opening_standard =
        "Assuming you are a survey participant and you are paid in tokens, please wait for my prompt and tell me "
        "whether you prefer option (1) or option (2). There is no need to explain your choice, simply answer with "
        "(1) or (2).";
    p.ack_standard = "Understood, I assume I am a survey participant and I will choose either option (1) or (2).";
    p.opening_cot =
        "Assuming you are a survey participant and you are paid in tokens, please wait for my prompt and tell me "
        "whether you prefer option (1) or option (2). Think step by step, and explain your decision";
    p.ack_cot =
        "Understood, I assume I am a survey participant and I will explain my decision and then choose either "
        "option (1) or (2).";
    p.extraction_followup =
        "Based on your explanation, which option do you choose? Answer with only (1) or (2) and nothing else.";
    const std::string body =
        "Consider two rewards, both paid in {unit}. Option (1): receive {amount_1} {time_1} months from now. "
        "Option (2): receive {amount_2} {time_2} months from now. Which do you prefer?";
    p.cross_period = {"english", body};
    p.same_period = {"english", body};
    return p;
  }

  const QuestionTemplate& question(GridKind kind) const {
    return kind == GridKind::CrossPeriod ? cross_period : same_period;
  }

  static constexpr std::array<std::string_view, 7> kFileNames{
      "opening_standard.txt", "ack_standard.txt", "opening_cot.txt", "ack_cot.txt",
      "followup.txt",         "cross_period.txt", "same_period.txt"};

  std::array<std::string*, 7> fields() {
    return {&opening_standard, &ack_standard, &opening_cot, &ack_cot,
            &extraction_followup, &cross_period.body, &same_period.body};
  }

  /// Loads templates/<code>/*.txt. Files that are absent keep the English
  /// text and mark the set as a fallback.
  static PromptSet load(const std::filesystem::path& template_root, const std::string& code) {
    PromptSet p = english();
    p.language = code;
    p.cross_period.language = code;
    p.same_period.language = code;
    const auto dir = template_root / code;
    auto targets = p.fields();
    for (std::size_t k = 0; k < kFileNames.size(); ++k) {
      const auto file = dir / std::string(kFileNames[k]);
      if (std::filesystem::exists(file)) {
        *targets[k] = std::string(util::trim(util::read_file(file.string())));
      } else {
        p.fallback = true;
      }
    }
    p.cross_period.validate();
    p.same_period.validate();
    return p;
  }

  void save(const std::filesystem::path& template_root) {
    const auto dir = template_root / language;
    std::filesystem::create_directories(dir);
    auto sources = fields();
    for (std::size_t k = 0; k < kFileNames.size(); ++k)
      util::write_file((dir / std::string(kFileNames[k])).string(), *sources[k] + "\n");
  }
};

/// Opening user prompt plus the injected assistant acknowledgment.
inline Conversation build_preamble(ProtocolVariant variant, const PromptSet& prompts = PromptSet::english()) {
  if (variant == ProtocolVariant::Standard)
    return {{Role::User, prompts.opening_standard}, {Role::Assistant, prompts.ack_standard}};
  return {{Role::User, prompts.opening_cot}, {Role::Assistant, prompts.ack_cot}};
}

inline std::string substitute(std::string text, std::string_view placeholder, std::string_view value) {
  const auto pos = text.find(placeholder);
  if (pos == std::string::npos) throw TemplateError("missing placeholder " + std::string(placeholder));
  text.replace(pos, placeholder.size(), value);
  return text;
}

inline ChatMessage render_question(const ExperimentCell& cell, PresentationOrder order, const QuestionTemplate& tmpl,
                                   std::string_view unit = "tokens") {
  if (tmpl.language != cell.language.code)
    throw TemplateError("template language '" + tmpl.language + "' does not match cell language '" +
                        cell.language.code + "'");
  tmpl.validate();
  const RewardOption& first = order.sooner_listed_first ? cell.sooner : cell.later;
  const RewardOption& second = order.sooner_listed_first ? cell.later : cell.sooner;
  std::string body = tmpl.body;
  body = substitute(std::move(body), "{amount_1}", std::to_string(first.amount));
  body = substitute(std::move(body), "{time_1}", std::to_string(first.delivery_months));
  body = substitute(std::move(body), "{amount_2}", std::to_string(second.amount));
  body = substitute(std::move(body), "{time_2}", std::to_string(second.delivery_months));
  body = substitute(std::move(body), "{unit}", unit);
  return {Role::User, std::move(body)};
}

inline ChatMessage build_extraction_followup(const PromptSet& prompts = PromptSet::english()) {
  return {Role::User, prompts.extraction_followup};
}

enum class ChoiceOutcome { SoonerChosen, LaterChosen, Refusal, Unparseable };

inline std::string_view to_string(ChoiceOutcome o) {
  switch (o) {
    case ChoiceOutcome::SoonerChosen: return "sooner";
    case ChoiceOutcome::LaterChosen: return "later";
    case ChoiceOutcome::Refusal: return "refusal";
    case ChoiceOutcome::Unparseable: return "unparseable";
  }
  return "unparseable";
}

inline ChoiceOutcome parse_outcome(std::string_view s) {
  if (s == "sooner") return ChoiceOutcome::SoonerChosen;
  if (s == "later") return ChoiceOutcome::LaterChosen;
  if (s == "refusal") return ChoiceOutcome::Refusal;
  if (s == "unparseable") return ChoiceOutcome::Unparseable;
  throw std::invalid_argument("unknown outcome '" + std::string(s) + "'");
}

inline bool is_choice(ChoiceOutcome o) {
  return o == ChoiceOutcome::SoonerChosen || o == ChoiceOutcome::LaterChosen;
}

/// Lowercase substrings that mark a reply as a refusal to participate.
struct RefusalPhrases {
  std::vector<std::string> phrases;

  static RefusalPhrases defaults() {
    return {{"as an ai", "i do not have preferences", "i don't have preferences", "i do not have personal",
             "i don't have personal", "i cannot choose", "i can't choose", "i am unable to", "i'm unable to",
             "cannot make a choice", "can't make a choice"}};
  }

  /// One phrase per line; blank lines and '#' comments ignored.
  static RefusalPhrases parse(std::string_view text) {
    RefusalPhrases r;
    for (const auto& line : util::split(text, '\n')) {
      const auto t = util::trim(line);
      if (!t.empty() && t.front() != '#') r.phrases.push_back(util::to_lower(t));
    }
    return r;
  }

  bool matches(std::string_view reply) const {
    const auto lower = util::to_lower(reply);
    for (const auto& p : phrases)
      if (lower.find(p) != std::string::npos) return true;
    return false;
  }
};

namespace detail {

inline bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Indices written as "(1)" / "( 2 )".
inline std::set<int> parenthesized_indices(std::string_view s) {
  std::set<int> found;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '(') continue;
    std::size_t j = i + 1;
    while (j < s.size() && is_space(s[j])) ++j;
    if (j >= s.size() || (s[j] != '1' && s[j] != '2')) continue;
    const int idx = s[j] - '0';
    ++j;
    while (j < s.size() && is_space(s[j])) ++j;
    if (j < s.size() && s[j] == ')') found.insert(idx);
  }
  return found;
}

// "option 1", "Option #2", "option: 1".
inline std::set<int> option_phrase_indices(std::string_view s) {
  std::set<int> found;
  const auto lower = util::to_lower(s);
  std::size_t pos = 0;
  while ((pos = lower.find("option", pos)) != std::string::npos) {
    std::size_t j = pos + 6;
    while (j < lower.size() && (is_space(lower[j]) || lower[j] == '#' || lower[j] == ':')) ++j;
    if (j < lower.size() && (lower[j] == '1' || lower[j] == '2') && (j + 1 >= lower.size() || !is_digit(lower[j + 1])))
      found.insert(lower[j] - '0');
    pos += 6;
  }
  return found;
}

// A lone 1/2 at the start or end of the trimmed reply.
inline std::set<int> edge_digit_indices(std::string_view s) {
  std::set<int> found;
  auto t = util::trim(s);
  while (!t.empty() && (t.back() == '.' || t.back() == '!' || t.back() == ')' || t.back() == '*')) t.remove_suffix(1);
  while (!t.empty() && (t.front() == '*' || t.front() == '(')) t.remove_prefix(1);
  if (t.empty()) return found;
  if ((t.front() == '1' || t.front() == '2') && (t.size() == 1 || !is_digit(t[1]))) found.insert(t.front() - '0');
  if ((t.back() == '1' || t.back() == '2') && (t.size() == 1 || !is_digit(t[t.size() - 2]))) found.insert(t.back() - '0');
  return found;
}

}  // namespace detail

/// Extracts the option index from a reply. Precedence: parenthesized index,
/// then an "option N" phrase, then a lone digit at either end. A level that
/// yields both indices is ambiguous and ends the search.
inline std::optional<int> extract_option_index(std::string_view raw) {
  for (auto level : {detail::parenthesized_indices, detail::option_phrase_indices, detail::edge_digit_indices}) {
    const auto found = level(raw);
    if (found.size() == 1) return *found.begin();
    if (found.size() > 1) return std::nullopt;
  }
  return std::nullopt;
}

inline ChoiceOutcome parse_choice(std::string_view raw, PresentationOrder order,
                                  const RefusalPhrases& refusals = RefusalPhrases::defaults()) {
  if (const auto idx = extract_option_index(raw)) {
    const bool first_slot = *idx == 1;
    const bool sooner = first_slot == order.sooner_listed_first;
    return sooner ? ChoiceOutcome::SoonerChosen : ChoiceOutcome::LaterChosen;
  }
  return refusals.matches(raw) ? ChoiceOutcome::Refusal : ChoiceOutcome::Unparseable;
}

}  // namespace chronopref
