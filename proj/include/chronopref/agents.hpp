#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "chronopref/design.hpp"
#include "chronopref/prompting.hpp"
#include "chronopref/util/rng.hpp"
#include "chronopref/util/text.hpp"

namespace chronopref {

enum class DiscountFamily { Exponential, Hyperbolic, QuasiHyperbolic };

inline DiscountFamily parse_discount_family(std::string_view s) {
  if (s == "exponential") return DiscountFamily::Exponential;
  if (s == "hyperbolic") return DiscountFamily::Hyperbolic;
  if (s == "quasi_hyperbolic") return DiscountFamily::QuasiHyperbolic;
  throw std::invalid_argument("unknown discount family '" + std::string(s) + "'");
}

inline std::string_view to_string(DiscountFamily f) {
  switch (f) {
    case DiscountFamily::Exponential: return "exponential";
    case DiscountFamily::Hyperbolic: return "hyperbolic";
    case DiscountFamily::QuasiHyperbolic: return "quasi_hyperbolic";
  }
  return "exponential";
}

/// delta is a yearly rate; beta only applies to the quasi-hyperbolic family.
struct DiscountSpec {
  DiscountFamily family = DiscountFamily::Exponential;
  double delta = 0.0;
  std::optional<double> beta;

  static DiscountSpec exponential(double delta) { return {DiscountFamily::Exponential, delta, std::nullopt}; }
  static DiscountSpec hyperbolic(double delta) { return {DiscountFamily::Hyperbolic, delta, std::nullopt}; }
  static DiscountSpec quasi_hyperbolic(double delta, double beta) {
    return {DiscountFamily::QuasiHyperbolic, delta, beta};
  }

  void validate() const {
    if (!(delta > 0.0)) throw std::invalid_argument("delta must be > 0");
    if ((family == DiscountFamily::QuasiHyperbolic) != beta.has_value())
      throw std::invalid_argument("beta is required for, and only for, the quasi-hyperbolic family");
    if (beta && !(*beta > 0.0 && *beta <= 1.0)) throw std::invalid_argument("beta must lie in (0, 1]");
  }
};

/// ln PV(r, t), t in months from now.
inline double log_present_value(const DiscountSpec& d, double reward, double months) {
  const double years = months / 12.0;
  switch (d.family) {
    case DiscountFamily::Exponential: return std::log(reward) - years * std::log1p(d.delta);
    case DiscountFamily::Hyperbolic: return std::log(reward) - std::log1p(d.delta * years);
    case DiscountFamily::QuasiHyperbolic:
      if (months == 0.0) return std::log(reward);
      return std::log(*d.beta) + std::log(reward) - years * std::log1p(d.delta);
  }
  return std::log(reward);
}

inline double present_value(const DiscountSpec& d, double reward, double months) {
  if (!(reward > 0.0)) throw std::invalid_argument("reward must be > 0");
  if (months < 0.0) throw std::invalid_argument("months must be >= 0");
  switch (d.family) {
    case DiscountFamily::Exponential: return reward / std::pow(1.0 + d.delta, months / 12.0);
    case DiscountFamily::Hyperbolic: return reward / (1.0 + d.delta * months / 12.0);
    case DiscountFamily::QuasiHyperbolic:
      return months == 0.0 ? reward : *d.beta * reward / std::pow(1.0 + d.delta, months / 12.0);
  }
  return reward;
}

inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(logistic(z)) without overflow or cancellation.
inline double log_logistic(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

/// Discounted random utility respondent: Luce rule on present values with
/// noise mu.
struct RUMAgent {
  DiscountSpec discount;
  double mu = 1.0;

  void validate() const {
    discount.validate();
    if (!(mu > 0.0)) throw std::invalid_argument("mu must be > 0");
  }
};

/// logistic((ln EU_s - ln EU_l) / mu), equal to EU_s^(1/mu) / (EU_s^(1/mu) + EU_l^(1/mu)).
inline double choice_logit_sooner(const RUMAgent& agent, const RewardOption& sooner, const RewardOption& later) {
  const double ls = log_present_value(agent.discount, static_cast<double>(sooner.amount), sooner.delivery_months);
  const double ll = log_present_value(agent.discount, static_cast<double>(later.amount), later.delivery_months);
  return (ls - ll) / agent.mu;
}

inline double choice_prob_sooner(const RUMAgent& agent, const RewardOption& sooner, const RewardOption& later) {
  return logistic(choice_logit_sooner(agent, sooner, later));
}

/// Chooses by timing alone across periods (later share logistic(a + b*d))
/// and by reward gap within a period (larger share logistic(gamma*(r2-r1)/1000)).
struct LexicographicAgent {
  double a = -1.2;
  double b = 0.0;
  double gamma = 1.0;

  void validate() const {
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
  }

  double prob_later(const RewardOption& sooner, const RewardOption& later) const {
    if (sooner.delivery_months == later.delivery_months)
      return logistic(gamma * static_cast<double>(later.amount - sooner.amount) / 1000.0);
    return logistic(a + b * static_cast<double>(later.delivery_months - sooner.delivery_months));
  }
};

using Agent = std::variant<RUMAgent, LexicographicAgent>;

inline double prob_later(const Agent& agent, const ExperimentCell& cell) {
  return std::visit(
      [&](const auto& a) -> double {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, RUMAgent>) {
          return 1.0 - choice_prob_sooner(a, cell.sooner, cell.later);
        } else {
          return a.prob_later(cell.sooner, cell.later);
        }
      },
      agent);
}

enum class Phrasing { Plain, Noisy };

/// Draws one choice and renders it as a reply consistent with the
/// presentation order. Deterministic in seed.
inline std::string respond(const Agent& agent, const ExperimentCell& cell, PresentationOrder order,
                           std::uint64_t seed, Phrasing phrasing = Phrasing::Plain) {
  util::Rng rng(seed);
  const bool later = rng.bernoulli(prob_later(agent, cell));
  const int slot = (later != order.sooner_listed_first) ? 1 : 2;
  const std::string k = std::to_string(slot);
  if (phrasing == Phrasing::Plain) return "(" + k + ")";
  static constexpr std::array<std::string_view, 5> kWrappers{
      "I would choose ({k}).", "My answer: option {k}", "({k})\n", "{k}", "After thinking about it, I prefer ({k})."};
  std::string out(kWrappers[rng.below(kWrappers.size())]);
  const auto pos = out.find("{k}");
  out.replace(pos, 3, k);
  return out;
}

/// Synthetic chain-of-thought text: words drawn from three themes whose mix
/// shifts with the cell (risk grows with delay, urgency with interest,
/// strong-FTR languages discuss risk less).
struct ExplanationModel {
  int words_per_doc = 40;

  static const std::array<std::vector<std::string>, 3>& vocab() {
    static const std::array<std::vector<std::string>, 3> kVocab{{
        {"risk", "uncertainty", "uncertain", "change", "unpredictable", "circumstances", "guarantee", "chance",
         "inflation", "unforeseen", "security", "stability", "reliable", "volatile", "danger"},
        {"invest", "investment", "opportunity", "return", "interest", "growth", "worth", "earn", "potential",
         "compound", "alternative", "gain", "profit", "value", "rate"},
        {"need", "immediate", "urgent", "expenses", "bills", "emergency", "quickly", "cash", "necessity",
         "pressing", "current", "spending", "requirement", "liquidity", "instant"},
    }};
    return kVocab;
  }

  std::array<double, 3> mixture(const ExperimentCell& cell) const {
    const double d = cell.horizon();
    const double i = cell.interest ? cell.interest->rate() : 0.0;
    std::array<double, 3> w{1.0 + 0.06 * d - (cell.language.strong_ftr() ? 0.3 : 0.0), 2.2 - 0.5 * i,
                            0.8 + 0.5 * i};
    double total = 0.0;
    for (auto& x : w) {
      x = std::max(x, 0.05);
      total += x;
    }
    for (auto& x : w) x /= total;
    return w;
  }

  std::string generate(const ExperimentCell& cell, std::uint64_t seed) const {
    util::Rng rng(util::mix_seed({seed, 0xC07u}));
    const auto mix = mixture(cell);
    std::string text = "Let me think step by step about the options.";
    for (int w = 0; w < words_per_doc; ++w) {
      const double u = rng.uniform();
      const int topic = u < mix[0] ? 0 : (u < mix[0] + mix[1] ? 1 : 2);
      const auto& words = vocab()[static_cast<std::size_t>(topic)];
      text += (w % 8 == 0) ? ". The " : " ";
      text += words[rng.below(words.size())];
    }
    text += ". Therefore I will make my choice.";
    return text;
  }
};

/// Per-language agent assignment loaded from a population asset:
/// language entries override FTR-group entries, which override "default".
class Population {
 public:
  Population() = default;

  static Population from_json(const nlohmann::json& j) {
    Population p;
    if (j.contains("default")) p.default_ = parse_agent(j.at("default"));
    if (j.contains("ftr")) {
      for (const auto& [group, spec] : j.at("ftr").items()) p.by_ftr_[parse_ftr_class(group)] = parse_agent(spec);
    }
    if (j.contains("languages")) {
      for (const auto& [code, spec] : j.at("languages").items()) p.by_language_[util::to_lower(code)] = parse_agent(spec);
    }
    p.phrasing_ = j.value("phrasing", std::string("plain")) == "noisy" ? Phrasing::Noisy : Phrasing::Plain;
    p.refusal_rate_ = j.value("refusal_rate", 0.0);
    if (p.refusal_rate_ < 0.0 || p.refusal_rate_ >= 1.0) throw std::invalid_argument("refusal_rate must lie in [0, 1)");
    if (!p.default_ && p.by_ftr_.empty() && p.by_language_.empty())
      throw std::invalid_argument("population spec defines no agents");
    return p;
  }

  static Population load(const std::string& path) { return from_json(nlohmann::json::parse(util::read_file(path))); }

  static Population uniform(Agent agent) {
    Population p;
    p.default_ = std::move(agent);
    return p;
  }

  static Population by_ftr(Agent strong, Agent weak) {
    Population p;
    p.by_ftr_[FtrClass::Strong] = std::move(strong);
    p.by_ftr_[FtrClass::Weak] = std::move(weak);
    return p;
  }

  const Agent& agent_for(const Language& lang) const {
    if (auto it = by_language_.find(lang.code); it != by_language_.end()) return it->second;
    if (auto it = by_ftr_.find(lang.ftr_class); it != by_ftr_.end()) return it->second;
    if (default_) return *default_;
    throw std::out_of_range("population has no agent for language '" + lang.code + "'");
  }

  Phrasing phrasing() const { return phrasing_; }
  double refusal_rate() const { return refusal_rate_; }
  void set_refusal_rate(double r) { refusal_rate_ = r; }
  void set_phrasing(Phrasing p) { phrasing_ = p; }

  static Agent parse_agent(const nlohmann::json& j) {
    const auto model = j.value("model", std::string("rum"));
    if (model == "rum") {
      RUMAgent a;
      a.discount.family = parse_discount_family(j.value("family", std::string("exponential")));
      a.discount.delta = j.at("delta").get<double>();
      if (j.contains("beta")) a.discount.beta = j.at("beta").get<double>();
      a.mu = j.at("mu").get<double>();
      a.validate();
      return a;
    }
    if (model == "lexicographic") {
      LexicographicAgent a;
      a.a = j.at("a").get<double>();
      a.b = j.value("b", 0.0);
      a.gamma = j.at("gamma").get<double>();
      a.validate();
      return a;
    }
    throw std::invalid_argument("unknown agent model '" + model + "'");
  }

 private:
  std::optional<Agent> default_;
  std::map<FtrClass, Agent> by_ftr_;
  std::map<std::string, Agent> by_language_;
  Phrasing phrasing_ = Phrasing::Plain;
  double refusal_rate_ = 0.0;
};

}  // namespace chronopref
