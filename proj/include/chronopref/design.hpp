#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chronopref/util/csv.hpp"
#include "chronopref/util/hash.hpp"
#include "chronopref/util/text.hpp"

namespace chronopref {

using Tokens = std::int64_t;

struct RewardOption {
  int delivery_months = 1;
  Tokens amount = 0;

  void validate() const {
    if (delivery_months < 1) throw std::invalid_argument("delivery_months must be >= 1");
    if (amount <= 0) throw std::invalid_argument("reward amount must be > 0");
  }
  friend bool operator==(const RewardOption&, const RewardOption&) = default;
};

enum class FtrClass { Strong, Weak };

inline std::string_view to_string(FtrClass c) { return c == FtrClass::Strong ? "strong" : "weak"; }

inline FtrClass parse_ftr_class(std::string_view s) {
  const auto lower = util::to_lower(s);
  if (lower == "strong") return FtrClass::Strong;
  if (lower == "weak") return FtrClass::Weak;
  throw std::invalid_argument("unknown FTR class '" + std::string(s) + "'");
}

struct Language {
  std::string code;
  std::string display_name;
  FtrClass ftr_class = FtrClass::Strong;

  bool strong_ftr() const { return ftr_class == FtrClass::Strong; }
  friend bool operator==(const Language&, const Language&) = default;
};

/// The set of surveyed languages. The shipped registry lives in
/// assets/languages.json; builtin() mirrors it for code that runs without
/// the asset directory.
class LanguageRegistry {
 public:
  LanguageRegistry() = default;
  explicit LanguageRegistry(std::vector<Language> languages) : languages_(std::move(languages)) {
    for (std::size_t i = 0; i < languages_.size(); ++i)
      for (std::size_t j = i + 1; j < languages_.size(); ++j)
        if (languages_[i].code == languages_[j].code)
          throw std::invalid_argument("duplicate language code '" + languages_[i].code + "'");
  }

  static LanguageRegistry builtin() {
    constexpr std::array<std::pair<const char*, bool>, 22> kTable{{
        {"Arabic", false},    {"Bengali", false},   {"Danish", true},   {"English", false},
        {"Estonian", true},   {"Finnish", true},    {"French", false},  {"German", true},
        {"Hindi", false},     {"Indonesian", true}, {"Italian", false}, {"Japanese", true},
        {"Korean", false},    {"Malay", true},      {"Mandarin", true}, {"Norwegian", true},
        {"Portuguese", false}, {"Russian", false},  {"Spanish", false}, {"Swedish", true},
        {"Thai", false},      {"Vietnamese", false},
    }};
    std::vector<Language> langs;
    for (const auto& [name, weak] : kTable)
      langs.push_back({util::to_lower(name), name, weak ? FtrClass::Weak : FtrClass::Strong});
    return LanguageRegistry(std::move(langs));
  }

  static LanguageRegistry from_json(const nlohmann::json& j) {
    std::vector<Language> langs;
    for (const auto& item : j.at("languages")) {
      langs.push_back({item.at("code").get<std::string>(), item.at("name").get<std::string>(),
                       parse_ftr_class(item.at("ftr").get<std::string>())});
    }
    return LanguageRegistry(std::move(langs));
  }

  static LanguageRegistry load(const std::string& path) {
    return from_json(nlohmann::json::parse(util::read_file(path)));
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : languages_)
      arr.push_back({{"code", l.code}, {"name", l.display_name}, {"ftr", std::string(to_string(l.ftr_class))}});
    return {{"languages", arr}};
  }

  const std::vector<Language>& all() const { return languages_; }

  const Language& at(std::string_view code) const {
    const auto lower = util::to_lower(code);
    for (const auto& l : languages_)
      if (l.code == lower || util::to_lower(l.display_name) == lower) return l;
    throw std::out_of_range("unknown language '" + std::string(code) + "'");
  }

  /// Resolves a comma-separated selection; "all" or empty means every language.
  std::vector<Language> select(std::string_view selection) const {
    const auto trimmed = util::trim(selection);
    if (trimmed.empty() || util::to_lower(trimmed) == "all") return languages_;
    std::vector<Language> out;
    for (const auto& part : util::split(trimmed, ',')) {
      const auto name = util::trim(part);
      if (!name.empty()) out.push_back(at(name));
    }
    return out;
  }

 private:
  std::vector<Language> languages_;
};

/// Yearly interest rate held as an integer percentage so grid arithmetic and
/// CSV formatting are exact.
struct InterestRate {
  int percent = 0;

  double rate() const { return percent / 100.0; }
  std::string str() const { return util::fixed(rate(), 2); }
  friend bool operator==(const InterestRate&, const InterestRate&) = default;
};

inline constexpr std::array<int, 9> kDelayMonths{1, 2, 3, 4, 6, 12, 18, 24, 36};
inline constexpr std::array<int, 7> kInterestPercents{5, 10, 25, 50, 75, 100, 200};
inline constexpr std::array<int, 7> kSamePeriodMonths{2, 3, 4, 5, 7, 13, 25};
inline constexpr std::array<Tokens, 7> kSamePeriodRewards{1041, 1082, 1401, 1781, 3174, 5061, 7376};
inline constexpr Tokens kBaseReward = 1000;
inline constexpr int kSoonerMonths = 1;

/// floor(r1 * (1 + i)^(d / 12)). The 1e-9 guard keeps values that are exact
/// integers in real arithmetic (1.1^2 * 1000) from flooring one unit low.
inline Tokens compute_delayed_reward(Tokens r1, double interest, int delay_months) {
  if (r1 <= 0) throw std::invalid_argument("r1 must be positive");
  if (interest < 0.0 || !std::isfinite(interest)) throw std::invalid_argument("interest must be >= 0");
  if (delay_months < 0) throw std::invalid_argument("delay must be >= 0");
  const double value = static_cast<double>(r1) * std::pow(1.0 + interest, delay_months / 12.0);
  return static_cast<Tokens>(std::floor(value + 1e-9));
}

enum class GridKind { CrossPeriod, SamePeriod };

inline std::string_view to_string(GridKind k) {
  return k == GridKind::CrossPeriod ? "cross_period" : "same_period";
}

inline GridKind parse_grid_kind(std::string_view s) {
  if (s == "cross_period" || s == "cross") return GridKind::CrossPeriod;
  if (s == "same_period" || s == "same") return GridKind::SamePeriod;
  throw std::invalid_argument("unknown grid kind '" + std::string(s) + "'");
}

/// One experimental condition. Cross-period cells pair (1, 1000) with
/// (1 + d, r2); same-period cells pair (t, 1000) with (t, r2). In both cases
/// `sooner` is the smaller reward and `later` the larger one.
struct ExperimentCell {
  GridKind kind = GridKind::CrossPeriod;
  Language language;
  int delay_months = 0;                 // d; 0 for same-period cells
  std::optional<InterestRate> interest;  // cross-period only
  RewardOption sooner;
  RewardOption later;

  /// Delay-like coordinate used for fixed effects: d for cross-period cells,
  /// the shared delivery month t for same-period cells.
  int horizon() const { return kind == GridKind::CrossPeriod ? delay_months : later.delivery_months; }

  std::string key() const {
    if (kind == GridKind::CrossPeriod)
      return language.code + "|cross|d=" + std::to_string(delay_months) + "|i=" + interest->str();
    return language.code + "|same|t=" + std::to_string(later.delivery_months) +
           "|r2=" + std::to_string(later.amount);
  }
  friend bool operator==(const ExperimentCell&, const ExperimentCell&) = default;
};

inline ExperimentCell make_cross_period_cell(const Language& lang, int delay_months, InterestRate interest) {
  ExperimentCell cell;
  cell.kind = GridKind::CrossPeriod;
  cell.language = lang;
  cell.delay_months = delay_months;
  cell.interest = interest;
  cell.sooner = {kSoonerMonths, kBaseReward};
  cell.later = {kSoonerMonths + delay_months, compute_delayed_reward(kBaseReward, interest.rate(), delay_months)};
  return cell;
}

inline ExperimentCell make_same_period_cell(const Language& lang, int months, Tokens r2) {
  if (r2 <= kBaseReward) throw std::invalid_argument("same-period r2 must exceed r1");
  ExperimentCell cell;
  cell.kind = GridKind::SamePeriod;
  cell.language = lang;
  cell.delay_months = 0;
  cell.sooner = {months, kBaseReward};
  cell.later = {months, r2};
  return cell;
}

/// Ordered (language, delay, interest).
inline std::vector<ExperimentCell> build_cross_period_grid(const std::vector<Language>& languages) {
  std::vector<ExperimentCell> cells;
  cells.reserve(languages.size() * kDelayMonths.size() * kInterestPercents.size());
  for (const auto& lang : languages)
    for (int d : kDelayMonths)
      for (int pct : kInterestPercents) cells.push_back(make_cross_period_cell(lang, d, InterestRate{pct}));
  return cells;
}

/// Ordered (language, t, r2).
inline std::vector<ExperimentCell> build_same_period_grid(const std::vector<Language>& languages) {
  std::vector<ExperimentCell> cells;
  cells.reserve(languages.size() * kSamePeriodMonths.size() * kSamePeriodRewards.size());
  for (const auto& lang : languages)
    for (int t : kSamePeriodMonths)
      for (Tokens r2 : kSamePeriodRewards) cells.push_back(make_same_period_cell(lang, t, r2));
  return cells;
}

inline std::vector<ExperimentCell> build_grid(GridKind kind, const std::vector<Language>& languages) {
  return kind == GridKind::CrossPeriod ? build_cross_period_grid(languages) : build_same_period_grid(languages);
}

struct PresentationOrder {
  bool sooner_listed_first = true;

  std::string_view str() const { return sooner_listed_first ? "sooner_first" : "later_first"; }
  static PresentationOrder parse(std::string_view s) {
    if (s == "sooner_first") return {true};
    if (s == "later_first") return {false};
    throw std::invalid_argument("unknown presentation order '" + std::string(s) + "'");
  }
  friend bool operator==(const PresentationOrder&, const PresentationOrder&) = default;
};

/// Alternates sooner-first / later-first. With an odd count the final sample
/// takes sooner-first on even cell indices and later-first on odd ones.
inline std::vector<PresentationOrder> plan_orders(int n_samples, std::size_t cell_index) {
  if (n_samples < 0) throw std::invalid_argument("n_samples must be >= 0");
  std::vector<PresentationOrder> orders;
  orders.reserve(static_cast<std::size_t>(n_samples));
  const int paired = n_samples - n_samples % 2;
  for (int s = 0; s < paired; ++s) orders.push_back({s % 2 == 0});
  if (n_samples % 2 == 1) orders.push_back({cell_index % 2 == 0});
  return orders;
}

inline util::CsvTable grid_to_csv(const std::vector<ExperimentCell>& cells) {
  util::CsvTable table({"language", "ftr_class", "study", "t1", "r1", "t2", "r2", "d", "interest"});
  for (const auto& c : cells) {
    table.add_row({c.language.code, std::string(to_string(c.language.ftr_class)), std::string(to_string(c.kind)),
                   std::to_string(c.sooner.delivery_months), std::to_string(c.sooner.amount),
                   std::to_string(c.later.delivery_months), std::to_string(c.later.amount),
                   std::to_string(c.delay_months), c.interest ? c.interest->str() : std::string()});
  }
  return table;
}

/// Content hash of the canonical grid CSV; binds run manifests to a grid.
inline std::string grid_hash(const std::vector<ExperimentCell>& cells) {
  return util::sha256_hex(grid_to_csv(cells).to_string());
}

/// Interest-by-delay matrix of r2 in the layout of the published reward table.
inline std::string render_reward_table() {
  std::string out = "Interest (% per year) | Difference d between t2 and t1 (months)\n";
  out += "     ";
  for (int d : kDelayMonths) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), " %6d", d);
    out += buf;
  }
  out += "\n";
  for (int pct : kInterestPercents) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%4d ", pct);
    out += buf;
    for (int d : kDelayMonths) {
      std::snprintf(buf, sizeof(buf), " %6lld",
                    static_cast<long long>(compute_delayed_reward(kBaseReward, pct / 100.0, d)));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace chronopref
