#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "chronopref/econometrics.hpp"
#include "chronopref/topics/text.hpp"
#include "chronopref/util/csv.hpp"
#include "chronopref/util/text.hpp"

namespace chronopref::topics {

/// Maps raw LDA topics (0-based internally, 1-based in files) onto labels.
struct TopicLabeling {
  std::vector<std::string> labels;
  std::vector<int> merge_map;  // raw topic -> label index

  static TopicLabeling defaults() {
    return {{"Risk and Uncertainty", "Opportunity Cost", "Urgency"}, {0, 1, 2, 1}};
  }

  void validate(int K) const {
    if (static_cast<int>(merge_map.size()) != K)
      throw TopicsError("labeling covers " + std::to_string(merge_map.size()) + " raw topics but the model has " +
                        std::to_string(K));
    for (int l : merge_map)
      if (l < 0 || l >= static_cast<int>(labels.size())) throw TopicsError("labeling refers to an unknown label");
  }

  std::vector<double> merge(const std::vector<double>& theta) const {
    validate(static_cast<int>(theta.size()));
    std::vector<double> out(labels.size(), 0.0);
    for (std::size_t k = 0; k < theta.size(); ++k) out[static_cast<std::size_t>(merge_map[k])] += theta[k];
    return out;
  }

  /// {"labels": [...], "merge": {"1": "Risk and Uncertainty", ...}}
  static TopicLabeling from_json(const nlohmann::json& j) {
    TopicLabeling t;
    t.labels = j.at("labels").get<std::vector<std::string>>();
    const auto& merge = j.at("merge");
    t.merge_map.assign(merge.size(), -1);
    for (const auto& [raw, label] : merge.items()) {
      const int k = std::stoi(raw) - 1;
      if (k < 0 || k >= static_cast<int>(merge.size())) throw TopicsError("raw topic ids must be 1..K: " + raw);
      const auto it = std::find(t.labels.begin(), t.labels.end(), label.get<std::string>());
      if (it == t.labels.end()) throw TopicsError("merge target is not a declared label: " + label.get<std::string>());
      t.merge_map[static_cast<std::size_t>(k)] = static_cast<int>(it - t.labels.begin());
    }
    return t;
  }
  static TopicLabeling load(const std::string& path) { return from_json(nlohmann::json::parse(util::read_file(path))); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["labels"] = labels;
    nlohmann::ordered_json m = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < merge_map.size(); ++k) m[std::to_string(k + 1)] = labels[merge_map[k]];
    j["merge"] = m;
    return j;
  }
};

/// Experimental condition a document came from.
struct DocCondition {
  std::string language;
  bool strong_ftr = false;
  int d = 0;
  std::string interest;  // e.g. "0.05"

  std::string cell() const { return language + "|" + std::to_string(d) + "|" + interest; }
};

struct PrevalenceGroup {
  std::string dimension;  // interest, delay, language
  std::string group;
  std::string label;
  bool strong_ftr = false;  // meaningful for the language dimension
  ClusteredMean stat;
};

struct PrevalenceResult {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> merged;      // documents x labels
  std::vector<std::vector<double>> normalized;  // merged / corpus mean
  std::vector<double> corpus_mean;
  std::vector<PrevalenceGroup> groups;
  std::vector<TopicRow> regression_rows;

  util::CsvTable groups_csv() const {
    util::CsvTable t({"dimension", "group", "ftr_strong", "topic", "mean", "se", "ci_lo", "ci_hi", "n", "clusters"});
    for (const auto& g : groups)
      t.add_row({g.dimension, g.group, g.dimension == "language" ? (g.strong_ftr ? "1" : "0") : "", g.label,
                 util::exact(g.stat.mean), std::isnan(g.stat.se) ? "" : util::exact(g.stat.se),
                 util::exact(g.stat.lo()), util::exact(g.stat.hi()), std::to_string(g.stat.n),
                 std::to_string(g.stat.clusters)});
    return t;
  }
};

/// theta rows are raw LDA topic probabilities, one row per document, joined to
/// the condition of the same index.
inline PrevalenceResult prevalence_analytics(const std::vector<std::vector<double>>& theta,
                                             const TopicLabeling& labeling,
                                             const std::vector<DocCondition>& conditions) {
  if (theta.size() != conditions.size()) throw TopicsError("theta rows and conditions differ in length");
  if (theta.empty()) throw TopicsError("no documents");
  PrevalenceResult r;
  r.labels = labeling.labels;
  const std::size_t L = labeling.labels.size();
  const std::size_t N = theta.size();
  r.corpus_mean.assign(L, 0.0);
  for (const auto& row : theta) {
    r.merged.push_back(labeling.merge(row));
    for (std::size_t l = 0; l < L; ++l) r.corpus_mean[l] += r.merged.back()[l];
  }
  for (auto& m : r.corpus_mean) m /= static_cast<double>(N);
  for (const auto& row : r.merged) {
    std::vector<double> n(L);
    for (std::size_t l = 0; l < L; ++l) n[l] = r.corpus_mean[l] > 0.0 ? row[l] / r.corpus_mean[l] : 0.0;
    r.normalized.push_back(std::move(n));
  }

  auto aggregate = [&](const std::string& dimension, auto key_of, auto less) {
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < N; ++i) members[key_of(conditions[i])].push_back(i);
    std::vector<std::string> keys;
    for (const auto& [k, v] : members) keys.push_back(k);
    std::stable_sort(keys.begin(), keys.end(), less);
    for (std::size_t l = 0; l < L; ++l) {
      for (const auto& k : keys) {
        std::vector<double> values;
        std::vector<std::string> clusters;
        for (auto i : members[k]) {
          values.push_back(r.normalized[i][l]);
          clusters.push_back(conditions[i].cell());
        }
        PrevalenceGroup g{dimension, k, labeling.labels[l], conditions[members[k].front()].strong_ftr,
                          clustered_mean(values, clusters)};
        r.groups.push_back(std::move(g));
      }
    }
  };
  aggregate("interest", [](const DocCondition& c) { return c.interest; },
            [](const std::string& a, const std::string& b) { return std::stod(a) < std::stod(b); });
  aggregate("delay", [](const DocCondition& c) { return std::to_string(c.d); },
            [](const std::string& a, const std::string& b) { return std::stoi(a) < std::stoi(b); });
  std::map<std::string, bool> strong;
  for (const auto& c : conditions) strong[c.language] = c.strong_ftr;
  aggregate("language", [](const DocCondition& c) { return c.language; },
            [&](const std::string& a, const std::string& b) {
              if (strong[a] != strong[b]) return strong[a];
              return a < b;
            });

  for (std::size_t i = 0; i < N; ++i) {
    const auto& c = conditions[i];
    r.regression_rows.push_back({c.language, c.strong_ftr, c.d, c.interest, c.cell(), r.normalized[i]});
  }
  return r;
}

}  // namespace chronopref::topics
