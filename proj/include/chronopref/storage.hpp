#pragma once

#include <unistd.h>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "chronopref/client.hpp"
#include "chronopref/design.hpp"
#include "chronopref/prompting.hpp"
#include "chronopref/util/csv.hpp"
#include "chronopref/util/text.hpp"

namespace chronopref {

class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Study { StandardGpt35, StandardGpt4, CoTGpt4, SamePeriod, Simulated };

inline std::string_view to_string(Study s) {
  switch (s) {
    case Study::StandardGpt35: return "standard_gpt35";
    case Study::StandardGpt4: return "standard_gpt4";
    case Study::CoTGpt4: return "cot_gpt4";
    case Study::SamePeriod: return "same_period";
    case Study::Simulated: return "simulated";
  }
  return "simulated";
}

inline Study parse_study(std::string_view s) {
  for (auto st : {Study::StandardGpt35, Study::StandardGpt4, Study::CoTGpt4, Study::SamePeriod, Study::Simulated})
    if (to_string(st) == s) return st;
  throw std::invalid_argument("unknown study '" + std::string(s) + "'");
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string run_id;
  Study study = Study::Simulated;
  ProtocolVariant protocol = ProtocolVariant::Standard;
  GridKind grid_kind = GridKind::CrossPeriod;
  std::vector<std::string> languages;  // codes, grid order
  std::string grid_hash;
  int samples_per_cell = 1;
  std::string model_id;
  std::string respondent;  // "live" or "simulated"
  std::uint64_t seed = 0;
  std::string unit = "tokens";
  std::string created_at;

  void validate() const {
    if (run_id.empty()) throw StorageError("manifest run_id is empty");
    if (samples_per_cell <= 0) throw StorageError("samples_per_cell must be > 0");
    if (grid_hash.empty()) throw StorageError("manifest grid_hash is empty");
  }

  nlohmann::json to_json() const {
    return {{"run_id", run_id},
            {"study", std::string(to_string(study))},
            {"protocol", std::string(to_string(protocol))},
            {"grid_kind", std::string(to_string(grid_kind))},
            {"languages", languages},
            {"grid_hash", grid_hash},
            {"samples_per_cell", samples_per_cell},
            {"model_id", model_id},
            {"respondent", respondent},
            {"seed", seed},
            {"unit", unit},
            {"created_at", created_at}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.study = parse_study(j.at("study").get<std::string>());
    m.protocol = parse_protocol(j.at("protocol").get<std::string>());
    m.grid_kind = parse_grid_kind(j.at("grid_kind").get<std::string>());
    m.languages = j.at("languages").get<std::vector<std::string>>();
    m.grid_hash = j.at("grid_hash").get<std::string>();
    m.samples_per_cell = j.at("samples_per_cell").get<int>();
    m.model_id = j.value("model_id", std::string());
    m.respondent = j.value("respondent", std::string());
    m.seed = j.value("seed", std::uint64_t{0});
    m.unit = j.value("unit", std::string("tokens"));
    m.created_at = j.value("created_at", std::string());
    m.validate();
    return m;
  }
};

struct SampleRecord {
  std::string run_id;
  std::string cell_key;
  std::size_t cell_index = 0;
  int slot = 0;  // position within the cell's planned samples
  PresentationOrder order;
  std::string raw_reply;
  std::optional<std::string> cot_explanation;
  std::optional<std::string> english_translation;
  ChoiceOutcome outcome = ChoiceOutcome::Unparseable;
  int attempt = 1;
  std::optional<std::uint64_t> seed;
  TokenUsage usage;
  std::string timestamp;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["cell_key"] = cell_key;
    j["cell_index"] = cell_index;
    j["slot"] = slot;
    j["order"] = std::string(order.str());
    j["raw_reply"] = raw_reply;
    j["cot_explanation"] = cot_explanation ? nlohmann::ordered_json(*cot_explanation) : nullptr;
    j["english_translation"] = english_translation ? nlohmann::ordered_json(*english_translation) : nullptr;
    j["outcome"] = std::string(to_string(outcome));
    j["attempt"] = attempt;
    j["seed"] = seed ? nlohmann::ordered_json(*seed) : nullptr;
    j["usage"] = {{"input_tokens", usage.input_tokens}, {"output_tokens", usage.output_tokens}};
    j["timestamp"] = timestamp;
    return j;
  }

  static SampleRecord from_json(const nlohmann::json& j) {
    SampleRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.cell_key = j.at("cell_key").get<std::string>();
    r.cell_index = j.at("cell_index").get<std::size_t>();
    r.slot = j.at("slot").get<int>();
    r.order = PresentationOrder::parse(j.at("order").get<std::string>());
    r.raw_reply = j.at("raw_reply").get<std::string>();
    if (j.contains("cot_explanation") && !j.at("cot_explanation").is_null())
      r.cot_explanation = j.at("cot_explanation").get<std::string>();
    if (j.contains("english_translation") && !j.at("english_translation").is_null())
      r.english_translation = j.at("english_translation").get<std::string>();
    r.outcome = parse_outcome(j.at("outcome").get<std::string>());
    r.attempt = j.at("attempt").get<int>();
    if (j.contains("seed") && !j.at("seed").is_null()) r.seed = j.at("seed").get<std::uint64_t>();
    r.usage.input_tokens = j.at("usage").at("input_tokens").get<std::int64_t>();
    r.usage.output_tokens = j.at("usage").at("output_tokens").get<std::int64_t>();
    r.timestamp = j.value("timestamp", std::string());
    return r;
  }
};

/// Parses JSON Lines. A final line without its newline, or one that fails to
/// parse, is a torn append and is dropped; a bad line anywhere else is an
/// error. `good_bytes` receives the length of the intact prefix.
inline std::vector<SampleRecord> parse_sample_log(const std::string& text, std::size_t* good_bytes = nullptr) {
  std::vector<SampleRecord> records;
  std::size_t start = 0;
  std::size_t good = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    const bool last = end == std::string::npos || end + 1 >= text.size();
    if (end == std::string::npos) break;  // torn: no terminator
    const auto line = std::string_view(text).substr(start, end - start);
    if (!util::trim(line).empty()) {
      try {
        records.push_back(SampleRecord::from_json(nlohmann::json::parse(line)));
      } catch (const std::exception& e) {
        if (last) break;
        throw StorageError("corrupt sample log line at byte " + std::to_string(start) + ": " + e.what());
      }
    }
    start = end + 1;
    good = start;
  }
  if (good_bytes) *good_bytes = good;
  return records;
}

/// A run directory: manifest.json plus the append-only samples.jsonl.
/// One writer at a time; appends are serialized internally.
class RunStore {
 public:
  static constexpr const char* kManifest = "manifest.json";
  static constexpr const char* kSamples = "samples.jsonl";
  static constexpr const char* kAnalysis = "analysis.csv";
  static constexpr const char* kSummary = "summary.json";

  static RunStore create(const std::filesystem::path& dir, const RunManifest& manifest) {
    manifest.validate();
    std::filesystem::create_directories(dir);
    if (std::filesystem::exists(dir / kManifest)) throw StorageError("run directory already has a manifest: " + dir.string());
    util::write_file((dir / kManifest).string(), manifest.to_json().dump(2) + "\n");
    return RunStore(dir, manifest);
  }

  static RunStore open(const std::filesystem::path& dir) {
    const auto path = dir / kManifest;
    if (!std::filesystem::exists(path)) throw StorageError("no manifest in " + dir.string());
    return RunStore(dir, RunManifest::from_json(nlohmann::json::parse(util::read_file(path.string()))));
  }

  static bool exists(const std::filesystem::path& dir) { return std::filesystem::exists(dir / kManifest); }

  const RunManifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }

  std::vector<SampleRecord> read_samples() const {
    const auto path = dir_ / kSamples;
    if (!std::filesystem::exists(path)) return {};
    return parse_sample_log(util::read_file(path.string()));
  }

  /// Opens the log for appending, truncating a torn final line first.
  void open_for_append() {
    std::lock_guard lock(*mu_);
    if (file_) return;
    const auto path = dir_ / kSamples;
    if (std::filesystem::exists(path)) {
      std::size_t good = 0;
      const auto text = util::read_file(path.string());
      parse_sample_log(text, &good);
      if (good != text.size()) std::filesystem::resize_file(path, good);
    }
    FILE* f = std::fopen(path.string().c_str(), "ab");
    if (!f) throw StorageError("cannot open " + path.string() + " for append");
    file_.reset(f);
  }

  void append(const SampleRecord& record) {
    if (record.run_id != manifest_.run_id)
      throw StorageError("record run_id '" + record.run_id + "' does not match manifest '" + manifest_.run_id + "'");
    open_for_append();
    const auto line = record.to_json().dump() + "\n";
    std::lock_guard lock(*mu_);
    if (std::fwrite(line.data(), 1, line.size(), file_.get()) != line.size() || std::fflush(file_.get()) != 0)
      throw StorageError("append to sample log failed");
    ::fsync(::fileno(file_.get()));
  }

  void close() {
    std::lock_guard lock(*mu_);
    file_.reset();
  }

 private:
  struct FileCloser {
    void operator()(FILE* f) const { std::fclose(f); }
  };

  RunStore(std::filesystem::path dir, RunManifest manifest) : dir_(std::move(dir)), manifest_(std::move(manifest)) {}

  std::filesystem::path dir_;
  RunManifest manifest_;
  std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
  std::unique_ptr<FILE, FileCloser> file_;
};

struct WorkItem {
  std::size_t cell_index = 0;
  int slot = 0;
  PresentationOrder order;
  friend bool operator==(const WorkItem&, const WorkItem&) = default;
};

/// Planned samples (grid x samples_per_cell x planned orders) minus the
/// non-refusal samples already logged, in (cell, slot) order.
inline std::vector<WorkItem> remaining_work(const RunManifest& manifest, const std::vector<ExperimentCell>& grid,
                                            const std::vector<SampleRecord>& log) {
  if (grid_hash(grid) != manifest.grid_hash)
    throw StorageError("grid hash mismatch: the run was planned on a different grid; refusing to resume");
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < grid.size(); ++i) index_of.emplace(grid[i].key(), i);
  std::vector<std::set<int>> done(grid.size());
  for (const auto& r : log) {
    if (r.outcome == ChoiceOutcome::Refusal) continue;
    const auto it = index_of.find(r.cell_key);
    if (it == index_of.end() || it->second != r.cell_index)
      throw StorageError("logged sample for unknown cell '" + r.cell_key + "'");
    if (r.slot < 0 || r.slot >= manifest.samples_per_cell) throw StorageError("logged sample has out-of-plan slot");
    done[it->second].insert(r.slot);
  }
  std::vector<WorkItem> work;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto orders = plan_orders(manifest.samples_per_cell, i);
    for (int s = 0; s < manifest.samples_per_cell; ++s)
      if (!done[i].count(s)) work.push_back({i, s, orders[static_cast<std::size_t>(s)]});
  }
  return work;
}

struct AnalysisSummary {
  std::size_t records = 0;
  std::size_t rows = 0;
  std::size_t refusals = 0;
  std::size_t unparseable = 0;
  std::size_t duplicates = 0;

  nlohmann::json to_json() const {
    return {{"records", records},
            {"rows", rows},
            {"refusals", refusals},
            {"unparseable", unparseable},
            {"duplicates", duplicates}};
  }
};

struct AnalysisExport {
  util::CsvTable table;
  AnalysisSummary summary;
};

inline const std::vector<std::string>& analysis_columns() {
  static const std::vector<std::string> kCols{"language", "ftr_strong", "d", "i", "t1", "t2",
                                              "r1",       "r2",         "order", "y_later", "study"};
  return kCols;
}

/// One row per parsed sample, ordered by (cell, slot). Refusals and
/// unparseable replies are counted in the summary instead.
inline AnalysisExport export_analysis(const std::vector<SampleRecord>& log, const std::vector<ExperimentCell>& grid,
                                      Study study) {
  AnalysisExport out{util::CsvTable(analysis_columns()), {}};
  std::map<std::pair<std::size_t, int>, const SampleRecord*> chosen;
  for (const auto& r : log) {
    ++out.summary.records;
    if (r.outcome == ChoiceOutcome::Refusal) {
      ++out.summary.refusals;
      continue;
    }
    if (r.outcome == ChoiceOutcome::Unparseable) {
      ++out.summary.unparseable;
      continue;
    }
    if (r.cell_index >= grid.size() || grid[r.cell_index].key() != r.cell_key)
      throw StorageError("sample refers to a cell outside the grid: " + r.cell_key);
    if (!chosen.emplace(std::make_pair(r.cell_index, r.slot), &r).second) ++out.summary.duplicates;
  }
  for (const auto& [pos, r] : chosen) {
    const auto& c = grid[pos.first];
    out.table.add_row({c.language.code, c.language.strong_ftr() ? "1" : "0", std::to_string(c.delay_months),
                       c.interest ? c.interest->str() : std::string(), std::to_string(c.sooner.delivery_months),
                       std::to_string(c.later.delivery_months), std::to_string(c.sooner.amount),
                       std::to_string(c.later.amount), std::string(r->order.str()),
                       r->outcome == ChoiceOutcome::LaterChosen ? "1" : "0", std::string(to_string(study))});
  }
  out.summary.rows = out.table.size();
  return out;
}

/// A parsed analysis.csv row.
struct AnalysisRow {
  std::string language;
  bool strong_ftr = false;
  int d = 0;
  std::string interest;  // empty for same-period rows
  int t1 = 0, t2 = 0;
  Tokens r1 = 0, r2 = 0;
  bool sooner_first = true;
  bool y_later = false;
  std::string study;

  bool same_period() const { return t1 == t2; }
  int horizon() const { return same_period() ? t1 : d; }
  std::string cell_id() const {
    return language + "|" + std::to_string(t1) + "|" + std::to_string(t2) + "|" + std::to_string(r2);
  }
};

inline std::vector<AnalysisRow> parse_analysis(const util::CsvTable& table) {
  const auto c_lang = table.column("language"), c_ftr = table.column("ftr_strong"), c_d = table.column("d"),
             c_i = table.column("i"), c_t1 = table.column("t1"), c_t2 = table.column("t2"),
             c_r1 = table.column("r1"), c_r2 = table.column("r2"), c_order = table.column("order"),
             c_y = table.column("y_later"), c_study = table.column("study");
  std::vector<AnalysisRow> rows;
  rows.reserve(table.size());
  for (const auto& f : table.rows()) {
    AnalysisRow r;
    r.language = f[c_lang];
    r.strong_ftr = f[c_ftr] == "1";
    r.d = std::stoi(f[c_d]);
    r.interest = f[c_i];
    r.t1 = std::stoi(f[c_t1]);
    r.t2 = std::stoi(f[c_t2]);
    r.r1 = std::stoll(f[c_r1]);
    r.r2 = std::stoll(f[c_r2]);
    r.sooner_first = f[c_order] == "sooner_first";
    r.y_later = f[c_y] == "1";
    r.study = f[c_study];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace chronopref
