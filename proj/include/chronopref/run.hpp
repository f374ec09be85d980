#pragma once

// Drives a study: plans the grid, asks a respondent (live model or simulated
// population) for every planned sample, appends each reply to the run log and
// exports the analysis table. Re-running on the same directory resumes.

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "chronopref/agents.hpp"
#include "chronopref/client.hpp"
#include "chronopref/design.hpp"
#include "chronopref/prompting.hpp"
#include "chronopref/storage.hpp"
#include "chronopref/util/rng.hpp"

namespace chronopref {

class RunConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Who answers the questions. Exactly one of population / client is set.
struct Respondent {
  std::optional<Population> population;
  std::shared_ptr<ChatClient> client;
  std::map<std::string, PromptSet> prompts;  // by language code; English texts when absent

  bool live() const { return client != nullptr; }

  const PromptSet& prompts_for(const std::string& code) const {
    static const PromptSet kEnglish = PromptSet::english();
    const auto it = prompts.find(code);
    return it == prompts.end() ? kEnglish : it->second;
  }
};

struct RunOptions {
  int refusal_cap = 3;  // attempts per slot before it is left as a refusal
  std::optional<std::size_t> stop_after;  // stop after this many appends (for kill/resume rehearsal)
  std::function<void(std::size_t done, std::size_t total, const TokenUsage&)> progress;
};

struct RunResult {
  std::size_t planned = 0;
  std::size_t appended = 0;
  std::size_t remaining = 0;
  bool budget_exhausted = false;
  bool stopped_early = false;
  TokenUsage usage;
  AnalysisSummary summary;
};

inline constexpr const char* kSimulatedRefusal =
    "As an AI, I don't have personal preferences, so I can't choose between these options.";

inline std::uint64_t sample_seed(std::uint64_t run_seed, std::size_t cell_index, int slot, int attempt) {
  return util::mix_seed({run_seed, static_cast<std::uint64_t>(cell_index), static_cast<std::uint64_t>(slot),
                         static_cast<std::uint64_t>(attempt)});
}

/// One attempt at one planned sample. Token usage is zero for simulated runs.
inline SampleRecord ask_once(const RunManifest& manifest, const ExperimentCell& cell, const WorkItem& item,
                             int attempt, const Respondent& who, const RefusalPhrases& refusals) {
  SampleRecord rec;
  rec.run_id = manifest.run_id;
  rec.cell_key = cell.key();
  rec.cell_index = item.cell_index;
  rec.slot = item.slot;
  rec.order = item.order;
  rec.attempt = attempt;
  rec.seed = sample_seed(manifest.seed, item.cell_index, item.slot, attempt);
  const bool cot = manifest.protocol == ProtocolVariant::ChainOfThought;

  if (!who.live()) {
    const auto& pop = *who.population;
    util::Rng rng(*rec.seed);
    if (pop.refusal_rate() > 0.0 && rng.bernoulli(pop.refusal_rate())) {
      rec.raw_reply = kSimulatedRefusal;
    } else {
      rec.raw_reply = respond(pop.agent_for(cell.language), cell, item.order, util::mix_seed({*rec.seed, 1}),
                              pop.phrasing());
      if (cot) {
        // simulated explanations are already English
        rec.cot_explanation = ExplanationModel{}.generate(cell, *rec.seed);
        rec.english_translation = rec.cot_explanation;
      }
    }
    rec.outcome = parse_choice(rec.raw_reply, item.order, refusals);
    rec.timestamp = utc_timestamp();
    return rec;
  }

  auto& client = *who.client;
  const auto& prompts = who.prompts_for(cell.language.code);
  Conversation conv = build_preamble(manifest.protocol, prompts);
  conv.push_back(render_question(cell, item.order, prompts.question(cell.kind), manifest.unit));
  const auto first = client.complete(conv);
  rec.usage += first.usage;
  if (!cot) {
    rec.raw_reply = first.content;
  } else if (first.content.empty()) {
    rec.raw_reply = "";
  } else {
    rec.cot_explanation = first.content;
    conv.emplace_back(Role::Assistant, first.content);
    conv.push_back(build_extraction_followup(prompts));
    const auto second = client.complete(conv);
    rec.usage += second.usage;
    rec.raw_reply = second.content;
    if (cell.language.code == "english") {
      rec.english_translation = first.content;
    } else {
      const TokenUsage before = client.usage();
      rec.english_translation = client.translate(first.content, Language{"english", "English", FtrClass::Strong});
      const TokenUsage after = client.usage();
      rec.usage.input_tokens += after.input_tokens - before.input_tokens;
      rec.usage.output_tokens += after.output_tokens - before.output_tokens;
    }
  }
  rec.outcome = parse_choice(rec.raw_reply, item.order, refusals);
  rec.timestamp = utc_timestamp();
  return rec;
}

/// Fields that must agree for a directory to be resumed.
inline void check_resume_compatible(const RunManifest& stored, const RunManifest& wanted) {
  auto differs = [](const char* what) {
    throw StorageError(std::string("run directory was created with a different ") + what + "; refusing to resume");
  };
  if (stored.grid_hash != wanted.grid_hash) differs("grid");
  if (stored.study != wanted.study) differs("study");
  if (stored.protocol != wanted.protocol) differs("protocol");
  if (stored.samples_per_cell != wanted.samples_per_cell) differs("samples_per_cell");
  if (stored.seed != wanted.seed) differs("seed");
  if (stored.respondent != wanted.respondent) differs("respondent");
  if (stored.unit != wanted.unit) differs("unit");
  if (stored.model_id != wanted.model_id) differs("model");
}

/// Writes analysis.csv and summary.json from whatever the log holds.
inline AnalysisSummary export_run(const RunStore& store, const std::vector<ExperimentCell>& grid) {
  const auto& m = store.manifest();
  const auto log = store.read_samples();
  const auto ex = export_analysis(log, grid, m.study);
  ex.table.save((store.dir() / RunStore::kAnalysis).string());
  const auto planned = grid.size() * static_cast<std::size_t>(m.samples_per_cell);
  const auto remaining = remaining_work(m, grid, log).size();
  TokenUsage logged;
  for (const auto& r : log) logged += r.usage;
  nlohmann::ordered_json j;
  j["run_id"] = m.run_id;
  j["study"] = std::string(to_string(m.study));
  j["protocol"] = std::string(to_string(m.protocol));
  j["grid_kind"] = std::string(to_string(m.grid_kind));
  j["grid_hash"] = m.grid_hash;
  j["planned"] = planned;
  j["completed_slots"] = planned - remaining;
  j["remaining_slots"] = remaining;
  j["records"] = ex.summary.records;
  j["rows"] = ex.summary.rows;
  j["refusals"] = ex.summary.refusals;
  j["unparseable"] = ex.summary.unparseable;
  j["duplicates"] = ex.summary.duplicates;
  j["input_tokens"] = logged.input_tokens;
  j["output_tokens"] = logged.output_tokens;
  util::write_file((store.dir() / RunStore::kSummary).string(), j.dump(2) + "\n");
  return ex.summary;
}

/// Runs (or resumes) the study described by `manifest` in `dir`. The grid
/// hash in the manifest is filled in from `languages`.
inline RunResult execute_run(const std::filesystem::path& dir, RunManifest manifest,
                             const std::vector<Language>& languages, const Respondent& who,
                             const RefusalPhrases& refusals = RefusalPhrases::defaults(), const RunOptions& opts = {}) {
  if (who.live() == who.population.has_value())
    throw RunConfigError("a run needs exactly one respondent: a live client or a simulated population");
  if (opts.refusal_cap < 1) throw RunConfigError("refusal cap must be at least 1");
  const auto grid = build_grid(manifest.grid_kind, languages);
  manifest.grid_hash = grid_hash(grid);
  manifest.languages.clear();
  for (const auto& l : languages) manifest.languages.push_back(l.code);
  manifest.respondent = who.live() ? "live" : "simulated";
  if (manifest.created_at.empty()) manifest.created_at = utc_timestamp();

  RunStore store = [&] {
    if (RunStore::exists(dir)) {
      auto s = RunStore::open(dir);
      check_resume_compatible(s.manifest(), manifest);
      return s;
    }
    return RunStore::create(dir, manifest);
  }();
  const auto& m = store.manifest();
  const auto log = store.read_samples();
  std::map<std::pair<std::size_t, int>, int> refusals_logged;
  for (const auto& r : log)
    if (r.outcome == ChoiceOutcome::Refusal) ++refusals_logged[{r.cell_index, r.slot}];

  auto logged_refusals = [&](const WorkItem& w) {
    const auto it = refusals_logged.find({w.cell_index, w.slot});
    return it == refusals_logged.end() ? 0 : it->second;
  };
  std::vector<WorkItem> work;
  for (const auto& w : remaining_work(m, grid, log))
    if (logged_refusals(w) < opts.refusal_cap) work.push_back(w);

  RunResult result;
  result.planned = grid.size() * static_cast<std::size_t>(m.samples_per_cell);
  store.open_for_append();

  std::atomic<std::size_t> next{0}, appended{0}, finished{0};
  std::atomic<bool> stop{false}, budget{false};
  std::mutex err_mu;
  std::exception_ptr error;

  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= work.size()) return;
      const auto& item = work[idx];
      const auto& cell = grid[item.cell_index];
      int attempt = logged_refusals(item) + 1;
      try {
        for (; attempt <= opts.refusal_cap && !stop.load(); ++attempt) {
          const auto rec = ask_once(m, cell, item, attempt, who, refusals);
          store.append(rec);
          const auto n = appended.fetch_add(1) + 1;
          if (opts.stop_after && n >= *opts.stop_after) stop = true;
          if (rec.outcome != ChoiceOutcome::Refusal) break;
        }
      } catch (const BudgetExceeded&) {
        budget = true;
        stop = true;
        return;
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!error) error = std::current_exception();
        stop = true;
        return;
      }
      const auto done = finished.fetch_add(1) + 1;
      if (opts.progress) opts.progress(done, work.size(), who.live() ? who.client->usage() : TokenUsage{});
    }
  };

  const int threads = who.live() ? std::max(1, who.client->config().policy.max_in_flight) : 1;
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  store.close();

  result.appended = appended.load();
  result.budget_exhausted = budget.load();
  result.stopped_early = stop.load() && !budget.load() && !error;
  if (who.live()) result.usage = who.client->usage();
  result.summary = export_run(store, grid);
  const auto final_log = store.read_samples();
  result.remaining = remaining_work(m, grid, final_log).size();
  if (error) std::rethrow_exception(error);
  return result;
}

}  // namespace chronopref
