#include <gtest/gtest.h>

#include <filesystem>

#include "chronopref/run.hpp"

using namespace chronopref;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("chronopref_run_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<Language> langs(const std::string& spec) { return LanguageRegistry::builtin().select(spec); }

RunManifest manifest(const std::string& id, int per_cell, ProtocolVariant protocol = ProtocolVariant::Standard) {
  RunManifest m;
  m.run_id = id;
  m.study = Study::Simulated;
  m.protocol = protocol;
  m.samples_per_cell = per_cell;
  m.model_id = "sim";
  m.seed = 42;
  return m;
}

Respondent simulated(double refusal_rate = 0.0) {
  Respondent r;
  r.population = Population::from_json(nlohmann::json{{"default", {{"model", "rum"}, {"delta", 0.5}, {"mu", 0.3}}},
                                                      {"phrasing", "noisy"},
                                                      {"refusal_rate", refusal_rate}});
  return r;
}

std::string file(const fs::path& p) { return util::read_file(p.string()); }

}  // namespace

TEST(Run, RequiresExactlyOneRespondent) {
  EXPECT_THROW(execute_run(temp_dir("none"), manifest("x", 1), langs("english"), Respondent{}), RunConfigError);
  auto both = simulated();
  both.client = std::make_shared<ChatClient>(ClientConfig{}, std::make_shared<MockTransport>());
  EXPECT_THROW(execute_run(temp_dir("both"), manifest("x", 1), langs("english"), both), RunConfigError);
}

TEST(Run, SimulatedRunCompletesAndExports) {
  const auto dir = temp_dir("complete");
  const auto r = execute_run(dir, manifest("complete", 4), langs("english,german"), simulated());
  EXPECT_EQ(r.planned, 2u * 63 * 4);
  EXPECT_EQ(r.appended, r.planned);
  EXPECT_EQ(r.remaining, 0u);
  EXPECT_EQ(r.summary.rows, r.planned - r.summary.unparseable);
  EXPECT_TRUE(fs::exists(dir / RunStore::kAnalysis));
  const auto summary = nlohmann::json::parse(file(dir / RunStore::kSummary));
  EXPECT_EQ(summary["planned"], r.planned);
  EXPECT_EQ(summary["remaining_slots"], 0);
  fs::remove_all(dir);
}

TEST(Run, ResumedRunMatchesUninterruptedRun) {
  const auto a = temp_dir("whole"), b = temp_dir("pieces");
  execute_run(a, manifest("same", 3), langs("english,german"), simulated(0.05));
  RunOptions opts;
  opts.stop_after = 100;
  const auto first = execute_run(b, manifest("same", 3), langs("english,german"), simulated(0.05), RefusalPhrases::defaults(), opts);
  EXPECT_TRUE(first.stopped_early);
  EXPECT_GT(first.remaining, 0u);
  // tear the final line as a crash mid-write would
  const auto log = b / RunStore::kSamples;
  fs::resize_file(log, fs::file_size(log) - 9);
  const auto second = execute_run(b, manifest("same", 3), langs("english,german"), simulated(0.05));
  EXPECT_EQ(second.remaining, 0u);
  EXPECT_EQ(file(a / RunStore::kAnalysis), file(b / RunStore::kAnalysis));
  EXPECT_EQ(file(a / RunStore::kSummary), file(b / RunStore::kSummary));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Run, ResumeRejectsChangedSettings) {
  const auto dir = temp_dir("mismatch");
  RunOptions opts;
  opts.stop_after = 5;
  execute_run(dir, manifest("m", 2), langs("english"), simulated(), RefusalPhrases::defaults(), opts);
  auto changed = manifest("m", 2);
  changed.seed = 43;
  EXPECT_THROW(execute_run(dir, changed, langs("english"), simulated()), StorageError);
  EXPECT_THROW(execute_run(dir, manifest("m", 2), langs("german"), simulated()), StorageError);
  fs::remove_all(dir);
}

TEST(Run, RefusalsRetryUpToCap) {
  const auto dir = temp_dir("refuse");
  ClientConfig cfg;
  cfg.model_id = "mock";
  Respondent who;
  who.client = std::make_shared<ChatClient>(cfg, std::make_shared<MockTransport>("As an AI, I cannot choose."));
  auto m = manifest("refuse", 1);
  m.study = Study::StandardGpt4;
  m.model_id = "mock";
  RunOptions opts;
  opts.refusal_cap = 2;
  const auto r = execute_run(dir, m, langs("english"), who, RefusalPhrases::defaults(), opts);
  EXPECT_EQ(r.appended, 63u * 2);
  EXPECT_EQ(r.summary.refusals, 63u * 2);
  EXPECT_EQ(r.summary.rows, 0u);
  EXPECT_EQ(r.remaining, 63u);
  // a rerun with the same cap has nothing left to try; a higher cap continues the attempt numbering
  EXPECT_EQ(execute_run(dir, m, langs("english"), who, RefusalPhrases::defaults(), opts).appended, 0u);
  opts.refusal_cap = 3;
  EXPECT_EQ(execute_run(dir, m, langs("english"), who, RefusalPhrases::defaults(), opts).appended, 63u);
  for (const auto& rec : RunStore::open(dir).read_samples()) EXPECT_LE(rec.attempt, 3);
  fs::remove_all(dir);
}

TEST(Run, LiveChainOfThoughtFlow) {
  const auto dir = temp_dir("live_cot");
  auto t = std::make_shared<MockTransport>();
  t->set_handler([](const nlohmann::json& req) -> std::string {
    const auto n = req["messages"].size();
    if (n == 1) return "I would rather wait.";  // translation request
    if (n == 3) return "Ich wuerde warten, weil der Betrag waechst.";
    return "(2)";
  });
  ClientConfig cfg;
  cfg.model_id = "mock";
  cfg.policy.max_in_flight = 3;
  Respondent who;
  who.client = std::make_shared<ChatClient>(cfg, t);
  auto german = PromptSet::english();
  german.cross_period.language = "german";
  who.prompts.emplace("german", german);
  auto m = manifest("live", 1, ProtocolVariant::ChainOfThought);
  m.study = Study::CoTGpt4;
  m.model_id = "mock";
  const auto r = execute_run(dir, m, langs("german"), who);
  EXPECT_EQ(r.appended, 63u);
  EXPECT_EQ(t->calls(), 63 * 3);
  EXPECT_LE(t->max_in_flight_observed(), 3);
  for (const auto& rec : RunStore::open(dir).read_samples()) {
    ASSERT_TRUE(rec.cot_explanation.has_value());
    EXPECT_EQ(*rec.english_translation, "I would rather wait.");
    EXPECT_EQ(rec.outcome, rec.order.sooner_listed_first ? ChoiceOutcome::LaterChosen : ChoiceOutcome::SoonerChosen);
    EXPECT_GT(rec.usage.input_tokens, 0);
  }
  EXPECT_EQ(nlohmann::json::parse(file(dir / RunStore::kManifest)).dump().find("sk-"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Run, BudgetExhaustionIsResumable) {
  const auto dir = temp_dir("budget");
  auto t = std::make_shared<MockTransport>("(1)");
  ClientConfig cfg;
  cfg.model_id = "mock";
  cfg.policy.max_in_flight = 1;
  cfg.token_budget = 11 * 20;
  Respondent who;
  who.client = std::make_shared<ChatClient>(cfg, t);
  auto m = manifest("budget", 1);
  m.study = Study::StandardGpt4;
  m.model_id = "mock";
  const auto r = execute_run(dir, m, langs("english"), who);
  EXPECT_TRUE(r.budget_exhausted);
  EXPECT_EQ(r.appended, 20u);
  EXPECT_EQ(r.remaining, 63u - 20);

  cfg.token_budget.reset();
  who.client = std::make_shared<ChatClient>(cfg, t);
  const auto rest = execute_run(dir, m, langs("english"), who);
  EXPECT_FALSE(rest.budget_exhausted);
  EXPECT_EQ(rest.appended, 43u);
  EXPECT_EQ(rest.remaining, 0u);
  fs::remove_all(dir);
}

TEST(Run, TransportErrorsStillExportProgress) {
  const auto dir = temp_dir("auth");
  // accepts six requests, then the key is revoked
  struct Revoking : Transport {
    int calls = 0;
    HttpReply post(const std::string&) override {
      if (++calls > 6) return {401, R"({"error":{"message":"revoked"}})", false};
      return {200, CompletionResponse::make_body("(1)", {10, 1}), false};
    }
  };
  auto t = std::make_shared<Revoking>();
  ClientConfig cfg;
  cfg.model_id = "mock";
  cfg.policy.max_in_flight = 1;
  Respondent who;
  who.client = std::make_shared<ChatClient>(cfg, t);
  auto m = manifest("auth", 1);
  m.study = Study::StandardGpt4;
  m.model_id = "mock";
  EXPECT_THROW(execute_run(dir, m, langs("english"), who), AuthError);
  EXPECT_TRUE(fs::exists(dir / RunStore::kSummary));
  EXPECT_EQ(RunStore::open(dir).read_samples().size(), 6u);
  fs::remove_all(dir);
}

TEST(Run, SampleSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::size_t c = 0; c < 50; ++c)
    for (int s = 0; s < 5; ++s)
      for (int a = 1; a <= 3; ++a) EXPECT_TRUE(seen.insert(sample_seed(42, c, s, a)).second);
}
