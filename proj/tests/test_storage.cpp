#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "chronopref/storage.hpp"

using namespace chronopref;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("chronopref_storage_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<ExperimentCell> small_grid() {
  return build_cross_period_grid({LanguageRegistry::builtin().at("german")});
}

RunManifest manifest_for(const std::vector<ExperimentCell>& grid, int per_cell = 2) {
  RunManifest m;
  m.run_id = "r1";
  m.languages = {"german"};
  m.grid_hash = grid_hash(grid);
  m.samples_per_cell = per_cell;
  m.model_id = "sim";
  m.respondent = "simulated";
  m.seed = 7;
  m.created_at = "2024-01-01T00:00:00Z";
  return m;
}

SampleRecord record(const std::vector<ExperimentCell>& grid, std::size_t cell, int slot, ChoiceOutcome o) {
  SampleRecord r;
  r.run_id = "r1";
  r.cell_key = grid[cell].key();
  r.cell_index = cell;
  r.slot = slot;
  r.order = plan_orders(2, cell)[static_cast<std::size_t>(slot)];
  r.raw_reply = o == ChoiceOutcome::Refusal ? "As an AI..." : "(1)";
  r.outcome = o;
  r.seed = 11;
  r.usage = {10, 2};
  return r;
}

}  // namespace

TEST(Manifest, JsonRoundTripWithoutCredentials) {
  const auto grid = small_grid();
  auto m = manifest_for(grid);
  m.protocol = ProtocolVariant::ChainOfThought;
  const auto j = m.to_json();
  const auto back = RunManifest::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  EXPECT_EQ(back.protocol, ProtocolVariant::ChainOfThought);
  const auto text = j.dump();
  EXPECT_EQ(text.find("key"), std::string::npos);
  EXPECT_EQ(text.find("sk-"), std::string::npos);
}

TEST(Manifest, Validation) {
  auto m = manifest_for(small_grid());
  m.samples_per_cell = 0;
  EXPECT_THROW(m.validate(), StorageError);
  m = manifest_for(small_grid());
  m.run_id.clear();
  EXPECT_THROW(m.validate(), StorageError);
}

TEST(SampleLog, RecordRoundTrip) {
  const auto grid = small_grid();
  auto r = record(grid, 3, 1, ChoiceOutcome::LaterChosen);
  r.cot_explanation = "weil";
  r.english_translation = "because";
  const auto back = SampleRecord::from_json(nlohmann::json::parse(r.to_json().dump()));
  EXPECT_EQ(back.to_json(), r.to_json());
}

TEST(SampleLog, TornTailIsDroppedAndCorruptMiddleThrows) {
  const auto grid = small_grid();
  const auto a = record(grid, 0, 0, ChoiceOutcome::SoonerChosen).to_json().dump() + "\n";
  const auto b = record(grid, 0, 1, ChoiceOutcome::LaterChosen).to_json().dump() + "\n";
  std::size_t good = 0;
  EXPECT_EQ(parse_sample_log(a + b, &good).size(), 2u);
  EXPECT_EQ(good, a.size() + b.size());
  EXPECT_EQ(parse_sample_log(a + b.substr(0, 20), &good).size(), 1u);
  EXPECT_EQ(good, a.size());
  EXPECT_EQ(parse_sample_log(a + "{\"run_id\":\n", &good).size(), 1u);
  EXPECT_THROW(parse_sample_log("garbage\n" + a), StorageError);
}

TEST(RunStoreTest, AppendReopenAndTruncate) {
  const auto dir = temp_dir("append");
  const auto grid = small_grid();
  auto store = RunStore::create(dir, manifest_for(grid));
  EXPECT_THROW(RunStore::create(dir, manifest_for(grid)), StorageError);
  store.append(record(grid, 0, 0, ChoiceOutcome::SoonerChosen));
  store.append(record(grid, 0, 1, ChoiceOutcome::LaterChosen));
  store.close();

  const auto log = dir / RunStore::kSamples;
  const auto intact = fs::file_size(log);
  {
    std::ofstream f(log, std::ios::app | std::ios::binary);
    f << R"({"run_id":"r1","cell_)";
  }
  auto reopened = RunStore::open(dir);
  EXPECT_EQ(reopened.read_samples().size(), 2u);
  reopened.open_for_append();
  EXPECT_EQ(fs::file_size(log), intact);
  reopened.append(record(grid, 1, 0, ChoiceOutcome::SoonerChosen));
  reopened.close();
  EXPECT_EQ(RunStore::open(dir).read_samples().size(), 3u);

  auto wrong = record(grid, 1, 1, ChoiceOutcome::SoonerChosen);
  wrong.run_id = "other";
  EXPECT_THROW(reopened.append(wrong), StorageError);
  fs::remove_all(dir);
}

TEST(RunStoreTest, MissingManifest) {
  EXPECT_THROW(RunStore::open(temp_dir("missing")), StorageError);
}

TEST(RemainingWork, CountsSlotsAndIgnoresRefusals) {
  const auto grid = small_grid();
  const auto m = manifest_for(grid);
  EXPECT_EQ(remaining_work(m, grid, {}).size(), grid.size() * 2);
  const std::vector<SampleRecord> log{record(grid, 0, 0, ChoiceOutcome::SoonerChosen),
                                      record(grid, 0, 1, ChoiceOutcome::Refusal),
                                      record(grid, 5, 1, ChoiceOutcome::Unparseable)};
  const auto work = remaining_work(m, grid, log);
  EXPECT_EQ(work.size(), grid.size() * 2 - 2);
  EXPECT_EQ(work.front().cell_index, 0u);
  EXPECT_EQ(work.front().slot, 1);
  for (const auto& w : work) EXPECT_FALSE(w.cell_index == 5 && w.slot == 1);
  // planned orders are preserved for the leftovers
  EXPECT_EQ(work.front().order, plan_orders(2, 0)[1]);
}

TEST(RemainingWork, RejectsForeignGrid) {
  const auto grid = small_grid();
  const auto other = build_cross_period_grid({LanguageRegistry::builtin().at("english")});
  EXPECT_THROW(remaining_work(manifest_for(grid), other, {}), StorageError);
  auto bad = record(grid, 0, 0, ChoiceOutcome::SoonerChosen);
  bad.slot = 9;
  EXPECT_THROW(remaining_work(manifest_for(grid), grid, {bad}), StorageError);
}

TEST(Analysis, OrderingDuplicatesAndCounts) {
  const auto grid = small_grid();
  std::vector<SampleRecord> log{record(grid, 4, 1, ChoiceOutcome::LaterChosen),
                                record(grid, 4, 0, ChoiceOutcome::SoonerChosen),
                                record(grid, 0, 0, ChoiceOutcome::Refusal),
                                record(grid, 0, 0, ChoiceOutcome::LaterChosen),
                                record(grid, 2, 0, ChoiceOutcome::Unparseable),
                                record(grid, 4, 1, ChoiceOutcome::SoonerChosen)};
  const auto ex = export_analysis(log, grid, Study::Simulated);
  EXPECT_EQ(ex.summary.records, 6u);
  EXPECT_EQ(ex.summary.refusals, 1u);
  EXPECT_EQ(ex.summary.unparseable, 1u);
  EXPECT_EQ(ex.summary.duplicates, 1u);
  EXPECT_EQ(ex.summary.rows, 3u);
  EXPECT_EQ(ex.table.header(), analysis_columns());

  const auto rows = parse_analysis(util::CsvTable::parse(ex.table.to_string()));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].d, grid[0].delay_months);
  EXPECT_TRUE(rows[0].y_later);
  EXPECT_EQ(rows[2].y_later, true);  // first logged sample for a slot wins
  EXPECT_EQ(rows[1].language, "german");
  EXPECT_FALSE(rows[1].strong_ftr);
  EXPECT_EQ(rows[1].r2, grid[4].later.amount);
  EXPECT_EQ(rows[1].t2 - rows[1].t1, grid[4].delay_months);
  EXPECT_FALSE(rows[1].same_period());
}

TEST(Analysis, RejectsCellsOutsideGrid) {
  const auto grid = small_grid();
  auto r = record(grid, 1, 0, ChoiceOutcome::SoonerChosen);
  r.cell_key = "english|cross|d=1|i=0.05";
  EXPECT_THROW(export_analysis({r}, grid, Study::Simulated), StorageError);
}
