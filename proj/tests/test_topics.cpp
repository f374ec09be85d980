#include <gtest/gtest.h>

#include <fstream>
#include <numeric>

#include "chronopref/topics/lda.hpp"
#include "chronopref/topics/porter.hpp"
#include "chronopref/topics/prevalence.hpp"
#include "chronopref/topics/text.hpp"
#include "chronopref/util/rng.hpp"

using namespace chronopref;
using namespace chronopref::topics;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

const StopwordList& english_stopwords() {
  static const StopwordList s = StopwordList::load(std::string(CHRONOPREF_ASSET_DIR) + "/stopwords_en.txt");
  return s;
}

// Three blocks of 10 terms, each document drawn from one block.
Corpus block_corpus(int docs, std::uint64_t seed) {
  util::Rng rng(seed);
  std::vector<std::string> refs;
  std::vector<std::vector<std::string>> tokens;
  for (int d = 0; d < docs; ++d) {
    const int block = d % 3;
    std::vector<std::string> doc;
    for (int i = 0; i < 30; ++i) doc.push_back("b" + std::to_string(block) + "w" + std::to_string(rng.below(10)));
    refs.push_back("d" + std::to_string(d));
    tokens.push_back(std::move(doc));
  }
  return Corpus::from_tokens(refs, tokens);
}

}  // namespace

TEST(Porter, MatchesReferenceVocabulary) {
  const auto voc = read_lines(std::string(CHRONOPREF_TEST_DATA) + "/porter_voc.txt");
  const auto out = read_lines(std::string(CHRONOPREF_TEST_DATA) + "/porter_output.txt");
  ASSERT_EQ(voc.size(), out.size());
  ASSERT_GT(voc.size(), 20000u);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < voc.size(); ++i)
    if (porter_stem(voc[i]) != out[i]) ++mismatches;
  EXPECT_EQ(mismatches, 0u);
}

TEST(Porter, Anchors) {
  EXPECT_EQ(porter_stem("value"), "valu");
  EXPECT_EQ(porter_stem("immediate"), "immedi");
  EXPECT_EQ(porter_stem("uncertainty"), "uncertainti");
  EXPECT_EQ(porter_stem("sky"), "sky");
  EXPECT_EQ(porter_stem("caresses"), "caress");
  EXPECT_EQ(porter_stem("relational"), "relat");
  EXPECT_EQ(porter_stem("a"), "a");
}

TEST(Porter, NotIdempotentInGeneral) {
  // stemming a stem can shorten it further, so preprocessing stems exactly once
  EXPECT_EQ(porter_stem("agreed"), "agre");
  EXPECT_EQ(porter_stem("agre"), "agr");
  for (const auto* w : {"valu", "immedi", "risk", "wait", "invest"}) EXPECT_EQ(porter_stem(w), w);
}

TEST(Preprocess, LowercasesFiltersAndStems) {
  const StopwordList none;
  EXPECT_EQ(preprocess("The of and", english_stopwords(), none), std::vector<std::string>{});
  EXPECT_EQ(preprocess("Waiting 12 months is RISKY, but investing pays.", english_stopwords(), none),
            (std::vector<std::string>{"wait", "month", "riski", "invest", "pai"}));
  EXPECT_EQ(preprocess("a1b2 xy", none, none), std::vector<std::string>{});
  const auto ctx = StopwordList::parse("# context\nmonth\n");
  EXPECT_EQ(preprocess("months later", none, ctx), (std::vector<std::string>{"later"}));
}

TEST(Preprocess, OutputIsAlwaysAdmissible) {
  const StopwordList none;
  util::Rng rng(5);
  const std::string letters = "abcdefghijklmnopqrstuvwxyz ,.";
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    for (int i = 0; i < 80; ++i) text.push_back(letters[rng.below(letters.size())]);
    for (const auto& t : preprocess(text, english_stopwords(), none)) {
      EXPECT_GE(t.size(), 3u);
      EXPECT_FALSE(english_stopwords().contains(t));
    }
  }
}

TEST(Documents, EscapedCsvRoundTrip) {
  const std::vector<Document> docs{{"r|1|0", "Line one,\nline \"two\" 100%"}, {"r|1|1", ""}};
  const auto back = documents_from_csv(util::CsvTable::parse(documents_to_csv(docs).to_string()));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].text, docs[0].text);
  EXPECT_EQ(back[0].sample_ref, docs[0].sample_ref);
}

TEST(CorpusTest, EmptyDocumentsAreExcluded) {
  const auto c = Corpus::from_tokens({"a", "b", "c"}, {{"risk", "wait"}, {}, {"wait"}});
  EXPECT_EQ(c.vocab, (std::vector<std::string>{"risk", "wait"}));
  EXPECT_EQ(c.excluded_refs, std::vector<std::string>{"b"});
  EXPECT_EQ(c.docs.size(), 2u);
  EXPECT_EQ(c.num_tokens(), 3u);
  EXPECT_EQ(c.term_id("nope"), -1);
}

TEST(LDA, SingleTopicIsExact) {
  const auto c = block_corpus(12, 1);
  LDAOptions o;
  o.K = 1;
  o.iterations = 5;
  const auto m = fit_lda(c, o);
  for (std::size_t d = 0; d < c.docs.size(); ++d) EXPECT_DOUBLE_EQ(m.theta(d)[0], 1.0);
  EXPECT_EQ(m.topic_total[0], static_cast<int>(c.num_tokens()));
}

TEST(LDA, DeterministicInSeed) {
  const auto c = block_corpus(30, 2);
  LDAOptions o;
  o.K = 3;
  o.iterations = 20;
  const auto a = fit_lda(c, o), b = fit_lda(c, o);
  EXPECT_EQ(a.assignments, b.assignments);
  o.seed = 2;
  EXPECT_NE(fit_lda(c, o).assignments, a.assignments);
}

TEST(LDA, CountsStayConsistentAndLikelihoodRises) {
  const auto c = block_corpus(60, 3);
  LDAOptions o;
  o.K = 3;
  o.alpha = 0.1;
  o.iterations = 50;
  std::vector<double> ll;
  bool consistent = true;
  fit_lda(c, o, [&](int, const LDAModel& m) {
    consistent = consistent && counts_consistent(m, c);
    ll.push_back(lda_log_likelihood(m));
  });
  EXPECT_TRUE(consistent);
  ASSERT_EQ(ll.size(), 50u);
  const double early = std::accumulate(ll.begin(), ll.begin() + 5, 0.0) / 5;
  const double late = std::accumulate(ll.end() - 5, ll.end(), 0.0) / 5;
  EXPECT_GT(late, early);
}

TEST(LDA, RecoversPlantedBlocks) {
  const auto c = block_corpus(90, 4);
  LDAOptions o;
  o.K = 3;
  o.alpha = 0.1;
  o.iterations = 200;
  const auto m = fit_lda(c, o);
  const auto words = top_words(m, 10);
  for (const auto& topic : words) {
    const char block = topic.front()[1];
    for (const auto& w : topic) EXPECT_EQ(w[1], block) << w;
  }
}

TEST(LDA, RejectsBadInput) {
  LDAOptions o;
  EXPECT_THROW(fit_lda(Corpus{}, o), TopicsError);
  const auto c = block_corpus(3, 1);
  o.K = 0;
  EXPECT_THROW(fit_lda(c, o), TopicsError);
  o.K = 2;
  o.beta = 0;
  EXPECT_THROW(fit_lda(c, o), TopicsError);
  EXPECT_DOUBLE_EQ(LDAOptions{}.alpha_value(), 12.5);
}

TEST(Inference, ConcentratesOnDominantTopic) {
  LDAModel m;
  m.K = 2;
  m.V = 4;
  m.alpha = 0.01;
  m.beta = 0.01;
  m.vocab = {"a", "b", "c", "d"};
  m.topic_term = {500, 500, 0, 0, 0, 0, 500, 500};
  m.topic_total = {1000, 1000};
  const auto t = infer_doc_topics(m, std::vector<int>{0, 1, 0, 1, 1, 0});
  EXPECT_GT(t.theta[0], 0.9);
  EXPECT_NEAR(t.theta[0] + t.theta[1], 1.0, 1e-12);
  const auto empty = infer_doc_topics(m, std::vector<std::string>{"zzz"});
  EXPECT_TRUE(empty.empty);
  EXPECT_DOUBLE_EQ(empty.theta[0], 0.5);
  EXPECT_EQ(infer_doc_topics(m, std::vector<int>{0, 2, 3}, 11).theta,
            infer_doc_topics(m, std::vector<int>{0, 2, 3}, 11).theta);
}

TEST(TopWords, TiesBreakByTermAndShortVocab) {
  LDAModel m;
  m.K = 1;
  m.V = 3;
  m.vocab = {"alpha", "beta", "gamma"};
  m.topic_term = {2, 5, 2};
  m.topic_total = {9};
  const auto w = top_words(m, 10);
  EXPECT_EQ(w[0], (std::vector<std::string>{"beta", "alpha", "gamma"}));
  EXPECT_NE(render_top_words(w).find("Topic 1"), std::string::npos);
  EXPECT_EQ(topic_terms_csv(m, 2).size(), 2u);
}

TEST(Labeling, JsonRoundTripAndMerge) {
  const auto d = TopicLabeling::defaults();
  const auto back = TopicLabeling::from_json(nlohmann::json::parse(d.to_json().dump()));
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.merge_map, d.merge_map);
  const auto merged = d.merge({0.1, 0.2, 0.3, 0.4});
  EXPECT_NEAR(merged[0], 0.1, 1e-15);
  EXPECT_NEAR(merged[1], 0.6, 1e-15);
  EXPECT_NEAR(merged[2], 0.3, 1e-15);
  EXPECT_THROW(d.merge({0.5, 0.5}), TopicsError);
  EXPECT_THROW(TopicLabeling::from_json(nlohmann::json::parse(R"({"labels":["A"],"merge":{"1":"B"}})")),
               TopicsError);
}

TEST(Prevalence, NormalizedMeansAreOne) {
  util::Rng rng(8);
  std::vector<std::vector<double>> theta;
  std::vector<DocCondition> cond;
  for (int i = 0; i < 120; ++i) {
    std::vector<double> t(4);
    double s = 0;
    for (auto& x : t) s += (x = rng.uniform() + 0.01);
    for (auto& x : t) x /= s;
    theta.push_back(t);
    const bool strong = i % 2 == 0;
    cond.push_back({strong ? "english" : "german", strong, i % 3 == 0 ? 1 : 12, i % 4 == 0 ? "0.05" : "1"});
  }
  const auto r = prevalence_analytics(theta, TopicLabeling::defaults(), cond);
  for (std::size_t l = 0; l < 3; ++l) {
    double s = 0;
    for (const auto& row : r.normalized) s += row[l];
    EXPECT_NEAR(s / r.normalized.size(), 1.0, 1e-12);
  }
  ASSERT_FALSE(r.groups.empty());
  EXPECT_EQ(r.regression_rows.size(), 120u);
  EXPECT_EQ(r.groups_csv().header().front(), "dimension");
  bool saw_lang = false;
  for (const auto& g : r.groups)
    if (g.dimension == "language" && !saw_lang) {
      saw_lang = true;
      EXPECT_TRUE(g.strong_ftr);
    }
  EXPECT_TRUE(saw_lang);
}
