#include <gtest/gtest.h>

#include <filesystem>

#include "chronopref/design.hpp"
#include "chronopref/prompting.hpp"
#include "chronopref/util/rng.hpp"

using namespace chronopref;
namespace fs = std::filesystem;

namespace {

const Language& english() {
  static const Language l = LanguageRegistry::builtin().at("english");
  return l;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("chronopref_prompting_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Preamble, StandardProtocolTexts) {
  const auto conv = build_preamble(ProtocolVariant::Standard);
  ASSERT_EQ(conv.size(), 2u);
  EXPECT_EQ(conv[0].role, Role::User);
  EXPECT_EQ(conv[1].role, Role::Assistant);
  EXPECT_EQ(conv[0].content,
            "Assuming you are a survey participant and you are paid in tokens, please wait for my prompt and tell me "
            "whether you prefer option (1) or option (2). There is no need to explain your choice, simply answer "
            "with (1) or (2).");
  EXPECT_EQ(conv[1].content,
            "Understood, I assume I am a survey participant and I will choose either option (1) or (2).");
}

TEST(Preamble, ChainOfThoughtTexts) {
  const auto conv = build_preamble(ProtocolVariant::ChainOfThought);
  ASSERT_EQ(conv.size(), 2u);
  EXPECT_EQ(conv[0].content,
            "Assuming you are a survey participant and you are paid in tokens, please wait for my prompt and tell me "
            "whether you prefer option (1) or option (2). Think step by step, and explain your decision");
  EXPECT_EQ(conv[1].content,
            "Understood, I assume I am a survey participant and I will explain my decision and then choose either "
            "option (1) or (2).");
}

TEST(Messages, EmptyContentRejected) {
  EXPECT_THROW(ChatMessage(Role::User, ""), std::invalid_argument);
  EXPECT_EQ(parse_role("assistant"), Role::Assistant);
  EXPECT_THROW(parse_role("narrator"), std::invalid_argument);
  EXPECT_EQ(parse_protocol("cot"), ProtocolVariant::ChainOfThought);
  EXPECT_EQ(parse_protocol("standard"), ProtocolVariant::Standard);
}

TEST(RenderQuestion, OrderSwapsOptions) {
  const auto cell = make_cross_period_cell(english(), 12, InterestRate{5});
  const auto& tmpl = PromptSet::english().cross_period;
  const auto a = render_question(cell, {true}, tmpl).content;
  const auto b = render_question(cell, {false}, tmpl).content;
  EXPECT_EQ(a,
            "Consider two rewards, both paid in tokens. Option (1): receive 1000 1 months from now. Option (2): "
            "receive 1050 13 months from now. Which do you prefer?");
  EXPECT_NE(a.find("Option (1): receive 1000 1 months"), std::string::npos);
  EXPECT_NE(b.find("Option (1): receive 1050 13 months"), std::string::npos);
  EXPECT_NE(b.find("Option (2): receive 1000 1 months"), std::string::npos);
  EXPECT_EQ(a.find('{'), std::string::npos);
}

TEST(RenderQuestion, UnitIsSubstituted) {
  const auto cell = make_same_period_cell(english(), 7, 3174);
  const auto q = render_question(cell, {true}, PromptSet::english().same_period, "dollars").content;
  EXPECT_NE(q.find("paid in dollars"), std::string::npos);
  EXPECT_NE(q.find("3174 7 months"), std::string::npos);
}

TEST(RenderQuestion, LanguageMismatchAndBadTemplates) {
  const auto de = LanguageRegistry::builtin().at("german");
  const auto cell = make_cross_period_cell(de, 1, InterestRate{5});
  EXPECT_THROW(render_question(cell, {true}, PromptSet::english().cross_period), TemplateError);
  QuestionTemplate missing{"german", "{amount_1} {time_1} {amount_2} {unit}"};
  EXPECT_THROW(render_question(cell, {true}, missing), TemplateError);
  QuestionTemplate repeated{"german", "{amount_1} {time_1} {amount_2} {time_2} {unit} {unit}"};
  EXPECT_THROW(repeated.validate(), TemplateError);
}

TEST(ExtractIndex, Precedence) {
  EXPECT_EQ(extract_option_index("(1)"), 1);
  EXPECT_EQ(extract_option_index("( 2 )"), 2);
  EXPECT_EQ(extract_option_index("I prefer option (2) over waiting 12 months."), 2);
  EXPECT_EQ(extract_option_index("Option 1"), 1);
  EXPECT_EQ(extract_option_index("My answer: option #2"), 2);
  EXPECT_EQ(extract_option_index("2."), 2);
  EXPECT_EQ(extract_option_index("**1**"), 1);
  // a parenthesized index wins over a stray "option 1"
  EXPECT_EQ(extract_option_index("Unlike option 1, I take (2)"), 2);
  EXPECT_EQ(extract_option_index("(1) or (2)? Hard to say"), std::nullopt);
  EXPECT_EQ(extract_option_index("Option 1 and option 2 are both fine"), std::nullopt);
  EXPECT_EQ(extract_option_index("I would wait 12 months"), std::nullopt);
  EXPECT_EQ(extract_option_index("21"), std::nullopt);
  EXPECT_EQ(extract_option_index(""), std::nullopt);
}

TEST(ParseChoice, MapsIndexThroughOrder) {
  EXPECT_EQ(parse_choice("(1)", {true}), ChoiceOutcome::SoonerChosen);
  EXPECT_EQ(parse_choice("(2)", {true}), ChoiceOutcome::LaterChosen);
  EXPECT_EQ(parse_choice("(1)", {false}), ChoiceOutcome::LaterChosen);
  EXPECT_EQ(parse_choice("(2)", {false}), ChoiceOutcome::SoonerChosen);
}

TEST(ParseChoice, RefusalAndUnparseable) {
  EXPECT_EQ(parse_choice("As an AI, I do not have preferences.", {true}), ChoiceOutcome::Refusal);
  EXPECT_EQ(parse_choice("I'm unable to pick.", {true}), ChoiceOutcome::Refusal);
  EXPECT_EQ(parse_choice("Bananas.", {true}), ChoiceOutcome::Unparseable);
  // an explicit choice counts even when hedged with refusal wording
  EXPECT_EQ(parse_choice("As an AI I don't have personal preferences, but I'd pick (2).", {true}),
            ChoiceOutcome::LaterChosen);
}

TEST(ParseChoice, CustomRefusalList) {
  const auto r = RefusalPhrases::parse("# comment\n\nNo Thanks\n");
  ASSERT_EQ(r.phrases.size(), 1u);
  EXPECT_EQ(parse_choice("no thanks, really", {true}, r), ChoiceOutcome::Refusal);
  EXPECT_EQ(parse_choice("As an AI...", {true}, r), ChoiceOutcome::Unparseable);
}

TEST(ParseChoice, OutcomeStrings) {
  for (auto o : {ChoiceOutcome::SoonerChosen, ChoiceOutcome::LaterChosen, ChoiceOutcome::Refusal,
                 ChoiceOutcome::Unparseable})
    EXPECT_EQ(parse_outcome(to_string(o)), o);
  EXPECT_TRUE(is_choice(ChoiceOutcome::LaterChosen));
  EXPECT_FALSE(is_choice(ChoiceOutcome::Refusal));
}

// Rendering a question and answering with the index of the option the
// rendered text placed in that slot must parse back to that option.
TEST(RoundTrip, RenderThenParseSelectsRenderedOption) {
  const auto langs = LanguageRegistry::builtin().all();
  auto grid = build_cross_period_grid({english()});
  const auto same = build_same_period_grid({english()});
  grid.insert(grid.end(), same.begin(), same.end());
  const std::vector<std::string> wrappers{"({k})", "I choose option {k}.", "{k}", "Option ({k}) please",
                                          "After thinking it over: ({k})"};
  util::Rng rng(99);
  const auto prompts = PromptSet::english();
  int violations = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto& cell = grid[rng.below(grid.size())];
    const PresentationOrder order{rng.bernoulli(0.5)};
    const auto text = render_question(cell, order, prompts.question(cell.kind)).content;
    const bool want_later = rng.bernoulli(0.5);
    const auto& want = want_later ? cell.later : cell.sooner;
    const auto needle = "(1): receive " + std::to_string(want.amount) + " " + std::to_string(want.delivery_months) + " ";
    const int slot = text.find(needle) != std::string::npos ? 1 : 2;
    auto reply = wrappers[rng.below(wrappers.size())];
    reply.replace(reply.find("{k}"), 3, std::to_string(slot));
    const auto got = parse_choice(reply, order);
    if (got != (want_later ? ChoiceOutcome::LaterChosen : ChoiceOutcome::SoonerChosen)) ++violations;
  }
  EXPECT_EQ(violations, 0);
}

TEST(PromptSetFiles, SaveLoadAndFallback) {
  const auto root = temp_dir("templates");
  auto en = PromptSet::english();
  en.save(root);
  const auto back = PromptSet::load(root, "english");
  EXPECT_FALSE(back.fallback);
  EXPECT_EQ(back.opening_cot, en.opening_cot);
  EXPECT_EQ(back.cross_period.body, en.cross_period.body);

  const auto missing = PromptSet::load(root, "german");
  EXPECT_TRUE(missing.fallback);
  EXPECT_EQ(missing.cross_period.language, "german");
  EXPECT_EQ(missing.opening_standard, en.opening_standard);

  fs::create_directories(root / "german");
  util::write_file((root / "german" / "cross_period.txt").string(), "{amount_1} {time_1} {unit}\n");
  EXPECT_THROW(PromptSet::load(root, "german"), TemplateError);
  fs::remove_all(root);
}

TEST(Followup, ExtractionText) {
  const auto m = build_extraction_followup();
  EXPECT_EQ(m.role, Role::User);
  EXPECT_NE(m.content.find("(1) or (2)"), std::string::npos);
}
