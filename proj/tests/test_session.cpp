#include <gtest/gtest.h>

#include "support.hpp"

using namespace edgelens;
using edgelens::testing::errc_of;

namespace {

struct Driving {
  FixtureVideo video = load_fixture("driving_30f");
  Analysis analysis;

  Driving() {
    Engine engine{EngineConfig{}};
    analysis = engine.analyze(video, VocabularyPrompt::create({"car", "person"}));
  }
};

const Driving& driving() {
  static const Driving d;
  return d;
}

class RecordingBackend final : public LanguageBackend {
 public:
  const LanguageBackendDescriptor& descriptor() const override { return desc_; }
  std::string generate(const std::string& prompt, const VideoRepresentation* video) override {
    prompts.push_back(prompt);
    return inner_.generate(prompt, video);
  }
  std::vector<std::string> prompts;

 private:
  LanguageBackendDescriptor desc_{"recording", 0};
  MockLanguageBackend inner_{{"mock", 0}};
};

std::vector<Turn> turns_of(std::size_t n) {
  std::vector<Turn> t;
  for (std::size_t i = 0; i < n; ++i)
    t.push_back(Turn{i % 2 ? Role::assistant : Role::user, "turn number " + std::to_string(i), std::nullopt});
  return t;
}

}  // namespace

TEST(RouteTask, Examples) {
  EXPECT_EQ(route_task("Summarize the video"), TaskKind::summarize);
  EXPECT_EQ(route_task("Segment the cars"), TaskKind::segment_describe);
  EXPECT_EQ(route_task("Why is the road empty at the end?"), TaskKind::vqa);
  EXPECT_EQ(route_task("give me a SUMMARY"), TaskKind::summarize);
  EXPECT_EQ(route_task("Is there a dog?"), TaskKind::detect_describe);
  EXPECT_EQ(route_task("where is the mask of the car"), TaskKind::segment_describe);
  EXPECT_EQ(route_task("summarize and segment"), TaskKind::summarize);
}

TEST(TruncateHistory, Examples) {
  EXPECT_EQ(truncate_history({}, 100), "");
  const auto turns = turns_of(6);
  std::string all;
  for (const auto& t : turns) all += (all.empty() ? "" : "\n") + render_turn(t);
  EXPECT_EQ(truncate_history(turns, 10000), all);

  const auto cut = truncate_history(turns, 60);
  EXPECT_LE(cut.size(), 60u);
  EXPECT_EQ(all.substr(all.size() - cut.size()), cut);
  EXPECT_EQ(cut.rfind("User: ", 0) == 0 || cut.rfind("Assistant: ", 0) == 0, true);
  EXPECT_EQ(truncate_history(turns, 5), "");
}

TEST(DialogueSession, AlternationAndEmptyTurns) {
  DialogueSession s;
  EXPECT_EQ(errc_of([&] { s.append(Turn{Role::assistant, "hi", std::nullopt}); }), Errc::invalid_argument);
  EXPECT_EQ(errc_of([&] { s.append(Turn{Role::user, "", std::nullopt}); }), Errc::invalid_argument);
  s.append(Turn{Role::user, "hi", std::nullopt});
  EXPECT_EQ(errc_of([&] { s.append(Turn{Role::user, "again", std::nullopt}); }), Errc::invalid_argument);
}

TEST(Ask, IsThereACar) {
  auto s = open_session("s", driving().analysis.log, driving().analysis.keyframes);
  MockLanguageBackend lm({"mock", 0});
  const auto r = ask(s, "Is there a car?", lm, builtin_templates());
  EXPECT_NE(r.reply.text.find("car"), std::string::npos);
  EXPECT_TRUE(is_constraint_clean(r.reply.text));
  ASSERT_EQ(s.turns.size(), 2u);
  EXPECT_EQ(s.turns[1].task, TaskKind::detect_describe);
}

TEST(Ask, SummaryIsOneGroundedSentence) {
  auto s = open_session("s", driving().analysis.log, driving().analysis.keyframes);
  MockLanguageBackend lm({"mock", 0});
  EXPECT_EQ(ask(s, "Summarize the video", lm, builtin_templates()).reply.text,
            "this is a video of a car driving on the road");
}

TEST(Ask, AbsentCategoryIsNegative) {
  auto s = open_session("s", driving().analysis.log, driving().analysis.keyframes);
  MockLanguageBackend lm({"mock", 0});
  const auto text = ask(s, "Is there a person?", lm, builtin_templates()).reply.text;
  EXPECT_NE(text.find("no person"), std::string::npos) << text;
}

TEST(Ask, ErrorsLeaveSessionUntouched) {
  auto s = open_session("s", driving().analysis.log, driving().analysis.keyframes);
  MockLanguageBackend lm({"mock", 0});
  lm.set_available(false);
  EXPECT_EQ(errc_of([&] { ask(s, "Is there a car?", lm, builtin_templates()); }), Errc::backend_unavailable);
  EXPECT_TRUE(s.turns.empty());
  lm.set_available(true);
  EXPECT_EQ(errc_of([&] { ask(s, "   ", lm, builtin_templates()); }), Errc::invalid_argument);
  TemplateSet partial{{TaskKind::vqa, builtin_template(TaskKind::vqa)}};
  EXPECT_EQ(errc_of([&] { ask(s, "Summarize", lm, partial); }), Errc::missing_slot);
  EXPECT_TRUE(s.turns.empty());
}

TEST(Ask, FiftyTurnsKeepContextPinned) {
  auto s = open_session("s", driving().analysis.log, driving().analysis.keyframes, ContextBudget{2000, Compaction::full_log});
  const std::string pinned = s.event_context;
  ASSERT_FALSE(pinned.empty());
  RecordingBackend lm;
  const char* questions[] = {"Is there a car?", "Summarize the video", "Segment the cars", "What happens next?"};
  for (int i = 0; i < 50; ++i) {
    const auto r = ask(s, questions[i % 4], lm, builtin_templates());
    EXPECT_TRUE(is_constraint_clean(r.reply.text));
  }
  ASSERT_EQ(lm.prompts.size(), 50u);
  for (const auto& p : lm.prompts) EXPECT_NE(p.find(pinned), std::string::npos);
  EXPECT_EQ(s.event_context, pinned);
  EXPECT_EQ(s.turns.size(), 100u);
  for (std::size_t i = 0; i < s.turns.size(); ++i) EXPECT_EQ(s.turns[i].role, i % 2 ? Role::assistant : Role::user);
}

TEST(Ask, LeakyBackendIsFilteredClean) {
  auto s = open_session("s", driving().analysis.log, driving().analysis.keyframes);
  MockLanguageBackend lm({"mock-verbose", 0}, true);
  for (const char* q : {"Is there a car?", "Summarize the video", "Segment the cars", "What is going on?"}) {
    const auto r = ask(s, q, lm, builtin_templates());
    EXPECT_FALSE(is_constraint_clean(r.raw_response)) << r.raw_response;
    EXPECT_TRUE(is_constraint_clean(r.reply.text)) << r.reply.text;
  }
}

TEST(Transcript, JsonRoundTripAndDeterminism) {
  auto run = [] {
    auto s = open_session("s1", driving().analysis.log, driving().analysis.keyframes);
    MockLanguageBackend lm({"mock", 0});
    ask(s, "Is there a car?", lm, builtin_templates());
    ask(s, "Summarize the video", lm, builtin_templates());
    return s;
  };
  const auto a = run();
  const auto j = transcript_json(a);
  EXPECT_EQ(j["session_id"], "s1");
  EXPECT_EQ(j["video_id"], "driving_30f");
  EXPECT_EQ(turns_from_json(nlohmann::json::parse(j.dump())), a.turns);
  EXPECT_EQ(j.dump(), transcript_json(run()).dump());
  EXPECT_EQ(errc_of([] { turns_from_json(nlohmann::json{{"turns", {{{"role", "bot"}, {"text", "x"}}}}}); }),
            Errc::invalid_argument);
}

TEST(CountTokens, Words) {
  EXPECT_EQ(count_tokens(""), 0u);
  EXPECT_EQ(count_tokens("  a car\tis\n here "), 4u);
}
