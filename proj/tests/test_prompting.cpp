#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace edgelens;
using edgelens::testing::errc_of;

namespace {

EventLog car_log_30() {
  EventLog log(VideoMeta::make("v", 30, 30, 320, 180));
  for (std::size_t f = 0; f < 30; ++f)
    log.append(FrameEvent{f, 0, {Detection{"car", 0.9, {10, 10, 40, 40}, std::nullopt, {}}}});
  log.seal();
  return log;
}

KeyframeSet kf(std::vector<std::size_t> frames, double fps) {
  KeyframeSet s;
  s.k = frames.size();
  for (std::size_t i = 0; i < frames.size(); ++i) s.keyframes.push_back({frames[i], frames[i] / fps, i});
  return s;
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    const std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) return false;
    for (std::size_t j = 1; j < len; ++j)
      if ((static_cast<unsigned char>(s[i + j]) & 0xC0) != 0x80) return false;
    i += len;
  }
  return true;
}

}  // namespace

TEST(RenderEventContext, FullLogLines) {
  const auto text = render_event_context(car_log_30(), kf({0, 15}, 30), ContextBudget{});
  EXPECT_NE(text.find("At 0.0s (frame 0): car \xC3\x97" "1"), std::string::npos);
  EXPECT_NE(text.find("At 0.5s (frame 15): car \xC3\x97" "1"), std::string::npos);
  EXPECT_NE(text.find("car \xC3\x97" "30 (0.0s-1.0s)"), std::string::npos);
  EXPECT_TRUE(check_constraints(text).clean(true));
}

TEST(RenderEventContext, EmptyLogSentinel) {
  EventLog log(VideoMeta::make("v", 30, 30, 320, 180));
  log.seal();
  EXPECT_EQ(render_event_context(log, kf({0}, 30), ContextBudget{}), "No objects were detected.");
}

TEST(RenderEventContext, TightBudgetDegradesToTally) {
  const auto text = render_event_context(car_log_30(), kf({0, 15}, 30), ContextBudget{40, Compaction::full_log});
  EXPECT_LE(text.size(), 40u);
  EXPECT_EQ(text.rfind("Objects seen:", 0), 0u);
  EXPECT_EQ(text.find("Timeline"), std::string::npos);
  EXPECT_EQ(text.find("Keyframes"), std::string::npos);
}

TEST(RenderEventContext, MiddleLevelShowsKeyframeEvents) {
  const auto text =
      render_event_context(car_log_30(), kf({0, 15}, 30), ContextBudget{8000, Compaction::tally_plus_keyframe_events});
  EXPECT_NE(text.find("Keyframes:"), std::string::npos);
  EXPECT_NE(text.find("(frame 15)"), std::string::npos);
  EXPECT_EQ(text.find("(frame 7)"), std::string::npos);
}

TEST(RenderEventContext, NeverExceedsBudgetAndStaysUtf8) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 300; ++i) {
    const auto log = edgelens::testing::random_log(rng);
    const std::size_t budget = 1 + rng() % 600;
    const auto c = static_cast<Compaction>(rng() % 3);
    const auto text = render_event_context(log, kf({0}, log.meta().fps), ContextBudget{budget, c});
    EXPECT_LE(text.size(), budget);
    EXPECT_TRUE(valid_utf8(text));
  }
}

TEST(BuildPrompt, ConstraintLineInEveryTemplate) {
  for (auto t : kAllTasks) {
    const auto p = build_prompt(builtin_template(t), "Objects seen:\ncar", std::string("Is there a car?"));
    EXPECT_NE(p.find(kConstraintLine), std::string::npos) << to_string(t);
  }
}

TEST(BuildPrompt, VqaNeedsQuestion) {
  EXPECT_EQ(errc_of([] { build_prompt(builtin_template(TaskKind::vqa), "ctx"); }), Errc::missing_slot);
  EXPECT_EQ(errc_of([] { build_prompt(builtin_template(TaskKind::vqa), "ctx", std::string("  ")); }),
            Errc::missing_slot);
  EXPECT_NO_THROW(build_prompt(builtin_template(TaskKind::summarize), "ctx"));
}

TEST(BuildPrompt, DeterministicAndDropsEmptyParagraphs) {
  const auto tmpl = builtin_template(TaskKind::summarize);
  const auto a = build_prompt(tmpl, "ctx", std::nullopt, std::nullopt);
  EXPECT_EQ(a, build_prompt(tmpl, "ctx", std::nullopt, std::nullopt));
  EXPECT_EQ(a.find("Conversation so far:"), std::string::npos);
  EXPECT_EQ(a.find("User request:"), std::string::npos);
  EXPECT_EQ(a.find("{{"), std::string::npos);
  const auto b = build_prompt(tmpl, "ctx", std::string("q"), std::string("User: hi"));
  EXPECT_NE(b.find("Conversation so far:\nUser: hi"), std::string::npos);
}

TEST(BuildPrompt, ValuesAreNotRescanned) {
  const auto p = build_prompt(builtin_template(TaskKind::vqa), "ctx {{question}}", std::string("what {{history}}?"));
  EXPECT_NE(p.find("ctx {{question}}"), std::string::npos);
  EXPECT_NE(p.find("Question: what {{history}}?"), std::string::npos);
}

TEST(ParseTemplate, Errors) {
  const auto ok = "[role]\nr\n[constraints]\nc\n[body]\n{{event_context}}\n";
  EXPECT_NO_THROW(parse_template(TaskKind::vqa, ok));
  EXPECT_EQ(errc_of([] { parse_template(TaskKind::vqa, "[role]\nr\n[body]\n{{event_context}}\n"); }),
            Errc::invalid_template);
  EXPECT_EQ(errc_of([] { parse_template(TaskKind::vqa, "[role]\nr\n[constraints]\nc\n[body]\n{{bogus}}\n"); }),
            Errc::invalid_template);
  EXPECT_EQ(errc_of([] { parse_template(TaskKind::vqa, "[role]\nr\n[constraints]\nc\n[body]\n{{question}}\n"); }),
            Errc::invalid_template);
  EXPECT_EQ(errc_of([] {
              parse_template(TaskKind::vqa, "[role]\n{{history}}\n[constraints]\nc\n[body]\n{{event_context}}\n");
            }),
            Errc::invalid_template);
}

TEST(Templates, ShippedFilesMatchBuiltins) {
  EXPECT_EQ(load_templates(std::string(EDGELENS_SOURCE_DIR) + "/templates"), builtin_templates());
  EXPECT_EQ(errc_of([] { load_templates("/nonexistent-dir"); }), Errc::not_found);
}

TEST(FilterOutput, CleanSentencesUnchanged) {
  for (const char* s : {"a car is detected on the road", "this is a video of a car driving on the road"}) {
    EXPECT_EQ(filter_output(s, TaskKind::detect_describe), s);
    EXPECT_TRUE(is_constraint_clean(s));
  }
}

TEST(FilterOutput, RewriteExamples) {
  EXPECT_EQ(filter_output("car at (120, 45, 300, 200) with 0.91 confidence on the road"), "a car on the road");
  EXPECT_EQ(filter_output(""), "No description available.");
  EXPECT_EQ(filter_output("(1, 2)"), "No description available.");
  EXPECT_EQ(filter_output("the car appears in frame 12 and leaves"), "the car appears and leaves");
  EXPECT_EQ(filter_output("a dog detected 0.77 near the tree"), "a dog detected near the tree");
  EXPECT_EQ(filter_output("a car is visible from 0.2s to 0.8s"), "a car is visible from 0.2s to 0.8s");
}

TEST(ConstraintCheck, Examples) {
  EXPECT_FALSE(is_constraint_clean("detected at (10,20)"));
  EXPECT_FALSE(is_constraint_clean("a car with confidence 0.9"));
  EXPECT_FALSE(is_constraint_clean("seen in frame 4"));
  EXPECT_TRUE(check_constraints("seen in frame 4").clean(true));
  EXPECT_TRUE(is_constraint_clean("two cars drive past at 3.5s"));
}

TEST(FilterOutput, ClosureAndIdempotenceProperty) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1500; ++i) {
    const auto raw = edgelens::testing::dirty_string(rng);
    const auto once = filter_output(raw);
    EXPECT_TRUE(is_constraint_clean(once)) << raw << " -> " << once;
    EXPECT_EQ(filter_output(once), once) << raw;
  }
}
