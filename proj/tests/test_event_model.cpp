#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "support.hpp"

using namespace edgelens;
using edgelens::testing::errc_of;

namespace {

VideoMeta meta30() { return VideoMeta::make("v", 30.0, 30, 320, 180); }

Detection car(double x = 10) { return Detection{"car", 0.9, BoundingBox{x, 10, x + 20, 30}, std::nullopt, {}}; }

std::size_t line_count(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST(AppendEvent, FirstEventOnEmptyLog) {
  auto log = append_event(EventLog(meta30()), FrameEvent{0, 0.0, {car()}});
  ASSERT_EQ(log.events().size(), 1u);
  EXPECT_EQ(log.events()[0].detections.size(), 1u);
}

TEST(AppendEvent, OutOfOrderRejected) {
  EventLog log(meta30());
  log.append(FrameEvent{5, 0.0, {}});
  EXPECT_EQ(errc_of([&] { log.append(FrameEvent{3, 0.0, {}}); }), Errc::out_of_order);
  EXPECT_EQ(errc_of([&] { log.append(FrameEvent{5, 0.0, {}}); }), Errc::out_of_order);
}

TEST(AppendEvent, SealedAndRangeErrors) {
  EventLog log(meta30());
  EXPECT_EQ(errc_of([&] { log.append(FrameEvent{30, 0.0, {}}); }), Errc::frame_out_of_range);
  log.seal();
  EXPECT_EQ(errc_of([&] { log.append(FrameEvent{0, 0.0, {}}); }), Errc::sealed_log);
}

TEST(AppendEvent, TimestampDerivedFromFrameIndex) {
  EventLog log(meta30());
  for (std::size_t f = 0; f < 30; ++f) log.append(FrameEvent{f, 123.0, {}});
  for (const auto& e : log.events()) EXPECT_EQ(e.timestamp_s, static_cast<double>(e.frame_index) / 30.0);
  EXPECT_NEAR(log.events()[15].timestamp_s, 0.5, 1e-12);
}

TEST(AppendEvent, InvalidDetectionRejected) {
  EventLog log(meta30());
  Detection bad = car();
  bad.box = BoundingBox{50, 10, 40, 30};
  EXPECT_EQ(errc_of([&] { log.append(FrameEvent{0, 0.0, {bad}}); }), Errc::invalid_argument);
  bad = car();
  bad.score = 1.5;
  EXPECT_EQ(errc_of([&] { log.append(FrameEvent{0, 0.0, {bad}}); }), Errc::invalid_argument);
}

TEST(SerializeLog, LineCounts) {
  EventLog empty(meta30());
  empty.seal();
  EXPECT_EQ(line_count(serialize_log(empty)), 1u);
  EventLog two(meta30());
  two.append(FrameEvent{0, 0, {car()}});
  two.append(FrameEvent{1, 0, {}});
  two.seal();
  EXPECT_EQ(line_count(serialize_log(two)), 3u);
}

TEST(SerializeLog, RequiresSeal) {
  EXPECT_EQ(errc_of([] { serialize_log(EventLog(meta30())); }), Errc::unsealed_log);
}

TEST(SerializeLog, ByteExactFormat) {
  EventLog log(VideoMeta::make("v", 2.0, 2, 4, 2));
  Detection d{"car", 0.5, BoundingBox{0, 0, 2, 1}, MaskRef::from_box({0, 0, 2, 1}, 4, 2), DetectionSource::segmenter};
  log.append(FrameEvent{1, 0.0, {d}});
  log.seal();
  EXPECT_EQ(serialize_log(log),
            "{\"meta\":{\"duration_s\":1.0,\"fps\":2.0,\"frame_count\":2,\"height\":2,\"video_id\":\"v\",\"width\":4},"
            "\"schema_version\":1}\n"
            "{\"detections\":[{\"box\":{\"x_max\":2.0,\"x_min\":0.0,\"y_max\":1.0,\"y_min\":0.0},\"category\":\"car\","
            "\"mask\":{\"area_px\":2,\"encoding\":[0,2,6]},\"score\":0.5,\"source\":\"segmenter\"}],"
            "\"frame_index\":1,\"timestamp_s\":0.5}\n");
}

TEST(ParseLog, RoundTripRandomized) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const EventLog log = edgelens::testing::random_log(rng);
    EXPECT_EQ(parse_log(serialize_log(log)), log);
  }
}

TEST(ParseLog, MalformedBoxReportsLine) {
  const std::string text =
      "{\"schema_version\":1,\"meta\":{\"video_id\":\"v\",\"fps\":30.0,\"frame_count\":30,\"width\":320,\"height\":180,"
      "\"duration_s\":1.0}}\n"
      "{\"frame_index\":0,\"timestamp_s\":0.0,\"detections\":[]}\n"
      "{\"frame_index\":1,\"timestamp_s\":0.03333333333333333,\"detections\":[{\"category\":\"car\",\"score\":0.9,"
      "\"box\":{\"x_min\":50,\"y_min\":0,\"x_max\":10,\"y_max\":5},\"source\":\"detector\"}]}\n";
  try {
    parse_log(text);
    FAIL() << "expected MalformedLine";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::malformed_line);
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(ParseLog, SchemaVersionGate) {
  const std::string meta =
      "\"meta\":{\"video_id\":\"v\",\"fps\":30.0,\"frame_count\":30,\"width\":320,\"height\":180,\"duration_s\":1.0}";
  EXPECT_EQ(errc_of([&] { parse_log("{\"schema_version\":999," + meta + "}\n"); }), Errc::schema_unsupported);
  EXPECT_NO_THROW(parse_log("{\"schema_version\":1," + meta + "}\n"));
}

TEST(ParseLog, OrderingAndAlignment) {
  const std::string header =
      "{\"schema_version\":1,\"meta\":{\"video_id\":\"v\",\"fps\":10.0,\"frame_count\":30,\"width\":8,\"height\":8,"
      "\"duration_s\":3.0}}\n";
  EXPECT_EQ(errc_of([&] {
              parse_log(header + "{\"frame_index\":2,\"timestamp_s\":0.2,\"detections\":[]}\n"
                                 "{\"frame_index\":1,\"timestamp_s\":0.1,\"detections\":[]}\n");
            }),
            Errc::ordering_violation);
  EXPECT_EQ(errc_of([&] { parse_log(header + "{\"frame_index\":2,\"timestamp_s\":0.25,\"detections\":[]}\n"); }),
            Errc::malformed_line);
  EXPECT_EQ(errc_of([&] { parse_log(header + "not json\n"); }), Errc::malformed_line);
  EXPECT_EQ(errc_of([&] { parse_log(""); }), Errc::malformed_line);
}

TEST(MaskRef, EncodeDecode) {
  std::vector<bool> px{true, true, false, true, false, false};
  const auto m = MaskRef::encode(px);
  EXPECT_EQ(m.encoding, (std::vector<std::uint32_t>{0, 2, 1, 1, 2}));
  EXPECT_EQ(m.area_px, 3u);
  EXPECT_EQ(m.decode(), px);
  EXPECT_TRUE(m.valid_in(3, 2));
  EXPECT_FALSE(m.valid_in(4, 2));
}

TEST(SummarizeLog, CarAndPersonSpans) {
  EventLog log(meta30());
  for (std::size_t f = 0; f < 30; ++f) {
    FrameEvent ev{f, 0, {car()}};
    if (f >= 10 && f <= 12) ev.detections.push_back(Detection{"person", 0.8, {1, 1, 5, 5}, std::nullopt, {}});
    log.append(ev);
  }
  log.seal();
  const auto tally = summarize_log(log);
  ASSERT_EQ(tally.size(), 2u);
  EXPECT_EQ(tally[0].category, "car");
  EXPECT_EQ(tally[0].count, 30u);
  EXPECT_EQ(tally[0].first_frame, 0u);
  EXPECT_EQ(tally[0].last_frame, 29u);
  EXPECT_EQ(tally[1].category, "person");
  EXPECT_EQ(tally[1].count, 3u);
  EXPECT_EQ(tally[1].first_frame, 10u);
  EXPECT_EQ(tally[1].last_frame, 12u);
}

TEST(SummarizeLog, EmptyAndTies) {
  EventLog empty(meta30());
  empty.seal();
  EXPECT_TRUE(summarize_log(empty).empty());

  EventLog log(meta30());
  log.append(FrameEvent{0, 0, {Detection{"zebra", 0.5, {1, 1, 2, 2}, std::nullopt, {}},
                               Detection{"apple", 0.5, {1, 1, 2, 2}, std::nullopt, {}}}});
  log.seal();
  const auto tally = summarize_log(log);
  EXPECT_EQ(tally[0].category, "apple");
  EXPECT_EQ(tally[1].category, "zebra");
}
