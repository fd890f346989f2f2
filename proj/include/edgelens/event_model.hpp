#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "edgelens/error.hpp"

namespace edgelens {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr double kTimestampTolerance = 1e-9;
inline constexpr double kDurationTolerance = 1e-6;

struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  bool operator==(const BoundingBox&) const = default;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }

  /// Well-formed and inside a width x height frame.
  bool valid_in(double frame_width, double frame_height) const {
    return x_min >= 0.0 && y_min >= 0.0 && x_min < x_max && y_min < y_max &&
           x_max <= frame_width && y_max <= frame_height;
  }
};

/// Binary mask over a frame, run-length encoded in row-major order.
/// Runs alternate starting with unset pixels, so encoding[0] may be zero.
struct MaskRef {
  std::vector<std::uint32_t> encoding;
  std::uint64_t area_px = 0;

  bool operator==(const MaskRef&) const = default;

  static MaskRef encode(const std::vector<bool>& pixels) {
    MaskRef m;
    bool current = false;
    std::uint32_t run = 0;
    for (bool px : pixels) {
      if (px != current) {
        m.encoding.push_back(run);
        run = 0;
        current = px;
      }
      ++run;
      if (px) ++m.area_px;
    }
    m.encoding.push_back(run);
    return m;
  }

  /// Filled rectangle covering the integer pixels inside `box`.
  static MaskRef from_box(const BoundingBox& box, std::uint32_t width, std::uint32_t height) {
    std::vector<bool> pixels(static_cast<std::size_t>(width) * height, false);
    const auto x0 = static_cast<std::uint32_t>(std::floor(box.x_min));
    const auto y0 = static_cast<std::uint32_t>(std::floor(box.y_min));
    const auto x1 = std::min(width, static_cast<std::uint32_t>(std::ceil(box.x_max)));
    const auto y1 = std::min(height, static_cast<std::uint32_t>(std::ceil(box.y_max)));
    for (std::uint32_t y = y0; y < y1; ++y)
      for (std::uint32_t x = x0; x < x1; ++x) pixels[static_cast<std::size_t>(y) * width + x] = true;
    return encode(pixels);
  }

  std::vector<bool> decode() const {
    std::vector<bool> pixels;
    bool current = false;
    for (std::uint32_t run : encoding) {
      pixels.insert(pixels.end(), run, current);
      current = !current;
    }
    return pixels;
  }

  bool valid_in(std::uint32_t width, std::uint32_t height) const {
    std::uint64_t total = 0;
    std::uint64_t set = 0;
    for (std::size_t i = 0; i < encoding.size(); ++i) {
      total += encoding[i];
      if (i % 2 == 1) set += encoding[i];
    }
    return area_px > 0 && set == area_px && total == static_cast<std::uint64_t>(width) * height;
  }
};

enum class DetectionSource { detector, segmenter };

constexpr std::string_view to_string(DetectionSource s) {
  return s == DetectionSource::detector ? "detector" : "segmenter";
}

struct Detection {
  std::string category;
  double score = 0.0;
  BoundingBox box;
  std::optional<MaskRef> mask;
  DetectionSource source = DetectionSource::detector;

  bool operator==(const Detection&) const = default;
};

struct FrameEvent {
  std::size_t frame_index = 0;
  double timestamp_s = 0.0;
  std::vector<Detection> detections;

  bool operator==(const FrameEvent&) const = default;
};

struct VideoMeta {
  std::string video_id;
  double fps = 0.0;
  std::size_t frame_count = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  double duration_s = 0.0;

  bool operator==(const VideoMeta&) const = default;

  static VideoMeta make(std::string video_id, double fps, std::size_t frame_count,
                        std::uint32_t width, std::uint32_t height) {
    VideoMeta m{std::move(video_id), fps, frame_count, width, height, 0.0};
    if (fps > 0.0) m.duration_s = static_cast<double>(frame_count) / fps;
    m.validate();
    return m;
  }

  double timestamp_of(std::size_t frame_index) const {
    return static_cast<double>(frame_index) / fps;
  }

  void validate() const {
    if (!(fps > 0.0) || !std::isfinite(fps))
      throw Error(Errc::invalid_argument, "fps must be positive");
    if (frame_count == 0) throw Error(Errc::invalid_argument, "frame_count must be positive");
    if (width == 0 || height == 0) throw Error(Errc::invalid_argument, "frame dimensions must be positive");
    if (std::abs(duration_s - static_cast<double>(frame_count) / fps) > kDurationTolerance)
      throw Error(Errc::invalid_argument, "duration_s disagrees with frame_count / fps");
  }
};

/// Returns an empty string when `d` is valid for frames described by `meta`,
/// otherwise the reason.
inline std::string detection_problem(const Detection& d, const VideoMeta& meta) {
  if (d.category.empty()) return "empty category";
  if (!(d.score >= 0.0 && d.score <= 1.0)) return "score outside [0,1]";
  if (!d.box.valid_in(meta.width, meta.height)) return "bounding box malformed or outside frame";
  if (d.mask && d.source != DetectionSource::segmenter) return "mask on a non-segmenter detection";
  if (d.mask && !d.mask->valid_in(meta.width, meta.height)) return "mask does not match frame";
  return {};
}

/// Append-only record of per-frame perception results. Timestamps are
/// derived from frame_index and fps on append, never taken from the caller.
class EventLog {
 public:
  EventLog() = default;
  explicit EventLog(VideoMeta meta, int schema_version = kSchemaVersion)
      : schema_version_(schema_version), meta_(std::move(meta)) {
    meta_.validate();
  }

  int schema_version() const { return schema_version_; }
  const VideoMeta& meta() const { return meta_; }
  const std::vector<FrameEvent>& events() const { return events_; }
  bool sealed() const { return sealed_; }

  void append(FrameEvent event) {
    if (sealed_) throw Error(Errc::sealed_log, "append after seal");
    if (!events_.empty() && event.frame_index <= events_.back().frame_index)
      throw Error(Errc::out_of_order,
                  "frame " + std::to_string(event.frame_index) + " after frame " +
                      std::to_string(events_.back().frame_index))
          .at_frame(event.frame_index);
    if (event.frame_index >= meta_.frame_count)
      throw Error(Errc::frame_out_of_range, "frame " + std::to_string(event.frame_index) +
                                                " >= frame_count " + std::to_string(meta_.frame_count))
          .at_frame(event.frame_index);
    for (const auto& d : event.detections) {
      if (auto why = detection_problem(d, meta_); !why.empty())
        throw Error(Errc::invalid_argument, why).at_frame(event.frame_index);
    }
    event.timestamp_s = meta_.timestamp_of(event.frame_index);
    events_.push_back(std::move(event));
  }

  void seal() { sealed_ = true; }

  bool operator==(const EventLog&) const = default;

 private:
  int schema_version_ = kSchemaVersion;
  VideoMeta meta_;
  std::vector<FrameEvent> events_;
  bool sealed_ = false;
};

inline EventLog append_event(EventLog log, FrameEvent event) {
  log.append(std::move(event));
  return log;
}

// ---------------------------------------------------------------------------
// JSON Lines wire format

inline json to_json(const BoundingBox& b) {
  return json{{"x_min", b.x_min}, {"y_min", b.y_min}, {"x_max", b.x_max}, {"y_max", b.y_max}};
}

inline json to_json(const Detection& d) {
  json j{{"category", d.category}, {"score", d.score}, {"box", to_json(d.box)}};
  if (d.mask) j["mask"] = json{{"encoding", d.mask->encoding}, {"area_px", d.mask->area_px}};
  j["source"] = std::string(to_string(d.source));
  return j;
}

inline json to_json(const FrameEvent& e) {
  json dets = json::array();
  for (const auto& d : e.detections) dets.push_back(to_json(d));
  return json{{"frame_index", e.frame_index}, {"timestamp_s", e.timestamp_s}, {"detections", dets}};
}

inline json to_json(const VideoMeta& m) {
  return json{{"video_id", m.video_id}, {"fps", m.fps},       {"frame_count", m.frame_count},
              {"width", m.width},       {"height", m.height}, {"duration_s", m.duration_s}};
}

/// Header line, then one line per event, each terminated by '\n'.
inline std::string serialize_log(const EventLog& log) {
  if (!log.sealed()) throw Error(Errc::unsealed_log, "only sealed logs are serialized");
  std::string out = json{{"schema_version", log.schema_version()}, {"meta", to_json(log.meta())}}.dump();
  out += '\n';
  for (const auto& e : log.events()) {
    out += to_json(e).dump();
    out += '\n';
  }
  return out;
}

namespace detail {

struct LineError {
  std::string what;
};

inline const json& field(const json& obj, const char* key) {
  if (!obj.is_object()) throw LineError{"expected an object"};
  auto it = obj.find(key);
  if (it == obj.end()) throw LineError{std::string("missing key '") + key + "'"};
  return *it;
}

inline double number(const json& obj, const char* key) {
  const auto& v = field(obj, key);
  if (!v.is_number()) throw LineError{std::string("'") + key + "' must be a number"};
  return v.get<double>();
}

inline std::uint64_t unsigned_int(const json& obj, const char* key) {
  const auto& v = field(obj, key);
  if (!v.is_number_unsigned()) throw LineError{std::string("'") + key + "' must be a non-negative integer"};
  return v.get<std::uint64_t>();
}

inline std::string text(const json& obj, const char* key) {
  const auto& v = field(obj, key);
  if (!v.is_string()) throw LineError{std::string("'") + key + "' must be a string"};
  return v.get<std::string>();
}

inline VideoMeta parse_meta(const json& j) {
  VideoMeta m;
  m.video_id = text(j, "video_id");
  m.fps = number(j, "fps");
  m.frame_count = unsigned_int(j, "frame_count");
  m.width = static_cast<std::uint32_t>(unsigned_int(j, "width"));
  m.height = static_cast<std::uint32_t>(unsigned_int(j, "height"));
  m.duration_s = number(j, "duration_s");
  try {
    m.validate();
  } catch (const Error& e) {
    throw LineError{e.what()};
  }
  return m;
}

inline Detection parse_detection(const json& j, const VideoMeta& meta) {
  Detection d;
  d.category = text(j, "category");
  d.score = number(j, "score");
  const auto& b = field(j, "box");
  d.box = BoundingBox{number(b, "x_min"), number(b, "y_min"), number(b, "x_max"), number(b, "y_max")};
  const auto src = text(j, "source");
  if (src == "detector") d.source = DetectionSource::detector;
  else if (src == "segmenter") d.source = DetectionSource::segmenter;
  else throw LineError{"unknown source '" + src + "'"};
  if (auto it = j.find("mask"); it != j.end()) {
    MaskRef m;
    const auto& enc = field(*it, "encoding");
    if (!enc.is_array()) throw LineError{"mask encoding must be an array"};
    for (const auto& run : enc) {
      if (!run.is_number_unsigned()) throw LineError{"mask runs must be non-negative integers"};
      m.encoding.push_back(run.get<std::uint32_t>());
    }
    m.area_px = unsigned_int(*it, "area_px");
    d.mask = std::move(m);
  }
  if (auto why = detection_problem(d, meta); !why.empty()) throw LineError{why};
  return d;
}

}  // namespace detail

/// Inverse of serialize_log. Always returns a sealed log.
inline EventLog parse_log(std::string_view bytes) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    auto nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) nl = bytes.size();
    auto line = bytes.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw Error(Errc::malformed_line, "missing header line").at_line(1);

  auto parse_json = [](std::string_view line, std::size_t number) {
    try {
      return json::parse(line);
    } catch (const json::exception& e) {
      throw Error(Errc::malformed_line, "line " + std::to_string(number) + ": " + e.what()).at_line(number);
    }
  };

  EventLog log;
  {
    const json header = parse_json(lines[0], 1);
    int version = 0;
    VideoMeta meta;
    try {
      const auto& v = detail::field(header, "schema_version");
      if (!v.is_number_integer()) throw detail::LineError{"schema_version must be an integer"};
      version = v.get<int>();
      if (version < 1) throw detail::LineError{"schema_version must be >= 1"};
      if (version > kSchemaVersion)
        throw Error(Errc::schema_unsupported, "schema_version " + std::to_string(version) +
                                                  " > supported " + std::to_string(kSchemaVersion))
            .at_line(1);
      meta = detail::parse_meta(detail::field(header, "meta"));
    } catch (const detail::LineError& e) {
      throw Error(Errc::malformed_line, "line 1: " + e.what).at_line(1);
    }
    log = EventLog(std::move(meta), version);
  }

  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t number = i + 1;
    const json j = parse_json(lines[i], number);
    FrameEvent ev;
    try {
      ev.frame_index = detail::unsigned_int(j, "frame_index");
      const double ts = detail::number(j, "timestamp_s");
      if (ev.frame_index >= log.meta().frame_count) throw detail::LineError{"frame_index beyond frame_count"};
      if (std::abs(ts - log.meta().timestamp_of(ev.frame_index)) > kTimestampTolerance)
        throw detail::LineError{"timestamp_s not aligned with frame_index / fps"};
      const auto& dets = detail::field(j, "detections");
      if (!dets.is_array()) throw detail::LineError{"detections must be an array"};
      for (const auto& d : dets) ev.detections.push_back(detail::parse_detection(d, log.meta()));
    } catch (const detail::LineError& e) {
      throw Error(Errc::malformed_line, "line " + std::to_string(number) + ": " + e.what).at_line(number);
    }
    if (!log.events().empty() && ev.frame_index <= log.events().back().frame_index)
      throw Error(Errc::ordering_violation, "line " + std::to_string(number) + ": frame " +
                                                std::to_string(ev.frame_index) + " not after frame " +
                                                std::to_string(log.events().back().frame_index))
          .at_line(number);
    log.append(std::move(ev));
  }
  log.seal();
  return log;
}

// ---------------------------------------------------------------------------
// Tally

struct CategoryStats {
  std::string category;
  std::size_t count = 0;
  std::size_t first_frame = 0;
  std::size_t last_frame = 0;
  double first_timestamp_s = 0.0;
  double last_timestamp_s = 0.0;

  bool operator==(const CategoryStats&) const = default;
};

/// Ordered by descending count, then category.
using CategoryTally = std::vector<CategoryStats>;

inline CategoryTally summarize_log(const EventLog& log) {
  if (!log.sealed()) throw Error(Errc::unsealed_log, "summarize_log needs a sealed log");
  std::map<std::string, CategoryStats> by_name;
  for (const auto& ev : log.events()) {
    for (const auto& d : ev.detections) {
      auto [it, fresh] = by_name.try_emplace(d.category);
      auto& s = it->second;
      if (fresh) {
        s.category = d.category;
        s.first_frame = ev.frame_index;
        s.first_timestamp_s = ev.timestamp_s;
      }
      ++s.count;
      s.last_frame = ev.frame_index;
      s.last_timestamp_s = ev.timestamp_s;
    }
  }
  CategoryTally tally;
  tally.reserve(by_name.size());
  for (auto& [_, s] : by_name) tally.push_back(std::move(s));
  std::stable_sort(tally.begin(), tally.end(), [](const auto& a, const auto& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.category < b.category;
  });
  return tally;
}

inline json to_json(const CategoryStats& s) {
  return json{{"category", s.category},
              {"count", s.count},
              {"first_frame", s.first_frame},
              {"last_frame", s.last_frame},
              {"first_timestamp_s", s.first_timestamp_s},
              {"last_timestamp_s", s.last_timestamp_s}};
}

}  // namespace edgelens
