#pragma once

// Synthetic videos for desk-scale runs. A fixture is a JSON description:
//
//   {
//     "video_id": "driving_30f", "fps": 30, "frame_count": 30,
//     "width": 320, "height": 180, "token_noise": 0.05,
//     "scenes":  [{"first_frame": 0, "color": [96, 96, 96]}, ...],
//     "objects": [{"category": "car", "first_frame": 5, "last_frame": 25,
//                  "box": [40, 100, 120, 150], "step": [8, 0],
//                  "score": 0.91, "color": [200, 40, 40]}, ...]
//   }
//
// Frames are rendered as flat scene colours with filled object rectangles.
// The same object list drives the mock detector table, and the scene list
// drives the mock visual backend, so every downstream result is known in
// advance.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "edgelens/error.hpp"
#include "edgelens/event_model.hpp"
#include "edgelens/fusion.hpp"
#include "edgelens/perception.hpp"

namespace edgelens {

namespace fixtures {

inline constexpr std::string_view kDriving30f = R"({
  "video_id": "driving_30f", "fps": 30, "frame_count": 30, "width": 320, "height": 180,
  "token_noise": 0.05,
  "scenes": [{"first_frame": 0, "color": [96, 96, 96]}],
  "objects": [
    {"category": "car", "first_frame": 5, "last_frame": 25, "box": [40, 100, 120, 150],
     "step": [8, 0], "score": 0.91, "color": [200, 40, 40]}
  ]
})";

inline constexpr std::string_view kScenes35s = R"({
  "video_id": "scenes_35s", "fps": 10, "frame_count": 350, "width": 160, "height": 90,
  "token_noise": 0.05,
  "scenes": [
    {"first_frame": 0,   "color": [90, 90, 90]},
    {"first_frame": 100, "color": [40, 120, 40]},
    {"first_frame": 200, "color": [40, 40, 140]},
    {"first_frame": 300, "color": [150, 130, 60]}
  ],
  "objects": [
    {"category": "car", "first_frame": 0, "last_frame": 99, "box": [10, 50, 50, 75],
     "step": [1, 0], "score": 0.9, "color": [200, 40, 40]},
    {"category": "person", "first_frame": 100, "last_frame": 199, "box": [70, 20, 85, 70],
     "step": [0, 0], "score": 0.8, "color": [240, 200, 160]},
    {"category": "car", "first_frame": 200, "last_frame": 299, "box": [20, 40, 60, 65],
     "step": [0, 0], "score": 0.85, "color": [30, 30, 200]},
    {"category": "dog", "first_frame": 300, "last_frame": 349, "box": [100, 60, 130, 80],
     "step": [0, 0], "score": 0.7, "color": [120, 80, 40]}
  ]
})";

inline constexpr std::string_view kStatic5s = R"({
  "video_id": "static_5s", "fps": 1, "frame_count": 5, "width": 64, "height": 48,
  "token_noise": 0.0,
  "scenes": [{"first_frame": 0, "color": [128, 128, 128]}],
  "objects": []
})";

inline constexpr std::string_view kSingleFrame = R"({
  "video_id": "single_frame", "fps": 30, "frame_count": 1, "width": 64, "height": 48,
  "token_noise": 0.05,
  "scenes": [{"first_frame": 0, "color": [10, 20, 30]}],
  "objects": [
    {"category": "person", "first_frame": 0, "last_frame": 0, "box": [20, 8, 36, 44],
     "step": [0, 0], "score": 0.75, "color": [240, 200, 160]}
  ]
})";

inline constexpr std::string_view kTwoCars = R"({
  "video_id": "two_cars", "fps": 30, "frame_count": 1, "width": 64, "height": 48,
  "token_noise": 0.05,
  "scenes": [{"first_frame": 0, "color": [96, 96, 96]}],
  "objects": [
    {"category": "car", "first_frame": 0, "last_frame": 0, "box": [4, 24, 24, 36],
     "step": [0, 0], "score": 0.93, "color": [200, 40, 40]},
    {"category": "car", "first_frame": 0, "last_frame": 0, "box": [36, 20, 60, 34],
     "step": [0, 0], "score": 0.88, "color": [40, 40, 200]}
  ]
})";

}  // namespace fixtures

inline const std::map<std::string, std::string_view>& bundled_fixtures() {
  static const std::map<std::string, std::string_view> table{
      {"driving_30f", fixtures::kDriving30f}, {"scenes_35s", fixtures::kScenes35s},
      {"static_5s", fixtures::kStatic5s},     {"single_frame", fixtures::kSingleFrame},
      {"two_cars", fixtures::kTwoCars},
  };
  return table;
}

/// A synthetic video: metadata, rendered frames, and the ground truth that
/// the mock backends serve.
class FixtureVideo {
 public:
  struct Scene {
    std::size_t first_frame = 0;
    std::array<std::uint8_t, 3> color{};
  };
  struct Object {
    std::string category;
    std::size_t first_frame = 0;
    std::size_t last_frame = 0;
    BoundingBox box;
    double step_x = 0.0;
    double step_y = 0.0;
    double score = 1.0;
    std::array<std::uint8_t, 3> color{};
  };

  static FixtureVideo from_json(const nlohmann::json& j) {
    FixtureVideo v;
    try {
      v.meta_ = VideoMeta::make(j.at("video_id").get<std::string>(), j.at("fps").get<double>(),
                                j.at("frame_count").get<std::size_t>(), j.at("width").get<std::uint32_t>(),
                                j.at("height").get<std::uint32_t>());
      v.token_noise_ = j.value("token_noise", 0.05);
      for (const auto& s : j.value("scenes", nlohmann::json::array()))
        v.scenes_.push_back(Scene{s.at("first_frame").get<std::size_t>(), color(s.at("color"))});
      std::sort(v.scenes_.begin(), v.scenes_.end(),
                [](const Scene& a, const Scene& b) { return a.first_frame < b.first_frame; });
      for (const auto& o : j.value("objects", nlohmann::json::array())) {
        Object obj;
        obj.category = o.at("category").get<std::string>();
        obj.first_frame = o.at("first_frame").get<std::size_t>();
        obj.last_frame = o.at("last_frame").get<std::size_t>();
        const auto box = o.at("box").get<std::vector<double>>();
        if (box.size() != 4) throw Error(Errc::invalid_argument, "object box needs 4 numbers");
        obj.box = BoundingBox{box[0], box[1], box[2], box[3]};
        const auto step = o.value("step", std::vector<double>{0.0, 0.0});
        if (step.size() != 2) throw Error(Errc::invalid_argument, "object step needs 2 numbers");
        obj.step_x = step[0];
        obj.step_y = step[1];
        obj.score = o.value("score", 1.0);
        obj.color = color(o.value("color", nlohmann::json::array({255, 255, 255})));
        if (obj.category.empty() || obj.first_frame > obj.last_frame || !(obj.score >= 0.0 && obj.score <= 1.0))
          throw Error(Errc::invalid_argument, "invalid fixture object");
        v.objects_.push_back(std::move(obj));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::invalid_argument, std::string("malformed fixture: ") + e.what());
    }
    return v;
  }

  /// A video with no content: blank frames and pure-hash tokens. Used when
  /// artifacts refer to a video whose description is not at hand.
  static FixtureVideo blank(VideoMeta meta) {
    FixtureVideo v;
    v.meta_ = std::move(meta);
    v.token_noise_ = 1.0;
    return v;
  }

  const VideoMeta& meta() const { return meta_; }
  double token_noise() const { return token_noise_; }
  bool has_scenes() const { return !scenes_.empty(); }

  std::size_t scene_of(std::size_t frame_index) const {
    std::size_t scene = 0;
    for (std::size_t i = 0; i < scenes_.size(); ++i)
      if (scenes_[i].first_frame <= frame_index) scene = i;
    return scene;
  }

  /// Object box at a frame, clipped to the frame; nullopt when absent or
  /// clipped away.
  std::optional<BoundingBox> box_at(const Object& o, std::size_t frame_index) const {
    if (frame_index < o.first_frame || frame_index > o.last_frame) return std::nullopt;
    const double dt = static_cast<double>(frame_index - o.first_frame);
    BoundingBox b{o.box.x_min + o.step_x * dt, o.box.y_min + o.step_y * dt, o.box.x_max + o.step_x * dt,
                  o.box.y_max + o.step_y * dt};
    b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(meta_.width));
    b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(meta_.width));
    b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(meta_.height));
    b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(meta_.height));
    if (!(b.x_min < b.x_max && b.y_min < b.y_max)) return std::nullopt;
    return b;
  }

  Frame frame(std::size_t frame_index) const {
    if (frame_index >= meta_.frame_count)
      throw Error(Errc::frame_out_of_range, "fixture has no frame " + std::to_string(frame_index));
    Frame f = Frame::blank(frame_index, meta_.width, meta_.height);
    if (!scenes_.empty()) {
      const auto& c = scenes_[scene_of(frame_index)].color;
      for (std::size_t p = 0; p < f.pixels.size(); p += 3) std::copy(c.begin(), c.end(), f.pixels.begin() + p);
    }
    for (const auto& o : objects_) {
      const auto b = box_at(o, frame_index);
      if (!b) continue;
      const auto x0 = static_cast<std::uint32_t>(std::floor(b->x_min));
      const auto y0 = static_cast<std::uint32_t>(std::floor(b->y_min));
      const auto x1 = static_cast<std::uint32_t>(std::ceil(b->x_max));
      const auto y1 = static_cast<std::uint32_t>(std::ceil(b->y_max));
      for (std::uint32_t y = y0; y < y1; ++y)
        for (std::uint32_t x = x0; x < x1; ++x)
          std::copy(o.color.begin(), o.color.end(),
                    f.pixels.begin() + (static_cast<std::ptrdiff_t>(y) * meta_.width + x) * 3);
    }
    return f;
  }

  FrameProvider frame_provider() const {
    return [self = std::make_shared<const FixtureVideo>(*this)](std::size_t idx) { return self->frame(idx); };
  }

  MockPerceptionBackend::Table detection_table() const {
    MockPerceptionBackend::Table table;
    for (std::size_t f = 0; f < meta_.frame_count; ++f)
      for (const auto& o : objects_)
        if (auto b = box_at(o, f)) table[f].push_back(Detection{o.category, o.score, *b, std::nullopt, {}});
    return table;
  }

  MockVisualBackend::SceneOf scene_function() const {
    if (scenes_.empty()) return {};
    return [self = std::make_shared<const FixtureVideo>(*this)](std::size_t idx) { return self->scene_of(idx); };
  }

  const std::vector<Object>& objects() const { return objects_; }

 private:
  static std::array<std::uint8_t, 3> color(const nlohmann::json& j) {
    const auto v = j.get<std::vector<int>>();
    if (v.size() != 3) throw Error(Errc::invalid_argument, "colour needs 3 components");
    return {static_cast<std::uint8_t>(v[0]), static_cast<std::uint8_t>(v[1]), static_cast<std::uint8_t>(v[2])};
  }

  VideoMeta meta_;
  double token_noise_ = 0.05;
  std::vector<Scene> scenes_;
  std::vector<Object> objects_;
};

/// Bundled fixture id, or a path to a fixture JSON file.
inline FixtureVideo load_fixture(std::string_view id_or_path) {
  const auto& table = bundled_fixtures();
  if (auto it = table.find(std::string(id_or_path)); it != table.end())
    return FixtureVideo::from_json(nlohmann::json::parse(it->second));
  const std::filesystem::path path{std::string(id_or_path)};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::not_found, "no bundled fixture or file named '" + std::string(id_or_path) + "'");
  try {
    return FixtureVideo::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_argument, path.string() + ": " + e.what());
  }
}

}  // namespace edgelens
