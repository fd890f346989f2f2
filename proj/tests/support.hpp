#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "edgelens/edgelens.hpp"

namespace edgelens::testing {

/// Code of the edgelens::Error thrown by f, or nullopt when nothing is thrown.
inline std::optional<Errc> errc_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline VideoMeta random_meta(std::mt19937_64& rng) {
  static const double kFps[] = {1.0, 2.5, 10.0, 24.0, 25.0, 29.97, 30.0, 59.94, 60.0};
  const double fps = kFps[rng() % std::size(kFps)];
  const std::size_t frames = 1 + rng() % 400;
  const auto w = static_cast<std::uint32_t>(8 + rng() % 120);
  const auto h = static_cast<std::uint32_t>(8 + rng() % 90);
  return VideoMeta::make("vid-" + std::to_string(rng() % 1000), fps, frames, w, h);
}

inline Detection random_detection(std::mt19937_64& rng, const VideoMeta& meta) {
  static const char* kCats[] = {"car", "person", "dog", "traffic light", "bicycle", "Straße"};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Detection d;
  d.category = kCats[rng() % std::size(kCats)];
  d.score = std::round(u(rng) * 1000.0) / 1000.0;
  const double x0 = std::floor(u(rng) * (meta.width - 1));
  const double y0 = std::floor(u(rng) * (meta.height - 1));
  const double x1 = x0 + 1 + std::floor(u(rng) * (meta.width - x0 - 1));
  const double y1 = y0 + 1 + std::floor(u(rng) * (meta.height - y0 - 1));
  d.box = BoundingBox{x0 + 0.25 * (rng() % 2), y0, x1, y1};
  if (rng() % 2) {
    d.source = DetectionSource::segmenter;
    d.mask = MaskRef::from_box(d.box, meta.width, meta.height);
  }
  return d;
}

/// Sealed log with strictly increasing, possibly sparse frame indices.
inline EventLog random_log(std::mt19937_64& rng) {
  const VideoMeta meta = random_meta(rng);
  EventLog log(meta);
  std::size_t f = rng() % 3;
  while (f < meta.frame_count) {
    FrameEvent ev{f, 0.0, {}};
    const std::size_t dets = rng() % 4;
    for (std::size_t i = 0; i < dets; ++i) ev.detections.push_back(random_detection(rng, meta));
    log.append(std::move(ev));
    f += 1 + rng() % 5;
  }
  log.seal();
  return log;
}

/// Minimum within-cluster sum of squares over every partition of `pts` into
/// exactly k non-empty clusters (brute force, k^n assignments).
inline double exhaustive_min_sse(const std::vector<std::vector<double>>& pts, std::size_t k) {
  const std::size_t n = pts.size();
  const std::size_t dim = pts[0].size();
  std::vector<std::size_t> label(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<std::vector<double>> sum(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[label[i]];
      for (std::size_t d = 0; d < dim; ++d) sum[label[i]][d] += pts[i][d];
    }
    bool all_used = true;
    for (auto c : count) all_used = all_used && c > 0;
    if (all_used) {
      double sse = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = pts[i][d] - sum[label[i]][d] / static_cast<double>(count[label[i]]);
          sse += diff * diff;
        }
      best = std::min(best, sse);
    }
    std::size_t pos = 0;
    while (pos < n && ++label[pos] == k) label[pos++] = 0;
    if (pos == n) break;
  }
  return best;
}

inline std::vector<FrameEmbedding> embeddings_of(const std::vector<std::vector<double>>& raw) {
  std::vector<FrameEmbedding> out;
  for (std::size_t i = 0; i < raw.size(); ++i) out.push_back(FrameEmbedding::make(i, static_cast<double>(i), raw[i]));
  return out;
}

inline std::vector<std::vector<double>> vectors_of(const std::vector<FrameEmbedding>& e) {
  std::vector<std::vector<double>> out;
  for (const auto& x : e) out.push_back(x.vector);
  return out;
}

/// Natural-language text with injected coordinate tuples, confidences and
/// frame references.
inline std::string dirty_string(std::mt19937_64& rng) {
  static const char* kWords[] = {"a", "the", "car", "person", "is", "detected", "on", "road", "driving",
                                 "video", "left", "near", "then", "dog", "appears", "outlined", "and"};
  std::uniform_int_distribution<int> coord(0, 1920);
  auto num = [&] { return std::to_string(coord(rng)); };
  auto frac = [&] { return "0." + std::to_string(rng() % 100); };
  std::string s;
  const std::size_t parts = 1 + rng() % 12;
  for (std::size_t i = 0; i < parts; ++i) {
    if (!s.empty()) s += ' ';
    switch (rng() % 12) {
      case 0: s += "at (" + num() + ", " + num() + ", " + num() + ", " + num() + ")"; break;
      case 1: s += "(" + num() + "," + num() + ")"; break;
      case 2: s += "[" + num() + ", " + num() + ", " + num() + ", " + num() + "]"; break;
      case 3: s += "with " + frac() + " confidence"; break;
      case 4: s += "confidence " + frac(); break;
      case 5: s += "score: " + std::to_string(rng() % 100) + "%"; break;
      case 6: s += "in frame " + num(); break;
      case 7: s += "frame #" + num(); break;
      case 8: s += "frames " + num() + "-" + num(); break;
      case 9: s += "(conf=" + frac() + ")"; break;
      default: s += kWords[rng() % std::size(kWords)]; break;
    }
  }
  return s;
}

}  // namespace edgelens::testing
