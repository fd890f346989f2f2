#pragma once

// Content-aware keyframe sampling.
//
// Pipeline: dense_sample picks candidate frames at a moderate rate, an
// embedder maps each candidate to a unit-length semantic vector, plan_k
// derives the cluster count from the video duration, kmeans_cluster groups
// the vectors (seeded k-means++ then Lloyd iterations), and
// select_keyframes keeps the member nearest each centroid, sorted by time.
//
// Everything here is deterministic for a fixed seed: the random stream is
// std::mt19937_64 (fully specified by the standard) converted to doubles by
// hand, and every distance comparison uses kDistanceTieTolerance before
// falling back to index order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "edgelens/error.hpp"
#include "edgelens/event_model.hpp"

namespace edgelens {

inline constexpr double kDistanceTieTolerance = 1e-12;
inline constexpr double kUnitNormTolerance = 1e-6;

struct SamplerConfig {
  double dense_rate_fps = 1.0;
  std::size_t min_dense_frames = 8;
  double segment_seconds = 10.0;
  std::size_t k_min = 1;
  std::size_t k_max = 16;
  std::size_t kmeans_max_iters = 100;
  double kmeans_tol = 1e-6;
  std::size_t kmeans_restarts = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(dense_rate_fps > 0.0)) throw Error(Errc::invalid_config, "dense_rate_fps must be positive");
    if (min_dense_frames == 0) throw Error(Errc::invalid_config, "min_dense_frames must be positive");
    if (!(segment_seconds > 0.0)) throw Error(Errc::invalid_config, "segment_seconds must be positive");
    if (k_min == 0 || k_max == 0) throw Error(Errc::invalid_config, "k bounds must be positive");
    if (k_min > k_max) throw Error(Errc::invalid_config, "k_min must not exceed k_max");
    if (kmeans_max_iters == 0) throw Error(Errc::invalid_config, "kmeans_max_iters must be positive");
    if (!(kmeans_tol > 0.0)) throw Error(Errc::invalid_config, "kmeans_tol must be positive");
    if (kmeans_restarts == 0) throw Error(Errc::invalid_config, "kmeans_restarts must be positive");
  }
};

struct FrameEmbedding {
  std::size_t frame_index = 0;
  double timestamp_s = 0.0;
  std::vector<double> vector;  // unit length

  /// L2-normalizes `raw`. A zero vector has no direction and is rejected.
  static FrameEmbedding make(std::size_t frame_index, double timestamp_s, std::vector<double> raw) {
    double norm2 = 0.0;
    for (double v : raw) norm2 += v * v;
    if (raw.empty() || !(norm2 > 0.0) || !std::isfinite(norm2))
      throw Error(Errc::degenerate_input, "embedding for frame " + std::to_string(frame_index) +
                                              " is empty, zero or non-finite");
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : raw) v *= inv;
    return FrameEmbedding{frame_index, timestamp_s, std::move(raw)};
  }
};

struct KPlan {
  std::size_t k = 1;
  std::size_t n_sampled = 1;
  double duration_s = 0.0;

  bool operator==(const KPlan&) const = default;
};

struct Keyframe {
  std::size_t frame_index = 0;
  double timestamp_s = 0.0;
  std::size_t cluster_id = 0;

  bool operator==(const Keyframe&) const = default;
};

struct KeyframeSet {
  std::vector<Keyframe> keyframes;
  std::size_t k = 0;

  bool operator==(const KeyframeSet&) const = default;

  /// Throws DegenerateInput unless there is one keyframe per cluster id
  /// 0..k-1 and timestamps strictly ascend.
  void validate() const {
    if (k == 0 || keyframes.size() != k)
      throw Error(Errc::degenerate_input, "keyframe count must equal k");
    std::vector<bool> seen(k, false);
    for (std::size_t i = 0; i < keyframes.size(); ++i) {
      const auto& kf = keyframes[i];
      if (kf.cluster_id >= k || seen[kf.cluster_id])
        throw Error(Errc::degenerate_input, "cluster ids must be a permutation of 0..k-1");
      seen[kf.cluster_id] = true;
      if (i > 0 && !(kf.timestamp_s > keyframes[i - 1].timestamp_s))
        throw Error(Errc::degenerate_input, "keyframe timestamps must strictly ascend");
    }
  }
};

// ---------------------------------------------------------------------------

/// Candidate frames at stride round(fps / dense_rate_fps) from frame 0. When
/// that yields fewer than min_dense_frames, falls back to that many evenly
/// spaced frames (all frames for very short videos).
inline std::vector<std::size_t> dense_sample(const VideoMeta& meta, const SamplerConfig& cfg) {
  meta.validate();
  cfg.validate();
  const std::size_t n = meta.frame_count;
  const auto stride =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(meta.fps / cfg.dense_rate_fps)));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; i += stride) out.push_back(i);
  if (out.size() >= cfg.min_dense_frames) return out;

  out.clear();
  if (n <= cfg.min_dense_frames) {
    out.resize(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  // n > m >= 1 here, so floor(i * (n-1) / (m-1)) is strictly increasing.
  const std::size_t m = cfg.min_dense_frames;
  if (m == 1) return {0};
  for (std::size_t i = 0; i < m; ++i) out.push_back(i * (n - 1) / (m - 1));
  return out;
}

/// k = clamp(ceil(duration / segment_seconds), k_min, k_max), capped by the
/// number of sampled frames.
inline KPlan plan_k(const VideoMeta& meta, std::size_t n_sampled, const SamplerConfig& cfg) {
  cfg.validate();
  if (n_sampled == 0) throw Error(Errc::degenerate_input, "plan_k needs at least one sampled frame");
  const double segments = std::ceil(meta.duration_s / cfg.segment_seconds);
  const double clamped =
      std::clamp(segments, static_cast<double>(cfg.k_min), static_cast<double>(cfg.k_max));
  const auto k = std::min(static_cast<std::size_t>(clamped), n_sampled);
  return KPlan{k, n_sampled, meta.duration_s};
}

struct ClusterResult {
  std::vector<std::size_t> assignments;
  std::vector<std::vector<double>> centroids;
  double sse = 0.0;
  std::size_t iterations = 0;
  /// SSE after each Lloyd iteration; non-increasing.
  std::vector<double> sse_trace;
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

inline double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// k-means++ seeding. When every remaining point coincides with a chosen
/// center the D^2 weights vanish, and the lowest unchosen index is taken.
inline std::vector<std::size_t> kmeanspp_seeds(std::span<const FrameEmbedding> pts, std::size_t k,
                                               std::mt19937_64& rng) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> seeds;
  std::vector<bool> chosen(n, false);
  seeds.push_back(static_cast<std::size_t>(rng() % n));
  chosen[seeds.back()] = true;
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (seeds.size() < k) {
    const auto& last = pts[seeds.back()].vector;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = chosen[i] ? 0.0 : std::min(d2[i], squared_distance(pts[i].vector, last));
      total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = unit_draw(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) {
          pick = i;
          break;
        }
    }
    chosen[pick] = true;
    seeds.push_back(pick);
  }
  return seeds;
}

/// One k-means++ seeding plus Lloyd iterations.
inline ClusterResult lloyd(std::span<const FrameEmbedding> embeddings, std::size_t k, const SamplerConfig& cfg,
                           std::mt19937_64& rng) {
  const std::size_t n = embeddings.size();
  const std::size_t dim = embeddings[0].vector.size();
  ClusterResult r;
  for (auto idx : kmeanspp_seeds(embeddings, k, rng)) r.centroids.push_back(embeddings[idx].vector);
  r.assignments.assign(n, 0);

  std::vector<double> dist(n, 0.0);
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < cfg.kmeans_max_iters; ++iter) {
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = squared_distance(embeddings[i].vector, r.centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = squared_distance(embeddings[i].vector, r.centroids[c]);
        if (d < best_d - kDistanceTieTolerance) {
          best = c;
          best_d = d;
        }
      }
      r.assignments[i] = best;
      dist[i] = best_d;
      ++sizes[best];
    }

    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] != 0) continue;
      std::size_t victim = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (sizes[r.assignments[i]] < 2) continue;
        if (victim == n || dist[i] > dist[victim] + kDistanceTieTolerance) victim = i;
      }
      --sizes[r.assignments[victim]];
      r.assignments[victim] = c;
      ++sizes[c];
      r.centroids[c] = embeddings[victim].vector;
      dist[victim] = 0.0;
    }

    for (auto& c : r.centroids) std::fill(c.begin(), c.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& c = r.centroids[r.assignments[i]];
      for (std::size_t d = 0; d < dim; ++d) c[d] += embeddings[i].vector[d];
    }
    for (std::size_t c = 0; c < k; ++c)
      for (auto& v : r.centroids[c]) v /= static_cast<double>(sizes[c]);

    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      sse += squared_distance(embeddings[i].vector, r.centroids[r.assignments[i]]);
    r.sse_trace.push_back(sse);
    r.sse = sse;
    r.iterations = iter + 1;
    if (sse <= 0.0) break;
    if (std::isfinite(previous) && (previous - sse) / previous < cfg.kmeans_tol) break;
    previous = sse;
  }
  return r;
}

}  // namespace detail

/// Seeded k-means++ initialization followed by Lloyd iterations until the
/// relative SSE improvement drops below kmeans_tol or kmeans_max_iters is
/// reached, repeated kmeans_restarts times from one seeded stream; the
/// lowest SSE wins (earliest restart on ties). An empty cluster takes the point farthest from its own centroid
/// (lowest index on ties) out of a cluster that still has other members.
inline ClusterResult kmeans_cluster(std::span<const FrameEmbedding> embeddings, std::size_t k,
                                    const SamplerConfig& cfg) {
  cfg.validate();
  const std::size_t n = embeddings.size();
  if (k == 0 || k > n)
    throw Error(Errc::degenerate_input,
                "k = " + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
  const std::size_t dim = embeddings[0].vector.size();
  for (const auto& e : embeddings)
    if (e.vector.size() != dim || dim == 0)
      throw Error(Errc::shape_mismatch, "all embeddings must share one non-zero dimension");

  std::mt19937_64 rng(cfg.seed);
  ClusterResult best;
  for (std::size_t run = 0; run < cfg.kmeans_restarts; ++run) {
    ClusterResult r = detail::lloyd(embeddings, k, cfg, rng);
    if (run == 0 || r.sse < best.sse - kDistanceTieTolerance) best = std::move(r);
  }
  return best;
}


/// Per cluster, the member nearest the centroid (earlier frame on ties),
/// sorted by timestamp.
inline KeyframeSet select_keyframes(std::span<const FrameEmbedding> embeddings,
                                    std::span<const std::size_t> assignments,
                                    const std::vector<std::vector<double>>& centroids) {
  const std::size_t k = centroids.size();
  if (assignments.size() != embeddings.size())
    throw Error(Errc::shape_mismatch, "one assignment per embedding is required");
  std::vector<std::size_t> best(k, embeddings.size());
  std::vector<double> best_d(k, 0.0);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const std::size_t c = assignments[i];
    if (c >= k) throw Error(Errc::degenerate_input, "assignment refers to a missing centroid");
    const double d = std::sqrt(detail::squared_distance(embeddings[i].vector, centroids[c]));
    if (best[c] == embeddings.size() || d < best_d[c] - kDistanceTieTolerance ||
        (std::abs(d - best_d[c]) <= kDistanceTieTolerance &&
         embeddings[i].frame_index < embeddings[best[c]].frame_index)) {
      best[c] = i;
      best_d[c] = d;
    }
  }
  KeyframeSet set;
  set.k = k;
  for (std::size_t c = 0; c < k; ++c) {
    if (best[c] == embeddings.size())
      throw Error(Errc::degenerate_input, "cluster " + std::to_string(c) + " has no members");
    const auto& e = embeddings[best[c]];
    set.keyframes.push_back(Keyframe{e.frame_index, e.timestamp_s, c});
  }
  std::sort(set.keyframes.begin(), set.keyframes.end(), [](const Keyframe& a, const Keyframe& b) {
    if (a.timestamp_s != b.timestamp_s) return a.timestamp_s < b.timestamp_s;
    return a.frame_index < b.frame_index;
  });
  return set;
}

/// Maps a frame to its raw (not necessarily normalized) semantic vector.
class FrameEmbedder {
 public:
  virtual ~FrameEmbedder() = default;
  virtual std::vector<double> embed(std::size_t frame_index) = 0;
  virtual bool concurrent_calls_ok() const { return false; }
};

struct SamplingResult {
  std::vector<std::size_t> sampled;
  std::vector<FrameEmbedding> embeddings;
  KPlan plan;
  ClusterResult clusters;
  KeyframeSet keyframes;
};

/// dense_sample -> embed -> plan_k -> kmeans_cluster -> select_keyframes.
/// Embedding runs on up to `worker_count` threads when the embedder allows it.
inline SamplingResult sample_keyframes_detailed(const VideoMeta& meta, const SamplerConfig& cfg,
                                                FrameEmbedder& embedder, std::size_t worker_count = 1) {
  SamplingResult out;
  out.sampled = dense_sample(meta, cfg);
  const std::size_t n = out.sampled.size();
  std::vector<std::vector<double>> raw(n);

  const std::size_t workers =
      embedder.concurrent_calls_ok() ? std::clamp<std::size_t>(worker_count, 1, n) : 1;
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) raw[i] = embedder.embed(out.sampled[i]);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) raw[i] = embedder.embed(out.sampled[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  out.embeddings.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.embeddings.push_back(
        FrameEmbedding::make(out.sampled[i], meta.timestamp_of(out.sampled[i]), std::move(raw[i])));
  out.plan = plan_k(meta, n, cfg);
  out.clusters = kmeans_cluster(out.embeddings, out.plan.k, cfg);
  out.keyframes = select_keyframes(out.embeddings, out.clusters.assignments, out.clusters.centroids);
  return out;
}

inline KeyframeSet sample_keyframes(const VideoMeta& meta, const SamplerConfig& cfg, FrameEmbedder& embedder,
                                    std::size_t worker_count = 1) {
  return sample_keyframes_detailed(meta, cfg, embedder, worker_count).keyframes;
}

// ---------------------------------------------------------------------------
// JSON: {k, keyframes:[{frame_index, timestamp_s, cluster_id}]}

inline nlohmann::json to_json(const KeyframeSet& set) {
  auto arr = nlohmann::json::array();
  for (const auto& kf : set.keyframes)
    arr.push_back({{"frame_index", kf.frame_index}, {"timestamp_s", kf.timestamp_s}, {"cluster_id", kf.cluster_id}});
  return nlohmann::json{{"k", set.k}, {"keyframes", arr}};
}

inline KeyframeSet keyframes_from_json(const nlohmann::json& j) {
  KeyframeSet set;
  try {
    set.k = j.at("k").get<std::size_t>();
    for (const auto& kf : j.at("keyframes"))
      set.keyframes.push_back(Keyframe{kf.at("frame_index").get<std::size_t>(),
                                       kf.at("timestamp_s").get<double>(), kf.at("cluster_id").get<std::size_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_argument, std::string("malformed keyframe JSON: ") + e.what());
  }
  set.validate();
  return set;
}

inline nlohmann::json to_json(const KPlan& plan) {
  return nlohmann::json{{"k", plan.k}, {"n_sampled", plan.n_sampled}, {"duration_s", plan.duration_s}};
}

}  // namespace edgelens
