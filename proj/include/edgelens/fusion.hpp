#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "edgelens/detail/hash.hpp"
#include "edgelens/error.hpp"
#include "edgelens/keyframe_sampler.hpp"
#include "edgelens/perception.hpp"

namespace edgelens {

inline constexpr std::size_t kDefaultQueryCount = 32;
inline constexpr std::size_t kMockTokenDim = 64;

/// Q x D_t visual tokens for one frame, row-major.
struct FrameTokens {
  std::size_t frame_index = 0;
  std::size_t query_count = 0;
  std::size_t token_dim = 0;
  std::vector<float> values;

  bool operator==(const FrameTokens&) const = default;

  std::span<const float> row(std::size_t q) const { return {values.data() + q * token_dim, token_dim}; }
};

/// Keyframe token blocks stacked along the sequence axis:
/// rows [i*Q, (i+1)*Q) hold keyframe i.
struct VideoRepresentation {
  std::size_t query_count = 0;
  std::size_t token_dim = 0;
  std::vector<float> token_sequence;
  std::vector<std::size_t> frame_boundaries;
  std::vector<std::size_t> source_frames;

  std::size_t rows() const { return token_dim == 0 ? 0 : token_sequence.size() / token_dim; }
  std::size_t frame_count() const { return source_frames.size(); }

  FrameTokens block(std::size_t i) const {
    if (i >= source_frames.size()) throw Error(Errc::shape_mismatch, "block index out of range");
    const std::size_t begin = frame_boundaries[i] * token_dim;
    const std::size_t len = query_count * token_dim;
    return FrameTokens{source_frames[i], query_count, token_dim,
                       std::vector<float>(token_sequence.begin() + static_cast<std::ptrdiff_t>(begin),
                                          token_sequence.begin() + static_cast<std::ptrdiff_t>(begin + len))};
  }
};

struct VisualBackendDescriptor {
  std::string name;
  std::uint64_t model_footprint_mb = 0;
  std::size_t query_count = kDefaultQueryCount;
  std::size_t token_dim = kMockTokenDim;
};

/// Image encoder + query transformer: frame -> fixed-length token block.
class VisualBackend {
 public:
  virtual ~VisualBackend() = default;
  virtual const VisualBackendDescriptor& descriptor() const = 0;
  virtual bool available() const { return true; }
  virtual bool concurrent_calls_ok() const { return false; }
  virtual FrameTokens tokenize(const Frame& frame) = 0;
};

/// Seeded stand-in. Token (q, d) of a frame is
///   anchor(scene)[d] + noise * u(video_id, frame_index, q, d)
/// with u uniform in [-1, 1). Frames of one scene share an anchor, which
/// gives the sampler well-separated groups; without scenes the matrix is
/// pure hash output.
class MockVisualBackend final : public VisualBackend {
 public:
  using SceneOf = std::function<std::size_t(std::size_t frame_index)>;

  MockVisualBackend(VisualBackendDescriptor descriptor, std::string video_id, SceneOf scene_of = {},
                    double noise = 1.0, std::uint64_t seed = 0)
      : descriptor_(std::move(descriptor)),
        video_id_(std::move(video_id)),
        scene_of_(std::move(scene_of)),
        noise_(noise),
        seed_(seed) {}

  const VisualBackendDescriptor& descriptor() const override { return descriptor_; }
  bool available() const override { return available_; }
  bool concurrent_calls_ok() const override { return true; }
  void set_available(bool available) { available_ = available; }

  FrameTokens tokenize(const Frame& frame) override {
    const std::size_t q_count = descriptor_.query_count;
    const std::size_t dim = descriptor_.token_dim;
    std::vector<double> anchor(dim, 0.0);
    if (scene_of_) {
      detail::SplitMix64 a(detail::mix64(detail::mix64(0x5eedULL, seed_), scene_of_(frame.frame_index)));
      for (auto& v : anchor) v = a.symmetric();
    }
    detail::SplitMix64 rng(detail::mix64(detail::fnv1a64(video_id_), frame.frame_index));
    FrameTokens t{frame.frame_index, q_count, dim, std::vector<float>(q_count * dim)};
    for (std::size_t q = 0; q < q_count; ++q)
      for (std::size_t d = 0; d < dim; ++d)
        t.values[q * dim + d] = static_cast<float>(anchor[d] + noise_ * rng.symmetric());
    return t;
  }

 private:
  VisualBackendDescriptor descriptor_;
  std::string video_id_;
  SceneOf scene_of_;
  double noise_;
  std::uint64_t seed_;
  bool available_ = true;
};

inline FrameTokens tokenize_frame(VisualBackend& backend, const Frame& frame) {
  const auto& desc = backend.descriptor();
  if (!backend.available())
    throw Error(Errc::backend_unavailable, desc.name + " is not loaded").at_frame(frame.frame_index);
  FrameTokens t = backend.tokenize(frame);
  if (t.query_count != desc.query_count || t.token_dim != desc.token_dim ||
      t.values.size() != desc.query_count * desc.token_dim || t.frame_index != frame.frame_index)
    throw Error(Errc::shape_mismatch, desc.name + " returned a token block of the wrong shape")
        .at_frame(frame.frame_index);
  return t;
}

/// Concatenates keyframe token blocks in keyframe (timestamp) order.
inline VideoRepresentation fuse(std::span<const FrameTokens> frame_tokens, const KeyframeSet& keyframes) {
  if (frame_tokens.empty()) throw Error(Errc::shape_mismatch, "at least one token block is required");
  if (frame_tokens.size() != keyframes.keyframes.size())
    throw Error(Errc::shape_mismatch, "token block count differs from keyframe count");
  const std::size_t q = frame_tokens[0].query_count;
  const std::size_t dim = frame_tokens[0].token_dim;
  VideoRepresentation rep{q, dim, {}, {}, {}};
  rep.token_sequence.reserve(frame_tokens.size() * q * dim);
  for (std::size_t i = 0; i < frame_tokens.size(); ++i) {
    const auto& ft = frame_tokens[i];
    if (ft.query_count != q || ft.token_dim != dim || ft.values.size() != q * dim)
      throw Error(Errc::shape_mismatch, "token blocks must share one shape");
    if (ft.frame_index != keyframes.keyframes[i].frame_index)
      throw Error(Errc::order_mismatch, "token block " + std::to_string(i) + " is frame " +
                                            std::to_string(ft.frame_index) + ", keyframe is frame " +
                                            std::to_string(keyframes.keyframes[i].frame_index));
    rep.frame_boundaries.push_back(i * q);
    rep.source_frames.push_back(ft.frame_index);
    rep.token_sequence.insert(rep.token_sequence.end(), ft.values.begin(), ft.values.end());
  }
  return rep;
}

/// Shape summary for debugging; never the token values.
inline nlohmann::json describe(const VideoRepresentation& rep) {
  return nlohmann::json{{"rows", rep.rows()},
                        {"token_dim", rep.token_dim},
                        {"query_count", rep.query_count},
                        {"k", rep.frame_count()},
                        {"frame_boundaries", rep.frame_boundaries},
                        {"source_frames", rep.source_frames}};
}

/// Sampler embedder: mean of the frame's token rows (normalized later by
/// FrameEmbedding::make).
class PooledTokenEmbedder final : public FrameEmbedder {
 public:
  PooledTokenEmbedder(VisualBackend& backend, FrameProvider frames)
      : backend_(backend), frames_(std::move(frames)) {}

  bool concurrent_calls_ok() const override { return backend_.concurrent_calls_ok(); }

  std::vector<double> embed(std::size_t frame_index) override {
    const FrameTokens t = tokenize_frame(backend_, frames_(frame_index));
    std::vector<double> mean(t.token_dim, 0.0);
    for (std::size_t q = 0; q < t.query_count; ++q) {
      auto row = t.row(q);
      for (std::size_t d = 0; d < t.token_dim; ++d) mean[d] += row[d];
    }
    for (auto& v : mean) v /= static_cast<double>(t.query_count);
    return mean;
  }

 private:
  VisualBackend& backend_;
  FrameProvider frames_;
};

/// Tokenizes every keyframe (in order) and fuses the blocks.
inline VideoRepresentation represent_video(VisualBackend& backend, const KeyframeSet& keyframes,
                                           const FrameProvider& frames) {
  std::vector<FrameTokens> blocks;
  blocks.reserve(keyframes.keyframes.size());
  for (const auto& kf : keyframes.keyframes) blocks.push_back(tokenize_frame(backend, frames(kf.frame_index)));
  return fuse(blocks, keyframes);
}

}  // namespace edgelens
