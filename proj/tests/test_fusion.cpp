#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace edgelens;
using edgelens::testing::errc_of;

namespace {

VisualBackendDescriptor qformer() { return {"mock-qformer", 330, kDefaultQueryCount, kMockTokenDim}; }

KeyframeSet keyframes_at(std::vector<std::size_t> frames) {
  KeyframeSet set;
  set.k = frames.size();
  for (std::size_t i = 0; i < frames.size(); ++i)
    set.keyframes.push_back(Keyframe{frames[i], static_cast<double>(frames[i]) / 30.0, i});
  return set;
}

class WrongShape final : public VisualBackend {
 public:
  const VisualBackendDescriptor& descriptor() const override { return desc_; }
  FrameTokens tokenize(const Frame& f) override { return FrameTokens{f.frame_index, 31, 64, std::vector<float>(31 * 64)}; }

 private:
  VisualBackendDescriptor desc_{"wrong", 1, 32, 64};
};

}  // namespace

TEST(TokenizeFrame, ShapeAndDeterminism) {
  const auto video = load_fixture("driving_30f");
  MockVisualBackend backend(qformer(), "driving_30f");
  const auto a = tokenize_frame(backend, video.frame(3));
  EXPECT_EQ(a.query_count, 32u);
  EXPECT_EQ(a.token_dim, 64u);
  EXPECT_EQ(a.values.size(), 32u * 64u);
  EXPECT_EQ(tokenize_frame(backend, video.frame(3)), a);
}

TEST(TokenizeFrame, DistinctFramesDistinctMatrices) {
  std::set<std::vector<float>> seen;
  for (const auto& [id, _] : bundled_fixtures()) {
    const auto video = load_fixture(id);
    MockVisualBackend backend(qformer(), id, video.scene_function(), video.token_noise() + 1e-3);
    for (std::size_t f = 0; f < video.meta().frame_count; ++f)
      EXPECT_TRUE(seen.insert(tokenize_frame(backend, video.frame(f)).values).second) << id << " frame " << f;
  }
}

TEST(TokenizeFrame, ContractChecks) {
  const auto frame = load_fixture("two_cars").frame(0);
  WrongShape wrong;
  EXPECT_EQ(errc_of([&] { tokenize_frame(wrong, frame); }), Errc::shape_mismatch);
  MockVisualBackend off(qformer(), "x");
  off.set_available(false);
  EXPECT_EQ(errc_of([&] { tokenize_frame(off, frame); }), Errc::backend_unavailable);
}

TEST(Fuse, SingleBlockIsIdentity) {
  const auto video = load_fixture("driving_30f");
  MockVisualBackend backend(qformer(), "driving_30f");
  const auto t = tokenize_frame(backend, video.frame(0));
  const std::vector<FrameTokens> blocks{t};
  const auto rep = fuse(blocks, keyframes_at({0}));
  EXPECT_EQ(rep.token_sequence, t.values);
  EXPECT_EQ(rep.frame_boundaries, std::vector<std::size_t>{0});
  EXPECT_EQ(rep.rows(), 32u);
}

TEST(Fuse, FourBlocksRow32IsSecondKeyframeToken0) {
  const auto video = load_fixture("driving_30f");
  MockVisualBackend backend(qformer(), "driving_30f");
  const auto kf = keyframes_at({2, 9, 17, 28});
  const auto rep = represent_video(backend, kf, video.frame_provider());
  EXPECT_EQ(rep.rows(), 128u);
  EXPECT_EQ(rep.frame_boundaries, (std::vector<std::size_t>{0, 32, 64, 96}));
  const auto second = tokenize_frame(backend, video.frame(9));
  const auto row32 = std::span<const float>(rep.token_sequence).subspan(32 * 64, 64);
  EXPECT_TRUE(std::equal(row32.begin(), row32.end(), second.row(0).begin()));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(rep.block(i), tokenize_frame(backend, video.frame(kf.keyframes[i].frame_index)));
}

TEST(Fuse, PermutedOrderIsOrderMismatch) {
  const auto video = load_fixture("driving_30f");
  MockVisualBackend backend(qformer(), "driving_30f");
  const std::vector<FrameTokens> blocks{tokenize_frame(backend, video.frame(9)), tokenize_frame(backend, video.frame(2))};
  EXPECT_EQ(errc_of([&] { fuse(blocks, keyframes_at({2, 9})); }), Errc::order_mismatch);
  EXPECT_EQ(errc_of([&] { fuse(blocks, keyframes_at({2})); }), Errc::shape_mismatch);
  EXPECT_EQ(errc_of([&] { fuse(std::vector<FrameTokens>{}, keyframes_at({})); }), Errc::shape_mismatch);
}

TEST(Fuse, DescribeHasNoValues) {
  const auto video = load_fixture("driving_30f");
  MockVisualBackend backend(qformer(), "driving_30f");
  const auto j = describe(represent_video(backend, keyframes_at({1, 5}), video.frame_provider()));
  EXPECT_EQ(j["rows"], 64);
  EXPECT_EQ(j["frame_boundaries"], nlohmann::json::array({0, 32}));
  EXPECT_FALSE(j.contains("token_sequence"));
}
