#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "support.hpp"

using namespace edgelens;
using edgelens::testing::errc_of;

namespace {

struct DeploymentFixture {
  ModelScheduler sched{17000};
  HandleId a = sched.register_model({"blip2", 14680});
  HandleId b = sched.register_model({"yolo-world", 970});
  HandleId c = sched.register_model({"extra", 2000});
};

}  // namespace

TEST(Scheduler, DeploymentFootprints) {
  DeploymentFixture f;
  f.sched.load(f.a);
  f.sched.load(f.b);
  EXPECT_EQ(f.sched.budget().resident_mb, 15650u);
  EXPECT_EQ(f.sched.budget().peak_mb, 15650u);
  EXPECT_EQ(errc_of([&] { f.sched.load(f.c); }), Errc::budget_exceeded);
  EXPECT_EQ(f.sched.budget().resident_mb, 15650u);
  EXPECT_EQ(f.sched.handle(f.c).state, ModelState::unloaded);
}

TEST(Scheduler, ReleaseKeepsPeak) {
  DeploymentFixture f;
  f.sched.load(f.a);
  f.sched.load(f.b);
  f.sched.release(f.b);
  EXPECT_EQ(f.sched.budget().resident_mb, 14680u);
  EXPECT_EQ(f.sched.budget().peak_mb, 15650u);
  f.sched.load(f.c);
  EXPECT_EQ(f.sched.budget().resident_mb, 16680u);
  EXPECT_EQ(f.sched.budget().peak_mb, 16680u);
}

TEST(Scheduler, IllegalTransitions) {
  DeploymentFixture f;
  EXPECT_EQ(errc_of([&] { f.sched.release(f.a); }), Errc::illegal_transition);
  f.sched.load(f.a);
  EXPECT_EQ(errc_of([&] { f.sched.load(f.a); }), Errc::illegal_transition);
  f.sched.release(f.a);
  EXPECT_EQ(errc_of([&] { f.sched.load(f.a); }), Errc::illegal_transition);
  EXPECT_EQ(errc_of([&] { f.sched.release(f.a); }), Errc::illegal_transition);
  f.sched.begin_run();
  EXPECT_NO_THROW(f.sched.load(f.a));
  EXPECT_EQ(errc_of([&] { f.sched.load(99); }), Errc::not_found);
}

TEST(Scheduler, LoaderFailureRollsBack) {
  DeploymentFixture f;
  EXPECT_THROW(f.sched.load(f.a, [] { throw Error(Errc::backend_unavailable, "boom"); }), Error);
  EXPECT_EQ(f.sched.handle(f.a).state, ModelState::unloaded);
  EXPECT_EQ(f.sched.budget().resident_mb, 0u);
  EXPECT_EQ(f.sched.budget().peak_mb, 0u);
  EXPECT_TRUE(f.sched.trace().empty());
}

TEST(Scheduler, TraceRecordsResidency) {
  DeploymentFixture f;
  f.sched.load(f.b);
  f.sched.release(f.b);
  f.sched.load(f.a);
  f.sched.record(TraceKind::generate, "blip2");
  const auto t = f.sched.trace();
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[0].kind, TraceKind::load);
  EXPECT_EQ(t[1].kind, TraceKind::release);
  EXPECT_EQ(t[1].resident_mb, 0u);
  EXPECT_EQ(t[3].kind, TraceKind::generate);
  EXPECT_EQ(t[3].resident_mb, 14680u);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i].seq, i);
}

TEST(Scheduler, RandomLegalSequencesStayWithinCapacity) {
  std::mt19937_64 rng(17);
  for (int run = 0; run < 300; ++run) {
    const std::uint64_t cap = 1000 + rng() % 20000;
    ModelScheduler sched(cap);
    std::vector<std::uint64_t> fp;
    for (int i = 0; i < 6; ++i) fp.push_back(1 + rng() % (cap / 2));
    std::vector<HandleId> ids;
    for (int i = 0; i < 6; ++i) ids.push_back(sched.register_model({"m" + std::to_string(i), fp[i]}));
    std::uint64_t max_seen = 0;
    for (int step = 0; step < 60; ++step) {
      const auto id = ids[rng() % ids.size()];
      const auto st = sched.handle(id).state;
      if (rng() % 10 == 0) sched.begin_run();
      else if (st == ModelState::unloaded) {
        const bool fits = sched.budget().resident_mb + fp[id] <= cap;
        const auto err = errc_of([&] { sched.load(id); });
        EXPECT_EQ(err.has_value(), !fits);
        if (err) EXPECT_EQ(*err, Errc::budget_exceeded);
      } else if (st == ModelState::loaded) {
        sched.release(id);
      }
      const auto b = sched.budget();
      EXPECT_LE(b.resident_mb, cap);
      EXPECT_EQ(b.resident_mb, sched.recount_resident());
      max_seen = std::max(max_seen, b.resident_mb);
    }
    EXPECT_LE(sched.budget().peak_mb, max_seen);
  }
}

TEST(Scheduler, ConcurrentLoadsNeverOvercommit) {
  ModelScheduler sched(1000);
  std::vector<HandleId> ids;
  for (int i = 0; i < 16; ++i) ids.push_back(sched.register_model({"m" + std::to_string(i), 300}));
  std::vector<std::thread> threads;
  std::atomic<int> loaded{0};
  for (auto id : ids)
    threads.emplace_back([&, id] {
      if (!errc_of([&] { sched.load(id); })) ++loaded;
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(loaded.load(), 3);
  EXPECT_EQ(sched.budget().resident_mb, 900u);
}

TEST(RecordGeneration, Examples) {
  EXPECT_NEAR(record_generation({}, 2912, 100.0).generation_speed_tok_per_s, 29.12, 1e-12);
  EXPECT_EQ(record_generation({}, 0, 10.0).generation_speed_tok_per_s, 0.0);
  EXPECT_EQ(errc_of([] { record_generation({}, 5, 0.0); }), Errc::zero_duration);
  EXPECT_EQ(errc_of([] { record_generation({}, 5, -1.0); }), Errc::zero_duration);
  const auto two = record_generation(record_generation({}, 10, 1.0), 30, 3.0);
  EXPECT_EQ(two.tokens_emitted, 40u);
  EXPECT_DOUBLE_EQ(two.generation_speed_tok_per_s, 10.0);
}

TEST(AblationRow, FlagsAndJson) {
  RunMetrics m;
  m.load_s = {{"a", 1.5}, {"b", 0.5}};
  m.resident_mem_mb = 15630;
  m.peak_mem_mb = 15930;
  m = record_generation(m, 1904, 100.0);
  const auto full = emit_ablation_row(m, "full", {true, true, true});
  EXPECT_DOUBLE_EQ(full.load_s, 2.0);
  EXPECT_DOUBLE_EQ(full.mem_gb, 15.63);
  EXPECT_DOUBLE_EQ(full.gpu_gb, 15.93);
  const auto base = emit_ablation_row(m, "base", {});
  const auto j = nlohmann::json::parse(to_json(std::vector<AblationRow>{full, base}).dump());
  ASSERT_TRUE(j.is_array());
  EXPECT_EQ(j[0]["det"], true);
  EXPECT_EQ(j[1]["det"], false);
  EXPECT_EQ(j[1]["seg"], false);
  EXPECT_EQ(j[1]["video"], false);
  for (const char* key : {"variant", "det", "seg", "video", "load_s", "speed_tok_s", "mem_gb", "gpu_gb"})
    EXPECT_TRUE(j[0].contains(key)) << key;
}

TEST(AblationTable, Layout) {
  const auto text = format_ablation_table({emit_ablation_row({}, "base", {}), emit_ablation_row({}, "full", {true, true, true})});
  EXPECT_EQ(text.rfind("Model Variant  Det.  Seg.  Video  Load (s)", 0), 0u);
  EXPECT_NE(text.find("base           \xE2\x9C\x97     \xE2\x9C\x97     \xE2\x9C\x97"), std::string::npos);
  EXPECT_NE(text.find("full           \xE2\x9C\x93     \xE2\x9C\x93     \xE2\x9C\x93"), std::string::npos);
}
