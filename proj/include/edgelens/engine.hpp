#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "edgelens/error.hpp"
#include "edgelens/event_model.hpp"
#include "edgelens/fixtures.hpp"
#include "edgelens/fusion.hpp"
#include "edgelens/keyframe_sampler.hpp"
#include "edgelens/perception.hpp"
#include "edgelens/prompting.hpp"
#include "edgelens/scheduler.hpp"
#include "edgelens/session.hpp"

namespace edgelens {

// ---------------------------------------------------------------------------
// Error taxonomy

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int input_not_found = 2;
inline constexpr int backend_failure = 3;
inline constexpr int config_invalid = 4;
}  // namespace exit_code

/// CLI exit code for a library error.
inline int exit_code_for(Errc code) {
  switch (code) {
    case Errc::not_found:
    case Errc::malformed_line:
    case Errc::schema_unsupported:
    case Errc::ordering_violation:
    case Errc::unsealed_log:
      return exit_code::input_not_found;
    case Errc::backend_unavailable:
    case Errc::inference_timeout:
    case Errc::contract_violation:
    case Errc::budget_exceeded:
      return exit_code::backend_failure;
    case Errc::invalid_config:
    case Errc::invalid_vocabulary:
    case Errc::invalid_argument:
    case Errc::missing_slot:
    case Errc::invalid_template:
      return exit_code::config_invalid;
    default:
      return exit_code::failure;
  }
}

/// HTTP status for a library error.
inline int http_status_for(Errc code) {
  switch (code) {
    case Errc::not_found: return 404;
    case Errc::conflict: return 409;
    case Errc::invalid_config:
    case Errc::invalid_vocabulary:
    case Errc::invalid_argument:
    case Errc::missing_slot:
    case Errc::malformed_line:
    case Errc::schema_unsupported:
      return 422;
    case Errc::backend_unavailable:
    case Errc::inference_timeout:
    case Errc::contract_violation:
    case Errc::budget_exceeded:
      return 503;
    default:
      return 500;
  }
}

// ---------------------------------------------------------------------------
// Configuration

struct BackendSelection {
  std::string perception = "mock-segmenter";
  std::string embedder = "mock-qformer";
  std::string language = "mock";
};

struct EngineConfig {
  SamplerConfig sampler;
  ContextBudget budget;
  std::uint64_t memory_capacity_mb = 17000;
  BackendSelection backends;
  std::size_t worker_count = 1;
  std::optional<std::string> templates_dir;
  std::string remote_perception_url;
  double remote_timeout_s = 30.0;

  void validate_values() const {
    sampler.validate();
    budget.validate();
    if (memory_capacity_mb == 0) throw Error(Errc::invalid_config, "memory_capacity_mb must be positive");
    if (worker_count == 0) throw Error(Errc::invalid_config, "worker_count must be at least 1");
    if (!(remote_timeout_s > 0.0)) throw Error(Errc::invalid_config, "remote_timeout_s must be positive");
  }

  static EngineConfig from_json(const nlohmann::json& j) {
    EngineConfig c;
    try {
      if (!j.is_object()) throw Error(Errc::invalid_config, "config must be a JSON object");
      static const std::vector<std::string> kKeys{"sampler",      "budget",        "memory_capacity_mb",
                                                  "backends",     "worker_count",  "templates_dir",
                                                  "remote_perception_url", "remote_timeout_s"};
      auto known = [](const nlohmann::json& obj, const std::vector<std::string>& keys, const std::string& prefix) {
        if (!obj.is_object()) throw Error(Errc::invalid_config, "'" + prefix + "' must be a JSON object");
        for (const auto& [key, _] : obj.items())
          if (std::find(keys.begin(), keys.end(), key) == keys.end())
            throw Error(Errc::invalid_config, "unknown config key '" + prefix + key + "'");
      };
      known(j, kKeys, "");
      if (j.contains("sampler"))
        known(j.at("sampler"),
              {"dense_rate_fps", "min_dense_frames", "segment_seconds", "k_min", "k_max", "kmeans_max_iters",
               "kmeans_tol", "kmeans_restarts", "seed"},
              "sampler.");
      if (j.contains("budget")) known(j.at("budget"), {"max_context_chars", "compaction"}, "budget.");
      if (j.contains("backends")) known(j.at("backends"), {"perception", "embedder", "language"}, "backends.");
      if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        c.sampler.dense_rate_fps = s.value("dense_rate_fps", c.sampler.dense_rate_fps);
        c.sampler.min_dense_frames = s.value("min_dense_frames", c.sampler.min_dense_frames);
        c.sampler.segment_seconds = s.value("segment_seconds", c.sampler.segment_seconds);
        c.sampler.k_min = s.value("k_min", c.sampler.k_min);
        c.sampler.k_max = s.value("k_max", c.sampler.k_max);
        c.sampler.kmeans_max_iters = s.value("kmeans_max_iters", c.sampler.kmeans_max_iters);
        c.sampler.kmeans_tol = s.value("kmeans_tol", c.sampler.kmeans_tol);
        c.sampler.kmeans_restarts = s.value("kmeans_restarts", c.sampler.kmeans_restarts);
        c.sampler.seed = s.value("seed", c.sampler.seed);
      }
      if (j.contains("budget")) {
        const auto& b = j.at("budget");
        c.budget.max_context_chars = b.value("max_context_chars", c.budget.max_context_chars);
        if (b.contains("compaction")) {
          auto comp = parse_compaction(b.at("compaction").get<std::string>());
          if (!comp) throw Error(Errc::invalid_config, "unknown compaction level");
          c.budget.compaction = *comp;
        }
      }
      c.memory_capacity_mb = j.value("memory_capacity_mb", c.memory_capacity_mb);
      if (j.contains("backends")) {
        const auto& b = j.at("backends");
        c.backends.perception = b.value("perception", c.backends.perception);
        c.backends.embedder = b.value("embedder", c.backends.embedder);
        c.backends.language = b.value("language", c.backends.language);
      }
      if (j.contains("worker_count")) {
        const auto& w = j.at("worker_count");
        if (!w.is_number_integer() || w.get<long long>() < 1)
          throw Error(Errc::invalid_config, "worker_count must be an integer >= 1");
        c.worker_count = w.get<std::size_t>();
      }
      if (j.contains("templates_dir")) c.templates_dir = j.at("templates_dir").get<std::string>();
      c.remote_perception_url = j.value("remote_perception_url", c.remote_perception_url);
      c.remote_timeout_s = j.value("remote_timeout_s", c.remote_timeout_s);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::invalid_config, std::string("config: ") + e.what());
    }
    c.validate_values();
    return c;
  }

  static EngineConfig load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::not_found, "config file " + path.string() + " not found");
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::invalid_config, path.string() + ": " + e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// Backend registry

/// Named backend factories. Factories receive the video being processed so
/// mock backends can serve its fixture tables.
class BackendRegistry {
 public:
  using PerceptionFactory =
      std::function<std::unique_ptr<PerceptionBackend>(const FixtureVideo&, const EngineConfig&)>;
  using VisualFactory = std::function<std::unique_ptr<VisualBackend>(const FixtureVideo&, const EngineConfig&)>;
  using LanguageFactory = std::function<std::unique_ptr<LanguageBackend>(const EngineConfig&)>;

  struct PerceptionEntry {
    PerceptionBackendDescriptor descriptor;
    PerceptionFactory make;
  };
  struct VisualEntry {
    VisualBackendDescriptor descriptor;
    VisualFactory make;
  };
  struct LanguageEntry {
    LanguageBackendDescriptor descriptor;
    LanguageFactory make;
  };

  /// Mock backends with the footprints (MB) of a frozen language model
  /// (14680), a detector or segmenter (970) and a visual encoder with its
  /// query transformer (330).
  static BackendRegistry with_defaults() {
    BackendRegistry r;
    for (auto cap : {PerceptionCapability::detect, PerceptionCapability::segment}) {
      PerceptionBackendDescriptor d{cap == PerceptionCapability::detect ? "mock-detector" : "mock-segmenter", cap, 970};
      r.add_perception(d, [d](const FixtureVideo& v, const EngineConfig&) {
        return std::make_unique<MockPerceptionBackend>(d, v.detection_table());
      });
    }
    VisualBackendDescriptor vd{"mock-qformer", 330, kDefaultQueryCount, kMockTokenDim};
    r.add_visual(vd, [vd](const FixtureVideo& v, const EngineConfig& cfg) {
      return std::make_unique<MockVisualBackend>(vd, v.meta().video_id, v.scene_function(), v.token_noise(),
                                                 cfg.sampler.seed);
    });
    for (bool leak : {false, true}) {
      LanguageBackendDescriptor ld{leak ? "mock-verbose" : "mock", 14680};
      r.add_language(ld, [ld, leak](const EngineConfig&) { return std::make_unique<MockLanguageBackend>(ld, leak); });
    }
    return r;
  }

  void add_perception(PerceptionBackendDescriptor d, PerceptionFactory f) {
    const auto name = d.name;
    perception_[name] = PerceptionEntry{std::move(d), std::move(f)};
  }
  void add_visual(VisualBackendDescriptor d, VisualFactory f) {
    const auto name = d.name;
    visual_[name] = VisualEntry{std::move(d), std::move(f)};
  }
  void add_language(LanguageBackendDescriptor d, LanguageFactory f) {
    const auto name = d.name;
    language_[name] = LanguageEntry{std::move(d), std::move(f)};
  }

  const PerceptionEntry& perception(const std::string& name) const { return lookup(perception_, name, "perception"); }
  const VisualEntry& visual(const std::string& name) const { return lookup(visual_, name, "embedder"); }
  const LanguageEntry& language(const std::string& name) const { return lookup(language_, name, "language"); }

  void validate(const EngineConfig& cfg) const {
    cfg.validate_values();
    perception(cfg.backends.perception);
    visual(cfg.backends.embedder);
    language(cfg.backends.language);
  }

 private:
  template <typename Map>
  static const typename Map::mapped_type& lookup(const Map& m, const std::string& name, const char* kind) {
    auto it = m.find(name);
    if (it == m.end()) throw Error(Errc::invalid_config, std::string("unknown ") + kind + " backend '" + name + "'");
    return it->second;
  }

  std::map<std::string, PerceptionEntry> perception_;
  std::map<std::string, VisualEntry> visual_;
  std::map<std::string, LanguageEntry> language_;
};

// ---------------------------------------------------------------------------
// Engine

struct Analysis {
  EventLog log;
  KeyframeSet keyframes;
  KPlan plan;
};

/// Drives one video through perception, keyframe sampling, fusion and
/// dialogue while the scheduler accounts for every model it touches.
///
/// Phase order per run: the perception backend is loaded, runs over every
/// frame, and is released as soon as the log is sealed; the visual backend is
/// loaded for sampling and stays resident for fusion; the language backend
/// is loaded on the first question.
class Engine {
 public:
  explicit Engine(EngineConfig config, BackendRegistry registry = BackendRegistry::with_defaults())
      : config_(std::move(config)), registry_(std::move(registry)), scheduler_(config_.memory_capacity_mb) {
    registry_.validate(config_);
    templates_ = config_.templates_dir ? load_templates(*config_.templates_dir) : builtin_templates();
  }

  const EngineConfig& config() const { return config_; }
  const ModelScheduler& scheduler() const { return scheduler_; }
  const TemplateSet& templates() const { return templates_; }

  RunMetrics metrics() const {
    RunMetrics m = metrics_;
    const auto b = scheduler_.budget();
    m.resident_mem_mb = b.resident_mb;
    m.peak_mem_mb = b.peak_mb;
    for (const auto& h : scheduler_.handles())
      if (h.state == ModelState::loaded || h.state == ModelState::released)
        m.load_s[h.descriptor.name] = h.load_duration_s;
    return m;
  }

  /// Resets per-run accounting. Resident models stay resident.
  void begin_run() {
    scheduler_.begin_run();
    metrics_ = RunMetrics{};
  }

  /// Perception over every frame, then keyframe sampling.
  Analysis analyze(const FixtureVideo& video, const VocabularyPrompt& vocab) {
    Analysis a;
    a.log = perceive(video, vocab, config_.backends.perception);
    auto sampling = sample(video);
    a.keyframes = std::move(sampling.keyframes);
    a.plan = sampling.plan;
    return a;
  }

  EventLog perceive(const FixtureVideo& video, const VocabularyPrompt& vocab, const std::string& backend_name) {
    const auto& entry = registry_.perception(backend_name);
    auto backend = entry.make(video, config_);
    const HandleId id = handle_for(entry.descriptor.name, entry.descriptor.model_footprint_mb);
    scheduler_.load(id);
    std::vector<std::size_t> all(video.meta().frame_count);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return build_event_log(*backend, all, video.frame_provider(), vocab, video.meta(),
                           PerceptionOptions{config_.worker_count}, [&] { scheduler_.release(id); });
  }

  SamplingResult sample(const FixtureVideo& video) {
    VisualBackend& visual = ensure_visual(video);
    PooledTokenEmbedder embedder(visual, video.frame_provider());
    return sample_keyframes_detailed(video.meta(), config_.sampler, embedder, config_.worker_count);
  }

  VideoRepresentation represent(const FixtureVideo& video, const KeyframeSet& keyframes) {
    return represent_video(ensure_visual(video), keyframes, video.frame_provider());
  }

  DialogueSession open_session(std::string session_id, const EventLog& log, const KeyframeSet& keyframes) const {
    return edgelens::open_session(std::move(session_id), log, keyframes, config_.budget);
  }

  /// One dialogue turn with metering: a generate event is traced and the
  /// emitted tokens count toward generation speed.
  AskResult ask(DialogueSession& session, std::string_view text, const FixtureVideo& video,
                const KeyframeSet& keyframes) {
    const VideoRepresentation rep = represent(video, keyframes);
    LanguageBackend& lm = ensure_language();
    Metered metered(lm, scheduler_, metrics_);
    return edgelens::ask(session, text, metered, templates_, &rep);
  }

 private:
  class Metered final : public LanguageBackend {
   public:
    Metered(LanguageBackend& inner, ModelScheduler& sched, RunMetrics& metrics)
        : inner_(inner), sched_(sched), metrics_(metrics) {}
    const LanguageBackendDescriptor& descriptor() const override { return inner_.descriptor(); }
    bool available() const override { return inner_.available(); }
    std::string generate(const std::string& prompt, const VideoRepresentation* video) override {
      sched_.record(TraceKind::generate, inner_.descriptor().name);
      const auto start = std::chrono::steady_clock::now();
      std::string out = inner_.generate(prompt, video);
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      // Clock granularity can report zero for the mock.
      metrics_ = record_generation(metrics_, count_tokens(out), std::max(wall, 1e-9));
      return out;
    }

   private:
    LanguageBackend& inner_;
    ModelScheduler& sched_;
    RunMetrics& metrics_;
  };

  HandleId handle_for(const std::string& name, std::uint64_t footprint_mb) {
    auto it = handles_.find(name);
    if (it != handles_.end()) return it->second;
    const HandleId id = scheduler_.register_model(ModelDescriptor{name, footprint_mb});
    handles_.emplace(name, id);
    return id;
  }

  VisualBackend& ensure_visual(const FixtureVideo& video) {
    const auto& entry = registry_.visual(config_.backends.embedder);
    if (!visual_ || visual_video_ != video.meta()) {
      visual_ = entry.make(video, config_);
      visual_video_ = video.meta();
    }
    const HandleId id = handle_for(entry.descriptor.name, entry.descriptor.model_footprint_mb);
    if (!scheduler_.is_loaded(id)) scheduler_.load(id);
    return *visual_;
  }

  LanguageBackend& ensure_language() {
    const auto& entry = registry_.language(config_.backends.language);
    if (!language_) language_ = entry.make(config_);
    const HandleId id = handle_for(entry.descriptor.name, entry.descriptor.model_footprint_mb);
    if (!scheduler_.is_loaded(id)) scheduler_.load(id);
    return *language_;
  }

  EngineConfig config_;
  BackendRegistry registry_;
  ModelScheduler scheduler_;
  TemplateSet templates_;
  RunMetrics metrics_;
  std::map<std::string, HandleId> handles_;
  std::unique_ptr<VisualBackend> visual_;
  VideoMeta visual_video_;
  std::unique_ptr<LanguageBackend> language_;
};

// ---------------------------------------------------------------------------
// Ablation bench

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> kVariants{"base", "+detect", "+cluster", "full"};
  return kVariants;
}

inline const std::vector<std::string>& bench_questions() {
  static const std::vector<std::string> kQuestions{"Summarize the video", "Is there a car?",
                                                   "What happens in the video?"};
  return kQuestions;
}

/// Runs one ablation variant on a fresh engine:
///   base      language model on a single frame, no event log
///   +detect   adds perception (segment-capable backend), still one frame
///   +cluster  adds keyframe sampling and fusion, no perception
///   full      perception + keyframe sampling
/// Capability flags record what actually ran.
inline AblationRow run_ablation_variant(const EngineConfig& base_config, const std::string& variant,
                                        const FixtureVideo& video, const VocabularyPrompt& vocab,
                                        const BackendRegistry& registry = BackendRegistry::with_defaults()) {
  const auto& names = ablation_variants();
  if (std::find(names.begin(), names.end(), variant) == names.end())
    throw Error(Errc::invalid_config, "unknown bench variant '" + variant + "'");
  const bool detect = variant == "+detect" || variant == "full";
  const bool cluster = variant == "+cluster" || variant == "full";

  Engine engine(base_config, registry);
  engine.begin_run();
  Capabilities caps;

  EventLog log(video.meta());
  log.seal();
  if (detect) {
    log = engine.perceive(video, vocab, base_config.backends.perception);
    caps.det = true;
    caps.seg = registry.perception(base_config.backends.perception).descriptor.capability ==
               PerceptionCapability::segment;
  }

  KeyframeSet keyframes{{Keyframe{0, 0.0, 0}}, 1};
  if (cluster) {
    keyframes = engine.sample(video).keyframes;
    caps.video = true;
  }

  DialogueSession session = engine.open_session("bench-" + variant, log, keyframes);
  for (const auto& q : bench_questions()) engine.ask(session, q, video, keyframes);
  return emit_ablation_row(engine.metrics(), variant, caps);
}

inline std::vector<AblationRow> run_bench(const EngineConfig& config, std::span<const std::string> variants,
                                          const FixtureVideo& video, const VocabularyPrompt& vocab,
                                          const BackendRegistry& registry = BackendRegistry::with_defaults()) {
  for (const auto& v : variants) {
    const auto& names = ablation_variants();
    if (std::find(names.begin(), names.end(), v) == names.end())
      throw Error(Errc::invalid_config, "unknown bench variant '" + v + "'");
  }
  std::vector<AblationRow> rows;
  for (const auto& v : variants) rows.push_back(run_ablation_variant(config, v, video, vocab, registry));
  return rows;
}

// ---------------------------------------------------------------------------
// Artifact files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::not_found, path.string() + " not found");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::invalid_argument, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline KeyframeSet read_keyframes(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return keyframes_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::malformed_line, path.string() + ": " + e.what());
  }
}

/// The fixture behind an analyzed video when it is bundled and matches the
/// log's metadata; otherwise a blank stand-in with the same metadata.
inline FixtureVideo resolve_video(const VideoMeta& meta) {
  if (bundled_fixtures().count(meta.video_id)) {
    FixtureVideo v = load_fixture(meta.video_id);
    if (v.meta() == meta) return v;
  }
  return FixtureVideo::blank(meta);
}

}  // namespace edgelens
