#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "edgelens/error.hpp"

namespace edgelens {

struct ModelDescriptor {
  std::string name;
  std::uint64_t footprint_mb = 0;
};

enum class ModelState { unloaded, loading, loaded, released };

constexpr std::string_view to_string(ModelState s) {
  switch (s) {
    case ModelState::unloaded: return "unloaded";
    case ModelState::loading: return "loading";
    case ModelState::loaded: return "loaded";
    case ModelState::released: return "released";
  }
  return "unloaded";
}

struct ModelHandle {
  ModelDescriptor descriptor;
  ModelState state = ModelState::unloaded;
  double load_duration_s = 0.0;
};

struct MemoryBudget {
  std::uint64_t capacity_mb = 0;
  std::uint64_t resident_mb = 0;
  std::uint64_t peak_mb = 0;
};

enum class TraceKind { load, release, generate, note };

constexpr std::string_view to_string(TraceKind k) {
  switch (k) {
    case TraceKind::load: return "load";
    case TraceKind::release: return "release";
    case TraceKind::generate: return "generate";
    case TraceKind::note: return "note";
  }
  return "note";
}

struct TraceEvent {
  std::size_t seq = 0;
  TraceKind kind = TraceKind::note;
  std::string model;
  std::uint64_t resident_mb = 0;
  std::uint64_t peak_mb = 0;
};

using HandleId = std::size_t;

/// Serialized ledger of model residency under a fixed memory capacity.
///
/// Every transition happens under one mutex, loader callbacks included, so
/// transitions are totally ordered and no caller can observe a half-applied
/// change. A load that would overflow capacity fails with BudgetExceeded and
/// leaves everything untouched; eviction is the caller's decision. Loaders
/// must not call back into the scheduler.
class ModelScheduler {
 public:
  using Clock = std::chrono::steady_clock;

  explicit ModelScheduler(std::uint64_t capacity_mb) {
    if (capacity_mb == 0) throw Error(Errc::invalid_config, "memory capacity must be positive");
    budget_.capacity_mb = capacity_mb;
  }

  HandleId register_model(ModelDescriptor descriptor) {
    std::lock_guard lock(mu_);
    handles_.push_back(ModelHandle{std::move(descriptor), ModelState::unloaded, 0.0});
    return handles_.size() - 1;
  }

  /// unloaded -> loading -> loaded. On loader failure the handle returns to
  /// unloaded and its reservation is dropped.
  const ModelHandle& load(HandleId id, const std::function<void()>& loader = {}) {
    std::lock_guard lock(mu_);
    auto& h = at(id);
    if (h.state != ModelState::unloaded)
      throw Error(Errc::illegal_transition,
                  h.descriptor.name + ": load from state " + std::string(to_string(h.state)));
    if (budget_.resident_mb + h.descriptor.footprint_mb > budget_.capacity_mb)
      throw Error(Errc::budget_exceeded, h.descriptor.name + " needs " + std::to_string(h.descriptor.footprint_mb) +
                                             " MB, " + std::to_string(budget_.capacity_mb - budget_.resident_mb) +
                                             " MB free");
    h.state = ModelState::loading;
    budget_.resident_mb += h.descriptor.footprint_mb;
    const auto start = Clock::now();
    try {
      if (loader) loader();
    } catch (...) {
      budget_.resident_mb -= h.descriptor.footprint_mb;
      h.state = ModelState::unloaded;
      throw;
    }
    h.load_duration_s = std::chrono::duration<double>(Clock::now() - start).count();
    h.state = ModelState::loaded;
    budget_.peak_mb = std::max(budget_.peak_mb, budget_.resident_mb);
    record_locked(TraceKind::load, h.descriptor.name);
    return h;
  }

  /// loaded -> released. Peak is unchanged.
  const ModelHandle& release(HandleId id) {
    std::lock_guard lock(mu_);
    auto& h = at(id);
    if (h.state != ModelState::loaded)
      throw Error(Errc::illegal_transition,
                  h.descriptor.name + ": release from state " + std::string(to_string(h.state)));
    h.state = ModelState::released;
    budget_.resident_mb -= h.descriptor.footprint_mb;
    record_locked(TraceKind::release, h.descriptor.name);
    return h;
  }

  /// Starts a new run: released handles become loadable again, peak restarts
  /// from the current residency, and the trace is cleared.
  void begin_run() {
    std::lock_guard lock(mu_);
    for (auto& h : handles_)
      if (h.state == ModelState::released) h.state = ModelState::unloaded;
    budget_.peak_mb = budget_.resident_mb;
    trace_.clear();
  }

  void record(TraceKind kind, std::string model) {
    std::lock_guard lock(mu_);
    record_locked(kind, std::move(model));
  }

  ModelHandle handle(HandleId id) const {
    std::lock_guard lock(mu_);
    return handles_.at(id);
  }
  bool is_loaded(HandleId id) const {
    std::lock_guard lock(mu_);
    return handles_.at(id).state == ModelState::loaded;
  }
  MemoryBudget budget() const {
    std::lock_guard lock(mu_);
    return budget_;
  }
  std::vector<TraceEvent> trace() const {
    std::lock_guard lock(mu_);
    return trace_;
  }
  /// Sum of footprints of loaded handles, recomputed from scratch.
  std::uint64_t recount_resident() const {
    std::lock_guard lock(mu_);
    std::uint64_t sum = 0;
    for (const auto& h : handles_)
      if (h.state == ModelState::loaded) sum += h.descriptor.footprint_mb;
    return sum;
  }
  std::vector<ModelHandle> handles() const {
    std::lock_guard lock(mu_);
    return handles_;
  }

 private:
  ModelHandle& at(HandleId id) {
    if (id >= handles_.size()) throw Error(Errc::not_found, "unknown model handle " + std::to_string(id));
    return handles_[id];
  }

  void record_locked(TraceKind kind, std::string model) {
    trace_.push_back(TraceEvent{trace_.size(), kind, std::move(model), budget_.resident_mb, budget_.peak_mb});
  }

  mutable std::mutex mu_;
  MemoryBudget budget_;
  std::vector<ModelHandle> handles_;
  std::vector<TraceEvent> trace_;
};

// ---------------------------------------------------------------------------
// Metrics

struct RunMetrics {
  std::map<std::string, double> load_s;
  std::uint64_t tokens_emitted = 0;
  double generation_wall_s = 0.0;
  double generation_speed_tok_per_s = 0.0;
  std::uint64_t resident_mem_mb = 0;
  std::uint64_t peak_mem_mb = 0;

  double total_load_s() const {
    double total = 0.0;
    for (const auto& [_, s] : load_s) total += s;
    return total;
  }
};

/// Accumulates one generation; speed is total tokens over total wall time.
inline RunMetrics record_generation(RunMetrics metrics, std::uint64_t tokens, double wall_s) {
  if (!(wall_s > 0.0)) throw Error(Errc::zero_duration, "generation wall time must be positive");
  metrics.tokens_emitted += tokens;
  metrics.generation_wall_s += wall_s;
  metrics.generation_speed_tok_per_s =
      static_cast<double>(metrics.tokens_emitted) / metrics.generation_wall_s;
  return metrics;
}

inline nlohmann::json to_json(const RunMetrics& m) {
  return nlohmann::json{{"load_s", m.load_s},
                        {"tokens_emitted", m.tokens_emitted},
                        {"generation_wall_s", m.generation_wall_s},
                        {"generation_speed_tok_per_s", m.generation_speed_tok_per_s},
                        {"resident_mem_mb", m.resident_mem_mb},
                        {"peak_mem_mb", m.peak_mem_mb}};
}

struct Capabilities {
  bool det = false;
  bool seg = false;
  bool video = false;
};

struct AblationRow {
  std::string variant;
  Capabilities caps;
  double load_s = 0.0;
  double speed_tok_s = 0.0;
  double mem_gb = 0.0;
  double gpu_gb = 0.0;
};

/// mem_gb is residency at the end of the run, gpu_gb the run's peak
/// (1 GB = 1000 MB, matching the declared footprints).
inline AblationRow emit_ablation_row(const RunMetrics& m, std::string variant, Capabilities caps) {
  return AblationRow{std::move(variant),
                     caps,
                     m.total_load_s(),
                     m.generation_speed_tok_per_s,
                     static_cast<double>(m.resident_mem_mb) / 1000.0,
                     static_cast<double>(m.peak_mem_mb) / 1000.0};
}

inline nlohmann::json to_json(const AblationRow& r) {
  return nlohmann::json{{"variant", r.variant},   {"det", r.caps.det},         {"seg", r.caps.seg},
                        {"video", r.caps.video},  {"load_s", r.load_s},        {"speed_tok_s", r.speed_tok_s},
                        {"mem_gb", r.mem_gb},     {"gpu_gb", r.gpu_gb}};
}

inline nlohmann::json to_json(const std::vector<AblationRow>& rows) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) arr.push_back(to_json(r));
  return arr;
}

/// Aligned plain-text table with the ablation column layout.
inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  const char* headers[] = {"Model Variant", "Det.", "Seg.", "Video", "Load (s)", "Speed (tok./s)", "Mem. (GB)",
                           "GPU (GB)"};
  std::vector<std::vector<std::string>> cells;
  auto mark = [](bool b) { return std::string(b ? "\xE2\x9C\x93" : "\xE2\x9C\x97"); };
  auto fixed = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  for (const auto& r : rows)
    cells.push_back({r.variant, mark(r.caps.det), mark(r.caps.seg), mark(r.caps.video), fixed(r.load_s),
                     fixed(r.speed_tok_s), fixed(r.mem_gb), fixed(r.gpu_gb)});
  // Display width: check/cross marks are 3 bytes but one column.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s) w += (c & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> widths;
  for (const char* h : headers) widths.push_back(std::string_view(h).size());
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], width(row[i]));
  auto emit = [&](const std::vector<std::string>& row) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += "  ";
      line += row[i];
      if (i + 1 < row.size()) line.append(widths[i] - width(row[i]), ' ');
    }
    return line + "\n";
  };
  std::string out = emit(std::vector<std::string>(std::begin(headers), std::end(headers)));
  for (const auto& row : cells) out += emit(row);
  return out;
}

}  // namespace edgelens
