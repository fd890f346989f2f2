#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "edgelens/error.hpp"
#include "edgelens/event_model.hpp"

namespace edgelens {

/// Row-major RGB frame.
struct Frame {
  std::size_t frame_index = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> pixels;

  static Frame make(std::size_t frame_index, std::uint32_t width, std::uint32_t height,
                    std::vector<std::uint8_t> pixels) {
    if (pixels.size() != static_cast<std::size_t>(width) * height * 3)
      throw Error(Errc::invalid_argument, "pixel buffer length must equal width * height * 3");
    return Frame{frame_index, width, height, std::move(pixels)};
  }

  static Frame blank(std::size_t frame_index, std::uint32_t width, std::uint32_t height) {
    return Frame{frame_index, width, height,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3, 0)};
  }
};

/// Binary PPM (P6, maxval 255).
inline std::string write_ppm(const Frame& f) {
  std::string out = "P6\n" + std::to_string(f.width) + " " + std::to_string(f.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(f.pixels.data()), f.pixels.size());
  return out;
}

inline Frame read_ppm(std::string_view bytes, std::size_t frame_index = 0) {
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  if (next_token() != "P6") throw Error(Errc::invalid_argument, "not a binary PPM (P6)");
  std::uint32_t w = 0, h = 0, maxval = 0;
  try {
    w = static_cast<std::uint32_t>(std::stoul(next_token()));
    h = static_cast<std::uint32_t>(std::stoul(next_token()));
    maxval = static_cast<std::uint32_t>(std::stoul(next_token()));
  } catch (const std::exception&) {
    throw Error(Errc::invalid_argument, "malformed PPM header");
  }
  if (maxval != 255) throw Error(Errc::invalid_argument, "only maxval 255 is supported");
  ++pos;  // single whitespace byte before raster
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < pos + need) throw Error(Errc::invalid_argument, "truncated PPM raster");
  std::vector<std::uint8_t> px(need);
  std::copy_n(reinterpret_cast<const std::uint8_t*>(bytes.data() + pos), need, px.begin());
  return Frame::make(frame_index, w, h, std::move(px));
}

inline std::string casefold(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// User-supplied open-vocabulary class names.
class VocabularyPrompt {
 public:
  static VocabularyPrompt create(std::vector<std::string> categories) {
    if (categories.empty()) throw Error(Errc::invalid_vocabulary, "vocabulary must not be empty");
    std::set<std::string> seen;
    for (const auto& c : categories) {
      if (c.empty()) throw Error(Errc::invalid_vocabulary, "vocabulary contains an empty category");
      if (!seen.insert(casefold(c)).second)
        throw Error(Errc::invalid_vocabulary, "duplicate category '" + c + "'");
    }
    VocabularyPrompt v;
    v.categories_ = std::move(categories);
    v.folded_ = std::move(seen);
    return v;
  }

  const std::vector<std::string>& categories() const { return categories_; }
  bool contains(std::string_view category) const { return folded_.count(casefold(category)) > 0; }

 private:
  std::vector<std::string> categories_;
  std::set<std::string> folded_;
};

enum class PerceptionCapability { detect, segment };

constexpr std::string_view to_string(PerceptionCapability c) {
  return c == PerceptionCapability::detect ? "detect" : "segment";
}

struct PerceptionBackendDescriptor {
  std::string name;
  PerceptionCapability capability = PerceptionCapability::detect;
  std::uint64_t model_footprint_mb = 0;
};

/// Detection/segmentation backend. Implementations throw edgelens::Error
/// (BackendUnavailable, InferenceTimeout) on failure.
class PerceptionBackend {
 public:
  virtual ~PerceptionBackend() = default;
  virtual const PerceptionBackendDescriptor& descriptor() const = 0;
  /// Whether infer() may be called from several threads at once.
  virtual bool concurrent_calls_ok() const { return false; }
  virtual bool available() const { return true; }
  virtual std::vector<Detection> infer(const Frame& frame, const VocabularyPrompt& vocab) = 0;
};

/// Deterministic fixture-table backend: frame_index -> detections.
class MockPerceptionBackend final : public PerceptionBackend {
 public:
  using Table = std::map<std::size_t, std::vector<Detection>>;

  MockPerceptionBackend(PerceptionBackendDescriptor descriptor, Table table)
      : descriptor_(std::move(descriptor)), table_(std::move(table)) {}

  const PerceptionBackendDescriptor& descriptor() const override { return descriptor_; }
  bool concurrent_calls_ok() const override { return true; }
  bool available() const override { return available_; }

  void set_available(bool available) { available_ = available; }
  /// Makes infer() throw `code` when it reaches `frame_index`.
  void fail_at(std::size_t frame_index, Errc code) { failures_[frame_index] = code; }
  /// Returns table rows regardless of vocabulary, to exercise the contract check.
  void set_ignore_vocabulary(bool ignore) { ignore_vocab_ = ignore; }

  std::vector<Detection> infer(const Frame& frame, const VocabularyPrompt& vocab) override {
    if (!available_) throw Error(Errc::backend_unavailable, descriptor_.name + " is not available");
    if (auto it = failures_.find(frame.frame_index); it != failures_.end())
      throw Error(it->second, "injected failure in " + descriptor_.name);
    std::vector<Detection> out;
    auto it = table_.find(frame.frame_index);
    if (it == table_.end()) return out;
    for (const auto& row : it->second) {
      if (!ignore_vocab_ && !vocab.contains(row.category)) continue;
      Detection d = row;
      if (descriptor_.capability == PerceptionCapability::segment) {
        d.source = DetectionSource::segmenter;
        d.mask = MaskRef::from_box(d.box, frame.width, frame.height);
      } else {
        d.source = DetectionSource::detector;
        d.mask.reset();
      }
      out.push_back(std::move(d));
    }
    return out;
  }

 private:
  PerceptionBackendDescriptor descriptor_;
  Table table_;
  std::map<std::size_t, Errc> failures_;
  bool available_ = true;
  bool ignore_vocab_ = false;
};

/// Runs one frame through the backend and enforces the output contract:
/// categories come from the vocabulary, boxes lie inside the frame, and
/// segment-capable backends attach masks.
inline std::vector<Detection> perceive_frame(PerceptionBackend& backend, const Frame& frame,
                                             const VocabularyPrompt& vocab) {
  const auto& desc = backend.descriptor();
  if (!backend.available())
    throw Error(Errc::backend_unavailable, desc.name + " is not loaded").at_frame(frame.frame_index);
  std::vector<Detection> dets;
  try {
    dets = backend.infer(frame, vocab);
  } catch (Error& e) {
    e.at_frame(frame.frame_index);
    throw;
  } catch (const std::exception& e) {
    throw Error(Errc::backend_unavailable, desc.name + ": " + e.what()).at_frame(frame.frame_index);
  }
  for (const auto& d : dets) {
    auto violation = [&](const std::string& why) {
      return Error(Errc::contract_violation, desc.name + ": " + why).at_frame(frame.frame_index);
    };
    if (!vocab.contains(d.category)) throw violation("category '" + d.category + "' is not in the vocabulary");
    if (desc.capability == PerceptionCapability::segment &&
        (!d.mask || d.source != DetectionSource::segmenter))
      throw violation("segmenter returned a detection without a mask");
    const VideoMeta dims{"", 1.0, 1, frame.width, frame.height, 1.0};
    if (auto why = detection_problem(d, dims); !why.empty()) throw violation(why);
  }
  return dets;
}

struct PerceptionOptions {
  std::size_t worker_count = 1;
};

/// Produces frame `frame_indices[i]` on demand; called from worker threads.
using FrameProvider = std::function<Frame(std::size_t frame_index)>;

/// Builds and seals the event log for the given frames. All-or-nothing: any
/// frame failure discards the partial log and rethrows with the frame index.
/// `on_release` fires exactly once when perception is finished, on success
/// and on failure, so the scheduler can free the backend.
inline EventLog build_event_log(PerceptionBackend& backend, std::span<const std::size_t> frame_indices,
                                const FrameProvider& frame_at, const VocabularyPrompt& vocab,
                                const VideoMeta& meta, const PerceptionOptions& opts = {},
                                const std::function<void()>& on_release = {}) {
  bool released = false;
  auto release = [&] {
    if (!released && on_release) {
      released = true;
      on_release();
    }
  };
  try {
    for (std::size_t i = 0; i < frame_indices.size(); ++i) {
      if (frame_indices[i] >= meta.frame_count)
        throw Error(Errc::frame_out_of_range, "frame beyond frame_count").at_frame(frame_indices[i]);
      if (i > 0 && frame_indices[i] <= frame_indices[i - 1])
        throw Error(Errc::out_of_order, "frames must be strictly ascending").at_frame(frame_indices[i]);
    }

    const std::size_t n = frame_indices.size();
    std::vector<std::vector<Detection>> results(n);
    std::vector<std::optional<Error>> errors(n);
    std::atomic<bool> failed{false};
    std::mutex backend_mu;
    const bool serialize = !backend.concurrent_calls_ok();

    auto work = [&](std::size_t worker, std::size_t stride) {
      for (std::size_t i = worker; i < n && !failed.load(); i += stride) {
        try {
          Frame frame = frame_at(frame_indices[i]);
          if (frame.frame_index != frame_indices[i] || frame.width != meta.width || frame.height != meta.height)
            throw Error(Errc::invalid_argument, "frame does not match video metadata");
          if (serialize) {
            std::lock_guard lock(backend_mu);
            results[i] = perceive_frame(backend, frame, vocab);
          } else {
            results[i] = perceive_frame(backend, frame, vocab);
          }
        } catch (const Error& e) {
          errors[i] = e;
          errors[i]->at_frame(frame_indices[i]);
          failed = true;
        } catch (const std::exception& e) {
          errors[i] = Error(Errc::backend_unavailable, e.what());
          errors[i]->at_frame(frame_indices[i]);
          failed = true;
        }
      }
    };

    const std::size_t workers = std::clamp<std::size_t>(opts.worker_count, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
      work(0, 1);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
      if (e) throw *e;

    EventLog log(meta);
    for (std::size_t i = 0; i < n; ++i) log.append(FrameEvent{frame_indices[i], 0.0, std::move(results[i])});
    log.seal();
    release();
    return log;
  } catch (...) {
    try {
      release();
    } catch (...) {
    }
    throw;
  }
}

/// Convenience overload over materialized frames.
inline EventLog build_event_log(PerceptionBackend& backend, std::span<const Frame> frames,
                                const VocabularyPrompt& vocab, const VideoMeta& meta,
                                const PerceptionOptions& opts = {},
                                const std::function<void()>& on_release = {}) {
  std::vector<std::size_t> indices;
  indices.reserve(frames.size());
  for (const auto& f : frames) indices.push_back(f.frame_index);
  std::size_t cursor = 0;
  std::map<std::size_t, std::size_t> position;
  for (const auto& f : frames) position.emplace(f.frame_index, cursor++);
  return build_event_log(
      backend, indices, [&](std::size_t idx) { return frames[position.at(idx)]; }, vocab, meta, opts,
      on_release);
}

}  // namespace edgelens
