#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "edgelens/engine.hpp"
#include "edgelens/error.hpp"
#include "edgelens/event_model.hpp"
#include "edgelens/perception.hpp"

namespace edgelens {

/// Request body for one frame:
///   {"frame": {"frame_index", "width", "height", "ppm_base64"}, "vocabulary": [...]}
inline nlohmann::json remote_request(const Frame& frame, const VocabularyPrompt& vocab) {
  return nlohmann::json{{"frame",
                         {{"frame_index", frame.frame_index},
                          {"width", frame.width},
                          {"height", frame.height},
                          {"ppm_base64", httplib::detail::base64_encode(write_ppm(frame))}}},
                        {"vocabulary", vocab.categories()}};
}

/// Parses {"detections": [...]} with the event-log Detection keys.
inline std::vector<Detection> parse_remote_response(const std::string& body, const Frame& frame) {
  std::vector<Detection> out;
  try {
    const auto j = nlohmann::json::parse(body);
    const auto& arr = detail::field(j, "detections");
    if (!arr.is_array()) throw detail::LineError{"'detections' must be an array"};
    const VideoMeta dims{"", 1.0, 1, frame.width, frame.height, 1.0};
    for (const auto& d : arr) out.push_back(detail::parse_detection(d, dims));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::contract_violation, std::string("remote response: ") + e.what());
  } catch (const detail::LineError& e) {
    throw Error(Errc::contract_violation, "remote response: " + e.what);
  }
  return out;
}

/// Perception backend that POSTs each frame to `<base_url>/infer`.
class RemotePerceptionBackend final : public PerceptionBackend {
 public:
  RemotePerceptionBackend(PerceptionBackendDescriptor descriptor, std::string base_url, double timeout_s = 30.0)
      : descriptor_(std::move(descriptor)), base_url_(std::move(base_url)), timeout_s_(timeout_s) {
    if (base_url_.empty()) throw Error(Errc::invalid_config, "remote perception URL is empty");
    if (!(timeout_s_ > 0.0)) throw Error(Errc::invalid_config, "remote timeout must be positive");
  }

  const PerceptionBackendDescriptor& descriptor() const override { return descriptor_; }
  bool concurrent_calls_ok() const override { return true; }

  std::vector<Detection> infer(const Frame& frame, const VocabularyPrompt& vocab) override {
    httplib::Client client(base_url_);
    const auto timeout = std::chrono::duration<double>(timeout_s_);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    const auto res = client.Post("/infer", remote_request(frame, vocab).dump(), "application/json");
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
        throw Error(Errc::inference_timeout, descriptor_.name + ": no response within timeout");
      throw Error(Errc::backend_unavailable, descriptor_.name + ": " + httplib::to_string(err));
    }
    if (res->status != 200)
      throw Error(Errc::backend_unavailable, descriptor_.name + ": HTTP " + std::to_string(res->status));
    return parse_remote_response(res->body, frame);
  }

 private:
  PerceptionBackendDescriptor descriptor_;
  std::string base_url_;
  double timeout_s_;
};

/// Adds "remote-detector" and "remote-segmenter", which read the URL and
/// timeout from the engine config. Remote models hold no local memory.
inline void register_remote_backends(BackendRegistry& registry) {
  for (auto cap : {PerceptionCapability::detect, PerceptionCapability::segment}) {
    PerceptionBackendDescriptor d{cap == PerceptionCapability::detect ? "remote-detector" : "remote-segmenter", cap,
                                  0};
    registry.add_perception(d, [d](const FixtureVideo&, const EngineConfig& cfg) {
      return std::make_unique<RemotePerceptionBackend>(d, cfg.remote_perception_url, cfg.remote_timeout_s);
    });
  }
}

}  // namespace edgelens
