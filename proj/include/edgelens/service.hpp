#pragma once

#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "edgelens/engine.hpp"
#include "edgelens/error.hpp"

namespace edgelens {

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Default data directory: $EDGELENS_DATA_DIR, else ./edgelens-data.
inline std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("EDGELENS_DATA_DIR"); env && *env) return env;
  return "edgelens-data";
}

/// HTTP API over one Engine. Artifacts and transcripts are files under the
/// data directory and are reloaded on construction:
///
///   <data>/videos/<id>/source.json    {"source": fixture id or path}
///   <data>/videos/<id>/events.jsonl   sealed event log
///   <data>/videos/<id>/keyframes.json
///   <data>/sessions/<id>.json         transcript
///
/// `dispatch` is the transport-free core; `mount` wires it into httplib.
class Service {
 public:
  Service(EngineConfig config, std::filesystem::path data_dir,
          BackendRegistry registry = BackendRegistry::with_defaults())
      : engine_(std::move(config), std::move(registry)), data_dir_(std::move(data_dir)) {
    std::filesystem::create_directories(data_dir_ / "videos");
    std::filesystem::create_directories(data_dir_ / "sessions");
    reload();
  }

  const std::filesystem::path& data_dir() const { return data_dir_; }

  HttpResponse dispatch(std::string_view method, std::string_view path, std::string_view body) {
    try {
      return route(method, split(path), body);
    } catch (const Error& e) {
      return error(http_status_for(e.code()), e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      return error(422, Errc::invalid_argument, std::string("invalid JSON body: ") + e.what());
    } catch (const std::exception& e) {
      return error(500, Errc::invalid_argument, e.what());
    }
  }

  void mount(httplib::Server& server) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      const auto r = dispatch(req.method, req.path, req.body);
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    server.Get(".*", handler);
    server.Post(".*", handler);
  }

 private:
  struct Video {
    std::string source;
    std::unique_ptr<FixtureVideo> fixture;
    std::optional<Analysis> analysis;
  };

  struct Session {
    DialogueSession dialogue;
    bool in_flight = false;
  };

  static std::vector<std::string> split(std::string_view path) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (pos <= path.size()) {
      auto slash = path.find('/', pos);
      if (slash == std::string_view::npos) slash = path.size();
      if (slash > pos) parts.emplace_back(path.substr(pos, slash - pos));
      pos = slash + 1;
    }
    return parts;
  }

  static HttpResponse json_response(int status, const nlohmann::json& j) {
    return HttpResponse{status, "application/json", j.dump()};
  }

  static HttpResponse error(int status, Errc code, const std::string& message) {
    return json_response(status, nlohmann::json{{"error", std::string(to_string(code))}, {"message", message}});
  }

  static bool safe_id(std::string_view id) {
    if (id.empty() || id.size() > 128 || id == "." || id == "..") return false;
    for (char c : id)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
    return true;
  }

  static nlohmann::json parse_body(std::string_view body) {
    auto j = nlohmann::json::parse(body.empty() ? std::string_view("{}") : body);
    if (!j.is_object()) throw Error(Errc::invalid_argument, "request body must be a JSON object");
    return j;
  }

  static std::string required_string(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) throw Error(Errc::invalid_argument, std::string("'") + key + "' must be a string");
    return it->get<std::string>();
  }

  HttpResponse route(std::string_view method, const std::vector<std::string>& p, std::string_view body) {
    const bool get = method == "GET";
    const bool post = method == "POST";
    if (p.size() == 1 && p[0] == "videos" && post) return register_video(parse_body(body));
    if (p.size() == 3 && p[0] == "videos" && p[2] == "analyze" && post) return analyze(p[1], parse_body(body));
    if (p.size() == 3 && p[0] == "videos" && p[2] == "events" && get) return events(p[1]);
    if (p.size() == 3 && p[0] == "videos" && p[2] == "keyframes" && get) return keyframes(p[1]);
    if (p.size() == 1 && p[0] == "sessions" && post) return create_session(parse_body(body));
    if (p.size() == 3 && p[0] == "sessions" && p[2] == "messages" && post) return message(p[1], parse_body(body));
    if (p.size() == 2 && p[0] == "sessions" && get) return transcript(p[1]);
    if (p.size() == 1 && p[0] == "metrics" && get) {
      std::lock_guard lock(engine_mu_);
      return json_response(200, to_json(engine_.metrics()));
    }
    throw Error(Errc::not_found, "no route for " + std::string(method) + " /" + join(p));
  }

  static std::string join(const std::vector<std::string>& p) {
    std::string out;
    for (const auto& s : p) out += (out.empty() ? "" : "/") + s;
    return out;
  }

  static nlohmann::json video_json(const std::string& id, const Video& v) {
    return nlohmann::json{{"video_id", id}, {"meta", to_json(v.fixture->meta())}, {"analyzed", v.analysis.has_value()}};
  }

  static nlohmann::json analysis_json(const std::string& id, const Analysis& a) {
    auto tally = nlohmann::json::array();
    for (const auto& s : summarize_log(a.log)) tally.push_back(to_json(s));
    return nlohmann::json{{"video_id", id},
                          {"event_count", a.log.events().size()},
                          {"tally", tally},
                          {"keyframes", to_json(a.keyframes)}};
  }

  HttpResponse register_video(const nlohmann::json& body) {
    const std::string source = required_string(body, "fixture");
    auto fixture = std::make_unique<FixtureVideo>(load_fixture(source));
    const std::string id = fixture->meta().video_id;
    if (!safe_id(id)) throw Error(Errc::invalid_argument, "video_id '" + id + "' is not a safe identifier");
    std::lock_guard lock(state_mu_);
    if (auto it = videos_.find(id); it != videos_.end()) {
      if (it->second.fixture->meta() != fixture->meta())
        throw Error(Errc::conflict, "a different video is already registered as '" + id + "'");
      return json_response(200, video_json(id, it->second));
    }
    write_file(data_dir_ / "videos" / id / "source.json", nlohmann::json{{"source", source}}.dump() + "\n");
    auto& v = videos_[id];
    v.source = source;
    v.fixture = std::move(fixture);
    return json_response(201, video_json(id, v));
  }

  Video& video_locked(const std::string& id) {
    auto it = videos_.find(id);
    if (it == videos_.end()) throw Error(Errc::not_found, "unknown video '" + id + "'");
    return it->second;
  }

  HttpResponse analyze(const std::string& id, const nlohmann::json& body) {
    auto it = body.find("vocabulary");
    if (it == body.end() || !it->is_array()) throw Error(Errc::invalid_argument, "'vocabulary' must be an array");
    std::vector<std::string> cats;
    for (const auto& c : *it) {
      if (!c.is_string()) throw Error(Errc::invalid_argument, "vocabulary entries must be strings");
      cats.push_back(c.get<std::string>());
    }
    const auto vocab = VocabularyPrompt::create(std::move(cats));

    const FixtureVideo* fixture = nullptr;
    {
      std::lock_guard lock(state_mu_);
      auto& v = video_locked(id);
      if (v.analysis || analyzing_.count(id)) throw Error(Errc::conflict, "video '" + id + "' is already analyzed");
      analyzing_.insert(id);
      fixture = v.fixture.get();
    }
    Analysis a;
    try {
      std::lock_guard lock(engine_mu_);
      engine_.begin_run();
      a = engine_.analyze(*fixture, vocab);
    } catch (...) {
      std::lock_guard lock(state_mu_);
      analyzing_.erase(id);
      throw;
    }
    const auto dir = data_dir_ / "videos" / id;
    write_file(dir / "events.jsonl", serialize_log(a.log));
    write_file(dir / "keyframes.json", to_json(a.keyframes).dump() + "\n");
    std::lock_guard lock(state_mu_);
    analyzing_.erase(id);
    auto& v = video_locked(id);
    v.analysis = std::move(a);
    return json_response(200, analysis_json(id, *v.analysis));
  }

  const Analysis& analysis_locked(const std::string& id) {
    auto& v = video_locked(id);
    if (!v.analysis) throw Error(Errc::not_found, "video '" + id + "' has not been analyzed");
    return *v.analysis;
  }

  HttpResponse events(const std::string& id) {
    std::lock_guard lock(state_mu_);
    return HttpResponse{200, "application/x-ndjson", serialize_log(analysis_locked(id).log)};
  }

  HttpResponse keyframes(const std::string& id) {
    std::lock_guard lock(state_mu_);
    return json_response(200, to_json(analysis_locked(id).keyframes));
  }

  HttpResponse create_session(const nlohmann::json& body) {
    const std::string video_id = required_string(body, "video_id");
    std::lock_guard lock(state_mu_);
    auto& v = video_locked(video_id);
    if (!v.analysis) throw Error(Errc::conflict, "video '" + video_id + "' must be analyzed first");
    std::string id;
    do id = "session-" + std::to_string(++session_counter_);
    while (sessions_.count(id));
    auto& s = sessions_[id];
    s.dialogue = engine_.open_session(id, v.analysis->log, v.analysis->keyframes);
    persist_session_locked(s.dialogue);
    return json_response(201, transcript_json(s.dialogue));
  }

  HttpResponse message(const std::string& id, const nlohmann::json& body) {
    const std::string text = required_string(body, "text");
    DialogueSession working;
    const FixtureVideo* fixture = nullptr;
    KeyframeSet kf;
    {
      std::lock_guard lock(state_mu_);
      auto it = sessions_.find(id);
      if (it == sessions_.end()) throw Error(Errc::not_found, "unknown session '" + id + "'");
      if (it->second.in_flight) throw Error(Errc::conflict, "session '" + id + "' already has a message in flight");
      it->second.in_flight = true;
      working = it->second.dialogue;
      auto& v = video_locked(working.video_id);
      fixture = v.fixture.get();
      kf = v.analysis->keyframes;
    }
    AskResult r;
    try {
      std::lock_guard lock(engine_mu_);
      r = engine_.ask(working, text, *fixture, kf);
    } catch (...) {
      std::lock_guard lock(state_mu_);
      sessions_[id].in_flight = false;
      throw;
    }
    std::lock_guard lock(state_mu_);
    auto& s = sessions_[id];
    s.dialogue = std::move(working);
    s.in_flight = false;
    persist_session_locked(s.dialogue);
    return json_response(200, to_json(r.reply));
  }

  HttpResponse transcript(const std::string& id) {
    std::lock_guard lock(state_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(Errc::not_found, "unknown session '" + id + "'");
    return json_response(200, transcript_json(it->second.dialogue));
  }

  void persist_session_locked(const DialogueSession& s) {
    write_file(data_dir_ / "sessions" / (s.session_id + ".json"), transcript_json(s).dump() + "\n");
  }

  void reload() {
    namespace fs = std::filesystem;
    for (const auto& entry : fs::directory_iterator(data_dir_ / "videos")) {
      if (!entry.is_directory() || !fs::exists(entry.path() / "source.json")) continue;
      const std::string id = entry.path().filename().string();
      Video v;
      v.source = nlohmann::json::parse(read_file(entry.path() / "source.json")).at("source").get<std::string>();
      v.fixture = std::make_unique<FixtureVideo>(load_fixture(v.source));
      if (v.fixture->meta().video_id != id) continue;
      if (fs::exists(entry.path() / "events.jsonl") && fs::exists(entry.path() / "keyframes.json")) {
        Analysis a;
        a.log = parse_log(read_file(entry.path() / "events.jsonl"));
        a.keyframes = read_keyframes(entry.path() / "keyframes.json");
        v.analysis = std::move(a);
      }
      videos_.emplace(id, std::move(v));
    }
    for (const auto& entry : fs::directory_iterator(data_dir_ / "sessions")) {
      if (entry.path().extension() != ".json") continue;
      const auto j = nlohmann::json::parse(read_file(entry.path()));
      const std::string id = j.at("session_id").get<std::string>();
      const std::string video_id = j.at("video_id").get<std::string>();
      auto vit = videos_.find(video_id);
      if (vit == videos_.end() || !vit->second.analysis) continue;
      DialogueSession d = engine_.open_session(id, vit->second.analysis->log, vit->second.analysis->keyframes);
      for (auto& t : turns_from_json(j)) d.append(std::move(t));
      sessions_[id].dialogue = std::move(d);
    }
  }

  Engine engine_;
  std::filesystem::path data_dir_;
  std::mutex engine_mu_;
  std::mutex state_mu_;
  std::map<std::string, Video> videos_;
  std::set<std::string> analyzing_;
  std::map<std::string, Session> sessions_;
  std::size_t session_counter_ = 0;
};

/// Blocks serving the API on host:port.
inline bool serve(Service& service, const std::string& host, int port) {
  httplib::Server server;
  service.mount(server);
  return server.listen(host, port);
}

}  // namespace edgelens
