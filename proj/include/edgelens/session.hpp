#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <regex>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "edgelens/error.hpp"
#include "edgelens/event_model.hpp"
#include "edgelens/fusion.hpp"
#include "edgelens/keyframe_sampler.hpp"
#include "edgelens/prompting.hpp"

namespace edgelens {

enum class Role { user, assistant };

constexpr std::string_view to_string(Role r) { return r == Role::user ? "user" : "assistant"; }

struct Turn {
  Role role = Role::user;
  std::string text;
  std::optional<TaskKind> task;  // set on assistant turns

  bool operator==(const Turn&) const = default;
};

struct LanguageBackendDescriptor {
  std::string name;
  std::uint64_t model_footprint_mb = 0;
};

/// Frozen language model. `video` is the fused keyframe token sequence when
/// the caller has one.
class LanguageBackend {
 public:
  virtual ~LanguageBackend() = default;
  virtual const LanguageBackendDescriptor& descriptor() const = 0;
  virtual bool available() const { return true; }
  virtual std::string generate(const std::string& prompt, const VideoRepresentation* video) = 0;
};

/// Rule-based stand-in for the language model. It reads the task line, the
/// object tally and the question out of the prompt and fills sentence
/// templates, so answers are grounded in whatever context the prompt carried.
/// With `leak_details` it appends the kind of technical residue a real model
/// produces when it ignores the output constraints.
class MockLanguageBackend final : public LanguageBackend {
 public:
  explicit MockLanguageBackend(LanguageBackendDescriptor descriptor, bool leak_details = false)
      : descriptor_(std::move(descriptor)), leak_details_(leak_details) {}

  const LanguageBackendDescriptor& descriptor() const override { return descriptor_; }
  bool available() const override { return available_; }
  void set_available(bool available) { available_ = available; }

  std::string generate(const std::string& prompt, const VideoRepresentation* video) override {
    (void)video;
    if (!available_) throw Error(Errc::backend_unavailable, descriptor_.name + " is not loaded");
    const Parsed p = parse(prompt);
    std::string answer;
    switch (p.task) {
      case TaskKind::summarize: answer = summarize(p); break;
      case TaskKind::detect_describe: answer = describe(p, false); break;
      case TaskKind::segment_describe: answer = describe(p, true); break;
      case TaskKind::vqa: answer = answer_question(p); break;
    }
    if (leak_details_ && !p.tally.empty())
      answer += " at (12, 40, 200, 150) with 0.87 confidence in frame " + std::to_string(p.first_frame);
    return answer;
  }

 private:
  struct Seen {
    std::string category;
    std::size_t count = 0;
    std::string from;
    std::string to;
  };
  struct Parsed {
    TaskKind task = TaskKind::vqa;
    std::vector<Seen> tally;
    std::string question;
    std::size_t first_frame = 0;
  };

  static Parsed parse(const std::string& prompt) {
    static const std::regex tally_line(R"(^(.+) \xC3\x97(\d+) \(([0-9.]+)s-([0-9.]+)s\)$)");
    static const std::regex frame_ref(R"(\(frame (\d+)\))");
    Parsed p;
    bool in_tally = false;
    bool first_frame_seen = false;
    std::istringstream in(prompt);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("Task: ", 0) == 0) {
        if (line.find("summarization") != std::string::npos) p.task = TaskKind::summarize;
        else if (line.find("segmentation") != std::string::npos) p.task = TaskKind::segment_describe;
        else if (line.find("detection") != std::string::npos) p.task = TaskKind::detect_describe;
        else p.task = TaskKind::vqa;
      } else if (line == "Objects seen:") {
        in_tally = true;
        continue;
      } else if (line.rfind("Question: ", 0) == 0) {
        p.question = line.substr(10);
      } else if (line.rfind("User request: ", 0) == 0) {
        p.question = line.substr(14);
      }
      std::smatch m;
      if (in_tally) {
        if (std::regex_match(line, m, tally_line)) {
          p.tally.push_back(Seen{m[1].str(), std::stoul(m[2].str()), m[3].str(), m[4].str()});
          continue;
        }
        in_tally = false;
      }
      if (!first_frame_seen && std::regex_search(line, m, frame_ref)) {
        p.first_frame = std::stoul(m[1].str());
        first_frame_seen = true;
      }
    }
    return p;
  }

  static std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }

  static std::string with_article(const std::string& noun) {
    const char c = noun.empty() ? 'x' : static_cast<char>(std::tolower(static_cast<unsigned char>(noun[0])));
    const bool vowel = c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
    return std::string(vowel ? "an " : "a ") + noun;
  }

  static bool is_vehicle(const std::string& c) {
    static const std::vector<std::string> kVehicles{"car", "truck", "bus", "van", "motorcycle", "bicycle", "vehicle"};
    return std::find(kVehicles.begin(), kVehicles.end(), lower(c)) != kVehicles.end();
  }

  static bool is_person(const std::string& c) {
    const auto l = lower(c);
    return l == "person" || l == "pedestrian" || l == "man" || l == "woman" || l == "child";
  }

  static std::string span_of(const Seen& s) {
    if (s.from == s.to) return "at " + s.from + "s";
    return "from " + s.from + "s to " + s.to + "s";
  }

  static std::string place_of(const std::string& c) { return is_vehicle(c) ? "on the road" : "in the video"; }

  /// Category the question asks about: a tally category named in it (plural
  /// allowed), else the noun after "is there a", "find the", ...
  static std::optional<std::string> queried(const Parsed& p) {
    const std::string q = lower(p.question);
    auto word_char = [](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) != 0; };
    for (const auto& s : p.tally) {
      const std::string c = lower(s.category);
      for (auto pos = q.find(c); !c.empty() && pos != std::string::npos; pos = q.find(c, pos + 1)) {
        if (pos > 0 && word_char(q[pos - 1])) continue;
        std::size_t end = pos + c.size();
        if (q.compare(end, 2, "es") == 0 && (end + 2 == q.size() || !word_char(q[end + 2]))) end += 2;
        else if (end < q.size() && q[end] == 's') ++end;
        if (end == q.size() || !word_char(q[end])) return s.category;
      }
    }
    static const std::regex ask(
        R"((?:is there|are there|find|detect|where is|where are|segment|outline|mask|show me)\s+(?:a |an |any |the |all )?([a-z]+))");
    std::smatch m;
    if (std::regex_search(q, m, ask)) {
      std::string noun = m[1].str();
      if (noun.size() > 3 && noun.back() == 's') noun.pop_back();
      return noun;
    }
    return std::nullopt;
  }

  static const Seen* find(const Parsed& p, const std::string& category) {
    for (const auto& s : p.tally)
      if (lower(s.category) == lower(category)) return &s;
    return nullptr;
  }

  static std::string summarize(const Parsed& p) {
    if (p.tally.empty()) return "this is a video in which no objects of interest appear";
    const auto& top = p.tally.front().category;
    std::string out;
    if (is_vehicle(top)) out = "this is a video of " + with_article(top) + " driving on the road";
    else if (is_person(top)) out = "this is a video of " + with_article(top) + " walking";
    else out = "this is a video showing " + with_article(top);
    if (p.tally.size() > 1) {
      out += ", with ";
      for (std::size_t i = 1; i < p.tally.size(); ++i) {
        if (i > 1) out += i + 1 == p.tally.size() ? " and " : ", ";
        out += with_article(p.tally[i].category);
      }
      out += " also appearing";
    }
    return out;
  }

  static std::string describe(const Parsed& p, bool segmentation) {
    auto sentence = [&](const Seen& s) {
      if (segmentation) return "the " + s.category + " is outlined " + place_of(s.category) + " " + span_of(s);
      return with_article(s.category) + " is detected " + place_of(s.category) + " " + span_of(s);
    };
    const auto target = queried(p);
    if (target) {
      if (const Seen* s = find(p, *target)) return sentence(*s);
      return segmentation ? "no " + *target + " can be outlined in the video"
                          : "no " + *target + " is detected in the video";
    }
    if (p.tally.empty()) return "no objects are detected in the video";
    std::string out;
    for (std::size_t i = 0; i < p.tally.size(); ++i) {
      if (i) out += ", and ";
      out += sentence(p.tally[i]);
    }
    return out;
  }

  static std::string answer_question(const Parsed& p) {
    if (p.tally.empty()) return "the event log does not contain any detected objects, so this cannot be answered";
    if (const auto target = queried(p)) {
      if (const Seen* s = find(p, *target)) return "the video shows " + with_article(s->category) + " " + span_of(*s);
      return "the event log does not show any " + *target;
    }
    std::string out = "based on the event log, the video shows ";
    for (std::size_t i = 0; i < p.tally.size(); ++i) {
      if (i) out += " and ";
      out += with_article(p.tally[i].category) + " " + span_of(p.tally[i]);
    }
    return out;
  }

  LanguageBackendDescriptor descriptor_;
  bool leak_details_;
  bool available_ = true;
};

/// Whitespace-delimited word count; the mock's notion of a token.
inline std::uint64_t count_tokens(std::string_view text) {
  std::uint64_t n = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    const bool space = std::isspace(c) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

// ---------------------------------------------------------------------------

/// Keyword routing, case-insensitive, first rule wins:
/// summarize/summary -> summarize; segment/mask/outline -> segment_describe;
/// detect/find/where/"is there" -> detect_describe; otherwise vqa.
inline TaskKind route_task(std::string_view user_text) {
  static const std::regex summarize_rx(R"(\b(summari[sz]\w*|summary)\b)", std::regex::icase);
  static const std::regex segment_rx(R"(\b(segment\w*|mask\w*|outlin\w*))", std::regex::icase);
  static const std::regex detect_rx(R"(\b(detect\w*|find\w*|where|is\s+there))", std::regex::icase);
  const std::string s(user_text);
  if (std::regex_search(s, summarize_rx)) return TaskKind::summarize;
  if (std::regex_search(s, segment_rx)) return TaskKind::segment_describe;
  if (std::regex_search(s, detect_rx)) return TaskKind::detect_describe;
  return TaskKind::vqa;
}

inline std::string render_turn(const Turn& t) {
  return std::string(t.role == Role::user ? "User: " : "Assistant: ") + t.text;
}

/// Most recent whole turns whose rendering (newline-joined) fits in
/// `budget_chars`; oldest turns go first and no turn is ever cut.
inline std::string truncate_history(std::span<const Turn> turns, std::size_t budget_chars) {
  std::size_t used = 0;
  std::size_t first = turns.size();
  while (first > 0) {
    const std::size_t cost = render_turn(turns[first - 1]).size() + (used ? 1 : 0);
    if (used + cost > budget_chars) break;
    used += cost;
    --first;
  }
  std::string out;
  for (std::size_t i = first; i < turns.size(); ++i) {
    if (!out.empty()) out += '\n';
    out += render_turn(turns[i]);
  }
  return out;
}

struct DialogueSession {
  std::string session_id;
  std::string video_id;
  std::vector<Turn> turns;
  std::string event_context;  // pinned for the lifetime of the session
  ContextBudget budget;

  std::size_t history_budget() const { return budget.max_context_chars / 2; }
  std::size_t context_budget() const { return budget.max_context_chars - history_budget(); }

  void append(Turn t) {
    if (t.text.empty()) throw Error(Errc::invalid_argument, "turn text must not be empty");
    const Role expected = turns.empty() || turns.back().role == Role::assistant ? Role::user : Role::assistant;
    if (t.role != expected)
      throw Error(Errc::invalid_argument, "turns must alternate, expected a " + std::string(to_string(expected)) + " turn");
    turns.push_back(std::move(t));
  }
};

/// Starts a session whose event context is rendered once, within the
/// context half of the budget, and pinned.
inline DialogueSession open_session(std::string session_id, const EventLog& log, const KeyframeSet& keyframes,
                                    const ContextBudget& budget = {}) {
  budget.validate();
  DialogueSession s;
  s.session_id = std::move(session_id);
  s.video_id = log.meta().video_id;
  s.budget = budget;
  ContextBudget ctx = budget;
  ctx.max_context_chars = s.context_budget();
  if (ctx.max_context_chars == 0) ctx.max_context_chars = 1;
  s.event_context = render_event_context(log, keyframes, ctx);
  return s;
}

struct AskResult {
  Turn reply;
  std::string prompt;
  std::string raw_response;
};

/// One dialogue step: route, build the prompt around the pinned context and
/// the truncated history, generate, filter. Both turns are appended only
/// when generation succeeds.
inline AskResult ask(DialogueSession& session, std::string_view user_text, LanguageBackend& backend,
                     const TemplateSet& templates, const VideoRepresentation* video = nullptr) {
  if (detail::trim(user_text).empty()) throw Error(Errc::invalid_argument, "question must not be empty");
  if (!session.turns.empty() && session.turns.back().role != Role::assistant)
    throw Error(Errc::invalid_argument, "previous user turn has no reply");
  const TaskKind task = route_task(user_text);
  const auto it = templates.find(task);
  if (it == templates.end()) throw Error(Errc::missing_slot, "no template for " + std::string(to_string(task)));

  const std::string history = truncate_history(session.turns, session.history_budget());
  AskResult r;
  r.prompt = build_prompt(it->second, session.event_context, std::string(user_text), history);
  if (!backend.available()) throw Error(Errc::backend_unavailable, backend.descriptor().name + " is not loaded");
  r.raw_response = backend.generate(r.prompt, video);
  r.reply = Turn{Role::assistant, filter_output(r.raw_response, task), task};
  session.append(Turn{Role::user, std::string(user_text), std::nullopt});
  session.append(r.reply);
  return r;
}

// ---------------------------------------------------------------------------
// Transcript JSON: {session_id, video_id, turns:[{role, text, task?}]}

inline nlohmann::json to_json(const Turn& t) {
  nlohmann::json j{{"role", std::string(to_string(t.role))}, {"text", t.text}};
  if (t.task) j["task"] = std::string(to_string(*t.task));
  return j;
}

inline nlohmann::json transcript_json(const DialogueSession& s) {
  auto turns = nlohmann::json::array();
  for (const auto& t : s.turns) turns.push_back(to_json(t));
  return nlohmann::json{{"session_id", s.session_id}, {"video_id", s.video_id}, {"turns", turns}};
}

inline std::vector<Turn> turns_from_json(const nlohmann::json& j) {
  std::vector<Turn> out;
  try {
    for (const auto& t : j.at("turns")) {
      Turn turn;
      const auto role = t.at("role").get<std::string>();
      if (role == "user") turn.role = Role::user;
      else if (role == "assistant") turn.role = Role::assistant;
      else throw Error(Errc::invalid_argument, "unknown role " + role);
      turn.text = t.at("text").get<std::string>();
      if (t.contains("task")) {
        auto task = parse_task(t.at("task").get<std::string>());
        if (!task) throw Error(Errc::invalid_argument, "unknown task");
        turn.task = *task;
      }
      out.push_back(std::move(turn));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_argument, std::string("malformed transcript: ") + e.what());
  }
  return out;
}

}  // namespace edgelens
