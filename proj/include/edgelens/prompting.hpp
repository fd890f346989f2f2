#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "edgelens/error.hpp"
#include "edgelens/event_model.hpp"
#include "edgelens/keyframe_sampler.hpp"

namespace edgelens {

enum class TaskKind { detect_describe, segment_describe, vqa, summarize };

inline constexpr std::array<TaskKind, 4> kAllTasks{TaskKind::detect_describe, TaskKind::segment_describe,
                                                   TaskKind::vqa, TaskKind::summarize};

constexpr std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::detect_describe: return "detect_describe";
    case TaskKind::segment_describe: return "segment_describe";
    case TaskKind::vqa: return "vqa";
    case TaskKind::summarize: return "summarize";
  }
  return "vqa";
}

inline std::optional<TaskKind> parse_task(std::string_view s) {
  for (auto t : kAllTasks)
    if (to_string(t) == s) return t;
  return std::nullopt;
}

inline constexpr std::string_view kConstraintLine =
    "Do not mention coordinates, confidence scores, or frame numbers.";
inline constexpr std::string_view kNoObjectsSentinel = "No objects were detected.";
inline constexpr std::string_view kNoDescriptionSentinel = "No description available.";

// ---------------------------------------------------------------------------
// Templates

inline constexpr std::array<std::string_view, 3> kSlotNames{"event_context", "history", "question"};

struct PromptTemplate {
  TaskKind task = TaskKind::vqa;
  std::string role_block;
  std::string constraint_block;
  std::string body;
  std::vector<std::string> context_slots;  // in order of appearance in body

  bool operator==(const PromptTemplate&) const = default;
};

namespace detail {

struct SlotRef {
  std::size_t pos;
  std::size_t len;
  std::string name;
};

inline std::vector<SlotRef> find_slots(std::string_view text) {
  std::vector<SlotRef> out;
  std::size_t pos = 0;
  while ((pos = text.find("{{", pos)) != std::string_view::npos) {
    const auto end = text.find("}}", pos + 2);
    if (end == std::string_view::npos) {
      out.push_back({pos, text.size() - pos, std::string(text.substr(pos))});
      break;
    }
    out.push_back({pos, end + 2 - pos, std::string(text.substr(pos + 2, end - pos - 2))});
    pos = end + 2;
  }
  return out;
}

inline bool known_slot(std::string_view name) {
  for (auto s : kSlotNames)
    if (s == name) return true;
  return false;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace detail

/// Parses the sectioned template format:
///
///   [role]
///   ...
///   [constraints]
///   ...
///   [body]
///   ... {{event_context}} ... {{history}} ... {{question}} ...
inline PromptTemplate parse_template(TaskKind task, std::string_view text) {
  std::map<std::string, std::string> sections;
  std::string current;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "[role]" || line == "[constraints]" || line == "[body]") {
      current = line.substr(1, line.size() - 2);
      if (sections.count(current)) throw Error(Errc::invalid_template, "duplicate section [" + current + "]");
      sections[current];
      continue;
    }
    if (current.empty()) {
      if (!detail::trim(line).empty()) throw Error(Errc::invalid_template, "text before the first section");
      continue;
    }
    sections[current] += line;
    sections[current] += '\n';
  }
  for (const char* s : {"role", "constraints", "body"})
    if (!sections.count(s)) throw Error(Errc::invalid_template, std::string("missing section [") + s + "]");

  PromptTemplate t;
  t.task = task;
  t.role_block = detail::trim(sections["role"]);
  t.constraint_block = detail::trim(sections["constraints"]);
  t.body = detail::trim(sections["body"]);
  if (t.constraint_block.empty()) throw Error(Errc::invalid_template, "constraint block must not be empty");
  if (!detail::find_slots(t.role_block).empty() || !detail::find_slots(t.constraint_block).empty())
    throw Error(Errc::invalid_template, "slot markers are only allowed in [body]");
  for (const auto& slot : detail::find_slots(t.body)) {
    if (!detail::known_slot(slot.name)) throw Error(Errc::invalid_template, "unknown slot marker " + slot.name);
    t.context_slots.push_back(slot.name);
  }
  bool has_context = false;
  for (const auto& s : t.context_slots) has_context |= s == "event_context";
  if (!has_context) throw Error(Errc::invalid_template, "body must contain {{event_context}}");
  return t;
}

namespace templates {

inline constexpr std::string_view kDetectDescribe = R"([role]
You are the reasoning module of a video analysis assistant.
Task: object detection description. Tell the user whether and when the requested objects appear, using the event log below as ground truth.

[constraints]
Answer in one or two plain natural-language sentences.
Do not mention coordinates, confidence scores, or frame numbers.
Only describe objects that appear in the event log.

[body]
Event log:
{{event_context}}

Conversation so far:
{{history}}

User request: {{question}}

Answer:
)";

inline constexpr std::string_view kSegmentDescribe = R"([role]
You are the reasoning module of a video analysis assistant.
Task: instance segmentation description. Describe the outlined objects and where they are in the scene, using the event log below as ground truth.

[constraints]
Answer in one or two plain natural-language sentences.
Do not mention coordinates, confidence scores, or frame numbers.
Do not describe mask encodings or pixel counts.

[body]
Event log:
{{event_context}}

Conversation so far:
{{history}}

User request: {{question}}

Answer:
)";

inline constexpr std::string_view kVqa = R"([role]
You are the reasoning module of a video analysis assistant.
Task: video question answering. Answer the user's question about the video, grounded in the event log below.

[constraints]
Answer in plain natural language; timestamps in seconds are allowed.
Do not mention coordinates, confidence scores, or frame numbers.
If the event log does not support an answer, say so.

[body]
Event log:
{{event_context}}

Conversation so far:
{{history}}

Question: {{question}}

Answer:
)";

inline constexpr std::string_view kSummarize = R"([role]
You are the reasoning module of a video analysis assistant.
Task: video summarization. Summarize the whole video in one natural sentence, using the event log below as ground truth.

[constraints]
Answer with exactly one plain natural-language sentence.
Do not mention coordinates, confidence scores, or frame numbers.
Do not describe objects that are absent from the event log.

[body]
Event log:
{{event_context}}

Conversation so far:
{{history}}

User request: {{question}}

Summary:
)";

}  // namespace templates

inline std::string_view builtin_template_text(TaskKind task) {
  switch (task) {
    case TaskKind::detect_describe: return templates::kDetectDescribe;
    case TaskKind::segment_describe: return templates::kSegmentDescribe;
    case TaskKind::vqa: return templates::kVqa;
    case TaskKind::summarize: return templates::kSummarize;
  }
  return templates::kVqa;
}

inline PromptTemplate builtin_template(TaskKind task) { return parse_template(task, builtin_template_text(task)); }

using TemplateSet = std::map<TaskKind, PromptTemplate>;

inline TemplateSet builtin_templates() {
  TemplateSet set;
  for (auto t : kAllTasks) set.emplace(t, builtin_template(t));
  return set;
}

/// Reads `<dir>/<task>.tmpl` for every task.
inline TemplateSet load_templates(const std::filesystem::path& dir) {
  TemplateSet set;
  for (auto t : kAllTasks) {
    const auto path = dir / (std::string(to_string(t)) + ".tmpl");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::not_found, "template file " + path.string() + " not found");
    std::ostringstream buf;
    buf << in.rdbuf();
    set.emplace(t, parse_template(t, buf.str()));
  }
  return set;
}

/// role + constraints + body with slots filled. A body paragraph (blank-line
/// separated) is dropped whole when any slot in it has no value, so absent
/// history leaves no dangling header. Values are inserted verbatim in a
/// single pass and never rescanned.
inline std::string build_prompt(const PromptTemplate& tmpl, std::string_view context,
                                const std::optional<std::string>& question = std::nullopt,
                                const std::optional<std::string>& history = std::nullopt) {
  const bool has_question = question && !detail::trim(*question).empty();
  if (tmpl.task == TaskKind::vqa && !has_question)
    throw Error(Errc::missing_slot, "vqa prompts require a question");
  auto value_of = [&](std::string_view name) -> std::string_view {
    if (name == "event_context") return context;
    if (name == "question") return has_question ? std::string_view(*question) : std::string_view{};
    if (name == "history") return history ? std::string_view(*history) : std::string_view{};
    throw Error(Errc::missing_slot, "unknown slot " + std::string(name));
  };

  std::vector<std::string> paragraphs;
  {
    std::string cur;
    std::istringstream in(tmpl.body);
    std::string line;
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) {
        if (!cur.empty()) paragraphs.push_back(std::move(cur));
        cur.clear();
        continue;
      }
      if (!cur.empty()) cur += '\n';
      cur += line;
    }
    if (!cur.empty()) paragraphs.push_back(std::move(cur));
  }

  std::string body;
  for (const auto& para : paragraphs) {
    const auto slots = detail::find_slots(para);
    bool drop = false;
    for (const auto& s : slots) drop |= detail::trim(value_of(s.name)).empty();
    if (drop) continue;
    std::string rendered;
    std::size_t cursor = 0;
    for (const auto& s : slots) {
      rendered.append(para, cursor, s.pos - cursor);
      rendered += value_of(s.name);
      cursor = s.pos + s.len;
    }
    rendered.append(para, cursor, std::string::npos);
    if (!body.empty()) body += "\n\n";
    body += rendered;
  }
  return tmpl.role_block + "\n\n" + tmpl.constraint_block + "\n\n" + body + "\n";
}

// ---------------------------------------------------------------------------
// Event context

enum class Compaction { full_log, tally_plus_keyframe_events, tally_only };

constexpr std::string_view to_string(Compaction c) {
  switch (c) {
    case Compaction::full_log: return "full_log";
    case Compaction::tally_plus_keyframe_events: return "tally_plus_keyframe_events";
    case Compaction::tally_only: return "tally_only";
  }
  return "full_log";
}

inline std::optional<Compaction> parse_compaction(std::string_view s) {
  for (auto c : {Compaction::full_log, Compaction::tally_plus_keyframe_events, Compaction::tally_only})
    if (to_string(c) == s) return c;
  return std::nullopt;
}

struct ContextBudget {
  std::size_t max_context_chars = 8000;
  /// Richest rendering to attempt; degrades from here when over budget.
  Compaction compaction = Compaction::full_log;

  void validate() const {
    if (max_context_chars == 0) throw Error(Errc::invalid_config, "max_context_chars must be positive");
  }
};

namespace detail {

inline std::string seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", s);
  return buf;
}

inline std::string tally_line(const CategoryStats& s) {
  return s.category + " \xC3\x97" + std::to_string(s.count) + " (" + seconds(s.first_timestamp_s) + "s-" +
         seconds(s.last_timestamp_s) + "s)";
}

inline std::string event_line(const FrameEvent& ev) {
  std::map<std::string, std::size_t> counts;
  for (const auto& d : ev.detections) ++counts[d.category];
  std::vector<std::pair<std::string, std::size_t>> order(counts.begin(), counts.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::string line = "At " + seconds(ev.timestamp_s) + "s (frame " + std::to_string(ev.frame_index) + "): ";
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i) line += ", ";
    line += order[i].first + " \xC3\x97" + std::to_string(order[i].second);
  }
  return line;
}

/// Longest prefix of `s` of at most `max_bytes` that does not split a UTF-8 sequence.
inline std::string utf8_prefix(std::string_view s, std::size_t max_bytes) {
  if (s.size() <= max_bytes) return std::string(s);
  std::size_t cut = max_bytes;
  while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
  return std::string(s.substr(0, cut));
}

}  // namespace detail

/// Human-readable grounding text for the language backend. Tries the
/// budget's compaction level first and degrades full_log ->
/// tally_plus_keyframe_events -> tally_only until it fits; the tally itself
/// drops its least frequent categories last. Output never exceeds
/// max_context_chars bytes and never contains coordinates or scores.
inline std::string render_event_context(const EventLog& log, const KeyframeSet& keyframes,
                                        const ContextBudget& budget) {
  budget.validate();
  const std::size_t limit = budget.max_context_chars;
  const CategoryTally tally = summarize_log(log);
  if (tally.empty()) return detail::utf8_prefix(kNoObjectsSentinel, limit);

  std::vector<std::string> tally_lines;
  for (const auto& s : tally) tally_lines.push_back(detail::tally_line(s));
  auto tally_block = [&](std::size_t count) {
    std::string out = "Objects seen:";
    for (std::size_t i = 0; i < count; ++i) out += "\n" + tally_lines[i];
    return out;
  };

  if (budget.compaction == Compaction::full_log) {
    std::string out = tally_block(tally_lines.size()) + "\nTimeline:";
    for (const auto& ev : log.events())
      if (!ev.detections.empty()) out += "\n" + detail::event_line(ev);
    if (out.size() <= limit) return out;
  }
  if (budget.compaction != Compaction::tally_only) {
    std::string out = tally_block(tally_lines.size());
    std::string kf_lines;
    const auto& events = log.events();
    for (const auto& kf : keyframes.keyframes) {
      auto it = std::lower_bound(events.begin(), events.end(), kf.frame_index,
                                 [](const FrameEvent& e, std::size_t idx) { return e.frame_index < idx; });
      if (it != events.end() && it->frame_index == kf.frame_index && !it->detections.empty())
        kf_lines += "\n" + detail::event_line(*it);
    }
    if (!kf_lines.empty()) out += "\nKeyframes:" + kf_lines;
    if (out.size() <= limit) return out;
  }
  for (std::size_t n = tally_lines.size(); n > 0; --n) {
    std::string out = tally_block(n);
    if (out.size() <= limit) return out;
  }
  return detail::utf8_prefix(tally_lines.front(), limit);
}

// ---------------------------------------------------------------------------
// Output constraints
//
// Forbidden in model output: numeric coordinate tuples, confidence numbers,
// and frame references. Timestamps in seconds stay. The filter is an ordered
// list of regex rewrites applied until nothing changes, and the predicate
// uses the same core patterns, so every filtered string is clean and the
// filter is idempotent.

namespace constraint_patterns {

inline constexpr const char* kNum = R"((?:\d+(?:\.\d+)?|\.\d+))";
inline const std::string kTuple = std::string(R"([\(\[]\s*-?)") + kNum + R"((?:\s*[,;]\s*-?)" + kNum +
                                  R"(){1,3}\s*[\)\]])";
inline const std::string kConfKeyword = R"((?:confidence|score|probability|certainty|conf))";
inline const std::string kConfidence =
    std::string("(?:\\b") + kConfKeyword + R"(\b\s*(?:of|is|was|level|value)?\s*[:=]?\s*-?)" + kNum +
    R"((?:\s*%)?|-?)" + kNum + R"(\s*%?\s*)" + kConfKeyword + R"(\b|)" + kNum + R"(\s*(?:%|percent\b)))";
inline const std::string kDetectVerb =
    R"((\b(?:detected|identified|recognized|found|spotted|classified|seen|located)\b))";
inline const std::string kVerbFraction = kDetectVerb + R"(\s+(?:with\s+|at\s+)?(?:0?\.\d+|1\.0+)(?![\w.]))";
inline const std::string kFrameRef =
    R"(\bframes?\b\s*(?:#|no\.?|number)?\s*\d+(?:\s*(?:-|–|to|and|through)\s*\d+)?)";

inline const std::regex& tuple() {
  static const std::regex r(kTuple, std::regex::icase);
  return r;
}
inline const std::regex& confidence() {
  static const std::regex r(kConfidence, std::regex::icase);
  return r;
}
inline const std::regex& verb_fraction() {
  static const std::regex r(kVerbFraction, std::regex::icase);
  return r;
}
inline const std::regex& frame_ref() {
  static const std::regex r(kFrameRef, std::regex::icase);
  return r;
}

}  // namespace constraint_patterns

struct ConstraintReport {
  bool coordinates = false;
  bool confidence = false;
  bool frame_refs = false;

  bool clean(bool allow_frame_refs = false) const {
    return !coordinates && !confidence && (allow_frame_refs || !frame_refs);
  }
};

inline ConstraintReport check_constraints(std::string_view text) {
  namespace cp = constraint_patterns;
  const std::string s(text);
  ConstraintReport r;
  r.coordinates = std::regex_search(s, cp::tuple());
  r.confidence = std::regex_search(s, cp::confidence()) || std::regex_search(s, cp::verb_fraction());
  r.frame_refs = std::regex_search(s, cp::frame_ref());
  return r;
}

/// No coordinate tuples, confidence numbers, or "frame N" references.
inline bool is_constraint_clean(std::string_view text) { return check_constraints(text).clean(); }

namespace detail {

inline bool is_determiner(std::string word) {
  for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  static const std::array<std::string_view, 16> kWords{"a",    "an",   "the",  "this", "that", "these",
                                                       "those", "its", "one",  "some", "each", "every",
                                                       "no",   "any",  "another", "his"};
  for (auto w : kWords)
    if (w == word) return true;
  return false;
}

inline std::string apply_rules_once(const std::string& in) {
  namespace cp = constraint_patterns;
  static const std::regex subject_at_tuple(
      std::string(R"(^\s*([A-Za-z]+)\s+(?:(?:is\s+)?(?:located|positioned|detected|found|seen)\s+)?(?:at|in)\s*)") +
          cp::kTuple,
      std::regex::icase);
  static const std::regex tuple_phrase(
      std::string(R"((?:\s*\b(?:located|positioned|detected|found|seen)\s+)?(?:\s*\b(?:at|in|near)\b\s*)?\s*)") +
          cp::kTuple,
      std::regex::icase);
  static const std::regex confidence_phrase(
      std::string(R"((?:\s*,)?(?:\s*\b(?:with|at|of|and)\s+)?(?:\s*\b(?:a|an)\s+)?\s*)") + cp::kConfidence,
      std::regex::icase);
  static const std::regex frame_phrase(
      std::string(R"((?:\s*,)?(?:\s*\b(?:in|at|on|from|during|of|since|until)\s+)?(?:\s*\bthe\s+)?\s*)") +
          cp::kFrameRef,
      std::regex::icase);
  static const std::regex empty_brackets(R"([\(\[]\s*(?:[,;:]\s*)*[\)\]])");
  static const std::regex spaces(R"(\s+)");
  static const std::regex space_before_punct(R"( ([,.;:!?]))");
  static const std::regex double_comma(R"(,\s*,)");
  static const std::regex comma_before_stop(R"(,\s*([.!?]))");
  static const std::regex leading_junk(R"(^[\s,;:]+)");
  static const std::regex trailing_junk(R"([\s,;:]+$)");

  std::string s = in;
  std::smatch m;
  if (std::regex_search(s, m, subject_at_tuple) && !is_determiner(m[1].str())) {
    const std::string word = m[1].str();
    const char first = static_cast<char>(std::tolower(static_cast<unsigned char>(word[0])));
    const bool vowel = first == 'a' || first == 'e' || first == 'i' || first == 'o' || first == 'u';
    s = std::string(vowel ? "an " : "a ") + word + m.suffix().str();
  }
  s = std::regex_replace(s, tuple_phrase, "");
  s = std::regex_replace(s, confidence_phrase, "");
  s = std::regex_replace(s, cp::verb_fraction(), "$1");
  s = std::regex_replace(s, frame_phrase, "");
  s = std::regex_replace(s, empty_brackets, "");
  s = std::regex_replace(s, spaces, " ");
  s = std::regex_replace(s, space_before_punct, "$1");
  s = std::regex_replace(s, double_comma, ",");
  s = std::regex_replace(s, comma_before_stop, "$1");
  s = std::regex_replace(s, leading_junk, "");
  s = std::regex_replace(s, trailing_junk, "");
  return s;
}

}  // namespace detail

/// Rewrites model output so it satisfies is_constraint_clean. The rules do
/// not depend on the task today; `task` is accepted so task-specific rules
/// can be added without changing callers.
inline std::string filter_output(std::string_view raw, TaskKind task = TaskKind::vqa) {
  (void)task;
  std::string s(raw);
  // Each rewrite pass either changes nothing or shortens the text.
  for (std::size_t guard = 0; guard <= raw.size() + 1; ++guard) {
    std::string next = detail::apply_rules_once(s);
    if (next == s) break;
    s = std::move(next);
  }
  bool has_alnum = false;
  for (unsigned char c : s) has_alnum |= std::isalnum(c) != 0;
  if (!has_alnum) return std::string(kNoDescriptionSentinel);
  return s;
}

}  // namespace edgelens
