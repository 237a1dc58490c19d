#pragma once

// Planner protocol: prompt assembly, response parsing and plan validation.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stepviz/chat.hpp"
#include "stepviz/digest.hpp"
#include "stepviz/error.hpp"
#include "stepviz/similarity.hpp"

namespace stepviz {

struct InstructionTask {
  std::string id;
  std::string category;
  std::string goal;
  int requested_step_count = 3;

  bool operator==(const InstructionTask&) const = default;
};

enum class Continuity { fresh, similar, shape_similar, texture_similar };

struct ObjectTag {
  std::string label;
  Continuity continuity = Continuity::fresh;
  std::optional<std::size_t> reference_step;  // 0-based; absent iff continuity is fresh

  bool operator==(const ObjectTag&) const = default;
};

struct PlanStep {
  std::size_t index = 0;
  std::string title;
  std::string action;
  std::string state;
  std::vector<ObjectTag> objects;

  bool operator==(const PlanStep&) const = default;
};

struct Plan {
  std::string goal;
  std::vector<PlanStep> steps;
  SimilarityMatrix similarity;

  std::size_t size() const { return steps.size(); }
  bool operator==(const Plan&) const = default;
};

inline constexpr double kDiagonalSnapTolerance = 1e-6;

namespace detail {

inline std::string normalize_tag(std::string_view raw) {
  std::string out;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || ch == '_' || ch == '-') {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace detail

// Accepts the planner's spellings: "new", "similar", "similar shape" / "shape similar", and the texture pair.
inline std::optional<Continuity> parse_continuity(std::string_view raw) {
  const auto t = detail::normalize_tag(raw);
  if (t == "new") return Continuity::fresh;
  if (t == "similar" || t == "total similar") return Continuity::similar;
  if (t == "similar shape" || t == "shape similar") return Continuity::shape_similar;
  if (t == "similar texture" || t == "texture similar") return Continuity::texture_similar;
  return std::nullopt;
}

inline std::string continuity_name(Continuity c) {
  switch (c) {
    case Continuity::fresh: return "new";
    case Continuity::similar: return "similar";
    case Continuity::shape_similar: return "similar shape";
    case Continuity::texture_similar: return "similar texture";
  }
  return "new";
}

// ---------------------------------------------------------------------------
// Prompt template

inline constexpr std::string_view kPlannerSystemText =
    "You are ChatGPT-4, act like visual and instructional experts, generate step-by-step how to do something. "
    "each step include the action to indicate how people interact with objecs, and state to show state of "
    "objects after finish this action. And relation matrix is the correlation of one step with others in "
    "visual. object field indicate the objects in each step similar with privious step in some extends: "
    "similar(total similar), shape similar(only similar shape), texture similar( transform shape, only same "
    "texture)";

inline constexpr std::string_view kPlannerExemplarUser = "The instruction on decorating a cake in 2 steps.";

// The relation matrix is cut to the 2x2 corner so that the exemplar agrees with its own step count.
inline constexpr std::string_view kPlannerExemplarAssistant = R"({
    "goal": "Decorating a Cake",
    "steps": [
        {
            "step": "Setting the Cake on a Platter",
            "object": [["cake", "new"], ["platter", "new"]],
            "action": "Set the baked cake on a platter.",
            "state_of_main_object": "A baked cake on the platter."
        },
        {
            "step": "Applying Icing",
            "object": [["cake", "similar shape", 1], ["spoon", "new"]],
            "action": "Person using a spoon to place some icing on the top of the cake.",
            "state_of_main_object": "The cake covered by icing."
        }
    ],
    "relation": [
        [1.0, 0.5],
        [0.9, 1.0]
    ]
})";

inline std::string planner_goal_text(const InstructionTask& task) {
  std::string goal = task.goal;
  while (!goal.empty() && std::isspace(static_cast<unsigned char>(goal.back()))) goal.pop_back();
  if (!goal.empty() && goal.back() == '.') goal.pop_back();
  const std::string n = std::to_string(task.requested_step_count);
  const std::string plural = " in " + n + " steps";
  const std::string singular = " in " + n + " step";
  auto ends_with = [&](const std::string& s) {
    return goal.size() >= s.size() && goal.compare(goal.size() - s.size(), s.size(), s) == 0;
  };
  if (!ends_with(plural) && !ends_with(singular)) goal += (task.requested_step_count == 1 ? singular : plural);
  return goal;
}

inline ChatMessages build_planner_prompt(const InstructionTask& task) {
  if (task.goal.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw PreconditionViolation("instruction task goal is empty");
  }
  if (task.requested_step_count < 1) throw PreconditionViolation("requested_step_count must be >= 1");
  return {
      {"system", std::string(kPlannerSystemText), {}},
      {"user", std::string(kPlannerExemplarUser), {}},
      {"assistant", std::string(kPlannerExemplarAssistant), {}},
      {"user", "The instruction on " + planner_goal_text(task) + ".", {}},
  };
}

// Digest of the fixed parts of the planner prompt; changes whenever the template does.
inline std::string planner_template_version() {
  return sha256_hex(std::string(kPlannerSystemText) + '\x1f' + std::string(kPlannerExemplarUser) + '\x1f' +
                    std::string(kPlannerExemplarAssistant))
      .substr(0, 16);
}

// ---------------------------------------------------------------------------
// Response parsing

namespace detail {

// End offset (exclusive) of the balanced {...} starting at `open`, honouring JSON string escapes.
inline std::optional<std::size_t> balanced_object_end(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t k = open; k < text.size(); ++k) {
    const char c = text[k];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return k + 1;
  }
  return std::nullopt;
}

}  // namespace detail

// First outermost JSON object embedded in free text (markdown fences and chatter are skipped).
inline nlohmann::json extract_json_object(std::string_view raw) {
  for (std::size_t open = raw.find('{'); open != std::string_view::npos; open = raw.find('{', open + 1)) {
    const auto end = detail::balanced_object_end(raw, open);
    if (!end) continue;
    auto j = nlohmann::json::parse(raw.substr(open, *end - open), nullptr, false);
    if (!j.is_discarded() && j.is_object()) return j;
  }
  throw MalformedResponse("no JSON object found in response");
}

namespace detail {

inline const nlohmann::json& require_key(const nlohmann::json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw MalformedResponse("missing key \"" + std::string(key) + "\" in " + where);
  return *it;
}

inline std::string require_string(const nlohmann::json& v, const std::string& where) {
  if (!v.is_string()) throw SchemaViolation(where + " must be a string");
  return v.get<std::string>();
}

inline long long require_reference(const nlohmann::json& v, const std::string& where) {
  if (v.is_number_integer()) return v.get<long long>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == std::floor(d)) return static_cast<long long>(d);
  }
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    std::size_t used = 0;
    try {
      const long long k = std::stoll(s, &used);
      if (used == s.size()) return k;
    } catch (const std::exception&) {
    }
  }
  throw SchemaViolation(where + " must be an integer step reference");
}

inline ObjectTag parse_object_tag(const nlohmann::json& entry, const std::string& where) {
  if (!entry.is_array() || entry.size() < 2 || entry.size() > 3) {
    throw SchemaViolation(where + " must be [label, tag] or [label, tag, step]");
  }
  ObjectTag tag;
  tag.label = require_string(entry[0], where + "[0]");
  const auto tag_text = require_string(entry[1], where + "[1]");
  const auto continuity = parse_continuity(tag_text);
  if (!continuity) throw SchemaViolation(where + ": unknown continuity tag \"" + tag_text + "\"");
  tag.continuity = *continuity;
  if (entry.size() == 2) {
    if (tag.continuity != Continuity::fresh) throw SchemaViolation(where + ": non-new tag without step reference");
    return tag;
  }
  if (tag.continuity == Continuity::fresh) throw SchemaViolation(where + ": new tag with a step reference");
  // Planner references are 1-based.
  const long long k = require_reference(entry[2], where + "[2]");
  if (k < 1) throw SchemaViolation(where + ": step reference must be >= 1");
  tag.reference_step = static_cast<std::size_t>(k - 1);
  return tag;
}

inline SimilarityMatrix parse_relation(const nlohmann::json& rel) {
  if (!rel.is_array()) throw SchemaViolation("relation must be an array of rows");
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < rel.size(); ++i) {
    const auto& row = rel[i];
    if (!row.is_array()) throw SchemaViolation("relation row " + std::to_string(i) + " must be an array");
    if (row.size() != rel.size()) throw SchemaViolation("relation matrix is not square");
    std::vector<double> r;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (!row[j].is_number()) {
        throw SchemaViolation("relation[" + std::to_string(i) + "][" + std::to_string(j) + "] is not a number");
      }
      double v = row[j].get<double>();
      if (i == j && std::abs(v - 1.0) <= kDiagonalSnapTolerance) v = 1.0;
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw SchemaViolation("relation[" + std::to_string(i) + "][" + std::to_string(j) +
                              "] = " + std::to_string(v) + " outside [0,1]");
      }
      r.push_back(v);
    }
    rows.push_back(std::move(r));
  }
  return SimilarityMatrix::from_rows(rows);
}

}  // namespace detail

inline Plan plan_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw MalformedResponse("plan must be a JSON object");
  Plan plan;
  plan.goal = detail::require_string(detail::require_key(j, "goal", "plan"), "goal");
  const auto& steps = detail::require_key(j, "steps", "plan");
  if (!steps.is_array()) throw SchemaViolation("steps must be an array");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto where = "steps[" + std::to_string(i) + "]";
    const auto& s = steps[i];
    if (!s.is_object()) throw SchemaViolation(where + " must be an object");
    PlanStep step;
    step.index = i;
    if (auto it = s.find("step"); it != s.end()) step.title = detail::require_string(*it, where + ".step");
    step.action = detail::require_string(detail::require_key(s, "action", where), where + ".action");
    step.state = detail::require_string(detail::require_key(s, "state_of_main_object", where),
                                        where + ".state_of_main_object");
    if (auto it = s.find("object"); it != s.end()) {
      if (!it->is_array()) throw SchemaViolation(where + ".object must be an array");
      for (std::size_t k = 0; k < it->size(); ++k) {
        step.objects.push_back(detail::parse_object_tag((*it)[k], where + ".object[" + std::to_string(k) + "]"));
      }
    }
    plan.steps.push_back(std::move(step));
  }
  plan.similarity = detail::parse_relation(detail::require_key(j, "relation", "plan"));
  return plan;
}

// Structural parse only; dimension and reference consistency are reported by validate_plan.
inline Plan parse_plan(std::string_view raw) { return plan_from_json(extract_json_object(raw)); }

inline std::vector<std::string> validate_plan(const Plan& plan) {
  std::vector<std::string> v;
  const std::size_t n = plan.steps.size();
  if (n == 0) v.emplace_back("plan has no steps");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = plan.steps[i];
    const auto where = "step " + std::to_string(i);
    if (s.index != i) v.push_back(where + ": index " + std::to_string(s.index) + " does not match position");
    if (s.action.empty()) v.push_back(where + ": empty action");
    if (s.state.empty()) v.push_back(where + ": empty state");
    for (const auto& o : s.objects) {
      if (o.label.empty()) v.push_back(where + ": object with empty label");
      const bool fresh = o.continuity == Continuity::fresh;
      if (fresh && o.reference_step) v.push_back(where + ": new object \"" + o.label + "\" carries a reference");
      if (!fresh && !o.reference_step) v.push_back(where + ": object \"" + o.label + "\" lacks a reference");
      if (o.reference_step && *o.reference_step >= i) {
        v.push_back(where + ": object \"" + o.label + "\" references step " + std::to_string(*o.reference_step) +
                    " which is not earlier");
      }
    }
  }
  const std::size_t m = plan.similarity.size();
  if (m != n) {
    v.push_back("matrix dimension " + std::to_string(m) + " ≠ step count " + std::to_string(n));
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double x = plan.similarity.at(i, j);
      if (!std::isfinite(x) || x < 0.0 || x > 1.0) {
        v.push_back("similarity[" + std::to_string(i) + "][" + std::to_string(j) + "] outside [0,1]");
      } else if (i == j && x != 1.0) {
        v.push_back("similarity diagonal [" + std::to_string(i) + "] is " + std::to_string(x) + ", expected 1.0");
      }
    }
  }
  return v;
}

inline Plan parse_valid_plan(std::string_view raw) {
  auto plan = parse_plan(raw);
  if (auto v = validate_plan(plan); !v.empty()) {
    std::ostringstream msg;
    msg << "plan rejected:";
    for (const auto& s : v) msg << "\n  - " << s;
    throw SchemaViolation(msg.str());
  }
  return plan;
}

// Canonical writer using the planner's key names. References are written back 1-based.
inline nlohmann::ordered_json plan_to_json(const Plan& plan) {
  nlohmann::ordered_json j;
  j["goal"] = plan.goal;
  auto steps = nlohmann::ordered_json::array();
  for (const auto& s : plan.steps) {
    nlohmann::ordered_json js;
    js["step"] = s.title;
    auto objs = nlohmann::ordered_json::array();
    for (const auto& o : s.objects) {
      auto e = nlohmann::ordered_json::array({o.label, continuity_name(o.continuity)});
      if (o.reference_step) e.push_back(*o.reference_step + 1);
      objs.push_back(std::move(e));
    }
    js["object"] = std::move(objs);
    js["action"] = s.action;
    js["state_of_main_object"] = s.state;
    steps.push_back(std::move(js));
  }
  j["steps"] = std::move(steps);
  j["relation"] = plan.similarity.rows();
  return j;
}

inline std::string serialize_plan(const Plan& plan) { return plan_to_json(plan).dump(4); }

}  // namespace stepviz
