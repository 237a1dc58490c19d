#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "stepviz/error.hpp"
#include "stepviz/plan.hpp"

namespace stepviz {

enum class PromptMode { instruction_only, concatenation, recaption };

inline std::string prompt_mode_name(PromptMode m) {
  switch (m) {
    case PromptMode::instruction_only: return "instruction_only";
    case PromptMode::concatenation: return "concatenation";
    case PromptMode::recaption: return "recaption";
  }
  return "recaption";
}

inline PromptMode parse_prompt_mode(std::string_view s) {
  if (s == "instruction_only") return PromptMode::instruction_only;
  if (s == "concatenation") return PromptMode::concatenation;
  if (s == "recaption") return PromptMode::recaption;
  throw ConfigError("unknown prompt mode \"" + std::string(s) + "\"");
}

struct StepPrompt {
  std::size_t index = 0;
  std::string text;
  PromptMode mode = PromptMode::recaption;

  bool operator==(const StepPrompt&) const = default;
};

// "x." ⨁ "y" -> "x. y": one trailing period is dropped from the left part before joining with ". ".
inline std::string join_caption(std::string_view first, std::string_view second) {
  std::string out(first);
  if (!out.empty() && out.back() == '.') out.pop_back();
  out += ". ";
  out += second;
  return out;
}

inline std::vector<StepPrompt> compose_prompts(const Plan& plan, PromptMode mode) {
  std::vector<StepPrompt> out;
  out.reserve(plan.steps.size());
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const auto& action = plan.steps[i].action;
    std::string text;
    if (i == 0 || mode == PromptMode::instruction_only) {
      text = action;
    } else if (mode == PromptMode::recaption) {
      text = join_caption(action, plan.steps[i - 1].state);
    } else {
      text = join_caption(plan.steps[i - 1].action, action);
    }
    if (text.empty()) throw PreconditionViolation("step " + std::to_string(i) + " yields an empty prompt");
    out.push_back({i, std::move(text), mode});
  }
  return out;
}

}  // namespace stepviz
