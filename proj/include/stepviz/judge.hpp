#pragma once

// Pairwise model-as-judge evaluation of two image sequences over four aspects.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stepviz/chat.hpp"
#include "stepviz/digest.hpp"
#include "stepviz/error.hpp"
#include "stepviz/image.hpp"

namespace stepviz {

inline constexpr std::size_t kAspectCount = 4;
inline constexpr std::array<std::string_view, kAspectCount> kAspectNames = {
    "alignment", "continuity", "consistency", "relevance"};

inline constexpr std::string_view kJudgeInstruction =
    R"(Our task here is to compare visual step-by-step instructions, generated from the same step-by-step textual instruction. We want to decide which one is better according to the provided criteria.
# Instruction
1. Text prompt and Asset Alignment: Focus on whether the key elements mentioned in the text are clearly visible and identifiable in the image. The visual is good if all key elements are clearly depicted and easily identifiable.
2. Continuity: This measures how well the image captures the progression from the previous step(s), maintaining context and demonstrating the changes or actions described in the current step. The visual is good if the image effectively shows the progression from previous steps and integrates new elements/actions as described in the current step.
3. Consistency: Evaluates whether the same objects are used consistently across all images in a way that reflects their continued presence and role as described in the text. This is particularly important for objects that are central to the action or instructions. For example, a pot in first step should look like the pot mentioned other step, even it can be in different views.
4. Relevance: Assesses whether the visual focuses on the most critical aspect of the step as described in the text. The visual is good if the visual focuses precisely on the primary action or element described in the step.
Take a really close look at each of the multi-image instructions for the corresponding textual instruction before providing your answer.
When evaluating these aspects, focus on one of them at a time.
Try to make independent decisions between these criteria.
# Output format
To provide an answer, please provide a short analysis for each of the abovementioned evaluation criteria. The analysis should be very concise and accurate.
For each of the criteria, you need to make a decision using these options:
1. The first row visual is better;
2. The second row visual is better;
... or Cannot decide.
IMPORTANT: PLEASE USE THE 'Cannot decide' OPTION SPARSELY.
Then, in the last row, summarize your final decision by <option for criterion 1> <option for criterion 2> <option for criterion 3> <option for criterion 4>.
# Example

Analysis:
1. Text prompt and Asset Alignment: The first one ...; The second one ...; The first/second/third/... one is better or cannot decide.
2. Continuity: The first one ...; The second one ...; The first/second/third/... one is better or cannot decide.
3. Consistency: The first one ...; The second one ...; The first/second/third/... one is better or cannot decide.
4. Relevance: The first one ...; The second one ...; The first/second/third/... one is better or cannot decide.
Final answer:
x, x, x ,x (e.g., 1, Cannot decide, 3, 1/ 2, Cannot decide,5, 1 / 1, 3, 2,4))";

struct JudgeCase {
  std::string case_id;
  std::string instruction;    // the textual step-by-step instruction both sequences illustrate
  std::vector<Image> seq_a;
  std::vector<Image> seq_b;
  bool shuffle = false;       // true: B is shown first
};

enum class Decision { first, second, undecided };

inline std::string decision_name(Decision d) {
  switch (d) {
    case Decision::first: return "FIRST";
    case Decision::second: return "SECOND";
    case Decision::undecided: return "UNDECIDED";
  }
  return "UNDECIDED";
}

inline Decision parse_decision_name(std::string_view s) {
  if (s == "FIRST") return Decision::first;
  if (s == "SECOND") return Decision::second;
  if (s == "UNDECIDED") return Decision::undecided;
  throw ParseError("unknown decision \"" + std::string(s) + "\"");
}

// Decisions are stored in canonical orientation: FIRST means sequence A.
struct JudgeVerdict {
  std::string case_id;
  bool shuffle = false;
  std::string raw;
  std::array<Decision, kAspectCount> decisions{};

  bool operator==(const JudgeVerdict&) const = default;
};

// Deterministic per-case coin flip.
inline bool shuffle_bit(const std::string& case_id, std::uint64_t seed) {
  return (hash64(case_id + "#" + std::to_string(seed)) & 1u) != 0;
}

inline ChatMessages build_judge_prompt(const JudgeCase& c) {
  if (c.seq_a.empty() || c.seq_b.empty()) throw PreconditionViolation("judge case with an empty sequence");
  if (c.seq_a.size() != c.seq_b.size()) {
    throw PreconditionViolation("sequences differ in length: " + std::to_string(c.seq_a.size()) + " vs " +
                                std::to_string(c.seq_b.size()));
  }
  const auto& first = c.shuffle ? c.seq_b : c.seq_a;
  const auto& second = c.shuffle ? c.seq_a : c.seq_b;
  ChatMessage m;
  m.role = "user";
  m.content = std::string(kJudgeInstruction) + "\n\n# Textual instruction\n" + c.instruction +
              "\n\nThe first image is the first row visual; the second image is the second row visual.";
  m.images.push_back(encode_png(hstack(first)));
  m.images.push_back(encode_png(hstack(second)));
  return {std::move(m)};
}

namespace detail {

inline std::string trim_lower_collapse(std::string_view s) {
  std::string out;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

inline Decision swap_decision(Decision d) {
  if (d == Decision::first) return Decision::second;
  if (d == Decision::second) return Decision::first;
  return d;
}

}  // namespace detail

// Reads the last "Final answer:" line (or the first non-empty line after it) as four comma-separated
// options: "1", "2" or "Cannot decide". With `shuffle` set the result is mapped back to A/B.
inline JudgeVerdict parse_verdict(const std::string& raw, bool shuffle, const std::string& case_id = {}) {
  std::vector<std::string> lines;
  {
    std::istringstream in(raw);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
  }
  std::string answer;
  bool found = false;
  for (std::size_t k = lines.size(); k-- > 0;) {
    std::string lower = lines[k];
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const auto pos = lower.find("final answer");
    if (pos == std::string::npos) continue;
    const auto colon = lower.find(':', pos);
    if (colon == std::string::npos) continue;
    found = true;
    answer = lines[k].substr(colon + 1);
    if (detail::trim_lower_collapse(answer).empty()) {
      answer.clear();
      for (std::size_t j = k + 1; j < lines.size(); ++j) {
        if (!detail::trim_lower_collapse(lines[j]).empty()) {
          answer = lines[j];
          break;
        }
      }
    }
    break;
  }
  if (!found) throw ParseError("no \"Final answer:\" line");

  std::vector<std::string> tokens;
  {
    std::string cur;
    for (char ch : answer) {
      if (ch == ',') {
        tokens.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    tokens.push_back(cur);
  }
  if (tokens.size() != kAspectCount) {
    throw ParseError("expected " + std::to_string(kAspectCount) + " options, got " + std::to_string(tokens.size()));
  }
  JudgeVerdict v;
  v.case_id = case_id;
  v.shuffle = shuffle;
  v.raw = raw;
  for (std::size_t a = 0; a < kAspectCount; ++a) {
    std::string bare;
    for (char ch : tokens[a]) {
      if (ch != '*' && ch != '`') bare.push_back(ch);
    }
    auto t = detail::trim_lower_collapse(bare);
    while (!t.empty() && (t.back() == '.' || t.back() == ';')) t.pop_back();
    Decision d;
    if (t == "1") d = Decision::first;
    else if (t == "2") d = Decision::second;
    else if (t == "cannot decide") d = Decision::undecided;
    else throw ParseError("option \"" + tokens[a] + "\" for criterion " + std::to_string(a + 1) + " is not 1, 2 or Cannot decide");
    v.decisions[a] = shuffle ? detail::swap_decision(d) : d;
  }
  return v;
}

struct AspectTally {
  std::string aspect;
  std::size_t a_wins = 0;
  std::size_t b_wins = 0;
  std::size_t undecided = 0;
  double a_rate = 0.0;
  double b_rate = 0.0;
  double undecided_rate = 0.0;
};

struct WinRateReport {
  std::size_t cases = 0;
  std::array<AspectTally, kAspectCount> aspects;
};

inline WinRateReport aggregate(const std::vector<JudgeVerdict>& verdicts) {
  if (verdicts.empty()) throw PreconditionViolation("aggregate needs at least one verdict");
  WinRateReport r;
  r.cases = verdicts.size();
  for (std::size_t a = 0; a < kAspectCount; ++a) {
    auto& t = r.aspects[a];
    t.aspect = std::string(kAspectNames[a]);
    for (const auto& v : verdicts) {
      switch (v.decisions[a]) {
        case Decision::first: ++t.a_wins; break;
        case Decision::second: ++t.b_wins; break;
        case Decision::undecided: ++t.undecided; break;
      }
    }
    const double n = static_cast<double>(r.cases);
    t.a_rate = static_cast<double>(t.a_wins) / n;
    t.b_rate = static_cast<double>(t.b_wins) / n;
    t.undecided_rate = static_cast<double>(t.undecided) / n;
  }
  return r;
}

inline nlohmann::ordered_json report_to_json(const WinRateReport& r) {
  nlohmann::ordered_json j;
  j["cases"] = r.cases;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& t : r.aspects) {
    arr.push_back({{"aspect", t.aspect},
                   {"a_wins", t.a_wins},
                   {"b_wins", t.b_wins},
                   {"undecided", t.undecided},
                   {"a_rate", t.a_rate},
                   {"b_rate", t.b_rate},
                   {"undecided_rate", t.undecided_rate}});
  }
  j["aspects"] = std::move(arr);
  return j;
}

inline std::string report_to_table(const WinRateReport& r) {
  std::ostringstream out;
  out << "cases: " << r.cases << '\n';
  out << std::left << std::setw(12) << "aspect" << std::right << std::setw(10) << "A wins" << std::setw(10)
      << "B wins" << std::setw(11) << "undecided" << '\n';
  out << std::fixed << std::setprecision(1);
  for (const auto& t : r.aspects) {
    out << std::left << std::setw(12) << t.aspect << std::right << std::setw(9) << 100.0 * t.a_rate << '%'
        << std::setw(9) << 100.0 * t.b_rate << '%' << std::setw(10) << 100.0 * t.undecided_rate << "%\n";
  }
  return out.str();
}

// One JSON object per line: {case_id, shuffle, raw, decisions[4]}.
inline std::string verdict_to_jsonl(const JudgeVerdict& v) {
  nlohmann::ordered_json j;
  j["case_id"] = v.case_id;
  j["shuffle"] = v.shuffle;
  j["raw"] = v.raw;
  auto d = nlohmann::ordered_json::array();
  for (auto x : v.decisions) d.push_back(decision_name(x));
  j["decisions"] = std::move(d);
  return j.dump();
}

inline JudgeVerdict verdict_from_jsonl(const std::string& line) {
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError("verdict line is not a JSON object");
  JudgeVerdict v;
  try {
    v.case_id = j.at("case_id").get<std::string>();
    v.shuffle = j.at("shuffle").get<bool>();
    v.raw = j.at("raw").get<std::string>();
    const auto& d = j.at("decisions");
    if (!d.is_array() || d.size() != kAspectCount) throw ParseError("verdict needs four decisions");
    for (std::size_t a = 0; a < kAspectCount; ++a) v.decisions[a] = parse_decision_name(d[a].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("verdict line: ") + e.what());
  }
  return v;
}

// Builds the prompt, asks the judge and parses the answer.
inline JudgeVerdict judge_case(const JudgeCase& c, ChatClient& judge) {
  const auto messages = build_judge_prompt(c);
  return parse_verdict(judge.complete(messages), c.shuffle, c.case_id);
}

}  // namespace stepviz
