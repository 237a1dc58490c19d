#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "stepviz/chat.hpp"
#include "stepviz/error.hpp"
#include "stepviz/parallel.hpp"
#include "stepviz/plan.hpp"

namespace stepviz {

struct DatasetEntry {
  InstructionTask task;
  Plan plan;
  std::vector<std::string> violations;  // validate_plan output; empty when the plan is usable
  bool from_cache = false;
};

struct DatasetOptions {
  std::size_t max_parallel = 4;
};

namespace detail {

inline const std::vector<std::pair<std::string, std::vector<std::string>>>& task_catalog() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> catalog = {
      {"cooking",
       {"making pancakes", "baking chocolate chip cookies", "making hot chocolate", "cooking scrambled eggs",
        "making a fruit salad", "brewing pour-over coffee", "making a grilled cheese sandwich",
        "cooking spaghetti with tomato sauce", "making guacamole", "baking banana bread", "making lemonade",
        "preparing a caesar salad", "making french toast", "cooking fried rice", "making a smoothie",
        "baking a pizza", "making sushi rolls", "cooking a vegetable stir fry", "making mashed potatoes",
        "preparing an omelette", "making iced tea", "baking blueberry muffins", "making a burrito",
        "cooking tomato soup"}},
      {"gardening",
       {"planting tomato seedlings", "repotting a houseplant", "planting tulip bulbs", "starting a compost bin",
        "pruning a rose bush", "planting a tree sapling", "building a raised garden bed", "sowing lettuce seeds",
        "propagating a succulent", "mulching a flower bed", "planting an herb pot", "hanging a flower basket",
        "dividing a hosta plant", "watering a vegetable patch", "planting strawberries in a planter",
        "setting up a terrarium", "growing sprouts in a jar", "transplanting pepper plants",
        "planting sunflowers", "building a trellis for beans", "weeding a garden bed", "planting a lawn from seed",
        "making a kokedama moss ball"}},
      {"decorating",
       {"decorating a cake", "decorating a christmas tree", "wrapping a gift box", "making a flower arrangement",
        "hanging a picture frame", "decorating cupcakes", "painting a flower pot", "setting a dinner table",
        "making a paper garland", "decorating an easter egg", "making a wreath", "carving a pumpkin",
        "decorating a gingerbread house", "arranging throw pillows on a sofa", "making a candle centerpiece",
        "decorating a birthday banner", "styling a bookshelf", "painting an accent wall", "making a photo collage",
        "decorating a mason jar", "making tissue paper flowers", "decorating sugar cookies",
        "tying a ribbon bow on a present"}},
  };
  return catalog;
}

}  // namespace detail

// Deterministic task list cycling through categories, 3-5 steps each. Distinct for count <= 210.
inline std::vector<InstructionTask> default_task_specs(std::size_t count) {
  const auto& catalog = detail::task_catalog();
  std::vector<InstructionTask> tasks;
  tasks.reserve(count);
  std::size_t k = 0;
  for (std::size_t round = 0; tasks.size() < count; ++round) {
    const int steps = 3 + static_cast<int>(round % 3);
    const std::size_t topic = round / 3;
    bool any = false;
    for (const auto& [category, topics] : catalog) {
      if (topic >= topics.size()) continue;
      any = true;
      if (tasks.size() == count) break;
      tasks.push_back({"task" + std::to_string(k++), category, topics[topic], steps});
    }
    if (!any) break;
  }
  if (tasks.size() < count) {
    throw PreconditionViolation("task catalog holds only " + std::to_string(tasks.size()) + " distinct tasks");
  }
  return tasks;
}

// Plans every task, consulting the response cache first. A null client means cache-only replay.
// At most opts.max_parallel requests are in flight; cache writes are serialized by the cache.
inline std::vector<DatasetEntry> generate_dataset(const std::vector<InstructionTask>& tasks,
                                                  ChatClient* client, ResponseCache& cache,
                                                  DatasetOptions opts = {}) {
  std::vector<DatasetEntry> out(tasks.size());
  bounded_parallel_for(tasks.size(), opts.max_parallel, [&](std::size_t k) {
    const auto& task = tasks[k];
    const auto messages = build_planner_prompt(task);
    const auto key = request_key(messages);
    std::string raw;
    bool cached = false;
    if (auto hit = cache.load(key)) {
      raw = std::move(*hit);
      cached = true;
    } else {
      if (!client) throw ClientError("task " + task.id + ": cache miss and no client configured");
      try {
        raw = client->complete(messages);
      } catch (const ClientError& e) {
        throw ClientError("task " + task.id + ": " + e.what());
      }
      cache.store(key, raw);
    }
    Plan plan;
    try {
      plan = parse_plan(raw);
    } catch (const Error& e) {
      const auto src = cached ? "cache entry " + cache.path_for(key).string() : std::string("response");
      if (e.kind() == "SchemaViolation") throw SchemaViolation("task " + task.id + " " + src + ": " + e.what());
      throw MalformedResponse("task " + task.id + " " + src + ": " + e.what());
    }
    auto violations = validate_plan(plan);
    const auto n = static_cast<int>(plan.size());
    if (n < 3 || n > 5) violations.push_back("step count " + std::to_string(n) + " outside 3-5");
    out[k] = DatasetEntry{task, std::move(plan), std::move(violations), cached};
  });
  return out;
}

}  // namespace stepviz
