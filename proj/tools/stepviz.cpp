// stepviz command line: plan, generate, evaluate, compare, dataset.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stepviz/remote.hpp"
#include "stepviz/stepviz.hpp"

namespace fs = std::filesystem;
using namespace stepviz;

namespace {

struct GlobalFlags {
  std::string config;
  std::string mode;
  std::string sharing;
  std::string backend;
  std::string seed;
  std::string out;
};

Config load_config(const GlobalFlags& g) {
  Config cfg = g.config.empty() ? Config{} : Config::load(g.config);
  if (!g.mode.empty()) cfg.set("prompt_mode", g.mode);
  if (!g.sharing.empty()) cfg.set("sharing", g.sharing);
  if (!g.backend.empty()) cfg.set("backend", g.backend);
  if (!g.seed.empty()) cfg.set("seed", g.seed);
  if (!g.out.empty()) cfg.set("out", g.out);
  return cfg;
}

// Recorded fixtures win over a live endpoint; a live endpoint sits behind the response cache.
std::shared_ptr<ChatClient> make_chat_client(const Config& cfg, const std::string& prefix) {
  if (auto dir = cfg.get(prefix + ".fixtures")) return std::make_shared<FixtureChatClient>(*dir);
  const auto cache_dir = cfg.get_or("cache_dir", "cache");
  std::shared_ptr<ChatClient> remote;
  if (auto ep = cfg.get(prefix + ".endpoint")) {
    RemoteChatClient::Options o;
    o.endpoint = *ep;
    o.model = cfg.get_or(prefix + ".model", "");
    o.api_key_env = cfg.get_or(prefix + ".api_key_env", "OPENAI_API_KEY");
    o.max_retries = static_cast<int>(cfg.get_int(prefix + ".max_retries", 2));
    remote = std::make_shared<RemoteChatClient>(o);
  }
  return std::make_shared<CachedChatClient>(remote, fs::path(cache_dir) / prefix);
}

std::unique_ptr<SegmentationAdapter> make_segmenter(const Config& cfg) {
  if (auto dir = cfg.get("segmenter.fixtures")) return std::make_unique<FixtureSegmenter>(*dir);
  if (auto ep = cfg.get("segmenter.endpoint")) return std::make_unique<RemoteSegmenter>(RemoteSegmenter::Options{*ep});
  return nullptr;
}

std::size_t max_parallel(const Config& cfg) {
  const auto v = cfg.get_int("max_parallel", 4);
  if (v < 1) throw ConfigError("max_parallel must be at least 1");
  return static_cast<std::size_t>(v);
}

int cmd_plan(const Config& cfg, const std::string& save) {
  const auto goal = cfg.get("goal");
  if (!goal) throw ConfigError("plan needs a goal (--goal or goal=)");
  InstructionTask task{"task", cfg.get_or("category", ""), *goal, static_cast<int>(cfg.get_int("steps", 3))};
  auto client = make_chat_client(cfg, "llm");
  const auto plan = parse_valid_plan(client->complete(build_planner_prompt(task)));
  const auto text = serialize_plan(plan) + "\n";
  if (save.empty()) {
    std::cout << text;
  } else {
    std::ofstream(save) << text;
    std::cout << save << '\n';
  }
  return 0;
}

int cmd_generate(const Config& cfg) {
  auto rc = run_config_from(cfg);
  std::shared_ptr<ChatClient> planner;
  if (!rc.plan) planner = make_chat_client(cfg, "llm");
  auto segmenter = uses_masks(rc.sharing) ? make_segmenter(cfg) : nullptr;
  RunAdapters adapters;
  adapters.planner = planner.get();
  adapters.segmenter = segmenter.get();
  const auto outcome = run(rc, adapters);
  std::cout << (outcome.run_dir / "manifest.json").string() << '\n';
  return 0;
}

int cmd_evaluate(const Config& cfg, const std::string& manifest_path) {
  const auto m = read_manifest(manifest_path);
  const auto images = manifest_images(m, manifest_path);
  const auto prompts = m.at("prompts").get<std::vector<std::string>>();
  const auto metrics = cfg.get_or("metrics", "mock");
  if (metrics != "mock") throw ConfigError("evaluate supports metrics=mock only; got \"" + metrics + "\"");
  const auto records = classic_metrics(images, prompts, mock_metric_adapters());
  const auto dir = fs::path(manifest_path).parent_path() / "eval";
  fs::create_directories(dir);
  const auto doc = metrics_to_json(records).dump(2);
  std::ofstream(dir / "metrics.json") << doc << '\n';
  std::cout << doc << '\n';
  return 0;
}

int cmd_compare(const Config& cfg, const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.size() != b.size() || a.empty()) throw PreconditionViolation("--a and --b need the same, nonzero count");
  std::vector<ComparePair> pairs;
  for (std::size_t k = 0; k < a.size(); ++k) pairs.push_back({a[k], b[k]});
  auto judge = make_chat_client(cfg, "judge");
  const auto out = fs::path(cfg.get_or("out", "out")) / "compare";
  const auto res = compare(pairs, *judge, static_cast<std::uint64_t>(cfg.get_int("judge.seed", cfg.get_int("seed", 0))),
                           out, max_parallel(cfg));
  std::cout << report_to_table(res.report);
  return 0;
}

int cmd_dataset(const Config& cfg, std::size_t count) {
  const auto tasks = default_task_specs(count);
  std::shared_ptr<ChatClient> remote;
  if (auto ep = cfg.get("llm.endpoint")) {
    RemoteChatClient::Options o;
    o.endpoint = *ep;
    o.model = cfg.get_or("llm.model", "");
    o.api_key_env = cfg.get_or("llm.api_key_env", "OPENAI_API_KEY");
    remote = std::make_shared<RemoteChatClient>(o);
  }
  ResponseCache cache(cfg.get_or("llm.fixtures", (fs::path(cfg.get_or("cache_dir", "cache")) / "llm").string()));
  DatasetOptions opts;
  opts.max_parallel = max_parallel(cfg);
  const auto entries = generate_dataset(tasks, remote.get(), cache, opts);
  const auto out = fs::path(cfg.get_or("out", "out"));
  fs::create_directories(out);
  std::ofstream file(out / "dataset.jsonl");
  std::size_t rejected = 0;
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["id"] = e.task.id;
    j["category"] = e.task.category;
    j["goal"] = e.task.goal;
    j["plan"] = plan_to_json(e.plan);
    j["violations"] = e.violations;
    file << j.dump() << '\n';
    if (!e.violations.empty()) ++rejected;
  }
  std::cout << entries.size() << " tasks, " << rejected << " with violations -> " << (out / "dataset.jsonl").string()
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Step-by-step instruction visualization"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "key = value configuration file");
  app.add_option("--mode", g.mode, "prompt mode: instruction_only, concatenation, recaption");
  app.add_option("--sharing", g.sharing, "none, kv, kv_local, kv_global, full");
  app.add_option("--backend", g.backend, "denoiser backend");
  app.add_option("--seed", g.seed, "base seed");
  app.add_option("--out", g.out, "output root");

  std::string goal, steps, plan_file, save, manifest;
  std::vector<std::string> side_a, side_b;
  std::size_t count = 200;

  auto* plan = app.add_subcommand("plan", "ask the planner for a plan");
  plan->add_option("--goal", goal);
  plan->add_option("--steps", steps);
  plan->add_option("--save", save, "write the plan here instead of stdout");

  auto* generate = app.add_subcommand("generate", "plan, caption and render a sequence");
  generate->add_option("--goal", goal);
  generate->add_option("--steps", steps);
  generate->add_option("--plan", plan_file, "plan JSON file");

  auto* evaluate = app.add_subcommand("evaluate", "classic metrics for a finished run");
  evaluate->add_option("--manifest", manifest)->required();

  auto* cmp = app.add_subcommand("compare", "pairwise judge of two sets of runs");
  cmp->add_option("--a", side_a, "manifests of system A")->required();
  cmp->add_option("--b", side_b, "manifests of system B")->required();

  auto* dataset = app.add_subcommand("dataset", "build the instruction dataset");
  dataset->add_option("--count", count);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    auto cfg = load_config(g);
    if (!goal.empty()) cfg.set("goal", goal);
    if (!steps.empty()) cfg.set("steps", steps);
    if (!plan_file.empty()) cfg.set("plan_file", plan_file);
    if (*plan) return cmd_plan(cfg, save);
    if (*generate) return cmd_generate(cfg);
    if (*evaluate) return cmd_evaluate(cfg, manifest);
    if (*cmp) return cmd_compare(cfg, side_a, side_b);
    if (*dataset) return cmd_dataset(cfg, count);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
    return exit_code_for(e.error_class());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
