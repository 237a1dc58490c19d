#pragma once

// End-to-end orchestration: plan -> prompts -> (pass 1 -> segment -> pass 2) -> metrics, plus
// pairwise comparison of finished runs.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stepviz/backend.hpp"
#include "stepviz/chat.hpp"
#include "stepviz/config.hpp"
#include "stepviz/error.hpp"
#include "stepviz/judge.hpp"
#include "stepviz/latent_io.hpp"
#include "stepviz/masks.hpp"
#include "stepviz/metrics.hpp"
#include "stepviz/parallel.hpp"
#include "stepviz/plan.hpp"
#include "stepviz/recaption.hpp"
#include "stepviz/toy_backend.hpp"

namespace stepviz {

inline constexpr int kManifestFormat = 1;

enum class SharingMode { none, kv, kv_local, kv_global, full };

inline std::string sharing_mode_name(SharingMode m) {
  switch (m) {
    case SharingMode::none: return "none";
    case SharingMode::kv: return "kv";
    case SharingMode::kv_local: return "kv_local";
    case SharingMode::kv_global: return "kv_global";
    case SharingMode::full: return "full";
  }
  return "full";
}

inline SharingMode parse_sharing_mode(const std::string& s) {
  if (s == "none") return SharingMode::none;
  if (s == "kv") return SharingMode::kv;
  if (s == "kv_local") return SharingMode::kv_local;
  if (s == "kv_global") return SharingMode::kv_global;
  if (s == "full") return SharingMode::full;
  throw ConfigError("unknown sharing mode \"" + s + "\"");
}

inline bool uses_masks(SharingMode m) { return m == SharingMode::kv_local || m == SharingMode::full; }
inline bool uses_similarity(SharingMode m) { return m == SharingMode::kv_global || m == SharingMode::full; }

struct RunConfig {
  std::optional<InstructionTask> task;
  std::optional<Plan> plan;  // takes precedence over task
  PromptMode prompt_mode = PromptMode::recaption;
  SharingMode sharing = SharingMode::full;
  BackendConfig backend;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // explicit per-image seeds; derived from `seed` when empty
  std::string segmenter_id;          // identifies the mask source, part of the run id
  std::string metrics = "none";      // "mock" or "none"
  std::filesystem::path out_dir = "out";
  nlohmann::ordered_json config_snapshot = nlohmann::ordered_json::object();
};

struct RunAdapters {
  ChatClient* planner = nullptr;
  SegmentationAdapter* segmenter = nullptr;
  MetricAdapters metrics;
  std::function<std::unique_ptr<Denoiser>(const std::string&)> backend_factory = make_backend;
};

struct RunOutcome {
  std::string run_id;
  std::filesystem::path run_dir;
  nlohmann::ordered_json manifest;
};

inline std::vector<std::uint64_t> derive_seeds(std::uint64_t base, std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = base + i;
  return s;
}

// Builds a run description from flat configuration keys. The plan file, when given, is read here.
inline RunConfig run_config_from(const Config& cfg) {
  RunConfig rc;
  if (auto pf = cfg.get("plan_file")) {
    std::ifstream in(*pf);
    if (!in) throw ConfigError("cannot read plan file " + *pf);
    std::stringstream ss;
    ss << in.rdbuf();
    rc.plan = parse_valid_plan(ss.str());
  } else if (auto goal = cfg.get("goal")) {
    rc.task = InstructionTask{"task", cfg.get_or("category", ""), *goal, static_cast<int>(cfg.get_int("steps", 3))};
  }
  rc.prompt_mode = parse_prompt_mode(cfg.get_or("prompt_mode", "recaption"));
  rc.sharing = parse_sharing_mode(cfg.get_or("sharing", "full"));
  rc.backend.backend = cfg.get_or("backend", "toy");
  rc.backend.total_steps = static_cast<int>(cfg.get_int("total_steps", 20));
  rc.backend.schedule.total_steps = rc.backend.total_steps;
  rc.backend.schedule.shared_steps = static_cast<int>(cfg.get_int("shared_steps", 15));
  rc.backend.guidance_scale = cfg.get_double("guidance_scale", 1.0);
  rc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  if (auto s = cfg.get("seeds")) {
    std::stringstream ss(*s);
    for (std::string tok; std::getline(ss, tok, ',');) {
      try {
        rc.seeds.push_back(std::stoull(tok));
      } catch (const std::exception&) {
        throw ConfigError("bad seed \"" + tok + "\"");
      }
    }
  }
  rc.segmenter_id = cfg.get_or("segmenter.fixtures", cfg.get_or("segmenter.endpoint", ""));
  rc.metrics = cfg.get_or("metrics", "none");
  rc.out_dir = cfg.get_or("out", "out");
  rc.config_snapshot = cfg.snapshot();
  return rc;
}

namespace detail {

inline nlohmann::ordered_json summarize_trace(const std::vector<TraceEntry>& trace) {
  std::map<std::string, std::set<int>> shared;
  std::map<std::string, std::set<int>> seen;
  for (const auto& t : trace) {
    seen[t.layer].insert(t.step);
    if (t.shared) shared[t.layer].insert(t.step);
  }
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [layer, steps] : seen) {
    j[layer] = {{"calls", steps.size()},
                {"shared_steps", std::vector<int>(shared[layer].begin(), shared[layer].end())}};
  }
  return j;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw BackendError("cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

template <typename Fn>
auto in_phase(const std::string& phase, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PhaseError&) {
    throw;
  } catch (const Error& e) {
    throw PhaseError(phase, e);
  }
}

inline std::string plan_instruction_text(const Plan& plan) {
  std::ostringstream out;
  out << plan.goal << '\n';
  for (const auto& s : plan.steps) out << (s.index + 1) << ". " << s.action << '\n';
  return out.str();
}

}  // namespace detail

// Content hash of everything that determines the outputs. The output directory is excluded.
inline std::string compute_run_id(const RunConfig& rc, const Plan& plan, const std::vector<std::uint64_t>& seeds) {
  nlohmann::ordered_json job;
  job["plan"] = plan_to_json(plan);
  job["prompt_mode"] = prompt_mode_name(rc.prompt_mode);
  job["sharing"] = sharing_mode_name(rc.sharing);
  job["backend"] = rc.backend.backend;
  job["total_steps"] = rc.backend.total_steps;
  job["shared_steps"] = rc.backend.schedule.shared_steps;
  job["guidance_scale"] = rc.backend.guidance_scale;
  job["seeds"] = seeds;
  job["segmenter"] = uses_masks(rc.sharing) ? rc.segmenter_id : "";
  job["metrics"] = rc.metrics;
  return sha256_hex(job.dump()).substr(0, 16);
}

inline RunOutcome run(const RunConfig& rc, const RunAdapters& adapters) {
  namespace fs = std::filesystem;

  const Plan plan = detail::in_phase("plan", [&]() -> Plan {
    if (rc.plan) {
      if (auto v = validate_plan(*rc.plan); !v.empty()) throw SchemaViolation("plan rejected: " + v.front());
      return *rc.plan;
    }
    if (!rc.task) throw ConfigError("neither a plan nor a task was given");
    if (!adapters.planner) throw ClientError("no planner client configured");
    return parse_valid_plan(adapters.planner->complete(build_planner_prompt(*rc.task)));
  });
  const std::size_t n = plan.size();

  const auto prompts = detail::in_phase("recaption", [&] { return compose_prompts(plan, rc.prompt_mode); });
  std::vector<std::string> texts;
  for (const auto& p : prompts) texts.push_back(p.text);

  const auto seeds = rc.seeds.empty() ? derive_seeds(rc.seed, n) : rc.seeds;
  if (seeds.size() != n) {
    throw PhaseError("generate", PreconditionViolation("need " + std::to_string(n) + " seeds, got " +
                                                       std::to_string(seeds.size())));
  }

  const std::string run_id = compute_run_id(rc, plan, seeds);
  const fs::path run_dir = rc.out_dir / run_id;
  fs::create_directories(run_dir / "images");
  fs::create_directories(run_dir / "latents");
  fs::create_directories(run_dir / "eval");

  auto denoiser = detail::in_phase("generate", [&] { return adapters.backend_factory(rc.backend.backend); });
  const auto lshape = denoiser->latent_shape();

  std::optional<SharingBias> sharing;
  if (rc.sharing != SharingMode::none) {
    sharing = SharingBias{uses_similarity(rc.sharing) ? plan.similarity : SimilarityMatrix::ones(n), {}};
  }

  nlohmann::ordered_json passes = nlohmann::ordered_json::array();
  nlohmann::ordered_json mask_index = {{"steps", nlohmann::ordered_json::object()}};
  nlohmann::ordered_json missing_masks = nlohmann::ordered_json::object();

  auto record_pass = [&](const std::string& name, const GenerationResult& g, const std::string& subdir,
                         bool with_masks) {
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    fs::create_directories(run_dir / "images" / subdir);
    for (std::size_t i = 0; i < g.images.size(); ++i) {
      const auto rel = (fs::path("images") / subdir / ("step" + std::to_string(i) + ".png")).generic_string();
      write_png(run_dir / rel, g.images[i]);
      files.push_back(rel);
    }
    passes.push_back({{"name", name},
                      {"masks", with_masks},
                      {"images", files},
                      {"sharing_trace", detail::summarize_trace(g.trace)}});
  };

  GenerationResult final_result;
  if (uses_masks(rc.sharing)) {
    auto first = detail::in_phase("generate", [&] { return generate_sequence(*denoiser, texts, seeds, sharing, rc.backend); });
    record_pass("pass1", first, "pass1", false);

    const auto shared_labels = select_shared_objects(plan);
    std::vector<ObjectMask> masks;
    detail::in_phase("segment", [&] {
      if (!adapters.segmenter) throw AdapterError("sharing mode " + sharing_mode_name(rc.sharing) + " needs a segmenter");
      for (std::size_t i = 0; i < n; ++i) {
        if (shared_labels[i].empty()) continue;
        auto res = segment(first.images[i], i, shared_labels[i], *adapters.segmenter, lshape.height, lshape.width);
        for (auto& m : res.masks) masks.push_back(std::move(m));
        if (!res.missing.empty()) missing_masks[std::to_string(i)] = res.missing;
      }
      return 0;
    });
    const auto regions = union_masks(n, masks, first.images.front().width, first.images.front().height,
                                     lshape.height, lshape.width);
    mask_index = write_mask_set(run_dir / "masks", masks);
    sharing->masks = regions.latents;

    final_result = detail::in_phase("generate", [&] { return generate_sequence(*denoiser, texts, seeds, sharing, rc.backend); });
    record_pass("pass2", final_result, "", true);
  } else {
    final_result = detail::in_phase("generate", [&] { return generate_sequence(*denoiser, texts, seeds, sharing, rc.backend); });
    record_pass("pass1", final_result, "", false);
  }

  nlohmann::ordered_json image_files = nlohmann::ordered_json::array();
  nlohmann::ordered_json latent_files = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < n; ++i) {
    image_files.push_back("images/step" + std::to_string(i) + ".png");
    const auto lat = "latents/step" + std::to_string(i) + ".bin";
    write_latent(run_dir / lat, final_result.latents[i], lshape);
    latent_files.push_back(lat);
  }

  auto metric_records = detail::in_phase("evaluate", [&] {
    std::vector<MetricRecord> recs;
    if (rc.metrics == "mock") recs = classic_metrics(final_result.images, texts, mock_metric_adapters());
    else if (rc.metrics == "adapters") recs = classic_metrics(final_result.images, texts, adapters.metrics);
    else if (rc.metrics != "none") throw ConfigError("unknown metrics setting \"" + rc.metrics + "\"");
    return recs;
  });
  std::string metrics_file;
  if (!metric_records.empty()) {
    metrics_file = "eval/metrics.json";
    detail::write_text_atomic(run_dir / metrics_file, metrics_to_json(metric_records).dump(2) + "\n");
  }

  nlohmann::ordered_json prompts_json = nlohmann::ordered_json::array();
  for (const auto& p : prompts) prompts_json.push_back(p.text);

  nlohmann::ordered_json m;
  m["format"] = kManifestFormat;
  m["run_id"] = run_id;
  m["created_at"] = detail::utc_timestamp();
  m["config"] = rc.config_snapshot;
  m["versions"] = {{"planner_template", planner_template_version()},
                   {"judge_template", sha256_hex(std::string(kJudgeInstruction)).substr(0, 16)}};
  m["job"] = {{"prompt_mode", prompt_mode_name(rc.prompt_mode)},
              {"sharing", sharing_mode_name(rc.sharing)},
              {"backend", rc.backend.backend},
              {"total_steps", rc.backend.total_steps},
              {"shared_steps", rc.backend.schedule.shared_steps},
              {"guidance_scale", rc.backend.guidance_scale},
              {"segmenter", uses_masks(rc.sharing) ? rc.segmenter_id : ""},
              {"metrics", rc.metrics}};
  m["plan"] = plan_to_json(plan);
  m["prompts"] = prompts_json;
  m["seeds"] = seeds;
  m["passes"] = passes;
  m["mask_index"] = mask_index;
  m["missing_masks"] = missing_masks;
  m["images"] = image_files;
  m["latents"] = latent_files;
  m["latent_shape"] = {lshape.height, lshape.width, lshape.channels};
  m["metrics"] = metrics_to_json(metric_records);
  m["metrics_file"] = metrics_file;
  m["verdicts"] = nlohmann::ordered_json::array();

  // Every referenced file must exist before the manifest is published.
  std::vector<std::string> refs;
  for (const auto& p : passes) for (const auto& f : p["images"]) refs.push_back(f.get<std::string>());
  for (const auto& f : latent_files) refs.push_back(f.get<std::string>());
  if (!metrics_file.empty()) refs.push_back(metrics_file);
  if (uses_masks(rc.sharing)) {
    refs.emplace_back("masks/index.json");
    for (const auto& [step, labels] : mask_index["steps"].items()) {
      for (const auto& [label, file] : labels.items()) refs.push_back("masks/" + file.get<std::string>());
    }
  }
  for (const auto& r : refs) {
    if (!fs::exists(run_dir / r)) throw PhaseError("manifest", BackendError("missing output " + r));
  }
  detail::write_text_atomic(run_dir / "manifest.json", m.dump(2) + "\n");
  return {run_id, run_dir, std::move(m)};
}

// Reconstructs the job recorded in a manifest so that it can be re-executed.
inline RunConfig run_config_from_manifest(const nlohmann::json& m, const std::filesystem::path& out_dir) {
  RunConfig rc;
  try {
    rc.plan = plan_from_json(m.at("plan"));
    const auto& job = m.at("job");
    rc.prompt_mode = parse_prompt_mode(job.at("prompt_mode").get<std::string>());
    rc.sharing = parse_sharing_mode(job.at("sharing").get<std::string>());
    rc.backend.backend = job.at("backend").get<std::string>();
    rc.backend.total_steps = job.at("total_steps").get<int>();
    rc.backend.schedule.total_steps = rc.backend.total_steps;
    rc.backend.schedule.shared_steps = job.at("shared_steps").get<int>();
    rc.backend.guidance_scale = job.at("guidance_scale").get<double>();
    rc.segmenter_id = job.at("segmenter").get<std::string>();
    rc.metrics = job.at("metrics").get<std::string>();
    rc.seeds = m.at("seeds").get<std::vector<std::uint64_t>>();
    rc.config_snapshot = m.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaViolation(std::string("manifest: ") + e.what());
  }
  rc.out_dir = out_dir;
  return rc;
}

inline nlohmann::json read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionViolation("cannot read manifest " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw SchemaViolation("manifest " + path.string() + " is not valid JSON");
  return j;
}

inline std::vector<Image> manifest_images(const nlohmann::json& m, const std::filesystem::path& manifest_path) {
  std::vector<Image> out;
  for (const auto& f : m.at("images")) out.push_back(read_png(manifest_path.parent_path() / f.get<std::string>()));
  return out;
}

struct ComparePair {
  std::filesystem::path a;  // manifest paths
  std::filesystem::path b;
};

struct CompareOutcome {
  std::vector<JudgeCase> cases;
  std::vector<JudgeVerdict> verdicts;
  WinRateReport report;
};

// Judges every pair with A/B order shuffled per case, then aggregates in A/B orientation.
// When out_dir is non-empty, writes verdicts.jsonl, report.json and report.txt there.
inline CompareOutcome compare(const std::vector<ComparePair>& pairs, ChatClient& judge, std::uint64_t seed,
                              const std::filesystem::path& out_dir = {}, std::size_t max_parallel = 4) {
  if (pairs.empty()) throw PreconditionViolation("nothing to compare");
  CompareOutcome res;
  for (const auto& p : pairs) {
    const auto ma = read_manifest(p.a);
    const auto mb = read_manifest(p.b);
    const auto plan_a = plan_from_json(ma.at("plan"));
    const auto plan_b = plan_from_json(mb.at("plan"));
    if (plan_a.size() != plan_b.size()) {
      throw PreconditionViolation("plan lengths differ: " + std::to_string(plan_a.size()) + " vs " +
                                  std::to_string(plan_b.size()));
    }
    JudgeCase c;
    c.case_id = ma.at("run_id").get<std::string>() + "_vs_" + mb.at("run_id").get<std::string>();
    c.instruction = detail::plan_instruction_text(plan_a);
    c.seq_a = manifest_images(ma, p.a);
    c.seq_b = manifest_images(mb, p.b);
    c.shuffle = shuffle_bit(c.case_id, seed);
    res.cases.push_back(std::move(c));
  }
  res.verdicts.resize(res.cases.size());
  bounded_parallel_for(res.cases.size(), max_parallel,
                       [&](std::size_t k) { res.verdicts[k] = judge_case(res.cases[k], judge); });
  res.report = aggregate(res.verdicts);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::string lines;
    for (const auto& v : res.verdicts) lines += verdict_to_jsonl(v) + "\n";
    detail::write_text_atomic(out_dir / "verdicts.jsonl", lines);
    detail::write_text_atomic(out_dir / "report.json", report_to_json(res.report).dump(2) + "\n");
    detail::write_text_atomic(out_dir / "report.txt", report_to_table(res.report));
  }
  return res;
}

}  // namespace stepviz
