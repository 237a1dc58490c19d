// Acceptance suite: one test per criterion, one PASS/FAIL line per criterion on stdout.

#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "support.hpp"

using namespace stepviz;
using namespace stepviz::testing;

namespace {

double max_abs_diff(const Matrix& m, const std::vector<std::vector<double>>& ref) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      worst = std::max(worst, std::abs(static_cast<double>(m(r, c)) - ref[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]));
    }
  }
  return worst;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(float)) == 0;
}

std::vector<std::string> cake_prompts() {
  const auto plan = parse_valid_plan(read_text(samples_dir() / "plans" / "cake_3step.json"));
  std::vector<std::string> out;
  for (const auto& p : compose_prompts(plan, PromptMode::recaption)) out.push_back(p.text);
  return out;
}

}  // namespace

TEST(Acceptance, C01_AttentionOracleEquivalence) {
  Gen g(101);
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int inst = 0; inst < 200; ++inst) {
    const auto n = static_cast<std::size_t>(g.integer(1, 4));
    const auto p = static_cast<std::size_t>(g.integer(1, 16));
    const auto dk = static_cast<std::size_t>(g.integer(1, 8));
    const auto dv = static_cast<std::size_t>(g.integer(1, 8));
    const auto blocks = random_block(g, n, p, dk, dv);
    const auto w = random_similarity(g, n, 0.2);
    const auto masks = random_masks(g, n, p);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ref = oracle_shared_attention(blocks, w, masks, i);
      const auto h = shared_attention(blocks, build_bias(w, masks, i, p));
      worst = std::max(worst, max_abs_diff(h, ref.output));
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("    max |kernel - oracle| = %.3g over 200 instances, %.3f s\n", worst, secs);
  EXPECT_LE(worst, 1e-5);
  EXPECT_LT(secs, 10.0);
}

TEST(Acceptance, C02_Reductions) {
  Gen g(202);
  double worst_b = 0.0;
  double worst_c = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const auto n = static_cast<std::size_t>(g.integer(2, 4));
    const auto p = static_cast<std::size_t>(g.integer(1, 16));
    const auto dk = static_cast<std::size_t>(g.integer(1, 8));
    const auto dv = static_cast<std::size_t>(g.integer(1, 8));
    const auto blocks = random_block(g, n, p, dk, dv);
    for (std::size_t i = 0; i < n; ++i) {
      // (a) S = 1, M = 1 is plain concatenated-KV attention, bit for bit.
      const auto open = shared_attention(blocks, build_bias(SimilarityMatrix::ones(n), {}, i, p));
      EXPECT_TRUE(bit_equal(open, kv_shared_attention(blocks, i))) << "instance " << inst << " image " << i;

      // (b) W = identity, or every cross mask zero, is independent per-image attention.
      const auto alone = self_attention<float>(blocks.queries[i], blocks.keys[i], blocks.values[i]);
      const auto ident = shared_attention(blocks, build_bias(SimilarityMatrix::identity(n), {}, i, p));
      const std::vector<std::vector<std::uint8_t>> closed(n, std::vector<std::uint8_t>(p, 0));
      const auto masked = shared_attention(blocks, build_bias(random_similarity(g, n), closed, i, p));
      worst_b = std::max({worst_b, static_cast<double>((ident - alone).cwiseAbs().maxCoeff()),
                          static_cast<double>((masked - alone).cwiseAbs().maxCoeff())});
    }
  }
  // (c) N = 1 against a scalar evaluation of softmax(QK^T/sqrt(d_k))V.
  for (int inst = 0; inst < 100; ++inst) {
    const auto p = static_cast<std::size_t>(g.integer(1, 16));
    const auto dk = static_cast<std::size_t>(g.integer(1, 8));
    const auto blocks = random_block(g, 1, p, dk, static_cast<std::size_t>(g.integer(1, 8)));
    const auto ref = oracle_shared_attention(blocks, SimilarityMatrix::ones(1), {}, 0);
    const auto h = shared_attention(blocks, build_bias(SimilarityMatrix::ones(1), {}, 0, p));
    worst_c = std::max(worst_c, max_abs_diff(h, ref.output));
    EXPECT_TRUE(bit_equal(h, self_attention<float>(blocks.queries[0], blocks.keys[0], blocks.values[0])));
  }
  std::printf("    (b) max deviation %.3g, (c) max deviation from scalar form %.3g\n", worst_b, worst_c);
  EXPECT_LE(worst_b, 1e-6);
  EXPECT_LE(worst_c, 1e-6);
}

TEST(Acceptance, C03_ExclusionExactness) {
  Gen g(303);
  std::size_t checked = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const auto n = static_cast<std::size_t>(g.integer(2, 4));
    const auto p = static_cast<std::size_t>(g.integer(1, 16));
    const auto blocks = random_block(g, n, p, static_cast<std::size_t>(g.integer(1, 8)),
                                     static_cast<std::size_t>(g.integer(1, 8)), 4.0);
    const auto w = random_similarity(g, n, 0.25);
    const auto masks = random_masks(g, n, p, 0.5);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = shared_attention_weights(blocks, build_bias(w, masks, i, p));
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        for (std::size_t c = 0; c < p; ++c) {
          if (masks[j][c] != 0 && w.at(i, j) != 0.0) continue;
          const auto col = static_cast<Eigen::Index>(j * p + c);
          for (Eigen::Index r = 0; r < a.rows(); ++r) {
            ++checked;
            ASSERT_EQ(a(r, col), 0.0f) << "instance " << inst;
          }
        }
      }
    }
  }
  std::printf("    %zu excluded weights, all exactly 0\n", checked);
  EXPECT_GT(checked, 0u);
}

TEST(Acceptance, C04_MonotonicInfluence) {
  Gen g(404);
  for (int inst = 0; inst < 50; ++inst) {
    const auto n = static_cast<std::size_t>(g.integer(2, 4));
    const auto p = static_cast<std::size_t>(g.integer(2, 16));
    const auto blocks = random_block(g, n, p, static_cast<std::size_t>(g.integer(1, 8)),
                                     static_cast<std::size_t>(g.integer(1, 8)));
    auto w = random_similarity(g, n, 0.0, 0.05);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) w.at(i, j) = i == j ? 1.0 : std::min(w.at(i, j), 0.85);
    }
    auto masks = random_masks(g, n, p);
    for (auto& m : masks) m[static_cast<std::size_t>(g.integer(0, static_cast<int>(p) - 1))] = 1;
    const auto i = static_cast<std::size_t>(g.integer(0, static_cast<int>(n) - 1));
    auto j = static_cast<std::size_t>(g.integer(0, static_cast<int>(n) - 2));
    if (j >= i) ++j;

    auto mass_on_j = [&](const SimilarityMatrix& ww) {
      const auto a = shared_attention_weights(blocks, build_bias(ww, masks, i, p));
      double s = 0.0;
      for (std::size_t c = 0; c < p; ++c) {
        if (!masks[j][c]) continue;
        s += static_cast<double>(a.col(static_cast<Eigen::Index>(j * p + c)).cast<double>().sum());
      }
      return s;
    };
    const double before = mass_on_j(w);
    auto raised = w;
    raised.at(i, j) += 0.1;
    const double after = mass_on_j(raised);
    EXPECT_GT(after, before) << "instance " << inst << " W(" << i << "," << j << ")=" << w.at(i, j);
  }
}

TEST(Acceptance, C05_IsolationEndToEnd) {
  ToyDenoiser toy;
  const auto prompts = cake_prompts();
  const std::vector<std::uint64_t> seeds = {11, 22, 33};
  BackendConfig cfg;
  cfg.schedule.layer_filter = nullptr;  // every self-attention layer routed
  const auto batch = generate_sequence(toy, prompts, seeds, SharingBias{SimilarityMatrix::identity(3), {}}, cfg);
  bool shared_somewhere = false;
  for (const auto& t : batch.trace) shared_somewhere |= t.shared;
  EXPECT_TRUE(shared_somewhere);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto solo = generate_sequence(toy, {prompts[k]}, {seeds[k]}, std::nullopt, cfg);
    EXPECT_EQ(batch.latents[k], solo.latents[0]) << "image " << k;
    EXPECT_EQ(batch.images[k], solo.images[0]) << "image " << k;
  }
}

TEST(Acceptance, C06_ScheduleBoundary) {
  ToyDenoiser toy;
  BackendConfig cfg;
  ASSERT_EQ(cfg.total_steps, 20);
  ASSERT_EQ(cfg.schedule.shared_steps, 15);
  const auto res = generate_sequence(toy, cake_prompts(), {1, 2, 3}, SharingBias{SimilarityMatrix::ones(3), {}}, cfg);
  std::map<std::string, std::map<int, bool>> seen;
  for (const auto& t : res.trace) seen[t.layer][t.step] = t.shared;
  ASSERT_EQ(seen.size(), toy.attention_layers().size());
  for (const auto& [layer, steps] : seen) {
    ASSERT_EQ(steps.size(), 20u) << layer;
    for (const auto& [step, shared] : steps) EXPECT_EQ(shared, step <= 14) << layer << " step " << step;
  }
}

TEST(Acceptance, C07_CoherenceDirection) {
  ToyDenoiser toy;
  const auto prompts = cake_prompts();
  BackendConfig cfg;
  double shared_sum = 0.0;
  double indep_sum = 0.0;
  for (std::uint64_t t = 0; t < 10; ++t) {
    const std::vector<std::uint64_t> seeds = {1000 + 3 * t, 1001 + 3 * t, 1002 + 3 * t};
    shared_sum += mean_pairwise_l2(
        generate_sequence(toy, prompts, seeds, SharingBias{SimilarityMatrix::ones(3), {}}, cfg).latents);
    indep_sum += mean_pairwise_l2(
        generate_sequence(toy, prompts, seeds, SharingBias{SimilarityMatrix::identity(3), {}}, cfg).latents);
  }
  std::printf("    mean pairwise latent L2: W=1 %.4f, W=I %.4f\n", shared_sum / 10, indep_sum / 10);
  EXPECT_LT(shared_sum / 10, indep_sum / 10);
}

TEST(Acceptance, C08_PromptRule) {
  Gen g(808);
  for (int k = 0; k < 100; ++k) {
    const auto plan = random_plan(g, static_cast<std::size_t>(g.integer(1, 6)));
    const auto rec = compose_prompts(plan, PromptMode::recaption);
    const auto cat = compose_prompts(plan, PromptMode::concatenation);
    ASSERT_EQ(rec.size(), plan.size());
    ASSERT_EQ(cat.size(), plan.size());
    EXPECT_EQ(rec[0].text, plan.steps[0].action);
    EXPECT_EQ(cat[0].text, plan.steps[0].action);
    for (std::size_t i = 1; i < plan.size(); ++i) {
      EXPECT_NE(rec[i].text.find(plan.steps[i].action), std::string::npos);
      EXPECT_NE(rec[i].text.find(plan.steps[i - 1].state), std::string::npos);
      EXPECT_NE(cat[i].text.find(plan.steps[i - 1].action), std::string::npos);
      EXPECT_NE(cat[i].text.find(plan.steps[i].action), std::string::npos);
    }
  }
}

TEST(Acceptance, C09_PlanRoundTripAndValidation) {
  const auto dir = samples_dir() / "plans";
  for (const char* name : {"cake_2step.json", "cake_3step.json"}) {
    const auto text = read_text(dir / name);
    const auto plan = parse_valid_plan(text);
    EXPECT_TRUE(validate_plan(plan).empty()) << name;
    const auto again = serialize_plan(plan);
    EXPECT_EQ(parse_valid_plan(again), plan) << name;
    EXPECT_EQ(serialize_plan(parse_plan(again)), again) << name;
    EXPECT_EQ(nlohmann::json::parse(again), nlohmann::json::parse(text)) << name;
  }
  const auto two = parse_valid_plan(read_text(dir / "cake_2step.json"));
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two.steps[1].action, "Person using a spoon to place some icing on the top of the cake.");
  EXPECT_EQ(parse_plan(read_text(dir / "cake_2step_fenced.txt")), two);

  const auto printed = parse_plan(read_text(dir / "cake_2step_as_printed.json"));
  const auto violations = validate_plan(printed);
  ASSERT_EQ(violations.size(), 1u);
  EXPECT_EQ(violations[0], "matrix dimension 4 ≠ step count 2");
  EXPECT_THROW(parse_valid_plan(read_text(dir / "cake_2step_as_printed.json")), SchemaViolation);
}

TEST(Acceptance, C10_JudgeParsing) {
  const auto golden = nlohmann::json::parse(read_text(samples_dir() / "judge" / "golden.json"));
  ASSERT_GE(golden.size(), 3u);
  for (const auto& c : golden) {
    const auto name = c["name"].get<std::string>();
    const auto raw = c["raw"].get<std::string>();
    const bool shuffle = c["shuffle"].get<bool>();
    if (c.contains("error")) {
      EXPECT_THROW(parse_verdict(raw, shuffle), ParseError) << name;
      continue;
    }
    const auto v = parse_verdict(raw, shuffle);
    for (std::size_t a = 0; a < kAspectCount; ++a) {
      EXPECT_EQ(decision_name(v.decisions[a]), c["expect"][a].get<std::string>()) << name << " aspect " << a;
    }
    // Involution: parsing with the opposite bit swaps FIRST and SECOND back.
    const auto flipped = parse_verdict(raw, !shuffle);
    for (std::size_t a = 0; a < kAspectCount; ++a) {
      EXPECT_EQ(detail::swap_decision(flipped.decisions[a]), v.decisions[a]) << name;
    }
  }

  std::vector<JudgeVerdict> verdicts;
  std::ifstream in(samples_dir() / "judge" / "verdicts12.jsonl");
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    auto v = verdict_from_jsonl(line);
    EXPECT_EQ(parse_verdict(v.raw, v.shuffle, v.case_id), v) << v.case_id;
    verdicts.push_back(std::move(v));
  }
  ASSERT_EQ(verdicts.size(), 12u);
  const auto tally = nlohmann::json::parse(read_text(samples_dir() / "judge" / "verdicts12_tally.json"));
  const auto report = aggregate(verdicts);
  EXPECT_EQ(report.cases, tally["cases"].get<std::size_t>());
  for (std::size_t a = 0; a < kAspectCount; ++a) {
    const auto& t = tally["aspects"][a];
    const auto& r = report.aspects[a];
    EXPECT_EQ(r.aspect, t["aspect"].get<std::string>());
    EXPECT_EQ(r.a_wins, t["a_wins"].get<std::size_t>()) << r.aspect;
    EXPECT_EQ(r.b_wins, t["b_wins"].get<std::size_t>()) << r.aspect;
    EXPECT_EQ(r.undecided, t["undecided"].get<std::size_t>()) << r.aspect;
    EXPECT_NEAR(r.a_rate + r.b_rate + r.undecided_rate, 1.0, 1e-9);
  }
}

TEST(Acceptance, C11_ManifestDeterminism) {
  const auto plan_text = read_text(samples_dir() / "plans" / "cake_3step.json");
  auto planner = std::make_shared<FunctionChatClient>([&](std::span<const ChatMessage>) { return plan_text; });
  FixtureSegmenter segmenter(samples_dir() / "masks" / "cake_3step");

  auto run_once = [&](const std::filesystem::path& root) {
    CachedChatClient cached(planner, root / "cache");  // cold cache every time
    RunConfig rc;
    rc.task = InstructionTask{"cake", "decorating", "decorating a cake", 3};
    rc.sharing = SharingMode::full;
    rc.seed = 7;
    rc.metrics = "mock";
    rc.segmenter_id = "samples/masks/cake_3step";
    rc.out_dir = root / "out";
    RunAdapters ad;
    ad.planner = &cached;
    ad.segmenter = &segmenter;
    return run(rc, ad);
  };
  TempDir a("acc11a");
  TempDir b("acc11b");
  const auto ra = run_once(a.path());
  const auto rb = run_once(b.path());
  EXPECT_EQ(ra.run_id, rb.run_id);

  auto strip = [](nlohmann::json m) {
    m.erase("created_at");
    return m.dump();
  };
  EXPECT_EQ(strip(nlohmann::json::parse(read_text(ra.run_dir / "manifest.json"))),
            strip(nlohmann::json::parse(read_text(rb.run_dir / "manifest.json"))));
  const auto m = nlohmann::json::parse(read_text(ra.run_dir / "manifest.json"));
  ASSERT_EQ(m["passes"].size(), 2u);
  std::size_t files = 0;
  for (const auto& pass : m["passes"]) {
    for (const auto& f : pass["images"]) {
      EXPECT_EQ(read_file_bytes(ra.run_dir / f.get<std::string>()), read_file_bytes(rb.run_dir / f.get<std::string>()))
          << f;
      ++files;
    }
  }
  for (const auto& f : m["latents"]) {
    EXPECT_EQ(read_file_bytes(ra.run_dir / f.get<std::string>()), read_file_bytes(rb.run_dir / f.get<std::string>()));
    ++files;
  }
  EXPECT_EQ(files, 9u);
}

namespace {

// Prints "criterion N: PASS|FAIL  <name>" for every acceptance test.
class CriterionPrinter : public ::testing::EmptyTestEventListener {
  void OnTestEnd(const ::testing::TestInfo& info) override {
    const std::string name = info.name();
    const int number = std::stoi(name.substr(1, 2));
    std::printf("criterion %2d: %s  %s\n", number, info.result()->Passed() ? "PASS" : "FAIL", name.substr(4).c_str());
    std::fflush(stdout);
  }
};

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::UnitTest::GetInstance()->listeners().Append(new CriterionPrinter);
  return RUN_ALL_TESTS();
}
