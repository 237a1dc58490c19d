#include <gtest/gtest.h>

#include "support.hpp"

using namespace stepviz;
using namespace stepviz::testing;

namespace {

const std::vector<std::string> kPrompts = {"Set the baked cake on a platter.",
                                           "Spread icing over the cake. A baked cake on the platter.",
                                           "Add strawberries on top. The cake covered by icing."};

class NoHookDenoiser : public ToyDenoiser {
 public:
  bool supports_attention_processor() const override { return false; }
};

// Routes nothing: every call goes through plain attention.
AttentionSchedule never_shared() {
  AttentionSchedule s;
  s.shared_steps = 0;
  return s;
}

}  // namespace

TEST(ToyDenoiser, SameSpecSameWeights) {
  ToyDenoiser a;
  ToyDenoiser b;
  EXPECT_EQ(a.weights().w_in, b.weights().w_in);
  EXPECT_EQ(a.weights().pos, b.weights().pos);
  EXPECT_EQ(a.weights().layers[1].wq, b.weights().layers[1].wq);
  ToySpec other;
  other.weight_seed = 99;
  EXPECT_NE(ToyDenoiser(other).weights().w_in, a.weights().w_in);
}

TEST(ToyDenoiser, OneCharacterPromptChangeChangesOutput) {
  ToyDenoiser toy;
  BackendConfig cfg;
  const auto a = generate_sequence(toy, {"Stir the batter."}, {5}, std::nullopt, cfg);
  const auto b = generate_sequence(toy, {"Stir the batter!"}, {5}, std::nullopt, cfg);
  EXPECT_NE(a.latents[0], b.latents[0]);
}

TEST(ToyDenoiser, PromptTooLong) {
  ToyDenoiser toy;
  std::string prompt;
  for (int k = 0; k < 78; ++k) prompt += "word ";
  EXPECT_THROW(toy.encode_prompt(prompt), PromptTooLong);
  BackendConfig cfg;
  EXPECT_THROW(generate_sequence(toy, {prompt}, {1}, std::nullopt, cfg), PromptTooLong);
}

TEST(ToyDenoiser, DecodeShapeAndRange) {
  ToyDenoiser toy;
  const auto img = toy.decode(Latent(toy.latent_shape().size(), 0.0f));
  EXPECT_EQ(img.width, 64);
  EXPECT_EQ(img.height, 64);
  EXPECT_EQ(img.channels, 3);
  for (auto px : img.pixels) EXPECT_EQ(px, 128);
  EXPECT_THROW(toy.decode(Latent(3)), BackendError);
}

// Reference forward pass written against the toy weights directly: every image attends over the
// concatenated keys and values of the whole batch, head by head.
TEST(ToyDenoiser, HookedAllOnesMatchesManualConcatenatedForward) {
  ToyDenoiser toy;
  const auto& w = toy.weights();
  const int heads = toy.spec().heads;
  const auto hd = static_cast<Eigen::Index>(toy.spec().model_dim / heads);
  Gen g(41);
  std::vector<Latent> x(2, Latent(toy.latent_shape().size()));
  for (auto& l : x) {
    for (auto& v : l) v = static_cast<float>(g.uniform(-1, 1));
  }
  const std::vector<Conditioning> cond = {toy.encode_prompt(kPrompts[0]), toy.encode_prompt(kPrompts[1])};

  std::vector<Eigen::MatrixXd> h;
  for (std::size_t i = 0; i < 2; ++i) h.push_back(toy.embed(x[i], cond[i], 3, 20).cast<double>());
  for (const auto& lw : w.layers) {
    std::vector<Eigen::MatrixXd> q, k, v;
    for (std::size_t i = 0; i < 2; ++i) {
      q.push_back(h[i] * lw.wq.cast<double>());
      k.push_back(h[i] * lw.wk.cast<double>());
      v.push_back(h[i] * lw.wv.cast<double>());
    }
    std::vector<Eigen::MatrixXd> out(2, Eigen::MatrixXd::Zero(h[0].rows(), h[0].cols()));
    for (std::size_t i = 0; i < 2; ++i) {
      for (int head = 0; head < heads; ++head) {
        Eigen::MatrixXd kk(2 * k[0].rows(), hd), vv(2 * v[0].rows(), hd);
        kk << k[0].middleCols(head * hd, hd), k[1].middleCols(head * hd, hd);
        vv << v[0].middleCols(head * hd, hd), v[1].middleCols(head * hd, hd);
        Eigen::MatrixXd logits = q[i].middleCols(head * hd, hd) * kk.transpose() / std::sqrt(static_cast<double>(hd));
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
          logits.row(r) = (logits.row(r).array() - logits.row(r).maxCoeff()).exp();
          logits.row(r) /= logits.row(r).sum();
        }
        out[i].middleCols(head * hd, hd) = logits * vv;
      }
    }
    for (std::size_t i = 0; i < 2; ++i) h[i] += out[i] * lw.wo.cast<double>();
  }

  auto proc = std::make_shared<SharedAttentionProcessor>(AttentionSchedule{}, SharingBias{SimilarityMatrix::ones(2), {}});
  toy.set_attention_processor(proc);
  const auto pred = toy.predict(x, cond, 3, 20);
  for (std::size_t i = 0; i < 2; ++i) {
    const Eigen::MatrixXd y = (h[i] * w.w_out.cast<double>()).array().tanh().matrix();
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        EXPECT_NEAR(pred[i][static_cast<std::size_t>(r * y.cols() + c)], y(r, c), 1e-5);
      }
    }
  }
}

TEST(Hook, RouterOffMatchesUnhooked) {
  ToyDenoiser toy;
  BackendConfig cfg;
  cfg.schedule = never_shared();
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  const auto hooked = generate_sequence(toy, kPrompts, seeds, SharingBias{SimilarityMatrix::ones(3), {}}, cfg);
  const auto plain = generate_sequence(toy, kPrompts, seeds, std::nullopt, cfg);
  EXPECT_EQ(hooked.latents, plain.latents);
  EXPECT_EQ(hooked.images, plain.images);
  EXPECT_EQ(hooked.trace.size(), 20u * 2u);
  EXPECT_TRUE(plain.trace.empty());
}

TEST(Hook, ZeroCrossMasksIsolateImages) {
  ToyDenoiser toy;
  BackendConfig cfg;
  const std::vector<std::uint64_t> seeds = {4, 5, 6};
  const std::vector<std::vector<std::uint8_t>> closed(3, std::vector<std::uint8_t>(64, 0));
  const auto batch = generate_sequence(toy, kPrompts, seeds, SharingBias{SimilarityMatrix::ones(3), closed}, cfg);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(batch.latents[k], generate_sequence(toy, {kPrompts[k]}, {seeds[k]}, std::nullopt, cfg).latents[0]);
  }
}

TEST(Hook, SingleImageEqualsVanilla) {
  ToyDenoiser toy;
  BackendConfig cfg;
  const auto hooked = generate_sequence(toy, {kPrompts[0]}, {9}, SharingBias{SimilarityMatrix::ones(1), {}}, cfg);
  const auto plain = generate_sequence(toy, {kPrompts[0]}, {9}, std::nullopt, cfg);
  EXPECT_EQ(hooked.latents, plain.latents);
}

TEST(Hook, SharingChangesOutputs) {
  ToyDenoiser toy;
  BackendConfig cfg;
  const auto a = generate_sequence(toy, kPrompts, {1, 2, 3}, SharingBias{SimilarityMatrix::ones(3), {}}, cfg);
  const auto b = generate_sequence(toy, kPrompts, {1, 2, 3}, std::nullopt, cfg);
  EXPECT_NE(a.latents, b.latents);
}

TEST(Hook, DeterministicAcrossCalls) {
  ToyDenoiser toy;
  BackendConfig cfg;
  const SharingBias bias{SimilarityMatrix::from_rows({{1, 0.5, 0.2}, {0.9, 1, 0.4}, {0.1, 0.8, 1}}), {}};
  const auto a = generate_sequence(toy, kPrompts, {1, 2, 3}, bias, cfg);
  const auto b = generate_sequence(toy, kPrompts, {1, 2, 3}, bias, cfg);
  EXPECT_EQ(a.latents, b.latents);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.trace, b.trace);
}

TEST(Hook, TraceEqualsRouterTruthTable) {
  ToyDenoiser toy;
  BackendConfig cfg;
  cfg.total_steps = 8;
  cfg.schedule.total_steps = 8;
  cfg.schedule.shared_steps = 5;
  cfg.schedule.layer_filter = [](const LayerId& l) { return l.index == 1; };
  const auto res = generate_sequence(toy, kPrompts, {1, 2, 3}, SharingBias{SimilarityMatrix::ones(3), {}}, cfg);
  std::vector<TraceEntry> expect;
  for (int step = 0; step < 8; ++step) {
    for (const auto& layer : toy.attention_layers()) {
      expect.push_back({step, layer.name(), attention_router(cfg.schedule, step, layer)});
    }
  }
  EXPECT_EQ(res.trace, expect);
}

TEST(Hook, PreviousProcessorRestored) {
  ToyDenoiser toy;
  auto mine = std::make_shared<StandardAttention>();
  toy.set_attention_processor(mine);
  BackendConfig cfg;
  generate_sequence(toy, kPrompts, {1, 2, 3}, SharingBias{SimilarityMatrix::ones(3), {}}, cfg);
  EXPECT_EQ(toy.attention_processor(), mine);
}

TEST(Hook, UnsupportedBackend) {
  NoHookDenoiser d;
  EXPECT_THROW(install_processor(d, {}, SharingBias{SimilarityMatrix::ones(1), {}}), UnsupportedBackend);
  BackendConfig cfg;
  EXPECT_THROW(generate_sequence(d, {kPrompts[0]}, {1}, SharingBias{SimilarityMatrix::ones(1), {}}, cfg),
               UnsupportedBackend);
  EXPECT_THROW(make_backend("sdxl"), UnsupportedBackend);
  EXPECT_EQ(make_backend("toy")->id(), "toy");
}

TEST(Generate, Preconditions) {
  ToyDenoiser toy;
  BackendConfig cfg;
  EXPECT_THROW(generate_sequence(toy, {}, {}, std::nullopt, cfg), PreconditionViolation);
  EXPECT_THROW(generate_sequence(toy, kPrompts, {1, 2}, std::nullopt, cfg), PreconditionViolation);
  EXPECT_THROW(generate_sequence(toy, kPrompts, {1, 2, 3}, SharingBias{SimilarityMatrix::ones(2), {}}, cfg),
               ShapeMismatch);
  cfg.total_steps = 10;
  EXPECT_THROW(generate_sequence(toy, kPrompts, {1, 2, 3}, std::nullopt, cfg), PreconditionViolation);
}

TEST(Generate, GuidanceBranchesAreDeterministic) {
  ToyDenoiser toy;
  BackendConfig cfg;
  cfg.guidance_scale = 3.0;
  const SharingBias bias{SimilarityMatrix::ones(3), {}};
  const auto a = generate_sequence(toy, kPrompts, {1, 2, 3}, bias, cfg);
  const auto b = generate_sequence(toy, kPrompts, {1, 2, 3}, bias, cfg);
  EXPECT_EQ(a.latents, b.latents);
  cfg.guidance_scale = 1.0;
  EXPECT_NE(generate_sequence(toy, kPrompts, {1, 2, 3}, bias, cfg).latents, a.latents);
  // Both branches route through the processor.
  EXPECT_EQ(a.trace.size(), 2u * 20u * 2u);
}

TEST(Generate, GaussianLatentIsSeeded) {
  EXPECT_EQ(gaussian_latent(3, 257), gaussian_latent(3, 257));
  EXPECT_NE(gaussian_latent(3, 16), gaussian_latent(4, 16));
  const auto big = gaussian_latent(1, 20000);
  double mean = 0.0, var = 0.0;
  for (float v : big) mean += v;
  mean /= big.size();
  for (float v : big) var += (v - mean) * (v - mean);
  var /= big.size();
  EXPECT_NEAR(mean, 0.0, 0.05);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(LatentIo, RoundTrip) {
  Gen g(42);
  LatentShape shape{8, 8, 4};
  Latent l(shape.size());
  for (auto& v : l) v = static_cast<float>(g.uniform(-3, 3));
  const auto bytes = encode_latent(l, shape);
  const auto back = decode_latent(bytes);
  EXPECT_EQ(back.values, l);
  EXPECT_EQ(back.shape, shape);
  // 8-byte little-endian header length, then the JSON header.
  std::uint64_t hlen = 0;
  for (int k = 7; k >= 0; --k) hlen = (hlen << 8) | bytes[static_cast<std::size_t>(k)];
  const auto header = nlohmann::json::parse(std::string(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(hlen)));
  EXPECT_EQ(header["dtype"], "F32");
  EXPECT_EQ(header["shape"], nlohmann::json::array({8, 8, 4}));
  EXPECT_EQ(bytes.size(), 8 + hlen + 4 * shape.size());
}

TEST(LatentIo, TruncatedBlobIsRejected) {
  LatentShape shape{2, 2, 1};
  auto bytes = encode_latent(Latent(4, 1.0f), shape);
  bytes.pop_back();
  EXPECT_ANY_THROW(decode_latent(bytes));
  EXPECT_ANY_THROW(decode_latent({1, 2, 3}));
}
