#pragma once

// A tiny deterministic denoiser with real softmax self-attention layers, used to exercise the
// attention hook end to end without a pretrained model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stepviz/backend.hpp"
#include "stepviz/digest.hpp"

namespace stepviz {

struct ToySpec {
  LatentShape latent{8, 8, 4};
  int model_dim = 16;
  int heads = 2;
  int layers = 2;
  std::uint64_t weight_seed = 20240601;
  int pixels_per_cell = 8;
  int max_prompt_tokens = 77;
};

class ToyDenoiser : public Denoiser {
 public:
  struct LayerWeights {
    Matrix wq, wk, wv, wo;  // model_dim × model_dim
  };
  struct Weights {
    Matrix w_in;       // channels × model_dim
    Matrix pos;        // P × model_dim
    Matrix w_out;      // model_dim × channels
    std::vector<LayerWeights> layers;
  };

  explicit ToyDenoiser(ToySpec spec = {}) : spec_(spec) {
    if (spec_.model_dim % spec_.heads != 0) throw PreconditionViolation("model_dim must be divisible by heads");
    std::mt19937_64 rng(spec_.weight_seed);
    auto fill = [&rng](int rows, int cols, double scale) {
      Matrix m(rows, cols);
      const auto draws = gaussian_latent(rng(), static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<float>(scale) * draws[static_cast<std::size_t>(k)];
      return m;
    };
    const int c = spec_.latent.channels;
    const int d = spec_.model_dim;
    const int p = static_cast<int>(spec_.latent.positions());
    w_.w_in = fill(c, d, 1.0 / std::sqrt(c));
    w_.pos = fill(p, d, 0.5);
    w_.w_out = fill(d, c, 1.0 / std::sqrt(d));
    for (int l = 0; l < spec_.layers; ++l) {
      const double s = 1.0 / std::sqrt(d);
      w_.layers.push_back({fill(d, d, 2.0 * s), fill(d, d, 2.0 * s), fill(d, d, s), fill(d, d, s)});
    }
  }

  const ToySpec& spec() const { return spec_; }
  const Weights& weights() const { return w_; }

  std::string id() const override { return "toy"; }
  LatentShape latent_shape() const override { return spec_.latent; }
  int image_width() const override { return spec_.latent.width * spec_.pixels_per_cell; }
  int image_height() const override { return spec_.latent.height * spec_.pixels_per_cell; }

  std::vector<LayerId> attention_layers() const override {
    std::vector<LayerId> ids;
    for (int l = 0; l < spec_.layers; ++l) ids.push_back({"C", l, AttentionKind::self});
    return ids;
  }

  void set_attention_processor(std::shared_ptr<AttentionProcessor> processor) override {
    processor_ = std::move(processor);
  }
  std::shared_ptr<AttentionProcessor> attention_processor() const override { return processor_; }

  // Seeded embedding keyed by the prompt's digest. Token count is the whitespace word count.
  Conditioning encode_prompt(const std::string& prompt) const override {
    std::istringstream words(prompt);
    int tokens = 0;
    for (std::string w; words >> w;) ++tokens;
    if (tokens > spec_.max_prompt_tokens) {
      throw PromptTooLong(std::to_string(tokens) + " tokens exceed the limit of " +
                          std::to_string(spec_.max_prompt_tokens));
    }
    return gaussian_latent(hash64(prompt) ^ spec_.weight_seed, static_cast<std::size_t>(spec_.model_dim));
  }

  // Sinusoidal embedding of the step index.
  Eigen::Matrix<float, 1, Eigen::Dynamic> time_embedding(int step, int total_steps) const {
    Eigen::Matrix<float, 1, Eigen::Dynamic> e(spec_.model_dim);
    const double t = static_cast<double>(step) / std::max(1, total_steps);
    for (int k = 0; k < spec_.model_dim; ++k) {
      const double freq = std::pow(2.0, k / 2);
      e(k) = static_cast<float>(0.25 * ((k % 2 == 0) ? std::sin(freq * t) : std::cos(freq * t)));
    }
    return e;
  }

  // Token states before the first attention layer.
  Matrix embed(const Latent& latent, const Conditioning& cond, int step, int total_steps) const {
    const auto p = static_cast<Eigen::Index>(spec_.latent.positions());
    const auto c = static_cast<Eigen::Index>(spec_.latent.channels);
    Eigen::Map<const Matrix> x(latent.data(), p, c);
    Eigen::Map<const Eigen::Matrix<float, 1, Eigen::Dynamic>> e(cond.data(), static_cast<Eigen::Index>(cond.size()));
    Matrix h = x * w_.w_in + w_.pos;
    h.rowwise() += e + time_embedding(step, total_steps);
    return h;
  }

  Latent readout(const Matrix& h) const {
    Matrix y = (h * w_.w_out).array().tanh().matrix();
    return Latent(y.data(), y.data() + y.size());
  }

  std::vector<Latent> predict(std::span<const Latent> latents, std::span<const Conditioning> cond, int step,
                              int total_steps) override {
    const std::size_t n = latents.size();
    if (cond.size() != n) throw BackendError("conditioning batch differs from latent batch");
    for (const auto& l : latents) {
      if (l.size() != spec_.latent.size()) throw BackendError("latent has wrong size");
    }
    // Per-image projections; only attention couples the batch.
    std::vector<Matrix> h;
    for (std::size_t i = 0; i < n; ++i) h.push_back(embed(latents[i], cond[i], step, total_steps));
    StandardAttention standard;
    AttentionProcessor& proc = processor_ ? *processor_ : standard;
    for (int l = 0; l < spec_.layers; ++l) {
      const auto& lw = w_.layers[static_cast<std::size_t>(l)];
      FeatureBlock f;
      for (std::size_t i = 0; i < n; ++i) {
        f.queries.push_back(h[i] * lw.wq);
        f.keys.push_back(h[i] * lw.wk);
        f.values.push_back(h[i] * lw.wv);
      }
      AttentionCall call{step, {"C", l, AttentionKind::self}, static_cast<std::size_t>(spec_.heads), f};
      auto out = proc.process(call);
      if (out.size() != n) throw BackendError("attention processor returned a batch of the wrong size");
      for (std::size_t i = 0; i < n; ++i) h[i] += out[i] * lw.wo;
    }
    std::vector<Latent> res;
    for (const auto& hi : h) res.push_back(readout(hi));
    return res;
  }

  // Each latent cell becomes a pixels_per_cell square; channels 0-2 map [-1, 1] onto RGB.
  Image decode(const Latent& latent) const override {
    if (latent.size() != spec_.latent.size()) throw BackendError("latent has wrong size");
    const int s = spec_.pixels_per_cell;
    const int c = spec_.latent.channels;
    Image img(image_width(), image_height(), 3);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const std::size_t cell = static_cast<std::size_t>((y / s) * spec_.latent.width + (x / s));
        for (int ch = 0; ch < 3; ++ch) {
          const float v = ch < c ? latent[cell * static_cast<std::size_t>(c) + static_cast<std::size_t>(ch)] : 0.0f;
          const float u = std::clamp((v + 1.0f) * 0.5f, 0.0f, 1.0f);
          img.at(y, x, ch) = static_cast<std::uint8_t>(std::lround(u * 255.0f));
        }
      }
    }
    return img;
  }

 private:
  ToySpec spec_;
  Weights w_;
  std::shared_ptr<AttentionProcessor> processor_;
};

// Backend lookup by id. Real-model adapters register here as optional plugins.
inline std::unique_ptr<Denoiser> make_backend(const std::string& id) {
  if (id == "toy") return std::make_unique<ToyDenoiser>();
  throw UnsupportedBackend("unknown backend \"" + id + "\"");
}

}  // namespace stepviz
