#pragma once

// Denoiser adapter interface, attention processors and the multi-image sampling loop.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "stepviz/attention.hpp"
#include "stepviz/error.hpp"
#include "stepviz/image.hpp"
#include "stepviz/schedule.hpp"
#include "stepviz/similarity.hpp"

namespace stepviz {

struct LatentShape {
  int height = 8;
  int width = 8;
  int channels = 4;

  std::size_t positions() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  std::size_t size() const { return positions() * static_cast<std::size_t>(channels); }
  bool operator==(const LatentShape&) const = default;
};

using Latent = std::vector<float>;        // HWC, row-major
using Conditioning = std::vector<float>;  // backend-defined prompt embedding

// One self-attention invocation over an N-image batch. Q/K/V hold all heads side by side.
struct AttentionCall {
  int step = 0;
  LayerId layer;
  std::size_t heads = 1;
  const FeatureBlock& features;
};

class AttentionProcessor {
 public:
  virtual ~AttentionProcessor() = default;
  virtual std::vector<Matrix> process(const AttentionCall& call) = 0;
};

// Plain per-image attention, as the denoiser would compute it without any hook.
class StandardAttention : public AttentionProcessor {
 public:
  std::vector<Matrix> process(const AttentionCall& call) override {
    const auto& f = call.features;
    std::vector<Matrix> out;
    out.reserve(f.images());
    for (std::size_t i = 0; i < f.images(); ++i) {
      out.push_back(self_attention_multihead<float>(f.queries[i], f.keys[i], f.values[i], call.heads));
    }
    return out;
  }
};

// Denoisers expose a replaceable attention computation for every self-attention layer.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::string id() const = 0;
  virtual LatentShape latent_shape() const = 0;
  virtual int image_width() const = 0;
  virtual int image_height() const = 0;
  virtual std::vector<LayerId> attention_layers() const = 0;
  virtual bool supports_attention_processor() const { return true; }
  // nullptr restores the built-in attention.
  virtual void set_attention_processor(std::shared_ptr<AttentionProcessor> processor) = 0;
  virtual std::shared_ptr<AttentionProcessor> attention_processor() const = 0;
  virtual Conditioning encode_prompt(const std::string& prompt) const = 0;
  // Denoised estimate for each latent of the batch at the given step.
  virtual std::vector<Latent> predict(std::span<const Latent> latents, std::span<const Conditioning> cond,
                                      int step, int total_steps) = 0;
  virtual Image decode(const Latent& latent) const = 0;
};

// Supplies the logit bias for query image i of an N-image batch with P positions.
using BiasProvider = std::function<SharedAttentionBias(std::size_t image, std::size_t images, std::size_t positions)>;

// Similarity plus optional per-image latent masks (empty = every position open).
struct SharingBias {
  SimilarityMatrix similarity;
  std::vector<std::vector<std::uint8_t>> masks;

  SharedAttentionBias operator()(std::size_t image, std::size_t images, std::size_t positions) const {
    if (similarity.size() != images) {
      throw ShapeMismatch("similarity is " + std::to_string(similarity.size()) + "x" +
                          std::to_string(similarity.size()) + " for a batch of " + std::to_string(images));
    }
    if (!masks.empty() && masks.size() != images) throw ShapeMismatch("mask count differs from batch size");
    return build_bias(similarity, masks, image, positions);
  }
};

struct TraceEntry {
  int step = 0;
  std::string layer;
  bool shared = false;

  bool operator==(const TraceEntry&) const = default;
};

// Routes each call either to shared attention (with the provider's bias) or to plain attention,
// and records the decision.
class SharedAttentionProcessor : public AttentionProcessor {
 public:
  SharedAttentionProcessor(AttentionSchedule schedule, BiasProvider bias)
      : schedule_(std::move(schedule)), bias_(std::move(bias)) {
    schedule_.check();
  }

  std::vector<Matrix> process(const AttentionCall& call) override {
    const bool shared = attention_router(schedule_, call.step, call.layer);
    trace_.push_back({call.step, call.layer.name(), shared});
    if (!shared) return StandardAttention{}.process(call);
    const auto& f = call.features;
    f.check_shapes();
    std::vector<Matrix> out;
    out.reserve(f.images());
    for (std::size_t i = 0; i < f.images(); ++i) {
      out.push_back(shared_attention_multihead<float>(f, bias_for(i, f.images(), f.positions()), call.heads));
    }
    return out;
  }

  const std::vector<TraceEntry>& trace() const { return trace_; }
  void clear_trace() { trace_.clear(); }
  const AttentionSchedule& schedule() const { return schedule_; }

 private:
  const SharedAttentionBias& bias_for(std::size_t i, std::size_t n, std::size_t p) {
    const auto key = std::make_tuple(i, n, p);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, bias_(i, n, p)).first;
    return it->second;
  }

  AttentionSchedule schedule_;
  BiasProvider bias_;
  std::vector<TraceEntry> trace_;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, SharedAttentionBias> cache_;
};

inline std::shared_ptr<SharedAttentionProcessor> install_processor(Denoiser& denoiser, AttentionSchedule schedule,
                                                                   BiasProvider bias) {
  if (!denoiser.supports_attention_processor()) {
    throw UnsupportedBackend(denoiser.id() + " does not expose replaceable self-attention");
  }
  auto proc = std::make_shared<SharedAttentionProcessor>(std::move(schedule), std::move(bias));
  denoiser.set_attention_processor(proc);
  return proc;
}

// ---------------------------------------------------------------------------
// Sampling

struct BackendConfig {
  std::string backend = "toy";
  int total_steps = 20;
  double guidance_scale = 1.0;
  AttentionSchedule schedule;

  void check() const {
    schedule.check();
    if (total_steps != schedule.total_steps) {
      throw PreconditionViolation("backend total_steps " + std::to_string(total_steps) +
                                  " differs from schedule total_steps " + std::to_string(schedule.total_steps));
    }
  }
};

struct GenerationResult {
  std::vector<Image> images;
  std::vector<Latent> latents;
  std::vector<std::string> prompts;
  std::vector<std::uint64_t> seeds;
  std::vector<TraceEntry> trace;  // empty when no processor was installed
};

// Standard normal draws from a 64-bit Mersenne Twister via Box-Muller (std::normal_distribution is
// implementation-defined).
inline Latent gaussian_latent(std::uint64_t seed, std::size_t count) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  Latent out(count);
  constexpr double two_pi = 6.283185307179586476925286766559;
  for (std::size_t k = 0; k < count; k += 2) {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double t = two_pi * uniform();
    out[k] = static_cast<float>(r * std::cos(t));
    if (k + 1 < count) out[k + 1] = static_cast<float>(r * std::sin(t));
  }
  return out;
}

namespace detail {

// Restores the denoiser's previous processor on scope exit.
class ProcessorGuard {
 public:
  explicit ProcessorGuard(Denoiser& d) : d_(d), saved_(d.attention_processor()) {}
  ~ProcessorGuard() { d_.set_attention_processor(saved_); }
  ProcessorGuard(const ProcessorGuard&) = delete;
  ProcessorGuard& operator=(const ProcessorGuard&) = delete;

 private:
  Denoiser& d_;
  std::shared_ptr<AttentionProcessor> saved_;
};

}  // namespace detail

// Runs the full sampling loop for N prompts, one seed per image. With `sharing` unset the denoiser
// runs unhooked; otherwise the shared-attention processor is installed for the whole session and the
// bias for each query image is rebuilt from `sharing`. Classifier-free guidance runs a second,
// unconditioned batch that shares attention the same way.
inline GenerationResult generate_sequence(Denoiser& denoiser, const std::vector<std::string>& prompts,
                                          const std::vector<std::uint64_t>& seeds,
                                          const std::optional<SharingBias>& sharing, const BackendConfig& config) {
  config.check();
  const std::size_t n = prompts.size();
  if (n == 0) throw PreconditionViolation("no prompts");
  if (seeds.size() != n) throw PreconditionViolation("need exactly one seed per prompt");
  if (sharing) {
    if (sharing->similarity.size() != n) throw ShapeMismatch("similarity matrix does not match prompt count");
    if (!sharing->masks.empty() && sharing->masks.size() != n) throw ShapeMismatch("mask count differs");
  }

  const auto shape = denoiser.latent_shape();
  std::vector<Conditioning> cond;
  for (const auto& p : prompts) cond.push_back(denoiser.encode_prompt(p));
  const bool guided = config.guidance_scale != 1.0;
  std::vector<Conditioning> uncond;
  if (guided) uncond.assign(n, denoiser.encode_prompt(""));

  detail::ProcessorGuard guard(denoiser);
  std::shared_ptr<SharedAttentionProcessor> proc;
  if (sharing) {
    proc = install_processor(denoiser, config.schedule, *sharing);
  } else {
    denoiser.set_attention_processor(nullptr);
  }

  std::vector<Latent> x;
  for (auto s : seeds) x.push_back(gaussian_latent(s, shape.size()));

  const int T = config.total_steps;
  const float g = static_cast<float>(config.guidance_scale);
  for (int step = 0; step < T; ++step) {
    auto x0 = denoiser.predict(x, cond, step, T);
    if (x0.size() != n) throw BackendError("denoiser returned a batch of the wrong size");
    if (guided) {
      auto x0u = denoiser.predict(x, uncond, step, T);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < x0[i].size(); ++k) x0[i][k] = x0u[i][k] + g * (x0[i][k] - x0u[i][k]);
      }
    }
    // Move a 1/(T - step) fraction towards the estimate; the last step lands on it.
    const float frac = 1.0f / static_cast<float>(T - step);
    for (std::size_t i = 0; i < n; ++i) {
      if (x0[i].size() != shape.size()) throw BackendError("denoiser returned a latent of the wrong size");
      for (std::size_t k = 0; k < x[i].size(); ++k) x[i][k] += frac * (x0[i][k] - x[i][k]);
    }
  }

  GenerationResult res;
  res.prompts = prompts;
  res.seeds = seeds;
  for (const auto& lat : x) res.images.push_back(denoiser.decode(lat));
  res.latents = std::move(x);
  if (proc) res.trace = proc->trace();
  return res;
}

}  // namespace stepviz
