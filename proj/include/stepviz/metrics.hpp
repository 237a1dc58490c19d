#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "stepviz/digest.hpp"
#include "stepviz/error.hpp"
#include "stepviz/image.hpp"

namespace stepviz {

enum class MetricDirection { higher_better, lower_better };

struct MetricRecord {
  std::string name;  // clip_score, dreamsim or l2_dino
  double value = 0.0;
  MetricDirection direction = MetricDirection::higher_better;
  std::size_t samples = 0;

  bool operator==(const MetricRecord&) const = default;
};

inline MetricDirection metric_direction(const std::string& name) {
  if (name == "clip_score") return MetricDirection::higher_better;
  if (name == "dreamsim" || name == "l2_dino") return MetricDirection::lower_better;
  throw PreconditionViolation("unknown metric \"" + name + "\"");
}

class TextImageScorer {
 public:
  virtual ~TextImageScorer() = default;
  virtual double score(const Image& image, const std::string& prompt) = 0;
};

class ImageDistance {
 public:
  virtual ~ImageDistance() = default;
  virtual double distance(const Image& a, const Image& b) = 0;
};

// Unset adapters skip their metric.
struct MetricAdapters {
  std::shared_ptr<TextImageScorer> clip;
  std::shared_ptr<ImageDistance> dreamsim;
  std::shared_ptr<ImageDistance> dino;
};

inline std::string image_digest(const Image& img) {
  std::string key = std::to_string(img.width) + "x" + std::to_string(img.height) + "x" + std::to_string(img.channels);
  return sha256_hex(key + ":" + sha256_hex(img.pixels));
}

// Stand-ins with hash-derived values in [0, 1). Identical images are at distance exactly 0.
class MockTextImageScorer : public TextImageScorer {
 public:
  double score(const Image& image, const std::string& prompt) override {
    return static_cast<double>(hash64("clip:" + image_digest(image) + ":" + prompt) >> 11) * 0x1.0p-53;
  }
};

class MockImageDistance : public ImageDistance {
 public:
  explicit MockImageDistance(std::string salt) : salt_(std::move(salt)) {}
  double distance(const Image& a, const Image& b) override {
    auto da = image_digest(a);
    auto db = image_digest(b);
    if (da == db) return 0.0;
    if (db < da) std::swap(da, db);
    return (static_cast<double>(hash64(salt_ + ":" + da + ":" + db) >> 11) + 1.0) * 0x1.0p-53;
  }

 private:
  std::string salt_;
};

inline MetricAdapters mock_metric_adapters() {
  return {std::make_shared<MockTextImageScorer>(), std::make_shared<MockImageDistance>("dreamsim"),
          std::make_shared<MockImageDistance>("l2_dino")};
}

// clip_score averages over (image, prompt) pairs; the distances average over consecutive image pairs.
inline std::vector<MetricRecord> classic_metrics(const std::vector<Image>& sequence,
                                                 const std::vector<std::string>& prompts,
                                                 const MetricAdapters& adapters) {
  if (sequence.empty()) throw PreconditionViolation("empty image sequence");
  if (prompts.size() != sequence.size()) throw PreconditionViolation("one prompt per image required");
  std::vector<MetricRecord> out;
  if (adapters.clip) {
    double sum = 0.0;
    for (std::size_t k = 0; k < sequence.size(); ++k) sum += adapters.clip->score(sequence[k], prompts[k]);
    out.push_back({"clip_score", sum / static_cast<double>(sequence.size()), MetricDirection::higher_better,
                   sequence.size()});
  }
  auto pairwise = [&](const char* name, ImageDistance& d) {
    if (sequence.size() < 2) return;
    double sum = 0.0;
    const std::size_t pairs = sequence.size() - 1;
    for (std::size_t k = 0; k < pairs; ++k) sum += d.distance(sequence[k], sequence[k + 1]);
    out.push_back({name, sum / static_cast<double>(pairs), MetricDirection::lower_better, pairs});
  };
  if (adapters.dreamsim) pairwise("dreamsim", *adapters.dreamsim);
  if (adapters.dino) pairwise("l2_dino", *adapters.dino);
  return out;
}

inline nlohmann::ordered_json metrics_to_json(const std::vector<MetricRecord>& records) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    arr.push_back({{"name", r.name},
                   {"value", r.value},
                   {"direction", r.direction == MetricDirection::higher_better ? "higher" : "lower"},
                   {"samples", r.samples}});
  }
  return arr;
}

}  // namespace stepviz
