#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "stepviz/error.hpp"
#include "stepviz/image.hpp"
#include "stepviz/plan.hpp"

namespace stepviz {

// Labels whose regions take part in cross-image sharing, per step. A label is shared at step j
// when a non-new tag at step j points back to an earlier step, or when a later non-new tag points
// at step j. Fresh objects that nothing refers to contribute nothing.
inline std::vector<std::vector<std::string>> select_shared_objects(const Plan& plan) {
  const std::size_t n = plan.steps.size();
  std::vector<std::vector<std::string>> shared(n);
  auto add = [&](std::size_t step, const std::string& label) {
    auto& v = shared[step];
    if (std::find(v.begin(), v.end(), label) == v.end()) v.push_back(label);
  };
  for (std::size_t j = 0; j < n; ++j) {
    for (const auto& tag : plan.steps[j].objects) {
      if (tag.continuity == Continuity::fresh || !tag.reference_step) continue;
      const auto ref = *tag.reference_step;
      if (ref >= j) continue;
      add(ref, tag.label);
      add(j, tag.label);
    }
  }
  // Keep each step's labels in the order the plan lists them, referenced-only labels last.
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<std::string> ordered;
    for (const auto& tag : plan.steps[j].objects) {
      if (std::find(shared[j].begin(), shared[j].end(), tag.label) != shared[j].end() &&
          std::find(ordered.begin(), ordered.end(), tag.label) == ordered.end()) {
        ordered.push_back(tag.label);
      }
    }
    for (const auto& l : shared[j]) {
      if (std::find(ordered.begin(), ordered.end(), l) == ordered.end()) ordered.push_back(l);
    }
    shared[j] = std::move(ordered);
  }
  return shared;
}

// Max-pool onto an h×w grid: a cell is set iff any pixel it covers is set. Cell (r, c) covers rows
// [floor(r·H/h), ceil((r+1)·H/h)) and likewise for columns, so non-integral factors bin by area.
inline std::vector<std::uint8_t> downsample(const Bitmap& bm, int h, int w) {
  if (h <= 0 || w <= 0 || bm.height < h || bm.width < w) {
    throw ShapeMismatch("cannot pool " + std::to_string(bm.height) + "x" + std::to_string(bm.width) + " onto " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0);
  const long long H = bm.height;
  const long long W = bm.width;
  for (int r = 0; r < h; ++r) {
    const long long y0 = r * H / h;
    const long long y1 = ((r + 1) * H + h - 1) / h;
    for (int c = 0; c < w; ++c) {
      const long long x0 = c * W / w;
      const long long x1 = ((c + 1) * W + w - 1) / w;
      std::uint8_t on = 0;
      for (long long y = y0; y < y1 && !on; ++y) {
        for (long long x = x0; x < x1; ++x) {
          if (bm.at(static_cast<int>(y), static_cast<int>(x))) {
            on = 1;
            break;
          }
        }
      }
      out[static_cast<std::size_t>(r) * static_cast<std::size_t>(w) + static_cast<std::size_t>(c)] = on;
    }
  }
  return out;
}

struct ObjectMask {
  std::size_t step = 0;
  std::string label;
  Bitmap bitmap;
  std::vector<std::uint8_t> latent;  // latent_height × latent_width, row-major

  bool operator==(const ObjectMask&) const = default;
};

class SegmentationAdapter {
 public:
  virtual ~SegmentationAdapter() = default;
  // nullopt when the label is not found in the image.
  virtual std::optional<Bitmap> segment(const Image& image, std::size_t step, const std::string& label) = 0;
};

struct SegmentResult {
  std::vector<ObjectMask> masks;
  std::vector<std::string> missing;
};

inline SegmentResult segment(const Image& image, std::size_t step, const std::vector<std::string>& labels,
                             SegmentationAdapter& adapter, int latent_height, int latent_width) {
  if (image.width <= 0 || image.height <= 0) throw ImageFormatError("empty image");
  SegmentResult res;
  for (const auto& label : labels) {
    auto bm = adapter.segment(image, step, label);
    if (!bm) {
      std::clog << "warning: no mask for \"" << label << "\" at step " << step << '\n';
      res.missing.push_back(label);
      continue;
    }
    if (bm->width != image.width || bm->height != image.height) {
      throw AdapterError("mask for \"" + label + "\" is " + std::to_string(bm->width) + "x" +
                         std::to_string(bm->height) + ", image is " + std::to_string(image.width) + "x" +
                         std::to_string(image.height));
    }
    auto latent = downsample(*bm, latent_height, latent_width);
    res.masks.push_back({step, label, std::move(*bm), std::move(latent)});
  }
  return res;
}

// Per-step OR of the shared-object masks, at image and latent resolution.
struct RegionMaskSet {
  std::vector<Bitmap> bitmaps;
  std::vector<std::vector<std::uint8_t>> latents;
};

inline RegionMaskSet union_masks(std::size_t steps, const std::vector<ObjectMask>& masks, int width, int height,
                                 int latent_height, int latent_width) {
  RegionMaskSet set;
  set.bitmaps.assign(steps, Bitmap(width, height));
  set.latents.assign(steps, std::vector<std::uint8_t>(
                                static_cast<std::size_t>(latent_height) * static_cast<std::size_t>(latent_width), 0));
  for (const auto& m : masks) {
    if (m.step >= steps) throw IndexOutOfRange("mask step " + std::to_string(m.step));
    if (m.bitmap.width != width || m.bitmap.height != height) throw ShapeMismatch("mask bitmap size");
    if (m.latent.size() != set.latents[m.step].size()) throw ShapeMismatch("mask latent size");
    auto& bits = set.bitmaps[m.step].bits;
    for (std::size_t k = 0; k < bits.size(); ++k) bits[k] |= m.bitmap.bits[k];
    auto& lat = set.latents[m.step];
    for (std::size_t k = 0; k < lat.size(); ++k) lat[k] |= m.latent[k];
  }
  return set;
}

// ---------------------------------------------------------------------------
// On-disk layout: step{i}_{label}.png (8-bit gray, 0/255) plus index.json
// {"steps": {"<i>": {"<label>": "<file>"}}}.

inline std::string mask_file_name(std::size_t step, const std::string& label) {
  std::string safe;
  for (char ch : label) {
    const auto c = static_cast<unsigned char>(ch);
    safe.push_back(std::isalnum(c) ? static_cast<char>(std::tolower(c)) : '_');
  }
  return "step" + std::to_string(step) + "_" + safe + ".png";
}

inline nlohmann::ordered_json write_mask_set(const std::filesystem::path& dir, const std::vector<ObjectMask>& masks) {
  std::filesystem::create_directories(dir);
  std::map<std::size_t, std::map<std::string, std::string>> index;
  for (const auto& m : masks) {
    const auto name = mask_file_name(m.step, m.label);
    write_png(dir / name, bitmap_to_image(m.bitmap));
    index[m.step][m.label] = name;
  }
  nlohmann::ordered_json steps = nlohmann::ordered_json::object();
  for (const auto& [step, labels] : index) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [label, file] : labels) j[label] = file;
    steps[std::to_string(step)] = std::move(j);
  }
  nlohmann::ordered_json doc = {{"steps", steps}};
  std::ofstream(dir / "index.json") << doc.dump(2) << '\n';
  return doc;
}

// Replays masks recorded in the on-disk layout.
class FixtureSegmenter : public SegmentationAdapter {
 public:
  explicit FixtureSegmenter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::ifstream in(dir_ / "index.json");
    if (!in) throw AdapterError("missing mask index " + (dir_ / "index.json").string());
    auto doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.contains("steps") || !doc["steps"].is_object()) {
      throw AdapterError("malformed mask index " + (dir_ / "index.json").string());
    }
    for (const auto& [step, labels] : doc["steps"].items()) {
      for (const auto& [label, file] : labels.items()) {
        files_[std::stoul(step)][label] = file.get<std::string>();
      }
    }
  }

  std::optional<Bitmap> segment(const Image&, std::size_t step, const std::string& label) override {
    auto s = files_.find(step);
    if (s == files_.end()) return std::nullopt;
    auto f = s->second.find(label);
    if (f == s->second.end()) return std::nullopt;
    return image_to_bitmap(read_png(dir_ / f->second));
  }

 private:
  std::filesystem::path dir_;
  std::map<std::size_t, std::map<std::string, std::string>> files_;
};

}  // namespace stepviz
