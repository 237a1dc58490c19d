#pragma once

// Latent blobs: 8-byte little-endian header length, a JSON header
// {"dtype":"F32","shape":[h,w,c]}, then the values as little-endian float32.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "stepviz/backend.hpp"
#include "stepviz/error.hpp"

namespace stepviz {

inline std::vector<std::uint8_t> encode_latent(const Latent& latent, const LatentShape& shape) {
  if (latent.size() != shape.size()) throw ShapeMismatch("latent size does not match its shape");
  const std::string header =
      nlohmann::json{{"dtype", "F32"}, {"shape", {shape.height, shape.width, shape.channels}}}.dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + header.size() + 4 * latent.size());
  std::uint64_t len = header.size();
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(len >> (8 * b)));
  out.insert(out.end(), header.begin(), header.end());
  for (float v : latent) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return out;
}

struct DecodedLatent {
  LatentShape shape;
  Latent values;
};

inline DecodedLatent decode_latent(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw ParseError("latent blob too short");
  std::uint64_t len = 0;
  for (int b = 7; b >= 0; --b) len = (len << 8) | bytes[static_cast<std::size_t>(b)];
  if (len > bytes.size() - 8) throw ParseError("latent header length out of range");
  auto header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len),
                                      nullptr, false);
  if (header.is_discarded() || header.value("dtype", "") != "F32" || !header.contains("shape") ||
      header["shape"].size() != 3) {
    throw ParseError("bad latent header");
  }
  DecodedLatent d;
  d.shape = {header["shape"][0].get<int>(), header["shape"][1].get<int>(), header["shape"][2].get<int>()};
  const std::size_t off = 8 + static_cast<std::size_t>(len);
  if (bytes.size() - off != 4 * d.shape.size()) throw ParseError("latent payload size mismatch");
  d.values.resize(d.shape.size());
  for (std::size_t k = 0; k < d.values.size(); ++k) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) bits = (bits << 8) | bytes[off + 4 * k + static_cast<std::size_t>(b)];
    d.values[k] = std::bit_cast<float>(bits);
  }
  return d;
}

inline void write_latent(const std::filesystem::path& path, const Latent& latent, const LatentShape& shape) {
  write_file_bytes(path, encode_latent(latent, shape));
}

inline DecodedLatent read_latent(const std::filesystem::path& path) { return decode_latent(read_file_bytes(path)); }

}  // namespace stepviz
