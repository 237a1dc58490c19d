#pragma once

// HTTP adapters. Kept out of the umbrella header so that only translation
// units which talk to the network pay for httplib.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
// <resolv.h>, pulled in by httplib, defines _res, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif

#include <cstdlib>
#include <string>
#include <utility>

#include <json.hpp>

#include "stepviz/chat.hpp"
#include "stepviz/digest.hpp"
#include "stepviz/error.hpp"
#include "stepviz/image.hpp"
#include "stepviz/masks.hpp"

namespace stepviz {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // begins with '/'
};

inline Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

// Reads the credential from the environment at call time; nothing is stored on disk.
inline std::string bearer_from_env(const std::string& var) {
  if (var.empty()) return {};
  const char* v = std::getenv(var.c_str());
  return v ? std::string(v) : std::string();
}

namespace detail {

// POSTs a JSON body, retrying transport failures and 5xx answers. Returns the 200 body.
inline std::string post_json(const Endpoint& ep, const std::string& url, const httplib::Headers& headers,
                             const std::string& body, int max_retries, int timeout_seconds) {
  httplib::Client cli(ep.origin);
  cli.set_read_timeout(timeout_seconds, 0);
  cli.set_connection_timeout(10, 0);
  std::string last_error;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    auto res = cli.Post(ep.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw ClientError("HTTP " + std::to_string(res->status) + " from " + url + ": " + res->body);
    }
    return res->body;
  }
  throw ClientError(url + " failed after retries: " + last_error);
}

}  // namespace detail

// OpenAI-compatible chat completions endpoint. Images travel as PNG data URIs.
class RemoteChatClient : public ChatClient {
 public:
  struct Options {
    std::string endpoint;  // full URL of the completions route
    std::string model;
    std::string api_key_env = "OPENAI_API_KEY";
    int max_retries = 2;
    int timeout_seconds = 120;
    double temperature = 0.0;
  };

  explicit RemoteChatClient(Options opts) : opts_(std::move(opts)), ep_(split_endpoint(opts_.endpoint)) {}

  nlohmann::json request_body(std::span<const ChatMessage> messages) const {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) {
      nlohmann::json jm;
      jm["role"] = m.role;
      if (m.images.empty()) {
        jm["content"] = m.content;
      } else {
        nlohmann::json parts = nlohmann::json::array();
        parts.push_back({{"type", "text"}, {"text", m.content}});
        for (const auto& img : m.images) {
          parts.push_back({{"type", "image_url"},
                           {"image_url", {{"url", "data:image/png;base64," + base64_encode(img)}}}});
        }
        jm["content"] = std::move(parts);
      }
      msgs.push_back(std::move(jm));
    }
    return {{"model", opts_.model}, {"messages", std::move(msgs)}, {"temperature", opts_.temperature}};
  }

  std::string complete(std::span<const ChatMessage> messages) override {
    httplib::Headers headers;
    if (auto key = bearer_from_env(opts_.api_key_env); !key.empty()) {
      headers.emplace("Authorization", "Bearer " + key);
    }
    const auto reply = detail::post_json(ep_, opts_.endpoint, headers, request_body(messages).dump(),
                                         opts_.max_retries, opts_.timeout_seconds);
    try {
      auto j = nlohmann::json::parse(reply);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ClientError(std::string("unexpected completion payload: ") + e.what());
    }
  }

 private:
  Options opts_;
  Endpoint ep_;
};

// Open-vocabulary segmentation service.
// Request {"image_png_base64", "label"}; reply {"mask_png_base64": <png> | null}.
class RemoteSegmenter : public SegmentationAdapter {
 public:
  struct Options {
    std::string endpoint;
    int max_retries = 2;
    int timeout_seconds = 60;
  };

  explicit RemoteSegmenter(Options opts) : opts_(std::move(opts)), ep_(split_endpoint(opts_.endpoint)) {}

  std::optional<Bitmap> segment(const Image& image, std::size_t, const std::string& label) override {
    const nlohmann::json req = {{"image_png_base64", base64_encode(encode_png(image))}, {"label", label}};
    std::string reply;
    try {
      reply = detail::post_json(ep_, opts_.endpoint, {}, req.dump(), opts_.max_retries, opts_.timeout_seconds);
    } catch (const ClientError& e) {
      throw AdapterError(std::string("segmenter: ") + e.what());
    }
    auto j = nlohmann::json::parse(reply, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("mask_png_base64")) {
      throw AdapterError("segmenter reply lacks mask_png_base64");
    }
    const auto& m = j["mask_png_base64"];
    if (m.is_null()) return std::nullopt;
    if (!m.is_string()) throw AdapterError("segmenter mask is not a string");
    return image_to_bitmap(decode_png(base64_decode(m.get<std::string>())));
  }

 private:
  Options opts_;
  Endpoint ep_;
};

}  // namespace stepviz
