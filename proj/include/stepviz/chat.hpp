#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stepviz/digest.hpp"
#include "stepviz/error.hpp"

namespace stepviz {

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;
  std::vector<std::vector<std::uint8_t>> images;  // PNG-encoded attachments, in order

  bool operator==(const ChatMessage&) const = default;
};

using ChatMessages = std::vector<ChatMessage>;

// Messages in, text out. Implementations must be safe to call concurrently.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(std::span<const ChatMessage> messages) = 0;
};

// Stable text form of a request. Attachments enter by digest so keys stay short.
inline std::string canonical_request(std::span<const ChatMessage> messages) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& m : messages) {
    nlohmann::ordered_json j;
    j["role"] = m.role;
    j["content"] = m.content;
    if (!m.images.empty()) {
      auto imgs = nlohmann::ordered_json::array();
      for (const auto& img : m.images) imgs.push_back(sha256_hex(img));
      j["images"] = std::move(imgs);
    }
    arr.push_back(std::move(j));
  }
  return arr.dump();
}

inline std::string request_key(std::span<const ChatMessage> messages) {
  return sha256_hex(canonical_request(messages));
}

// One file per request: <dir>/<hex key>, body = raw response bytes.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path_for(const std::string& key) const { return dir_ / key; }

  std::optional<std::string> load(const std::string& key) const {
    std::ifstream in(path_for(key), std::ios::binary);
    if (!in) return std::nullopt;
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  void store(const std::string& key, const std::string& body) {
    std::lock_guard lock(mutex_);
    std::filesystem::create_directories(dir_);
    const auto final_path = path_for(key);
    auto tmp = final_path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw ClientError("cannot write cache entry " + tmp.string());
      out << body;
    }
    std::filesystem::rename(tmp, final_path);
  }

 private:
  std::filesystem::path dir_;
  std::mutex mutex_;
};

// Replays recorded responses stored in the cache layout; never touches the network.
class FixtureChatClient : public ChatClient {
 public:
  explicit FixtureChatClient(std::filesystem::path dir) : cache_(std::move(dir)) {}

  std::string complete(std::span<const ChatMessage> messages) override {
    const auto key = request_key(messages);
    if (auto hit = cache_.load(key)) return *hit;
    throw ClientError("no recorded response " + cache_.path_for(key).string());
  }

 private:
  ResponseCache cache_;
};

// Read-through cache in front of another client.
class CachedChatClient : public ChatClient {
 public:
  CachedChatClient(std::shared_ptr<ChatClient> inner, std::filesystem::path dir)
      : inner_(std::move(inner)), cache_(std::move(dir)) {}

  std::string complete(std::span<const ChatMessage> messages) override {
    const auto key = request_key(messages);
    if (auto hit = cache_.load(key)) return *hit;
    if (!inner_) throw ClientError("cache miss and no client configured: " + cache_.path_for(key).string());
    auto body = inner_->complete(messages);
    cache_.store(key, body);
    return body;
  }

  ResponseCache& cache() { return cache_; }

 private:
  std::shared_ptr<ChatClient> inner_;
  ResponseCache cache_;
};

class FunctionChatClient : public ChatClient {
 public:
  using Fn = std::function<std::string(std::span<const ChatMessage>)>;
  explicit FunctionChatClient(Fn fn) : fn_(std::move(fn)) {}
  std::string complete(std::span<const ChatMessage> messages) override { return fn_(messages); }

 private:
  Fn fn_;
};

}  // namespace stepviz
