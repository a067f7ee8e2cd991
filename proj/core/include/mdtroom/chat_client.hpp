#pragma once

#include <chrono>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdtroom {

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;
};

/// Raised when the remote endpoint is unreachable or replies with garbage.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  /// Returns the assistant message content.
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

struct ChatEndpoint {
  std::string base_url;     // e.g. "https://api.example.com/v1"
  std::string model;
  std::string api_key_env;  // name of the environment variable holding the key
  std::chrono::seconds timeout{120};
};

/// OpenAI-compatible chat-completions client.
class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(ChatEndpoint endpoint);
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  ChatEndpoint endpoint_;
};

}  // namespace mdtroom
