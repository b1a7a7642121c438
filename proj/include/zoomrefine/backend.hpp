// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "zoomrefine/protocol.hpp"

namespace zoomrefine {

struct BackendConfig {
    /// Full URL of an OpenAI-compatible chat completions endpoint.
    std::string endpoint_url = "http://127.0.0.1:8000/v1/chat/completions";
    std::string model_name = "default";
    /// Environment variable holding the bearer token; unset variable means
    /// no Authorization header.
    std::string api_key_env_var = "OPENAI_API_KEY";
    double request_timeout_s = 120.0;
    int max_retries = 3;
    double retry_backoff_base_s = 1.0;
    double temperature = 0.0;
    int max_output_tokens = 1024;

    /// Throws InvalidArgument.
    void validate() const;
};

struct ModelReply {
    std::string text;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    double latency_ms = 0.0;
    int attempt_count = 1;
};

/// The model boundary: a conversation in, assistant text out.
/// Implementations must be safe to call from several threads at once.
class Backend {
public:
    virtual ~Backend() = default;
    virtual ModelReply complete(const Conversation& conv) = 0;
};

// ---- wire format (OpenAI-compatible chat completions) ----

/// Request body: {model, messages[{role, content[{type:text|image_url}]}],
/// temperature, max_tokens}. Images become base64 data URLs.
nlohmann::json to_wire_request(const Conversation& conv, const BackendConfig& cfg);
/// Inverse of to_wire_request's `messages`; throws InvalidArgument.
Conversation from_wire_request(const nlohmann::json& body);
/// Reads choices[0].message.content and usage; throws MalformedResponse.
ModelReply parse_wire_response(std::string_view body);
nlohmann::json to_wire_response(const ModelReply& reply, std::string_view model);

/// Rough token estimate (4 bytes per text token, fixed cost per image).
std::int64_t estimate_prompt_tokens(const Conversation& conv);
std::int64_t estimate_text_tokens(std::string_view text);

/// Delay before retry number `retry` (0-based): base * 2^retry, scaled by a
/// jitter factor in [1, 1.5).
double backoff_seconds(double base, int retry, double jitter_unit);
/// Upper bound on the summed backoff of a call that exhausts its retries.
double max_total_backoff_seconds(const BackendConfig& cfg);

class HttpBackend final : public Backend {
public:
    using Sleeper = std::function<void(std::chrono::duration<double>)>;

    explicit HttpBackend(BackendConfig cfg);
    /// `sleeper` replaces std::this_thread::sleep_for between retries.
    HttpBackend(BackendConfig cfg, Sleeper sleeper);

    ModelReply complete(const Conversation& conv) override;
    const BackendConfig& config() const noexcept { return cfg_; }

private:
    BackendConfig cfg_;
    Sleeper sleeper_;
    std::string base_url_;
    std::string path_;
};

// ---- scripted mock ----

/// First matching rule wins. `stage` is 1 for single-image conversations
/// and 2 for two-image ones; `contains` must occur in the last user turn.
struct MockRule {
    std::optional<int> stage;
    std::string contains;
    std::string reply;
};

struct MockScript {
    std::vector<MockRule> rules;

    static MockScript from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Pure function of (conversation, script); throws ScriptError when no rule
/// matches.
ModelReply mock_complete(const Conversation& conv, const MockScript& script);

class ScriptedBackend final : public Backend {
public:
    explicit ScriptedBackend(MockScript script) : script_(std::move(script)) {}
    ModelReply complete(const Conversation& conv) override { return mock_complete(conv, script_); }

private:
    MockScript script_;
};

/// Forwards to another backend and counts calls.
class CountingBackend final : public Backend {
public:
    explicit CountingBackend(Backend& inner) : inner_(inner) {}
    ModelReply complete(const Conversation& conv) override {
        calls_.fetch_add(1, std::memory_order_relaxed);
        return inner_.complete(conv);
    }
    std::int64_t calls() const noexcept { return calls_.load(); }

private:
    Backend& inner_;
    std::atomic<std::int64_t> calls_{0};
};

/// Serves a Backend over the same wire contract HttpBackend speaks:
/// POST /v1/chat/completions, plus GET /health.
class ChatServer {
public:
    ChatServer(Backend& backend, std::string model_name);
    ~ChatServer();
    ChatServer(const ChatServer&) = delete;
    ChatServer& operator=(const ChatServer&) = delete;

    /// Binds (port 0 picks a free one) and serves on a background thread.
    /// Returns the bound port; throws Error when binding fails.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    /// Binds and serves on the calling thread until stop().
    void listen(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace zoomrefine
