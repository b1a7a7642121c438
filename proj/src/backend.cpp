// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include "zoomrefine/backend.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <regex>
#include <thread>

#include "zoomrefine/error.hpp"
#include "zoomrefine/hash.hpp"

namespace zoomrefine {

namespace {

constexpr std::int64_t kTokensPerImage = 256;

Role role_from_string(const std::string& s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    throw InvalidArgument("unknown message role: " + s);
}

size_t last_user_turn(const Conversation& conv) {
    for (size_t i = conv.turns.size(); i-- > 0;) {
        if (conv.turns[i].role == Role::user) return i;
    }
    return conv.turns.size();
}

template <typename Rep, typename Period>
std::chrono::microseconds to_us(std::chrono::duration<Rep, Period> d) {
    return std::chrono::duration_cast<std::chrono::microseconds>(d);
}

}  // namespace

void BackendConfig::validate() const {
    if (max_retries < 0) throw InvalidArgument("max_retries must be >= 0");
    if (!(request_timeout_s > 0)) throw InvalidArgument("request_timeout must be > 0");
    if (retry_backoff_base_s < 0) throw InvalidArgument("retry_backoff_base must be >= 0");
    if (max_output_tokens < 1) throw InvalidArgument("max_output_tokens must be >= 1");
    if (!std::isfinite(temperature) || temperature < 0) throw InvalidArgument("temperature must be >= 0");
}

nlohmann::json to_wire_request(const Conversation& conv, const BackendConfig& cfg) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& turn : conv.turns) {
        nlohmann::json content = nlohmann::json::array();
        for (const auto& img : turn.images) {
            content.push_back({{"type", "image_url"},
                               {"image_url",
                                {{"url", "data:" + img.media_type + ";base64," + base64_encode(img.bytes)}}}});
        }
        content.push_back({{"type", "text"}, {"text", turn.text}});
        messages.push_back({{"role", std::string(to_string(turn.role))}, {"content", std::move(content)}});
    }
    return {{"model", cfg.model_name},
            {"messages", std::move(messages)},
            {"temperature", cfg.temperature},
            {"max_tokens", cfg.max_output_tokens}};
}

Conversation from_wire_request(const nlohmann::json& body) {
    Conversation conv;
    try {
        for (const auto& m : body.at("messages")) {
            Turn turn;
            turn.role = role_from_string(m.at("role").get<std::string>());
            const auto& content = m.at("content");
            if (content.is_string()) {
                turn.text = content.get<std::string>();
            } else {
                for (const auto& part : content) {
                    const auto type = part.at("type").get<std::string>();
                    if (type == "text") {
                        if (!turn.text.empty()) turn.text += "\n";
                        turn.text += part.at("text").get<std::string>();
                    } else if (type == "image_url") {
                        const auto url = part.at("image_url").at("url").get<std::string>();
                        static const std::regex kDataUrl(R"(^data:([^;,]+);base64,)");
                        std::smatch m2;
                        if (!std::regex_search(url, m2, kDataUrl)) {
                            throw InvalidArgument("image_url must be a base64 data URL");
                        }
                        turn.images.push_back(
                            {base64_decode(std::string_view(url).substr(m2.length(0))), m2[1].str()});
                    } else {
                        throw InvalidArgument("unsupported content part type: " + type);
                    }
                }
            }
            conv.turns.push_back(std::move(turn));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("malformed chat request: ") + e.what());
    }
    return conv;
}

ModelReply parse_wire_response(std::string_view body) {
    ModelReply reply;
    try {
        const auto j = nlohmann::json::parse(body);
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw MalformedResponse("message content is not a string");
        reply.text = content.get<std::string>();
        if (j.contains("usage") && j["usage"].is_object()) {
            reply.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
            reply.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
        }
    } catch (const nlohmann::json::exception& e) {
        throw MalformedResponse(std::string("malformed chat response: ") + e.what());
    }
    return reply;
}

nlohmann::json to_wire_response(const ModelReply& reply, std::string_view model) {
    return {{"object", "chat.completion"},
            {"model", std::string(model)},
            {"choices",
             {{{"index", 0},
               {"message", {{"role", "assistant"}, {"content", reply.text}}},
               {"finish_reason", "stop"}}}},
            {"usage",
             {{"prompt_tokens", reply.prompt_tokens},
              {"completion_tokens", reply.completion_tokens},
              {"total_tokens", reply.prompt_tokens + reply.completion_tokens}}}};
}

std::int64_t estimate_text_tokens(std::string_view text) {
    return static_cast<std::int64_t>((text.size() + 3) / 4);
}

std::int64_t estimate_prompt_tokens(const Conversation& conv) {
    std::int64_t n = 0;
    for (const auto& t : conv.turns) {
        n += estimate_text_tokens(t.text) + kTokensPerImage * static_cast<std::int64_t>(t.images.size());
    }
    return n;
}

double backoff_seconds(double base, int retry, double jitter_unit) {
    return base * std::ldexp(1.0, retry) * (1.0 + 0.5 * std::clamp(jitter_unit, 0.0, 1.0));
}

double max_total_backoff_seconds(const BackendConfig& cfg) {
    double total = 0.0;
    for (int r = 0; r < cfg.max_retries; ++r) total += backoff_seconds(cfg.retry_backoff_base_s, r, 1.0);
    return total;
}

HttpBackend::HttpBackend(BackendConfig cfg)
    : HttpBackend(std::move(cfg), [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); }) {}

HttpBackend::HttpBackend(BackendConfig cfg, Sleeper sleeper)
    : cfg_(std::move(cfg)), sleeper_(std::move(sleeper)) {
    cfg_.validate();
    static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(cfg_.endpoint_url, m, kUrl)) {
        throw InvalidArgument("endpoint_url must look like http(s)://host[:port]/path: " + cfg_.endpoint_url);
    }
    base_url_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : "/v1/chat/completions";
}

ModelReply HttpBackend::complete(const Conversation& conv) {
    conv.validate_for_submission();
    const std::string body = to_wire_request(conv, cfg_).dump();

    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env_var.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    const auto timeout = to_us(std::chrono::duration<double>(cfg_.request_timeout_s));
    const auto sec = static_cast<time_t>(timeout.count() / 1000000);
    const auto usec = static_cast<time_t>(timeout.count() % 1000000);

    std::random_device rd;
    std::mt19937_64 jitter_rng(rd());
    std::uniform_real_distribution<double> jitter(0.0, 1.0);

    const auto start = std::chrono::steady_clock::now();
    std::string last_error;
    for (int attempt = 1; attempt <= cfg_.max_retries + 1; ++attempt) {
        httplib::Client client(base_url_);
        client.set_connection_timeout(sec, usec);
        client.set_read_timeout(sec, usec);
        client.set_write_timeout(sec, usec);

        auto res = client.Post(path_, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
        } else if (res->status >= 200 && res->status < 300) {
            ModelReply reply = parse_wire_response(res->body);
            reply.attempt_count = attempt;
            reply.latency_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            return reply;
        } else if (res->status == 401 || res->status == 403) {
            throw AuthError("endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
        } else if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
        } else {
            throw RequestRejected("endpoint rejected request (HTTP " + std::to_string(res->status) +
                                  "): " + res->body.substr(0, 200));
        }
        if (attempt <= cfg_.max_retries) {
            sleeper_(std::chrono::duration<double>(
                backoff_seconds(cfg_.retry_backoff_base_s, attempt - 1, jitter(jitter_rng))));
        }
    }
    throw BackendUnavailable("backend unavailable after " + std::to_string(cfg_.max_retries + 1) +
                             " attempts; last error: " + last_error);
}

MockScript MockScript::from_json(const nlohmann::json& j) {
    MockScript s;
    try {
        for (const auto& r : j.at("rules")) {
            MockRule rule;
            if (r.contains("stage") && !r["stage"].is_null()) rule.stage = r["stage"].get<int>();
            rule.contains = r.value("contains", std::string());
            rule.reply = r.at("reply").get<std::string>();
            s.rules.push_back(std::move(rule));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ScriptError(std::string("malformed mock script: ") + e.what());
    }
    return s;
}

nlohmann::json MockScript::to_json() const {
    nlohmann::json rules_json = nlohmann::json::array();
    for (const auto& r : rules) {
        nlohmann::json o = {{"contains", r.contains}, {"reply", r.reply}};
        o["stage"] = r.stage ? nlohmann::json(*r.stage) : nlohmann::json(nullptr);
        rules_json.push_back(std::move(o));
    }
    return {{"rules", rules_json}};
}

ModelReply mock_complete(const Conversation& conv, const MockScript& script) {
    conv.validate_for_submission();
    const int stage = conv.image_count() >= 2 ? 2 : 1;
    const std::string& last_text = conv.turns[last_user_turn(conv)].text;
    for (const auto& rule : script.rules) {
        if (rule.stage && *rule.stage != stage) continue;
        if (!rule.contains.empty() && last_text.find(rule.contains) == std::string::npos) continue;
        ModelReply reply;
        reply.text = rule.reply;
        reply.prompt_tokens = estimate_prompt_tokens(conv);
        reply.completion_tokens = estimate_text_tokens(reply.text);
        return reply;
    }
    throw ScriptError("no mock rule matches a stage-" + std::to_string(stage) + " conversation");
}

}  // namespace zoomrefine

namespace zoomrefine {

struct ChatServer::Impl {
    Backend& backend;
    std::string model;
    httplib::Server server;
    std::thread thread;

    Impl(Backend& b, std::string m) : backend(b), model(std::move(m)) {
        server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("{\"status\":\"ok\"}", "application/json");
        });
        server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            auto fail = [&](int status, const std::string& type, const std::string& msg) {
                res.status = status;
                const nlohmann::json err = {{"error", {{"type", type}, {"message", msg}}}};
                res.set_content(err.dump(), "application/json");
            };
            try {
                const auto body = nlohmann::json::parse(req.body);
                const Conversation conv = from_wire_request(body);
                const ModelReply reply = backend.complete(conv);
                res.set_content(to_wire_response(reply, body.value("model", model)).dump(), "application/json");
            } catch (const nlohmann::json::exception& e) {
                fail(400, "invalid_request_error", e.what());
            } catch (const InvalidArgument& e) {
                fail(400, "invalid_request_error", e.what());
            } catch (const ScriptError& e) {
                fail(400, "invalid_request_error", e.what());
            } catch (const UnknownScene& e) {
                fail(400, "invalid_request_error", e.what());
            } catch (const std::exception& e) {
                fail(500, "server_error", e.what());
            }
        });
    }
};

ChatServer::ChatServer(Backend& backend, std::string model_name)
    : impl_(std::make_unique<Impl>(backend, std::move(model_name))) {}

ChatServer::~ChatServer() { stop(); }

int ChatServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) throw Error("cannot bind chat server to " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void ChatServer::listen(const std::string& host, int port) {
    if (!impl_->server.listen(host, port)) {
        throw Error("cannot serve on " + host + ":" + std::to_string(port));
    }
}

void ChatServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace zoomrefine
