// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include "zoomrefine/config.hpp"

#include <fstream>

#include "zoomrefine/error.hpp"

namespace zoomrefine {

namespace fs = std::filesystem;

namespace {

nlohmann::json path_json(const std::optional<fs::path>& p) {
    return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr);
}

std::optional<fs::path> read_path(const nlohmann::json& v, const fs::path& base) {
    if (v.is_null()) return std::nullopt;
    fs::path p(v.get<std::string>());
    if (p.is_relative() && !base.empty()) p = base / p;
    return p.lexically_normal();
}

void require_object(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
}

[[noreturn]] void unknown_key(const std::string& where, const std::string& key) {
    throw ConfigError("unknown config key: " + (where.empty() ? key : where + "." + key));
}

void read_crop(const nlohmann::json& j, CropPolicy& c) {
    require_object(j, "crop");
    for (const auto& [k, v] : j.items()) {
        if (k == "expansion_factor") {
            c.expansion_factor = v.get<double>();
        } else if (k == "min_side_px") {
            c.min_side_px = v.get<int>();
        } else if (k == "max_side_px") {
            c.max_side_px = v.get<int>();
        } else {
            unknown_key("crop", k);
        }
    }
}

void read_transport(const nlohmann::json& j, PipelineConfig& p) {
    require_object(j, "transport");
    for (const auto& [k, v] : j.items()) {
        if (k == "format") {
            const auto f = v.get<std::string>();
            if (f == "png") {
                p.transport_format = ImageFormat::png;
            } else if (f == "jpeg") {
                p.transport_format = ImageFormat::jpeg;
            } else {
                throw ConfigError("transport.format must be png or jpeg, got " + f);
            }
        } else if (k == "jpeg_quality") {
            p.jpeg_quality = v.get<int>();
        } else {
            unknown_key("transport", k);
        }
    }
}

void read_backend(const nlohmann::json& j, RunConfig& c, const fs::path& base) {
    require_object(j, "backend");
    auto& b = c.pipeline.backend;
    for (const auto& [k, v] : j.items()) {
        if (k == "kind") {
            const auto kind = v.get<std::string>();
            if (kind == "http") {
                c.backend_kind = BackendKind::http;
            } else if (kind == "oracle") {
                c.backend_kind = BackendKind::oracle;
            } else {
                throw ConfigError("backend.kind must be http or oracle, got " + kind);
            }
        } else if (k == "endpoint_url") {
            b.endpoint_url = v.get<std::string>();
        } else if (k == "model_name") {
            b.model_name = v.get<std::string>();
        } else if (k == "api_key_env_var") {
            b.api_key_env_var = v.get<std::string>();
        } else if (k == "request_timeout_s") {
            b.request_timeout_s = v.get<double>();
        } else if (k == "max_retries") {
            b.max_retries = v.get<int>();
        } else if (k == "retry_backoff_base_s") {
            b.retry_backoff_base_s = v.get<double>();
        } else if (k == "temperature") {
            b.temperature = v.get<double>();
        } else if (k == "max_output_tokens") {
            b.max_output_tokens = v.get<int>();
        } else if (k == "scenes_path") {
            c.scenes_path = read_path(v, base);
        } else {
            unknown_key("backend", k);
        }
    }
}

}  // namespace

void RunConfig::finalize() {
    try {
        if (templates_path) pipeline.templates = PromptTemplates::load(*templates_path);
        pipeline.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
    if (backend_kind == BackendKind::oracle && !scenes_path) {
        throw ConfigError("backend.kind oracle needs backend.scenes_path");
    }
    try {
        oracle.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("oracle: ") + e.what());
    }
}

nlohmann::json run_config_to_json(const RunConfig& c) {
    const auto& p = c.pipeline;
    const auto& b = p.backend;
    return {
        {"mode", std::string(to_string(p.mode))},
        {"downsample_max_side", p.downsample_max_side},
        {"crop",
         {{"expansion_factor", p.crop_policy.expansion_factor},
          {"min_side_px", p.crop_policy.min_side_px},
          {"max_side_px", p.crop_policy.max_side_px}}},
        {"templates_path", path_json(c.templates_path)},
        {"transport",
         {{"format", p.transport_format == ImageFormat::png ? "png" : "jpeg"}, {"jpeg_quality", p.jpeg_quality}}},
        {"backend",
         {{"kind", c.backend_kind == BackendKind::http ? "http" : "oracle"},
          {"endpoint_url", b.endpoint_url},
          {"model_name", b.model_name},
          {"api_key_env_var", b.api_key_env_var},
          {"request_timeout_s", b.request_timeout_s},
          {"max_retries", b.max_retries},
          {"retry_backoff_base_s", b.retry_backoff_base_s},
          {"temperature", b.temperature},
          {"max_output_tokens", b.max_output_tokens},
          {"scenes_path", path_json(c.scenes_path)}}},
        {"oracle", mockworld::oracle_config_to_json(c.oracle)},
        {"dataset", path_json(c.dataset)},
        {"image_root", path_json(c.image_root)},
        {"parallelism", c.parallelism},
        {"cache_dir", path_json(c.cache_dir)},
        {"output_dir", c.output_dir.string()},
        {"resume", c.resume},
    };
}

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir, RunConfig c) {
    require_object(j, "config");
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "mode") {
                c.pipeline.mode = mode_from_string(v.get<std::string>());
            } else if (k == "downsample_max_side") {
                c.pipeline.downsample_max_side = v.get<int>();
            } else if (k == "crop") {
                read_crop(v, c.pipeline.crop_policy);
            } else if (k == "templates_path") {
                c.templates_path = read_path(v, base_dir);
            } else if (k == "transport") {
                read_transport(v, c.pipeline);
            } else if (k == "backend") {
                read_backend(v, c, base_dir);
            } else if (k == "oracle") {
                c.oracle = mockworld::oracle_config_from_json(v);
            } else if (k == "dataset") {
                c.dataset = read_path(v, base_dir);
            } else if (k == "image_root") {
                c.image_root = read_path(v, base_dir);
            } else if (k == "parallelism") {
                c.parallelism = v.get<int>();
            } else if (k == "cache_dir") {
                c.cache_dir = read_path(v, base_dir);
            } else if (k == "output_dir") {
                if (v.is_null()) throw ConfigError("output_dir must not be null");
                c.output_dir = *read_path(v, base_dir);
            } else if (k == "resume") {
                c.resume = v.get<bool>();
            } else {
                unknown_key("", k);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j, path.parent_path());
}

}  // namespace zoomrefine
