// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "zoomrefine/mockworld.hpp"
#include "zoomrefine/pipeline.hpp"

namespace zoomrefine {

enum class BackendKind { http, oracle };

/// Everything a command needs, read from one JSON file. Relative paths in
/// the file resolve against the file's directory.
///
///   {"mode", "downsample_max_side",
///    "crop": {"expansion_factor", "min_side_px", "max_side_px"},
///    "templates_path",
///    "transport": {"format": "png"|"jpeg", "jpeg_quality"},
///    "backend": {"kind": "http"|"oracle", "endpoint_url", "model_name",
///                "api_key_env_var", "request_timeout_s", "max_retries",
///                "retry_backoff_base_s", "temperature", "max_output_tokens",
///                "scenes_path"},
///    "oracle": {see OracleConfig},
///    "dataset", "image_root", "parallelism", "cache_dir", "output_dir",
///    "resume"}
struct RunConfig {
    PipelineConfig pipeline;
    std::optional<std::filesystem::path> templates_path;
    BackendKind backend_kind = BackendKind::http;
    /// Ground truth for the in-process oracle backend.
    std::optional<std::filesystem::path> scenes_path;
    mockworld::OracleConfig oracle;
    std::optional<std::filesystem::path> dataset;
    std::optional<std::filesystem::path> image_root;
    int parallelism = 1;
    /// Defaults to <output_dir>/cache.
    std::optional<std::filesystem::path> cache_dir;
    std::filesystem::path output_dir = "zoomrefine-out";
    bool resume = true;

    /// Loads templates_path into pipeline.templates and validates the
    /// whole configuration. Throws ConfigError.
    void finalize();
    std::filesystem::path effective_cache_dir() const {
        return cache_dir ? *cache_dir : output_dir / "cache";
    }
};

nlohmann::json run_config_to_json(const RunConfig& c);
/// Applies the keys present in `j` on top of `base`; unknown keys are
/// rejected. Throws ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                               RunConfig base = {});
/// Throws ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace zoomrefine
