// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "zoomrefine/backend.hpp"
#include "zoomrefine/error.hpp"
#include "zoomrefine/imaging.hpp"
#include "zoomrefine/protocol.hpp"

namespace zoomrefine {

enum class Mode { baseline, zoom_refine };

std::string_view to_string(Mode mode) noexcept;
/// Throws InvalidArgument.
Mode mode_from_string(std::string_view s);

struct PipelineConfig {
    Mode mode = Mode::zoom_refine;
    int downsample_max_side = 1024;
    CropPolicy crop_policy;
    PromptTemplates templates = PromptTemplates::defaults();
    BackendConfig backend;
    ImageFormat transport_format = ImageFormat::png;
    int jpeg_quality = 90;

    void validate() const;
    /// Covers everything that can change a model reply: mode, geometry,
    /// templates, model name and sampling settings. Endpoint and retry
    /// settings are excluded.
    std::string hash() const;
};

struct Query {
    std::string id;
    std::string question;
    Options options;
};

enum class FallbackReason { no_bbox, crop_failed, stage2_unparsed };

std::string_view to_string(FallbackReason r) noexcept;

struct StageAnswer {
    std::string raw;
    std::optional<ChoiceLabel> label;
};

struct StageCost {
    double latency_ms = 0.0;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    int attempts = 0;
};

/// Full record of one run. `initial` holds the baseline answer in baseline
/// mode and the preliminary answer in zoom_refine mode.
struct PipelineTrace {
    static constexpr int kSchemaVersion = 1;

    std::string question_id;
    Mode mode = Mode::zoom_refine;
    Size original_size;
    Size downsampled_size;
    StageAnswer initial;

    std::optional<NormBBox> bbox;
    bool bbox_repaired = false;
    /// Crop rectangle on the original image after expansion and clamping.
    std::optional<PixelRect> pixel_rect;
    /// Size of the crop as sent to the backend.
    std::optional<Size> crop_presented_size;
    bool crop_resized = false;

    std::optional<FallbackReason> fallback_reason;
    std::string fallback_detail;
    /// Raw stage-2 reply, kept even when it could not be parsed.
    std::optional<std::string> refine_raw;

    StageAnswer final;
    bool revised = false;

    std::vector<StageCost> stages;
    int backend_calls = 0;
    std::string config_hash;
    /// Set by the harness when the record failed with an error.
    std::optional<std::string> error;

    std::int64_t total_tokens() const noexcept;
    double total_latency_ms() const noexcept;
};

nlohmann::json trace_to_json(const PipelineTrace& trace, bool include_timing = true);
/// Throws SchemaError.
PipelineTrace trace_from_json(const nlohmann::json& j);

/// Backend failure inside a pipeline stage.
class StageError : public BackendError {
public:
    StageError(int stage, std::string kind, const std::string& what)
        : BackendError("stage " + std::to_string(stage) + ": " + kind + ": " + what),
          stage_(stage), kind_(std::move(kind)) {}
    int stage() const noexcept { return stage_; }
    /// Class of the underlying error, e.g. "AuthError".
    const std::string& kind() const noexcept { return kind_; }

private:
    int stage_;
    std::string kind_;
};

/// A_base = M(downsample(I), Q). One backend call.
PipelineTrace run_baseline(const Image& img, const Query& query, const PipelineConfig& cfg,
                           Backend& backend);

/// Localized zoom then self-refinement; at most two backend calls. Imaging
/// failures and unusable replies fall back to the preliminary answer.
PipelineTrace run_zoom_refine(const Image& img, const Query& query, const PipelineConfig& cfg,
                              Backend& backend);

/// Dispatches on cfg.mode.
PipelineTrace run_pipeline(const Image& img, const Query& query, const PipelineConfig& cfg,
                           Backend& backend);

}  // namespace zoomrefine
