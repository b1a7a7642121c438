// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include "zoomrefine/pipeline.hpp"

#include <chrono>

#include "zoomrefine/hash.hpp"

namespace zoomrefine {

namespace {

struct StageResult {
    ModelReply reply;
    StageCost cost;
};

StageResult call_stage(Backend& backend, const Conversation& conv, int stage) {
    const auto start = std::chrono::steady_clock::now();
    ModelReply reply;
    try {
        reply = backend.complete(conv);
    } catch (const AuthError& e) {
        throw StageError(stage, "AuthError", e.what());
    } catch (const BackendUnavailable& e) {
        throw StageError(stage, "BackendUnavailable", e.what());
    } catch (const MalformedResponse& e) {
        throw StageError(stage, "MalformedResponse", e.what());
    } catch (const RequestRejected& e) {
        throw StageError(stage, "RequestRejected", e.what());
    } catch (const ScriptError& e) {
        throw StageError(stage, "ScriptError", e.what());
    } catch (const UnknownScene& e) {
        throw StageError(stage, "UnknownScene", e.what());
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, "BackendError", e.what());
    }
    StageCost cost;
    cost.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    cost.prompt_tokens = reply.prompt_tokens;
    cost.completion_tokens = reply.completion_tokens;
    cost.attempts = reply.attempt_count;
    return {std::move(reply), cost};
}

std::optional<Provenance> provenance_for(const Image& original, const PixelRect& region) {
    if (!original.source_id()) return std::nullopt;
    return Provenance{*original.source_id(), region, {original.width(), original.height()}};
}

PipelineTrace start_trace(const Image& img, const Query& query, const PipelineConfig& cfg, Mode mode) {
    cfg.validate();
    validate_options(query.options);
    PipelineTrace trace;
    trace.question_id = query.id;
    trace.mode = mode;
    trace.config_hash = cfg.hash();
    trace.original_size = {img.width(), img.height()};
    trace.downsampled_size = downsampled_size(img.width(), img.height(), cfg.downsample_max_side);
    return trace;
}

ImageAttachment downsampled_attachment(const Image& img, const PipelineConfig& cfg) {
    const Image ds = downsample(img, cfg.downsample_max_side);
    return make_attachment(ds, cfg.transport_format, cfg.jpeg_quality,
                           provenance_for(img, PixelRect::full(img.width(), img.height())));
}

nlohmann::json rect_json(const PixelRect& r) { return {r.left, r.top, r.right, r.bottom}; }
nlohmann::json size_json(const Size& s) { return {s.width, s.height}; }

nlohmann::json answer_json(const StageAnswer& a) {
    return {{"raw", a.raw}, {"label", a.label ? nlohmann::json(a.label->str()) : nlohmann::json(nullptr)}};
}

StageAnswer answer_from_json(const nlohmann::json& j) {
    StageAnswer a;
    a.raw = j.at("raw").get<std::string>();
    if (!j.at("label").is_null()) {
        const auto s = j.at("label").get<std::string>();
        if (s.size() != 1) throw SchemaError("answer label must be one letter");
        a.label = ChoiceLabel{s[0]};
    }
    return a;
}

}  // namespace

std::string_view to_string(Mode mode) noexcept {
    return mode == Mode::baseline ? "baseline" : "zoom_refine";
}

Mode mode_from_string(std::string_view s) {
    if (s == "baseline") return Mode::baseline;
    if (s == "zoom_refine") return Mode::zoom_refine;
    throw InvalidArgument("unknown mode '" + std::string(s) + "' (expected baseline or zoom_refine)");
}

std::string_view to_string(FallbackReason r) noexcept {
    switch (r) {
    case FallbackReason::no_bbox: return "no_bbox";
    case FallbackReason::crop_failed: return "crop_failed";
    case FallbackReason::stage2_unparsed: return "stage2_unparsed";
    }
    return "no_bbox";
}

void PipelineConfig::validate() const {
    if (downsample_max_side < 1) throw InvalidArgument("downsample_max_side must be >= 1");
    crop_policy.validate();
    backend.validate();
    templates.validate();
    if (transport_format == ImageFormat::jpeg && (jpeg_quality < 1 || jpeg_quality > 100)) {
        throw InvalidArgument("jpeg_quality must be in 1..100");
    }
}

std::string PipelineConfig::hash() const {
    const nlohmann::json canonical = {
        {"mode", std::string(to_string(mode))},
        {"downsample_max_side", downsample_max_side},
        {"crop", {{"expansion_factor", crop_policy.expansion_factor},
                  {"min_side_px", crop_policy.min_side_px},
                  {"max_side_px", crop_policy.max_side_px}}},
        {"templates", templates.hash()},
        {"model", backend.model_name},
        {"temperature", backend.temperature},
        {"max_output_tokens", backend.max_output_tokens},
        {"transport_format", transport_format == ImageFormat::png ? "png" : "jpeg"},
        {"jpeg_quality", jpeg_quality},
    };
    return sha256_hex(canonical.dump()).substr(0, 16);
}

std::int64_t PipelineTrace::total_tokens() const noexcept {
    std::int64_t n = 0;
    for (const auto& s : stages) n += s.prompt_tokens + s.completion_tokens;
    return n;
}

double PipelineTrace::total_latency_ms() const noexcept {
    double t = 0.0;
    for (const auto& s : stages) t += s.latency_ms;
    return t;
}

nlohmann::json trace_to_json(const PipelineTrace& t, bool include_timing) {
    nlohmann::json j;
    j["schema_version"] = PipelineTrace::kSchemaVersion;
    j["question_id"] = t.question_id;
    j["mode"] = std::string(to_string(t.mode));
    j["config_hash"] = t.config_hash;
    j["original_size"] = size_json(t.original_size);
    j["downsampled_size"] = size_json(t.downsampled_size);
    j["initial"] = answer_json(t.initial);
    if (t.mode == Mode::zoom_refine) {
        j["bbox"] = t.bbox ? nlohmann::json{t.bbox->x1, t.bbox->y1, t.bbox->x2, t.bbox->y2}
                           : nlohmann::json(nullptr);
        j["bbox_repaired"] = t.bbox_repaired;
        j["pixel_rect"] = t.pixel_rect ? rect_json(*t.pixel_rect) : nlohmann::json(nullptr);
        j["crop_presented_size"] = t.crop_presented_size ? size_json(*t.crop_presented_size) : nlohmann::json(nullptr);
        j["crop_resized"] = t.crop_resized;
        j["fallback_reason"] = t.fallback_reason ? nlohmann::json(std::string(to_string(*t.fallback_reason)))
                                                 : nlohmann::json(nullptr);
        j["fallback_detail"] = t.fallback_detail;
        j["refine_raw"] = t.refine_raw ? nlohmann::json(*t.refine_raw) : nlohmann::json(nullptr);
        j["revised"] = t.revised;
    }
    j["final"] = answer_json(t.final);
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : t.stages) {
        nlohmann::json o = {{"prompt_tokens", s.prompt_tokens},
                            {"completion_tokens", s.completion_tokens},
                            {"attempts", s.attempts}};
        if (include_timing) o["latency_ms"] = s.latency_ms;
        stages.push_back(std::move(o));
    }
    j["stages"] = std::move(stages);
    j["backend_calls"] = t.backend_calls;
    j["error"] = t.error ? nlohmann::json(*t.error) : nlohmann::json(nullptr);
    return j;
}

PipelineTrace trace_from_json(const nlohmann::json& j) {
    PipelineTrace t;
    try {
        if (j.at("schema_version").get<int>() != PipelineTrace::kSchemaVersion) {
            throw SchemaError("unsupported trace schema_version");
        }
        t.question_id = j.at("question_id").get<std::string>();
        t.mode = mode_from_string(j.at("mode").get<std::string>());
        t.config_hash = j.at("config_hash").get<std::string>();
        t.original_size = {j.at("original_size").at(0).get<int>(), j.at("original_size").at(1).get<int>()};
        t.downsampled_size = {j.at("downsampled_size").at(0).get<int>(), j.at("downsampled_size").at(1).get<int>()};
        t.initial = answer_from_json(j.at("initial"));
        t.final = answer_from_json(j.at("final"));
        if (t.mode == Mode::zoom_refine) {
            if (const auto& b = j.at("bbox"); !b.is_null()) {
                t.bbox = NormBBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                                  b.at(3).get<double>()};
            }
            t.bbox_repaired = j.at("bbox_repaired").get<bool>();
            if (const auto& r = j.at("pixel_rect"); !r.is_null()) {
                t.pixel_rect = PixelRect{r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()};
            }
            if (const auto& s = j.at("crop_presented_size"); !s.is_null()) {
                t.crop_presented_size = Size{s.at(0).get<int>(), s.at(1).get<int>()};
            }
            t.crop_resized = j.at("crop_resized").get<bool>();
            if (const auto& f = j.at("fallback_reason"); !f.is_null()) {
                const auto s = f.get<std::string>();
                if (s == "no_bbox") t.fallback_reason = FallbackReason::no_bbox;
                else if (s == "crop_failed") t.fallback_reason = FallbackReason::crop_failed;
                else if (s == "stage2_unparsed") t.fallback_reason = FallbackReason::stage2_unparsed;
                else throw SchemaError("unknown fallback_reason " + s);
            }
            t.fallback_detail = j.at("fallback_detail").get<std::string>();
            if (const auto& r = j.at("refine_raw"); !r.is_null()) t.refine_raw = r.get<std::string>();
            t.revised = j.at("revised").get<bool>();
        }
        for (const auto& s : j.at("stages")) {
            StageCost c;
            c.prompt_tokens = s.at("prompt_tokens").get<std::int64_t>();
            c.completion_tokens = s.at("completion_tokens").get<std::int64_t>();
            c.attempts = s.at("attempts").get<int>();
            c.latency_ms = s.value("latency_ms", 0.0);
            t.stages.push_back(c);
        }
        t.backend_calls = j.at("backend_calls").get<int>();
        if (const auto& e = j.at("error"); !e.is_null()) t.error = e.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed trace: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw SchemaError(std::string("malformed trace: ") + e.what());
    }
    return t;
}

PipelineTrace run_baseline(const Image& img, const Query& query, const PipelineConfig& cfg,
                           Backend& backend) {
    PipelineTrace trace = start_trace(img, query, cfg, Mode::baseline);
    const Conversation conv = render_baseline_request(downsampled_attachment(img, cfg), query.question,
                                                      query.options, cfg.templates);
    auto stage = call_stage(backend, conv, 1);
    ++trace.backend_calls;
    trace.stages.push_back(stage.cost);
    trace.initial = {stage.reply.text, parse_choice(stage.reply.text, query.options)};
    trace.final = trace.initial;
    return trace;
}

PipelineTrace run_zoom_refine(const Image& img, const Query& query, const PipelineConfig& cfg,
                              Backend& backend) {
    PipelineTrace trace = start_trace(img, query, cfg, Mode::zoom_refine);

    // Localized zoom: preliminary answer and box from the downsampled view.
    const Conversation stage1 = render_zoom_request(downsampled_attachment(img, cfg), query.question,
                                                    query.options, cfg.templates);
    auto s1 = call_stage(backend, stage1, 1);
    ++trace.backend_calls;
    trace.stages.push_back(s1.cost);
    const ParsedZoomReply parsed = parse_zoom_reply(s1.reply.text, query.options);
    trace.initial = {s1.reply.text, parsed.preliminary_answer};
    trace.bbox = parsed.bbox;
    trace.bbox_repaired = parsed.bbox_repaired;

    auto fall_back = [&](FallbackReason reason, std::string detail) {
        trace.fallback_reason = reason;
        trace.fallback_detail = std::move(detail);
        trace.final = trace.initial;
        trace.revised = false;
        return trace;
    };

    if (!parsed.bbox) return fall_back(FallbackReason::no_bbox, "no bounding box in stage-1 reply");

    // The box is realized on the original image, never on the downsampled one.
    ImageAttachment crop_attachment;
    try {
        const PixelRect rect =
            expand_and_clamp(denormalize(*parsed.bbox, img), cfg.crop_policy, img);
        trace.pixel_rect = rect;
        Image region = crop(img, rect);
        if (std::max(region.width(), region.height()) > cfg.crop_policy.max_side_px) {
            region = downsample(region, cfg.crop_policy.max_side_px);
            trace.crop_resized = true;
        }
        trace.crop_presented_size = Size{region.width(), region.height()};
        crop_attachment = make_attachment(region, cfg.transport_format, cfg.jpeg_quality,
                                          provenance_for(img, rect));
    } catch (const BackendError&) {
        throw;
    } catch (const Error& e) {
        return fall_back(FallbackReason::crop_failed, e.what());
    }

    // Self-refinement over the full stage-1 history plus the crop.
    const Conversation stage2 = build_refine_conversation(stage1, s1.reply.text, crop_attachment,
                                                          query.question, query.options, cfg.templates);
    auto s2 = call_stage(backend, stage2, 2);
    ++trace.backend_calls;
    trace.stages.push_back(s2.cost);
    trace.refine_raw = s2.reply.text;
    const auto label = parse_choice(s2.reply.text, query.options);
    if (!label) return fall_back(FallbackReason::stage2_unparsed, "no answer letter in stage-2 reply");

    trace.final = {s2.reply.text, label};
    trace.revised = trace.final.label != trace.initial.label;
    return trace;
}

PipelineTrace run_pipeline(const Image& img, const Query& query, const PipelineConfig& cfg,
                           Backend& backend) {
    return cfg.mode == Mode::baseline ? run_baseline(img, query, cfg, backend)
                                      : run_zoom_refine(img, query, cfg, backend);
}

}  // namespace zoomrefine
