// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zoomrefine/pipeline.hpp"

namespace zoomrefine {

enum class Task { perception, reasoning };

struct BenchmarkRecord {
    std::string id;
    std::filesystem::path image_path;  // resolved
    std::string question;
    Options options;
    ChoiceLabel answer;
    Task task = Task::perception;
    std::string subtask;

    Query query() const { return {id, question, options}; }
};

/// One JSON object per line:
///   {"id", "image", "question", "options", "answer", "task", "subtask"}
/// `options` is either ["text", ...] (labels A, B, ...) or
/// [{"label": "A", "text": "..."}, ...]. Relative image paths resolve
/// against `image_root`, defaulting to the dataset file's directory.
struct DatasetLoadOptions {
    std::optional<std::filesystem::path> image_root;
    bool check_images = true;
};

/// Throws SchemaError (with line number) or MissingImage (listing records).
std::vector<BenchmarkRecord> load_dataset(const std::filesystem::path& path,
                                          const DatasetLoadOptions& opts = {});
std::vector<BenchmarkRecord> parse_dataset(std::istream& in, const std::filesystem::path& image_root,
                                           bool check_images);
nlohmann::json record_to_json(const BenchmarkRecord& r, const std::string& image_field);

struct SubtaskScore {
    std::int64_t correct = 0;
    std::int64_t total = 0;
    double accuracy = 0.0;
};

struct EvalSummary {
    static constexpr int kSchemaVersion = 1;

    std::string mode;
    std::string config_hash;
    std::map<std::string, SubtaskScore> per_subtask;
    std::int64_t records = 0;
    /// Sum of correct over sum of total.
    double avg = 0.0;
    /// Unweighted mean of per-subtask accuracy.
    double avg_c = 0.0;
    double fallback_rate = 0.0;
    double revision_rate = 0.0;
    double unparsed_rate = 0.0;
    std::int64_t error_count = 0;
    std::int64_t backend_calls = 0;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    /// Timing fields; excluded from deterministic comparisons.
    double total_wall_time_s = 0.0;
    double total_latency_ms = 0.0;
};

nlohmann::json summary_to_json(const EvalSummary& s, bool include_timing = true);
/// Throws SchemaMismatch.
EvalSummary summary_from_json(const nlohmann::json& j);

/// A trace is correct iff its final label equals the record's answer; a
/// missing label (unparsed or errored) counts as incorrect. Throws
/// UnmatchedTrace for traces without a record.
EvalSummary score(const std::vector<PipelineTrace>& traces, const std::vector<BenchmarkRecord>& records);

/// Canonical row order: OCR, RS, DT, MO, AD, FSP, FCP, then the rest sorted.
std::vector<std::string> ordered_subtasks(const std::map<std::string, SubtaskScore>& per_subtask);

enum class ReportFormat { text, json, markdown };

std::string report(const EvalSummary& summary, const std::vector<PipelineTrace>& traces, ReportFormat format);

/// Markdown delta table (ours - baseline) in percentage points, one row per
/// subtask then Avg and Avg-C, plus time and token lines. Throws
/// SchemaMismatch when the subtask sets differ.
std::string compare_report(const EvalSummary& baseline, const EvalSummary& ours,
                           const std::string& baseline_name = "baseline",
                           const std::string& ours_name = "zoom_refine");

/// Supplies the full-resolution image for a record.
using ImageProvider = std::function<Image(const BenchmarkRecord&)>;
/// load_image(record.image_path) tagged with the record id.
Image load_record_image(const BenchmarkRecord& record);

struct EvalOptions {
    int parallelism = 1;
    /// Completed traces are written here, one file per record.
    std::optional<std::filesystem::path> cache_dir;
    /// Reuse cached traces whose key matches.
    bool resume = true;
    /// When set and true, no further records are started; in-flight ones finish.
    const std::atomic<bool>* cancel = nullptr;
    ImageProvider images;
    /// Called after each record completes (serialized).
    std::function<void(const PipelineTrace&, bool from_cache)> on_trace;
};

struct EvalResult {
    /// Completed traces in record order.
    std::vector<PipelineTrace> traces;
    EvalSummary summary;
    std::int64_t cached = 0;
    std::int64_t executed = 0;
    bool cancelled = false;
    /// Set when an authentication failure stopped the run.
    std::optional<std::string> fatal_error;
};

/// Cache key for (record id, config hash).
std::string cache_key(const std::string& record_id, const std::string& config_hash);

/// Runs every record through the pipeline with at most `parallelism`
/// records in flight. Per-record failures become traces with `error` set.
EvalResult evaluate(const std::vector<BenchmarkRecord>& records, const PipelineConfig& cfg,
                    Backend& backend, const EvalOptions& opts = {});

}  // namespace zoomrefine
