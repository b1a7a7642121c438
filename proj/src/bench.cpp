// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include "zoomrefine/bench.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "zoomrefine/hash.hpp"

namespace zoomrefine {

namespace {

namespace fs = std::filesystem;

constexpr std::string_view kCanonicalOrder[] = {"OCR", "RS", "DT", "MO", "AD", "FSP", "FCP"};

Task task_from_string(const std::string& s) {
    if (s == "perception") return Task::perception;
    if (s == "reasoning") return Task::reasoning;
    throw SchemaError("task must be 'perception' or 'reasoning', got '" + s + "'");
}

std::string_view to_string(Task t) { return t == Task::perception ? "perception" : "reasoning"; }

ChoiceLabel label_from_json(const nlohmann::json& j) {
    const auto s = j.get<std::string>();
    if (s.size() != 1 || s[0] < 'A' || s[0] > 'E') throw SchemaError("label must be a letter A-E, got '" + s + "'");
    return ChoiceLabel{s[0]};
}

BenchmarkRecord parse_record(const nlohmann::json& j, const fs::path& root) {
    static const std::set<std::string> kKeys = {"id", "image", "question", "options", "answer", "task", "subtask"};
    for (const auto& [key, _] : j.items()) {
        if (!kKeys.count(key)) throw SchemaError("unknown field '" + key + "'");
    }
    BenchmarkRecord r;
    r.id = j.at("id").get<std::string>();
    if (r.id.empty()) throw SchemaError("id must be nonempty");
    const fs::path image = j.at("image").get<std::string>();
    r.image_path = image.is_absolute() ? image : root / image;
    r.question = j.at("question").get<std::string>();
    if (r.question.empty()) throw SchemaError("question must be nonempty");
    const auto& opts = j.at("options");
    if (!opts.is_array() || opts.empty()) throw SchemaError("options must be a nonempty array");
    if (opts.at(0).is_string()) {
        std::vector<std::string> texts;
        for (const auto& o : opts) texts.push_back(o.get<std::string>());
        if (texts.size() > 5) throw SchemaError("at most five options are supported");
        r.options = make_options(texts);
    } else {
        for (const auto& o : opts) r.options.push_back({label_from_json(o.at("label")), o.at("text").get<std::string>()});
    }
    try {
        validate_options(r.options);
    } catch (const InvalidArgument& e) {
        throw SchemaError(e.what());
    }
    r.answer = label_from_json(j.at("answer"));
    if (!has_label(r.options, r.answer)) {
        throw SchemaError("answer '" + r.answer.str() + "' is not among the options of record '" + r.id + "'");
    }
    r.task = task_from_string(j.value("task", std::string("perception")));
    r.subtask = j.at("subtask").get<std::string>();
    if (r.subtask.empty()) throw SchemaError("subtask must be nonempty");
    return r;
}

void write_atomic(const fs::path& path, const std::string& contents) {
    static std::atomic<std::uint64_t> counter{0};
    const fs::path tmp = path.string() + ".tmp." + std::to_string(counter.fetch_add(1)) + "." +
                         std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << contents;
        out.flush();
        if (!out) throw Error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::optional<PipelineTrace> read_cached(const fs::path& path, const std::string& key) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("key").get<std::string>() != key) return std::nullopt;
        return trace_from_json(j.at("trace"));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::string pct(double v) { return fmt::format("{:.2f}", 100.0 * v); }

PipelineTrace error_trace(const BenchmarkRecord& r, const PipelineConfig& cfg, std::string message) {
    PipelineTrace t;
    t.question_id = r.id;
    t.mode = cfg.mode;
    t.config_hash = cfg.hash();
    t.error = std::move(message);
    return t;
}

}  // namespace

std::vector<BenchmarkRecord> parse_dataset(std::istream& in, const fs::path& image_root, bool check_images) {
    std::vector<BenchmarkRecord> records;
    std::set<std::string> ids;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        BenchmarkRecord r;
        try {
            r = parse_record(nlohmann::json::parse(line), image_root);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const SchemaError& e) {
            throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!ids.insert(r.id).second) {
            throw SchemaError("line " + std::to_string(line_no) + ": duplicate id '" + r.id + "'");
        }
        records.push_back(std::move(r));
    }
    if (check_images) {
        std::string missing;
        size_t count = 0;
        for (const auto& r : records) {
            std::error_code ec;
            if (!fs::is_regular_file(r.image_path, ec)) {
                ++count;
                missing += "\n  " + r.id + ": " + r.image_path.string();
            }
        }
        if (count) throw MissingImage(std::to_string(count) + " record(s) reference missing images:" + missing);
    }
    return records;
}

std::vector<BenchmarkRecord> load_dataset(const fs::path& path, const DatasetLoadOptions& opts) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open dataset: " + path.string());
    const fs::path root = opts.image_root ? *opts.image_root : path.parent_path();
    return parse_dataset(in, root, opts.check_images);
}

nlohmann::json record_to_json(const BenchmarkRecord& r, const std::string& image_field) {
    nlohmann::json options = nlohmann::json::array();
    for (const auto& o : r.options) options.push_back({{"label", o.label.str()}, {"text", o.text}});
    return {{"id", r.id},
            {"image", image_field},
            {"question", r.question},
            {"options", options},
            {"answer", r.answer.str()},
            {"task", std::string(to_string(r.task))},
            {"subtask", r.subtask}};
}

nlohmann::json summary_to_json(const EvalSummary& s, bool include_timing) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [name, sc] : s.per_subtask) {
        per[name] = {{"correct", sc.correct}, {"total", sc.total}, {"accuracy", sc.accuracy}};
    }
    nlohmann::json j = {
        {"schema_version", EvalSummary::kSchemaVersion},
        {"mode", s.mode},
        {"config_hash", s.config_hash},
        {"records", s.records},
        {"per_subtask", per},
        {"avg", s.avg},
        {"avg_c", s.avg_c},
        {"fallback_rate", s.fallback_rate},
        {"revision_rate", s.revision_rate},
        {"unparsed_rate", s.unparsed_rate},
        {"error_count", s.error_count},
        {"backend_calls", s.backend_calls},
        {"tokens", {{"prompt", s.prompt_tokens}, {"completion", s.completion_tokens}}},
    };
    if (include_timing) {
        j["total_wall_time_s"] = s.total_wall_time_s;
        j["total_latency_ms"] = s.total_latency_ms;
    }
    return j;
}

EvalSummary summary_from_json(const nlohmann::json& j) {
    EvalSummary s;
    try {
        if (j.at("schema_version").get<int>() != EvalSummary::kSchemaVersion) {
            throw SchemaMismatch("unsupported summary schema_version");
        }
        s.mode = j.at("mode").get<std::string>();
        s.config_hash = j.at("config_hash").get<std::string>();
        s.records = j.at("records").get<std::int64_t>();
        for (const auto& [name, v] : j.at("per_subtask").items()) {
            s.per_subtask[name] = {v.at("correct").get<std::int64_t>(), v.at("total").get<std::int64_t>(),
                                   v.at("accuracy").get<double>()};
        }
        s.avg = j.at("avg").get<double>();
        s.avg_c = j.at("avg_c").get<double>();
        s.fallback_rate = j.at("fallback_rate").get<double>();
        s.revision_rate = j.at("revision_rate").get<double>();
        s.unparsed_rate = j.at("unparsed_rate").get<double>();
        s.error_count = j.at("error_count").get<std::int64_t>();
        s.backend_calls = j.at("backend_calls").get<std::int64_t>();
        s.prompt_tokens = j.at("tokens").at("prompt").get<std::int64_t>();
        s.completion_tokens = j.at("tokens").at("completion").get<std::int64_t>();
        s.total_wall_time_s = j.value("total_wall_time_s", 0.0);
        s.total_latency_ms = j.value("total_latency_ms", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaMismatch(std::string("malformed summary: ") + e.what());
    }
    return s;
}

EvalSummary score(const std::vector<PipelineTrace>& traces, const std::vector<BenchmarkRecord>& records) {
    std::map<std::string, const BenchmarkRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;

    EvalSummary s;
    std::int64_t fallbacks = 0, revisions = 0, unparsed = 0;
    for (const auto& t : traces) {
        const auto it = by_id.find(t.question_id);
        if (it == by_id.end()) throw UnmatchedTrace("trace '" + t.question_id + "' has no matching record");
        const BenchmarkRecord& r = *it->second;
        auto& sc = s.per_subtask[r.subtask];
        ++sc.total;
        if (t.final.label && *t.final.label == r.answer) ++sc.correct;
        if (t.fallback_reason) ++fallbacks;
        if (t.revised) ++revisions;
        if (t.error) ++s.error_count;
        else if (!t.final.label) ++unparsed;
        s.backend_calls += t.backend_calls;
        for (const auto& st : t.stages) {
            s.prompt_tokens += st.prompt_tokens;
            s.completion_tokens += st.completion_tokens;
        }
        s.total_latency_ms += t.total_latency_ms();
        if (s.mode.empty()) {
            s.mode = std::string(to_string(t.mode));
            s.config_hash = t.config_hash;
        }
    }
    s.records = static_cast<std::int64_t>(traces.size());
    std::int64_t correct = 0;
    double acc_sum = 0.0;
    for (auto& [_, sc] : s.per_subtask) {
        sc.accuracy = static_cast<double>(sc.correct) / static_cast<double>(sc.total);
        correct += sc.correct;
        acc_sum += sc.accuracy;
    }
    if (s.records > 0) {
        const auto n = static_cast<double>(s.records);
        s.avg = static_cast<double>(correct) / n;
        s.avg_c = acc_sum / static_cast<double>(s.per_subtask.size());
        s.fallback_rate = static_cast<double>(fallbacks) / n;
        s.revision_rate = static_cast<double>(revisions) / n;
        s.unparsed_rate = static_cast<double>(unparsed) / n;
    }
    return s;
}

std::vector<std::string> ordered_subtasks(const std::map<std::string, SubtaskScore>& per_subtask) {
    std::vector<std::string> out;
    for (auto name : kCanonicalOrder) {
        if (per_subtask.count(std::string(name))) out.emplace_back(name);
    }
    for (const auto& [name, _] : per_subtask) {
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    }
    return out;
}

std::string report(const EvalSummary& s, const std::vector<PipelineTrace>& traces, ReportFormat format) {
    if (format == ReportFormat::json) return summary_to_json(s).dump(2) + "\n";

    double stage_latency[2] = {0.0, 0.0};
    std::int64_t stage_count[2] = {0, 0};
    for (const auto& t : traces) {
        for (size_t i = 0; i < t.stages.size() && i < 2; ++i) {
            stage_latency[i] += t.stages[i].latency_ms;
            ++stage_count[i];
        }
    }
    auto mean = [&](int i) { return stage_count[i] ? stage_latency[i] / static_cast<double>(stage_count[i]) : 0.0; };

    std::string out;
    if (format == ReportFormat::text) {
        out += fmt::format("mode: {}  config: {}  records: {}\n", s.mode, s.config_hash, s.records);
        for (const auto& name : ordered_subtasks(s.per_subtask)) {
            const auto& sc = s.per_subtask.at(name);
            out += fmt::format("{}: {}/{} = {:.3f}\n", name, sc.correct, sc.total, sc.accuracy);
        }
        out += fmt::format("avg: {:.3f}\navg_c: {:.3f}\n", s.avg, s.avg_c);
        out += fmt::format("fallback_rate: {:.3f}\nrevision_rate: {:.3f}\nunparsed_rate: {:.3f}\n",
                           s.fallback_rate, s.revision_rate, s.unparsed_rate);
        out += fmt::format("errors: {}\nbackend_calls: {}\ntokens: {} prompt / {} completion\n", s.error_count,
                           s.backend_calls, s.prompt_tokens, s.completion_tokens);
        out += fmt::format("wall_time_s: {:.2f}\nmean_latency_ms: stage1 {:.1f} / stage2 {:.1f}\n",
                           s.total_wall_time_s, mean(0), mean(1));
        return out;
    }

    out += "# Evaluation report\n\n";
    out += fmt::format("mode: `{}`, config: `{}`, records: {}\n\n", s.mode, s.config_hash, s.records);
    out += "| subtask | correct | total | accuracy |\n|---|---:|---:|---:|\n";
    for (const auto& name : ordered_subtasks(s.per_subtask)) {
        const auto& sc = s.per_subtask.at(name);
        out += fmt::format("| {} | {} | {} | {:.3f} |\n", name, sc.correct, sc.total, sc.accuracy);
    }
    out += "\n| metric | value |\n|---|---:|\n";
    out += fmt::format("| avg | {:.3f} |\n", s.avg);
    out += fmt::format("| avg_c | {:.3f} |\n", s.avg_c);
    out += fmt::format("| fallback_rate | {:.3f} |\n", s.fallback_rate);
    out += fmt::format("| revision_rate | {:.3f} |\n", s.revision_rate);
    out += fmt::format("| unparsed_rate | {:.3f} |\n", s.unparsed_rate);
    out += fmt::format("| errors | {} |\n", s.error_count);
    out += fmt::format("| backend_calls | {} |\n", s.backend_calls);
    out += fmt::format("| prompt_tokens | {} |\n", s.prompt_tokens);
    out += fmt::format("| completion_tokens | {} |\n", s.completion_tokens);
    out += fmt::format("| wall_time_s | {:.2f} |\n", s.total_wall_time_s);
    out += fmt::format("| mean_latency_stage1_ms | {:.1f} |\n", mean(0));
    out += fmt::format("| mean_latency_stage2_ms | {:.1f} |\n", mean(1));
    return out;
}

std::string compare_report(const EvalSummary& base, const EvalSummary& ours, const std::string& base_name,
                           const std::string& ours_name) {
    std::set<std::string> a, b;
    for (const auto& [k, _] : base.per_subtask) a.insert(k);
    for (const auto& [k, _] : ours.per_subtask) b.insert(k);
    if (a != b) throw SchemaMismatch("summaries cover different subtasks");

    std::string out = fmt::format("| row | {} | {} | delta |\n|---|---:|---:|---:|\n", base_name, ours_name);
    auto row = [&](const std::string& name, double x, double y) {
        out += fmt::format("| {} | {} | {} | {:+.2f} |\n", name, pct(x), pct(y), 100.0 * (y - x));
    };
    for (const auto& name : ordered_subtasks(base.per_subtask)) {
        row(name, base.per_subtask.at(name).accuracy, ours.per_subtask.at(name).accuracy);
    }
    row("Avg", base.avg, ours.avg);
    row("Avg-C", base.avg_c, ours.avg_c);
    out += "\n| cost | " + base_name + " | " + ours_name + " |\n|---|---:|---:|\n";
    out += fmt::format("| wall_time_s | {:.2f} | {:.2f} |\n", base.total_wall_time_s, ours.total_wall_time_s);
    out += fmt::format("| backend_calls | {} | {} |\n", base.backend_calls, ours.backend_calls);
    out += fmt::format("| tokens | {} | {} |\n", base.prompt_tokens + base.completion_tokens,
                       ours.prompt_tokens + ours.completion_tokens);
    return out;
}

Image load_record_image(const BenchmarkRecord& record) {
    Image img = load_image(record.image_path);
    img.set_source_id(record.id);
    return img;
}

std::string cache_key(const std::string& record_id, const std::string& config_hash) {
    return sha256_hex(record_id + "\n" + config_hash).substr(0, 32);
}

EvalResult evaluate(const std::vector<BenchmarkRecord>& records, const PipelineConfig& cfg, Backend& backend,
                    const EvalOptions& opts) {
    if (opts.parallelism < 1) throw InvalidArgument("parallelism must be >= 1");
    cfg.validate();
    if (opts.cache_dir) fs::create_directories(*opts.cache_dir);

    const std::string config_hash = cfg.hash();
    const ImageProvider images = opts.images ? opts.images : ImageProvider(load_record_image);
    const auto started = std::chrono::steady_clock::now();

    std::vector<std::optional<PipelineTrace>> slots(records.size());
    std::atomic<size_t> next{0};
    std::atomic<bool> fatal{false};
    std::atomic<std::int64_t> cached{0}, executed{0};
    std::mutex mu;
    std::optional<std::string> fatal_error;

    auto stop_requested = [&] {
        return fatal.load() || (opts.cancel && opts.cancel->load());
    };

    auto worker = [&] {
        while (!stop_requested()) {
            const size_t i = next.fetch_add(1);
            if (i >= records.size()) return;
            const BenchmarkRecord& record = records[i];
            const std::string key = cache_key(record.id, config_hash);
            const std::optional<fs::path> cache_file =
                opts.cache_dir ? std::optional<fs::path>(*opts.cache_dir / (key + ".json")) : std::nullopt;

            std::optional<PipelineTrace> trace;
            bool from_cache = false;
            if (cache_file && opts.resume) {
                trace = read_cached(*cache_file, key);
                from_cache = trace.has_value();
            }
            if (!trace) {
                try {
                    trace = run_pipeline(images(record), record.query(), cfg, backend);
                } catch (const StageError& e) {
                    trace = error_trace(record, cfg, e.what());
                    if (e.kind() == "AuthError") {
                        fatal = true;
                        std::lock_guard lock(mu);
                        fatal_error = e.what();
                    }
                } catch (const std::exception& e) {
                    trace = error_trace(record, cfg, e.what());
                }
                ++executed;
                if (cache_file && !trace->error) {
                    const nlohmann::json entry = {{"key", key},
                                                  {"record_id", record.id},
                                                  {"config_hash", config_hash},
                                                  {"trace", trace_to_json(*trace)}};
                    write_atomic(*cache_file, entry.dump());
                }
            } else {
                ++cached;
            }
            std::lock_guard lock(mu);
            if (opts.on_trace) opts.on_trace(*trace, from_cache);
            slots[i] = std::move(trace);
        }
    };

    const int workers = std::max(1, std::min<int>(opts.parallelism, static_cast<int>(records.size())));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    EvalResult result;
    for (auto& slot : slots) {
        if (slot) result.traces.push_back(std::move(*slot));
    }
    result.cancelled = result.traces.size() < records.size() && !fatal.load();
    result.fatal_error = fatal_error;
    result.cached = cached.load();
    result.executed = executed.load();
    result.summary = score(result.traces, records);
    if (result.summary.mode.empty()) {
        result.summary.mode = std::string(to_string(cfg.mode));
        result.summary.config_hash = config_hash;
    }
    result.summary.total_wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

}  // namespace zoomrefine
