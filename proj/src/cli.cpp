// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include "zoomrefine/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <memory>
#include <ostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "zoomrefine/bench.hpp"
#include "zoomrefine/config.hpp"
#include "zoomrefine/error.hpp"
#include "zoomrefine/mockworld.hpp"
#include "zoomrefine/pipeline.hpp"

namespace zoomrefine {

namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_stop_signal(int) { g_stop.store(true); }

/// Installs SIGINT/SIGTERM handlers for the lifetime of the object.
class StopSignals {
public:
    StopSignals() {
        g_stop.store(false);
        prev_int_ = std::signal(SIGINT, on_stop_signal);
        prev_term_ = std::signal(SIGTERM, on_stop_signal);
    }
    ~StopSignals() {
        std::signal(SIGINT, prev_int_);
        std::signal(SIGTERM, prev_term_);
    }

private:
    void (*prev_int_)(int);
    void (*prev_term_)(int);
};

/// Exception raised for bad command-line input detected after parsing.
class UsageError : public Error {
    using Error::Error;
};

/// Config file plus the flags every pipeline command accepts. Flags win.
struct CommonFlags {
    std::string config_path;
    std::string mode;
    int downsample_max_side = 0;
    std::string templates;
    std::string backend_kind;
    std::string endpoint;
    std::string model;
    std::string scenes;

    CLI::Option* o_mode = nullptr;
    CLI::Option* o_downsample = nullptr;
    CLI::Option* o_templates = nullptr;
    CLI::Option* o_backend = nullptr;
    CLI::Option* o_endpoint = nullptr;
    CLI::Option* o_model = nullptr;
    CLI::Option* o_scenes = nullptr;

    void add_to(CLI::App* app) {
        app->add_option("-c,--config", config_path, "JSON config file");
        o_mode = app->add_option("--mode", mode, "baseline or zoom_refine");
        o_downsample = app->add_option("--downsample-max-side", downsample_max_side, "Stage-1 longest side");
        o_templates = app->add_option("--templates", templates, "Prompt template file");
        o_backend = app->add_option("--backend", backend_kind, "http or oracle");
        o_endpoint = app->add_option("--endpoint", endpoint, "Chat completions URL");
        o_model = app->add_option("--model", model, "Model name sent to the endpoint");
        o_scenes = app->add_option("--scenes", scenes, "scenes.jsonl for the oracle backend");
    }

    RunConfig load() const {
        RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        nlohmann::json patch = nlohmann::json::object();
        if (o_mode->count()) patch["mode"] = mode;
        if (o_downsample->count()) patch["downsample_max_side"] = downsample_max_side;
        if (o_templates->count()) patch["templates_path"] = templates;
        nlohmann::json backend = nlohmann::json::object();
        if (o_backend->count()) backend["kind"] = backend_kind;
        if (o_endpoint->count()) backend["endpoint_url"] = endpoint;
        if (o_model->count()) backend["model_name"] = model;
        if (o_scenes->count()) backend["scenes_path"] = scenes;
        if (!backend.empty()) patch["backend"] = backend;
        // Flag paths are relative to the working directory.
        return run_config_from_json(patch, {}, std::move(c));
    }
};

/// Owns a backend together with whatever it borrows from.
struct BackendHandle {
    std::unique_ptr<mockworld::SceneRegistry> registry;
    std::unique_ptr<Backend> backend;
};

BackendHandle make_backend(const RunConfig& c) {
    BackendHandle h;
    if (c.backend_kind == BackendKind::oracle) {
        h.registry = std::make_unique<mockworld::SceneRegistry>(mockworld::SceneRegistry::load(*c.scenes_path));
        h.backend = std::make_unique<mockworld::OracleBackend>(*h.registry, c.oracle);
    } else {
        h.backend = std::make_unique<HttpBackend>(c.pipeline.backend);
    }
    return h;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f) throw Error("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileNotFound("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string label_text(const StageAnswer& a) { return a.label ? "(" + a.label->str() + ")" : "unparsed"; }

void print_trace(const PipelineTrace& t, std::ostream& out) {
    out << "mode: " << to_string(t.mode) << '\n';
    out << fmt::format("image: {}x{} -> {}x{}\n", t.original_size.width, t.original_size.height,
                       t.downsampled_size.width, t.downsampled_size.height);
    out << "A_init: " << label_text(t.initial) << '\n';
    if (t.mode == Mode::zoom_refine) {
        if (t.bbox) {
            out << "bbox: " << format_bbox(*t.bbox) << (t.bbox_repaired ? " (repaired)" : "") << '\n';
        } else {
            out << "bbox: none\n";
        }
        if (t.pixel_rect) {
            const auto& r = *t.pixel_rect;
            out << fmt::format("crop: [{}, {}, {}, {}]", r.left, r.top, r.right, r.bottom);
            if (t.crop_presented_size) {
                out << fmt::format(" presented {}x{}{}", t.crop_presented_size->width,
                                   t.crop_presented_size->height, t.crop_resized ? " (resized)" : "");
            }
            out << '\n';
        }
        if (t.fallback_reason) {
            out << "fallback: " << to_string(*t.fallback_reason);
            if (!t.fallback_detail.empty()) out << " (" << t.fallback_detail << ")";
            out << '\n';
        }
        out << "A_final: " << label_text(t.final) << (t.revised ? " revised" : "") << '\n';
    }
    out << "backend_calls: " << t.backend_calls << '\n';
}

// ---- commands ----

struct RunArgs {
    CommonFlags common;
    std::string image;
    std::string question;
    std::vector<std::string> options;
    bool json = false;
};

int cmd_run(const RunArgs& a, std::ostream& out) {
    if (!fs::is_regular_file(a.image)) throw UsageError("image not found: " + a.image);
    RunConfig c = a.common.load();
    c.finalize();
    const Options options = [&] {
        try {
            return make_options(a.options);
        } catch (const InvalidArgument& e) {
            throw UsageError(e.what());
        }
    }();
    const Image img = load_image(a.image);
    auto handle = make_backend(c);
    const std::string hash = c.pipeline.hash();
    const PipelineTrace t = run_pipeline(img, {fs::path(a.image).stem().string(), a.question, options},
                                         c.pipeline, *handle.backend);
    if (a.json) {
        out << trace_to_json(t).dump(2) << '\n';
    } else {
        out << "config_hash: " << hash << '\n';
        print_trace(t, out);
    }
    return kExitOk;
}

struct EvalArgs {
    CommonFlags common;
    std::string dataset;
    std::string image_root;
    std::string output_dir;
    std::string cache_dir;
    int parallelism = 1;
    bool resume = true;
    CLI::Option* o_dataset = nullptr;
    CLI::Option* o_image_root = nullptr;
    CLI::Option* o_output = nullptr;
    CLI::Option* o_cache = nullptr;
    CLI::Option* o_parallelism = nullptr;
    CLI::Option* o_resume = nullptr;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    RunConfig c = a.common.load();
    if (a.o_dataset->count()) c.dataset = a.dataset;
    if (a.o_image_root->count()) c.image_root = a.image_root;
    if (a.o_output->count()) c.output_dir = a.output_dir;
    if (a.o_cache->count()) c.cache_dir = a.cache_dir;
    if (a.o_parallelism->count()) c.parallelism = a.parallelism;
    if (a.o_resume->count()) c.resume = a.resume;
    c.finalize();
    if (!c.dataset) throw ConfigError("no dataset given (--dataset or \"dataset\" in the config)");

    DatasetLoadOptions lo;
    lo.image_root = c.image_root;
    const auto records = load_dataset(*c.dataset, lo);
    auto handle = make_backend(c);

    const std::string hash = c.pipeline.hash();
    out << "config_hash: " << hash << '\n' << std::flush;
    fs::create_directories(c.output_dir);

    StopSignals signals;
    EvalOptions eo;
    eo.parallelism = c.parallelism;
    eo.cache_dir = c.effective_cache_dir();
    eo.resume = c.resume;
    eo.cancel = &g_stop;
    const EvalResult r = evaluate(records, c.pipeline, *handle.backend, eo);

    std::string lines;
    for (const auto& t : r.traces) lines += trace_to_json(t).dump() + '\n';
    write_text(c.output_dir / "traces.jsonl", lines);

    if (r.fatal_error) {
        err << "error: backend fatal: " << *r.fatal_error << '\n';
        return kExitBackend;
    }
    if (r.cancelled) {
        err << fmt::format("interrupted after {} of {} records; rerun with --resume to continue\n",
                           r.traces.size(), records.size());
        return kExitInterrupted;
    }
    write_text(c.output_dir / "summary.json", summary_to_json(r.summary).dump(2) + '\n');
    write_text(c.output_dir / "report.md", report(r.summary, r.traces, ReportFormat::markdown));
    out << fmt::format("records: {} (cached {}, executed {}, errors {})\n", r.summary.records, r.cached,
                       r.executed, r.summary.error_count);
    out << fmt::format("avg: {:.4f}  avg_c: {:.4f}  fallback_rate: {:.4f}\n", r.summary.avg, r.summary.avg_c,
                       r.summary.fallback_rate);
    out << "output: " << c.output_dir.string() << '\n';
    return kExitOk;
}

struct ReportArgs {
    std::string baseline;
    std::string ours;
    std::string baseline_name = "baseline";
    std::string ours_name = "zoom_refine";
    std::string output;
};

EvalSummary read_summary(const fs::path& path) {
    try {
        return summary_from_json(nlohmann::json::parse(read_text(path)));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaMismatch(path.string() + ": " + e.what());
    }
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
    const std::string md =
        compare_report(read_summary(a.baseline), read_summary(a.ours), a.baseline_name, a.ours_name);
    if (a.output.empty()) {
        out << md;
    } else {
        write_text(a.output, md);
    }
    return kExitOk;
}

struct ConfigShowArgs {
    CommonFlags common;
    bool templates = false;
};

int cmd_config_show(const ConfigShowArgs& a, std::ostream& out) {
    RunConfig c = a.common.load();
    c.finalize();
    if (a.templates) {
        out << c.pipeline.templates.serialize();
    } else {
        out << run_config_to_json(c).dump(2) << '\n';
        out << "config_hash: " << c.pipeline.hash() << '\n';
    }
    return kExitOk;
}

struct MockGenArgs {
    std::string out_dir;
    mockworld::DatasetParams params;
};

int cmd_mock_gen(const MockGenArgs& a, std::ostream& out) {
    const auto scenes = mockworld::make_dataset(a.params);
    mockworld::write_dataset(a.out_dir, scenes);
    out << fmt::format("wrote {} scenes to {}\n", scenes.size(), a.out_dir);
    return kExitOk;
}

struct MockServeArgs {
    std::string config_path;
    std::string scenes;
    std::string host = "127.0.0.1";
    int port = 8000;
    std::string model = "mockworld-oracle";
    double tau = 12.0;
    double bbox_noise = 0.0;
    double no_bbox_probability = 0.0;
    std::string policy;
    std::uint64_t seed = 0;
    CLI::Option* o_tau = nullptr;
    CLI::Option* o_noise = nullptr;
    CLI::Option* o_nobbox = nullptr;
    CLI::Option* o_policy = nullptr;
    CLI::Option* o_seed = nullptr;
};

int cmd_mock_serve(const MockServeArgs& a, std::ostream& out) {
    RunConfig c = a.config_path.empty() ? RunConfig{} : load_run_config(a.config_path);
    nlohmann::json oracle = mockworld::oracle_config_to_json(c.oracle);
    if (a.o_tau->count()) oracle["legibility_threshold_px"] = a.tau;
    if (a.o_noise->count()) oracle["bbox_noise"] = a.bbox_noise;
    if (a.o_nobbox->count()) oracle["no_bbox_probability"] = a.no_bbox_probability;
    if (a.o_policy->count()) oracle["wrong_answer_policy"] = a.policy;
    if (a.o_seed->count()) oracle["seed"] = a.seed;
    const auto ocfg = mockworld::oracle_config_from_json(oracle);

    const fs::path scenes = !a.scenes.empty() ? fs::path(a.scenes) : c.scenes_path.value_or(fs::path{});
    if (scenes.empty()) throw UsageError("mock serve needs --scenes");
    const auto registry = mockworld::SceneRegistry::load(scenes);
    mockworld::OracleBackend oracle_backend(registry, ocfg);

    StopSignals signals;
    ChatServer server(oracle_backend, a.model);
    const int port = server.start(a.host, a.port);
    out << fmt::format("listening on http://{}:{}/v1/chat/completions ({} scenes)\n", a.host, port,
                       registry.size())
        << std::flush;
    while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    return kExitOk;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ParamError*>(&e) ||
        dynamic_cast<const InvalidArgument*>(&e)) {
        return kExitUsage;
    }
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const TemplateError*>(&e)) return kExitConfig;
    if (dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const MissingImage*>(&e) ||
        dynamic_cast<const SchemaMismatch*>(&e) || dynamic_cast<const UnmatchedTrace*>(&e) ||
        dynamic_cast<const FileNotFound*>(&e) || dynamic_cast<const DecodeError*>(&e)) {
        return kExitDataset;
    }
    if (dynamic_cast<const BackendError*>(&e)) return kExitBackend;
    return 1;
}

}  // namespace

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Two-stage zoom and self-refinement inference for high-resolution images", "zoomrefine"};
    app.require_subcommand(1);

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Answer one question about one image");
    run.common.add_to(run_cmd);
    run_cmd->add_option("image", run.image, "Image file")->required();
    run_cmd->add_option("-q,--question", run.question, "Question text")->required();
    run_cmd->add_option("-o,--option", run.options, "Answer option text, repeat per option (A, B, ...)")
        ->required();
    run_cmd->add_flag("--json", run.json, "Print the full trace as JSON");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a dataset and write traces, summary and report");
    ev.common.add_to(eval_cmd);
    ev.o_dataset = eval_cmd->add_option("-d,--dataset", ev.dataset, "Dataset JSONL");
    ev.o_image_root = eval_cmd->add_option("--image-root", ev.image_root, "Base directory for image paths");
    ev.o_output = eval_cmd->add_option("--output-dir", ev.output_dir, "Where results are written");
    ev.o_cache = eval_cmd->add_option("--cache-dir", ev.cache_dir, "Per-record trace cache");
    ev.o_parallelism = eval_cmd->add_option("-j,--parallelism", ev.parallelism, "Records in flight");
    ev.o_resume = eval_cmd->add_flag("--resume,!--no-resume", ev.resume, "Reuse cached traces (default on)");

    ReportArgs rep;
    auto* report_cmd = app.add_subcommand("report", "Compare two summary files");
    report_cmd->add_option("baseline", rep.baseline, "Baseline summary.json")->required();
    report_cmd->add_option("ours", rep.ours, "Second summary.json")->required();
    report_cmd->add_option("--baseline-name", rep.baseline_name, "Column name for the first summary");
    report_cmd->add_option("--ours-name", rep.ours_name, "Column name for the second summary");
    report_cmd->add_option("--output", rep.output, "Write markdown here instead of stdout");

    auto* config_cmd = app.add_subcommand("config", "Configuration helpers");
    config_cmd->require_subcommand(1);
    ConfigShowArgs show;
    auto* show_cmd = config_cmd->add_subcommand("show", "Print the effective configuration");
    show.common.add_to(show_cmd);
    show_cmd->add_flag("--print-templates", show.templates, "Print the prompt templates instead");

    auto* mock_cmd = app.add_subcommand("mock", "Synthetic scenes and the oracle model");
    mock_cmd->require_subcommand(1);
    MockGenArgs gen;
    auto* gen_cmd = mock_cmd->add_subcommand("gen", "Generate a scene dataset");
    gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
    gen_cmd->add_option("--count", gen.params.count, "Number of scenes")->capture_default_str();
    gen_cmd->add_option("--seed", gen.params.seed, "Generator seed")->capture_default_str();
    gen_cmd->add_option("--canvas", gen.params.canvas_side, "Canvas side in pixels")->capture_default_str();
    gen_cmd->add_option("--sizes", gen.params.target_sizes, "Target glyph heights, cycled")
        ->delimiter(',')
        ->capture_default_str();
    gen_cmd->add_option("--subtasks", gen.params.subtasks, "Subtask names, cycled")
        ->delimiter(',')
        ->capture_default_str();
    gen_cmd->add_option("--distractors", gen.params.distractor_count, "Distractor glyphs per scene")
        ->capture_default_str();
    gen_cmd->add_option("--prefix", gen.params.id_prefix, "Scene id prefix")->capture_default_str();

    MockServeArgs serve;
    auto* serve_cmd = mock_cmd->add_subcommand("serve", "Serve the oracle over the chat completions API");
    serve_cmd->add_option("-c,--config", serve.config_path, "JSON config file (oracle section)");
    serve_cmd->add_option("--scenes", serve.scenes, "scenes.jsonl written by mock gen");
    serve_cmd->add_option("--host", serve.host, "Bind address")->capture_default_str();
    serve_cmd->add_option("--port", serve.port, "Port, 0 picks a free one")->capture_default_str();
    serve_cmd->add_option("--model", serve.model, "Model name reported in responses")->capture_default_str();
    serve.o_tau = serve_cmd->add_option("--tau", serve.tau, "Legibility threshold in presented pixels");
    serve.o_noise = serve_cmd->add_option("--bbox-noise", serve.bbox_noise, "Box jitter, fraction of canvas");
    serve.o_nobbox = serve_cmd->add_option("--no-bbox-probability", serve.no_bbox_probability,
                                           "Probability of omitting the box");
    serve.o_policy = serve_cmd->add_option("--wrong-answer-policy", serve.policy, "fixed_offset or seeded_random");
    serve.o_seed = serve_cmd->add_option("--oracle-seed", serve.seed, "Oracle seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*run_cmd) return cmd_run(run, out);
        if (*eval_cmd) return cmd_eval(ev, out, err);
        if (*report_cmd) return cmd_report(rep, out);
        if (*show_cmd) return cmd_config_show(show, out);
        if (*gen_cmd) return cmd_mock_gen(gen, out);
        if (*serve_cmd) return cmd_mock_serve(serve, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return kExitUsage;
}

}  // namespace zoomrefine
