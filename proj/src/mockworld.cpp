// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include "zoomrefine/mockworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <fmt/format.h>

#include "zoomrefine/error.hpp"
#include "zoomrefine/font.hpp"
#include "zoomrefine/hash.hpp"

namespace zoomrefine::mockworld {

namespace {

constexpr int kOptionCount = 4;
constexpr std::string_view kQuestion = "Which character is printed on the white placard?";

int placard_margin(int size_px) { return std::max(2, size_px / 4); }

PixelRect placard_rect(const SceneSpec& s) {
    const int m = placard_margin(s.target_size_px);
    return {s.target_rect.left - m, s.target_rect.top - m, s.target_rect.right + m, s.target_rect.bottom + m};
}

bool overlaps(const PixelRect& a, const PixelRect& b) {
    return a.left < b.right && b.left < a.right && a.top < b.bottom && b.top < a.bottom;
}

void fill_rect(Image& img, PixelRect r, const std::uint8_t* rgb) {
    r.left = std::max(r.left, 0);
    r.top = std::max(r.top, 0);
    r.right = std::min(r.right, img.width());
    r.bottom = std::min(r.bottom, img.height());
    const int c = img.channels();
    for (int y = r.top; y < r.bottom; ++y) {
        std::uint8_t* p = img.row(y) + static_cast<size_t>(r.left) * c;
        for (int x = r.left; x < r.right; ++x, p += c) {
            if (c == 1) {
                p[0] = static_cast<std::uint8_t>((rgb[0] + rgb[1] + rgb[2]) / 3);
            } else {
                p[0] = rgb[0];
                p[1] = rgb[1];
                p[2] = rgb[2];
                if (c == 4) p[3] = 255;
            }
        }
    }
}

nlohmann::json rect_json(const PixelRect& r) { return {r.left, r.top, r.right, r.bottom}; }

std::string scene_id_of(const ImageAttachment& img, std::optional<Provenance>& prov, Size& size) {
    prov = read_provenance(img.bytes);
    if (!prov) throw UnknownScene("image carries no scene provenance");
    const auto s = probe_size(img.bytes);
    if (!s) throw UnknownScene("cannot read presented image size for scene " + prov->source_id);
    size = *s;
    return prov->source_id;
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, std::string_view scene_id, std::string_view purpose) noexcept {
    std::string key(scene_id);
    key += ':';
    key += purpose;
    return seed ^ fnv1a64(key);
}

BenchmarkRecord SceneSpec::record(const std::filesystem::path& image_path) const {
    return {id, image_path, question, options, answer, Task::perception, subtask};
}

nlohmann::json scene_to_json(const SceneSpec& s) {
    nlohmann::json options = nlohmann::json::array();
    for (const auto& o : s.options) options.push_back({{"label", o.label.str()}, {"text", o.text}});
    return {{"id", s.id},
            {"seed", s.seed},
            {"canvas_side", s.canvas_side},
            {"target_glyph", std::string(1, s.target_glyph)},
            {"target_size_px", s.target_size_px},
            {"target_rect", rect_json(s.target_rect)},
            {"target_bbox", {s.target_bbox.x1, s.target_bbox.y1, s.target_bbox.x2, s.target_bbox.y2}},
            {"distractor_count", s.distractor_count},
            {"subtask", s.subtask},
            {"question", s.question},
            {"options", options},
            {"answer", s.answer.str()}};
}

SceneSpec scene_from_json(const nlohmann::json& j) {
    try {
        SceneSpec s;
        s.id = j.at("id").get<std::string>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.canvas_side = j.at("canvas_side").get<int>();
        const auto glyph = j.at("target_glyph").get<std::string>();
        if (glyph.size() != 1) throw SchemaError("target_glyph must be one character");
        s.target_glyph = glyph[0];
        s.target_size_px = j.at("target_size_px").get<int>();
        const auto& r = j.at("target_rect");
        s.target_rect = {r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()};
        const auto& b = j.at("target_bbox");
        s.target_bbox = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
        s.distractor_count = j.at("distractor_count").get<int>();
        s.subtask = j.at("subtask").get<std::string>();
        s.question = j.at("question").get<std::string>();
        for (const auto& o : j.at("options")) {
            const auto label = o.at("label").get<std::string>();
            if (label.size() != 1) throw SchemaError("option label must be one letter");
            s.options.push_back({{label[0]}, o.at("text").get<std::string>()});
        }
        const auto answer = j.at("answer").get<std::string>();
        if (answer.size() != 1) throw SchemaError("answer must be one letter");
        s.answer = {answer[0]};
        if (!has_label(s.options, s.answer)) throw SchemaError("answer is not among the options");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed scene: ") + e.what());
    }
}

SceneSpec make_scene(const SceneParams& params, std::uint64_t seed, std::string id) {
    if (params.canvas_side < 64) throw ParamError("canvas_side must be >= 64");
    if (params.target_size_px < 8) throw ParamError("target_size_px must be >= 8");
    if (params.distractor_count < 0) throw ParamError("distractor_count must be >= 0");
    if (params.subtask.empty()) throw ParamError("subtask must not be empty");
    if (id.empty()) throw ParamError("scene id must not be empty");

    const int h = params.target_size_px;
    const int w = glyph_cell_width(h);
    const int m = placard_margin(h);
    const int max_left = params.canvas_side - w - m;
    const int max_top = params.canvas_side - h - m;
    if (max_left < m || max_top < m) {
        throw ParamError(fmt::format("target of {} px does not fit a {} px canvas", h, params.canvas_side));
    }

    SplitMix64 rng(stream_seed(seed, id, "layout"));
    SceneSpec s;
    s.id = std::move(id);
    s.seed = seed;
    s.canvas_side = params.canvas_side;
    s.target_size_px = h;
    s.distractor_count = params.distractor_count;
    s.subtask = params.subtask;
    s.question = std::string(kQuestion);

    const int left = rng.between(m, max_left);
    const int top = rng.between(m, max_top);
    s.target_rect = {left, top, left + w, top + h};
    s.target_bbox = normalize(s.target_rect, s.canvas_side, s.canvas_side);

    std::string alphabet(glyph_alphabet());
    for (int i = 0; i < kOptionCount; ++i) {
        const auto j = i + static_cast<int>(rng.below(alphabet.size() - i));
        std::swap(alphabet[i], alphabet[j]);
    }
    std::vector<std::string> texts;
    for (int i = 0; i < kOptionCount; ++i) texts.push_back(std::string("Character ") + alphabet[i]);
    const int answer_index = static_cast<int>(rng.below(kOptionCount));
    // Option i shows alphabet[i]; move the target glyph to the answer slot.
    std::rotate(texts.begin(), texts.begin() + (kOptionCount - answer_index) % kOptionCount, texts.end());
    s.options = make_options(texts);
    s.answer = s.options[answer_index].label;
    s.target_glyph = s.options[answer_index].text.back();
    return s;
}

void draw_glyph(Image& img, char c, int left, int top, int height_px, const std::uint8_t* rgb) {
    const int width_px = glyph_cell_width(height_px);
    for (int col = 0; col < kGlyphColumns; ++col) {
        const int x0 = left + glyph_cell_edge(col, kGlyphColumns, width_px);
        const int x1 = left + glyph_cell_edge(col + 1, kGlyphColumns, width_px);
        for (int row = 0; row < kGlyphRows; ++row) {
            if (!glyph_ink(c, row, col)) continue;
            const int y0 = top + glyph_cell_edge(row, kGlyphRows, height_px);
            const int y1 = top + glyph_cell_edge(row + 1, kGlyphRows, height_px);
            fill_rect(img, {x0, y0, x1, y1}, rgb);
        }
    }
}

Image render_scene(const SceneSpec& spec) {
    const int n = spec.canvas_side;
    Image img(n, n, 3);

    // Background: smooth colour ramp, every channel <= 200 so the placard
    // stays the only pure white area.
    for (int y = 0; y < n; ++y) {
        std::uint8_t* p = img.row(y);
        const auto g = static_cast<std::uint8_t>(70 + (110 * y) / n);
        for (int x = 0; x < n; ++x, p += 3) {
            p[0] = static_cast<std::uint8_t>(70 + (110 * x) / n);
            p[1] = g;
            p[2] = static_cast<std::uint8_t>(150 - (60 * (x + y)) / (2 * n));
        }
    }
    const std::uint8_t grid[3] = {55, 60, 70};
    const int pitch = std::max(16, n / 16);
    const int thick = std::max(1, n / 1024);
    for (int v = pitch; v < n; v += pitch) {
        fill_rect(img, {v, 0, v + thick, n}, grid);
        fill_rect(img, {0, v, n, v + thick}, grid);
    }

    SplitMix64 rng(stream_seed(spec.seed, spec.id, "distractors"));
    const auto alphabet = glyph_alphabet();
    const PixelRect keep_out = placard_rect(spec);
    const int max_size = std::max(8, std::min(n / 8, 3 * spec.target_size_px));
    for (int i = 0; i < spec.distractor_count; ++i) {
        const char c = alphabet[rng.below(alphabet.size())];
        const int h = rng.between(8, max_size);
        const int w = glyph_cell_width(h);
        if (w >= n || h >= n) continue;
        const std::uint8_t ink[3] = {static_cast<std::uint8_t>(rng.between(0, 90)),
                                     static_cast<std::uint8_t>(rng.between(0, 90)),
                                     static_cast<std::uint8_t>(rng.between(0, 90))};
        // Bounded rejection sampling; a distractor that cannot be placed is
        // skipped.
        for (int attempt = 0; attempt < 16; ++attempt) {
            const int left = rng.between(0, n - w);
            const int top = rng.between(0, n - h);
            if (overlaps({left - 2, top - 2, left + w + 2, top + h + 2}, keep_out)) continue;
            draw_glyph(img, c, left, top, h, ink);
            break;
        }
    }

    fill_rect(img, keep_out, kPlacard);
    draw_glyph(img, spec.target_glyph, spec.target_rect.left, spec.target_rect.top, spec.target_size_px, kInk);
    return img;
}

GeneratedScene gen_scene(const SceneParams& params, std::uint64_t seed, std::string id,
                         const std::filesystem::path& image_path) {
    SceneSpec spec = make_scene(params, seed, std::move(id));
    Image img = render_scene(spec);
    img.set_source_id(spec.id);
    BenchmarkRecord rec = spec.record(image_path);
    return {std::move(img), std::move(rec), std::move(spec)};
}

std::vector<SceneSpec> make_dataset(const DatasetParams& params) {
    if (params.count < 0) throw ParamError("count must be >= 0");
    if (params.target_sizes.empty()) throw ParamError("target_sizes must not be empty");
    if (params.subtasks.empty()) throw ParamError("subtasks must not be empty");
    std::vector<SceneSpec> out;
    out.reserve(static_cast<size_t>(params.count));
    for (int i = 0; i < params.count; ++i) {
        SceneParams sp;
        sp.canvas_side = params.canvas_side;
        sp.target_size_px = params.target_sizes[static_cast<size_t>(i) % params.target_sizes.size()];
        sp.subtask = params.subtasks[static_cast<size_t>(i) % params.subtasks.size()];
        sp.distractor_count = params.distractor_count;
        out.push_back(make_scene(sp, params.seed, fmt::format("{}-{:04d}", params.id_prefix, i)));
    }
    return out;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<SceneSpec>& scenes) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    std::ofstream dataset(dir / "dataset.jsonl", std::ios::binary | std::ios::trunc);
    std::ofstream truth(dir / "scenes.jsonl", std::ios::binary | std::ios::trunc);
    if (!dataset || !truth) throw Error("cannot write dataset files under " + dir.string());
    for (const auto& s : scenes) {
        const std::string rel = "images/" + s.id + ".png";
        const Image img = render_scene(s);
        // The sidecar lets `run` on a single generated file find its scene.
        const auto bytes = attach_provenance(encode(img, ImageFormat::png),
                                             {s.id, PixelRect::full(img.width(), img.height()),
                                              {img.width(), img.height()}});
        std::ofstream f(dir / rel, std::ios::binary | std::ios::trunc);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw Error("cannot write " + (dir / rel).string());
        dataset << record_to_json(s.record(dir / rel), rel).dump() << '\n';
        truth << scene_to_json(s).dump() << '\n';
    }
    if (!dataset || !truth) throw Error("cannot write dataset files under " + dir.string());
}

SceneRegistry::SceneRegistry(const std::vector<SceneSpec>& scenes) {
    for (const auto& s : scenes) add(s);
}

SceneRegistry SceneRegistry::load(const std::filesystem::path& scenes_jsonl) {
    std::ifstream in(scenes_jsonl, std::ios::binary);
    if (!in) throw FileNotFound("scene file not found: " + scenes_jsonl.string());
    SceneRegistry reg;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            reg.add(scene_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(fmt::format("line {}: {}", n, e.what()));
        } catch (const SchemaError& e) {
            throw SchemaError(fmt::format("line {}: {}", n, e.what()));
        }
    }
    return reg;
}

void SceneRegistry::add(SceneSpec spec) {
    if (scenes_.count(spec.id)) throw SchemaError("duplicate scene id: " + spec.id);
    auto id = spec.id;
    scenes_.emplace(std::move(id), std::move(spec));
}

const SceneSpec& SceneRegistry::at(const std::string& id) const {
    const auto it = scenes_.find(id);
    if (it == scenes_.end()) throw UnknownScene("unknown scene: " + id);
    return it->second;
}

std::vector<BenchmarkRecord> SceneRegistry::records() const {
    std::vector<BenchmarkRecord> out;
    out.reserve(scenes_.size());
    for (const auto& [id, s] : scenes_) out.push_back(s.record("images/" + id + ".png"));
    return out;
}

ImageProvider scene_image_provider(const SceneRegistry& registry) {
    return [&registry](const BenchmarkRecord& r) {
        Image img = render_scene(registry.at(r.id));
        img.set_source_id(r.id);
        return img;
    };
}

void OracleConfig::validate() const {
    if (!std::isfinite(legibility_threshold_px) || legibility_threshold_px < 1) {
        throw InvalidArgument("legibility_threshold_px must be >= 1");
    }
    if (!std::isfinite(bbox_noise) || bbox_noise < 0 || bbox_noise > 1) {
        throw InvalidArgument("bbox_noise must be in [0, 1]");
    }
    if (!std::isfinite(no_bbox_probability) || no_bbox_probability < 0 || no_bbox_probability > 1) {
        throw InvalidArgument("no_bbox_probability must be in [0, 1]");
    }
}

nlohmann::json oracle_config_to_json(const OracleConfig& c) {
    return {{"legibility_threshold_px", c.legibility_threshold_px},
            {"bbox_noise", c.bbox_noise},
            {"no_bbox_probability", c.no_bbox_probability},
            {"wrong_answer_policy",
             c.wrong_answer_policy == WrongAnswerPolicy::fixed_offset ? "fixed_offset" : "seeded_random"},
            {"seed", c.seed}};
}

OracleConfig oracle_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("oracle config must be an object");
    OracleConfig c;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "legibility_threshold_px") {
                c.legibility_threshold_px = v.get<double>();
            } else if (key == "bbox_noise") {
                c.bbox_noise = v.get<double>();
            } else if (key == "no_bbox_probability") {
                c.no_bbox_probability = v.get<double>();
            } else if (key == "wrong_answer_policy") {
                const auto p = v.get<std::string>();
                if (p == "fixed_offset") {
                    c.wrong_answer_policy = WrongAnswerPolicy::fixed_offset;
                } else if (p == "seeded_random") {
                    c.wrong_answer_policy = WrongAnswerPolicy::seeded_random;
                } else {
                    throw ConfigError("unknown wrong_answer_policy: " + p);
                }
            } else if (key == "seed") {
                c.seed = v.get<std::uint64_t>();
            } else {
                throw ConfigError("unknown oracle key: " + key);
            }
        }
        c.validate();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("oracle config: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("oracle config: ") + e.what());
    }
    return c;
}

double presented_glyph_height(int target_size_px, const PixelRect& region, int presented_height) noexcept {
    if (region.height() <= 0) return 0.0;
    return static_cast<double>(target_size_px) * presented_height / region.height();
}

OracleBackend::OracleBackend(const SceneRegistry& registry, OracleConfig cfg)
    : registry_(registry), cfg_(cfg) {
    cfg_.validate();
}

ChoiceLabel OracleBackend::wrong_answer(const SceneSpec& scene) const {
    const auto n = scene.options.size();
    size_t correct = 0;
    while (correct < n && scene.options[correct].label != scene.answer) ++correct;
    if (cfg_.wrong_answer_policy == WrongAnswerPolicy::fixed_offset) {
        return scene.options[(correct + 1) % n].label;
    }
    SplitMix64 rng(stream_seed(cfg_.seed, scene.id, "guess"));
    return scene.options[rng.below(n)].label;
}

ChoiceLabel OracleBackend::perceive(const SceneSpec& scene, const PixelRect& region, int presented_height) const {
    const bool legible = region.contains(scene.target_rect) &&
                         presented_glyph_height(scene.target_size_px, region, presented_height) >=
                             cfg_.legibility_threshold_px;
    return legible ? scene.answer : wrong_answer(scene);
}

ModelReply OracleBackend::complete(const Conversation& conv) {
    conv.validate_for_submission();
    std::vector<const ImageAttachment*> images;
    for (const auto& t : conv.turns) {
        for (const auto& img : t.images) images.push_back(&img);
    }
    if (images.empty()) throw ScriptError("oracle needs at least one image");

    std::optional<Provenance> first;
    Size first_size;
    const SceneSpec& scene = registry_.at(scene_id_of(*images.front(), first, first_size));
    const ChoiceLabel initial = perceive(scene, first->region, first_size.height);

    std::string text;
    if (images.size() == 1) {
        text = fmt::format("The white placard holds a single character.\nAnswer: ({})\n", initial.str());
        SplitMix64 rng(stream_seed(cfg_.seed, scene.id, "bbox"));
        const bool omit = rng.unit() < cfg_.no_bbox_probability;
        if (omit) {
            text += "I cannot isolate a single relevant region.";
        } else {
            // Ground truth in the presented image's frame, jittered.
            const auto& r = first->region;
            const auto& t = scene.target_rect;
            auto coord = [&](int v, int lo, int extent) {
                const double jitter = (2.0 * rng.unit() - 1.0) * cfg_.bbox_noise;
                return std::clamp(static_cast<double>(v - lo) / extent + jitter, 0.0, 1.0);
            };
            const double x1 = coord(t.left, r.left, r.width());
            const double y1 = coord(t.top, r.top, r.height());
            const double x2 = coord(t.right, r.left, r.width());
            const double y2 = coord(t.bottom, r.top, r.height());
            text += "Relevant region: " + format_bbox({x1, y1, x2, y2});
        }
    } else {
        std::optional<Provenance> second;
        Size second_size;
        const std::string second_id = scene_id_of(*images.back(), second, second_size);
        if (second_id != scene.id) {
            throw UnknownScene("crop belongs to scene " + second_id + ", not " + scene.id);
        }
        const PixelRect& region = second->region;
        const bool legible = region.contains(scene.target_rect) &&
                             presented_glyph_height(scene.target_size_px, region, second_size.height) >=
                                 cfg_.legibility_threshold_px;
        const ChoiceLabel final_label = legible ? scene.answer : initial;
        text = final_label == initial
                   ? fmt::format("The zoomed view is consistent with my first reading, so I keep it.\nAnswer: ({})",
                                 final_label.str())
                   : fmt::format("The zoomed view shows the character clearly and it differs from my first "
                                 "reading.\nAnswer: ({})",
                                 final_label.str());
    }

    ModelReply reply;
    reply.text = std::move(text);
    reply.prompt_tokens = estimate_prompt_tokens(conv);
    reply.completion_tokens = estimate_text_tokens(reply.text);
    return reply;
}

}  // namespace zoomrefine::mockworld
