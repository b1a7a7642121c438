// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "zoomrefine/backend.hpp"
#include "zoomrefine/bench.hpp"
#include "zoomrefine/imaging.hpp"

namespace zoomrefine::mockworld {

/// Deterministic 64-bit stream (SplitMix64). The oracle and the generator
/// derive every random choice from it so results are identical across
/// platforms and standard libraries.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}
    std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    /// Uniform double in [0, 1).
    double unit() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept { return next() % n; }
    /// Integer in [lo, hi].
    int between(int lo, int hi) noexcept {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

private:
    std::uint64_t state_;
};

/// Seed for the stream a component uses for one scene:
/// `seed ^ fnv1a64(scene_id + ":" + purpose)`.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view scene_id, std::string_view purpose) noexcept;

struct SceneParams {
    int canvas_side = 4096;
    int target_size_px = 24;
    int distractor_count = 12;
    std::string subtask = "OCR";
};

/// Ground truth of one generated scene. The image itself is a pure function
/// of this record (see render_scene).
struct SceneSpec {
    std::string id;
    std::uint64_t seed = 0;
    int canvas_side = 4096;
    char target_glyph = 'A';
    int target_size_px = 24;
    /// Glyph cell on the canvas, and the same box normalized.
    PixelRect target_rect;
    NormBBox target_bbox;
    int distractor_count = 0;
    std::string subtask;
    std::string question;
    Options options;
    ChoiceLabel answer;

    BenchmarkRecord record(const std::filesystem::path& image_path) const;
};

nlohmann::json scene_to_json(const SceneSpec& s);
SceneSpec scene_from_json(const nlohmann::json& j);

/// Lays out a scene; throws ParamError for canvas_side < 64,
/// target_size_px < 8, or a target that does not fit.
SceneSpec make_scene(const SceneParams& params, std::uint64_t seed, std::string id);
/// Renders the scene: gradient and grid background, distractor glyphs, and
/// the target glyph on a white placard.
Image render_scene(const SceneSpec& spec);

/// Draws `c` scaled to `height_px` with its top-left corner at (left, top).
void draw_glyph(Image& img, char c, int left, int top, int height_px, const std::uint8_t* rgb);

inline constexpr std::uint8_t kInk[3] = {16, 16, 16};
inline constexpr std::uint8_t kPlacard[3] = {255, 255, 255};

struct GeneratedScene {
    Image image;
    BenchmarkRecord record;
    SceneSpec spec;
};

GeneratedScene gen_scene(const SceneParams& params, std::uint64_t seed, std::string id,
                         const std::filesystem::path& image_path = {});

struct DatasetParams {
    int count = 200;
    std::uint64_t seed = 1;
    int canvas_side = 4096;
    /// Scene i uses target_sizes[i % size].
    std::vector<int> target_sizes = {24, 64};
    /// Scene i uses subtasks[i % size].
    std::vector<std::string> subtasks = {"OCR"};
    int distractor_count = 12;
    std::string id_prefix = "scene";
};

std::vector<SceneSpec> make_dataset(const DatasetParams& params);

/// Writes `images/<id>.png`, `dataset.jsonl` and `scenes.jsonl` under `dir`.
void write_dataset(const std::filesystem::path& dir, const std::vector<SceneSpec>& scenes);

class SceneRegistry {
public:
    SceneRegistry() = default;
    explicit SceneRegistry(const std::vector<SceneSpec>& scenes);
    static SceneRegistry load(const std::filesystem::path& scenes_jsonl);

    void add(SceneSpec spec);
    /// Throws UnknownScene.
    const SceneSpec& at(const std::string& id) const;
    bool contains(const std::string& id) const { return scenes_.count(id) > 0; }
    size_t size() const noexcept { return scenes_.size(); }
    std::vector<BenchmarkRecord> records() const;

private:
    std::map<std::string, SceneSpec> scenes_;
};

/// Renders scenes on demand from the registry instead of reading files.
ImageProvider scene_image_provider(const SceneRegistry& registry);

enum class WrongAnswerPolicy { fixed_offset, seeded_random };

struct OracleConfig {
    /// A glyph is readable iff its height in the presented image >= this.
    double legibility_threshold_px = 12.0;
    /// Uniform jitter on each returned box coordinate, fraction of canvas.
    double bbox_noise = 0.0;
    double no_bbox_probability = 0.0;
    /// fixed_offset answers the option after the correct one (cyclic);
    /// seeded_random guesses uniformly among all options.
    WrongAnswerPolicy wrong_answer_policy = WrongAnswerPolicy::fixed_offset;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json oracle_config_to_json(const OracleConfig& c);
OracleConfig oracle_config_from_json(const nlohmann::json& j);

/// Glyph height as it appears in an image that shows `region` of the
/// original canvas scaled to `presented_height` rows.
double presented_glyph_height(int target_size_px, const PixelRect& region, int presented_height) noexcept;

/// Resolution-limited stand-in model. Reads the scene id and source region
/// from each image's provenance; a one-image conversation gets a stage-1
/// answer plus box, a two-image one gets a decision driven by the second
/// image.
class OracleBackend final : public Backend {
public:
    OracleBackend(const SceneRegistry& registry, OracleConfig cfg);
    ModelReply complete(const Conversation& conv) override;

    /// Label the oracle gives for one presented view of a scene.
    ChoiceLabel perceive(const SceneSpec& scene, const PixelRect& region, int presented_height) const;
    /// Label given when the scene is not legible.
    ChoiceLabel wrong_answer(const SceneSpec& scene) const;

private:
    const SceneRegistry& registry_;
    OracleConfig cfg_;
};

}  // namespace zoomrefine::mockworld
