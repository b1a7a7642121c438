// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <mutex>

#include "test_support.hpp"
#include "zoomrefine/error.hpp"
#include "zoomrefine/mockworld.hpp"
#include "zoomrefine/pipeline.hpp"

using namespace zoomrefine;
namespace mw = zoomrefine::mockworld;

namespace {

/// Expected wrong answer under fixed_offset, computed from the options alone.
char next_letter(const mw::SceneSpec& s) {
    const int n = static_cast<int>(s.options.size());
    return static_cast<char>('A' + (s.answer.letter - 'A' + 1) % n);
}

struct SceneFixture {
    mw::SceneSpec spec;
    Image image;
    Query query;
};

SceneFixture scene(int canvas, int glyph, std::uint64_t seed = 5) {
    mw::SceneParams p;
    p.canvas_side = canvas;
    p.target_size_px = glyph;
    p.distractor_count = 3;
    auto g = mw::gen_scene(p, seed, "s-" + std::to_string(canvas) + "-" + std::to_string(glyph));
    return {g.spec, std::move(g.image), g.record.query()};
}

/// Passes calls through and remembers every conversation.
class Recorder final : public Backend {
public:
    explicit Recorder(Backend& inner) : inner_(inner) {}
    ModelReply complete(const Conversation& conv) override {
        std::lock_guard<std::mutex> lock(mu_);
        seen.push_back(conv);
        return inner_.complete(conv);
    }
    std::vector<Conversation> seen;

private:
    Backend& inner_;
    std::mutex mu_;
};

/// Stage 1 from the oracle but with the box moved to the far corner from
/// the target; stage 2 from the oracle.
class MisdirectedBox final : public Backend {
public:
    MisdirectedBox(mw::OracleBackend& oracle, std::string region) : oracle_(oracle), region_(std::move(region)) {}
    ModelReply complete(const Conversation& conv) override {
        ModelReply r = oracle_.complete(conv);
        if (conv.image_count() == 1) {
            r.text = r.text.substr(0, r.text.find("Relevant region")) + "Relevant region: " + region_;
        }
        return r;
    }

private:
    mw::OracleBackend& oracle_;
    std::string region_;
};

PipelineConfig small_config(Mode mode) {
    PipelineConfig c;
    c.mode = mode;
    c.downsample_max_side = 1024;
    return c;
}

}  // namespace

TEST(PipelineConfig, HashCoversRepliesNotTransport) {
    PipelineConfig a;
    PipelineConfig b;
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_EQ(a.hash().size(), 16u);
    b.backend.endpoint_url = "http://elsewhere:1/v1/chat/completions";
    b.backend.max_retries = 9;
    EXPECT_EQ(a.hash(), b.hash());
    b.templates.self_refine += " ";
    EXPECT_NE(a.hash(), b.hash());
    PipelineConfig c;
    c.mode = Mode::baseline;
    EXPECT_NE(a.hash(), c.hash());
    PipelineConfig d;
    d.crop_policy.min_side_px = 447;
    EXPECT_NE(a.hash(), d.hash());
    PipelineConfig e;
    e.backend.model_name = "other";
    EXPECT_NE(a.hash(), e.hash());
}

TEST(PipelineConfig, ModeStrings) {
    EXPECT_EQ(mode_from_string("baseline"), Mode::baseline);
    EXPECT_EQ(mode_from_string("zoom_refine"), Mode::zoom_refine);
    EXPECT_THROW(mode_from_string("zoom"), InvalidArgument);
}

TEST(RunBaseline, IllegibleSceneGivesPolicyAnswer) {
    // 16 px on 2048 shows as 8 px at 1024: below the 12 px threshold.
    const auto s = scene(2048, 16);
    mw::SceneRegistry reg({s.spec});
    mw::OracleBackend oracle(reg, {});
    const auto t = run_baseline(s.image, s.query, small_config(Mode::baseline), oracle);
    ASSERT_TRUE(t.initial.label);
    EXPECT_EQ(t.initial.label->letter, next_letter(s.spec));
    EXPECT_EQ(t.final.label, t.initial.label);
    EXPECT_EQ(t.backend_calls, 1);
    EXPECT_FALSE(t.bbox);
    EXPECT_FALSE(t.pixel_rect);
    const auto j = trace_to_json(t);
    EXPECT_FALSE(j.contains("bbox"));
    EXPECT_FALSE(j.contains("pixel_rect"));
    EXPECT_FALSE(j.contains("revised"));
}

TEST(RunBaseline, LegibleSceneGivesCorrectAnswer) {
    const auto s = scene(2048, 32);
    mw::SceneRegistry reg({s.spec});
    mw::OracleBackend oracle(reg, {});
    const auto t = run_baseline(s.image, s.query, small_config(Mode::baseline), oracle);
    EXPECT_EQ(t.final.label, s.spec.answer);
}

TEST(RunZoomRefine, CropCorrectsIllegibleScene) {
    const auto s = scene(2048, 16);
    mw::SceneRegistry reg({s.spec});
    mw::OracleBackend oracle(reg, {});
    Recorder rec(oracle);
    const auto t = run_zoom_refine(s.image, s.query, small_config(Mode::zoom_refine), rec);
    ASSERT_TRUE(t.initial.label);
    EXPECT_EQ(t.initial.label->letter, next_letter(s.spec));
    EXPECT_EQ(t.final.label, s.spec.answer);
    EXPECT_TRUE(t.revised);
    EXPECT_FALSE(t.fallback_reason);
    EXPECT_EQ(t.backend_calls, 2);
    ASSERT_TRUE(t.pixel_rect);
    EXPECT_TRUE(t.pixel_rect->contains(s.spec.target_rect));
    EXPECT_TRUE(t.pixel_rect->valid_for(2048, 2048));
    // Minimum crop side 448 on the original image.
    EXPECT_EQ(t.pixel_rect->width(), 448);
    EXPECT_EQ(t.crop_presented_size, (Size{448, 448}));
    EXPECT_FALSE(t.crop_resized);

    // Stage 1 sees the downsampled image; stage 2 sees stage 1 plus the crop.
    ASSERT_EQ(rec.seen.size(), 2u);
    EXPECT_EQ(probe_size(rec.seen[0].turns[1].images[0].bytes), (Size{1024, 1024}));
    ASSERT_EQ(rec.seen[1].turns.size(), 4u);
    EXPECT_EQ(rec.seen[1].turns[2].text, t.initial.raw);
    EXPECT_EQ(probe_size(rec.seen[1].turns[3].images[0].bytes), (Size{448, 448}));
    const auto prov = read_provenance(rec.seen[1].turns[3].images[0].bytes);
    ASSERT_TRUE(prov);
    EXPECT_EQ(prov->region, *t.pixel_rect);
}

TEST(RunZoomRefine, LegibleSceneIsReaffirmed) {
    const auto s = scene(2048, 32);
    mw::SceneRegistry reg({s.spec});
    mw::OracleBackend oracle(reg, {});
    const auto t = run_zoom_refine(s.image, s.query, small_config(Mode::zoom_refine), oracle);
    EXPECT_EQ(t.initial.label, s.spec.answer);
    EXPECT_EQ(t.final.label, s.spec.answer);
    EXPECT_FALSE(t.revised);
}

TEST(RunZoomRefine, NoBoxFallsBack) {
    const auto s = scene(2048, 16);
    mw::SceneRegistry reg({s.spec});
    mw::OracleConfig oc;
    oc.no_bbox_probability = 1.0;
    mw::OracleBackend oracle(reg, oc);
    const auto t = run_zoom_refine(s.image, s.query, small_config(Mode::zoom_refine), oracle);
    EXPECT_EQ(t.fallback_reason, FallbackReason::no_bbox);
    EXPECT_EQ(t.final.label, t.initial.label);
    EXPECT_EQ(t.final.raw, t.initial.raw);
    EXPECT_FALSE(t.revised);
    EXPECT_EQ(t.backend_calls, 1);
}

TEST(RunZoomRefine, MisdirectedBoxReaffirmsWrongAnswer) {
    const auto s = scene(2048, 16);
    mw::SceneRegistry reg({s.spec});
    mw::OracleBackend oracle(reg, {});
    const bool left = s.spec.target_bbox.x1 > 0.5;
    const bool top = s.spec.target_bbox.y1 > 0.5;
    const std::string region = std::string("[") + (left ? "0.0, " : "0.9, ") + (top ? "0.0, " : "0.9, ") +
                               (left ? "0.1, " : "1.0, ") + (top ? "0.1]" : "1.0]");
    MisdirectedBox backend(oracle, region);
    const auto t = run_zoom_refine(s.image, s.query, small_config(Mode::zoom_refine), backend);
    ASSERT_TRUE(t.pixel_rect);
    EXPECT_FALSE(t.pixel_rect->contains(s.spec.target_rect));
    EXPECT_EQ(t.initial.label->letter, next_letter(s.spec));
    EXPECT_EQ(t.final.label, t.initial.label);
    EXPECT_FALSE(t.revised);
    EXPECT_FALSE(t.fallback_reason);
}

TEST(RunZoomRefine, UnparsedStageTwoFallsBack) {
    const Image img = zrtest::random_image(300, 200, 3, 1);
    MockScript script;
    script.rules.push_back({1, "", "Answer: (B)\nRegion: [0.1, 0.1, 0.4, 0.5]"});
    script.rules.push_back({2, "", "Hard to say from here."});
    ScriptedBackend b(script);
    const Query q{"q1", "Which?", make_options({"one", "two", "three"})};
    const auto t = run_zoom_refine(img, q, small_config(Mode::zoom_refine), b);
    EXPECT_EQ(t.fallback_reason, FallbackReason::stage2_unparsed);
    EXPECT_EQ(t.final.label->letter, 'B');
    EXPECT_EQ(t.refine_raw, "Hard to say from here.");
    EXPECT_EQ(t.backend_calls, 2);
    // Image smaller than the minimum side: crop is the whole image.
    EXPECT_EQ(t.pixel_rect, PixelRect::full(300, 200));
}

TEST(RunZoomRefine, BoxUsesOriginalDimensions) {
    const Image img = zrtest::random_image(4000, 3000, 3, 2);
    MockScript script;
    script.rules.push_back({1, "", "Answer: (A)\nRegion: [0.25, 0.25, 0.75, 0.75]"});
    script.rules.push_back({2, "", "Answer: (A)"});
    ScriptedBackend b(script);
    const Query q{"q2", "Which?", make_options({"x", "y"})};
    const auto t = run_zoom_refine(img, q, small_config(Mode::zoom_refine), b);
    EXPECT_EQ(t.downsampled_size, (Size{1024, 768}));
    EXPECT_EQ(t.pixel_rect, (PixelRect{800, 600, 3200, 2400}));
    EXPECT_TRUE(t.crop_resized);
    EXPECT_EQ(t.crop_presented_size, (Size{2048, 1536}));
}

TEST(RunZoomRefine, BackendErrorsCarryStage) {
    const Image img = zrtest::random_image(64, 64, 3, 3);
    MockScript script;
    script.rules.push_back({1, "", "Answer: (A) [0.1, 0.1, 0.5, 0.5]"});
    ScriptedBackend b(script);
    const Query q{"q3", "Which?", make_options({"x", "y"})};
    try {
        run_zoom_refine(img, q, small_config(Mode::zoom_refine), b);
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), 2);
        EXPECT_EQ(e.kind(), "ScriptError");
    }
    ScriptedBackend empty(MockScript{});
    try {
        run_baseline(img, q, small_config(Mode::baseline), empty);
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), 1);
    }
}

TEST(Trace, JsonRoundTrip) {
    const auto s = scene(2048, 16);
    mw::SceneRegistry reg({s.spec});
    mw::OracleBackend oracle(reg, {});
    for (Mode m : {Mode::baseline, Mode::zoom_refine}) {
        const auto t = run_pipeline(s.image, s.query, small_config(m), oracle);
        const auto j = trace_to_json(t);
        const auto back = trace_from_json(j);
        EXPECT_EQ(trace_to_json(back), j);
        EXPECT_FALSE(trace_to_json(t, false)["stages"][0].contains("latency_ms"));
    }
    EXPECT_THROW(trace_from_json(nlohmann::json::parse(R"({"schema_version":99})")), SchemaError);
    EXPECT_THROW(trace_from_json(nlohmann::json::parse(R"({"schema_version":1})")), SchemaError);
}

// Per-trace check of the improvement property on many scenes: with the
// noiseless oracle the final answer is correct iff the baseline is correct
// or the crop shows the target legibly.
TEST(PipelineProperty, ZoomCorrectImpliesBaselineOrLegibleCrop) {
    const auto specs = zrtest::small_scene_set(12, 23, 2);
    mw::SceneRegistry reg(specs);
    mw::OracleBackend oracle(reg, {});
    for (const auto& spec : specs) {
        Image img = mw::render_scene(spec);
        img.set_source_id(spec.id);
        const Query q{spec.id, spec.question, spec.options};
        const auto base = run_baseline(img, q, small_config(Mode::baseline), oracle);
        const auto zoom = run_zoom_refine(img, q, small_config(Mode::zoom_refine), oracle);
        const bool crop_legible = zoom.pixel_rect && zoom.pixel_rect->contains(spec.target_rect) &&
                                  mw::presented_glyph_height(spec.target_size_px, *zoom.pixel_rect,
                                                             zoom.crop_presented_size->height) >= 12.0;
        const bool zoom_ok = zoom.final.label == spec.answer;
        const bool base_ok = base.final.label == spec.answer;
        EXPECT_EQ(zoom_ok, base_ok || crop_legible) << spec.id;
        EXPECT_TRUE(zoom_ok) << spec.id;
    }
}
