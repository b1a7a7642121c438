// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "zoomrefine/error.hpp"
#include "zoomrefine/imaging.hpp"
#include "zoomrefine/mockworld.hpp"

using namespace zoomrefine;
using zoomrefine::mockworld::SplitMix64;

TEST(Image, RejectsBadShapes) {
    EXPECT_THROW(Image(0, 1, 3), InvalidArgument);
    EXPECT_THROW(Image(1, 0, 3), InvalidArgument);
    EXPECT_THROW(Image(1, 1, 2), InvalidArgument);
    EXPECT_THROW(Image(2, 2, 3, std::vector<std::uint8_t>(11)), InvalidArgument);
    EXPECT_NO_THROW(Image(2, 2, 4, std::vector<std::uint8_t>(16)));
}

TEST(LoadImage, TwoByTwoPng) {
    zrtest::TempDir tmp;
    const Image src = zrtest::random_image(2, 2, 3, 1);
    zrtest::write_file(tmp / "a.png", encode(src, ImageFormat::png));
    const Image img = load_image(tmp / "a.png");
    EXPECT_EQ(img.width(), 2);
    EXPECT_EQ(img.height(), 2);
    EXPECT_EQ(img, src);
    EXPECT_EQ(img.source_path(), (tmp / "a.png").string());
}

TEST(LoadImage, MissingFile) {
    EXPECT_THROW(load_image("/nonexistent/zoomrefine.png"), FileNotFound);
}

TEST(LoadImage, TruncatedJpegIsDecodeError) {
    zrtest::TempDir tmp;
    auto bytes = encode(zrtest::random_image(64, 64, 3, 2), ImageFormat::jpeg, 90);
    bytes.resize(bytes.size() / 2);
    zrtest::write_file(tmp / "t.jpg", bytes);
    EXPECT_THROW(load_image(tmp / "t.jpg"), DecodeError);
}

TEST(LoadImage, GarbageIsDecodeError) {
    const std::vector<std::uint8_t> junk = {'n', 'o', 't', ' ', 'a', 'n', ' ', 'i', 'm', 'a', 'g', 'e'};
    EXPECT_THROW(decode_image(junk), DecodeError);
}

TEST(LoadImage, GeneratedScene4096) {
    zrtest::TempDir tmp;
    mockworld::SceneParams p;
    p.canvas_side = 4096;
    p.distractor_count = 2;
    const auto g = mockworld::gen_scene(p, 3, "big");
    zrtest::write_file(tmp / "big.png", encode(g.image, ImageFormat::png));
    const Image img = load_image(tmp / "big.png");
    EXPECT_EQ(img.width(), 4096);
    EXPECT_EQ(img.height(), 4096);
    EXPECT_EQ(img, g.image);
}

TEST(LoadImage, ProvenanceBecomesSourceId) {
    zrtest::TempDir tmp;
    const Image src = zrtest::random_image(8, 6, 3, 3);
    const Provenance prov{"scene-7", PixelRect::full(8, 6), {8, 6}};
    zrtest::write_file(tmp / "p.png", attach_provenance(encode(src, ImageFormat::png), prov));
    const Image img = load_image(tmp / "p.png");
    EXPECT_EQ(img.source_id(), "scene-7");
    EXPECT_EQ(img, src);
}

TEST(Downsample, ForcedArithmetic) {
    EXPECT_EQ(downsampled_size(4000, 3000, 1000), (Size{1000, 750}));
    EXPECT_EQ(downsampled_size(800, 600, 1000), (Size{800, 600}));
    EXPECT_EQ(downsampled_size(8192, 1024, 1024), (Size{1024, 128}));
    EXPECT_EQ(downsampled_size(10000, 1, 100), (Size{100, 1}));
    // 3 * 100 / 200 = 1.5 rounds away from zero.
    EXPECT_EQ(downsampled_size(200, 3, 100), (Size{100, 2}));
}

TEST(Downsample, ImagesHaveExpectedSize) {
    const Image big = zrtest::random_image(400, 300, 3, 4);
    const Image ds = downsample(big, 100);
    EXPECT_EQ(ds.width(), 100);
    EXPECT_EQ(ds.height(), 75);
    const Image small = zrtest::random_image(80, 60, 3, 5);
    EXPECT_EQ(downsample(small, 100), small);
}

TEST(Downsample, AreaAverageOfIntegerFactor) {
    // Each 2x2 block of the source maps to one output pixel whose value is
    // the block mean.
    const Image src = zrtest::random_image(64, 32, 1, 6);
    const Image ds = downsample(src, 32);
    ASSERT_EQ(ds.width(), 32);
    ASSERT_EQ(ds.height(), 16);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 32; ++x) {
            const int sum = src.row(2 * y)[2 * x] + src.row(2 * y)[2 * x + 1] + src.row(2 * y + 1)[2 * x] +
                            src.row(2 * y + 1)[2 * x + 1];
            EXPECT_NEAR(ds.row(y)[x], sum / 4.0, 0.5 + 1e-9) << x << "," << y;
        }
    }
}

TEST(Downsample, ConstantImageStaysConstant) {
    Image img(333, 201, 3);
    for (auto& p : img.pixels()) p = 77;
    const Image ds = downsample(img, 97);
    for (auto p : ds.pixels()) ASSERT_EQ(p, 77);
}

TEST(Downsample, IdempotentDimensions) {
    SplitMix64 rng(7);
    for (int i = 0; i < 200; ++i) {
        const int w = rng.between(1, 5000), h = rng.between(1, 5000), s = rng.between(1, 2000);
        const Size a = downsampled_size(w, h, s);
        EXPECT_EQ(downsampled_size(a.width, a.height, s), a) << w << "x" << h << " @" << s;
        EXPECT_LE(std::max(a.width, a.height), std::max(std::min(std::max(w, h), s), 1));
    }
}

TEST(Denormalize, ForcedArithmetic) {
    EXPECT_EQ(denormalize({0.25, 0.25, 0.75, 0.75}, 4000, 3000), (PixelRect{1000, 750, 3000, 2250}));
    EXPECT_EQ(denormalize({0, 0, 1, 1}, 123, 45), PixelRect::full(123, 45));
    const PixelRect r = denormalize({0.5, 0.5, 0.5001, 0.5001}, 100, 100);
    EXPECT_TRUE(r.valid_for(100, 100));
    EXPECT_GE(r.width(), 1);
    EXPECT_GE(r.height(), 1);
    // Degenerate at the far edge widens toward the inside.
    const PixelRect edge = denormalize({0.9999, 0.9999, 1.0, 1.0}, 100, 100);
    EXPECT_EQ(edge, (PixelRect{99, 99, 100, 100}));
}

TEST(Denormalize, NormalizeRoundTripWithinOnePixel) {
    SplitMix64 rng(8);
    for (int i = 0; i < 2000; ++i) {
        const int w = rng.between(1, 6000), h = rng.between(1, 6000);
        const int l = rng.between(0, w - 1), t = rng.between(0, h - 1);
        const PixelRect r{l, t, rng.between(l + 1, w), rng.between(t + 1, h)};
        const PixelRect back = denormalize(normalize(r, w, h), w, h);
        EXPECT_LE(std::abs(back.left - r.left), 1);
        EXPECT_LE(std::abs(back.top - r.top), 1);
        EXPECT_LE(std::abs(back.right - r.right), 1);
        EXPECT_LE(std::abs(back.bottom - r.bottom), 1);
    }
}

TEST(NormBBox, RepairSortsAndFlags) {
    bool changed = false;
    const auto b = NormBBox::repair(0.8, 0.9, 0.2, 0.1, &changed);
    ASSERT_TRUE(b);
    EXPECT_TRUE(changed);
    EXPECT_EQ(*b, (NormBBox{0.2, 0.1, 0.8, 0.9}));
    const auto ok = NormBBox::repair(0.1, 0.2, 0.3, 0.4, &changed);
    EXPECT_FALSE(changed);
    EXPECT_TRUE(ok->valid());
    EXPECT_FALSE(NormBBox::repair(NAN, 0, 1, 1));
    const auto flat = NormBBox::repair(1.0, 0.5, 1.0, 0.5);
    ASSERT_TRUE(flat);
    EXPECT_TRUE(flat->valid());
}

TEST(ExpandAndClamp, ForcedArithmetic) {
    const CropPolicy p{1.2, 448, 2048};
    EXPECT_EQ(expand_and_clamp({1000, 750, 3000, 2250}, p, 4000, 3000), (PixelRect{800, 600, 3200, 2400}));
}

TEST(ExpandAndClamp, IdentityWithUnitFactorAndNoMinimum) {
    const CropPolicy p{1.0, 0, 2048};
    const PixelRect r{17, 3, 40, 99};
    EXPECT_EQ(expand_and_clamp(r, p, 100, 100), r);
}

TEST(ExpandAndClamp, TinyRectGrowsToMinimumInBounds) {
    const CropPolicy p{1.2, 512, 2048};
    const PixelRect in{10, 10, 12, 12};
    const PixelRect out = expand_and_clamp(in, p, 4096, 4096);
    EXPECT_EQ(out.width(), 512);
    EXPECT_EQ(out.height(), 512);
    EXPECT_TRUE(out.contains(in));
    EXPECT_TRUE(out.valid_for(4096, 4096));
    EXPECT_EQ(out.left, 0);
    EXPECT_EQ(out.top, 0);
}

TEST(ExpandAndClamp, MinimumCappedAtImage) {
    const CropPolicy p{1.2, 448, 2048};
    EXPECT_EQ(expand_and_clamp({5, 5, 10, 10}, p, 300, 200), PixelRect::full(300, 200));
}

TEST(ExpandAndClamp, InvalidInputThrows) {
    EXPECT_THROW(expand_and_clamp({5, 5, 5, 10}, CropPolicy{}, 100, 100), RectOutOfBounds);
    EXPECT_THROW(expand_and_clamp({0, 0, 101, 10}, CropPolicy{}, 100, 100), RectOutOfBounds);
}

TEST(CropPolicy, Validate) {
    EXPECT_NO_THROW(CropPolicy{}.validate());
    EXPECT_THROW((CropPolicy{0.9, 448, 2048}.validate()), InvalidArgument);
    EXPECT_THROW((CropPolicy{1.2, 4096, 2048}.validate()), InvalidArgument);
    EXPECT_THROW((CropPolicy{1.2, -1, 2048}.validate()), InvalidArgument);
}

TEST(Crop, FullRectIsIdentical) {
    for (int c : {1, 3, 4}) {
        const Image img = zrtest::random_image(37, 23, c, 9 + c);
        EXPECT_EQ(crop(img, PixelRect::full(37, 23)), img);
    }
}

TEST(Crop, TopLeftPixel) {
    const Image img = zrtest::random_image(5, 4, 3, 10);
    const Image px = crop(img, {0, 0, 1, 1});
    ASSERT_EQ(px.width(), 1);
    ASSERT_EQ(px.height(), 1);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(px.pixels()[k], img.pixels()[k]);
}

TEST(Crop, ExactCopy) {
    const Image img = zrtest::random_image(50, 40, 3, 11);
    const PixelRect r{7, 9, 31, 33};
    const Image c = crop(img, r);
    for (int y = 0; y < r.height(); ++y) {
        for (int x = 0; x < r.width() * 3; ++x) {
            ASSERT_EQ(c.row(y)[x], img.row(r.top + y)[r.left * 3 + x]);
        }
    }
}

TEST(Crop, OutOfBoundsThrows) {
    const Image img = zrtest::random_image(5, 5, 3, 12);
    EXPECT_THROW(crop(img, {0, 0, 6, 5}), RectOutOfBounds);
    EXPECT_THROW(crop(img, {3, 3, 3, 4}), RectOutOfBounds);
    EXPECT_THROW(crop(img, {-1, 0, 2, 2}), RectOutOfBounds);
}

TEST(Crop, SceneTargetRectHoldsGlyph) {
    mockworld::SceneParams p;
    p.canvas_side = 1024;
    p.target_size_px = 24;
    const auto g = mockworld::gen_scene(p, 21, "glyph");
    const Image c = crop(g.image, g.spec.target_rect);
    Image expected(c.width(), c.height(), 3);
    for (auto& v : expected.pixels()) v = 255;
    mockworld::draw_glyph(expected, g.spec.target_glyph, 0, 0, g.spec.target_size_px, mockworld::kInk);
    EXPECT_EQ(c, expected);
}

TEST(Encode, PngRoundTripLossless) {
    for (int c : {1, 3, 4}) {
        const Image img = zrtest::random_image(16, 16, c, 13);
        const Image back = decode_image(encode(img, ImageFormat::png));
        ASSERT_EQ(back.width(), 16);
        ASSERT_EQ(back.height(), 16);
        ASSERT_EQ(back.channels(), 3);
        if (c == 3) {
            EXPECT_EQ(back, img);
        } else {
            // Decoding always yields RGB: gray expands, alpha is dropped.
            for (int i = 0; i < 16 * 16; ++i) {
                for (int k = 0; k < 3; ++k) {
                    const int src = c == 1 ? img.pixels()[i] : img.pixels()[i * 4 + k];
                    ASSERT_EQ(back.pixels()[i * 3 + k], src);
                }
            }
        }
    }
}

TEST(Encode, JpegQualityBounds) {
    const Image img = zrtest::random_image(4, 4, 3, 14);
    EXPECT_THROW(encode(img, ImageFormat::jpeg, 0), EncodeError);
    EXPECT_THROW(encode(img, ImageFormat::jpeg, 101), EncodeError);
    EXPECT_NO_THROW(encode(img, ImageFormat::jpeg, 1));
}

TEST(Encode, OnePixelBothFormats) {
    const Image img = zrtest::random_image(1, 1, 3, 15);
    const auto png = encode(img, ImageFormat::png);
    ASSERT_GE(png.size(), 8u);
    EXPECT_EQ(png[1], 'P');
    EXPECT_EQ(decode_image(png), img);
    const auto jpg = encode(img, ImageFormat::jpeg, 90);
    EXPECT_EQ(jpg[0], 0xFF);
    EXPECT_EQ(jpg[1], 0xD8);
    const Image back = decode_image(jpg);
    EXPECT_EQ(back.width(), 1);
    EXPECT_EQ(back.height(), 1);
}

TEST(Provenance, RoundTripBothFormats) {
    const Image img = zrtest::random_image(20, 10, 3, 16);
    const Provenance prov{"scene-0001", {3, 4, 13, 9}, {4096, 2048}};
    for (auto fmt : {ImageFormat::png, ImageFormat::jpeg}) {
        const auto bytes = attach_provenance(encode(img, fmt), prov);
        EXPECT_EQ(read_provenance(bytes), prov);
        EXPECT_EQ(probe_size(bytes), (Size{20, 10}));
        const Image back = decode_image(bytes);
        EXPECT_EQ(back.width(), 20);
        if (fmt == ImageFormat::png) EXPECT_EQ(back, img);
    }
    EXPECT_FALSE(read_provenance(encode(img, ImageFormat::png)));
}

// Property: for random sizes and boxes the whole geometry chain stays in
// bounds, contains the input center, and never throws.
TEST(GeometryProperty, ChainNeverFails) {
    SplitMix64 rng(17);
    for (int i = 0; i < 3000; ++i) {
        const int w = rng.between(1, 5000), h = rng.between(1, 5000);
        const auto b = NormBBox::repair(rng.unit(), rng.unit(), rng.unit(), rng.unit());
        ASSERT_TRUE(b);
        const CropPolicy p{1.0 + rng.unit(), rng.between(0, 1024), 2048};
        const PixelRect r = denormalize(*b, w, h);
        ASSERT_TRUE(r.valid_for(w, h));
        const PixelRect e = expand_and_clamp(r, p, w, h);
        ASSERT_TRUE(e.valid_for(w, h));
        ASSERT_TRUE(e.contains(r));
        const double cx = (r.left + r.right) / 2.0, cy = (r.top + r.bottom) / 2.0;
        ASSERT_TRUE(e.left <= cx && cx <= e.right && e.top <= cy && cy <= e.bottom);
        ASSERT_GE(e.width(), std::min(w, p.min_side_px));
        ASSERT_GE(e.height(), std::min(h, p.min_side_px));
    }
}
