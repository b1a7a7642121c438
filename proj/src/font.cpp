// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include "zoomrefine/font.hpp"

#include <algorithm>
#include <cmath>

namespace zoomrefine {

namespace {

// Classic 5x7 column-major bitmap font. Bit r of a column byte is row r
// (row 0 on top).
struct GlyphEntry {
    char ch;
    std::array<std::uint8_t, kGlyphColumns> columns;
};

constexpr GlyphEntry kGlyphs[] = {
    {'0', {0x3E, 0x51, 0x49, 0x45, 0x3E}}, {'2', {0x42, 0x61, 0x51, 0x49, 0x46}},
    {'3', {0x21, 0x41, 0x45, 0x4B, 0x31}}, {'4', {0x18, 0x14, 0x12, 0x7F, 0x10}},
    {'5', {0x27, 0x45, 0x45, 0x45, 0x39}}, {'6', {0x3C, 0x4A, 0x49, 0x49, 0x30}},
    {'7', {0x01, 0x71, 0x09, 0x05, 0x03}}, {'8', {0x36, 0x49, 0x49, 0x49, 0x36}},
    {'9', {0x06, 0x49, 0x49, 0x29, 0x1E}}, {'A', {0x7E, 0x11, 0x11, 0x11, 0x7E}},
    {'B', {0x7F, 0x49, 0x49, 0x49, 0x36}}, {'C', {0x3E, 0x41, 0x41, 0x41, 0x22}},
    {'D', {0x7F, 0x41, 0x41, 0x22, 0x1C}}, {'E', {0x7F, 0x49, 0x49, 0x49, 0x41}},
    {'F', {0x7F, 0x09, 0x09, 0x01, 0x01}}, {'G', {0x3E, 0x41, 0x41, 0x51, 0x32}},
    {'H', {0x7F, 0x08, 0x08, 0x08, 0x7F}}, {'J', {0x20, 0x40, 0x41, 0x3F, 0x01}},
    {'K', {0x7F, 0x08, 0x14, 0x22, 0x41}}, {'L', {0x7F, 0x40, 0x40, 0x40, 0x40}},
    {'M', {0x7F, 0x02, 0x04, 0x02, 0x7F}}, {'N', {0x7F, 0x04, 0x08, 0x10, 0x7F}},
    {'P', {0x7F, 0x09, 0x09, 0x09, 0x06}}, {'Q', {0x3E, 0x41, 0x51, 0x21, 0x5E}},
    {'R', {0x7F, 0x09, 0x19, 0x29, 0x46}}, {'S', {0x46, 0x49, 0x49, 0x49, 0x31}},
    {'T', {0x01, 0x01, 0x7F, 0x01, 0x01}}, {'U', {0x3F, 0x40, 0x40, 0x40, 0x3F}},
    {'V', {0x1F, 0x20, 0x40, 0x20, 0x1F}}, {'W', {0x7F, 0x20, 0x18, 0x20, 0x7F}},
    {'X', {0x63, 0x14, 0x08, 0x14, 0x63}}, {'Y', {0x03, 0x04, 0x78, 0x04, 0x03}},
    {'Z', {0x61, 0x51, 0x49, 0x45, 0x43}},
};

}  // namespace

std::string_view glyph_alphabet() noexcept {
    // '1', 'I' and 'O' are left out: too easily confused with each other
    // and with '0'.
    return "023456789ABCDEFGHJKLMNPQRSTUVWXYZ";
}

std::optional<std::array<std::uint8_t, kGlyphColumns>> glyph_columns(char c) noexcept {
    for (const auto& g : kGlyphs) {
        if (g.ch == c) return g.columns;
    }
    return std::nullopt;
}

bool glyph_ink(char c, int row, int col) noexcept {
    const auto cols = glyph_columns(c);
    if (!cols || row < 0 || row >= kGlyphRows || col < 0 || col >= kGlyphColumns) return false;
    return ((*cols)[col] >> row) & 1;
}

int glyph_cell_width(int height_px) noexcept {
    return std::max(1, static_cast<int>(std::lround(height_px * static_cast<double>(kGlyphColumns) / kGlyphRows)));
}

int glyph_cell_edge(int index, int cells, int extent_px) noexcept {
    return static_cast<int>(std::lround(static_cast<double>(index) * extent_px / cells));
}

}  // namespace zoomrefine
