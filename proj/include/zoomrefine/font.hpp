// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace zoomrefine {

inline constexpr int kGlyphColumns = 5;
inline constexpr int kGlyphRows = 7;

/// Characters the scene generator draws. Every one of them has ink in the
/// top and bottom font rows, so a glyph scaled to height h has ink height h.
std::string_view glyph_alphabet() noexcept;

std::optional<std::array<std::uint8_t, kGlyphColumns>> glyph_columns(char c) noexcept;
bool glyph_ink(char c, int row, int col) noexcept;

/// Width of a glyph cell scaled to `height_px`.
int glyph_cell_width(int height_px) noexcept;
/// Pixel offset of font cell boundary `index` when `cells` font cells are
/// stretched over `extent_px` pixels (nearest-neighbour scaling).
int glyph_cell_edge(int index, int cells, int extent_px) noexcept;

}  // namespace zoomrefine
