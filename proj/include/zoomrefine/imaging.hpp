// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace zoomrefine {

/// Decoded 8-bit raster, row-major, interleaved channels (RGB / gray / RGBA).
///
/// Immutable once handed to the pipeline; every imaging operation returns a
/// new value.
class Image {
public:
    /// Zero-filled image. Throws InvalidArgument if dimensions or channel
    /// count violate the invariants.
    Image(int width, int height, int channels);
    Image(int width, int height, int channels, std::vector<std::uint8_t> pixels);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int channels() const noexcept { return channels_; }

    std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
    std::span<std::uint8_t> pixels() noexcept { return pixels_; }

    const std::uint8_t* row(int y) const noexcept {
        return pixels_.data() + static_cast<size_t>(y) * row_stride();
    }
    std::uint8_t* row(int y) noexcept {
        return pixels_.data() + static_cast<size_t>(y) * row_stride();
    }
    size_t row_stride() const noexcept { return static_cast<size_t>(width_) * channels_; }

    const std::optional<std::string>& source_path() const noexcept { return source_path_; }
    void set_source_path(std::string path) { source_path_ = std::move(path); }

    /// Identifier attached to transport encodings (see Provenance).
    const std::optional<std::string>& source_id() const noexcept { return source_id_; }
    void set_source_id(std::string id) { source_id_ = std::move(id); }

    /// Pixel equality; provenance strings are ignored.
    friend bool operator==(const Image& a, const Image& b) noexcept {
        return a.width_ == b.width_ && a.height_ == b.height_ && a.channels_ == b.channels_ &&
               a.pixels_ == b.pixels_;
    }

private:
    int width_;
    int height_;
    int channels_;
    std::vector<std::uint8_t> pixels_;
    std::optional<std::string> source_path_;
    std::optional<std::string> source_id_;
};

struct Size {
    int width = 0;
    int height = 0;
    friend bool operator==(const Size&, const Size&) = default;
};

/// Box in fractions of image width/height. A valid box has
/// 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1.
struct NormBBox {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 1.0;
    double y2 = 1.0;

    bool valid() const noexcept;

    /// Sorts each coordinate pair, clamps into [0, 1] and widens an empty
    /// extent so the result is valid. Returns nullopt for non-finite input.
    /// `changed` is set when the output differs from the input.
    static std::optional<NormBBox> repair(double x1, double y1, double x2, double y2,
                                          bool* changed = nullptr);

    friend bool operator==(const NormBBox&, const NormBBox&) = default;
};

/// Half-open integer rectangle: [left, right) x [top, bottom).
struct PixelRect {
    int left = 0;
    int top = 0;
    int right = 0;
    int bottom = 0;

    int width() const noexcept { return right - left; }
    int height() const noexcept { return bottom - top; }
    bool valid_for(int image_width, int image_height) const noexcept {
        return 0 <= left && left < right && right <= image_width && 0 <= top && top < bottom &&
               bottom <= image_height;
    }
    bool contains(const PixelRect& o) const noexcept {
        return left <= o.left && top <= o.top && o.right <= right && o.bottom <= bottom;
    }
    static PixelRect full(int width, int height) noexcept { return {0, 0, width, height}; }

    friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

struct CropPolicy {
    double expansion_factor = 1.2;
    int min_side_px = 448;
    /// Crops whose longer side exceeds this are re-downsampled before transport.
    int max_side_px = 2048;

    /// Throws InvalidArgument.
    void validate() const;
};

enum class ImageFormat { png, jpeg };

std::string_view media_type(ImageFormat format) noexcept;

/// Decodes PNG, JPEG or WebP, applying EXIF orientation. Output is RGB.
/// Embedded provenance, if any, becomes source_id. Throws FileNotFound or
/// DecodeError.
Image load_image(const std::filesystem::path& path);
/// Throws DecodeError.
Image decode_image(std::span<const std::uint8_t> bytes);

/// Throws EncodeError (including jpeg quality outside 1..100).
std::vector<std::uint8_t> encode(const Image& img, ImageFormat format, int quality = 90);

/// Dimensions produced by downsample(): longer side becomes `max_side`, the
/// other side is scaled and rounded half away from zero (minimum 1).
Size downsampled_size(int width, int height, int max_side);

/// Area-averaging resize to `max_side`. Returns a copy when the image
/// already fits.
Image downsample(const Image& img, int max_side);

PixelRect denormalize(const NormBBox& box, int width, int height);
inline PixelRect denormalize(const NormBBox& box, const Image& img) {
    return denormalize(box, img.width(), img.height());
}
NormBBox normalize(const PixelRect& rect, int width, int height) noexcept;

/// Scales the rectangle about its center, grows each side to the policy
/// minimum (capped at the image extent), then translates it back inside the
/// image. The output always contains the input rectangle.
PixelRect expand_and_clamp(const PixelRect& rect, const CropPolicy& policy, int width, int height);
inline PixelRect expand_and_clamp(const PixelRect& rect, const CropPolicy& policy,
                                  const Image& img) {
    return expand_and_clamp(rect, policy, img.width(), img.height());
}

/// Exact pixel copy; throws RectOutOfBounds when `rect` is not valid for `img`.
Image crop(const Image& img, const PixelRect& rect);

/// Where a transported image came from. Embedded into encoded bytes as a
/// PNG tEXt chunk or a JPEG COM segment; decoders ignore it.
struct Provenance {
    std::string source_id;
    PixelRect region;  // in source pixel coordinates
    Size source;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

std::vector<std::uint8_t> attach_provenance(std::vector<std::uint8_t> encoded,
                                            const Provenance& provenance);
std::optional<Provenance> read_provenance(std::span<const std::uint8_t> encoded);

/// Reads dimensions from a PNG or JPEG header without decoding pixels.
std::optional<Size> probe_size(std::span<const std::uint8_t> encoded);

}  // namespace zoomrefine
