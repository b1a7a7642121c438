// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include "zoomrefine/imaging.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "zoomrefine/error.hpp"

namespace zoomrefine {

namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
constexpr std::string_view kProvenanceKey = "zoomrefine";

bool is_png(std::span<const std::uint8_t> b) {
    return b.size() >= 8 && std::equal(std::begin(kPngSignature), std::end(kPngSignature), b.begin());
}

bool is_jpeg(std::span<const std::uint8_t> b) {
    return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

std::uint32_t read_be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
           std::uint32_t{p[3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

// libjpeg pads a truncated stream with gray instead of failing, so a JPEG
// must carry its end-of-image marker (optionally followed by padding).
bool jpeg_has_eoi(std::span<const std::uint8_t> b) {
    size_t end = b.size();
    while (end > 0 && (b[end - 1] == 0x00 || b[end - 1] == '\n' || b[end - 1] == '\r')) --end;
    return end >= 4 && b[end - 2] == 0xFF && b[end - 1] == 0xD9;
}

// Interleaved channel swap between RGB(A) and OpenCV's BGR(A).
void swap_red_blue(std::uint8_t* data, size_t pixel_count, int channels) {
    if (channels < 3) return;
    for (size_t i = 0; i < pixel_count; ++i) {
        std::swap(data[i * channels], data[i * channels + 2]);
    }
}

struct AxisWeights {
    // For each output index: first source index and the coverage of each
    // consecutive source sample, normalized to sum to 1.
    std::vector<int> first;
    std::vector<std::vector<float>> weights;
};

AxisWeights area_weights(int in, int out) {
    AxisWeights w;
    w.first.resize(out);
    w.weights.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        const double lo = i * scale;
        const double hi = i + 1 == out ? in : std::min<double>(in, (i + 1) * scale);
        const int j0 = static_cast<int>(std::floor(lo));
        const int j1 = std::min(in, static_cast<int>(std::ceil(hi)));
        w.first[i] = j0;
        double total = 0.0;
        std::vector<double> cover;
        for (int j = j0; j < j1; ++j) {
            cover.push_back(std::max(0.0, std::min<double>(j + 1, hi) - std::max<double>(j, lo)));
            total += cover.back();
        }
        for (double c : cover) w.weights[i].push_back(static_cast<float>(c / total));
    }
    return w;
}

/// Integer-ratio area average: each output pixel is the rounded mean of a
/// kx by ky block.
Image block_mean(const Image& img, int kx, int ky) {
    const int c = img.channels();
    const int ow = img.width() / kx;
    const int oh = img.height() / ky;
    const std::uint32_t n = static_cast<std::uint32_t>(kx) * static_cast<std::uint32_t>(ky);
    Image out(ow, oh, c);
    std::vector<std::uint32_t> acc(static_cast<size_t>(ow) * c);
    for (int oy = 0; oy < oh; ++oy) {
        std::fill(acc.begin(), acc.end(), 0u);
        for (int dy = 0; dy < ky; ++dy) {
            const std::uint8_t* src = img.row(oy * ky + dy);
            for (int ox = 0; ox < ow; ++ox) {
                std::uint32_t* a = acc.data() + static_cast<size_t>(ox) * c;
                for (int dx = 0; dx < kx; ++dx) {
                    for (int ch = 0; ch < c; ++ch) a[ch] += *src++;
                }
            }
        }
        std::uint8_t* dst = out.row(oy);
        for (size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<std::uint8_t>((acc[i] + n / 2) / n);
    }
    return out;
}

}  // namespace

Image::Image(int width, int height, int channels)
    : Image(width, height, channels,
            std::vector<std::uint8_t>(
                width > 0 && height > 0 && channels > 0
                    ? static_cast<size_t>(width) * static_cast<size_t>(height) * channels
                    : 0)) {}

Image::Image(int width, int height, int channels, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), channels_(channels), pixels_(std::move(pixels)) {
    if (width < 1 || height < 1) {
        throw InvalidArgument("image dimensions must be positive");
    }
    if (channels != 1 && channels != 3 && channels != 4) {
        throw InvalidArgument("image channel count must be 1, 3 or 4");
    }
    if (pixels_.size() != static_cast<size_t>(width) * static_cast<size_t>(height) * channels) {
        throw InvalidArgument("pixel buffer length does not match width x height x channels");
    }
}

bool NormBBox::valid() const noexcept {
    return 0.0 <= x1 && x1 < x2 && x2 <= 1.0 && 0.0 <= y1 && y1 < y2 && y2 <= 1.0;
}

std::optional<NormBBox> NormBBox::repair(double x1, double y1, double x2, double y2,
                                         bool* changed) {
    if (!std::isfinite(x1) || !std::isfinite(y1) || !std::isfinite(x2) || !std::isfinite(y2)) {
        return std::nullopt;
    }
    constexpr double kMinExtent = 1e-6;
    auto fix_axis = [](double& lo, double& hi) {
        if (lo > hi) std::swap(lo, hi);
        lo = std::clamp(lo, 0.0, 1.0);
        hi = std::clamp(hi, 0.0, 1.0);
        if (lo == hi) {
            if (hi + kMinExtent <= 1.0) hi += kMinExtent;
            else lo = hi - kMinExtent;
        }
    };
    NormBBox b{x1, y1, x2, y2};
    fix_axis(b.x1, b.x2);
    fix_axis(b.y1, b.y2);
    if (changed) *changed = !(b == NormBBox{x1, y1, x2, y2});
    return b;
}

void CropPolicy::validate() const {
    if (!(expansion_factor >= 1.0) || !std::isfinite(expansion_factor)) {
        throw InvalidArgument("crop expansion_factor must be >= 1");
    }
    if (min_side_px < 0 || max_side_px < 1 || min_side_px > max_side_px) {
        throw InvalidArgument("crop policy requires 0 <= min_side_px <= max_side_px and max_side_px >= 1");
    }
}

std::string_view media_type(ImageFormat format) noexcept {
    return format == ImageFormat::png ? "image/png" : "image/jpeg";
}

Image decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw DecodeError("empty image stream");
    if (is_jpeg(bytes) && !jpeg_has_eoi(bytes)) {
        throw DecodeError("truncated JPEG stream (missing end-of-image marker)");
    }
    cv::Mat mat;
    try {
        const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
        mat = cv::imdecode(raw, cv::IMREAD_COLOR);
    } catch (const cv::Exception& e) {
        throw DecodeError(std::string("image decode failed: ") + e.what());
    }
    if (mat.empty() || mat.type() != CV_8UC3) {
        throw DecodeError("unsupported or corrupt image stream");
    }
    std::vector<std::uint8_t> pixels(mat.total() * 3);
    std::uint8_t* dst = pixels.data();
    for (int y = 0; y < mat.rows; ++y) {
        const std::uint8_t* src = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < mat.cols; ++x, src += 3, dst += 3) {
            dst[0] = src[2];
            dst[1] = src[1];
            dst[2] = src[0];
        }
    }
    return Image(mat.cols, mat.rows, 3, std::move(pixels));
}

Image load_image(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        throw FileNotFound("image not found: " + path.string());
    }
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw FileNotFound("cannot open image: " + path.string());
    std::vector<std::uint8_t> bytes(static_cast<size_t>(in.tellg()));
    in.seekg(0);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
        throw DecodeError("cannot read image: " + path.string());
    }
    Image img = decode_image(bytes);
    img.set_source_path(path.string());
    if (auto prov = read_provenance(bytes)) img.set_source_id(std::move(prov->source_id));
    return img;
}

std::vector<std::uint8_t> encode(const Image& img, ImageFormat format, int quality) {
    std::vector<int> params;
    std::string ext;
    int channels = img.channels();
    if (format == ImageFormat::jpeg) {
        if (quality < 1 || quality > 100) {
            throw EncodeError("jpeg quality must be in 1..100");
        }
        ext = ".jpg";
        params = {cv::IMWRITE_JPEG_QUALITY, quality};
        if (channels == 4) channels = 3;
    } else {
        ext = ".png";
        params = {cv::IMWRITE_PNG_COMPRESSION, 1};
    }
    const size_t count = static_cast<size_t>(img.width()) * img.height();
    cv::Mat mat(img.height(), img.width(), CV_8UC(channels));
    auto src = img.pixels();
    auto* dst = mat.ptr<std::uint8_t>(0);
    if (channels == img.channels()) {
        std::copy(src.begin(), src.end(), dst);
    } else {
        for (size_t i = 0; i < count; ++i) std::copy_n(&src[i * 4], 3, dst + i * 3);
    }
    swap_red_blue(dst, count, channels);
    std::vector<std::uint8_t> out;
    try {
        if (!cv::imencode(ext, mat, out, params)) throw EncodeError("image encoder rejected input");
    } catch (const cv::Exception& e) {
        throw EncodeError(std::string("image encode failed: ") + e.what());
    }
    return out;
}

Size downsampled_size(int width, int height, int max_side) {
    if (max_side < 1) throw InvalidArgument("downsample max_side must be >= 1");
    const int longest = std::max(width, height);
    if (longest <= max_side) return {width, height};
    const double scale = static_cast<double>(max_side) / longest;
    auto scaled = [&](int v) { return std::max(1, static_cast<int>(std::round(v * scale))); };
    if (width >= height) return {max_side, scaled(height)};
    return {scaled(width), max_side};
}

Image downsample(const Image& img, int max_side) {
    const Size target = downsampled_size(img.width(), img.height(), max_side);
    if (target.width == img.width() && target.height == img.height()) return img;

    const int c = img.channels();
    if (img.width() % target.width == 0 && img.height() % target.height == 0) {
        Image out = block_mean(img, img.width() / target.width, img.height() / target.height);
        if (img.source_path()) out.set_source_path(*img.source_path());
        if (img.source_id()) out.set_source_id(*img.source_id());
        return out;
    }
    const AxisWeights wy = area_weights(img.height(), target.height);
    const AxisWeights wx = area_weights(img.width(), target.width);

    // Vertical pass: (W x H) -> (W x h), float accumulators.
    const size_t in_stride = img.row_stride();
    std::vector<float> tmp(in_stride * target.height, 0.0f);
    for (int oy = 0; oy < target.height; ++oy) {
        float* acc = tmp.data() + static_cast<size_t>(oy) * in_stride;
        const auto& ws = wy.weights[oy];
        for (size_t k = 0; k < ws.size(); ++k) {
            const std::uint8_t* src = img.row(wy.first[oy] + static_cast<int>(k));
            const float w = ws[k];
            for (size_t i = 0; i < in_stride; ++i) acc[i] += w * src[i];
        }
    }

    // Horizontal pass: (W x h) -> (w x h).
    Image out(target.width, target.height, c);
    for (int oy = 0; oy < target.height; ++oy) {
        const float* src = tmp.data() + static_cast<size_t>(oy) * in_stride;
        std::uint8_t* dst = out.row(oy);
        for (int ox = 0; ox < target.width; ++ox) {
            const auto& ws = wx.weights[ox];
            for (int ch = 0; ch < c; ++ch) {
                float v = 0.0f;
                for (size_t k = 0; k < ws.size(); ++k) {
                    v += ws[k] * src[static_cast<size_t>(wx.first[ox] + static_cast<int>(k)) * c + ch];
                }
                dst[static_cast<size_t>(ox) * c + ch] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    if (img.source_path()) out.set_source_path(*img.source_path());
    if (img.source_id()) out.set_source_id(*img.source_id());
    return out;
}

PixelRect denormalize(const NormBBox& box, int width, int height) {
    if (width < 1 || height < 1) throw InvalidArgument("denormalize needs a non-empty image");
    auto axis = [](double a, double b, int extent, int& lo, int& hi) {
        if (a > b) std::swap(a, b);
        lo = static_cast<int>(std::clamp(std::round(a * extent), 0.0, static_cast<double>(extent)));
        hi = static_cast<int>(std::clamp(std::round(b * extent), 0.0, static_cast<double>(extent)));
        if (hi <= lo) {
            if (lo < extent) {
                hi = lo + 1;
            } else {
                lo = extent - 1;
                hi = extent;
            }
        }
    };
    PixelRect r;
    axis(box.x1, box.x2, width, r.left, r.right);
    axis(box.y1, box.y2, height, r.top, r.bottom);
    return r;
}

NormBBox normalize(const PixelRect& rect, int width, int height) noexcept {
    return {static_cast<double>(rect.left) / width, static_cast<double>(rect.top) / height,
            static_cast<double>(rect.right) / width, static_cast<double>(rect.bottom) / height};
}

PixelRect expand_and_clamp(const PixelRect& rect, const CropPolicy& policy, int width, int height) {
    policy.validate();
    if (!rect.valid_for(width, height)) {
        throw RectOutOfBounds("expand_and_clamp input rect is not inside the image");
    }
    auto axis = [&](int lo, int hi, int extent, int& out_lo, int& out_hi) {
        const int span = hi - lo;
        long target = std::lround(span * policy.expansion_factor);
        target = std::max<long>(target, policy.min_side_px);
        target = std::min<long>(target, extent);
        target = std::max<long>(target, span);
        long start = std::lround((lo + hi - target) / 2.0);
        long end = start + target;
        if (start < 0) {
            end -= start;
            start = 0;
        }
        if (end > extent) {
            start -= end - extent;
            end = extent;
        }
        out_lo = static_cast<int>(start);
        out_hi = static_cast<int>(end);
    };
    PixelRect r;
    axis(rect.left, rect.right, width, r.left, r.right);
    axis(rect.top, rect.bottom, height, r.top, r.bottom);
    return r;
}

Image crop(const Image& img, const PixelRect& rect) {
    if (!rect.valid_for(img.width(), img.height())) {
        throw RectOutOfBounds("crop rect (" + std::to_string(rect.left) + "," + std::to_string(rect.top) +
                              ")-(" + std::to_string(rect.right) + "," + std::to_string(rect.bottom) +
                              ") outside " + std::to_string(img.width()) + "x" +
                              std::to_string(img.height()) + " image");
    }
    Image out(rect.width(), rect.height(), img.channels());
    const size_t bytes = out.row_stride();
    const size_t offset = static_cast<size_t>(rect.left) * img.channels();
    for (int y = 0; y < rect.height(); ++y) {
        std::copy_n(img.row(rect.top + y) + offset, bytes, out.row(y));
    }
    if (img.source_path()) out.set_source_path(*img.source_path());
    if (img.source_id()) out.set_source_id(*img.source_id());
    return out;
}

std::vector<std::uint8_t> attach_provenance(std::vector<std::uint8_t> encoded,
                                            const Provenance& p) {
    const nlohmann::json j = {
        {"id", p.source_id},
        {"region", {p.region.left, p.region.top, p.region.right, p.region.bottom}},
        {"source", {p.source.width, p.source.height}},
    };
    const std::string text = j.dump();

    if (is_png(encoded)) {
        // tEXt chunk right after IHDR (8 signature + 25 IHDR bytes).
        constexpr size_t kInsertAt = 33;
        if (encoded.size() < kInsertAt) throw EncodeError("PNG stream too short for provenance");
        std::vector<std::uint8_t> chunk;
        std::string payload(kProvenanceKey);
        payload.push_back('\0');
        payload += text;
        put_be32(chunk, static_cast<std::uint32_t>(payload.size()));
        const size_t type_at = chunk.size();
        chunk.insert(chunk.end(), {'t', 'E', 'X', 't'});
        chunk.insert(chunk.end(), payload.begin(), payload.end());
        const auto crc = crc32(0L, chunk.data() + type_at, static_cast<uInt>(chunk.size() - type_at));
        put_be32(chunk, static_cast<std::uint32_t>(crc));
        encoded.insert(encoded.begin() + kInsertAt, chunk.begin(), chunk.end());
        return encoded;
    }
    if (is_jpeg(encoded)) {
        std::string payload = std::string(kProvenanceKey) + ":" + text;
        if (payload.size() + 2 > 0xFFFF) throw EncodeError("provenance too long for JPEG comment");
        const auto len = static_cast<std::uint16_t>(payload.size() + 2);
        std::vector<std::uint8_t> seg = {0xFF, 0xFE, static_cast<std::uint8_t>(len >> 8),
                                         static_cast<std::uint8_t>(len & 0xFF)};
        seg.insert(seg.end(), payload.begin(), payload.end());
        encoded.insert(encoded.begin() + 2, seg.begin(), seg.end());
        return encoded;
    }
    throw EncodeError("provenance can only be attached to PNG or JPEG streams");
}

std::optional<Provenance> read_provenance(std::span<const std::uint8_t> b) {
    std::optional<std::string> text;
    if (is_png(b)) {
        size_t pos = 8;
        while (pos + 12 <= b.size()) {
            const std::uint32_t len = read_be32(&b[pos]);
            if (len > b.size() - pos - 12) break;
            const std::string_view type(reinterpret_cast<const char*>(&b[pos + 4]), 4);
            if (type == "tEXt") {
                const std::string_view data(reinterpret_cast<const char*>(&b[pos + 8]), len);
                const auto nul = data.find('\0');
                if (nul != std::string_view::npos && data.substr(0, nul) == kProvenanceKey) {
                    text = std::string(data.substr(nul + 1));
                    break;
                }
            }
            if (type == "IDAT" || type == "IEND") break;
            pos += 12 + len;
        }
    } else if (is_jpeg(b)) {
        size_t pos = 2;
        while (pos + 4 <= b.size() && b[pos] == 0xFF) {
            const std::uint8_t marker = b[pos + 1];
            const size_t len = (size_t{b[pos + 2]} << 8) | b[pos + 3];
            if (len < 2 || pos + 2 + len > b.size()) break;
            if (marker == 0xFE) {
                const std::string_view data(reinterpret_cast<const char*>(&b[pos + 4]), len - 2);
                const std::string prefix = std::string(kProvenanceKey) + ":";
                if (data.starts_with(prefix)) {
                    text = std::string(data.substr(prefix.size()));
                    break;
                }
            }
            if (marker == 0xDA) break;
            pos += 2 + len;
        }
    }
    if (!text) return std::nullopt;
    try {
        const auto j = nlohmann::json::parse(*text);
        Provenance p;
        p.source_id = j.at("id").get<std::string>();
        const auto& r = j.at("region");
        p.region = {r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()};
        p.source = {j.at("source").at(0).get<int>(), j.at("source").at(1).get<int>()};
        return p;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
}

std::optional<Size> probe_size(std::span<const std::uint8_t> b) {
    if (is_png(b)) {
        if (b.size() < 24) return std::nullopt;
        return Size{static_cast<int>(read_be32(&b[16])), static_cast<int>(read_be32(&b[20]))};
    }
    if (is_jpeg(b)) {
        size_t pos = 2;
        while (pos + 4 <= b.size() && b[pos] == 0xFF) {
            const std::uint8_t m = b[pos + 1];
            const size_t len = (size_t{b[pos + 2]} << 8) | b[pos + 3];
            const bool sof = m >= 0xC0 && m <= 0xCF && m != 0xC4 && m != 0xC8 && m != 0xCC;
            if (sof && pos + 9 <= b.size()) {
                const int h = (b[pos + 5] << 8) | b[pos + 6];
                const int w = (b[pos + 7] << 8) | b[pos + 8];
                return Size{w, h};
            }
            if (len < 2) break;
            pos += 2 + len;
        }
    }
    return std::nullopt;
}

}  // namespace zoomrefine
