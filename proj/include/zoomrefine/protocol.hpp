// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "zoomrefine/imaging.hpp"

namespace zoomrefine {

enum class Role { system, user, assistant };

std::string_view to_string(Role role) noexcept;

struct ImageAttachment {
    std::vector<std::uint8_t> bytes;
    std::string media_type;
};

struct Turn {
    Role role = Role::user;
    std::string text;
    std::vector<ImageAttachment> images;
};

/// Ordered chat history. At most one system turn (first), then user and
/// assistant turns alternating, starting with user.
struct Conversation {
    std::vector<Turn> turns;

    /// Throws InvalidArgument describing the first violated invariant.
    void validate() const;
    /// validate() plus: the last turn is a user turn.
    void validate_for_submission() const;

    size_t image_count() const noexcept;
};

/// Multiple-choice answer letter, 'A'..'E'.
struct ChoiceLabel {
    char letter = 'A';
    friend auto operator<=>(const ChoiceLabel&, const ChoiceLabel&) = default;
    std::string str() const { return std::string(1, letter); }
};

struct Option {
    ChoiceLabel label;
    std::string text;
    friend bool operator==(const Option&, const Option&) = default;
};
using Options = std::vector<Option>;

/// Labels texts 'A', 'B', ... in order. Throws InvalidArgument for more
/// than five options.
Options make_options(const std::vector<std::string>& texts);
/// Nonempty, at most five, labels distinct and within 'A'..'E'.
void validate_options(const Options& options);
bool has_label(const Options& options, ChoiceLabel label) noexcept;

/// Prompt texts for the four request kinds. Placeholders `{question}` and
/// `{options}` are substituted; `{{` and `}}` produce literal braces.
struct PromptTemplates {
    std::string system;
    std::string localized_zoom;
    std::string self_refine;
    std::string baseline;

    static PromptTemplates defaults();
    /// Parses the sectioned template file format (see docs/templates.md).
    /// Throws TemplateError.
    static PromptTemplates parse(std::string_view text);
    static PromptTemplates load(const std::filesystem::path& path);
    std::string serialize() const;
    /// SHA-256 of serialize().
    std::string hash() const;
    /// Checks every template's placeholders; throws TemplateError.
    void validate() const;

    friend bool operator==(const PromptTemplates&, const PromptTemplates&) = default;
};

/// Throws TemplateError on unknown placeholders or unbalanced braces.
std::string fill_template(std::string_view tpl, std::string_view question, const Options& options);
std::string format_options(const Options& options);
/// "[x1, y1, x2, y2]" with enough digits to round-trip within 1e-9.
std::string format_bbox(const NormBBox& box);

ImageAttachment make_attachment(const Image& img, ImageFormat format, int jpeg_quality,
                                const std::optional<Provenance>& provenance);

/// [system, user(localized_zoom text, img_ds)].
Conversation render_zoom_request(const ImageAttachment& img_ds, std::string_view question,
                                 const Options& options, const PromptTemplates& templates);
/// [system, user(baseline text, img_ds)].
Conversation render_baseline_request(const ImageAttachment& img_ds, std::string_view question,
                                     const Options& options, const PromptTemplates& templates);
/// stage1 + assistant(reply1) + user(self_refine text, crop).
Conversation build_refine_conversation(const Conversation& stage1, std::string_view reply1,
                                       const ImageAttachment& crop, std::string_view question,
                                       const Options& options, const PromptTemplates& templates);

struct ParsedZoomReply {
    std::optional<ChoiceLabel> preliminary_answer;
    std::optional<NormBBox> bbox;
    bool bbox_repaired = false;
    std::string raw_text;
};

/// Never throws. Takes the last `[a, b, c, d]` group; values in [0, 1] are
/// fractions, values in [0, 100] with any above 1 are percentages, anything
/// else yields no box.
ParsedZoomReply parse_zoom_reply(std::string_view text, const Options& options);

/// Precedence: (1) "answer is (X)" / "Answer: X" (last occurrence wins);
/// (2) a lone option letter on its own line; (3) exactly one option's full
/// text contained case-insensitively. Otherwise nullopt.
std::optional<ChoiceLabel> parse_choice(std::string_view text, const Options& options);

}  // namespace zoomrefine
