// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include "zoomrefine/protocol.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "zoomrefine/error.hpp"
#include "zoomrefine/hash.hpp"

namespace zoomrefine {

namespace {

constexpr std::array<std::string_view, 4> kSections = {"system", "localized_zoom", "self_refine",
                                                       "baseline"};

bool is_ident(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || c == '_';
    });
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

void check_placeholders(std::string_view name, std::string_view tpl, bool require_question) {
    try {
        const std::string probe = fill_template(tpl, "", {});
        (void)probe;
    } catch (const TemplateError& e) {
        throw TemplateError(std::string(name) + " template: " + e.what());
    }
    if (require_question && tpl.find("{question}") == std::string_view::npos) {
        throw TemplateError(std::string(name) + " template is missing the {question} placeholder");
    }
}

Turn user_turn(std::string text, const ImageAttachment& img) {
    return Turn{Role::user, std::move(text), {img}};
}

// Scans a decimal number at `pos`: [+-]digits[.digits][e[+-]digits].
bool scan_number(std::string_view s, size_t& pos, double& value) {
    const size_t start = pos;
    size_t i = pos;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    size_t digits = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++digits;
    if (i < s.size() && s[i] == '.') {
        ++i;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++digits;
    }
    if (digits == 0) return false;
    if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
        size_t j = i + 1;
        if (j < s.size() && (s[j] == '+' || s[j] == '-')) ++j;
        size_t exp_digits = 0;
        while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j, ++exp_digits;
        if (exp_digits > 0) i = j;
    }
    // from_chars rejects a leading '+'.
    size_t parse_from = start;
    if (s[parse_from] == '+') ++parse_from;
    const auto res = std::from_chars(s.data() + parse_from, s.data() + i, value);
    if (res.ec != std::errc() || res.ptr != s.data() + i) return false;
    pos = i;
    return true;
}

void skip_spaces(std::string_view s, size_t& pos) {
    while (pos < s.size() && is_space(s[pos])) ++pos;
}

// Parses "[a, b, c, d]" starting at the '[' at `pos`.
std::optional<std::array<double, 4>> scan_box(std::string_view s, size_t pos) {
    std::array<double, 4> v{};
    ++pos;
    for (int k = 0; k < 4; ++k) {
        skip_spaces(s, pos);
        if (!scan_number(s, pos, v[k])) return std::nullopt;
        skip_spaces(s, pos);
        const char expect = k == 3 ? ']' : ',';
        if (pos >= s.size() || s[pos] != expect) return std::nullopt;
        ++pos;
    }
    return v;
}

// Rule 1 helper: the letter following "answer is" / "answer:" at `pos`.
std::optional<char> letter_after_answer(std::string_view s, size_t pos) {
    bool keyword = false;
    skip_spaces(s, pos);
    if (pos + 2 <= s.size() && lower(s.substr(pos, 2)) == "is" &&
        (pos + 2 == s.size() || !is_alnum(s[pos + 2]))) {
        pos += 2;
        keyword = true;
        skip_spaces(s, pos);
    }
    if (pos < s.size() && s[pos] == ':') {
        ++pos;
        keyword = true;
        skip_spaces(s, pos);
    }
    if (!keyword) return std::nullopt;
    while (pos < s.size() && s[pos] == '*') ++pos;
    skip_spaces(s, pos);
    bool bracketed = false;
    if (pos < s.size() && (s[pos] == '(' || s[pos] == '[')) {
        ++pos;
        bracketed = true;
    }
    if (pos >= s.size()) return std::nullopt;
    char c = s[pos];
    if (bracketed && c >= 'a' && c <= 'e') c = static_cast<char>(c - 'a' + 'A');
    if (c < 'A' || c > 'Z') return std::nullopt;
    if (pos + 1 < s.size() && is_alnum(s[pos + 1])) return std::nullopt;
    return c;
}

}  // namespace

std::string_view to_string(Role role) noexcept {
    switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    }
    return "user";
}

void Conversation::validate() const {
    for (size_t i = 0; i < turns.size(); ++i) {
        const Turn& t = turns[i];
        if (t.role == Role::system) {
            if (i != 0) throw InvalidArgument("system turn must be first");
            if (!t.images.empty()) throw InvalidArgument("system turn cannot carry images");
            continue;
        }
        if (t.role == Role::assistant && !t.images.empty()) {
            throw InvalidArgument("assistant turn cannot carry images");
        }
        const size_t first = !turns.empty() && turns[0].role == Role::system ? 1 : 0;
        const Role expected = (i - first) % 2 == 0 ? Role::user : Role::assistant;
        if (t.role != expected) {
            throw InvalidArgument("turn " + std::to_string(i) + " breaks user/assistant alternation");
        }
    }
}

void Conversation::validate_for_submission() const {
    validate();
    if (turns.empty() || turns.back().role != Role::user) {
        throw InvalidArgument("conversation submitted to a backend must end with a user turn");
    }
}

size_t Conversation::image_count() const noexcept {
    size_t n = 0;
    for (const auto& t : turns) n += t.images.size();
    return n;
}

Options make_options(const std::vector<std::string>& texts) {
    if (texts.empty()) throw InvalidArgument("options must be nonempty");
    if (texts.size() > 5) throw InvalidArgument("at most five options are supported");
    Options out;
    for (size_t i = 0; i < texts.size(); ++i) {
        out.push_back({ChoiceLabel{static_cast<char>('A' + i)}, texts[i]});
    }
    return out;
}

void validate_options(const Options& options) {
    if (options.empty()) throw InvalidArgument("options must be nonempty");
    if (options.size() > 5) throw InvalidArgument("at most five options are supported");
    std::set<char> seen;
    for (const auto& o : options) {
        if (o.label.letter < 'A' || o.label.letter > 'E') {
            throw InvalidArgument(std::string("option label out of range: ") + o.label.letter);
        }
        if (!seen.insert(o.label.letter).second) {
            throw InvalidArgument(std::string("duplicate option label: ") + o.label.letter);
        }
    }
}

bool has_label(const Options& options, ChoiceLabel label) noexcept {
    return std::any_of(options.begin(), options.end(),
                       [&](const Option& o) { return o.label == label; });
}

PromptTemplates PromptTemplates::defaults() {
    PromptTemplates t;
    t.system =
        "You are a meticulous visual analyst. You answer multiple-choice questions about "
        "high-resolution images and base every answer on visible evidence.";
    t.localized_zoom =
        "Question: {question}\n"
        "Options:\n"
        "{options}\n"
        "\n"
        "First, give your preliminary answer as \"Answer: (X)\", where X is the letter of the best "
        "option, with a short explanation.\n"
        "Then identify the image region that matters most for answering the question. Choose a "
        "region large enough to include the relevant context around the key detail. Output it as "
        "a bounding box [x1, y1, x2, y2] with coordinates normalized to 0-1 relative to the image "
        "width and height, for example \"Region: [0.25, 0.40, 0.55, 0.70]\".";
    t.self_refine =
        "The image above is a high-resolution crop of the region you selected, taken from the "
        "original full-resolution image.\n"
        "Inspect the crop for fine-grained details that were not visible in the downsampled "
        "image. Compare the fine-grained details observed in the crop with the broader context "
        "of the first image and with your earlier reasoning. Then either reaffirm your initial "
        "answer and justify it, or revise it and explain the correction.\n"
        "Question: {question}\n"
        "Options:\n"
        "{options}\n"
        "End your reply with \"Answer: (X)\", where X is the letter of your final choice.";
    t.baseline =
        "Question: {question}\n"
        "Options:\n"
        "{options}\n"
        "\n"
        "Answer with the letter of the best option, written as \"Answer: (X)\".";
    return t;
}

PromptTemplates PromptTemplates::parse(std::string_view text) {
    PromptTemplates t;
    std::array<std::optional<std::string>, kSections.size()> bodies;
    std::optional<size_t> current;
    std::string body;

    auto flush = [&] {
        if (!current) return;
        while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
        bodies[*current] = body;
        body.clear();
    };

    size_t line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        pos = nl + 1;

        if (line.size() > 2 && line.front() == '[' && line.back() == ']' &&
            is_ident(line.substr(1, line.size() - 2))) {
            const auto name = line.substr(1, line.size() - 2);
            const auto it = std::find(kSections.begin(), kSections.end(), name);
            if (it == kSections.end()) {
                throw TemplateError("line " + std::to_string(line_no) + ": unknown section [" +
                                    std::string(name) + "]");
            }
            const auto idx = static_cast<size_t>(it - kSections.begin());
            if (bodies[idx]) {
                throw TemplateError("line " + std::to_string(line_no) + ": duplicate section [" +
                                    std::string(name) + "]");
            }
            flush();
            current = idx;
            bodies[idx] = std::string();
            continue;
        }
        if (!current) {
            if (trim(line).empty() || line.front() == '#') continue;
            throw TemplateError("line " + std::to_string(line_no) + ": text before the first section");
        }
        if (body.empty() && line.empty()) continue;  // leading blank lines
        if (!body.empty()) body.push_back('\n');
        body.append(line);
    }
    flush();

    const auto defaults = PromptTemplates::defaults();
    for (size_t i = 0; i < 3; ++i) {
        if (!bodies[i]) throw TemplateError("missing section [" + std::string(kSections[i]) + "]");
    }
    t.system = *bodies[0];
    t.localized_zoom = *bodies[1];
    t.self_refine = *bodies[2];
    t.baseline = bodies[3] ? *bodies[3] : defaults.baseline;
    t.validate();
    return t;
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TemplateError("cannot open template file: " + path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text);
}

std::string PromptTemplates::serialize() const {
    std::string out;
    const std::array<const std::string*, 4> parts = {&system, &localized_zoom, &self_refine, &baseline};
    for (size_t i = 0; i < parts.size(); ++i) {
        out += "[" + std::string(kSections[i]) + "]\n";
        out += *parts[i];
        out += "\n";
    }
    return out;
}

std::string PromptTemplates::hash() const { return sha256_hex(serialize()); }

void PromptTemplates::validate() const {
    check_placeholders("system", system, false);
    check_placeholders("localized_zoom", localized_zoom, true);
    check_placeholders("self_refine", self_refine, false);
    check_placeholders("baseline", baseline, true);
}

std::string fill_template(std::string_view tpl, std::string_view question, const Options& options) {
    std::string out;
    out.reserve(tpl.size() + question.size());
    for (size_t i = 0; i < tpl.size(); ++i) {
        const char c = tpl[i];
        if (c == '{') {
            if (i + 1 < tpl.size() && tpl[i + 1] == '{') {
                out.push_back('{');
                ++i;
                continue;
            }
            const size_t close = tpl.find('}', i);
            if (close == std::string_view::npos) throw TemplateError("unterminated '{' in template");
            const auto name = tpl.substr(i + 1, close - i - 1);
            if (name == "question") out.append(question);
            else if (name == "options") out.append(format_options(options));
            else throw TemplateError("unknown placeholder {" + std::string(name) + "}");
            i = close;
        } else if (c == '}') {
            if (i + 1 < tpl.size() && tpl[i + 1] == '}') {
                out.push_back('}');
                ++i;
                continue;
            }
            throw TemplateError("unmatched '}' in template");
        } else {
            out.push_back(c);
        }
    }
    return out;
}

std::string format_options(const Options& options) {
    std::string out;
    for (size_t i = 0; i < options.size(); ++i) {
        if (i) out.push_back('\n');
        out += "(" + options[i].label.str() + ") " + options[i].text;
    }
    return out;
}

std::string format_bbox(const NormBBox& box) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(12);
    os << '[' << box.x1 << ", " << box.y1 << ", " << box.x2 << ", " << box.y2 << ']';
    return os.str();
}

ImageAttachment make_attachment(const Image& img, ImageFormat format, int jpeg_quality,
                                const std::optional<Provenance>& provenance) {
    auto bytes = encode(img, format, jpeg_quality);
    if (provenance) bytes = attach_provenance(std::move(bytes), *provenance);
    return ImageAttachment{std::move(bytes), std::string(media_type(format))};
}

Conversation render_zoom_request(const ImageAttachment& img_ds, std::string_view question,
                                 const Options& options, const PromptTemplates& templates) {
    if (trim(question).empty()) throw InvalidArgument("question must be nonempty");
    validate_options(options);
    if (templates.localized_zoom.find("{question}") == std::string::npos) {
        throw TemplateError("localized_zoom template is missing the {question} placeholder");
    }
    Conversation conv;
    conv.turns.push_back({Role::system, fill_template(templates.system, question, options), {}});
    conv.turns.push_back(user_turn(fill_template(templates.localized_zoom, question, options), img_ds));
    return conv;
}

Conversation render_baseline_request(const ImageAttachment& img_ds, std::string_view question,
                                     const Options& options, const PromptTemplates& templates) {
    if (trim(question).empty()) throw InvalidArgument("question must be nonempty");
    validate_options(options);
    if (templates.baseline.find("{question}") == std::string::npos) {
        throw TemplateError("baseline template is missing the {question} placeholder");
    }
    Conversation conv;
    conv.turns.push_back({Role::system, fill_template(templates.system, question, options), {}});
    conv.turns.push_back(user_turn(fill_template(templates.baseline, question, options), img_ds));
    return conv;
}

Conversation build_refine_conversation(const Conversation& stage1, std::string_view reply1,
                                       const ImageAttachment& crop, std::string_view question,
                                       const Options& options, const PromptTemplates& templates) {
    stage1.validate_for_submission();
    if (trim(reply1).empty()) {
        throw InvalidArgument("refinement needs the stage-1 assistant reply");
    }
    Conversation conv = stage1;
    conv.turns.push_back({Role::assistant, std::string(reply1), {}});
    conv.turns.push_back(user_turn(fill_template(templates.self_refine, question, options), crop));
    return conv;
}

ParsedZoomReply parse_zoom_reply(std::string_view text, const Options& options) {
    ParsedZoomReply out;
    out.raw_text = std::string(text);
    try {
        out.preliminary_answer = parse_choice(text, options);
    } catch (...) {
        out.preliminary_answer.reset();
    }

    std::optional<std::array<double, 4>> found;
    for (size_t pos = text.rfind('['); pos != std::string_view::npos;
         pos = pos == 0 ? std::string_view::npos : text.rfind('[', pos - 1)) {
        found = scan_box(text, pos);
        if (found) break;
    }
    if (!found) return out;

    auto& v = *found;
    const bool fractions = std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0 && x <= 1.0; });
    const bool percent = std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0 && x <= 100.0; });
    if (!fractions) {
        if (!percent) return out;
        for (double& x : v) x /= 100.0;
    }
    bool changed = false;
    out.bbox = NormBBox::repair(v[0], v[1], v[2], v[3], &changed);
    out.bbox_repaired = out.bbox.has_value() && changed;
    return out;
}

std::optional<ChoiceLabel> parse_choice(std::string_view text, const Options& options) {
    if (options.empty()) return std::nullopt;

    // (1) "answer is X" / "answer: X", last occurrence.
    const std::string low = lower(text);
    std::optional<ChoiceLabel> rule1;
    for (size_t pos = low.find("answer"); pos != std::string::npos; pos = low.find("answer", pos + 1)) {
        if (auto c = letter_after_answer(text, pos + 6)) {
            if (has_label(options, ChoiceLabel{*c})) rule1 = ChoiceLabel{*c};
        }
    }
    if (rule1) return rule1;

    // (2) a line holding only an option letter, e.g. "C", "(C)", "C.".
    std::set<char> standalone;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        if (!line.empty() && (line.back() == '.' || line.back() == ':')) line.remove_suffix(1);
        if (line.size() == 3 && line.front() == '(' && line.back() == ')') line = line.substr(1, 1);
        if (line.size() == 1 && has_label(options, ChoiceLabel{line[0]})) standalone.insert(line[0]);
    }
    if (standalone.size() == 1) return ChoiceLabel{*standalone.begin()};
    if (standalone.size() > 1) return std::nullopt;

    // (3) exactly one option's text contained.
    std::optional<ChoiceLabel> match;
    int matches = 0;
    for (const auto& o : options) {
        const std::string needle = lower(trim(o.text));
        if (needle.empty()) continue;
        if (low.find(needle) != std::string::npos) {
            ++matches;
            match = o.label;
        }
    }
    if (matches == 1) return match;
    return std::nullopt;
}

}  // namespace zoomrefine
