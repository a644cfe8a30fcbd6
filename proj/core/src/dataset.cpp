// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include "ats/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ats/weights.hpp"

namespace ats {

namespace {

constexpr std::uint64_t kValStream = 1ULL << 40;

class Canvas {
public:
    explicit Canvas(std::size_t size) : size_(size), image_({size, size, 1}) {}

    void paint(long y, long x, float v) {
        if (y < 0 || x < 0 || y >= static_cast<long>(size_) || x >= static_cast<long>(size_)) return;
        float& px = image_[static_cast<std::size_t>(y) * size_ + static_cast<std::size_t>(x)];
        px = std::max(px, v);
    }

    void rect(long y0, long x0, long h, long w, float v) {
        for (long y = y0; y < y0 + h; ++y)
            for (long x = x0; x < x0 + w; ++x) paint(y, x, v);
    }

    std::size_t size() const { return size_; }
    Tensor<float> take() { return std::move(image_); }

private:
    std::size_t size_;
    Tensor<float> image_;
};

float object_intensity(Rng& rng) { return static_cast<float>(0.75 + 0.25 * rng.uniform()); }

// Long bars confined to the central band across their thickness.
void draw_bar(Canvas& c, Rng& rng, bool horizontal) {
    const long s = static_cast<long>(c.size());
    const long thick = 2 + static_cast<long>(rng.uniform_int(2));
    const long length = s - 10 + static_cast<long>(rng.uniform_int(7));
    const long across = s / 4 + static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(s / 2 - thick + 1)));
    const long along = static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(s - length + 1)));
    const float v = object_intensity(rng);
    if (horizontal) c.rect(across, along, thick, length, v);
    else c.rect(along, across, length, thick, v);
}

void draw_blob(Canvas& c, Rng& rng) {
    const double s = static_cast<double>(c.size());
    const double radius = 4.0 + 3.0 * rng.uniform();
    const double cy = s * 0.375 + s * 0.25 * rng.uniform();
    const double cx = s * 0.375 + s * 0.25 * rng.uniform();
    const float v = object_intensity(rng);
    for (long y = 0; y < static_cast<long>(s); ++y)
        for (long x = 0; x < static_cast<long>(s); ++x) {
            const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
            if (dy * dy + dx * dx <= radius * radius) c.paint(y, x, v);
        }
}

// Short specks (at most 3 px long) plus low-amplitude grain, both scaled by clutter.
void draw_clutter(Canvas& c, Rng& rng, double clutter) {
    if (clutter <= 0.0) return;
    const long s = static_cast<long>(c.size());
    const std::size_t specks = static_cast<std::size_t>(std::lround(clutter * 60.0));
    for (std::size_t i = 0; i < specks; ++i) {
        const long h = 1 + static_cast<long>(rng.uniform_int(3));
        const long w = h == 3 ? 1 : 1 + static_cast<long>(rng.uniform_int(h == 1 ? 3 : 2));
        const long y = static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(s)));
        const long x = static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(s)));
        c.rect(y, x, h, w, static_cast<float>(0.3 + 0.6 * rng.uniform()));
    }
    for (long y = 0; y < s; ++y)
        for (long x = 0; x < s; ++x) c.paint(y, x, static_cast<float>(0.25 * clutter * rng.uniform()));
}

}  // namespace

nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json j = {{"schema", 1},
                        {"seed", m.seed},
                        {"n_train", m.n_train},
                        {"n_val", m.n_val},
                        {"clutter_alpha", m.clutter_alpha},
                        {"clutter_beta", m.clutter_beta},
                        {"image_size", m.image_size}};
    j["fixed_clutter"] = m.fixed_clutter ? nlohmann::json(*m.fixed_clutter) : nlohmann::json(nullptr);
    return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    if (j.value("schema", 0) != 1) throw FormatError("dataset manifest: missing or unsupported schema");
    m.seed = j.value("seed", m.seed);
    m.n_train = j.value("n_train", m.n_train);
    m.n_val = j.value("n_val", m.n_val);
    m.clutter_alpha = j.value("clutter_alpha", m.clutter_alpha);
    m.clutter_beta = j.value("clutter_beta", m.clutter_beta);
    m.image_size = j.value("image_size", m.image_size);
    if (j.contains("fixed_clutter") && !j["fixed_clutter"].is_null()) m.fixed_clutter = j["fixed_clutter"].get<double>();
    return m;
}

ShapeSample render_sample(std::size_t label, double clutter, Rng& rng, std::size_t image_size) {
    if (label >= kShapeClasses) throw ContractError("render_sample: label out of range");
    if (image_size < 16) throw ContractError("render_sample: image_size must be at least 16");
    Canvas canvas(image_size);
    Rng shape_rng = rng.derive(1);
    Rng clutter_rng = rng.derive(2);
    draw_clutter(canvas, clutter_rng, clutter);
    switch (static_cast<ShapeClass>(label)) {
        case ShapeClass::h_bar: draw_bar(canvas, shape_rng, true); break;
        case ShapeClass::v_bar: draw_bar(canvas, shape_rng, false); break;
        case ShapeClass::cross:
            draw_bar(canvas, shape_rng, true);
            draw_bar(canvas, shape_rng, false);
            break;
        case ShapeClass::blob: draw_blob(canvas, shape_rng); break;
    }
    return {canvas.take(), label, clutter};
}

Dataset generate(const DatasetManifest& manifest) {
    if (manifest.n_train == 0 || manifest.n_val == 0) throw ContractError("generate: both splits need samples");
    const Rng root(manifest.seed);
    auto make_split = [&](std::size_t count, std::uint64_t base) {
        std::vector<ShapeSample> out;
        out.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            Rng rng = root.derive(base + i);
            const double clutter = manifest.fixed_clutter
                                       ? *manifest.fixed_clutter
                                       : rng.derive(0).beta_int(manifest.clutter_alpha, manifest.clutter_beta);
            out.push_back(render_sample(i % kShapeClasses, clutter, rng, manifest.image_size));
        }
        return out;
    };
    return {make_split(manifest.n_train, 0), make_split(manifest.n_val, kValStream)};
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(const std::vector<char>& bytes, std::size_t& pos) {
    for (;;) {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (pos < bytes.size() && bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) tok.push_back(bytes[pos++]);
    return tok;
}

std::size_t parse_dim(const std::string& tok, const char* what) {
    try {
        std::size_t used = 0;
        const long v = std::stol(tok, &used);
        if (used != tok.size() || v <= 0) throw FormatError("");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw FormatError(std::string("PGM: bad ") + what + " '" + tok + "'");
    }
}

}  // namespace

Tensor<float> load_pgm(const std::filesystem::path& path, std::optional<std::size_t> expected_size) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("PGM: cannot open " + path.string());
    const std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("PGM: bad magic (expected P5)");
    std::size_t pos = 2;
    const std::size_t width = parse_dim(next_token(bytes, pos), "width");
    const std::size_t height = parse_dim(next_token(bytes, pos), "height");
    const std::size_t maxval = parse_dim(next_token(bytes, pos), "maxval");
    if (maxval != 255) throw FormatError("PGM: only maxval 255 is supported");
    ++pos;
    if (expected_size && (width != *expected_size || height != *expected_size)) {
        throw DimensionError("PGM: image is " + std::to_string(width) + "x" + std::to_string(height) + ", expected " +
                             std::to_string(*expected_size) + "x" + std::to_string(*expected_size));
    }
    if (bytes.size() < pos + width * height) throw FormatError("PGM: truncated pixel data");
    Tensor<float> out({height, width, 1});
    for (std::size_t i = 0; i < width * height; ++i) {
        out[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
    }
    return out;
}

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels) {
    if (pixels.size() != width * height) throw DimensionError("write_pgm: pixel count does not match dimensions");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("PGM: cannot write " + path.string());
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void save_pgm(const std::filesystem::path& path, const Tensor<float>& image) {
    if (image.rank() != 3 || image.shape()[2] != 1) throw DimensionError("save_pgm: expected [H x W x 1]");
    std::vector<std::uint8_t> px(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) {
        px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0f, 1.0f) * 255.0f));
    }
    write_pgm(path, image.shape()[1], image.shape()[0], px);
}

void save_samples(const std::filesystem::path& path, const std::vector<ShapeSample>& samples) {
    if (samples.empty()) throw ContractError("save_samples: nothing to save");
    const Shape shape = samples.front().image.shape();
    std::vector<std::size_t> labels;
    std::vector<double> clutter;
    for (const auto& s : samples) {
        if (s.image.shape() != shape) throw DimensionError("save_samples: images differ in shape");
        labels.push_back(s.label);
        clutter.push_back(s.clutter);
    }
    const nlohmann::json header = {{"schema", 1},       {"count", samples.size()}, {"image_shape", shape},
                                   {"labels", labels}, {"clutter", clutter}};
    std::vector<char> out{'A', 'T', 'S', 'D', '1', '\n'};
    const std::string text = header.dump();
    out.insert(out.end(), text.begin(), text.end());
    out.push_back('\n');
    for (const auto& s : samples)
        for (float v : s.image.data()) append_f32_le(out, v);
    write_file_bytes(path, out);
}

std::vector<ShapeSample> load_samples(const std::filesystem::path& path) {
    const std::vector<char> bytes = read_file_bytes(path);
    if (bytes.size() < 6 || std::memcmp(bytes.data(), "ATSD1\n", 6) != 0) throw FormatError("dataset: bad magic");
    const auto newline = std::find(bytes.begin() + 6, bytes.end(), '\n');
    if (newline == bytes.end()) throw FormatError("dataset: unterminated header");
    try {
        const nlohmann::json header = nlohmann::json::parse(bytes.begin() + 6, newline);
        if (header.at("schema").get<int>() != 1) throw FormatError("dataset: unsupported schema");
        const auto count = header.at("count").get<std::size_t>();
        const auto shape = header.at("image_shape").get<Shape>();
        const auto labels = header.at("labels").get<std::vector<std::size_t>>();
        const auto clutter = header.at("clutter").get<std::vector<double>>();
        if (labels.size() != count || clutter.size() != count) throw FormatError("dataset: header arrays disagree");
        const std::size_t per = shape_size(shape);
        const std::size_t start = static_cast<std::size_t>(newline - bytes.begin()) + 1;
        if (bytes.size() - start != count * per * 4) throw FormatError("dataset: payload size mismatch");
        std::vector<ShapeSample> out;
        out.reserve(count);
        const char* cursor = bytes.data() + start;
        for (std::size_t i = 0; i < count; ++i) {
            Tensor<float> img(shape);
            for (auto& v : img.data()) {
                v = read_f32_le(cursor);
                cursor += 4;
            }
            out.push_back({std::move(img), labels[i], clutter[i]});
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset: ") + e.what());
    }
}

}  // namespace ats
