// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ats/rng.hpp"
#include "ats/tensor.hpp"

namespace ats {

/// Synthetic four-way shape task on a dark background.
enum class ShapeClass : std::size_t { h_bar = 0, v_bar = 1, cross = 2, blob = 3 };
inline constexpr std::size_t kShapeClasses = 4;

struct ShapeSample {
    Tensor<float> image;  ///< [S×S×1], values in [0, 1]
    std::size_t label = 0;
    double clutter = 0.0;  ///< background texture density in [0, 1]
};

/// Clutter per image ~ Beta(clutter_alpha, clutter_beta) unless fixed_clutter
/// is set. Sample i of a split is rendered from its own derived stream.
struct DatasetManifest {
    std::uint64_t seed = 2024;
    std::size_t n_train = 2000;
    std::size_t n_val = 500;
    unsigned clutter_alpha = 2;
    unsigned clutter_beta = 2;
    std::optional<double> fixed_clutter;
    std::size_t image_size = 32;
};

struct Dataset {
    std::vector<ShapeSample> train;
    std::vector<ShapeSample> val;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

/// Draws one image of class `label`. Background pixels are exactly 0 when
/// clutter is 0.
ShapeSample render_sample(std::size_t label, double clutter, Rng& rng, std::size_t image_size = 32);

/// Labels cycle 0,1,2,3 so each split is balanced to within one sample.
Dataset generate(const DatasetManifest& manifest);

/// Binary PGM (P5, maxval 255) → [H×W×1] in [0, 1]. When expected_size is
/// given, width and height must both equal it.
Tensor<float> load_pgm(const std::filesystem::path& path, std::optional<std::size_t> expected_size = std::nullopt);
/// [H×W×1] in [0, 1] → P5, rounded to the nearest of 256 levels.
void save_pgm(const std::filesystem::path& path, const Tensor<float>& image);
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels);

/// "ATSD1\n" + JSON header line (labels, clutter, image shape) + float32 LE pixels.
void save_samples(const std::filesystem::path& path, const std::vector<ShapeSample>& samples);
std::vector<ShapeSample> load_samples(const std::filesystem::path& path);

}  // namespace ats
