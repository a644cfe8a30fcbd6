// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ats/error.hpp"
#include "ats/model.hpp"

namespace ats {

/// Weight file layout:
///
///   "ATSW1\n"
///   <single-line JSON header>"\n"
///   <payload: little-endian float32, tensors back to back in header order>
///
/// The header carries {"schema":1, "config":{arch}, "tensors":[{"name",
/// "shape", "offset", "nbytes"}...], "payload_bytes"}. Offsets are relative
/// to the first payload byte. Only architecture is recorded; sampler
/// settings are runtime options.
class WeightFileError : public FormatError {
public:
    enum class Kind { bad_magic, bad_header, shape_mismatch, truncated_payload, trailing_data, io };

    WeightFileError(Kind kind, const std::string& what) : FormatError(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

inline constexpr char kWeightMagic[] = "ATSW1\n";

template <typename T>
std::vector<char> serialize_weights(const Model<T>& model);

template <typename T>
Model<T> deserialize_weights(const std::vector<char>& bytes);

template <typename T>
void save_weights(const Model<T>& model, const std::filesystem::path& path);

template <typename T>
Model<T> load_weights(const std::filesystem::path& path);

std::vector<char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<char>& bytes);

/// Little-endian float32 codec shared with the dataset cache.
void append_f32_le(std::vector<char>& out, float v);
float read_f32_le(const char* p);

}  // namespace ats
