// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include "ats/weights.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

namespace ats {

void append_f32_le(std::vector<char>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float read_f32_le(const char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return std::bit_cast<float>(bits);
}

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WeightFileError(WeightFileError::Kind::io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw WeightFileError(WeightFileError::Kind::io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw WeightFileError(WeightFileError::Kind::io, "short write to " + path.string());
}

template <typename T>
std::vector<char> serialize_weights(const Model<T>& model) {
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& p : model.parameters()) {
        const std::size_t nbytes = p.value.size() * 4;
        tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}, {"nbytes", nbytes}});
        offset += nbytes;
    }
    const nlohmann::json header = {
        {"schema", 1}, {"config", to_json(model.arch())}, {"tensors", tensors}, {"payload_bytes", offset}};
    std::vector<char> out(kWeightMagic, kWeightMagic + sizeof(kWeightMagic) - 1);
    const std::string text = header.dump();
    out.insert(out.end(), text.begin(), text.end());
    out.push_back('\n');
    out.reserve(out.size() + offset);
    for (const auto& p : model.parameters())
        for (T v : p.value.data()) append_f32_le(out, static_cast<float>(v));
    return out;
}

template <typename T>
Model<T> deserialize_weights(const std::vector<char>& bytes) {
    using Kind = WeightFileError::Kind;
    const std::size_t magic_len = sizeof(kWeightMagic) - 1;
    if (bytes.size() < magic_len || std::memcmp(bytes.data(), kWeightMagic, magic_len) != 0) {
        throw WeightFileError(Kind::bad_magic, "weight file: bad magic");
    }
    const auto newline = std::find(bytes.begin() + magic_len, bytes.end(), '\n');
    if (newline == bytes.end()) throw WeightFileError(Kind::bad_header, "weight file: unterminated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + magic_len, newline);
    } catch (const nlohmann::json::exception& e) {
        throw WeightFileError(Kind::bad_header, std::string("weight file: header is not JSON: ") + e.what());
    }

    ArchConfig arch;
    std::vector<nlohmann::json> entries;
    std::size_t declared_payload = 0;
    try {
        if (header.at("schema").get<int>() != 1) throw WeightFileError(Kind::bad_header, "weight file: unknown schema");
        arch = arch_from_json(header.at("config"));
        entries = header.at("tensors").get<std::vector<nlohmann::json>>();
        declared_payload = header.at("payload_bytes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw WeightFileError(Kind::bad_header, std::string("weight file: ") + e.what());
    } catch (const ContractError& e) {
        throw WeightFileError(Kind::bad_header, std::string("weight file: invalid config: ") + e.what());
    }

    Model<T> model = Model<T>::zeros(arch);
    auto& params = model.parameters();
    if (entries.size() != params.size()) {
        throw WeightFileError(Kind::shape_mismatch, "weight file: expected " + std::to_string(params.size()) +
                                                        " tensors, header lists " + std::to_string(entries.size()));
    }
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = entries[i];
        std::string name;
        Shape shape;
        std::size_t offset = 0, nbytes = 0;
        try {
            name = e.at("name").get<std::string>();
            shape = e.at("shape").get<Shape>();
            offset = e.at("offset").get<std::size_t>();
            nbytes = e.at("nbytes").get<std::size_t>();
        } catch (const nlohmann::json::exception& ex) {
            throw WeightFileError(Kind::bad_header, std::string("weight file: tensor entry: ") + ex.what());
        }
        if (name != params[i].name || shape != params[i].value.shape()) {
            throw WeightFileError(Kind::shape_mismatch, "weight file: tensor " + std::to_string(i) + " is '" + name +
                                                            "' " + shape_string(shape) + ", config expects '" +
                                                            params[i].name + "' " +
                                                            shape_string(params[i].value.shape()));
        }
        if (offset != expected_offset || nbytes != shape_size(shape) * 4) {
            throw WeightFileError(Kind::bad_header, "weight file: tensor '" + name + "' has non-contiguous extent");
        }
        expected_offset += nbytes;
    }
    if (declared_payload != expected_offset) {
        throw WeightFileError(Kind::bad_header, "weight file: payload_bytes disagrees with tensor manifest");
    }
    const std::size_t payload_start = static_cast<std::size_t>(newline - bytes.begin()) + 1;
    const std::size_t available = bytes.size() - payload_start;
    if (available < expected_offset) {
        throw WeightFileError(Kind::truncated_payload, "weight file: truncated payload (" + std::to_string(available) +
                                                           " of " + std::to_string(expected_offset) + " bytes)");
    }
    if (available > expected_offset) {
        throw WeightFileError(Kind::trailing_data, "weight file: unexpected bytes after payload");
    }
    const char* cursor = bytes.data() + payload_start;
    for (auto& p : params) {
        for (auto& v : p.value.data()) {
            v = static_cast<T>(read_f32_le(cursor));
            cursor += 4;
        }
    }
    return model;
}

template <typename T>
void save_weights(const Model<T>& model, const std::filesystem::path& path) {
    write_file_bytes(path, serialize_weights(model));
}

template <typename T>
Model<T> load_weights(const std::filesystem::path& path) {
    return deserialize_weights<T>(read_file_bytes(path));
}

template std::vector<char> serialize_weights(const Model<float>&);
template std::vector<char> serialize_weights(const Model<double>&);
template Model<float> deserialize_weights(const std::vector<char>&);
template Model<double> deserialize_weights(const std::vector<char>&);
template void save_weights(const Model<float>&, const std::filesystem::path&);
template void save_weights(const Model<double>&, const std::filesystem::path&);
template Model<float> load_weights(const std::filesystem::path&);
template Model<double> load_weights(const std::filesystem::path&);

}  // namespace ats
