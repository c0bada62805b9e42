#pragma once

// Checkpoint file layout: magic "CRYL", one version byte, a u32 little-endian
// length prefix, the model config as canonical JSON, then every parameter
// tensor as little-endian 64-bit reals in declaration order. Round-trips are
// bitwise stable.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "crystal/config.hpp"
#include "crystal/errors.hpp"
#include "crystal/model.hpp"

namespace crystal {

namespace detail {

constexpr uint8_t kCheckpointVersion = 1;

inline void put_u32_le(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_f64_le(std::vector<uint8_t>& out, double v) {
    const uint64_t bits = std::bit_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xFF));
}

inline uint32_t get_u32_le(const uint8_t* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}

inline double get_f64_le(const uint8_t* p) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::vector<uint8_t> encode_checkpoint(const Model& model) {
    std::vector<uint8_t> out = {'C', 'R', 'Y', 'L', detail::kCheckpointVersion};
    const std::string cfg = model_config_to_json(model.config()).dump();
    detail::put_u32_le(out, static_cast<uint32_t>(cfg.size()));
    out.insert(out.end(), cfg.begin(), cfg.end());
    for (const auto& p : model.parameters())
        for (int64_t i = 0; i < p.tensor.size(); ++i) detail::put_f64_le(out, p.tensor.at(static_cast<int>(i)));
    return out;
}

inline Model decode_checkpoint(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 9 || std::memcmp(bytes.data(), "CRYL", 4) != 0)
        throw ParseError("not a CRYL checkpoint");
    if (bytes[4] != detail::kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(bytes[4]));
    const uint32_t cfg_len = detail::get_u32_le(bytes.data() + 5);
    if (bytes.size() < 9 + cfg_len) throw ParseError("checkpoint config truncated");
    json cfg_json;
    try {
        cfg_json = json::parse(bytes.begin() + 9, bytes.begin() + 9 + cfg_len);
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    const ModelConfig cfg = model_config_from_json(cfg_json);

    Model model(cfg, 0);
    size_t offset = 9 + cfg_len;
    for (auto& p : model.parameters()) {
        const size_t need = static_cast<size_t>(p.tensor.size()) * 8;
        if (bytes.size() - offset < need) throw ParseError("checkpoint parameters truncated");
        for (int64_t i = 0; i < p.tensor.size(); ++i)
            p.tensor.at(static_cast<int>(i)) = detail::get_f64_le(bytes.data() + offset + static_cast<size_t>(i) * 8);
        offset += need;
    }
    if (offset != bytes.size()) throw ParseError("checkpoint has trailing bytes");
    return model;
}

inline void save_checkpoint(const std::string& path, const Model& model) {
    const auto bytes = encode_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace crystal
