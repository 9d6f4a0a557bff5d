#pragma once

// On-disk tensor container used for weights and checkpoints.
//
// Layout (all integers little-endian):
//   bytes 0..3   magic "PMRN"
//   u32          format version (1)
//   u32          header length L
//   L bytes      UTF-8 JSON header: {"kind", "config", "tensors": [{"name", "shape"}...], ...}
//   payload      each tensor as raw f32 values, in header table order
//   u32          CRC-32 (zlib polynomial) of every preceding byte

#include "pmrn/nn.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmrn {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kWeightFormatVersion = 1;

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t len) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in chunks.
    while (len > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(len, 1u << 30));
        crc = ::crc32(crc, data, chunk);
        data += chunk;
        len -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

struct TensorFile {
    nlohmann::json header;  // full header, including "tensors"
    ParamStore<float> tensors;
};

/// `header` may carry any fields except "tensors", which is generated.
inline void write_tensor_file(const std::string& path, nlohmann::json header,
                              const ParamStore<float>& tensors) {
    auto table = nlohmann::json::array();
    for (const auto& [name, t] : tensors.entries()) {
        const Shape s = t.shape();
        table.push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}});
    }
    header["tensors"] = std::move(table);
    const std::string text = header.dump();

    std::vector<unsigned char> bytes{'P', 'M', 'R', 'N'};
    detail::put_u32(bytes, kWeightFormatVersion);
    detail::put_u32(bytes, static_cast<std::uint32_t>(text.size()));
    bytes.insert(bytes.end(), text.begin(), text.end());
    for (const auto& [name, t] : tensors.entries()) {
        for (float v : t.data()) detail::put_u32(bytes, std::bit_cast<std::uint32_t>(v));
    }
    detail::put_u32(bytes, detail::crc32_of(bytes.data(), bytes.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path);
}

inline TensorFile read_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                           std::istreambuf_iterator<char>());
    if (bytes.size() < 16) throw FormatError(path + ": checksum error (file truncated)");
    const std::size_t body = bytes.size() - 4;
    if (detail::crc32_of(bytes.data(), body) != detail::get_u32(bytes.data() + body)) {
        throw FormatError(path + ": checksum error");
    }
    if (bytes[0] != 'P' || bytes[1] != 'M' || bytes[2] != 'R' || bytes[3] != 'N') {
        throw FormatError(path + ": bad magic");
    }
    const std::uint32_t version = detail::get_u32(bytes.data() + 4);
    if (version != kWeightFormatVersion) {
        throw FormatError(path + ": unsupported version " + std::to_string(version));
    }
    const std::size_t header_len = detail::get_u32(bytes.data() + 8);
    if (12 + header_len > body) throw FormatError(path + ": header length exceeds file");

    TensorFile file;
    try {
        file.header = nlohmann::json::parse(bytes.begin() + 12,
                                            bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": malformed header: " + e.what());
    }

    std::size_t pos = 12 + header_len;
    for (const auto& entry : file.header.at("tensors")) {
        const auto dims = entry.at("shape").get<std::vector<int>>();
        if (dims.size() != 4) throw FormatError(path + ": tensor shape must have 4 dims");
        const Shape shape{dims[0], dims[1], dims[2], dims[3]};
        if (pos + shape.size() * 4 > body) {
            throw FormatError(path + ": payload too short for " + entry.at("name").get<std::string>());
        }
        std::vector<float> values(shape.size());
        for (auto& v : values) {
            v = std::bit_cast<float>(detail::get_u32(bytes.data() + pos));
            pos += 4;
        }
        file.tensors.add(entry.at("name").get<std::string>(), Tensor<float>(shape, std::move(values)));
    }
    if (pos != body) throw FormatError(path + ": trailing bytes after payload");
    return file;
}

/// Checks that `loaded` has exactly the names and shapes of `expected`, in order.
/// Throws FormatError naming the first offending entry.
inline void require_same_layout(const ParamStore<float>& expected, const ParamStore<float>& loaded) {
    const auto& a = expected.entries();
    const auto& b = loaded.entries();
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        if (a[i].first != b[i].first) {
            throw FormatError("name mismatch at entry " + std::to_string(i) + ": expected " + a[i].first +
                              ", found " + b[i].first);
        }
        if (a[i].second.shape() != b[i].second.shape()) {
            throw FormatError("shape mismatch for " + a[i].first + ": expected " +
                              a[i].second.shape().str() + ", found " + b[i].second.shape().str());
        }
    }
    if (a.size() > b.size()) throw FormatError("missing parameter " + a[b.size()].first);
    if (b.size() > a.size()) throw FormatError("unexpected parameter " + b[a.size()].first);
}

}  // namespace pmrn
