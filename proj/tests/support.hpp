#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fracdiag/tensor.hpp"

namespace testing {

// Builds a container byte-for-byte from its definition, independent of the
// library writer: magic, u16 version, u16 reserved, u32 header length,
// header text, zero padding to 16 bytes, payload.
inline std::vector<std::byte> raw_container(const std::string& header, const std::vector<std::byte>& payload,
                                            std::uint16_t version = 1, const char* magic = "FSNP") {
    std::vector<std::byte> out;
    auto put = [&](std::uint64_t v, int n) {
        for (int k = 0; k < n; ++k) out.push_back(static_cast<std::byte>((v >> (8 * k)) & 0xFF));
    };
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::byte>(magic[k]));
    put(version, 2);
    put(0, 2);
    put(header.size(), 4);
    for (char c : header) out.push_back(static_cast<std::byte>(c));
    while (out.size() % 16 != 0) out.push_back(std::byte{0});
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

inline std::vector<std::byte> f32_bytes(const std::vector<float>& values) {
    std::vector<std::byte> out;
    for (float f : values) {
        const auto bits = std::bit_cast<std::uint32_t>(f);
        for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::byte>((bits >> (8 * k)) & 0xFF));
    }
    return out;
}

inline fracdiag::Matrix iota_matrix(std::size_t rows, std::size_t cols, double start = 0.0) {
    fracdiag::Matrix m(rows, cols);
    for (std::size_t k = 0; k < rows * cols; ++k) m.values()[k] = start + static_cast<double>(k);
    return m;
}

inline fracdiag::Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                                      double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    fracdiag::Matrix m(rows, cols);
    for (auto& v : m.values()) v = u(rng);
    return m;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("fracdiag_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testing
