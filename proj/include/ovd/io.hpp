#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ovd/errors.hpp"

namespace ovd {

// FNV-1a 64-bit, used for content hashes in run manifests and for the
// parameter checksums the training contracts are tested against.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

template <typename T>
std::uint64_t fnv1a64_vec(const std::vector<T>& v, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(v.data(), v.size() * sizeof(T), h);
}

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::uint64_t hash_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

// Little-endian scalar IO. The build targets little-endian hosts; a static
// check in io.cpp enforces it so persisted blobs stay portable.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);

void write_f32_block(std::ostream& os, const std::vector<double>& v);
std::vector<double> read_f32_block(std::istream& is, std::size_t count);
void write_f64_block(std::ostream& os, const std::vector<double>& v);
std::vector<double> read_f64_block(std::istream& is, std::size_t count);

void write_magic(std::ostream& os, const char (&magic)[8]);
void expect_magic(std::istream& is, const char (&magic)[8], const std::string& what);

std::ofstream open_out(const std::string& path, bool binary = false);
std::ifstream open_in(const std::string& path, bool binary = false);

// Deterministic float formatting for text artifacts (round-trips doubles).
std::string format_double(double v);

}  // namespace ovd
