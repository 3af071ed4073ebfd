#include "ovd/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace ovd {

static_assert(std::endian::native == std::endian::little,
              "persisted blobs are little-endian; big-endian hosts are unsupported");

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << content;
    if (!out.good()) throw IoError("write failed: " + path);
}

std::uint64_t hash_file(const std::string& path) {
    const std::string data = read_text_file(path);
    return fnv1a64(data);
}

std::string hash_hex(std::uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

template <typename T>
static void write_raw(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
static T read_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is.good()) throw IoError("unexpected end of stream");
    return v;
}

void write_u32(std::ostream& os, std::uint32_t v) { write_raw(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_raw(os, v); }
void write_f32(std::ostream& os, float v) { write_raw(os, v); }
void write_f64(std::ostream& os, double v) { write_raw(os, v); }
std::uint32_t read_u32(std::istream& is) { return read_raw<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_raw<std::uint64_t>(is); }
float read_f32(std::istream& is) { return read_raw<float>(is); }
double read_f64(std::istream& is) { return read_raw<double>(is); }

void write_f32_block(std::ostream& os, const std::vector<double>& v) {
    for (double x : v) write_f32(os, static_cast<float>(x));
}

std::vector<double> read_f32_block(std::istream& is, std::size_t count) {
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<double>(read_f32(is));
    return out;
}

void write_f64_block(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_f64_block(std::istream& is, std::size_t count) {
    std::vector<double> out(count);
    is.read(reinterpret_cast<char*>(out.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is.good()) throw IoError("unexpected end of stream in f64 block");
    return out;
}

void write_magic(std::ostream& os, const char (&magic)[8]) { os.write(magic, 8); }

void expect_magic(std::istream& is, const char (&magic)[8], const std::string& what) {
    char buf[8];
    is.read(buf, 8);
    if (!is.good() || std::memcmp(buf, magic, 8) != 0)
        throw IoError("bad magic, not a " + what + " file");
}

std::ofstream open_out(const std::string& path, bool binary) {
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw IoError("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path, bool binary) {
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) throw IoError("cannot open for reading: " + path);
    return in;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace ovd
