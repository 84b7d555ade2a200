#pragma once

// Little-endian binary readers/writers with byte-offset tracking, so format
// errors can report exactly where a file went bad.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sdmamba/common.hpp"

namespace sdmamba {

class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path)
        : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw IoError("cannot open for writing: " + path);
    }

    void bytes(const void* p, size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void i32(std::int32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void f32(float v) { bytes(&v, 4); }
    void f32s(const std::vector<float>& v) { bytes(v.data(), v.size() * 4); }
    void i32s(const std::vector<std::int32_t>& v) { bytes(v.data(), v.size() * 4); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void magic(const char m[4]) { bytes(m, 4); }

    void close() {
        out_.close();
        if (!out_) throw IoError("write failed on close");
    }

private:
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path) : in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open for reading: " + path);
    }

    std::uint64_t offset() const { return off_; }

    void bytes(void* p, size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n)
            throw FormatError("truncated file, wanted " + std::to_string(n) + " more bytes", off_);
        off_ += n;
    }
    std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
    std::int32_t i32() { std::int32_t v; bytes(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
    float f32() { float v; bytes(&v, 4); return v; }
    std::vector<float> f32s(size_t n) {
        std::vector<float> v(n);
        if (n) bytes(v.data(), n * 4);
        return v;
    }
    std::vector<std::int32_t> i32s(size_t n) {
        std::vector<std::int32_t> v(n);
        if (n) bytes(v.data(), n * 4);
        return v;
    }
    std::string str(size_t max_len = 1u << 20) {
        std::uint64_t at = off_;
        std::uint32_t n = u32();
        if (n > max_len) throw FormatError("string length " + std::to_string(n) + " out of bounds", at);
        std::string s(n, '\0');
        if (n) bytes(s.data(), n);
        return s;
    }
    void expect_magic(const char m[4], const char* what) {
        char got[4];
        std::uint64_t at = off_;
        bytes(got, 4);
        if (std::memcmp(got, m, 4) != 0)
            throw FormatError(std::string("bad magic for ") + what, at);
    }
    bool at_eof() {
        return in_.peek() == std::char_traits<char>::eof();
    }

private:
    std::ifstream in_;
    std::uint64_t off_ = 0;
};

// FNV-1a 64-bit, used for dataset checksums and run-directory names.
inline std::uint64_t fnv1a(const void* data, size_t n, std::uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 14695981039346656037ull) {
    return fnv1a(s.data(), s.size(), h);
}

inline std::uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for checksum: " + path);
    std::uint64_t h = 14695981039346656037ull;
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a(buf, static_cast<size_t>(in.gcount()), h);
    return h;
}

} // namespace sdmamba
