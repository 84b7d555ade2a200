#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdmamba {

// ---------------------------------------------------------------------------
// Error types
// ---------------------------------------------------------------------------

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File-format violations carry the byte offset where parsing failed.
struct FormatError : std::runtime_error {
    std::uint64_t offset;
    FormatError(const std::string& msg, std::uint64_t off)
        : std::runtime_error(msg + " (at byte offset " + std::to_string(off) + ")"),
          offset(off) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Seeded RNG wrapper
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(static_cast<std::mt19937::result_type>(seed)) {}

    float uniform(float lo, float hi) {
        std::uniform_real_distribution<float> d(lo, hi);
        return d(gen_);
    }

    float normal(float mean, float stddev) {
        std::normal_distribution<float> d(mean, stddev);
        return d(gen_);
    }

    // Uniform integer in [0, n)
    int uniform_int(int n) {
        std::uniform_int_distribution<int> d(0, n - 1);
        return d(gen_);
    }

    std::mt19937& engine() { return gen_; }

private:
    std::mt19937 gen_;
};

// ---------------------------------------------------------------------------
// Multiply-accumulate instrumentation.
//
// A MacScope activates counting on the current thread; compute kernels call
// add_macs() which is a no-op outside any scope. Used to cross-check the
// analytical cost model against what actually ran.
// ---------------------------------------------------------------------------

namespace macs {

inline thread_local std::uint64_t g_count = 0;
inline thread_local int g_active = 0;

inline void add(std::uint64_t n) {
    if (g_active > 0) g_count += n;
}

inline void reset() { g_count = 0; }
inline std::uint64_t count() { return g_count; }

struct Scope {
    Scope() { ++g_active; }
    ~Scope() { --g_active; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
};

} // namespace macs

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

} // namespace sdmamba
