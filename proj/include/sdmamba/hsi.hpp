#pragma once

// Hyperspectral cube container, the ".hsc" binary format, per-band min-max
// normalization, mirror-padded patch extraction, stratified splitting, and a
// synthetic-cube generator for end-to-end tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "sdmamba/common.hpp"
#include "sdmamba/serialize.hpp"
#include "sdmamba/tensor.hpp"

namespace sdmamba {

struct HsiCube {
    int height = 0;
    int width = 0;
    int bands = 0;
    int num_classes = 0;
    std::vector<float> data;         // H*W*B, band-interleaved by pixel
    std::vector<std::int32_t> labels; // H*W, 0 = unlabeled, 1..K = classes
    std::vector<std::string> class_names;

    float at(int row, int col, int band) const {
        return data[(static_cast<size_t>(row) * width + col) * bands + band];
    }
    float& at(int row, int col, int band) {
        return data[(static_cast<size_t>(row) * width + col) * bands + band];
    }
    std::int32_t label(int row, int col) const {
        return labels[static_cast<size_t>(row) * width + col];
    }

    std::vector<std::pair<int, int>> labeled_coords() const {
        std::vector<std::pair<int, int>> out;
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c)
                if (label(r, c) > 0) out.emplace_back(r, c);
        return out;
    }

    void validate() const {
        if (height < 1 || width < 1 || bands < 1)
            throw ValidationError("cube has empty extent");
        if (data.size() != static_cast<size_t>(height) * width * bands)
            throw ValidationError("cube data length mismatch");
        if (labels.size() != static_cast<size_t>(height) * width)
            throw ValidationError("cube label length mismatch");
        for (float v : data)
            if (!std::isfinite(v)) throw ValidationError("cube contains non-finite value");
        for (std::int32_t l : labels)
            if (l < 0 || l > num_classes)
                throw ValidationError("label " + std::to_string(l) + " outside [0, " +
                                      std::to_string(num_classes) + "]");
    }
};

// ---------------------------------------------------------------------------
// ".hsc" container: magic "HSC1", u32 H W B K, f32 raster, i32 labels,
// u8-style names flag (u32), optional K names.
// ---------------------------------------------------------------------------

inline constexpr char kCubeMagic[4] = {'H', 'S', 'C', '1'};

inline void save_cube(const std::string& path, const HsiCube& cube) {
    cube.validate();
    BinaryWriter w(path);
    w.magic(kCubeMagic);
    w.u32(static_cast<std::uint32_t>(cube.height));
    w.u32(static_cast<std::uint32_t>(cube.width));
    w.u32(static_cast<std::uint32_t>(cube.bands));
    w.u32(static_cast<std::uint32_t>(cube.num_classes));
    w.f32s(cube.data);
    w.i32s(cube.labels);
    if (cube.class_names.empty()) {
        w.u32(0);
    } else {
        w.u32(1);
        for (const auto& name : cube.class_names) w.str(name);
    }
    w.close();
}

inline HsiCube load_cube(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic(kCubeMagic, "hsc cube");
    HsiCube cube;
    std::uint64_t at = r.offset();
    cube.height = static_cast<int>(r.u32());
    cube.width = static_cast<int>(r.u32());
    cube.bands = static_cast<int>(r.u32());
    cube.num_classes = static_cast<int>(r.u32());
    if (cube.height < 1 || cube.width < 1 || cube.bands < 1 || cube.num_classes < 0 ||
        static_cast<std::uint64_t>(cube.height) * cube.width * cube.bands > (1ull << 33))
        throw FormatError("implausible cube extents", at);
    cube.data = r.f32s(static_cast<size_t>(cube.height) * cube.width * cube.bands);
    cube.labels = r.i32s(static_cast<size_t>(cube.height) * cube.width);
    std::uint32_t has_names = r.u32();
    if (has_names == 1) {
        for (int k = 0; k < cube.num_classes; ++k) cube.class_names.push_back(r.str());
    } else if (has_names != 0) {
        throw FormatError("bad names flag", r.offset() - 4);
    }
    cube.validate();
    return cube;
}

// ---------------------------------------------------------------------------
// Per-band min-max scaling to [0, 1]; constant bands map to 0.
// ---------------------------------------------------------------------------

inline HsiCube normalize(HsiCube cube) {
    size_t pixels = static_cast<size_t>(cube.height) * cube.width;
    for (int b = 0; b < cube.bands; ++b) {
        float lo = std::numeric_limits<float>::infinity();
        float hi = -lo;
        for (size_t p = 0; p < pixels; ++p) {
            float v = cube.data[p * cube.bands + b];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        float range = hi - lo;
        if (range == 0.0f) {
            for (size_t p = 0; p < pixels; ++p) cube.data[p * cube.bands + b] = 0.0f;
        } else {
            float inv = 1.0f / range;
            for (size_t p = 0; p < pixels; ++p)
                cube.data[p * cube.bands + b] = (cube.data[p * cube.bands + b] - lo) * inv;
        }
    }
    return cube;
}

// ---------------------------------------------------------------------------
// Mirror-padded patch extraction, channel-first output (bands x P x P).
// Border reflection excludes the edge sample: index -1 maps to 1.
// ---------------------------------------------------------------------------

inline int mirror_index(int i, int n) {
    if (n == 1) return 0;
    // fold until in range; each fold reflects around 0 or n-1
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

inline Tensor extract_patch(const HsiCube& cube, int row, int col, int patch_size) {
    if (patch_size < 1 || patch_size % 2 == 0)
        throw ConfigError("patch_size must be odd, got " + std::to_string(patch_size));
    if (row < 0 || row >= cube.height || col < 0 || col >= cube.width)
        throw IndexError("patch center (" + std::to_string(row) + "," + std::to_string(col) +
                         ") outside cube");
    int half = patch_size / 2;
    Tensor out = Tensor::zeros({cube.bands, patch_size, patch_size});
    auto& d = out.mutable_data();
    for (int i = 0; i < patch_size; ++i) {
        int r = mirror_index(row - half + i, cube.height);
        for (int j = 0; j < patch_size; ++j) {
            int c = mirror_index(col - half + j, cube.width);
            for (int b = 0; b < cube.bands; ++b)
                d[(static_cast<size_t>(b) * patch_size + i) * patch_size + j] = cube.at(r, c, b);
        }
    }
    return out;
}

// Batch of patches, B x bands x P x P.
inline Tensor extract_patch_batch(const HsiCube& cube,
                                  const std::vector<std::pair<int, int>>& coords,
                                  int patch_size) {
    int B = static_cast<int>(coords.size());
    Tensor out = Tensor::zeros({B, cube.bands, patch_size, patch_size});
    size_t per = static_cast<size_t>(cube.bands) * patch_size * patch_size;
    for (int b = 0; b < B; ++b) {
        Tensor p = extract_patch(cube, coords[static_cast<size_t>(b)].first,
                                 coords[static_cast<size_t>(b)].second, patch_size);
        std::copy(p.data().begin(), p.data().end(),
                  out.mutable_data().begin() + static_cast<size_t>(b) * per);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

struct SampleSplit {
    std::vector<std::pair<int, int>> train, val, test;
    float train_ratio = 0.0f, val_ratio = 0.0f;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

inline SampleSplit stratified_split(const HsiCube& cube, float train_ratio, float val_ratio,
                                    std::uint64_t seed) {
    if (!(train_ratio > 0.0f) || !(val_ratio > 0.0f) || train_ratio + val_ratio >= 1.0f)
        throw ConfigError("split ratios must be positive and sum below 1");
    SampleSplit split;
    split.train_ratio = train_ratio;
    split.val_ratio = val_ratio;
    split.seed = seed;

    std::vector<std::vector<std::pair<int, int>>> per_class(
        static_cast<size_t>(cube.num_classes) + 1);
    for (int r = 0; r < cube.height; ++r)
        for (int c = 0; c < cube.width; ++c) {
            std::int32_t l = cube.label(r, c);
            if (l > 0) per_class[static_cast<size_t>(l)].emplace_back(r, c);
        }

    Rng rng(seed);
    for (int k = 1; k <= cube.num_classes; ++k) {
        auto& coords = per_class[static_cast<size_t>(k)];
        if (coords.empty()) continue;
        std::shuffle(coords.begin(), coords.end(), rng.engine());
        int n = static_cast<int>(coords.size());
        int n_train = std::max(1, static_cast<int>(std::ceil(train_ratio * n)));
        int n_val = std::max(1, static_cast<int>(std::ceil(val_ratio * n)));
        if (n < 3) {
            split.warnings.push_back("class " + std::to_string(k) + " has only " +
                                     std::to_string(n) + " samples; best-effort allocation");
            n_train = std::min(n_train, n);
            n_val = std::min(n_val, n - n_train);
        } else if (n_train + n_val >= n) {
            // keep at least one test sample where possible
            n_val = std::max(1, n - n_train - 1);
            if (n_train + n_val >= n) n_train = std::max(1, n - n_val - 1);
        }
        int i = 0;
        for (; i < n_train; ++i) split.train.push_back(coords[static_cast<size_t>(i)]);
        for (; i < n_train + n_val; ++i) split.val.push_back(coords[static_cast<size_t>(i)]);
        for (; i < n; ++i) split.test.push_back(coords[static_cast<size_t>(i)]);
    }
    return split;
}

// Split file: one "row,col,set" line per labeled pixel.
inline void save_split(const std::string& path, const SampleSplit& split) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    auto dump = [&](const std::vector<std::pair<int, int>>& coords, const char* tag) {
        for (auto [r, c] : coords) out << r << "," << c << "," << tag << "\n";
    };
    dump(split.train, "train");
    dump(split.val, "val");
    dump(split.test, "test");
    if (!out) throw IoError("write failed: " + path);
}

inline SampleSplit load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    SampleSplit split;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        size_t a = line.find(','), b = line.find(',', a + 1);
        if (a == std::string::npos || b == std::string::npos)
            throw ValidationError("malformed split line " + std::to_string(lineno));
        int r = std::stoi(line.substr(0, a));
        int c = std::stoi(line.substr(a + 1, b - a - 1));
        std::string set = line.substr(b + 1);
        if (set == "train") split.train.emplace_back(r, c);
        else if (set == "val") split.val.emplace_back(r, c);
        else if (set == "test") split.test.emplace_back(r, c);
        else throw ValidationError("unknown set '" + set + "' on split line " + std::to_string(lineno));
    }
    return split;
}

// ---------------------------------------------------------------------------
// Synthetic fixture: horizontal class strips with Gaussian spectral bump
// signatures plus i.i.d. noise. Signature spacing keeps classes separable
// for noise sigma well below ~0.1.
// ---------------------------------------------------------------------------

inline HsiCube synthesize_cube(int size, int bands, int classes, float noise_sigma,
                               std::uint64_t seed, bool background = false) {
    if (size < classes || bands < 1 || classes < 2)
        throw ConfigError("synthesize_cube: need size >= classes and classes >= 2");
    HsiCube cube;
    cube.height = size;
    cube.width = size;
    cube.bands = bands;
    cube.num_classes = classes;
    cube.data.assign(static_cast<size_t>(size) * size * bands, 0.0f);
    cube.labels.assign(static_cast<size_t>(size) * size, 0);

    // One Gaussian bump per class, centers spread across the band axis.
    std::vector<std::vector<float>> sig(static_cast<size_t>(classes),
                                        std::vector<float>(static_cast<size_t>(bands)));
    for (int k = 0; k < classes; ++k) {
        float center = (k + 0.5f) * bands / classes;
        float width = std::max(0.75f, bands / (2.5f * classes));
        for (int b = 0; b < bands; ++b) {
            float d = (b - center) / width;
            sig[static_cast<size_t>(k)][static_cast<size_t>(b)] =
                0.2f + 0.6f * std::exp(-0.5f * d * d);
        }
    }

    Rng rng(seed);
    for (int r = 0; r < size; ++r) {
        int k = std::min(classes - 1, r * classes / size);
        for (int c = 0; c < size; ++c) {
            bool bg = background && (c == 0); // optional unlabeled stripe
            cube.labels[static_cast<size_t>(r) * size + c] = bg ? 0 : k + 1;
            for (int b = 0; b < bands; ++b)
                cube.at(r, c, b) = sig[static_cast<size_t>(k)][static_cast<size_t>(b)] +
                                   (noise_sigma > 0.0f ? rng.normal(0.0f, noise_sigma) : 0.0f);
        }
    }
    cube.validate();
    return cube;
}

} // namespace sdmamba
