#pragma once

// Sparse deformable sequencing: rank tokens by angular distance to an anchor,
// keep the top ceil(lambda * N) in similarity order, run the Mamba block over
// that ordered subset, and scatter the result back as a residual.

#include <cmath>
#include <vector>

#include "sdmamba/mamba.hpp"
#include "sdmamba/tensor.hpp"

namespace sdmamba {

struct SparseSelection {
    std::vector<int> indices;  // selected token positions, most similar first
    std::vector<float> angles; // arccos similarity per token, radians in [0, pi]
    float lambda = 1.0f;
    int anchor_index = -1;
};

constexpr float kHalfPi = 1.5707963267948966f;

// Angle of each token against an anchor vector. Zero-norm tokens get pi/2
// (no direction, mid-rank). Cosine is clamped so arccos never sees a value
// outside [-1, 1].
inline std::vector<float> angular_attention(const Tensor& tokens, const std::vector<float>& anchor) {
    if (tokens.rank() != 2 || static_cast<size_t>(tokens.dim(1)) != anchor.size())
        throw ShapeError("angular_attention: tokens " + shape_str(tokens.shape()) + " vs anchor length " +
                         std::to_string(anchor.size()));
    int n = tokens.dim(0), d = tokens.dim(1);
    double anorm = 0.0;
    for (float v : anchor) anorm += static_cast<double>(v) * v;
    anorm = std::sqrt(anorm);
    std::vector<float> angles(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float* row = tokens.data().data() + static_cast<size_t>(i) * d;
        double dot = 0.0, tnorm = 0.0;
        for (int j = 0; j < d; ++j) {
            dot += static_cast<double>(row[j]) * anchor[static_cast<size_t>(j)];
            tnorm += static_cast<double>(row[j]) * row[j];
        }
        tnorm = std::sqrt(tnorm);
        if (anorm == 0.0 || tnorm == 0.0) {
            angles[static_cast<size_t>(i)] = kHalfPi;
            continue;
        }
        double cosv = dot / (anorm * tnorm);
        cosv = std::min(1.0, std::max(-1.0, cosv));
        angles[static_cast<size_t>(i)] = static_cast<float>(std::acos(cosv));
    }
    return angles;
}

// Anchor-by-index variant used by the pipeline; pins the anchor's own angle
// to exactly zero so the anchor always ranks first.
inline std::vector<float> angular_attention(const Tensor& tokens, int anchor_index) {
    if (anchor_index < 0 || anchor_index >= tokens.dim(0))
        throw IndexError("angular_attention: anchor index " + std::to_string(anchor_index) +
                         " out of range");
    int d = tokens.dim(1);
    std::vector<float> anchor(tokens.data().begin() + static_cast<size_t>(anchor_index) * d,
                              tokens.data().begin() + static_cast<size_t>(anchor_index + 1) * d);
    std::vector<float> angles = angular_attention(tokens, anchor);
    bool anchor_is_zero = true;
    for (float v : anchor) anchor_is_zero = anchor_is_zero && v == 0.0f;
    if (!anchor_is_zero) angles[static_cast<size_t>(anchor_index)] = 0.0f;
    return angles;
}

// Keep the first ceil(lambda * N) tokens of the stable ascending angle sort.
// If anchor_index is given it is moved to the front of its equal-angle prefix.
inline SparseSelection select_sparse(const std::vector<float>& angles, float lambda,
                                     int anchor_index = -1) {
    if (!(lambda > 0.0f && lambda <= 1.0f))
        throw ConfigError("sparsity ratio must be in (0, 1], got " + std::to_string(lambda));
    int n = static_cast<int>(angles.size());
    if (n < 1) throw ContractError("select_sparse: no tokens");
    int s = std::max(1, static_cast<int>(std::ceil(static_cast<double>(lambda) * n)));
    s = std::min(s, n);
    std::vector<int> order = argsort(angles);
    if (anchor_index >= 0) {
        auto it = std::find(order.begin(), order.end(), anchor_index);
        if (it != order.begin()) std::rotate(order.begin(), it, it + 1);
    }
    SparseSelection sel;
    sel.indices.assign(order.begin(), order.begin() + s);
    sel.angles = angles;
    sel.lambda = lambda;
    sel.anchor_index = anchor_index >= 0 ? anchor_index : sel.indices.front();
    return sel;
}

// Central token of an H x W token grid flattened row-major.
inline int spatial_anchor_index(int height, int width) {
    return (height / 2) * width + width / 2;
}

// Uniformly random token index from a seeded generator.
inline int spectral_anchor_index(int num_tokens, Rng& rng) {
    if (num_tokens < 1) throw ContractError("spectral anchor needs at least one token");
    return rng.uniform_int(num_tokens);
}

// Gather selection -> Mamba block -> scatter back, plus identity skip.
// Unselected tokens pass through unchanged.
inline Tensor sequence_and_restore(const Tensor& tokens, const SparseSelection& sel,
                                   const MambaBlockParams& block) {
    Tensor gathered = gather_rows(tokens, sel.indices);
    Tensor processed = mamba_block_forward(block, gathered);
    Tensor zeros = Tensor::zeros(tokens.shape());
    return add(tokens, scatter_rows(zeros, sel.indices, processed));
}

} // namespace sdmamba
