#pragma once

// Analytical per-sample cost model. MambaBlock cost is per processed token,
// so the sparse pipeline pays ceil(lambda * N) tokens and the dense baseline
// pays N; every other layer costs the same on both sides.

#include <cmath>
#include <cstdint>

#include "sdmamba/mamba.hpp"
#include "sdmamba/net.hpp"

namespace sdmamba {

inline int selected_tokens(float lambda, int total) {
    int s = std::max(1, static_cast<int>(std::ceil(static_cast<double>(lambda) * total)));
    return std::min(s, total);
}

struct FlopBreakdown {
    std::uint64_t stem_macs = 0;
    std::uint64_t sds_macs = 0;    // angle computations, both branches
    std::uint64_t mamba_macs = 0;  // both blocks at their actual token counts
    std::uint64_t fusion_macs = 0;
    std::uint64_t head_macs = 0;

    std::uint64_t total_macs() const {
        return stem_macs + sds_macs + mamba_macs + fusion_macs + head_macs;
    }
    // Convention bracket: 1 multiply-accumulate = 2 FLOPs.
    std::uint64_t total_flops() const { return 2 * total_macs(); }
};

struct FlopReport {
    FlopBreakdown sparse; // ceil(lambda * N) tokens per block
    FlopBreakdown dense;  // all tokens per block (lambda = 1)
    int spatial_tokens_sparse = 0;
    int spectral_tokens_sparse = 0;
};

// MambaBlock cost of one forward pass with the configured sparsity.
inline std::uint64_t mamba_path_macs(const SdmambaConfig& cfg, float lambda_spatial,
                                     float lambda_spectral) {
    int n_spa = cfg.tokens_spatial();
    int n_spe = cfg.tokens_spectral();
    return mamba_block_macs(cfg.spatial_mamba(), selected_tokens(lambda_spatial, n_spa)) +
           mamba_block_macs(cfg.spectral_mamba(), selected_tokens(lambda_spectral, n_spe));
}

inline FlopBreakdown flop_breakdown(const SdmambaConfig& cfg, float lambda_spatial,
                                    float lambda_spectral) {
    std::uint64_t hw = static_cast<std::uint64_t>(cfg.tokens_spatial());
    std::uint64_t d = static_cast<std::uint64_t>(cfg.hidden_dim);
    std::uint64_t bands = static_cast<std::uint64_t>(cfg.in_bands);
    std::uint64_t k = static_cast<std::uint64_t>(cfg.stem_kernel);

    FlopBreakdown out;
    out.stem_macs = hw * d * bands * k * k;
    // angles: dot + norm per token, both branches, over ALL tokens
    out.sds_macs = hw * 2 * d + d * 2 * hw;
    out.mamba_macs = mamba_path_macs(cfg, lambda_spatial, lambda_spectral);
    // q/k/v projections, q k^T, attn v
    out.fusion_macs = 3 * hw * d * d + 2 * hw * hw * d;
    out.head_macs = d * static_cast<std::uint64_t>(cfg.num_classes);
    return out;
}

inline FlopReport count_flops(const SdmambaConfig& cfg) {
    cfg.validate();
    FlopReport rep;
    rep.sparse = flop_breakdown(cfg, cfg.lambda_spatial, cfg.lambda_spectral);
    rep.dense = flop_breakdown(cfg, 1.0f, 1.0f);
    rep.spatial_tokens_sparse = selected_tokens(cfg.lambda_spatial, cfg.tokens_spatial());
    rep.spectral_tokens_sparse = selected_tokens(cfg.lambda_spectral, cfg.tokens_spectral());
    return rep;
}

} // namespace sdmamba
