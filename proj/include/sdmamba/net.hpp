#pragma once

// End-to-end SDMamba network: conv-bn-gelu stem, sparse deformable spatial
// and spectral Mamba branches over the same stem features, attention fusion,
// center-pixel linear head.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sdmamba/mamba.hpp"
#include "sdmamba/sds.hpp"
#include "sdmamba/serialize.hpp"
#include "sdmamba/tensor.hpp"

namespace sdmamba {

struct SdmambaConfig {
    int patch_size = 13;
    int in_bands = 200;
    int hidden_dim = 256;
    int num_classes = 16;
    float lambda_spatial = 0.3f;
    float lambda_spectral = 0.3f;
    int d_state = 16;
    int expand = 2;
    int stem_kernel = 3;
    int conv_kernel = 4; // mamba depthwise conv width
    int dt_rank = 0;     // 0 = auto
    bool use_conv = true;
    std::uint64_t seed = 0;
    float learning_rate = 1e-4f;
    int batch_size = 64;
    int epochs = 100;
    float train_ratio = 0.1f;
    float val_ratio = 0.1f;

    int tokens_spatial() const { return patch_size * patch_size; }
    int tokens_spectral() const { return hidden_dim; }

    void validate() const {
        if (patch_size < 3 || patch_size % 2 == 0)
            throw ConfigError("patch_size must be odd and >= 3, got " + std::to_string(patch_size));
        if (in_bands < 1) throw ConfigError("in_bands must be >= 1");
        if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (!(lambda_spatial > 0.0f && lambda_spatial <= 1.0f))
            throw ConfigError("lambda_spatial must be in (0, 1]");
        if (!(lambda_spectral > 0.0f && lambda_spectral <= 1.0f))
            throw ConfigError("lambda_spectral must be in (0, 1]");
        if (d_state < 1 || expand < 1) throw ConfigError("d_state and expand must be >= 1");
        if (stem_kernel < 1 || stem_kernel % 2 == 0)
            throw ConfigError("stem_kernel must be odd");
        if (!(learning_rate > 0.0f)) throw ConfigError("learning_rate must be positive");
        if (batch_size < 1 || epochs < 1) throw ConfigError("batch_size and epochs must be >= 1");
        if (!(train_ratio > 0.0f && val_ratio > 0.0f && train_ratio + val_ratio < 1.0f))
            throw ConfigError("train/val ratios must be positive and sum below 1");
    }

    MambaConfig spatial_mamba() const {
        return MambaConfig{hidden_dim, d_state, expand, conv_kernel, dt_rank, use_conv};
    }
    MambaConfig spectral_mamba() const {
        return MambaConfig{tokens_spatial(), d_state, expand, conv_kernel, dt_rank, use_conv};
    }
};

struct ForwardOutput {
    Tensor logits;   // B x K
    Tensor features; // B x D, center fused vectors (pre-head)
};

class SdmambaModel {
public:
    explicit SdmambaModel(const SdmambaConfig& config)
        : cfg_(config), bn_state_(config.hidden_dim), anchor_rng_(config.seed ^ 0x5d5d5d5dull) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        int D = cfg_.hidden_dim, bands = cfg_.in_bands, k = cfg_.stem_kernel, K = cfg_.num_classes;
        auto uniform_init = [&](Shape shape, int fan_in, float gain = 1.0f) {
            Tensor t = Tensor::zeros(std::move(shape), true);
            float bound = gain / std::sqrt(static_cast<float>(fan_in));
            for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
            return t;
        };
        stem_conv_w_ = uniform_init({D, bands, k, k}, bands * k * k);
        stem_conv_b_ = Tensor::zeros({D}, true);
        bn_gamma_ = Tensor::full({D}, 1.0f, true);
        bn_beta_ = Tensor::zeros({D}, true);
        spatial_block_ = make_mamba_block(cfg_.spatial_mamba(), rng);
        spectral_block_ = make_mamba_block(cfg_.spectral_mamba(), rng);
        fusion_q_ = uniform_init({D, D}, D);
        fusion_k_ = uniform_init({D, D}, D);
        fusion_v_ = uniform_init({D, D}, D);
        // Small head so initial logits sit near zero and the starting loss
        // lands at ln(K).
        head_w_ = uniform_init({D, K}, D, 0.1f);
        head_b_ = Tensor::zeros({K}, true);
        eval_anchor_ = Rng(cfg_.seed ^ 0xa5a5a5a5ull).uniform_int(D);
    }

    const SdmambaConfig& config() const { return cfg_; }
    int eval_spectral_anchor() const { return eval_anchor_; }

    int draw_spectral_anchor(bool training) {
        return training ? spectral_anchor_index(cfg_.hidden_dim, anchor_rng_) : eval_anchor_;
    }

    // Every trainable parameter, once, under a stable name.
    std::vector<std::pair<std::string, Tensor>> parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("stem.conv.w", stem_conv_w_);
        out.emplace_back("stem.conv.b", stem_conv_b_);
        out.emplace_back("stem.bn.gamma", bn_gamma_);
        out.emplace_back("stem.bn.beta", bn_beta_);
        append_block(out, "spatial", spatial_block_);
        append_block(out, "spectral", spectral_block_);
        out.emplace_back("fusion.q", fusion_q_);
        out.emplace_back("fusion.k", fusion_k_);
        out.emplace_back("fusion.v", fusion_v_);
        out.emplace_back("head.w", head_w_);
        out.emplace_back("head.b", head_b_);
        return out;
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : parameters()) n += t.numel();
        return n;
    }

    BatchNormState& bn_state() { return bn_state_; }
    const BatchNormState& bn_state() const { return bn_state_; }
    const MambaBlockParams& spatial_block() const { return spatial_block_; }
    const MambaBlockParams& spectral_block() const { return spectral_block_; }

    Tensor stem_forward(const Tensor& batch, bool training) {
        if (batch.rank() != 4 || batch.dim(1) != cfg_.in_bands)
            throw ShapeError("stem expects B x " + std::to_string(cfg_.in_bands) +
                             " x H x W input, got " + shape_str(batch.shape()));
        Tensor y = conv2d(batch, stem_conv_w_, stem_conv_b_, (cfg_.stem_kernel - 1) / 2);
        y = batchnorm2d(y, bn_gamma_, bn_beta_, bn_state_, training);
        return gelu(y);
    }

    // Spatial branch over HW x D tokens.
    Tensor sdspam_forward(const Tensor& tokens, int height, int width,
                          SparseSelection* sel_out = nullptr) const {
        int anchor = spatial_anchor_index(height, width);
        auto angles = angular_attention(tokens, anchor);
        SparseSelection sel = select_sparse(angles, cfg_.lambda_spatial, anchor);
        if (sel_out) *sel_out = sel;
        return sequence_and_restore(tokens, sel, spatial_block_);
    }

    // Spectral branch over D x HW tokens (one token per channel).
    Tensor sdspem_forward(const Tensor& tokens, int anchor,
                          SparseSelection* sel_out = nullptr) const {
        auto angles = angular_attention(tokens, anchor);
        SparseSelection sel = select_sparse(angles, cfg_.lambda_spectral, anchor);
        if (sel_out) *sel_out = sel;
        return sequence_and_restore(tokens, sel, spectral_block_);
    }

    // Scaled dot-product fusion: Q from the spatial branch, K and V from the
    // spectral branch; both operands are HW x D.
    Tensor attention_fusion(const Tensor& spa, const Tensor& spe) const {
        detail::check_same_shape(spa, spe, "attention_fusion");
        Tensor q = matmul(spa, fusion_q_);
        Tensor k = matmul(spe, fusion_k_);
        Tensor v = matmul(spe, fusion_v_);
        float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(cfg_.hidden_dim));
        Tensor attn = softmax(scale(matmul(q, transpose2d(k)), inv_sqrt_d), 1);
        return matmul(attn, v);
    }

    ForwardOutput forward(const Tensor& batch, bool training) {
        return forward_with_anchor(batch, training, draw_spectral_anchor(training));
    }

    ForwardOutput forward_with_anchor(const Tensor& batch, bool training, int spectral_anchor) {
        int B = batch.dim(0), H = batch.dim(2), W = batch.dim(3);
        if (H != cfg_.patch_size || W != cfg_.patch_size)
            throw ShapeError("forward expects " + std::to_string(cfg_.patch_size) +
                             "-pixel patches, got " + shape_str(batch.shape()));
        int D = cfg_.hidden_dim, HW = H * W;
        Tensor stem = stem_forward(batch, training); // B x D x H x W
        Tensor flat = reshape(stem, {B, D * HW});
        std::vector<Tensor> logit_rows, feature_rows;
        int center = spatial_anchor_index(H, W);
        for (int b = 0; b < B; ++b) {
            Tensor y = reshape(gather_rows(flat, {b}), {D, HW});
            Tensor z = transpose2d(y); // HW x D spatial tokens
            Tensor spa = sdspam_forward(z, H, W);
            Tensor spe_ch = sdspem_forward(y, spectral_anchor); // D x HW
            Tensor spe = transpose2d(spe_ch);                   // HW x D
            Tensor fused = attention_fusion(spa, spe);
            Tensor feat = gather_rows(fused, {center}); // 1 x D
            feature_rows.push_back(feat);
            logit_rows.push_back(add_rowvec(matmul(feat, head_w_), head_b_));
        }
        ForwardOutput out;
        out.logits = concat_rows(logit_rows);
        out.features = concat_rows(feature_rows);
        return out;
    }

    void zero_grad() {
        for (auto& [name, t] : parameters()) {
            Tensor tt = t;
            tt.zero_grad();
        }
    }

    struct StateBlob {
        std::string name;
        Shape shape;
        std::vector<float> values;
    };

    // Full mutable state (parameters plus batchnorm running stats) for
    // snapshot/restore and checkpointing.
    std::vector<StateBlob> state() const {
        std::vector<StateBlob> out;
        for (const auto& [name, t] : parameters()) out.push_back({name, t.shape(), t.data()});
        out.push_back({"stem.bn.running_mean", {cfg_.hidden_dim}, bn_state_.running_mean});
        out.push_back({"stem.bn.running_var", {cfg_.hidden_dim}, bn_state_.running_var});
        return out;
    }

    void load_state(const std::vector<StateBlob>& blobs) {
        auto params = parameters();
        for (const auto& blob : blobs) {
            if (blob.name == "stem.bn.running_mean") {
                assign(bn_state_.running_mean, blob.values, blob.name);
            } else if (blob.name == "stem.bn.running_var") {
                assign(bn_state_.running_var, blob.values, blob.name);
            } else {
                bool found = false;
                for (auto& [pname, t] : params)
                    if (pname == blob.name) {
                        Tensor tt = t;
                        if (t.shape() != blob.shape)
                            throw ValidationError("state blob '" + blob.name + "' has shape " +
                                                  shape_str(blob.shape) + ", expected " +
                                                  shape_str(t.shape()));
                        assign(tt.mutable_data(), blob.values, blob.name);
                        found = true;
                        break;
                    }
                if (!found) throw ValidationError("unknown parameter in state: " + blob.name);
            }
        }
    }

private:
    static void assign(std::vector<float>& dst, const std::vector<float>& src,
                       const std::string& name) {
        if (dst.size() != src.size())
            throw ValidationError("state blob '" + name + "' has " + std::to_string(src.size()) +
                                  " values, expected " + std::to_string(dst.size()));
        dst = src;
    }

    static void append_block(std::vector<std::pair<std::string, Tensor>>& out,
                             const std::string& prefix, const MambaBlockParams& b) {
        out.emplace_back(prefix + ".in_proj.w", b.in_proj_w);
        if (b.cfg.use_conv) {
            out.emplace_back(prefix + ".conv.w", b.conv_w);
            out.emplace_back(prefix + ".conv.b", b.conv_b);
        }
        out.emplace_back(prefix + ".x_proj.w", b.x_proj_w);
        out.emplace_back(prefix + ".dt_proj.w", b.dt_proj_w);
        out.emplace_back(prefix + ".dt_proj.b", b.dt_proj_b);
        out.emplace_back(prefix + ".a_log", b.A_log);
        out.emplace_back(prefix + ".skip_d", b.skip_d);
        out.emplace_back(prefix + ".out_proj.w", b.out_proj_w);
    }

    SdmambaConfig cfg_;
    Tensor stem_conv_w_, stem_conv_b_, bn_gamma_, bn_beta_;
    BatchNormState bn_state_;
    MambaBlockParams spatial_block_, spectral_block_;
    Tensor fusion_q_, fusion_k_, fusion_v_;
    Tensor head_w_, head_b_;
    Rng anchor_rng_;
    int eval_anchor_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint format: magic "SDMB", u32 version, config record, named blobs.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'S', 'D', 'M', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_config(BinaryWriter& w, const SdmambaConfig& c) {
    w.u32(static_cast<std::uint32_t>(c.patch_size));
    w.u32(static_cast<std::uint32_t>(c.in_bands));
    w.u32(static_cast<std::uint32_t>(c.hidden_dim));
    w.u32(static_cast<std::uint32_t>(c.num_classes));
    w.f32(c.lambda_spatial);
    w.f32(c.lambda_spectral);
    w.u32(static_cast<std::uint32_t>(c.d_state));
    w.u32(static_cast<std::uint32_t>(c.expand));
    w.u32(static_cast<std::uint32_t>(c.stem_kernel));
    w.u32(static_cast<std::uint32_t>(c.conv_kernel));
    w.u32(static_cast<std::uint32_t>(c.dt_rank));
    w.u32(c.use_conv ? 1u : 0u);
    w.u64(c.seed);
    w.f32(c.learning_rate);
    w.u32(static_cast<std::uint32_t>(c.batch_size));
    w.u32(static_cast<std::uint32_t>(c.epochs));
    w.f32(c.train_ratio);
    w.f32(c.val_ratio);
}

inline SdmambaConfig read_config(BinaryReader& r) {
    SdmambaConfig c;
    c.patch_size = static_cast<int>(r.u32());
    c.in_bands = static_cast<int>(r.u32());
    c.hidden_dim = static_cast<int>(r.u32());
    c.num_classes = static_cast<int>(r.u32());
    c.lambda_spatial = r.f32();
    c.lambda_spectral = r.f32();
    c.d_state = static_cast<int>(r.u32());
    c.expand = static_cast<int>(r.u32());
    c.stem_kernel = static_cast<int>(r.u32());
    c.conv_kernel = static_cast<int>(r.u32());
    c.dt_rank = static_cast<int>(r.u32());
    c.use_conv = r.u32() != 0;
    c.seed = r.u64();
    c.learning_rate = r.f32();
    c.batch_size = static_cast<int>(r.u32());
    c.epochs = static_cast<int>(r.u32());
    c.train_ratio = r.f32();
    c.val_ratio = r.f32();
    return c;
}

inline void save_checkpoint(const std::string& path, const SdmambaModel& model) {
    BinaryWriter w(path);
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    write_config(w, model.config());
    auto blobs = model.state();
    w.u32(static_cast<std::uint32_t>(blobs.size()));
    for (const auto& blob : blobs) {
        w.str(blob.name);
        w.u32(static_cast<std::uint32_t>(blob.shape.size()));
        for (int e : blob.shape) w.u32(static_cast<std::uint32_t>(e));
        w.f32s(blob.values);
    }
    w.close();
}

inline SdmambaModel load_checkpoint(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic(kCheckpointMagic, "checkpoint");
    std::uint64_t at = r.offset();
    std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), at);
    SdmambaConfig cfg = read_config(r);
    SdmambaModel model(cfg);
    std::uint32_t count = r.u32();
    std::vector<SdmambaModel::StateBlob> blobs;
    for (std::uint32_t i = 0; i < count; ++i) {
        SdmambaModel::StateBlob blob;
        blob.name = r.str();
        std::uint64_t rank_at = r.offset();
        std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 8)
            throw FormatError("implausible blob rank for '" + blob.name + "'", rank_at);
        std::uint64_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            std::uint64_t at = r.offset();
            std::uint32_t e = r.u32();
            if (e == 0 || n * e > (1ull << 32))
                throw FormatError("implausible extent in blob '" + blob.name + "'", at);
            blob.shape.push_back(static_cast<int>(e));
            n *= e;
        }
        blob.values = r.f32s(static_cast<size_t>(n));
        blobs.push_back(std::move(blob));
    }
    model.load_state(blobs);
    return model;
}

} // namespace sdmamba
