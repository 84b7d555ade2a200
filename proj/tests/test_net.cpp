#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "sdmamba/net.hpp"

using namespace sdmamba;

namespace {

SdmambaConfig small_config() {
    SdmambaConfig cfg;
    cfg.patch_size = 7;
    cfg.in_bands = 6;
    cfg.hidden_dim = 12;
    cfg.num_classes = 3;
    cfg.d_state = 4;
    cfg.seed = 11;
    return cfg;
}

Tensor random_batch(const SdmambaConfig& cfg, int B, unsigned seed) {
    Rng rng(seed);
    Tensor t = Tensor::zeros({B, cfg.in_bands, cfg.patch_size, cfg.patch_size});
    for (auto& v : t.mutable_data()) v = rng.uniform(0.0f, 1.0f);
    return t;
}

} // namespace

TEST_CASE("config validation rejects out-of-range settings") {
    SdmambaConfig cfg = small_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.patch_size = 8;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.lambda_spatial = 0.0f;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.num_classes = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.train_ratio = 0.8f;
    cfg.val_ratio = 0.4f;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("stem maps 1x200x9x9 to 1x256x9x9") {
    SdmambaConfig cfg;
    cfg.patch_size = 9;
    cfg.seed = 3;
    SdmambaModel model(cfg);
    Tensor out = model.stem_forward(Tensor::zeros({1, 200, 9, 9}), false);
    CHECK(out.shape() == Shape{1, 256, 9, 9});
    CHECK_THROWS_AS(model.stem_forward(Tensor::zeros({1, 100, 9, 9}), false), ShapeError);
}

TEST_CASE("stem in eval mode maps zero input to zero") {
    SdmambaModel model(small_config());
    Tensor out = model.stem_forward(
        Tensor::zeros({2, model.config().in_bands, 7, 7}), false);
    for (float v : out.data()) CHECK(v == doctest::Approx(0.0f));
}

TEST_CASE("forward produces logits and center features for several patch sizes") {
    for (int p : {5, 7, 9}) {
        SdmambaConfig cfg = small_config();
        cfg.patch_size = p;
        SdmambaModel model(cfg);
        ForwardOutput out = model.forward(random_batch(cfg, 2, 77), false);
        CHECK(out.logits.shape() == Shape{2, cfg.num_classes});
        CHECK(out.features.shape() == Shape{2, cfg.hidden_dim});
        for (float v : out.logits.data()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("forward rejects wrong patch size") {
    SdmambaConfig cfg = small_config();
    SdmambaModel model(cfg);
    CHECK_THROWS_AS(model.forward(Tensor::zeros({1, cfg.in_bands, 9, 9}), false), ShapeError);
}

TEST_CASE("parameter count matches the closed-form total") {
    SdmambaConfig cfg = small_config();
    SdmambaModel model(cfg);
    auto block_params = [&](const MambaConfig& m) {
        std::int64_t D = m.d_model, E = m.inner(), N = m.d_state, R = m.rank_dt();
        std::int64_t n = D * 2 * E;              // in_proj
        n += E * m.conv_kernel + E;              // depthwise conv w + b
        n += E * (R + 2 * N);                    // x_proj
        n += R * E + E;                          // dt_proj w + b
        n += E * N + E;                          // A_log + skip
        n += E * D;                              // out_proj
        return n;
    };
    std::int64_t D = cfg.hidden_dim, k = cfg.stem_kernel, K = cfg.num_classes;
    std::int64_t expected = D * cfg.in_bands * k * k + D // stem conv
                            + 2 * D                      // bn gamma/beta
                            + block_params(cfg.spatial_mamba())
                            + block_params(cfg.spectral_mamba())
                            + 3 * D * D // fusion q/k/v
                            + D * K + K; // head
    CHECK(model.parameter_count() == expected);

    // every parameter appears exactly once under a unique name
    auto params = model.parameters();
    for (size_t i = 0; i < params.size(); ++i)
        for (size_t j = i + 1; j < params.size(); ++j) CHECK(params[i].first != params[j].first);
}

TEST_CASE("same seed gives bitwise-identical models and eval outputs") {
    SdmambaConfig cfg = small_config();
    SdmambaModel a(cfg), b(cfg);
    Tensor batch = random_batch(cfg, 2, 5);
    ForwardOutput ya = a.forward(batch, false);
    ForwardOutput yb = b.forward(batch, false);
    CHECK(ya.logits.data() == yb.logits.data());
    CHECK(ya.features.data() == yb.features.data());
    // repeated eval of the same model is also bitwise stable
    ForwardOutput yc = a.forward(batch, false);
    CHECK(ya.logits.data() == yc.logits.data());

    SdmambaConfig other = cfg;
    other.seed = 12;
    SdmambaModel c(other);
    CHECK(c.forward(batch, false).logits.data() != ya.logits.data());
}

TEST_CASE("attention weights are a convex combination per query") {
    SdmambaConfig cfg = small_config();
    SdmambaModel model(cfg);
    Rng rng(8);
    int HW = cfg.tokens_spatial(), D = cfg.hidden_dim;
    Tensor spa = Tensor::zeros({HW, D});
    Tensor spe = Tensor::zeros({HW, D});
    for (auto& v : spa.mutable_data()) v = rng.uniform(-1.0f, 1.0f);
    for (auto& v : spe.mutable_data()) v = rng.uniform(-1.0f, 1.0f);
    Tensor fused = model.attention_fusion(spa, spe);
    CHECK(fused.shape() == Shape{HW, D});
    // With all value rows identical, any softmax weighting returns that row.
    Tensor same = Tensor::zeros({HW, D});
    for (int i = 0; i < HW; ++i)
        for (int j = 0; j < D; ++j) same.mutable_data()[size_t(i) * D + j] = spe(0, j);
    Tensor fused_same = model.attention_fusion(spa, same);
    for (int i = 1; i < HW; ++i)
        for (int j = 0; j < D; ++j)
            CHECK(fused_same(i, j) == doctest::Approx(fused_same(0, j)).epsilon(1e-4));
}

TEST_CASE("spectral anchor: training draws vary, eval anchor is fixed") {
    SdmambaConfig cfg = small_config();
    SdmambaModel a(cfg), b(cfg);
    CHECK(a.eval_spectral_anchor() == b.eval_spectral_anchor());
    std::vector<int> draws;
    bool varied = false;
    for (int i = 0; i < 32; ++i) {
        int d = a.draw_spectral_anchor(true);
        CHECK(d >= 0);
        CHECK(d < cfg.hidden_dim);
        draws.push_back(d);
        varied = varied || d != draws.front();
    }
    CHECK(varied);
    CHECK(a.draw_spectral_anchor(false) == a.eval_spectral_anchor());
    // same seed => same training draw sequence
    for (int i = 0; i < 32; ++i) CHECK(b.draw_spectral_anchor(true) == draws[size_t(i)]);
}

TEST_CASE("checkpoint round-trips bitwise") {
    SdmambaConfig cfg = small_config();
    SdmambaModel model(cfg);
    // make running stats non-trivial before saving
    model.forward(random_batch(cfg, 4, 21), true);
    const char* path = "test_net_ckpt.sdmb";
    save_checkpoint(path, model);
    SdmambaModel loaded = load_checkpoint(path);

    auto a = model.state(), b = loaded.state();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].shape == b[i].shape);
        CHECK(a[i].values == b[i].values);
    }
    Tensor batch = random_batch(cfg, 2, 9);
    CHECK(model.forward(batch, false).logits.data() == loaded.forward(batch, false).logits.data());
    std::remove(path);
}

TEST_CASE("corrupted checkpoints are rejected with a format error") {
    SdmambaConfig cfg = small_config();
    SdmambaModel model(cfg);
    const char* path = "test_net_ckpt_bad.sdmb";
    save_checkpoint(path, model);

    // wrong magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);

    // truncation
    save_checkpoint(path, model);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    try {
        load_checkpoint(path);
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(e.offset <= bytes.size());
    }
    std::remove(path);
}
