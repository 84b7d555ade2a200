#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdmamba/sds.hpp"
#include "test_util.hpp"

using namespace sdmamba;
using test_util::central_diff;
using test_util::rel_err;

TEST_CASE("angular attention on axis-aligned 2d tokens") {
    Tensor tokens = Tensor::from_data({4, 2}, {1, 0, /**/ 1, 1, /**/ 0, 1, /**/ -1, 0});
    auto angles = angular_attention(tokens, std::vector<float>{1, 0});
    float pi = 3.14159265f;
    CHECK(angles[0] == doctest::Approx(0.0f).epsilon(1e-5));
    CHECK(angles[1] == doctest::Approx(pi / 4).epsilon(1e-5));
    CHECK(angles[2] == doctest::Approx(pi / 2).epsilon(1e-5));
    CHECK(angles[3] == doctest::Approx(pi).epsilon(1e-5));
}

TEST_CASE("angular attention gives zero-norm tokens a mid-rank angle") {
    Tensor tokens = Tensor::from_data({2, 3}, {0, 0, 0, /**/ 1, 2, 3});
    auto angles = angular_attention(tokens, std::vector<float>{1, 2, 3});
    CHECK(angles[0] == doctest::Approx(kHalfPi));
    CHECK(angles[1] == doctest::Approx(0.0f).epsilon(1e-5));
}

TEST_CASE("angular attention is scale invariant") {
    Rng rng(50);
    Tensor tokens = Tensor::zeros({6, 5});
    for (auto& v : tokens.mutable_data()) v = rng.uniform(-1.0f, 1.0f);
    Tensor scaled = Tensor::zeros({6, 5});
    for (size_t i = 0; i < tokens.data().size(); ++i)
        scaled.mutable_data()[i] = 7.25f * tokens.data()[i];
    std::vector<float> anchor(5);
    for (auto& v : anchor) v = rng.uniform(-1.0f, 1.0f);
    std::vector<float> anchor3(anchor);
    for (auto& v : anchor3) v *= 3.0f;
    auto a = angular_attention(tokens, anchor);
    auto b = angular_attention(scaled, anchor3);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-4));
}

TEST_CASE("anchor-by-index pins the anchor angle to exactly zero") {
    Rng rng(51);
    Tensor tokens = Tensor::zeros({9, 4});
    for (auto& v : tokens.mutable_data()) v = rng.uniform(-1.0f, 1.0f);
    auto angles = angular_attention(tokens, 3);
    CHECK(angles[3] == 0.0f);
    CHECK_THROWS_AS(angular_attention(tokens, 9), IndexError);
    CHECK_THROWS_AS(angular_attention(tokens, -1), IndexError);
}

TEST_CASE("sparse selection keeps ceil(lambda*N) tokens, ascending angle") {
    std::vector<float> angles{0.3f, 0.0f, 0.9f, 0.2f};
    SparseSelection sel = select_sparse(angles, 0.5f, 1);
    CHECK(sel.indices == std::vector<int>{1, 3});

    SparseSelection all = select_sparse(angles, 1.0f, 1);
    CHECK(all.indices == std::vector<int>{1, 3, 0, 2});

    std::vector<float> many(81, 0.5f);
    many[7] = 0.0f;
    CHECK(select_sparse(many, 0.3f, 7).indices.size() == 25);

    CHECK(select_sparse({0.4f}, 0.01f, 0).indices == std::vector<int>{0}); // never empty
    CHECK_THROWS_AS(select_sparse(angles, 0.0f, 0), ConfigError);
    CHECK_THROWS_AS(select_sparse(angles, 1.5f, 0), ConfigError);
}

TEST_CASE("anchor always leads the selection") {
    Rng rng(52);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 2 + rng.uniform_int(30);
        std::vector<float> angles(static_cast<size_t>(n));
        for (auto& a : angles) a = rng.uniform(0.0f, 3.14f);
        int anchor = rng.uniform_int(n);
        angles[static_cast<size_t>(anchor)] = 0.0f;
        SparseSelection sel = select_sparse(angles, rng.uniform(0.05f, 1.0f), anchor);
        CHECK(sel.indices.front() == anchor);
    }
}

TEST_CASE("selection at a smaller ratio is a prefix of a larger one") {
    Rng rng(53);
    std::vector<float> angles(40);
    for (auto& a : angles) a = rng.uniform(0.0f, 3.0f);
    angles[11] = 0.0f;
    SparseSelection small = select_sparse(angles, 0.2f, 11);
    SparseSelection big = select_sparse(angles, 0.7f, 11);
    REQUIRE(small.indices.size() <= big.indices.size());
    for (size_t i = 0; i < small.indices.size(); ++i) CHECK(small.indices[i] == big.indices[i]);
}

TEST_CASE("selection matches a brute-force smallest-angles oracle") {
    Rng rng(54);
    for (int trial = 0; trial < 40; ++trial) {
        int n = 1 + rng.uniform_int(12);
        std::vector<float> angles(static_cast<size_t>(n));
        for (auto& a : angles) a = rng.uniform(0.0f, 3.14f);
        float lambda = rng.uniform(0.05f, 1.0f);
        SparseSelection sel = select_sparse(angles, lambda);
        size_t s = static_cast<size_t>(std::max(1, static_cast<int>(std::ceil(double(lambda) * n))));
        REQUIRE(sel.indices.size() == std::min(s, static_cast<size_t>(n)));
        // Oracle: sort (angle, index) pairs; selected set = s smallest.
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return angles[size_t(a)] < angles[size_t(b)]; });
        order.resize(sel.indices.size());
        CHECK(sel.indices == order);
    }
}

TEST_CASE("spatial anchor is the center of the token grid") {
    CHECK(spatial_anchor_index(9, 9) == 40);
    CHECK(spatial_anchor_index(13, 13) == 84);
    CHECK(spatial_anchor_index(3, 5) == 7);
    CHECK(spatial_anchor_index(1, 1) == 0);
}

TEST_CASE("spectral anchor draw is seeded and roughly uniform") {
    Rng a(99), b(99);
    for (int i = 0; i < 20; ++i) CHECK(spectral_anchor_index(17, a) == spectral_anchor_index(17, b));

    int C = 8, draws = 10000;
    std::vector<int> counts(static_cast<size_t>(C), 0);
    Rng rng(123);
    for (int i = 0; i < draws; ++i) ++counts[static_cast<size_t>(spectral_anchor_index(C, rng))];
    double expected = static_cast<double>(draws) / C;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 24.3); // chi-square 99.9th percentile, 7 dof
    CHECK_THROWS_AS(spectral_anchor_index(0, rng), ContractError);
}

TEST_CASE("sequence-and-restore reduces to identity when the block outputs zero") {
    MambaConfig cfg;
    cfg.d_model = 6;
    Rng rng(55);
    MambaBlockParams block = make_mamba_block(cfg, rng);
    std::fill(block.out_proj_w.mutable_data().begin(), block.out_proj_w.mutable_data().end(), 0.0f);
    Tensor tokens = Tensor::zeros({10, 6});
    for (auto& v : tokens.mutable_data()) v = rng.uniform(-1.0f, 1.0f);
    SparseSelection sel = select_sparse(angular_attention(tokens, 0), 0.5f, 0);
    Tensor out = sequence_and_restore(tokens, sel, block);
    CHECK(out.data() == tokens.data());
}

TEST_CASE("sequence-and-restore passes unselected tokens through unchanged") {
    MambaConfig cfg;
    cfg.d_model = 6;
    Rng rng(56);
    MambaBlockParams block = make_mamba_block(cfg, rng);
    Tensor tokens = Tensor::zeros({10, 6});
    for (auto& v : tokens.mutable_data()) v = rng.uniform(-1.0f, 1.0f);
    SparseSelection sel = select_sparse(angular_attention(tokens, 2), 0.3f, 2);
    Tensor out = sequence_and_restore(tokens, sel, block);
    std::vector<bool> selected(10, false);
    for (int i : sel.indices) selected[static_cast<size_t>(i)] = true;
    bool any_changed = false;
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 6; ++j) {
            if (selected[static_cast<size_t>(i)]) {
                any_changed = any_changed || out(i, j) != tokens(i, j);
            } else {
                CHECK(out(i, j) == tokens(i, j));
            }
        }
    CHECK(any_changed);
}

TEST_CASE("sequence-and-restore backpropagates into tokens and block weights") {
    MambaConfig cfg;
    cfg.d_model = 4;
    cfg.d_state = 3;
    Rng rng(57);
    MambaBlockParams block = make_mamba_block(cfg, rng);
    Tensor tokens = Tensor::zeros({7, 4}, true);
    for (auto& v : tokens.mutable_data()) v = rng.uniform(-1.0f, 1.0f);
    SparseSelection sel = select_sparse(angular_attention(tokens, 1), 0.5f, 1);
    auto fwd = [&] { return sum(mul(sequence_and_restore(tokens, sel, block),
                                    sequence_and_restore(tokens, sel, block))).item(); };
    backward(sum(mul(sequence_and_restore(tokens, sel, block),
                     sequence_and_restore(tokens, sel, block))));
    // unselected token gradient is exactly the skip path; selected ones get more
    bool nonzero = false;
    for (float g : block.in_proj_w.grad()) nonzero = nonzero || g != 0.0f;
    CHECK(nonzero);
    for (size_t i = 0; i < tokens.data().size(); i += 5)
        CHECK(rel_err(tokens.grad()[i], central_diff(fwd, tokens, i)) < 5e-3);
}
