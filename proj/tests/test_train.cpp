#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sdmamba/train.hpp"

using namespace sdmamba;

namespace {

SdmambaConfig tiny_config() {
    SdmambaConfig cfg;
    cfg.patch_size = 5;
    cfg.in_bands = 6;
    cfg.hidden_dim = 8;
    cfg.num_classes = 3;
    cfg.d_state = 4;
    cfg.seed = 13;
    cfg.batch_size = 8;
    cfg.epochs = 4;
    cfg.learning_rate = 2e-3f;
    cfg.train_ratio = 0.2f;
    cfg.val_ratio = 0.1f;
    return cfg;
}

} // namespace

TEST_CASE("metric fixture: truth {0,1,1,1}, pred {0,0,1,1}") {
    EvalReport rep = evaluate_predictions({0, 1, 1, 1}, {0, 0, 1, 1}, 2);
    CHECK(rep.oa == doctest::Approx(0.75));
    CHECK(rep.aa == doctest::Approx(1.0 / 2 + 1.0 / 3).epsilon(1e-9)); // (1 + 2/3) / 2 = 0.8333...
    CHECK(rep.aa == doctest::Approx(0.83333333).epsilon(1e-6));
    CHECK(rep.kappa == doctest::Approx(0.5));
    CHECK(rep.at(0, 0) == 1);
    CHECK(rep.at(1, 0) == 1);
    CHECK(rep.at(1, 1) == 2);
    CHECK(rep.at(0, 1) == 0);
    CHECK(rep.total == 4);
}

TEST_CASE("perfect predictions score one on every metric") {
    EvalReport rep = evaluate_predictions({0, 1, 2, 2, 1}, {0, 1, 2, 2, 1}, 3);
    CHECK(rep.oa == doctest::Approx(1.0));
    CHECK(rep.aa == doctest::Approx(1.0));
    CHECK(rep.kappa == doctest::Approx(1.0));
}

TEST_CASE("kappa of random predictions is near zero") {
    Rng rng(77);
    std::vector<int> truth, pred;
    for (int i = 0; i < 10000; ++i) {
        truth.push_back(rng.uniform_int(4));
        pred.push_back(rng.uniform_int(4));
    }
    EvalReport rep = evaluate_predictions(truth, pred, 4);
    CHECK(std::abs(rep.kappa) < 0.05);
}

TEST_CASE("metrics are invariant to sample order and respect class absence") {
    std::vector<int> truth{2, 0, 0, 1, 2, 2}, pred{2, 0, 1, 1, 2, 0};
    EvalReport a = evaluate_predictions(truth, pred, 4);
    std::vector<int> truth2{0, 2, 2, 0, 1, 2}, pred2{1, 2, 0, 0, 1, 2};
    EvalReport b = evaluate_predictions(truth2, pred2, 4);
    CHECK(a.oa == doctest::Approx(b.oa));
    CHECK(a.aa == doctest::Approx(b.aa));
    CHECK(a.kappa == doctest::Approx(b.kappa));
    CHECK(a.per_class_acc[3] == -1.0); // class 3 absent from truth
    CHECK(a.kappa >= -1.0);
    CHECK(a.kappa <= 1.0);

    CHECK_THROWS_AS(evaluate_predictions({0, 1}, {0}, 2), ContractError);
    CHECK_THROWS_AS(evaluate_predictions({0, 5}, {0, 1}, 2), IndexError);
}

TEST_CASE("adam leaves parameters untouched when gradients are zero") {
    SdmambaModel model(tiny_config());
    auto params = model.parameters();
    AdamState adam;
    adam.init(params);
    std::vector<std::vector<float>> before;
    for (auto& [name, t] : params) {
        t.zero_grad();
        before.push_back(t.data());
    }
    adam.apply(params, 0.1f);
    for (size_t i = 0; i < params.size(); ++i) CHECK(params[i].second.data() == before[i]);
}

TEST_CASE("the first adam step moves each weight against its gradient") {
    Tensor w = Tensor::from_data({3}, {1.0f, -2.0f, 0.5f}, true);
    std::vector<std::pair<std::string, Tensor>> params{{"w", w}};
    AdamState adam;
    adam.init(params);
    w.zero_grad();
    w.mutable_grad()[0] = 0.4f;
    w.mutable_grad()[1] = -3.0f;
    w.mutable_grad()[2] = 0.0f;
    adam.apply(params, 0.01f);
    // bias-corrected first step is lr * g / (|g| + eps): a signed unit step
    CHECK(w(0) == doctest::Approx(1.0f - 0.01f).epsilon(1e-4));
    CHECK(w(1) == doctest::Approx(-2.0f + 0.01f).epsilon(1e-4));
    CHECK(w(2) == doctest::Approx(0.5f));
}

TEST_CASE("flop model: sparse cost never exceeds dense, equal at lambda one") {
    SdmambaConfig cfg = tiny_config();
    std::uint64_t prev = 0;
    for (float lambda : {0.05f, 0.1f, 0.3f, 0.5f, 0.7f, 1.0f}) {
        cfg.lambda_spatial = lambda;
        cfg.lambda_spectral = lambda;
        FlopReport rep = count_flops(cfg);
        CHECK(rep.sparse.total_flops() <= rep.dense.total_flops());
        CHECK(rep.sparse.total_flops() >= prev); // cost grows with the keep ratio
        prev = rep.sparse.total_flops();
        CHECK(rep.sparse.total_flops() == 2 * rep.sparse.total_macs());
        if (lambda == 1.0f) {
            CHECK(rep.sparse.total_flops() == rep.dense.total_flops());
            CHECK(rep.spatial_tokens_sparse == cfg.tokens_spatial());
        }
    }
    CHECK(selected_tokens(0.3f, 81) == 25);
    CHECK(selected_tokens(0.001f, 50) == 1);
}

TEST_CASE("instrumented mamba MACs match the analytical path cost") {
    SdmambaConfig cfg = tiny_config();
    SdmambaModel model(cfg);
    Rng rng(3);
    Tensor batch = Tensor::zeros({1, cfg.in_bands, cfg.patch_size, cfg.patch_size});
    for (auto& v : batch.mutable_data()) v = rng.uniform(0.0f, 1.0f);
    macs::reset();
    model.forward(batch, false);
    CHECK(macs::count() == mamba_path_macs(cfg, cfg.lambda_spatial, cfg.lambda_spectral));
}

TEST_CASE("training on a small synthetic cube reduces the loss") {
    SdmambaConfig cfg = tiny_config();
    HsiCube cube = normalize(synthesize_cube(12, cfg.in_bands, cfg.num_classes, 0.05f, 5));
    SampleSplit split = stratified_split(cube, cfg.train_ratio, cfg.val_ratio, cfg.seed);
    SdmambaModel model(cfg);

    // untrained cross-entropy sits near ln(num_classes)
    Tensor batch = extract_patch_batch(cube, split.val, cfg.patch_size);
    std::vector<int> labels;
    for (auto [r, c] : split.val) labels.push_back(cube.label(r, c) - 1);
    float initial = cross_entropy(model.forward(batch, false).logits, labels).item();
    CHECK(initial == doctest::Approx(std::log(float(cfg.num_classes))).epsilon(0.05));

    TrainResult result = train(model, cube, split);
    REQUIRE(result.history.size() == size_t(cfg.epochs));
    CHECK(result.history.back().loss < result.history.front().loss);
    CHECK(result.best_epoch >= 1);
    CHECK(result.best_val_oa >= result.history.front().val_oa);

    EvalReport rep = evaluate(model, cube, split.test);
    CHECK(rep.total == split.test.size());
    CHECK(rep.flops_per_sample == count_flops(cfg).sparse.total_flops());
}

TEST_CASE("training is seed-deterministic end to end") {
    SdmambaConfig cfg = tiny_config();
    cfg.epochs = 2;
    HsiCube cube = normalize(synthesize_cube(12, cfg.in_bands, cfg.num_classes, 0.05f, 5));
    SampleSplit split = stratified_split(cube, cfg.train_ratio, cfg.val_ratio, cfg.seed);
    SdmambaModel a(cfg), b(cfg);
    TrainResult ra = train(a, cube, split);
    TrainResult rb = train(b, cube, split);
    REQUIRE(ra.history.size() == rb.history.size());
    for (size_t i = 0; i < ra.history.size(); ++i) {
        CHECK(ra.history[i].loss == rb.history[i].loss);
        CHECK(ra.history[i].val_oa == rb.history[i].val_oa);
    }
    auto sa = a.state(), sb = b.state();
    REQUIRE(sa.size() == sb.size());
    for (size_t i = 0; i < sa.size(); ++i) CHECK(sa[i].values == sb[i].values);
}

TEST_CASE("history and embedding files are written in the documented layout") {
    SdmambaConfig cfg = tiny_config();
    std::vector<EpochRecord> hist{{1, 1.0986, 0.5, 0.4, 0.1}, {2, 0.9, 0.75, 0.7, 0.5}};
    const char* hpath = "test_train_history.csv";
    save_history(hpath, hist);
    std::ifstream in(hpath);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,loss,val_oa,val_aa,val_kappa");
    std::getline(in, line);
    CHECK(line == "1,1.098600,0.500000,0.400000,0.100000");
    in.close();
    std::remove(hpath);

    HsiCube cube = normalize(synthesize_cube(8, cfg.in_bands, cfg.num_classes, 0.05f, 5));
    SdmambaModel model(cfg);
    std::vector<std::pair<int, int>> coords{{2, 2}, {5, 3}};
    const char* epath = "test_train_embed.csv";
    export_embeddings(model, cube, coords, epath);
    std::ifstream ein(epath);
    int lines = 0;
    while (std::getline(ein, line)) {
        ++lines;
        int commas = 0;
        for (char ch : line) commas += ch == ',';
        CHECK(commas == 3 + cfg.hidden_dim - 1); // row,col,label + D features
    }
    CHECK(lines == 2);
    ein.close();
    std::remove(epath);
}
