#pragma once

// Adam optimization loop with best-validation checkpointing, batched
// evaluation into an EvalReport, and embedding export.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "sdmamba/flops.hpp"
#include "sdmamba/hsi.hpp"
#include "sdmamba/metrics.hpp"
#include "sdmamba/net.hpp"

namespace sdmamba {

struct AdamState {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    std::int64_t step = 0;
    std::vector<std::vector<float>> m, v; // per parameter, same order as model.parameters()

    void init(const std::vector<std::pair<std::string, Tensor>>& params) {
        m.clear();
        v.clear();
        for (const auto& [name, t] : params) {
            m.emplace_back(t.data().size(), 0.0f);
            v.emplace_back(t.data().size(), 0.0f);
        }
        step = 0;
    }

    void apply(std::vector<std::pair<std::string, Tensor>>& params, float lr) {
        ++step;
        float bc1 = 1.0f - std::pow(beta1, static_cast<float>(step));
        float bc2 = 1.0f - std::pow(beta2, static_cast<float>(step));
        for (size_t p = 0; p < params.size(); ++p) {
            Tensor& t = params[p].second;
            if (!t.has_grad()) continue;
            auto& data = t.mutable_data();
            const auto& g = t.grad();
            auto& mp = m[p];
            auto& vp = v[p];
            for (size_t i = 0; i < data.size(); ++i) {
                mp[i] = beta1 * mp[i] + (1.0f - beta1) * g[i];
                vp[i] = beta2 * vp[i] + (1.0f - beta2) * g[i] * g[i];
                float mhat = mp[i] / bc1;
                float vhat = vp[i] / bc2;
                data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double val_oa = 0.0;
    double val_aa = 0.0;
    double val_kappa = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    double best_val_oa = 0.0;
    int best_epoch = -1;
};

inline EvalReport evaluate(SdmambaModel& model, const HsiCube& cube,
                           const std::vector<std::pair<int, int>>& coords) {
    const auto& cfg = model.config();
    std::vector<int> truth, pred;
    truth.reserve(coords.size());
    pred.reserve(coords.size());
    int bs = std::max(1, cfg.batch_size);
    for (size_t start = 0; start < coords.size(); start += static_cast<size_t>(bs)) {
        size_t end = std::min(coords.size(), start + static_cast<size_t>(bs));
        std::vector<std::pair<int, int>> batch_coords(coords.begin() + static_cast<long>(start),
                                                      coords.begin() + static_cast<long>(end));
        Tensor batch = extract_patch_batch(cube, batch_coords, cfg.patch_size);
        ForwardOutput out = model.forward(batch, false);
        int K = cfg.num_classes;
        for (size_t i = 0; i < batch_coords.size(); ++i) {
            const float* row = out.logits.data().data() + i * static_cast<size_t>(K);
            int best = 0;
            for (int k = 1; k < K; ++k)
                if (row[k] > row[best]) best = k;
            pred.push_back(best);
            truth.push_back(cube.label(batch_coords[i].first, batch_coords[i].second) - 1);
        }
    }
    EvalReport rep = evaluate_predictions(truth, pred, cfg.num_classes);
    rep.flops_per_sample = count_flops(cfg).sparse.total_flops();
    return rep;
}

inline TrainResult train(SdmambaModel& model, const HsiCube& cube, const SampleSplit& split,
                         bool verbose = false) {
    const auto& cfg = model.config();
    if (split.train.empty()) throw ContractError("train: empty training split");

    auto params = model.parameters();
    AdamState adam;
    adam.init(params);
    Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    TrainResult result;
    std::vector<SdmambaModel::StateBlob> best_state = model.state();

    std::vector<std::pair<int, int>> order = split.train;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<std::pair<int, int>> batch_coords(order.begin() + static_cast<long>(start),
                                                          order.begin() + static_cast<long>(end));
            Tensor batch = extract_patch_batch(cube, batch_coords, cfg.patch_size);
            std::vector<int> labels;
            for (auto [r, c] : batch_coords) labels.push_back(cube.label(r, c) - 1);

            for (auto& [name, t] : params) t.zero_grad();
            ForwardOutput out = model.forward(batch, true);
            Tensor loss = cross_entropy(out.logits, labels);
            float lv = loss.item();
            if (!std::isfinite(lv))
                throw ContractError("training diverged: loss is not finite at epoch " +
                                    std::to_string(epoch));
            backward(loss);
            for (auto& [name, t] : params)
                if (t.has_grad())
                    for (float g : t.grad())
                        if (!std::isfinite(g))
                            throw ContractError("training diverged: non-finite gradient in '" +
                                                name + "' at epoch " + std::to_string(epoch));
            adam.apply(params, cfg.learning_rate);
            epoch_loss += lv;
            ++batches;
        }

        EvalReport val = evaluate(model, cube, split.val);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = epoch_loss / std::max(1, batches);
        rec.val_oa = val.oa;
        rec.val_aa = val.aa;
        rec.val_kappa = val.kappa;
        result.history.push_back(rec);
        if (rec.val_oa > result.best_val_oa || result.best_epoch < 0) {
            result.best_val_oa = rec.val_oa;
            result.best_epoch = epoch;
            best_state = model.state();
        }
        if (verbose)
            std::fprintf(stderr, "epoch %3d  loss %.4f  val_oa %.4f\n", epoch, rec.loss,
                         rec.val_oa);
    }

    model.load_state(best_state);
    return result;
}

inline void save_history(const std::string& path, const std::vector<EpochRecord>& history) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "epoch,loss,val_oa,val_aa,val_kappa\n";
    char line[160];
    for (const auto& r : history) {
        std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.loss, r.val_oa,
                      r.val_aa, r.val_kappa);
        out << line;
    }
    if (!out) throw IoError("write failed: " + path);
}

// One line per coordinate: "row,col,label,f_1,...,f_D" (pre-head fused
// center-pixel features).
inline void export_embeddings(SdmambaModel& model, const HsiCube& cube,
                              const std::vector<std::pair<int, int>>& coords,
                              const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    const auto& cfg = model.config();
    int bs = std::max(1, cfg.batch_size);
    char buf[64];
    for (size_t start = 0; start < coords.size(); start += static_cast<size_t>(bs)) {
        size_t end = std::min(coords.size(), start + static_cast<size_t>(bs));
        std::vector<std::pair<int, int>> batch_coords(coords.begin() + static_cast<long>(start),
                                                      coords.begin() + static_cast<long>(end));
        Tensor batch = extract_patch_batch(cube, batch_coords, cfg.patch_size);
        ForwardOutput fwd = model.forward(batch, false);
        int D = cfg.hidden_dim;
        for (size_t i = 0; i < batch_coords.size(); ++i) {
            auto [r, c] = batch_coords[i];
            out << r << "," << c << "," << cube.label(r, c);
            for (int j = 0; j < D; ++j) {
                std::snprintf(buf, sizeof buf, "%.9g",
                              fwd.features.data()[i * static_cast<size_t>(D) + j]);
                out << "," << buf;
            }
            out << "\n";
        }
    }
    if (!out) throw IoError("write failed: " + path);
}

} // namespace sdmamba
