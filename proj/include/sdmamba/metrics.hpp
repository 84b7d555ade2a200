#pragma once

// Confusion matrix and the usual remote-sensing classification scores:
// overall accuracy, average (per-class) accuracy, Cohen's kappa.

#include <cstdint>
#include <string>
#include <vector>

#include "sdmamba/common.hpp"

namespace sdmamba {

struct EvalReport {
    int num_classes = 0;
    std::vector<std::uint64_t> confusion; // K*K, rows = truth, cols = prediction
    double oa = 0.0;
    double aa = 0.0;
    double kappa = 0.0;
    std::vector<double> per_class_acc; // recall per class; -1 if class absent from truth
    std::uint64_t total = 0;
    std::uint64_t flops_per_sample = 0;

    std::uint64_t at(int truth, int pred) const {
        return confusion[static_cast<size_t>(truth) * num_classes + pred];
    }
};

// truth/pred are 0-based class ids.
inline EvalReport evaluate_predictions(const std::vector<int>& truth,
                                       const std::vector<int>& pred, int num_classes) {
    if (truth.size() != pred.size())
        throw ContractError("evaluate_predictions: label count mismatch");
    EvalReport rep;
    rep.num_classes = num_classes;
    rep.confusion.assign(static_cast<size_t>(num_classes) * num_classes, 0);
    for (size_t i = 0; i < truth.size(); ++i) {
        int t = truth[i], p = pred[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
            throw IndexError("class id out of range in evaluation");
        ++rep.confusion[static_cast<size_t>(t) * num_classes + p];
    }
    rep.total = truth.size();
    if (rep.total == 0) return rep;

    std::uint64_t trace = 0;
    std::vector<std::uint64_t> row_sum(static_cast<size_t>(num_classes), 0);
    std::vector<std::uint64_t> col_sum(static_cast<size_t>(num_classes), 0);
    for (int t = 0; t < num_classes; ++t)
        for (int p = 0; p < num_classes; ++p) {
            std::uint64_t v = rep.at(t, p);
            row_sum[static_cast<size_t>(t)] += v;
            col_sum[static_cast<size_t>(p)] += v;
            if (t == p) trace += v;
        }
    rep.oa = static_cast<double>(trace) / static_cast<double>(rep.total);

    rep.per_class_acc.assign(static_cast<size_t>(num_classes), -1.0);
    double acc_sum = 0.0;
    int present = 0;
    for (int t = 0; t < num_classes; ++t) {
        if (row_sum[static_cast<size_t>(t)] == 0) continue;
        double a = static_cast<double>(rep.at(t, t)) /
                   static_cast<double>(row_sum[static_cast<size_t>(t)]);
        rep.per_class_acc[static_cast<size_t>(t)] = a;
        acc_sum += a;
        ++present;
    }
    rep.aa = present > 0 ? acc_sum / present : 0.0;

    double pe = 0.0;
    double n = static_cast<double>(rep.total);
    for (int k = 0; k < num_classes; ++k)
        pe += (row_sum[static_cast<size_t>(k)] / n) * (col_sum[static_cast<size_t>(k)] / n);
    rep.kappa = pe < 1.0 ? (rep.oa - pe) / (1.0 - pe) : 1.0;
    return rep;
}

} // namespace sdmamba
