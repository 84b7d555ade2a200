#pragma once

// Run manifest: a flat key=value snapshot of everything that determined a
// run's outputs. The manifest hash (timestamps excluded) names the run
// directory, so identical inputs land in the same place.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sdmamba/net.hpp"
#include "sdmamba/serialize.hpp"

namespace sdmamba {

inline constexpr const char* kArtifactVersion = "sdmamba-0.1.0";

struct RunManifest {
    SdmambaConfig config;
    std::uint64_t dataset_checksum = 0;
    std::string dataset_path;
    std::string command;
    std::string started_at; // informational only, excluded from the hash

    std::vector<std::pair<std::string, std::string>> entries(bool with_timestamps) const {
        char buf[64];
        std::vector<std::pair<std::string, std::string>> kv;
        auto add = [&](const char* k, const std::string& v) { kv.emplace_back(k, v); };
        auto addf = [&](const char* k, float v) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
            kv.emplace_back(k, buf);
        };
        add("artifact_version", kArtifactVersion);
        add("command", command);
        add("dataset", dataset_path);
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(dataset_checksum));
        add("dataset_checksum", buf);
        const auto& c = config;
        add("patch_size", std::to_string(c.patch_size));
        add("in_bands", std::to_string(c.in_bands));
        add("hidden_dim", std::to_string(c.hidden_dim));
        add("num_classes", std::to_string(c.num_classes));
        addf("lambda_spatial", c.lambda_spatial);
        addf("lambda_spectral", c.lambda_spectral);
        add("d_state", std::to_string(c.d_state));
        add("expand", std::to_string(c.expand));
        add("stem_kernel", std::to_string(c.stem_kernel));
        add("conv_kernel", std::to_string(c.conv_kernel));
        add("dt_rank", std::to_string(c.dt_rank));
        add("use_conv", c.use_conv ? "1" : "0");
        add("seed", std::to_string(c.seed));
        addf("learning_rate", c.learning_rate);
        add("batch_size", std::to_string(c.batch_size));
        add("epochs", std::to_string(c.epochs));
        addf("train_ratio", c.train_ratio);
        addf("val_ratio", c.val_ratio);
        if (with_timestamps) add("started_at", started_at);
        return kv;
    }

    std::string hash_hex() const {
        std::string flat;
        for (const auto& [k, v] : entries(false)) {
            flat += k;
            flat += '=';
            flat += v;
            flat += '\n';
        }
        std::uint64_t h = fnv1a(flat);
        char buf[24];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot open for writing: " + path);
        out << "manifest_hash=" << hash_hex() << "\n";
        for (const auto& [k, v] : entries(true)) out << k << "=" << v << "\n";
        if (!out) throw IoError("write failed: " + path);
    }

    static std::string now_string() {
        auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::tm tm{};
        gmtime_r(&t, &tm);
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }
};

} // namespace sdmamba
