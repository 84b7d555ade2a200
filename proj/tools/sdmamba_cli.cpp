// Command-line front end: synthetic cube generation, training, evaluation,
// full-scene prediction, FLOP reporting, and embedding export.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "sdmamba/flops.hpp"
#include "sdmamba/hsi.hpp"
#include "sdmamba/manifest.hpp"
#include "sdmamba/metrics.hpp"
#include "sdmamba/net.hpp"
#include "sdmamba/train.hpp"

namespace fs = std::filesystem;
using namespace sdmamba;

namespace {

// Flat key=value config file, keys named after the long flags. Values apply
// only where the flag was not given explicitly, so command-line flags win.
void apply_config_file(CLI::App* cmd, const std::string& path, SdmambaConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value");
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        auto given = [&](const char* flag) { return cmd->count(flag) > 0; };
        try {
            if (key == "patch") { if (!given("--patch")) cfg.patch_size = std::stoi(value); }
            else if (key == "hidden") { if (!given("--hidden")) cfg.hidden_dim = std::stoi(value); }
            else if (key == "lambda") {
                if (!given("--lambda")) {
                    if (!given("--lambda-spatial")) cfg.lambda_spatial = std::stof(value);
                    if (!given("--lambda-spectral")) cfg.lambda_spectral = std::stof(value);
                }
            }
            else if (key == "lambda-spatial") { if (!given("--lambda-spatial")) cfg.lambda_spatial = std::stof(value); }
            else if (key == "lambda-spectral") { if (!given("--lambda-spectral")) cfg.lambda_spectral = std::stof(value); }
            else if (key == "d-state") { if (!given("--d-state")) cfg.d_state = std::stoi(value); }
            else if (key == "expand") { if (!given("--expand")) cfg.expand = std::stoi(value); }
            else if (key == "stem-kernel") { if (!given("--stem-kernel")) cfg.stem_kernel = std::stoi(value); }
            else if (key == "conv-kernel") { if (!given("--conv-kernel")) cfg.conv_kernel = std::stoi(value); }
            else if (key == "dt-rank") { if (!given("--dt-rank")) cfg.dt_rank = std::stoi(value); }
            else if (key == "no-conv") { if (!given("--no-conv")) cfg.use_conv = !(value == "1" || value == "true"); }
            else if (key == "seed") { if (!given("--seed")) cfg.seed = std::stoull(value); }
            else if (key == "lr") { if (!given("--lr")) cfg.learning_rate = std::stof(value); }
            else if (key == "batch") { if (!given("--batch")) cfg.batch_size = std::stoi(value); }
            else if (key == "epochs") { if (!given("--epochs")) cfg.epochs = std::stoi(value); }
            else if (key == "train-ratio") { if (!given("--train-ratio")) cfg.train_ratio = std::stof(value); }
            else if (key == "val-ratio") { if (!given("--val-ratio")) cfg.val_ratio = std::stof(value); }
            else throw ConfigError("unknown config key '" + key + "' on line " + std::to_string(lineno));
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad value for '" + key + "' on config line " + std::to_string(lineno));
        } catch (const std::out_of_range&) {
            throw ConfigError("bad value for '" + key + "' on config line " + std::to_string(lineno));
        }
    }
}

void add_config_flags(CLI::App* cmd, SdmambaConfig& cfg, std::string& config_path) {
    cmd->add_option("--patch", cfg.patch_size, "patch size (odd)");
    cmd->add_option("--hidden", cfg.hidden_dim, "hidden feature dimension");
    cmd->add_option_function<float>(
        "--lambda",
        [&cfg](const float& v) {
            cfg.lambda_spatial = v;
            cfg.lambda_spectral = v;
        },
        "sparsity ratio for both branches");
    cmd->add_option("--lambda-spatial", cfg.lambda_spatial, "spatial sparsity ratio");
    cmd->add_option("--lambda-spectral", cfg.lambda_spectral, "spectral sparsity ratio");
    cmd->add_option("--d-state", cfg.d_state, "SSM state size");
    cmd->add_option("--expand", cfg.expand, "mamba expansion factor");
    cmd->add_option("--stem-kernel", cfg.stem_kernel, "stem conv kernel (odd)");
    cmd->add_option("--conv-kernel", cfg.conv_kernel, "mamba depthwise conv width");
    cmd->add_option("--dt-rank", cfg.dt_rank, "dt projection rank (0 = auto)");
    cmd->add_flag_function("--no-conv", [&cfg](std::int64_t) { cfg.use_conv = false; },
                           "disable the mamba conv branch");
    cmd->add_option("--seed", cfg.seed, "global seed");
    cmd->add_option("--lr", cfg.learning_rate, "learning rate");
    cmd->add_option("--batch", cfg.batch_size, "batch size");
    cmd->add_option("--epochs", cfg.epochs, "training epochs");
    cmd->add_option("--train-ratio", cfg.train_ratio, "stratified train fraction");
    cmd->add_option("--val-ratio", cfg.val_ratio, "stratified val fraction");
    cmd->add_option("--config", config_path, "flat key=value config file");
}

void print_report(const EvalReport& rep, const std::vector<std::string>& class_names) {
    std::printf("%-6s %-24s %10s %10s %10s\n", "class", "name", "test", "correct", "acc(%)");
    for (int k = 0; k < rep.num_classes; ++k) {
        std::uint64_t row = 0;
        for (int p = 0; p < rep.num_classes; ++p) row += rep.at(k, p);
        std::string name = k < static_cast<int>(class_names.size()) ? class_names[static_cast<size_t>(k)]
                                                                    : ("class-" + std::to_string(k + 1));
        if (rep.per_class_acc[static_cast<size_t>(k)] < 0.0) {
            std::printf("%-6d %-24s %10llu %10s %10s\n", k + 1, name.c_str(),
                        static_cast<unsigned long long>(row), "-", "-");
        } else {
            std::printf("%-6d %-24s %10llu %10llu %10.2f\n", k + 1, name.c_str(),
                        static_cast<unsigned long long>(row),
                        static_cast<unsigned long long>(rep.at(k, k)),
                        100.0 * rep.per_class_acc[static_cast<size_t>(k)]);
        }
    }
    std::printf("OA(%%)    %.2f\n", 100.0 * rep.oa);
    std::printf("AA(%%)    %.2f\n", 100.0 * rep.aa);
    std::printf("Kappa(%%) %.2f\n", 100.0 * rep.kappa);
    std::printf("FLOPs/sample (sparse, 2*MAC) %llu\n",
                static_cast<unsigned long long>(rep.flops_per_sample));
}

int cmd_synth(const std::string& out_path, int size, int bands, int classes, float noise,
              std::uint64_t seed) {
    HsiCube cube = synthesize_cube(size, bands, classes, noise, seed);
    for (int k = 1; k <= classes; ++k) cube.class_names.push_back("synthetic-" + std::to_string(k));
    save_cube(out_path, cube);
    std::printf("wrote %s: %dx%dx%d cube, %d classes\n", out_path.c_str(), cube.height,
                cube.width, cube.bands, cube.num_classes);
    return 0;
}

int cmd_train(const std::string& cube_path, const std::string& out_dir, SdmambaConfig cfg,
              bool verbose) {
    HsiCube cube = normalize(load_cube(cube_path));
    cfg.in_bands = cube.bands;
    cfg.num_classes = cube.num_classes;
    cfg.validate();

    RunManifest manifest;
    manifest.config = cfg;
    manifest.command = "train";
    manifest.dataset_path = cube_path;
    manifest.dataset_checksum = file_checksum(cube_path);
    manifest.started_at = RunManifest::now_string();

    fs::path run_dir = fs::path(out_dir) / manifest.hash_hex();
    fs::create_directories(run_dir);

    SampleSplit split = stratified_split(cube, cfg.train_ratio, cfg.val_ratio, cfg.seed);
    for (const auto& w : split.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    save_split((run_dir / "split.txt").string(), split);

    SdmambaModel model(cfg);
    TrainResult result = train(model, cube, split, verbose);
    save_checkpoint((run_dir / "checkpoint.sdmb").string(), model);
    save_history((run_dir / "history.txt").string(), result.history);
    manifest.save((run_dir / "manifest.txt").string());

    std::printf("run directory: %s\n", run_dir.string().c_str());
    std::printf("best val OA %.4f at epoch %d\n", result.best_val_oa, result.best_epoch);
    return 0;
}

int cmd_eval(const std::string& cube_path, const std::string& ckpt_path,
             const std::string& split_path, const std::string& subset) {
    HsiCube cube = normalize(load_cube(cube_path));
    SdmambaModel model = load_checkpoint(ckpt_path);
    std::vector<std::pair<int, int>> coords;
    if (!split_path.empty()) {
        SampleSplit split = load_split(split_path);
        if (subset == "train") coords = split.train;
        else if (subset == "val") coords = split.val;
        else coords = split.test;
    } else {
        const auto& cfg = model.config();
        SampleSplit split = stratified_split(cube, cfg.train_ratio, cfg.val_ratio, cfg.seed);
        coords = split.test;
    }
    EvalReport rep = evaluate(model, cube, coords);
    print_report(rep, cube.class_names);
    return 0;
}

// Full-scene label map over every labeled pixel; unlabeled pixels keep 0.
int cmd_predict(const std::string& cube_path, const std::string& ckpt_path,
                const std::string& out_path) {
    HsiCube cube = normalize(load_cube(cube_path));
    SdmambaModel model = load_checkpoint(ckpt_path);
    auto coords = cube.labeled_coords();
    const auto& cfg = model.config();
    std::vector<std::int32_t> map(static_cast<size_t>(cube.height) * cube.width, 0);
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
            map[static_cast<size_t>(batch_coords[i].first) * cube.width + batch_coords[i].second] =
                best + 1;
        }
    }
    // Same layout as the .hsc label block, with its own magic.
    BinaryWriter w(out_path);
    w.magic("HSCL");
    w.u32(static_cast<std::uint32_t>(cube.height));
    w.u32(static_cast<std::uint32_t>(cube.width));
    w.i32s(map);
    w.close();
    std::printf("wrote %s: %dx%d label map\n", out_path.c_str(), cube.height, cube.width);
    return 0;
}

int cmd_flops(SdmambaConfig cfg) {
    const float sweep[] = {0.05f, 0.1f, 0.3f, 0.5f, 0.7f, 1.0f};
    std::printf("%-10s %14s %14s %16s %16s\n", "lambda", "MACs(sparse)", "MACs(dense)",
                "FLOPs(sparse)", "FLOPs(dense)");
    for (float lambda : sweep) {
        cfg.lambda_spatial = lambda;
        cfg.lambda_spectral = lambda;
        FlopReport rep = count_flops(cfg);
        std::printf("%-10.2f %14llu %14llu %16llu %16llu\n", static_cast<double>(lambda),
                    static_cast<unsigned long long>(rep.sparse.total_macs()),
                    static_cast<unsigned long long>(rep.dense.total_macs()),
                    static_cast<unsigned long long>(rep.sparse.total_flops()),
                    static_cast<unsigned long long>(rep.dense.total_flops()));
    }
    return 0;
}

int cmd_export(const std::string& cube_path, const std::string& ckpt_path,
               const std::string& split_path, const std::string& subset,
               const std::string& out_path) {
    HsiCube cube = normalize(load_cube(cube_path));
    SdmambaModel model = load_checkpoint(ckpt_path);
    std::vector<std::pair<int, int>> coords;
    if (!split_path.empty()) {
        SampleSplit split = load_split(split_path);
        if (subset == "train") coords = split.train;
        else if (subset == "val") coords = split.val;
        else if (subset == "test") coords = split.test;
        else {
            coords = split.train;
            coords.insert(coords.end(), split.val.begin(), split.val.end());
            coords.insert(coords.end(), split.test.begin(), split.test.end());
        }
    } else {
        coords = cube.labeled_coords();
    }
    export_embeddings(model, cube, coords, out_path);
    std::printf("wrote %s: %zu embeddings of dim %d\n", out_path.c_str(), coords.size(),
                model.config().hidden_dim);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SDMamba hyperspectral classifier"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic .hsc fixture");
    std::string synth_out = "synth.hsc";
    int synth_size = 16, synth_bands = 8, synth_classes = 3;
    float synth_noise = 0.05f;
    std::uint64_t synth_seed = 7;
    synth->add_option("--out", synth_out, "output path");
    synth->add_option("--size", synth_size, "cube height/width");
    synth->add_option("--bands", synth_bands, "spectral bands");
    synth->add_option("--classes", synth_classes, "class count");
    synth->add_option("--noise", synth_noise, "noise sigma");
    synth->add_option("--seed", synth_seed, "seed");

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    std::string tr_cube, tr_out = "runs", tr_config;
    bool tr_verbose = false;
    SdmambaConfig tr_cfg;
    tr->add_option("--cube", tr_cube, "input .hsc cube")->required();
    tr->add_option("--out", tr_out, "output directory root");
    tr->add_flag("--verbose", tr_verbose, "per-epoch progress on stderr");
    add_config_flags(tr, tr_cfg, tr_config);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_cube, ev_ckpt, ev_split, ev_subset = "test";
    ev->add_option("--cube", ev_cube, "input .hsc cube")->required();
    ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    ev->add_option("--split", ev_split, "split file (default: rebuild from checkpoint config)");
    ev->add_option("--subset", ev_subset, "train|val|test");

    // predict
    auto* pr = app.add_subcommand("predict", "write a full-scene label map");
    std::string pr_cube, pr_ckpt, pr_out = "map.hscl";
    pr->add_option("--cube", pr_cube, "input .hsc cube")->required();
    pr->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required();
    pr->add_option("--out", pr_out, "output label map path");

    // flops
    auto* fl = app.add_subcommand("flops", "print the sparsity/FLOP sweep");
    SdmambaConfig fl_cfg;
    std::string fl_config;
    int fl_bands = 200, fl_classes = 16;
    fl->add_option("--bands", fl_bands, "input bands");
    fl->add_option("--classes", fl_classes, "class count");
    add_config_flags(fl, fl_cfg, fl_config);

    // export
    auto* ex = app.add_subcommand("export", "export fused feature embeddings");
    std::string ex_cube, ex_ckpt, ex_split, ex_subset = "all", ex_out = "embeddings.txt";
    ex->add_option("--cube", ex_cube, "input .hsc cube")->required();
    ex->add_option("--checkpoint", ex_ckpt, "model checkpoint")->required();
    ex->add_option("--split", ex_split, "optional split file");
    ex->add_option("--subset", ex_subset, "train|val|test|all");
    ex->add_option("--out", ex_out, "output path");

    try {
        app.parse(argc, argv);
        if (synth->parsed())
            return cmd_synth(synth_out, synth_size, synth_bands, synth_classes, synth_noise,
                             synth_seed);
        if (tr->parsed()) {
            if (!tr_config.empty()) apply_config_file(tr, tr_config, tr_cfg);
            return cmd_train(tr_cube, tr_out, tr_cfg, tr_verbose);
        }
        if (ev->parsed()) return cmd_eval(ev_cube, ev_ckpt, ev_split, ev_subset);
        if (pr->parsed()) return cmd_predict(pr_cube, pr_ckpt, pr_out);
        if (fl->parsed()) {
            if (!fl_config.empty()) apply_config_file(fl, fl_config, fl_cfg);
            fl_cfg.in_bands = fl_bands;
            fl_cfg.num_classes = fl_classes;
            return cmd_flops(fl_cfg);
        }
        if (ex->parsed()) return cmd_export(ex_cube, ex_ckpt, ex_split, ex_subset, ex_out);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
