#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sam2b/config.hpp"
#include "sam2b/csv.hpp"
#include "sam2b/dataset.hpp"
#include "sam2b/trainer.hpp"

namespace sam2b::cli {

// Distinct exit codes per failure class.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitTraining = 4;

namespace detail {

// Wall-clock timestamps are confined to the run log so every other output
// stays byte-identical across reruns.
inline std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

class RunLog {
public:
    explicit RunLog(const std::filesystem::path& path) : f_(path) {
        if (!f_) throw IoError("cannot open log '" + path.string() + "'");
    }
    void line(const std::string& msg) { f_ << "[" << timestamp() << "] " << msg << "\n"; }

private:
    std::ofstream f_;
};

inline csv::Writer metrics_csv(const std::string& variant, const Metrics& m) {
    csv::Writer w;
    w.row({"variant", "top1", "top2", "top3"});
    w.row({variant, csv::num(m.top1), csv::num(m.top2), csv::num(m.top3)});
    return w;
}

inline csv::Writer curve_csv(const std::vector<EpochLog>& curve) {
    csv::Writer w;
    w.row({"epoch", "loss", "top1"});
    for (const EpochLog& e : curve)
        w.row({csv::num(static_cast<std::uint64_t>(e.epoch)), csv::num(e.loss),
               csv::num(e.test_top1)});
    return w;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Verbs
// ---------------------------------------------------------------------------

inline int cmd_gen(const std::filesystem::path& config_path, const std::filesystem::path& out,
                   std::optional<std::uint64_t> seed_override) {
    ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
    if (seed_override) cfg.generation.seed = *seed_override;
    const Dataset ds = build_dataset(cfg.generation);
    save_dataset(ds, out);
    cfg.write_resolved(out.string() + ".config.txt");

    std::vector<std::size_t> hist(ds.num_beams(), 0);
    for (const Sample& s : ds.samples) ++hist[s.label];
    std::size_t covered = 0;
    for (std::size_t c : hist) covered += c > 0;
    std::cout << "dataset: " << out.string() << "\n"
              << "samples: " << ds.samples.size() << "\n"
              << "beams: " << ds.num_beams() << "\n"
              << "labels_covered: " << covered << "\n"
              << "label_histogram:";
    for (std::size_t c : hist) std::cout << " " << c;
    std::cout << "\n";
    return kExitOk;
}

inline int cmd_train(const std::filesystem::path& config_path,
                     const std::filesystem::path& dataset_path,
                     const std::filesystem::path& out_dir,
                     std::optional<std::uint64_t> seed_override,
                     std::optional<std::string> variant_override) {
    ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
    if (seed_override) cfg.train.seed = *seed_override;
    if (variant_override) cfg.train.model.variant = variant_from_name(*variant_override);
    const Dataset ds = load_dataset(dataset_path);

    std::filesystem::create_directories(out_dir);
    detail::RunLog log(out_dir / "run.log");
    log.line("train start: dataset=" + dataset_path.string() +
             " variant=" + variant_name(cfg.train.model.variant));

    TrainResult res = train(ds, cfg.train);
    for (const EpochLog& e : res.curve)
        log.line("epoch " + std::to_string(e.epoch) + " loss=" + csv::num(e.loss) +
                 " top1=" + csv::num(e.test_top1));

    save_checkpoint(res.params, out_dir / "checkpoint.bin");
    detail::metrics_csv(variant_name(cfg.train.model.variant), res.metrics)
        .write(out_dir / "metrics.csv");
    detail::curve_csv(res.curve).write(out_dir / "curve.csv");
    cfg.write_resolved(out_dir / "config.resolved.txt");
    log.line("train done: top1=" + csv::num(res.metrics.top1));

    std::cout << "variant=" << variant_name(cfg.train.model.variant)
              << " top1=" << csv::num(res.metrics.top1) << " top2=" << csv::num(res.metrics.top2)
              << " top3=" << csv::num(res.metrics.top3) << "\n";
    return kExitOk;
}

inline int cmd_eval(const std::filesystem::path& checkpoint_path,
                    const std::filesystem::path& dataset_path,
                    std::optional<std::filesystem::path> out,
                    std::optional<std::string> expected_variant) {
    std::optional<Variant> expect;
    if (expected_variant) expect = variant_from_name(*expected_variant);
    ModelParams params = load_checkpoint(checkpoint_path, expect);
    const Dataset ds = load_dataset(dataset_path);
    const Split split = split_dataset(ds, ds.config.split_fraction);
    const Metrics m = evaluate(params, split.test);
    csv::Writer w = detail::metrics_csv(variant_name(params.config.variant), m);
    std::cout << w.text();
    if (out) w.write(*out);
    return kExitOk;
}

inline int cmd_ablate(const std::filesystem::path& config_path,
                      const std::filesystem::path& dataset_path,
                      const std::filesystem::path& out_dir,
                      std::optional<std::uint64_t> seed_override) {
    ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
    if (seed_override) cfg.train.seed = *seed_override;
    const Dataset ds = load_dataset(dataset_path);

    std::filesystem::create_directories(out_dir);
    detail::RunLog log(out_dir / "run.log");

    csv::Writer table;
    table.row({"variant", "status", "top1", "top2", "top3", "top1_clean", "top2_clean",
               "top3_clean", "top1_degraded", "top2_degraded", "top3_degraded"});
    for (Variant v : cfg.ablate_variants) {
        TrainConfig tc = cfg.train;
        tc.model.variant = v;
        log.line(std::string("ablate variant ") + variant_name(v));
        try {
            TrainResult res = train(ds, tc);
            const Metrics& m = res.metrics;
            table.row({variant_name(v), "ok", csv::num(m.top1), csv::num(m.top2),
                       csv::num(m.top3), csv::num(m.topk_clean[0]), csv::num(m.topk_clean[1]),
                       csv::num(m.topk_clean[2]), csv::num(m.topk_degraded[0]),
                       csv::num(m.topk_degraded[1]), csv::num(m.topk_degraded[2])});
        } catch (const Error& e) {
            log.line(std::string("variant ") + variant_name(v) + " failed: " + e.what());
            table.row({variant_name(v), "failed", "", "", "", "", "", "", "", "", ""});
        }
    }
    table.write(out_dir / "ablation.csv");
    cfg.write_resolved(out_dir / "config.resolved.txt");
    std::cout << table.text();
    return kExitOk;
}

inline int cmd_inspect_weights(const std::filesystem::path& checkpoint_path,
                               const std::filesystem::path& dataset_path,
                               const std::filesystem::path& out) {
    ModelParams params = load_checkpoint(checkpoint_path);
    if (!variant_dynamic_weights(params.config.variant))
        throw ConfigError(std::string("variant '") + variant_name(params.config.variant) +
                          "' has no dynamic weights to inspect");
    const Dataset ds = load_dataset(dataset_path);
    const Split split = split_dataset(ds, ds.config.split_fraction);
    const auto active = active_modalities(params.config.variant);

    csv::Writer w;
    std::vector<std::string> header{"time", "w_img", "w_gps", "w_hd", "w_pos"};
    for (const char* name : kModalityNames) {
        header.push_back(std::string("deg_") + name + "_level");
        header.push_back(std::string("deg_") + name + "_staleness");
        header.push_back(std::string("deg_") + name + "_valid");
    }
    w.row(header);

    constexpr std::size_t kBatch = 64;
    for (std::size_t start = 0; start < split.test.size(); start += kBatch) {
        const std::size_t bsz = std::min(kBatch, split.test.size() - start);
        std::vector<const Sample*> batch(bsz);
        for (std::size_t i = 0; i < bsz; ++i) batch[i] = &split.test[start + i];
        ad::Tape tape;
        BatchForward fwd = model_forward(tape, params, batch, /*want_diagnostics=*/true);
        for (std::size_t i = 0; i < bsz; ++i) {
            const Sample& s = *batch[i];
            std::array<double, kModalityCount> slots{};
            for (std::size_t mi = 0; mi < active.size(); ++mi)
                slots[static_cast<std::size_t>(active[mi])] = fwd.weights[i].w[mi];
            std::vector<std::string> row{csv::num(s.time), csv::num(slots[0]), csv::num(slots[1]),
                                         csv::num(slots[2]), csv::num(slots[3])};
            for (std::size_t m = 0; m < kModalityCount; ++m)
                for (std::size_t d = 0; d < 3; ++d) row.push_back(csv::num(s.truth.levels[m][d]));
            w.row(row);
        }
    }
    w.write(out);
    std::cout << "rows: " << split.test.size() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Argument parsing and error-to-exit-code mapping
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args) {
    CLI::App app{"Synthetic UAV mmWave scenario lab and reliability-aware "
                 "multi-modal beam prediction"};
    app.require_subcommand(1);

    std::string config_path, dataset_path, out_path, checkpoint_path, variant;
    std::optional<std::uint64_t> seed;

    auto* gen = app.add_subcommand("gen", "Generate a labeled multi-modal dataset");
    gen->add_option("--config", config_path, "experiment config file")->required();
    gen->add_option("--out", out_path, "output dataset file")->required();
    gen->add_option("--seed", seed, "override data.seed");

    auto* tr = app.add_subcommand("train", "Train a model variant on a dataset");
    tr->add_option("--config", config_path, "experiment config file")->required();
    tr->add_option("--dataset", dataset_path, "dataset file")->required();
    tr->add_option("--out", out_path, "output directory")->required();
    tr->add_option("--seed", seed, "override train.seed");
    tr->add_option("--variant", variant, "override model.variant");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset's test split");
    ev->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    ev->add_option("--dataset", dataset_path, "dataset file")->required();
    ev->add_option("--out", out_path, "optional metrics.csv path");
    ev->add_option("--variant", variant, "expected variant (cross-check)");

    auto* ab = app.add_subcommand("ablate", "Train every configured variant under one seed");
    ab->add_option("--config", config_path, "experiment config file")->required();
    ab->add_option("--dataset", dataset_path, "dataset file")->required();
    ab->add_option("--out", out_path, "output directory")->required();
    ab->add_option("--seed", seed, "override train.seed");

    auto* iw = app.add_subcommand("inspect-weights",
                                  "Per-sample fusion weights vs. injected degradation");
    iw->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    iw->add_option("--dataset", dataset_path, "dataset file")->required();
    iw->add_option("--out", out_path, "output weights.csv path")->required();

    std::vector<const char*> argv;
    argv.push_back("sam2b");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        auto opt_variant = variant.empty() ? std::nullopt : std::optional<std::string>(variant);
        if (gen->parsed()) return cmd_gen(config_path, out_path, seed);
        if (tr->parsed()) return cmd_train(config_path, dataset_path, out_path, seed, opt_variant);
        if (ev->parsed())
            return cmd_eval(checkpoint_path, dataset_path,
                            out_path.empty() ? std::nullopt
                                             : std::optional<std::filesystem::path>(out_path),
                            opt_variant);
        if (ab->parsed()) return cmd_ablate(config_path, dataset_path, out_path, seed);
        if (iw->parsed()) return cmd_inspect_weights(checkpoint_path, dataset_path, out_path);
    } catch (const TrainingError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return kExitTraining;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}

}  // namespace sam2b::cli
