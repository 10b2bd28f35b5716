#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sam2b/cli.hpp"

using namespace sam2b;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path operator/(const std::string& p) const { return path / p; }
};

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                fields.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        fields.push_back(cur);
        rows.push_back(fields);
    }
    return rows;
}

// Small scenario: fast to generate and to train on.
const char* kSmallConfig = R"(
channel.M = 8
channel.K = 4
channel.Q = 16
channel.L = 2
trajectory.duration = 60
trajectory.step = 1
camera.width = 16
camera.height = 16
camera.focal_px = 8
data.seed = 42

train.epochs = 2
train.batch_size = 8
train.seed = 7
model.embed_dim = 16
model.heads = 4
model.vec_hidden = 16
model.img_hidden = 8
model.score_hidden = 8
ablate.variants = gps_only, fixed_weight
)";

}  // namespace

TEST_CASE("gen writes a loadable dataset plus manifest and resolved config", "[cli]") {
    TempDir dir("sam2b_cli_gen");
    write_file(dir / "cfg.txt", kSmallConfig);
    const auto ds_path = dir / "data.ds";
    REQUIRE(cli::run({"gen", "--config", (dir / "cfg.txt").string(), "--out", ds_path.string()}) ==
            cli::kExitOk);
    REQUIRE(fs::exists(ds_path));
    REQUIRE(fs::exists(dir / "data.ds.manifest.txt"));
    REQUIRE(fs::exists(dir / "data.ds.config.txt"));
    Dataset ds = load_dataset(ds_path);
    CHECK(ds.samples.size() == 60);
    CHECK(ds.num_beams() == 16);
}

TEST_CASE("gen is byte-identical for one seed and differs across seeds", "[cli]") {
    TempDir dir("sam2b_cli_det");
    write_file(dir / "cfg.txt", kSmallConfig);
    auto run_gen = [&](const std::string& name, const std::string& seed) {
        std::vector<std::string> args{"gen", "--config", (dir / "cfg.txt").string(), "--out",
                                      (dir / name).string()};
        if (!seed.empty()) {
            args.push_back("--seed");
            args.push_back(seed);
        }
        REQUIRE(cli::run(args) == cli::kExitOk);
        return read_file(dir / name);
    };
    const std::string a = run_gen("a.ds", "");
    const std::string b = run_gen("b.ds", "");
    CHECK(a == b);
    const std::string c = run_gen("c.ds", "1234");
    CHECK(a != c);
}

TEST_CASE("a lateral sweep trajectory covers most beams", "[cli]") {
    TempDir dir("sam2b_cli_sweep");
    std::string cfg = R"(
channel.M = 16
channel.K = 4
channel.Q = 32
channel.L = 0
channel.rician_K_dB = 300
channel.delay_spread = 0
trajectory.duration = 400
trajectory.step = 1
trajectory.speed_min = 6
trajectory.speed_max = 6
trajectory.waypoints = 8,-60,3; 8,60,3; 8,-60,12; 8,60,12
trajectory.posture_jitter = 0
camera.width = 8
camera.height = 8
data.seed = 5
)";
    write_file(dir / "cfg.txt", cfg);
    const auto ds_path = dir / "sweep.ds";
    REQUIRE(cli::run({"gen", "--config", (dir / "cfg.txt").string(), "--out", ds_path.string()}) ==
            cli::kExitOk);
    Dataset ds = load_dataset(ds_path);
    std::vector<bool> seen(ds.num_beams(), false);
    for (const Sample& s : ds.samples) seen[s.label] = true;
    std::size_t covered = 0;
    for (bool b : seen) covered += b;
    CHECK(static_cast<double>(covered) / static_cast<double>(ds.num_beams()) > 0.8);
}

TEST_CASE("train writes checkpoint, metrics, curve and resolved config", "[cli]") {
    TempDir dir("sam2b_cli_train");
    write_file(dir / "cfg.txt", kSmallConfig);
    const auto ds_path = dir / "data.ds";
    REQUIRE(cli::run({"gen", "--config", (dir / "cfg.txt").string(), "--out", ds_path.string()}) ==
            cli::kExitOk);
    const auto out = dir / "run";
    REQUIRE(cli::run({"train", "--config", (dir / "cfg.txt").string(), "--dataset",
                      ds_path.string(), "--out", out.string(), "--variant", "gps_only"}) ==
            cli::kExitOk);
    REQUIRE(fs::exists(out / "checkpoint.bin"));
    REQUIRE(fs::exists(out / "config.resolved.txt"));
    REQUIRE(fs::exists(out / "run.log"));

    const auto metrics = parse_csv(read_file(out / "metrics.csv"));
    REQUIRE(metrics.size() == 2);
    CHECK(metrics[0] == std::vector<std::string>{"variant", "top1", "top2", "top3"});
    CHECK(metrics[1][0] == "gps_only");

    const auto curve = parse_csv(read_file(out / "curve.csv"));
    REQUIRE(curve.size() == 3);  // header + one row per epoch
    CHECK(curve[0] == std::vector<std::string>{"epoch", "loss", "top1"});
}

TEST_CASE("training outputs are idempotent apart from the log", "[cli]") {
    TempDir dir("sam2b_cli_idem");
    write_file(dir / "cfg.txt", kSmallConfig);
    const auto ds_path = dir / "data.ds";
    REQUIRE(cli::run({"gen", "--config", (dir / "cfg.txt").string(), "--out", ds_path.string()}) ==
            cli::kExitOk);
    for (const char* out : {"r1", "r2"})
        REQUIRE(cli::run({"train", "--config", (dir / "cfg.txt").string(), "--dataset",
                          ds_path.string(), "--out", (dir / out).string(), "--variant",
                          "gps_only"}) == cli::kExitOk);
    CHECK(read_file(dir / "r1/metrics.csv") == read_file(dir / "r2/metrics.csv"));
    CHECK(read_file(dir / "r1/curve.csv") == read_file(dir / "r2/curve.csv"));
    CHECK(read_file(dir / "r1/checkpoint.bin") == read_file(dir / "r2/checkpoint.bin"));
    CHECK(read_file(dir / "r1/config.resolved.txt") == read_file(dir / "r2/config.resolved.txt"));
}

TEST_CASE("eval reproduces the training metrics from the checkpoint", "[cli]") {
    TempDir dir("sam2b_cli_eval");
    write_file(dir / "cfg.txt", kSmallConfig);
    const auto ds_path = dir / "data.ds";
    REQUIRE(cli::run({"gen", "--config", (dir / "cfg.txt").string(), "--out", ds_path.string()}) ==
            cli::kExitOk);
    const auto out = dir / "run";
    REQUIRE(cli::run({"train", "--config", (dir / "cfg.txt").string(), "--dataset",
                      ds_path.string(), "--out", out.string(), "--variant", "gps_only"}) ==
            cli::kExitOk);
    REQUIRE(cli::run({"eval", "--checkpoint", (out / "checkpoint.bin").string(), "--dataset",
                      ds_path.string(), "--out", (dir / "eval.csv").string()}) == cli::kExitOk);
    CHECK(read_file(dir / "eval.csv") == read_file(out / "metrics.csv"));

    // Cross-variant expectation is rejected.
    CHECK(cli::run({"eval", "--checkpoint", (out / "checkpoint.bin").string(), "--dataset",
                    ds_path.string(), "--variant", "sam2b"}) == cli::kExitConfig);
}

TEST_CASE("ablate emits one row per variant and reproduces across runs", "[cli]") {
    TempDir dir("sam2b_cli_ablate");
    write_file(dir / "cfg.txt", kSmallConfig);
    const auto ds_path = dir / "data.ds";
    REQUIRE(cli::run({"gen", "--config", (dir / "cfg.txt").string(), "--out", ds_path.string()}) ==
            cli::kExitOk);
    for (const char* out : {"a1", "a2"})
        REQUIRE(cli::run({"ablate", "--config", (dir / "cfg.txt").string(), "--dataset",
                          ds_path.string(), "--out", (dir / out).string()}) == cli::kExitOk);
    const auto table = parse_csv(read_file(dir / "a1/ablation.csv"));
    REQUIRE(table.size() == 3);  // header + 2 variants
    CHECK(table[0][0] == "variant");
    CHECK(table[1][0] == "gps_only");
    CHECK(table[2][0] == "fixed_weight");
    CHECK(table[1][1] == "ok");
    CHECK(read_file(dir / "a1/ablation.csv") == read_file(dir / "a2/ablation.csv"));
}

TEST_CASE("inspect-weights writes simplex rows for every test sample", "[cli]") {
    TempDir dir("sam2b_cli_weights");
    write_file(dir / "cfg.txt", kSmallConfig);
    const auto ds_path = dir / "data.ds";
    REQUIRE(cli::run({"gen", "--config", (dir / "cfg.txt").string(), "--out", ds_path.string()}) ==
            cli::kExitOk);
    const auto out = dir / "run";
    REQUIRE(cli::run({"train", "--config", (dir / "cfg.txt").string(), "--dataset",
                      ds_path.string(), "--out", out.string(), "--variant", "sam2b"}) ==
            cli::kExitOk);
    REQUIRE(cli::run({"inspect-weights", "--checkpoint", (out / "checkpoint.bin").string(),
                      "--dataset", ds_path.string(), "--out", (dir / "w.csv").string()}) ==
            cli::kExitOk);
    const auto rows = parse_csv(read_file(dir / "w.csv"));
    const Dataset ds = load_dataset(ds_path);
    const auto test_size = ds.samples.size() - ds.split_index();
    REQUIRE(rows.size() == 1 + test_size);
    REQUIRE(rows[0].size() == 5 + 12);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        double sum = 0.0;
        for (std::size_t c = 1; c <= 4; ++c) sum += std::stod(rows[i][c]);
        CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("inspect-weights rejects variants without dynamic weights", "[cli]") {
    TempDir dir("sam2b_cli_weights_fixed");
    write_file(dir / "cfg.txt", kSmallConfig);
    const auto ds_path = dir / "data.ds";
    REQUIRE(cli::run({"gen", "--config", (dir / "cfg.txt").string(), "--out", ds_path.string()}) ==
            cli::kExitOk);
    const auto out = dir / "run";
    REQUIRE(cli::run({"train", "--config", (dir / "cfg.txt").string(), "--dataset",
                      ds_path.string(), "--out", out.string(), "--variant", "fixed_weight"}) ==
            cli::kExitOk);
    CHECK(cli::run({"inspect-weights", "--checkpoint", (out / "checkpoint.bin").string(),
                    "--dataset", ds_path.string(), "--out", (dir / "w.csv").string()}) ==
          cli::kExitConfig);
}

TEST_CASE("exit codes distinguish config, io and training failures", "[cli]") {
    TempDir dir("sam2b_cli_exit");

    // Unknown config key -> config error.
    write_file(dir / "bad.txt", "channel.M = 8\nnot.a.key = 1\n");
    CHECK(cli::run({"gen", "--config", (dir / "bad.txt").string(), "--out",
                    (dir / "x.ds").string()}) == cli::kExitConfig);

    // Missing files -> io error.
    write_file(dir / "cfg.txt", kSmallConfig);
    CHECK(cli::run({"train", "--config", (dir / "cfg.txt").string(), "--dataset",
                    (dir / "missing.ds").string(), "--out", (dir / "o").string()}) ==
          cli::kExitIo);
    CHECK(cli::run({"gen", "--config", (dir / "nope.txt").string(), "--out",
                    (dir / "x.ds").string()}) == cli::kExitIo);

    // Diverging training -> training error.
    const auto ds_path = dir / "data.ds";
    REQUIRE(cli::run({"gen", "--config", (dir / "cfg.txt").string(), "--out", ds_path.string()}) ==
            cli::kExitOk);
    std::string diverge(kSmallConfig);
    diverge += "\ntrain.lr = 1e200\ntrain.epochs = 12\n";
    write_file(dir / "diverge.txt", diverge);
    CHECK(cli::run({"train", "--config", (dir / "diverge.txt").string(), "--dataset",
                    ds_path.string(), "--out", (dir / "d").string(), "--variant", "gps_only"}) ==
          cli::kExitTraining);

    // Bad verb / missing required flags -> config error.
    CHECK(cli::run({"frobnicate"}) == cli::kExitConfig);
    CHECK(cli::run({"gen"}) == cli::kExitConfig);
}
