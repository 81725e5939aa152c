// End-to-end checks of the command-line binary: exit codes, on-disk outputs,
// and byte-level determinism of every subcommand, plus library-level tests of
// the batched mask predictor and the patch scorer.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "mvprior/checkpoint.hpp"
#include "mvprior/common.hpp"
#include "mvprior/dataprep.hpp"
#include "mvprior/eval.hpp"
#include "mvprior/gaussian.hpp"
#include "mvprior/network.hpp"

namespace fs = std::filesystem;
using namespace mvprior;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("mvprior_cli_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str(const std::string& sub = "") const {
        return (sub.empty() ? path : path / sub).string();
    }
};

struct CmdResult {
    int code = -1;
    std::string output;  // stdout and stderr, merged
};

CmdResult run_cli(const std::string& args, const fs::path& scratch) {
    static int counter = 0;
    const fs::path log = scratch / ("cmd_out_" + std::to_string(counter++) + ".txt");
    const std::string cmd = std::string(MVPRIOR_CLI_PATH) + " " + args + " > " +
                            log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    CmdResult res;
    res.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream in(log, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    res.output = ss.str();
    return res;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Relative path -> file bytes for every regular file under root.
std::map<std::string, std::string> tree_snapshot(const fs::path& root) {
    std::map<std::string, std::string> snap;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) {
            snap[fs::relative(e.path(), root).string()] = read_file(e.path());
        }
    }
    return snap;
}

std::vector<std::string> csv_lines(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

double first_column(const std::string& csv_row) {
    return std::stod(csv_row.substr(0, csv_row.find(',')));
}

// Lexicographically first file under root with the given extension.
fs::path first_file_with_extension(const fs::path& root, const std::string& ext) {
    std::vector<fs::path> hits;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file() && e.path().extension() == ext) {
            hits.push_back(e.path());
        }
    }
    REQUIRE(!hits.empty());
    std::sort(hits.begin(), hits.end());
    return hits.front();
}

// 4 train + 2 val clips of 3 frames at 48x48; small but enough for every
// subcommand downstream.
void make_small_dataset(const fs::path& dir, const fs::path& scratch,
                        int seed = 5) {
    const CmdResult r = run_cli("synth --seed " + std::to_string(seed) +
                                    " --sequences 4 --val 2 --len 3" +
                                    " --dims 48x48 --out " + dir.string(),
                                scratch);
    REQUIRE(r.code == 0);
}

std::string small_train_args(const std::string& data, const std::string& out) {
    return "train --data " + data + " --out " + out +
           " --variant plain --patch 16 --batch 4 --steps 8 --cycle 4"
           " --val-interval 4 --seed 3";
}

}  // namespace

TEST_CASE("cli prints help and rejects bad invocations") {
    TempDir td;
    const CmdResult help = run_cli("--help", td.path);
    CHECK(help.code == 0);
    CHECK(help.output.find("synth") != std::string::npos);
    CHECK(help.output.find("train") != std::string::npos);

    CHECK(run_cli("", td.path).code == 1);                        // no subcommand
    CHECK(run_cli("--definitely-not-a-flag", td.path).code == 1); // unknown flag
    CHECK(run_cli("synth", td.path).code == 1);                   // missing --out
    CHECK(run_cli("synth --out " + td.str("d") + " --dims 12xx --sequences 1",
                  td.path)
              .code == 1);  // malformed dims
}

TEST_CASE("cli synth is byte-deterministic per seed and sensitive to the seed") {
    TempDir td;
    make_small_dataset(td.path / "a", td.path);
    make_small_dataset(td.path / "b", td.path);
    make_small_dataset(td.path / "c", td.path, /*seed=*/6);

    const auto snap_a = tree_snapshot(td.path / "a");
    CHECK(snap_a == tree_snapshot(td.path / "b"));
    CHECK(snap_a != tree_snapshot(td.path / "c"));
    CHECK(snap_a.count("manifest.json") == 1);

    const LoadedDataset ds = load_dataset(td.str("a"));
    CHECK(ds.train.size() == 4);
    CHECK(ds.val.size() == 2);
    CHECK(ds.dims.w == 48);
    CHECK(ds.dims.h == 48);
    for (const auto& seq : ds.train) CHECK(seq.masks.frames.size() == 3);

    // Zero clips is a valid (empty) dataset.
    const CmdResult empty = run_cli(
        "synth --sequences 0 --val 0 --len 2 --out " + td.str("e"), td.path);
    CHECK(empty.code == 0);
    CHECK(fs::exists(td.path / "e" / "manifest.json"));
    CHECK(load_dataset(td.str("e")).train.empty());
}

TEST_CASE("cli analyze emits a 5-variable gaussian on stdout and to --out") {
    TempDir td;
    make_small_dataset(td.path / "data", td.path);

    const CmdResult r = run_cli("analyze --data " + td.str("data"), td.path);
    REQUIRE(r.code == 0);
    const nlohmann::json j = nlohmann::json::parse(r.output);
    CHECK(j.at("k").get<int>() == 5);
    REQUIRE(j.at("mu").size() == 5);
    REQUIRE(j.at("sigma").size() == 5);
    for (int i = 0; i < 5; ++i) {
        CHECK(std::isfinite(j["mu"][i].get<double>()));
        CHECK(j["sigma"][i][i].get<double>() > 0.0);
    }

    const CmdResult r2 = run_cli("analyze --data " + td.str("data") + " --out " +
                                     td.str("prior.json"),
                                 td.path);
    REQUIRE(r2.code == 0);
    const GaussianND g = load_gaussian(td.str("prior.json"));
    CHECK(g.k() == 5);
    for (int i = 0; i < 5; ++i) {
        CHECK(g.mu(i) == doctest::Approx(j["mu"][i].get<double>()).epsilon(1e-12));
    }
}

TEST_CASE("cli analyze fails with the offending path on unreadable frames") {
    TempDir td;
    make_small_dataset(td.path / "data", td.path);
    const fs::path victim = first_file_with_extension(td.path / "data", ".pgm");
    {
        std::ofstream out(victim, std::ios::binary | std::ios::trunc);
        out << "this is not image data\n";
    }
    const CmdResult r = run_cli("analyze --data " + td.str("data"), td.path);
    CHECK(r.code == 2);
    CHECK(r.output.find(victim.filename().string()) != std::string::npos);
}

TEST_CASE("cli train writes step and validation logs plus a loadable checkpoint") {
    TempDir td;
    make_small_dataset(td.path / "data", td.path);
    const CmdResult r =
        run_cli(small_train_args(td.str("data"), td.str("run1")), td.path);
    REQUIRE(r.code == 0);

    const auto train_rows = csv_lines(td.path / "run1" / "train.csv");
    REQUIRE(train_rows.size() == 9);  // header + one row per step
    CHECK(train_rows[0].rfind("step,", 0) == 0);
    for (int i = 1; i <= 8; ++i) {
        CHECK(first_column(train_rows[i]) == doctest::Approx(i - 1));
    }

    const auto val_rows = csv_lines(td.path / "run1" / "val.csv");
    REQUIRE(val_rows.size() == 4);  // header + steps 0, 4, 8
    CHECK(val_rows[0].rfind("step,", 0) == 0);
    CHECK(first_column(val_rows[1]) == doctest::Approx(0));
    CHECK(first_column(val_rows[2]) == doctest::Approx(4));
    CHECK(first_column(val_rows[3]) == doctest::Approx(8));

    const Checkpoint ck = load_checkpoint(td.str("run1") + "/checkpoint.ckpt");
    CHECK(ck.step == 8);
    CHECK(ck.seed == 3);
    CHECK(ck.config.variant == Variant::Plain);
    CHECK(ck.config.patch == 16);
    CHECK(ck.params.total_size() > 0);

    // Re-running the identical configuration reproduces every output byte.
    REQUIRE(run_cli(small_train_args(td.str("data"), td.str("run2")), td.path)
                .code == 0);
    for (const char* name : {"train.csv", "val.csv", "checkpoint.ckpt"}) {
        CHECK(read_file(td.path / "run1" / name) ==
              read_file(td.path / "run2" / name));
    }
}

TEST_CASE("cli train handles the skip-connection variant and bad inputs") {
    TempDir td;
    make_small_dataset(td.path / "data", td.path);
    const CmdResult r = run_cli("train --data " + td.str("data") + " --out " +
                                    td.str("run_u") +
                                    " --variant unet --patch 16 --batch 4"
                                    " --steps 4 --cycle 4 --val-interval 4"
                                    " --seed 3",
                                td.path);
    REQUIRE(r.code == 0);
    const Checkpoint ck = load_checkpoint(td.str("run_u") + "/checkpoint.ckpt");
    CHECK(ck.step == 4);
    CHECK(ck.config.variant == Variant::Unet);
    CHECK(csv_lines(td.path / "run_u" / "val.csv").size() == 3);  // header + 0, 4

    CHECK(run_cli("train --data " + td.str("nowhere") + " --out " + td.str("x"),
                  td.path)
              .code == 2);  // dataset directory does not exist
    CHECK(run_cli("train --data " + td.str("data") + " --out " + td.str("y") +
                      " --variant sideways",
                  td.path)
              .code == 1);  // unknown variant name
}

TEST_CASE("cli eval scores every requested frame and dumps winner masks") {
    TempDir td;
    make_small_dataset(td.path / "data", td.path);
    REQUIRE(run_cli(small_train_args(td.str("data"), td.str("run1")), td.path)
                .code == 0);

    const std::string eval_args = "eval --checkpoint " + td.str("run1") +
                                  "/checkpoint.ckpt --data " + td.str("data") +
                                  " --split val --batch 4 --seed 2 --out " +
                                  td.str("ev1") + " --dump-masks";
    REQUIRE(run_cli(eval_args, td.path).code == 0);

    const auto rows = csv_lines(td.path / "ev1" / "metrics.csv");
    REQUIRE(rows.size() == 7);  // header + 2 val clips x 3 frames
    CHECK(rows[0] == "sequence,frame,j,f,mse,nll,mae,fbeta");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::stringstream ss(rows[i]);
        std::string cell;
        int col = 0;
        while (std::getline(ss, cell, ',')) {
            const double v = std::stod(cell);
            CHECK(std::isfinite(v));
            if (col == 2) {  // region-similarity column stays in [0, 1]
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            ++col;
        }
        CHECK(col == 8);
    }

    int mask_files = 0;
    for (const auto& e : fs::directory_iterator(td.path / "ev1" / "masks")) {
        CHECK(e.path().extension() == ".pgm");
        CHECK(e.path().filename().string().rfind("mask_s", 0) == 0);
        ++mask_files;
    }
    CHECK(mask_files == 6);

    // Identical invocation, identical scores.
    const std::string eval2 = "eval --checkpoint " + td.str("run1") +
                              "/checkpoint.ckpt --data " + td.str("data") +
                              " --split val --batch 4 --seed 2 --out " +
                              td.str("ev2");
    REQUIRE(run_cli(eval2, td.path).code == 0);
    CHECK(read_file(td.path / "ev1" / "metrics.csv") ==
          read_file(td.path / "ev2" / "metrics.csv"));

    CHECK(run_cli("eval --checkpoint " + td.str("run1") +
                      "/checkpoint.ckpt --data " + td.str("data") +
                      " --split sideways --out " + td.str("ev3"),
                  td.path)
              .code == 1);  // split must be train or val
}

TEST_CASE("cli report renders charts for training runs and eval outputs") {
    TempDir td;
    make_small_dataset(td.path / "data", td.path);
    REQUIRE(run_cli(small_train_args(td.str("data"), td.str("run1")), td.path)
                .code == 0);
    REQUIRE(run_cli("eval --checkpoint " + td.str("run1") +
                        "/checkpoint.ckpt --data " + td.str("data") +
                        " --split val --batch 4 --out " + td.str("ev1"),
                    td.path)
                .code == 0);

    REQUIRE(run_cli("report --run " + td.str("run1") + " --out " +
                        td.str("charts"),
                    td.path)
                .code == 0);
    for (const char* name :
         {"loss.svg", "lr.svg", "val_gaussian.svg", "val_quality.svg"}) {
        const fs::path p = td.path / "charts" / name;
        REQUIRE(fs::exists(p));
        CHECK(read_file(p).rfind("<svg", 0) == 0);
    }
    CHECK(!fs::exists(td.path / "charts" / "eval_scores.svg"));

    REQUIRE(run_cli("report --run " + td.str("ev1") + " --out " +
                        td.str("charts2"),
                    td.path)
                .code == 0);
    CHECK(read_file(td.path / "charts2" / "eval_scores.svg").rfind("<svg", 0) ==
          0);
    CHECK(!fs::exists(td.path / "charts2" / "loss.svg"));

    fs::create_directories(td.path / "empty");
    CHECK(run_cli("report --run " + td.str("empty"), td.path).code == 2);
}

// --- library-level prediction and scoring ----------------------------------

namespace {

// Small real dataset in memory; val split supplies the patches under test.
std::vector<FramePatch> sample_patches(int patch) {
    const GeneratedDataset ds =
        generate_dataset(default_prior(), 1, 2, 3, {64, 64}, 41);
    return make_patches(ds.val, patch);
}

}  // namespace

TEST_CASE("tiled prediction returns distinct reproducible candidates") {
    const std::vector<FramePatch> patches = sample_patches(16);
    REQUIRE(patches.size() == 6);

    NetConfig net;
    net.variant = Variant::Plain;
    net.patch = 16;
    Rng rng(1);
    const ParamSet params = init_params(net, rng);
    const GaussianND prior = default_prior();

    const Prediction pred =
        tiled_predict(params, net, prior, patches[0], 8, 7, 0, 0);
    REQUIRE(pred.masks.size() == 8);
    REQUIRE(pred.probs.size() == 8);
    std::set<std::vector<std::uint8_t>> distinct;
    for (int i = 0; i < 8; ++i) {
        REQUIRE(pred.probs[i].size() == 16 * 16);
        REQUIRE(pred.masks[i].w == 16);
        REQUIRE(pred.masks[i].h == 16);
        for (double p : pred.probs[i]) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
        distinct.insert(pred.masks[i].data);
    }
    // Fresh noise per batch lane: an untrained decoder cannot collapse every
    // lane onto one mask.
    CHECK(distinct.size() >= 2);

    const Prediction again =
        tiled_predict(params, net, prior, patches[0], 8, 7, 0, 0);
    for (int i = 0; i < 8; ++i) {
        CHECK(again.masks[i].data == pred.masks[i].data);
        CHECK(again.probs[i] == pred.probs[i]);
    }

    // A different frame id keys different noise.
    const Prediction other =
        tiled_predict(params, net, prior, patches[0], 8, 7, 0, 1);
    bool any_diff = false;
    for (int i = 0; i < 8 && !any_diff; ++i) any_diff = other.probs[i] != pred.probs[i];
    CHECK(any_diff);
}

TEST_CASE("patch scoring picks the best candidate and averages the rows") {
    const std::vector<FramePatch> patches = sample_patches(16);
    REQUIRE(patches.size() == 6);

    // Candidate 1 is the ground truth, candidate 0 is empty: the scorer must
    // select the ground truth and report perfect region metrics.
    const MaskPredictor oracle = [](const FramePatch& p, int, int) {
        Prediction out;
        Mask empty;
        empty.w = p.gt_mask.w;
        empty.h = p.gt_mask.h;
        empty.data.assign(p.gt_mask.data.size(), 0);
        out.masks = {empty, p.gt_mask};
        std::vector<double> empty_probs(p.gt_mask.data.size(), 0.0);
        std::vector<double> gt_probs(p.gt_mask.data.size());
        for (std::size_t i = 0; i < gt_probs.size(); ++i) {
            gt_probs[i] = p.gt_mask.data[i] ? 1.0 : 0.0;
        }
        out.probs = {empty_probs, gt_probs};
        return out;
    };

    const EvalResult res = evaluate_patches(patches, oracle);
    REQUIRE(res.rows.size() == patches.size());
    REQUIRE(res.best_masks.size() == patches.size());
    double sum_j = 0.0;
    for (std::size_t i = 0; i < res.rows.size(); ++i) {
        CHECK(res.rows[i].seq == patches[i].source_seq);
        CHECK(res.rows[i].frame == patches[i].source_frame);
        CHECK(res.rows[i].j == doctest::Approx(1.0));
        CHECK(res.rows[i].f == doctest::Approx(1.0));
        CHECK(res.rows[i].mse == doctest::Approx(0.0));
        CHECK(res.rows[i].mae == doctest::Approx(0.0));
        CHECK(res.rows[i].fbeta == doctest::Approx(1.0));
        CHECK(res.rows[i].nll < 1e-5);  // only the probability clamp remains
        CHECK(res.rows[i].nll >= 0.0);
        CHECK(res.best_masks[i].data == patches[i].gt_mask.data);
        sum_j += res.rows[i].j;
    }
    CHECK(res.mean.seq == -1);
    CHECK(res.mean.frame == -1);
    CHECK(res.mean.j == doctest::Approx(sum_j / double(res.rows.size())));

    // The model-backed predictor produces finite scores on real weights.
    NetConfig net;
    net.variant = Variant::Unet;
    net.patch = 16;
    Rng rng(2);
    const ParamSet params = init_params(net, rng);
    const GaussianND prior = default_prior();
    const EvalResult model_res =
        evaluate_patches(patches, model_predictor(params, net, prior, 4, 11));
    REQUIRE(model_res.rows.size() == patches.size());
    for (const EvalRow& row : model_res.rows) {
        CHECK(std::isfinite(row.nll));
        CHECK(row.j >= 0.0);
        CHECK(row.j <= 1.0);
        CHECK(row.mse >= 0.0);
    }
    CHECK(std::isfinite(model_res.mean.nll));
}
