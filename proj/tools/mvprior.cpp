#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mvprior/checkpoint.hpp"
#include "mvprior/common.hpp"
#include "mvprior/dataprep.hpp"
#include "mvprior/eval.hpp"
#include "mvprior/gaussian.hpp"
#include "mvprior/metrics.hpp"
#include "mvprior/network.hpp"
#include "mvprior/svgplot.hpp"
#include "mvprior/train.hpp"

namespace fs = std::filesystem;
using namespace mvprior;

namespace {

FrameDims parse_dims(const std::string& text) {
    int w = 0, h = 0;
    char extra = 0;
    if (std::sscanf(text.c_str(), "%dx%d%c", &w, &h, &extra) != 2 || w < 1 || h < 1) {
        throw UsageError("--dims expects WxH, e.g. 128x128, got '" + text + "'");
    }
    return FrameDims{w, h};
}

GaussianND load_prior_or_default(const std::string& path) {
    if (path.empty()) return default_prior();
    return load_gaussian(path);
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

struct SynthArgs {
    std::uint64_t seed = 7;
    int sequences = 100;
    int val = 0;
    int len = 12;
    std::string dims = "128x128";
    std::string out;
    std::string prior;
};

int cmd_synth(const SynthArgs& a) {
    const GaussianND prior = load_prior_or_default(a.prior);
    const FrameDims dims = parse_dims(a.dims);
    if (a.sequences < 0 || a.val < 0) throw UsageError("sequence counts must be >= 0");
    const GeneratedDataset ds =
        generate_dataset(prior, a.sequences, a.val, a.len, dims, a.seed);
    store_dataset(a.out, ds);
    std::cout << "wrote " << ds.train.size() << " train + " << ds.val.size()
              << " val sequences to " << a.out << " (drawn " << ds.stats.drawn
              << ", rejected: oversize " << ds.stats.rejected_oversize
              << ", occluded " << ds.stats.rejected_occluded << ", failed "
              << ds.stats.rejected_generation << ")\n";
    return 0;
}

struct AnalyzeArgs {
    std::string data;
    std::string out;
};

int cmd_analyze(const AnalyzeArgs& a) {
    const LoadedDataset ds = load_dataset(a.data);
    std::vector<MaskSequence> sequences;
    for (const SequenceData& s : ds.train) sequences.push_back(s.masks);
    for (const SequenceData& s : ds.val) sequences.push_back(s.masks);
    if (sequences.empty()) throw DataError("dataset has no sequences: " + a.data);
    const GaussianND fitted = analyze_dataset(sequences);
    std::cout << gaussian_to_json(fitted) << '\n';
    if (!a.out.empty()) {
        save_gaussian(a.out, fitted);
        std::cout << "wrote " << a.out << '\n';
    }
    return 0;
}

struct TrainArgs {
    std::string data;
    std::string prior;
    std::string out = "run";
    std::string variant = "plain";
    int patch = 32;
    double beta = 5.0;
    int batch = 16;
    int steps = 2000;
    int cycle = 200;
    double lr_min = 5e-5;
    double lr_max = 1e-4;
    int val_interval = 100;
    int save_every = 0;
    std::uint64_t seed = 1;
};

int cmd_train(const TrainArgs& a) {
    const GaussianND prior = load_prior_or_default(a.prior);
    const LoadedDataset ds = load_dataset(a.data);
    if (ds.train.empty()) throw DataError("dataset has no training sequences");
    const std::vector<FramePatch> train_patches = make_patches(ds.train, a.patch);
    const std::vector<FramePatch> val_patches = make_patches(ds.val, a.patch);

    ensure_dir(a.out);
    TrainConfig cfg;
    cfg.net.variant = variant_from_name(a.variant);
    cfg.net.patch = a.patch;
    cfg.beta = a.beta;
    cfg.batch = a.batch;
    cfg.steps = a.steps;
    cfg.cycle = a.cycle;
    cfg.lr_min = a.lr_min;
    cfg.lr_max = a.lr_max;
    cfg.val_interval = a.val_interval;
    cfg.save_every = a.save_every;
    cfg.seed = a.seed;
    cfg.checkpoint_path = (fs::path(a.out) / "checkpoint.ckpt").string();

    const TrainResult result = run_training(cfg, prior, train_patches, val_patches);
    write_train_csv((fs::path(a.out) / "train.csv").string(), result.report.train_log);
    write_val_csv((fs::path(a.out) / "val.csv").string(), result.report.val_log);

    const StepRecord& last = result.report.train_log.back();
    std::cout << "finished " << result.state.step << " steps; final l_total "
              << last.l_total << " (cons " << last.l_cons << ", kl " << last.l_kl
              << ")\n";
    if (!result.report.val_log.empty()) {
        const ValRecord& v = result.report.val_log.back();
        std::cout << "val @" << v.step << ": d_mah " << v.d_mah << ", nll " << v.nll
                  << ", mse " << v.mse << ", j " << v.j << ", f " << v.f << '\n';
    }
    std::cout << "wrote " << a.out << "/checkpoint.ckpt, train.csv, val.csv\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string prior;
    std::string out = "eval";
    std::string split = "val";
    int batch = 16;
    std::uint64_t seed = 1;
    bool dump_masks = false;
};

int cmd_eval(const EvalArgs& a) {
    const GaussianND prior = load_prior_or_default(a.prior);
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const LoadedDataset ds = load_dataset(a.data);

    std::vector<SequenceData> chosen;
    if (a.split == "train" || a.split == "all") {
        chosen.insert(chosen.end(), ds.train.begin(), ds.train.end());
    }
    if (a.split == "val" || a.split == "all") {
        chosen.insert(chosen.end(), ds.val.begin(), ds.val.end());
    }
    if (a.split != "train" && a.split != "val" && a.split != "all") {
        throw UsageError("--split must be train, val, or all");
    }
    if (chosen.empty()) throw DataError("no sequences in the requested split");

    const std::vector<FramePatch> patches = make_patches(chosen, ck.config.patch);
    const MaskPredictor predict =
        model_predictor(ck.params, ck.config, prior, a.batch, a.seed);
    const EvalResult result = evaluate_patches(patches, predict);

    ensure_dir(a.out);
    write_metrics_csv((fs::path(a.out) / "metrics.csv").string(), result);
    if (a.dump_masks) {
        write_mask_images((fs::path(a.out) / "masks").string(), patches,
                          result.best_masks);
    }
    std::cout << "evaluated " << result.rows.size() << " frames: mean j "
              << result.mean.j << ", f " << result.mean.f << ", mse "
              << result.mean.mse << ", nll " << result.mean.nll << ", mae "
              << result.mean.mae << ", fbeta " << result.mean.fbeta << '\n';
    std::cout << "wrote " << a.out << "/metrics.csv\n";
    return 0;
}

struct ReportArgs {
    std::string run;
    std::string out;
};

std::vector<double> column(const CsvTable& t, const std::string& name) {
    for (size_t c = 0; c < t.columns.size(); ++c) {
        if (t.columns[c] == name) {
            std::vector<double> v;
            for (const auto& row : t.rows) v.push_back(row[c]);
            return v;
        }
    }
    throw DataError("CSV is missing column " + name);
}

int cmd_report(const ReportArgs& a) {
    const std::string out = a.out.empty() ? a.run : a.out;
    ensure_dir(out);
    int written = 0;

    const fs::path train_csv = fs::path(a.run) / "train.csv";
    if (fs::exists(train_csv)) {
        const CsvTable t = read_csv(train_csv.string());
        const std::vector<double> step = column(t, "step");
        write_line_chart((fs::path(out) / "loss.svg").string(), "Training loss",
                         "step",
                         {{"l_total", step, column(t, "l_total")},
                          {"l_cons", step, column(t, "l_cons")},
                          {"l_kl", step, column(t, "l_kl")}});
        write_line_chart((fs::path(out) / "lr.svg").string(), "Learning rate",
                         "step", {{"lr", step, column(t, "lr")}});
        written += 2;
    }
    const fs::path val_csv = fs::path(a.run) / "val.csv";
    if (fs::exists(val_csv)) {
        const CsvTable t = read_csv(val_csv.string());
        const std::vector<double> step = column(t, "step");
        write_line_chart((fs::path(out) / "val_gaussian.svg").string(),
                         "Posterior vs prior", "step",
                         {{"d_mah", step, column(t, "d_mah")},
                          {"nll", step, column(t, "nll")}});
        write_line_chart((fs::path(out) / "val_quality.svg").string(),
                         "Mask quality", "step",
                         {{"mse", step, column(t, "mse")},
                          {"j", step, column(t, "j")},
                          {"f", step, column(t, "f")}});
        written += 2;
    }
    const fs::path metrics_csv = fs::path(a.run) / "metrics.csv";
    if (fs::exists(metrics_csv)) {
        const CsvTable t = read_csv(metrics_csv.string());
        std::vector<double> idx;
        for (size_t i = 0; i < t.rows.size(); ++i) idx.push_back(double(i));
        write_line_chart((fs::path(out) / "eval_scores.svg").string(),
                         "Per-frame scores", "frame index",
                         {{"j", idx, column(t, "j")},
                          {"f", idx, column(t, "f")},
                          {"fbeta", idx, column(t, "fbeta")}});
        written += 1;
    }
    if (written == 0) {
        throw DataError("no train.csv, val.csv, or metrics.csv under " + a.run);
    }
    std::cout << "wrote " << written << " charts to " << out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Motion-prior variational mask model: data synthesis, prior "
                 "fitting, training, evaluation, and reporting"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* s = app.add_subcommand("synth", "Generate a synthetic clip dataset");
    s->add_option("--seed", synth.seed, "Master random seed");
    s->add_option("--sequences", synth.sequences, "Training clips to accept");
    s->add_option("--val", synth.val, "Validation clips to accept");
    s->add_option("--len", synth.len, "Frames per clip");
    s->add_option("--dims", synth.dims, "Frame size as WxH");
    s->add_option("--out", synth.out, "Output dataset directory")->required();
    s->add_option("--prior", synth.prior, "Motion prior JSON (default: built-in)");

    AnalyzeArgs analyze;
    CLI::App* an = app.add_subcommand("analyze", "Fit a motion prior to a dataset");
    an->add_option("--data", analyze.data, "Dataset directory")->required();
    an->add_option("--out", analyze.out, "Where to write the fitted prior JSON");

    TrainArgs train;
    CLI::App* tr = app.add_subcommand("train", "Train the mask model");
    tr->add_option("--data", train.data, "Dataset directory")->required();
    tr->add_option("--prior", train.prior, "Motion prior JSON (default: built-in)");
    tr->add_option("--out", train.out, "Output run directory");
    tr->add_option("--variant", train.variant, "Model variant: plain or unet");
    tr->add_option("--patch", train.patch, "Crop side length");
    tr->add_option("--beta", train.beta, "Weight of the divergence term");
    tr->add_option("--batch", train.batch, "Batch size");
    tr->add_option("--steps", train.steps, "Training steps");
    tr->add_option("--cycle", train.cycle, "Learning-rate cycle length");
    tr->add_option("--lr-min", train.lr_min, "Lower learning-rate bound");
    tr->add_option("--lr-max", train.lr_max, "Upper learning-rate bound");
    tr->add_option("--val-interval", train.val_interval, "Steps between validations");
    tr->add_option("--save-every", train.save_every,
                   "Checkpoint cadence in steps (0 = final only)");
    tr->add_option("--seed", train.seed, "Master random seed");

    EvalArgs eval;
    CLI::App* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset");
    ev->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    ev->add_option("--data", eval.data, "Dataset directory")->required();
    ev->add_option("--prior", eval.prior, "Motion prior JSON (default: built-in)");
    ev->add_option("--out", eval.out, "Output directory");
    ev->add_option("--split", eval.split, "Dataset split: train, val, or all");
    ev->add_option("--batch", eval.batch, "Copies per tiled batch");
    ev->add_option("--seed", eval.seed, "Master random seed");
    ev->add_flag("--dump-masks", eval.dump_masks, "Also write winning masks as PGM");

    ReportArgs report;
    CLI::App* rp = app.add_subcommand("report", "Render run CSVs to SVG charts");
    rp->add_option("--run", report.run, "Directory holding the CSV reports")
        ->required();
    rp->add_option("--out", report.out, "Chart output directory (default: --run)");

    try {
        app.parse(argc, argv);
        if (s->parsed()) return cmd_synth(synth);
        if (an->parsed()) return cmd_analyze(analyze);
        if (tr->parsed()) return cmd_train(train);
        if (ev->parsed()) return cmd_eval(eval);
        if (rp->parsed()) return cmd_report(report);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 3;
    }
}
