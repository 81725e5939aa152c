#include "mvprior/eval.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mvprior/metrics.hpp"

namespace mvprior {

namespace {

constexpr std::uint64_t kEvalStream = 0xe7;

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace

Prediction tiled_predict(const ParamSet& params, const NetConfig& net,
                         const GaussianND& prior, const FramePatch& patch,
                         int batch, std::uint64_t seed, int seq, int frame) {
    if (batch < 1) throw UsageError("tiled batch must be >= 1");
    const int P = patch.gt_mask.w;
    if (patch.gt_mask.h != P || patch.image.w != P || patch.image.h != P) {
        throw UsageError("patch image and mask must be square and equal-sized");
    }
    Tensor4 images(batch, 3, P, P);
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < P; ++y) {
                for (int x = 0; x < P; ++x) {
                    images.at(b, c, y, x) = patch.image.at(x, y, c);
                }
            }
        }
    }
    Rng rng = Rng::derive(seed, {kEvalStream, static_cast<std::uint64_t>(seq),
                                 static_cast<std::uint64_t>(frame)});
    const Eigen::MatrixXd eps = draw_prior_eps(prior, batch, rng);
    const ForwardResult fwd = forward_pass(params, images, prior, net, eps);
    Prediction out;
    out.masks = logits_to_masks(fwd.logits);
    out.probs = logits_to_probs(fwd.logits);
    return out;
}

MaskPredictor model_predictor(const ParamSet& params, const NetConfig& net,
                              const GaussianND& prior, int batch,
                              std::uint64_t seed) {
    return [params, net, prior, batch, seed](const FramePatch& patch, int seq,
                                             int frame) {
        return tiled_predict(params, net, prior, patch, batch, seed, seq, frame);
    };
}

EvalResult evaluate_patches(const std::vector<FramePatch>& patches,
                            const MaskPredictor& predict) {
    if (patches.empty()) throw DataError("evaluation set is empty");
    EvalResult res;
    for (const FramePatch& patch : patches) {
        const Prediction pred = predict(patch, patch.source_seq, patch.source_frame);
        if (pred.masks.empty() || pred.masks.size() != pred.probs.size()) {
            throw DataError("predictor returned mismatched candidates");
        }
        const BestOfBatch best = best_of_batch(pred.masks, patch.gt_mask);
        const Mask& mask = pred.masks[best.index];
        const std::vector<double>& prob = pred.probs[best.index];

        EvalRow row;
        row.seq = patch.source_seq;
        row.frame = patch.source_frame;
        row.j = best.j;
        row.f = boundary_f(mask, patch.gt_mask);
        row.mse = prob_mse(prob, patch.gt_mask);
        row.nll = prob_nll(prob, patch.gt_mask);
        const SaliencyScores sal = saliency_scores(prob, patch.gt_mask);
        row.mae = sal.mae;
        row.fbeta = sal.f_beta;
        res.rows.push_back(row);
        res.best_masks.push_back(mask);
    }
    res.mean.seq = res.mean.frame = -1;
    for (const EvalRow& r : res.rows) {
        res.mean.j += r.j;
        res.mean.f += r.f;
        res.mean.mse += r.mse;
        res.mean.nll += r.nll;
        res.mean.mae += r.mae;
        res.mean.fbeta += r.fbeta;
    }
    const double n = static_cast<double>(res.rows.size());
    res.mean.j /= n;
    res.mean.f /= n;
    res.mean.mse /= n;
    res.mean.nll /= n;
    res.mean.mae /= n;
    res.mean.fbeta /= n;
    return res;
}

void write_metrics_csv(const std::string& path, const EvalResult& res) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "sequence,frame,j,f,mse,nll,mae,fbeta\n";
    for (const EvalRow& r : res.rows) {
        os << r.seq << ',' << r.frame << ',' << format_number(r.j) << ','
           << format_number(r.f) << ',' << format_number(r.mse) << ','
           << format_number(r.nll) << ',' << format_number(r.mae) << ','
           << format_number(r.fbeta) << '\n';
    }
    if (!os) throw DataError("failed writing: " + path);
}

void write_mask_images(const std::string& dir,
                       const std::vector<FramePatch>& patches,
                       const std::vector<Mask>& masks) {
    if (patches.size() != masks.size()) {
        throw UsageError("one mask per patch required for image dump");
    }
    std::filesystem::create_directories(dir);
    for (size_t i = 0; i < masks.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "mask_s%04d_f%03d.pgm",
                      patches[i].source_seq, patches[i].source_frame);
        write_pgm((std::filesystem::path(dir) / name).string(), masks[i]);
    }
}

}  // namespace mvprior
