#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mvprior/dataprep.hpp"
#include "mvprior/gaussian.hpp"
#include "mvprior/network.hpp"

namespace mvprior {

// One stochastic decoding run: candidate binary masks and their matching
// foreground-probability maps (row-major, patch*patch values each).
struct Prediction {
    std::vector<Mask> masks;
    std::vector<std::vector<double>> probs;
};

// Produces candidates for one patch; the sequence/frame ids key the
// deterministic randomness. Tests can substitute an oracle here.
using MaskPredictor = std::function<Prediction(const FramePatch&, int, int)>;

// Tiles `batch` copies of the patch image into one batch, draws fresh prior
// noise, and decodes once per copy.
Prediction tiled_predict(const ParamSet& params, const NetConfig& net,
                         const GaussianND& prior, const FramePatch& patch,
                         int batch, std::uint64_t seed, int seq, int frame);

MaskPredictor model_predictor(const ParamSet& params, const NetConfig& net,
                              const GaussianND& prior, int batch,
                              std::uint64_t seed);

struct EvalRow {
    int seq = 0, frame = 0;
    double j = 0.0, f = 0.0, mse = 0.0, nll = 0.0, mae = 0.0, fbeta = 0.0;
};

struct EvalResult {
    std::vector<EvalRow> rows;
    EvalRow mean;                  // seq/frame fields are -1
    std::vector<Mask> best_masks;  // winner per patch, same order as rows
};

// Scores every patch: candidates from the predictor, winner by region
// similarity, remaining metrics computed on the winner.
EvalResult evaluate_patches(const std::vector<FramePatch>& patches,
                            const MaskPredictor& predict);

void write_metrics_csv(const std::string& path, const EvalResult& res);

// Writes each winning mask as mask_s<seq>_f<frame>.pgm under dir.
void write_mask_images(const std::string& dir,
                       const std::vector<FramePatch>& patches,
                       const std::vector<Mask>& masks);

}  // namespace mvprior
