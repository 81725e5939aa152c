#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvprior/checkpoint.hpp"
#include "mvprior/dataprep.hpp"
#include "mvprior/gaussian.hpp"
#include "mvprior/network.hpp"

namespace mvprior {

struct TrainConfig {
    NetConfig net;
    double beta = 5.0;
    int batch = 32;
    int steps = 2000;
    int cycle = 200;
    double lr_min = 5e-5;
    double lr_max = 1e-4;
    int val_interval = 100;
    std::uint64_t seed = 1;
    // When non-empty, a checkpoint is written here at every save_every-step
    // boundary (0 = final step only).
    std::string checkpoint_path;
    int save_every = 0;
};

void validate_train_config(const TrainConfig& cfg);

// Triangular wave: lr_min at step 0, lr_max at step cycle/2, back down;
// periodic with the cycle length.
double lr_schedule(int step, const TrainConfig& cfg);

// One RAdam update over every tensor. t is the 1-based step count; m and v
// are the running first/second moment estimates. Falls back to the
// momentum-only direction while the variance rectification is undefined.
void radam_update(ParamSet& params, const ParamSet& grads, ParamSet& m,
                  ParamSet& v, int t, double lr);

struct StepRecord {
    int step = 0;
    double lr = 0.0, l_total = 0.0, l_cons = 0.0, l_kl = 0.0;
};

struct ValRecord {
    int step = 0;
    double d_mah = 0.0, nll = 0.0, mse = 0.0, j = 0.0, f = 0.0;
};

struct TrainReport {
    std::vector<StepRecord> train_log;
    std::vector<ValRecord> val_log;
};

// Validation pass over the full val set in batches: pools per-batch
// posterior statistics (weighted by batch rows) into one Gaussian and
// reports its Mahalanobis distance to the prior, plus mean NLL / MSE of
// the foreground probabilities and mean J / F of the thresholded masks.
ValRecord validate(const ParamSet& params, const NetConfig& net,
                   const GaussianND& prior, const std::vector<FramePatch>& val,
                   int batch, std::uint64_t seed, int step);

struct TrainResult {
    Checkpoint state;
    TrainReport report;
};

// Full training loop. Starts from resume when given (its config must match),
// otherwise from a fresh seeded initialization. Randomness is derived
// statelessly from (seed, step), so a resumed run replays the same stream.
TrainResult run_training(const TrainConfig& cfg, const GaussianND& prior,
                         const std::vector<FramePatch>& train_patches,
                         const std::vector<FramePatch>& val_patches,
                         const std::optional<Checkpoint>& resume = std::nullopt);

void write_train_csv(const std::string& path, const std::vector<StepRecord>& rows);
void write_val_csv(const std::string& path, const std::vector<ValRecord>& rows);

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const std::string& path);

}  // namespace mvprior
