#pragma once

#include <cstdint>
#include <string>

#include "mvprior/network.hpp"

namespace mvprior {

// Serialized training state: model parameters plus first/second moment
// accumulators of the optimizer, and enough metadata to rebuild the model.
struct Checkpoint {
    NetConfig config;
    std::uint64_t seed = 0;
    int step = 0;
    ParamSet params;
    ParamSet opt_m;
    ParamSet opt_v;
};

// Rounds every value to the nearest float32. Saving stores float32, so the
// live state is rounded at save time too; that keeps a run that continues
// in-process bit-identical to one that reloads the file and resumes.
void quantize_f32(ParamSet& p);

// File layout: one line of JSON metadata, then raw little-endian float32
// payload (params, then opt_m, then opt_v, tensors in declared order).
// Also applies quantize_f32 to the in-memory state (see above).
void save_checkpoint(const std::string& path, Checkpoint& ck);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace mvprior
