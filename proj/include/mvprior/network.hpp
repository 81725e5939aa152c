#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvprior/bottleneck.hpp"
#include "mvprior/common.hpp"
#include "mvprior/dataprep.hpp"
#include "mvprior/gaussian.hpp"

namespace mvprior {

/// Dense batch tensor, laid out (batch, channel, row, col) row-major.
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0) {}

    double at(int b, int ch, int y, int x) const {
        return data[((static_cast<size_t>(b) * c + ch) * h + y) * w + x];
    }
    double& at(int b, int ch, int y, int x) {
        return data[((static_cast<size_t>(b) * c + ch) * h + y) * w + x];
    }
    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
};

/// Named parameter tensor; shape is informational, data is flat row-major.
struct Tensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
};

/// Ordered collection of parameters. The order is fixed by construction and
/// defines the checkpoint payload order.
struct ParamSet {
    std::vector<Tensor> tensors;

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const;
    ParamSet zeros_like() const;
    std::int64_t total_size() const;
};

enum class Variant { Plain, Unet };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct NetConfig {
    Variant variant = Variant::Plain;
    int patch = 32;        // divisible by 8, >= 16
    int in_channels = 3;

    int bottleneck_side() const { return patch / 8; }
};

void validate_config(const NetConfig& cfg);

/// Fresh parameters: He-style fan-in scaling for convs, small heads, with the
/// sigma head biased so the initial posterior covariance is on the prior's
/// scale rather than collapsed at zero.
ParamSet init_params(const NetConfig& cfg, Rng& rng);

// --- building blocks --------------------------------------------------------

/// 2-D convolution (square kernel, zero padding) via im2col + matrix product.
Tensor4 conv_forward(const Tensor4& in, const Tensor& w, const Tensor& b,
                     int stride, int pad);

struct ConvGrads {
    Tensor4 din;
    std::vector<double> dw;
    std::vector<double> db;
};
ConvGrads conv_backward(const Tensor4& in, const Tensor& w, const Tensor4& dout,
                        int stride, int pad);

/// Leaky rectifier, slope 0.01 on the negative side.
Tensor4 leaky_relu(const Tensor4& x);
Tensor4 leaky_relu_backward(const Tensor4& x_pre, const Tensor4& dout);

/// Nearest-neighbor 2x upsampling and its adjoint.
Tensor4 upsample2(const Tensor4& x);
Tensor4 upsample2_backward(const Tensor4& dout);

/// Mean over the spatial axes, one value per (batch, channel).
Eigen::MatrixXd global_avg_pool(const Tensor4& x);
Tensor4 global_avg_pool_backward(int h, int w, const Eigen::MatrixXd& dpooled);

// --- forward passes ---------------------------------------------------------

/// Per-stage encoder features (post-activation) plus the two 50-unit heads.
/// Pre-activation maps and the pooled vector are kept for the backward pass;
/// min_abs_preact tracks the smallest rectifier input magnitude seen.
struct EncoderOut {
    Tensor4 e1, e2, e3, e4;                  // e4 only for the unet variant
    Tensor4 e1_pre, e2_pre, e3_pre, e4_pre;
    Eigen::MatrixXd pooled;                  // B x 32
    HeadActivations heads;
    double min_abs_preact = 0.0;
};
EncoderOut encoder_forward(const ParamSet& params, const Tensor4& batch,
                           const NetConfig& cfg);

/// Decoder from flattened latent rows to per-pixel 2-class logits.
/// `skips` must be empty for the plain variant and exactly {e1, e2, e4}
/// (finest to coarsest-extra) for the unet variant.
struct DecoderOut {
    Tensor4 logits;
    Eigen::MatrixXd proj_pre;                // B x (S*S*32)
    Tensor4 proj_map;                        // post-activation, B x 32 x S x S
    Tensor4 d4_in, d4_pre, d4;               // unet only
    Tensor4 d3_in, d3_pre, d3;
    Tensor4 d2_in, d2_pre, d2;
    Tensor4 d1_in, d1_pre, d1;
    double min_abs_preact = 0.0;
};
DecoderOut decoder_forward(const ParamSet& params, const LatentSample& z,
                           const std::vector<Tensor4>& skips, const NetConfig& cfg);

// --- losses -----------------------------------------------------------------

struct ConsLoss {
    double ce = 0.0;     // class-weighted cross entropy
    double lj = 0.0;     // 1 - soft Jaccard
    double total = 0.0;
};

/// Decoder loss against the ground-truth masks: per-patch inverse-frequency
/// class weights normalized to sum 2, plus one minus the soft Jaccard of the
/// foreground probabilities (epsilon 1e-6).
ConsLoss loss_construction(const Tensor4& logits, const std::vector<Mask>& gt);
Tensor4 loss_construction_backward(const Tensor4& logits, const std::vector<Mask>& gt);

/// L_cons + beta * L_kl.
double loss_total(double l_cons, double l_kl, double beta);

// --- end-to-end -------------------------------------------------------------

struct LossBreakdown {
    double total = 0.0;
    double cons = 0.0;
    double ce = 0.0;
    double lj = 0.0;
    double kl = 0.0;
};

struct BackwardResult {
    LossBreakdown loss;
    ParamSet grads;
    GaussianND posterior;
    double min_abs_preact = 0.0;  // smallest rectifier input magnitude
    double min_norm = 0.0;        // smallest batch-axis norm in the cov head
    double min_var = 0.0;         // smallest posterior diagonal entry
};

/// Full training-step computation: draw eps from the prior, encode, build the
/// posterior, reparameterize, decode, evaluate both loss terms, and return
/// exact reverse-mode gradients for every parameter.
BackwardResult backward(const ParamSet& params, const Tensor4& batch,
                        const std::vector<Mask>& gt, const GaussianND& prior,
                        double beta, const NetConfig& cfg, Rng& rng);

/// Same, with the prior draws pinned by the caller (finite-difference seam).
BackwardResult backward_with_eps(const ParamSet& params, const Tensor4& batch,
                                 const std::vector<Mask>& gt, const GaussianND& prior,
                                 double beta, const NetConfig& cfg,
                                 const Eigen::MatrixXd& eps);

/// Loss evaluation only, on pinned eps.
LossBreakdown forward_loss_with_eps(const ParamSet& params, const Tensor4& batch,
                                    const std::vector<Mask>& gt,
                                    const GaussianND& prior, double beta,
                                    const NetConfig& cfg, const Eigen::MatrixXd& eps);

/// Inference pass: encode, posterior, reparameterize with pinned eps, decode.
struct ForwardResult {
    HeadActivations heads;
    GaussianND posterior;
    LatentSample z;
    Tensor4 logits;
};
ForwardResult forward_pass(const ParamSet& params, const Tensor4& batch,
                           const GaussianND& prior, const NetConfig& cfg,
                           const Eigen::MatrixXd& eps);

// --- batch assembly ---------------------------------------------------------

/// Stacks the selected patches into a batch tensor plus their masks.
struct BatchData {
    Tensor4 images;
    std::vector<Mask> gt;
};
BatchData batch_from_patches(const std::vector<FramePatch>& patches,
                             const std::vector<int>& indices);

/// Argmax over the two class logits, one mask per batch row.
std::vector<Mask> logits_to_masks(const Tensor4& logits);

/// Per-pixel foreground probability maps (softmax over the two classes).
std::vector<std::vector<double>> logits_to_probs(const Tensor4& logits);

}  // namespace mvprior
