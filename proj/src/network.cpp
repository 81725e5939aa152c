#include "mvprior/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mvprior {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kLeakySlope = 0.01;
constexpr double kJaccardEps = 1e-6;

Tensor make_tensor(const std::string& name, std::vector<int> shape) {
    Tensor t;
    t.name = name;
    t.shape = std::move(shape);
    std::int64_t n = 1;
    for (int d : t.shape) n *= d;
    t.data.assign(static_cast<size_t>(n), 0.0);
    return t;
}

void fill_normal(Tensor& t, double std, Rng& rng) {
    for (double& v : t.data) v = std * rng.normal();
}

int conv_kernel(const Tensor& w) { return w.shape.size() == 4 ? w.shape[2] : 0; }

void check_conv_shapes(const Tensor4& in, const Tensor& w, int stride, int pad) {
    if (w.shape.size() != 4 || w.shape[2] != w.shape[3]) {
        throw UsageError("conv kernel " + w.name + " must be (out, in, k, k)");
    }
    if (w.shape[1] != in.c) {
        throw UsageError("conv " + w.name + " expects " + std::to_string(w.shape[1]) +
                         " input channels, got " + std::to_string(in.c));
    }
    const int k = w.shape[2];
    if (stride < 1 || pad < 0) {
        throw UsageError("conv " + w.name + " requires stride >= 1 and pad >= 0");
    }
    // Output size is floor((size + 2*pad - k) / stride) + 1; trailing pixels
    // that do not fit a full stride are skipped, matching im2col's loops.
    if (in.h + 2 * pad < k || in.w + 2 * pad < k) {
        throw UsageError("conv " + w.name + " input is smaller than the kernel");
    }
}

Eigen::MatrixXd im2col(const Tensor4& in, int k, int stride, int pad, int ho, int wo) {
    Eigen::MatrixXd col(in.c * k * k, static_cast<std::int64_t>(in.n) * ho * wo);
    for (int b = 0; b < in.n; ++b) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const std::int64_t cidx =
                    (static_cast<std::int64_t>(b) * ho + oy) * wo + ox;
                int row = 0;
                for (int ci = 0; ci < in.c; ++ci) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        for (int kx = 0; kx < k; ++kx, ++row) {
                            const int ix = ox * stride + kx - pad;
                            col(row, cidx) =
                                (iy >= 0 && iy < in.h && ix >= 0 && ix < in.w)
                                    ? in.at(b, ci, iy, ix)
                                    : 0.0;
                        }
                    }
                }
            }
        }
    }
    return col;
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w) {
        throw UsageError("channel concat requires matching batch and spatial dims");
    }
    Tensor4 out(a.n, a.c + b.c, a.h, a.w);
    for (int bi = 0; bi < a.n; ++bi) {
        for (int c = 0; c < a.c; ++c) {
            for (int y = 0; y < a.h; ++y) {
                for (int x = 0; x < a.w; ++x) out.at(bi, c, y, x) = a.at(bi, c, y, x);
            }
        }
        for (int c = 0; c < b.c; ++c) {
            for (int y = 0; y < a.h; ++y) {
                for (int x = 0; x < a.w; ++x) {
                    out.at(bi, a.c + c, y, x) = b.at(bi, c, y, x);
                }
            }
        }
    }
    return out;
}

std::pair<Tensor4, Tensor4> split_channels(const Tensor4& t, int c0, int c1) {
    if (t.c != c0 + c1) throw UsageError("channel split sizes do not sum");
    Tensor4 a(t.n, c0, t.h, t.w), b(t.n, c1, t.h, t.w);
    for (int bi = 0; bi < t.n; ++bi) {
        for (int c = 0; c < c0; ++c) {
            for (int y = 0; y < t.h; ++y) {
                for (int x = 0; x < t.w; ++x) a.at(bi, c, y, x) = t.at(bi, c, y, x);
            }
        }
        for (int c = 0; c < c1; ++c) {
            for (int y = 0; y < t.h; ++y) {
                for (int x = 0; x < t.w; ++x) b.at(bi, c, y, x) = t.at(bi, c0 + c, y, x);
            }
        }
    }
    return {std::move(a), std::move(b)};
}

void add_inplace(Tensor4& a, const Tensor4& b) {
    if (a.data.size() != b.data.size()) throw UsageError("tensor add size mismatch");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

double min_abs(const Tensor4& t) {
    double m = std::numeric_limits<double>::infinity();
    for (double v : t.data) m = std::min(m, std::abs(v));
    return m;
}

double min_abs(const Eigen::MatrixXd& m) {
    return m.size() ? m.cwiseAbs().minCoeff() : std::numeric_limits<double>::infinity();
}

// Linear layer helpers over row-major (out, in) weights.
Eigen::MatrixXd linear_forward(const Eigen::MatrixXd& x, const Tensor& w,
                               const Tensor& b) {
    const int out = w.shape[0], in = w.shape[1];
    if (x.cols() != in) throw UsageError("linear " + w.name + " input width mismatch");
    Eigen::Map<const RowMat> W(w.data.data(), out, in);
    Eigen::Map<const Eigen::VectorXd> bias(b.data.data(), out);
    return (x * W.transpose()).rowwise() + bias.transpose();
}

void linear_backward(const Eigen::MatrixXd& x, const Tensor& w,
                     const Eigen::MatrixXd& dout, Eigen::MatrixXd* dx,
                     Tensor* dw, Tensor* db) {
    const int out = w.shape[0], in = w.shape[1];
    Eigen::Map<const RowMat> W(w.data.data(), out, in);
    if (dx) *dx = dout * W;
    if (dw) {
        Eigen::Map<RowMat> dW(dw->data.data(), out, in);
        dW += dout.transpose() * x;
    }
    if (db) {
        Eigen::Map<Eigen::VectorXd> dB(db->data.data(), out);
        dB += dout.colwise().sum().transpose();
    }
}

struct StageChannels {
    int dec4_in = 0, dec3_in = 0, dec2_in = 0;
};

StageChannels stage_channels(const NetConfig& cfg) {
    if (cfg.variant == Variant::Unet) return {64, 48, 24};
    return {0, 32, 16};
}

void accumulate(Tensor& t, const std::vector<double>& d) {
    for (size_t i = 0; i < d.size(); ++i) t.data[i] += d[i];
}

}  // namespace

Tensor& ParamSet::at(const std::string& name) {
    for (Tensor& t : tensors) {
        if (t.name == name) return t;
    }
    throw UsageError("no parameter tensor named " + name);
}

const Tensor& ParamSet::at(const std::string& name) const {
    for (const Tensor& t : tensors) {
        if (t.name == name) return t;
    }
    throw UsageError("no parameter tensor named " + name);
}

bool ParamSet::has(const std::string& name) const {
    for (const Tensor& t : tensors) {
        if (t.name == name) return true;
    }
    return false;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet z;
    for (const Tensor& t : tensors) z.tensors.push_back(make_tensor(t.name, t.shape));
    return z;
}

std::int64_t ParamSet::total_size() const {
    std::int64_t n = 0;
    for (const Tensor& t : tensors) n += t.size();
    return n;
}

const char* variant_name(Variant v) {
    return v == Variant::Unet ? "unet" : "plain";
}

Variant variant_from_name(const std::string& name) {
    if (name == "plain") return Variant::Plain;
    if (name == "unet") return Variant::Unet;
    throw UsageError("unknown variant '" + name + "' (expected plain or unet)");
}

void validate_config(const NetConfig& cfg) {
    if (cfg.patch < 16 || cfg.patch % 8 != 0) {
        throw UsageError("patch size must be >= 16 and divisible by 8");
    }
    if (cfg.in_channels < 1) throw UsageError("in_channels must be >= 1");
}

ParamSet init_params(const NetConfig& cfg, Rng& rng) {
    validate_config(cfg);
    const int s = cfg.bottleneck_side();
    const StageChannels sc = stage_channels(cfg);
    ParamSet p;
    auto conv = [&](const std::string& name, int out, int in, int k) {
        Tensor w = make_tensor(name + ".w", {out, in, k, k});
        fill_normal(w, std::sqrt(2.0 / (in * k * k)), rng);
        p.tensors.push_back(std::move(w));
        p.tensors.push_back(make_tensor(name + ".b", {out}));
    };
    conv("enc1", 8, cfg.in_channels, 3);
    conv("enc2", 16, 8, 3);
    conv("enc3", 32, 16, 3);
    if (cfg.variant == Variant::Unet) conv("enc4", 32, 32, 3);

    Tensor mu_w = make_tensor("head_mu.w", {kHeadWidth, 32});
    fill_normal(mu_w, 0.3 / std::sqrt(32.0), rng);
    p.tensors.push_back(std::move(mu_w));
    p.tensors.push_back(make_tensor("head_mu.b", {kHeadWidth}));

    // The sigma head starts with spread column biases so the constructed
    // covariance begins on the prior's scale instead of collapsed near zero,
    // which would blow up the KL term's log-determinant.
    Tensor sg_w = make_tensor("head_sigma.w", {kHeadWidth, 32});
    fill_normal(sg_w, 0.1, rng);
    p.tensors.push_back(std::move(sg_w));
    Tensor sg_b = make_tensor("head_sigma.b", {kHeadWidth});
    fill_normal(sg_b, 0.3, rng);
    p.tensors.push_back(std::move(sg_b));

    Tensor proj_w = make_tensor("proj.w", {s * s * 32, kHeadWidth});
    fill_normal(proj_w, std::sqrt(2.0 / kHeadWidth), rng);
    p.tensors.push_back(std::move(proj_w));
    p.tensors.push_back(make_tensor("proj.b", {s * s * 32}));

    if (cfg.variant == Variant::Unet) conv("dec4", 32, sc.dec4_in, 3);
    conv("dec3", 16, sc.dec3_in, 3);
    conv("dec2", 8, sc.dec2_in, 3);
    conv("dec1", 8, 8, 3);

    Tensor outc_w = make_tensor("outc.w", {2, 8, 1, 1});
    fill_normal(outc_w, 0.01, rng);
    p.tensors.push_back(std::move(outc_w));
    p.tensors.push_back(make_tensor("outc.b", {2}));
    return p;
}

Tensor4 conv_forward(const Tensor4& in, const Tensor& w, const Tensor& b,
                     int stride, int pad) {
    check_conv_shapes(in, w, stride, pad);
    const int k = conv_kernel(w);
    const int cout = w.shape[0];
    const int ho = (in.h + 2 * pad - k) / stride + 1;
    const int wo = (in.w + 2 * pad - k) / stride + 1;
    const Eigen::MatrixXd col = im2col(in, k, stride, pad, ho, wo);
    Eigen::Map<const RowMat> K(w.data.data(), cout, in.c * k * k);
    const Eigen::MatrixXd out_mat = K * col;
    Tensor4 out(in.n, cout, ho, wo);
    for (int bi = 0; bi < in.n; ++bi) {
        for (int co = 0; co < cout; ++co) {
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    const std::int64_t cidx =
                        (static_cast<std::int64_t>(bi) * ho + oy) * wo + ox;
                    out.at(bi, co, oy, ox) = out_mat(co, cidx) + b.data[co];
                }
            }
        }
    }
    return out;
}

ConvGrads conv_backward(const Tensor4& in, const Tensor& w, const Tensor4& dout,
                        int stride, int pad) {
    check_conv_shapes(in, w, stride, pad);
    const int k = conv_kernel(w);
    const int cout = w.shape[0];
    const int ho = dout.h, wo = dout.w;
    if (dout.c != cout || dout.n != in.n) {
        throw UsageError("conv backward output shape mismatch for " + w.name);
    }
    const Eigen::MatrixXd col = im2col(in, k, stride, pad, ho, wo);
    Eigen::MatrixXd dout_mat(cout, static_cast<std::int64_t>(in.n) * ho * wo);
    for (int bi = 0; bi < in.n; ++bi) {
        for (int co = 0; co < cout; ++co) {
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    dout_mat(co, (static_cast<std::int64_t>(bi) * ho + oy) * wo + ox) =
                        dout.at(bi, co, oy, ox);
                }
            }
        }
    }
    Eigen::Map<const RowMat> K(w.data.data(), cout, in.c * k * k);
    const RowMat dK = dout_mat * col.transpose();
    const Eigen::MatrixXd dcol = K.transpose() * dout_mat;

    ConvGrads g;
    g.dw.assign(dK.data(), dK.data() + dK.size());
    g.db.resize(cout);
    for (int co = 0; co < cout; ++co) g.db[co] = dout_mat.row(co).sum();
    g.din = Tensor4(in.n, in.c, in.h, in.w);
    for (int bi = 0; bi < in.n; ++bi) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const std::int64_t cidx =
                    (static_cast<std::int64_t>(bi) * ho + oy) * wo + ox;
                int row = 0;
                for (int ci = 0; ci < in.c; ++ci) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        for (int kx = 0; kx < k; ++kx, ++row) {
                            const int ix = ox * stride + kx - pad;
                            if (iy >= 0 && iy < in.h && ix >= 0 && ix < in.w) {
                                g.din.at(bi, ci, iy, ix) += dcol(row, cidx);
                            }
                        }
                    }
                }
            }
        }
    }
    return g;
}

Tensor4 leaky_relu(const Tensor4& x) {
    Tensor4 out = x;
    for (double& v : out.data) v = v > 0.0 ? v : kLeakySlope * v;
    return out;
}

Tensor4 leaky_relu_backward(const Tensor4& x_pre, const Tensor4& dout) {
    if (x_pre.data.size() != dout.data.size()) {
        throw UsageError("rectifier backward size mismatch");
    }
    Tensor4 din = dout;
    for (size_t i = 0; i < din.data.size(); ++i) {
        if (x_pre.data[i] <= 0.0) din.data[i] *= kLeakySlope;
    }
    return din;
}

Tensor4 upsample2(const Tensor4& x) {
    Tensor4 out(x.n, x.c, x.h * 2, x.w * 2);
    for (int b = 0; b < x.n; ++b) {
        for (int c = 0; c < x.c; ++c) {
            for (int y = 0; y < out.h; ++y) {
                for (int xx = 0; xx < out.w; ++xx) {
                    out.at(b, c, y, xx) = x.at(b, c, y / 2, xx / 2);
                }
            }
        }
    }
    return out;
}

Tensor4 upsample2_backward(const Tensor4& dout) {
    if (dout.h % 2 != 0 || dout.w % 2 != 0) {
        throw UsageError("upsample backward needs even dims");
    }
    Tensor4 din(dout.n, dout.c, dout.h / 2, dout.w / 2);
    for (int b = 0; b < dout.n; ++b) {
        for (int c = 0; c < dout.c; ++c) {
            for (int y = 0; y < dout.h; ++y) {
                for (int x = 0; x < dout.w; ++x) {
                    din.at(b, c, y / 2, x / 2) += dout.at(b, c, y, x);
                }
            }
        }
    }
    return din;
}

Eigen::MatrixXd global_avg_pool(const Tensor4& x) {
    Eigen::MatrixXd out(x.n, x.c);
    const double inv = 1.0 / (static_cast<double>(x.h) * x.w);
    for (int b = 0; b < x.n; ++b) {
        for (int c = 0; c < x.c; ++c) {
            double s = 0.0;
            for (int y = 0; y < x.h; ++y) {
                for (int xx = 0; xx < x.w; ++xx) s += x.at(b, c, y, xx);
            }
            out(b, c) = s * inv;
        }
    }
    return out;
}

Tensor4 global_avg_pool_backward(int h, int w, const Eigen::MatrixXd& dpooled) {
    Tensor4 din(static_cast<int>(dpooled.rows()), static_cast<int>(dpooled.cols()), h, w);
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int b = 0; b < din.n; ++b) {
        for (int c = 0; c < din.c; ++c) {
            const double g = dpooled(b, c) * inv;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) din.at(b, c, y, x) = g;
            }
        }
    }
    return din;
}

EncoderOut encoder_forward(const ParamSet& params, const Tensor4& batch,
                           const NetConfig& cfg) {
    validate_config(cfg);
    if (batch.c != cfg.in_channels || batch.h != cfg.patch || batch.w != cfg.patch) {
        throw UsageError("encoder input shape does not match config");
    }
    if (batch.n < 1) throw UsageError("batch must be >= 1");
    EncoderOut out;
    out.e1_pre = conv_forward(batch, params.at("enc1.w"), params.at("enc1.b"), 2, 1);
    out.e1 = leaky_relu(out.e1_pre);
    out.e2_pre = conv_forward(out.e1, params.at("enc2.w"), params.at("enc2.b"), 2, 1);
    out.e2 = leaky_relu(out.e2_pre);
    out.e3_pre = conv_forward(out.e2, params.at("enc3.w"), params.at("enc3.b"), 2, 1);
    out.e3 = leaky_relu(out.e3_pre);
    out.min_abs_preact =
        std::min({min_abs(out.e1_pre), min_abs(out.e2_pre), min_abs(out.e3_pre)});
    const Tensor4* top = &out.e3;
    if (cfg.variant == Variant::Unet) {
        out.e4_pre = conv_forward(out.e3, params.at("enc4.w"), params.at("enc4.b"), 1, 1);
        out.e4 = leaky_relu(out.e4_pre);
        out.min_abs_preact = std::min(out.min_abs_preact, min_abs(out.e4_pre));
        top = &out.e4;
    }
    out.pooled = global_avg_pool(*top);
    out.heads.mu_head =
        linear_forward(out.pooled, params.at("head_mu.w"), params.at("head_mu.b"));
    out.heads.sigma_head =
        linear_forward(out.pooled, params.at("head_sigma.w"), params.at("head_sigma.b"));
    return out;
}

DecoderOut decoder_forward(const ParamSet& params, const LatentSample& z,
                           const std::vector<Tensor4>& skips, const NetConfig& cfg) {
    validate_config(cfg);
    if (z.z.cols() != kHeadWidth) throw UsageError("latent rows must have 50 entries");
    const int B = static_cast<int>(z.z.rows());
    const int s = cfg.bottleneck_side();
    const bool unet = cfg.variant == Variant::Unet;
    if (!unet && !skips.empty()) {
        throw UsageError("plain variant takes no skip features");
    }
    if (unet && skips.size() != 3) {
        throw UsageError("unet variant needs skips {e1, e2, e4}");
    }

    DecoderOut out;
    out.proj_pre = linear_forward(z.z, params.at("proj.w"), params.at("proj.b"));
    out.proj_map = Tensor4(B, 32, s, s);
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < 32; ++c) {
            for (int y = 0; y < s; ++y) {
                for (int x = 0; x < s; ++x) {
                    const double v = out.proj_pre(b, c * s * s + y * s + x);
                    out.proj_map.at(b, c, y, x) = v > 0.0 ? v : kLeakySlope * v;
                }
            }
        }
    }
    out.min_abs_preact = min_abs(out.proj_pre);

    const Tensor4* cur = &out.proj_map;
    if (unet) {
        out.d4_in = concat_channels(out.proj_map, skips[2]);
        out.d4_pre = conv_forward(out.d4_in, params.at("dec4.w"), params.at("dec4.b"), 1, 1);
        out.d4 = leaky_relu(out.d4_pre);
        out.min_abs_preact = std::min(out.min_abs_preact, min_abs(out.d4_pre));
        cur = &out.d4;
    }

    Tensor4 u3 = upsample2(*cur);
    out.d3_in = unet ? concat_channels(u3, skips[1]) : std::move(u3);
    out.d3_pre = conv_forward(out.d3_in, params.at("dec3.w"), params.at("dec3.b"), 1, 1);
    out.d3 = leaky_relu(out.d3_pre);

    Tensor4 u2 = upsample2(out.d3);
    out.d2_in = unet ? concat_channels(u2, skips[0]) : std::move(u2);
    out.d2_pre = conv_forward(out.d2_in, params.at("dec2.w"), params.at("dec2.b"), 1, 1);
    out.d2 = leaky_relu(out.d2_pre);

    out.d1_in = upsample2(out.d2);
    out.d1_pre = conv_forward(out.d1_in, params.at("dec1.w"), params.at("dec1.b"), 1, 1);
    out.d1 = leaky_relu(out.d1_pre);

    out.logits = conv_forward(out.d1, params.at("outc.w"), params.at("outc.b"), 1, 0);
    out.min_abs_preact = std::min({out.min_abs_preact, min_abs(out.d3_pre),
                                   min_abs(out.d2_pre), min_abs(out.d1_pre)});
    return out;
}

namespace {

struct PixelWeights {
    double w0 = 1.0, w1 = 1.0;
};

PixelWeights class_weights(const Mask& gt) {
    const int total = gt.w * gt.h;
    const int n1 = std::max(1, gt.count_foreground());
    const int n0 = std::max(1, total - gt.count_foreground());
    const double inv0 = 1.0 / n0, inv1 = 1.0 / n1;
    const double norm = 2.0 / (inv0 + inv1);
    return {inv0 * norm, inv1 * norm};
}

void check_loss_shapes(const Tensor4& logits, const std::vector<Mask>& gt) {
    if (logits.c != 2) throw UsageError("logits must have 2 class channels");
    if (static_cast<int>(gt.size()) != logits.n) {
        throw UsageError("one ground-truth mask per batch row required");
    }
    for (const Mask& m : gt) {
        if (m.w != logits.w || m.h != logits.h) {
            throw UsageError("ground-truth mask dims do not match logits");
        }
    }
}

}  // namespace

ConsLoss loss_construction(const Tensor4& logits, const std::vector<Mask>& gt) {
    check_loss_shapes(logits, gt);
    const int B = logits.n, H = logits.h, W = logits.w;
    double ce_sum = 0.0, j_sum = 0.0;
    for (int b = 0; b < B; ++b) {
        const PixelWeights pw = class_weights(gt[b]);
        double ce = 0.0, inter = 0.0, uni = 0.0;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double l0 = logits.at(b, 0, y, x), l1 = logits.at(b, 1, y, x);
                const double m = std::max(l0, l1);
                const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
                const double p1 = std::exp(l1 - lse);
                const int g = gt[b].at(x, y) ? 1 : 0;
                ce += (g ? pw.w1 * (lse - l1) : pw.w0 * (lse - l0));
                inter += p1 * g;
                uni += p1 + g - p1 * g;
            }
        }
        ce_sum += ce / (static_cast<double>(H) * W);
        j_sum += (inter + kJaccardEps) / (uni + kJaccardEps);
    }
    ConsLoss out;
    out.ce = ce_sum / B;
    out.lj = 1.0 - j_sum / B;
    out.total = out.ce + out.lj;
    return out;
}

Tensor4 loss_construction_backward(const Tensor4& logits, const std::vector<Mask>& gt) {
    check_loss_shapes(logits, gt);
    const int B = logits.n, H = logits.h, W = logits.w;
    Tensor4 dlogits(B, 2, H, W);
    const double px_norm = 1.0 / (static_cast<double>(B) * H * W);
    for (int b = 0; b < B; ++b) {
        const PixelWeights pw = class_weights(gt[b]);
        // Soft-Jaccard accumulators need a first pass.
        double inter = 0.0, uni = 0.0;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double l0 = logits.at(b, 0, y, x), l1 = logits.at(b, 1, y, x);
                const double p1 = 1.0 / (1.0 + std::exp(l0 - l1));
                const int g = gt[b].at(x, y) ? 1 : 0;
                inter += p1 * g;
                uni += p1 + g - p1 * g;
            }
        }
        const double denom = (uni + kJaccardEps) * (uni + kJaccardEps);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double l0 = logits.at(b, 0, y, x), l1 = logits.at(b, 1, y, x);
                const double p1 = 1.0 / (1.0 + std::exp(l0 - l1));
                const double p0 = 1.0 - p1;
                const int g = gt[b].at(x, y) ? 1 : 0;
                const double wce = g ? pw.w1 : pw.w0;
                // Cross entropy: softmax minus one-hot, class-weighted.
                double dl1 = wce * (p1 - g) * px_norm;
                double dl0 = wce * (p0 - (1 - g)) * px_norm;
                // Soft Jaccard: dJ/dp1 with I linear in p1 (slope g) and
                // U linear in p1 (slope 1 - g).
                const double dj_dp1 =
                    (g * (uni + kJaccardEps) - (inter + kJaccardEps) * (1 - g)) / denom;
                const double dlj_dp1 = -dj_dp1 / B;
                const double chain = dlj_dp1 * p1 * p0;
                dl1 += chain;
                dl0 -= chain;
                dlogits.at(b, 0, y, x) = dl0;
                dlogits.at(b, 1, y, x) = dl1;
            }
        }
    }
    return dlogits;
}

double loss_total(double l_cons, double l_kl, double beta) {
    if (beta < 0.0) throw UsageError("beta must be >= 0");
    return l_cons + beta * l_kl;
}

BackwardResult backward(const ParamSet& params, const Tensor4& batch,
                        const std::vector<Mask>& gt, const GaussianND& prior,
                        double beta, const NetConfig& cfg, Rng& rng) {
    const Eigen::MatrixXd eps = draw_prior_eps(prior, batch.n, rng);
    return backward_with_eps(params, batch, gt, prior, beta, cfg, eps);
}

namespace {

std::vector<Tensor4> collect_skips(const EncoderOut& enc, const NetConfig& cfg) {
    if (cfg.variant != Variant::Unet) return {};
    return {enc.e1, enc.e2, enc.e4};
}

void check_finite_loss(const LossBreakdown& l) {
    if (std::isfinite(l.total)) return;
    throw NumericError("non-finite loss: ce=" + std::to_string(l.ce) +
                       " lj=" + std::to_string(l.lj) + " kl=" + std::to_string(l.kl));
}

double min_sigma_norm(const Eigen::MatrixXd& sigma_head) {
    double m = std::numeric_limits<double>::infinity();
    for (int c = 0; c < sigma_head.cols(); ++c) {
        m = std::min(m, sigma_head.col(c).norm());
    }
    return m;
}

}  // namespace

BackwardResult backward_with_eps(const ParamSet& params, const Tensor4& batch,
                                 const std::vector<Mask>& gt, const GaussianND& prior,
                                 double beta, const NetConfig& cfg,
                                 const Eigen::MatrixXd& eps) {
    if (eps.rows() != batch.n || eps.cols() != kHeadWidth) {
        throw UsageError("eps must be batch x 50");
    }
    const bool unet = cfg.variant == Variant::Unet;
    const int B = batch.n;

    const EncoderOut enc = encoder_forward(params, batch, cfg);
    const GaussianND post = posterior_from_heads(enc.heads);
    const KlGrad klg = kl_divergence_grad(post, prior);
    const LatentSample z = reparameterize(prior, post, eps);
    const std::vector<Tensor4> skips = collect_skips(enc, cfg);
    const DecoderOut dec = decoder_forward(params, z, skips, cfg);
    const ConsLoss cons = loss_construction(dec.logits, gt);

    BackwardResult res;
    res.loss.ce = cons.ce;
    res.loss.lj = cons.lj;
    res.loss.cons = cons.total;
    res.loss.kl = klg.value;
    res.loss.total = loss_total(cons.total, klg.value, beta);
    res.posterior = post;
    res.min_abs_preact = std::min(enc.min_abs_preact, dec.min_abs_preact);
    res.min_norm = min_sigma_norm(enc.heads.sigma_head);
    res.min_var = post.sigma.diagonal().minCoeff();
    check_finite_loss(res.loss);

    res.grads = params.zeros_like();
    ParamSet& g = res.grads;

    // ---- decoder backward ----
    Tensor4 dlogits = loss_construction_backward(dec.logits, gt);
    ConvGrads cb = conv_backward(dec.d1, params.at("outc.w"), dlogits, 1, 0);
    accumulate(g.at("outc.w"), cb.dw);
    accumulate(g.at("outc.b"), cb.db);

    Tensor4 dd1_pre = leaky_relu_backward(dec.d1_pre, cb.din);
    cb = conv_backward(dec.d1_in, params.at("dec1.w"), dd1_pre, 1, 1);
    accumulate(g.at("dec1.w"), cb.dw);
    accumulate(g.at("dec1.b"), cb.db);

    Tensor4 dd2 = upsample2_backward(cb.din);
    Tensor4 dd2_pre = leaky_relu_backward(dec.d2_pre, dd2);
    cb = conv_backward(dec.d2_in, params.at("dec2.w"), dd2_pre, 1, 1);
    accumulate(g.at("dec2.w"), cb.dw);
    accumulate(g.at("dec2.b"), cb.db);

    Tensor4 du2, dskip_e1;
    if (unet) {
        auto parts = split_channels(cb.din, 16, 8);
        du2 = std::move(parts.first);
        dskip_e1 = std::move(parts.second);
    } else {
        du2 = std::move(cb.din);
    }

    Tensor4 dd3 = upsample2_backward(du2);
    Tensor4 dd3_pre = leaky_relu_backward(dec.d3_pre, dd3);
    cb = conv_backward(dec.d3_in, params.at("dec3.w"), dd3_pre, 1, 1);
    accumulate(g.at("dec3.w"), cb.dw);
    accumulate(g.at("dec3.b"), cb.db);

    Tensor4 du3, dskip_e2;
    if (unet) {
        auto parts = split_channels(cb.din, 32, 16);
        du3 = std::move(parts.first);
        dskip_e2 = std::move(parts.second);
    } else {
        du3 = std::move(cb.din);
    }

    Tensor4 dprev = upsample2_backward(du3);  // d4 (unet) or proj_map (plain)

    Tensor4 dproj_map, dskip_e4;
    if (unet) {
        Tensor4 dd4_pre = leaky_relu_backward(dec.d4_pre, dprev);
        cb = conv_backward(dec.d4_in, params.at("dec4.w"), dd4_pre, 1, 1);
        accumulate(g.at("dec4.w"), cb.dw);
        accumulate(g.at("dec4.b"), cb.db);
        auto parts = split_channels(cb.din, 32, 32);
        dproj_map = std::move(parts.first);
        dskip_e4 = std::move(parts.second);
    } else {
        dproj_map = std::move(dprev);
    }

    // proj linear backward through the reshape and rectifier.
    const int s = cfg.bottleneck_side();
    Eigen::MatrixXd dproj_pre(B, s * s * 32);
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < 32; ++c) {
            for (int y = 0; y < s; ++y) {
                for (int x = 0; x < s; ++x) {
                    const int col = c * s * s + y * s + x;
                    const double slope = dec.proj_pre(b, col) > 0.0 ? 1.0 : kLeakySlope;
                    dproj_pre(b, col) = dproj_map.at(b, c, y, x) * slope;
                }
            }
        }
    }
    Eigen::MatrixXd dz;
    linear_backward(z.z, params.at("proj.w"), dproj_pre, &dz, &g.at("proj.w"),
                    &g.at("proj.b"));

    // ---- bottleneck backward ----
    const ReparamGrad rg = reparameterize_backward(prior, post, eps, dz);
    const Eigen::Matrix<double, 5, 1> dmu_total =
        beta * klg.dmu_q + rg.dmu_prime;
    const Eigen::Matrix<double, 5, 5> dsigma_total =
        beta * klg.dsigma_q + rg.dsigma_prime;

    const Eigen::MatrixXd dmu_head = mean_head_backward(B, dmu_total);
    const Eigen::MatrixXd dsigma_head =
        cov_head_backward(enc.heads.sigma_head, dsigma_total);

    // ---- encoder backward ----
    Eigen::MatrixXd dpooled_mu, dpooled_sigma;
    linear_backward(enc.pooled, params.at("head_mu.w"), dmu_head, &dpooled_mu,
                    &g.at("head_mu.w"), &g.at("head_mu.b"));
    linear_backward(enc.pooled, params.at("head_sigma.w"), dsigma_head, &dpooled_sigma,
                    &g.at("head_sigma.w"), &g.at("head_sigma.b"));
    const Eigen::MatrixXd dpooled = dpooled_mu + dpooled_sigma;

    const Tensor4& top = unet ? enc.e4 : enc.e3;
    Tensor4 dtop = global_avg_pool_backward(top.h, top.w, dpooled);

    Tensor4 de3;
    if (unet) {
        add_inplace(dtop, dskip_e4);
        Tensor4 de4_pre = leaky_relu_backward(enc.e4_pre, dtop);
        cb = conv_backward(enc.e3, params.at("enc4.w"), de4_pre, 1, 1);
        accumulate(g.at("enc4.w"), cb.dw);
        accumulate(g.at("enc4.b"), cb.db);
        de3 = std::move(cb.din);
    } else {
        de3 = std::move(dtop);
    }

    Tensor4 de3_pre = leaky_relu_backward(enc.e3_pre, de3);
    cb = conv_backward(enc.e2, params.at("enc3.w"), de3_pre, 2, 1);
    accumulate(g.at("enc3.w"), cb.dw);
    accumulate(g.at("enc3.b"), cb.db);
    Tensor4 de2 = std::move(cb.din);
    if (unet) add_inplace(de2, dskip_e2);

    Tensor4 de2_pre = leaky_relu_backward(enc.e2_pre, de2);
    cb = conv_backward(enc.e1, params.at("enc2.w"), de2_pre, 2, 1);
    accumulate(g.at("enc2.w"), cb.dw);
    accumulate(g.at("enc2.b"), cb.db);
    Tensor4 de1 = std::move(cb.din);
    if (unet) add_inplace(de1, dskip_e1);

    Tensor4 de1_pre = leaky_relu_backward(enc.e1_pre, de1);
    cb = conv_backward(batch, params.at("enc1.w"), de1_pre, 2, 1);
    accumulate(g.at("enc1.w"), cb.dw);
    accumulate(g.at("enc1.b"), cb.db);

    return res;
}

LossBreakdown forward_loss_with_eps(const ParamSet& params, const Tensor4& batch,
                                    const std::vector<Mask>& gt,
                                    const GaussianND& prior, double beta,
                                    const NetConfig& cfg, const Eigen::MatrixXd& eps) {
    const EncoderOut enc = encoder_forward(params, batch, cfg);
    const GaussianND post = posterior_from_heads(enc.heads);
    const double kl = kl_divergence(post, prior);
    const LatentSample z = reparameterize(prior, post, eps);
    const DecoderOut dec = decoder_forward(params, z, collect_skips(enc, cfg), cfg);
    const ConsLoss cons = loss_construction(dec.logits, gt);
    LossBreakdown l;
    l.ce = cons.ce;
    l.lj = cons.lj;
    l.cons = cons.total;
    l.kl = kl;
    l.total = loss_total(cons.total, kl, beta);
    check_finite_loss(l);
    return l;
}

ForwardResult forward_pass(const ParamSet& params, const Tensor4& batch,
                           const GaussianND& prior, const NetConfig& cfg,
                           const Eigen::MatrixXd& eps) {
    const EncoderOut enc = encoder_forward(params, batch, cfg);
    ForwardResult out;
    out.heads = enc.heads;
    out.posterior = posterior_from_heads(enc.heads);
    out.z = reparameterize(prior, out.posterior, eps);
    out.logits = decoder_forward(params, out.z, collect_skips(enc, cfg), cfg).logits;
    return out;
}

BatchData batch_from_patches(const std::vector<FramePatch>& patches,
                             const std::vector<int>& indices) {
    if (indices.empty()) throw UsageError("batch indices must be non-empty");
    for (const int idx : indices) {
        if (idx < 0 || static_cast<size_t>(idx) >= patches.size()) {
            throw UsageError("batch index out of range");
        }
    }
    const int P = patches[static_cast<size_t>(indices[0])].gt_mask.w;
    BatchData out;
    out.images = Tensor4(static_cast<int>(indices.size()), 3, P, P);
    for (size_t b = 0; b < indices.size(); ++b) {
        const FramePatch& p = patches[static_cast<size_t>(indices[b])];
        if (p.gt_mask.w != P || p.gt_mask.h != P) {
            throw UsageError("patch sizes differ within one batch");
        }
        for (int ch = 0; ch < 3; ++ch) {
            for (int y = 0; y < P; ++y) {
                for (int x = 0; x < P; ++x) {
                    out.images.at(static_cast<int>(b), ch, y, x) = p.image.at(x, y, ch);
                }
            }
        }
        out.gt.push_back(p.gt_mask);
    }
    return out;
}

std::vector<Mask> logits_to_masks(const Tensor4& logits) {
    if (logits.c != 2) throw UsageError("logits must have 2 class channels");
    std::vector<Mask> out;
    for (int b = 0; b < logits.n; ++b) {
        Mask m(logits.w, logits.h);
        for (int y = 0; y < logits.h; ++y) {
            for (int x = 0; x < logits.w; ++x) {
                m.at(x, y) = logits.at(b, 1, y, x) > logits.at(b, 0, y, x) ? 1 : 0;
            }
        }
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<std::vector<double>> logits_to_probs(const Tensor4& logits) {
    if (logits.c != 2) throw UsageError("logits must have 2 class channels");
    std::vector<std::vector<double>> out;
    for (int b = 0; b < logits.n; ++b) {
        std::vector<double> p(static_cast<size_t>(logits.h) * logits.w);
        for (int y = 0; y < logits.h; ++y) {
            for (int x = 0; x < logits.w; ++x) {
                const double l0 = logits.at(b, 0, y, x), l1 = logits.at(b, 1, y, x);
                p[static_cast<size_t>(y) * logits.w + x] =
                    1.0 / (1.0 + std::exp(l0 - l1));
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace mvprior
