#include "mvprior/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mvprior/metrics.hpp"

namespace mvprior {

namespace {

constexpr std::uint64_t kInitStream = 0x11;
constexpr std::uint64_t kTrainStream = 0x7e;
constexpr std::uint64_t kValStream = 0xa1;

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void check_resume_matches(const Checkpoint& ck, const TrainConfig& cfg) {
    if (ck.config.variant != cfg.net.variant || ck.config.patch != cfg.net.patch ||
        ck.config.in_channels != cfg.net.in_channels) {
        throw DataError("resume checkpoint was trained with a different model config");
    }
    if (ck.step > cfg.steps) {
        throw DataError("resume checkpoint is already past the requested step budget");
    }
}

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
    validate_config(cfg.net);
    if (cfg.beta < 0.0) throw UsageError("beta must be >= 0");
    if (cfg.batch < 2) throw UsageError("batch size must be >= 2");
    if (cfg.steps < 1) throw UsageError("steps must be >= 1");
    if (cfg.cycle < 2) throw UsageError("cycle length must be >= 2");
    if (!(cfg.lr_min > 0.0) || !(cfg.lr_max > 0.0) || cfg.lr_min > cfg.lr_max) {
        throw UsageError("need 0 < lr_min <= lr_max");
    }
    if (cfg.val_interval < 1) throw UsageError("validation interval must be >= 1");
    if (cfg.save_every < 0) throw UsageError("save_every must be >= 0");
}

double lr_schedule(int step, const TrainConfig& cfg) {
    if (cfg.cycle <= 0) throw UsageError("cycle length must be > 0");
    if (step < 0) throw UsageError("step must be >= 0");
    const int pos = step % cfg.cycle;
    const double phase = 2.0 * pos / cfg.cycle;
    const double frac = 1.0 - std::abs(phase - 1.0);
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * frac;
}

void radam_update(ParamSet& params, const ParamSet& grads, ParamSet& m,
                  ParamSet& v, int t, double lr) {
    if (t < 1) throw UsageError("optimizer step count must be >= 1");
    if (params.tensors.size() != grads.tensors.size() ||
        params.tensors.size() != m.tensors.size() ||
        params.tensors.size() != v.tensors.size()) {
        throw UsageError("optimizer state layout mismatch");
    }
    const double beta1_t = std::pow(kBeta1, t);
    const double beta2_t = std::pow(kBeta2, t);
    const double rho_inf = 2.0 / (1.0 - kBeta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t);
    const bool rectified = rho_t > 4.0;
    double r = 1.0;
    if (rectified) {
        r = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                      ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    }
    for (size_t ti = 0; ti < params.tensors.size(); ++ti) {
        Tensor& p = params.tensors[ti];
        const Tensor& g = grads.tensors[ti];
        Tensor& mt = m.tensors[ti];
        Tensor& vt = v.tensors[ti];
        if (g.data.size() != p.data.size()) {
            throw UsageError("gradient shape mismatch at " + p.name);
        }
        for (size_t i = 0; i < p.data.size(); ++i) {
            mt.data[i] = kBeta1 * mt.data[i] + (1.0 - kBeta1) * g.data[i];
            vt.data[i] = kBeta2 * vt.data[i] + (1.0 - kBeta2) * g.data[i] * g.data[i];
            const double m_hat = mt.data[i] / (1.0 - beta1_t);
            if (rectified) {
                const double v_hat = std::sqrt(vt.data[i] / (1.0 - beta2_t));
                p.data[i] -= lr * r * m_hat / (v_hat + kAdamEps);
            } else {
                p.data[i] -= lr * m_hat;
            }
        }
    }
}

ValRecord validate(const ParamSet& params, const NetConfig& net,
                   const GaussianND& prior, const std::vector<FramePatch>& val,
                   int batch, std::uint64_t seed, int step) {
    if (val.empty()) throw UsageError("validation set must be non-empty");
    if (batch < 1) throw UsageError("validation batch must be >= 1");
    Eigen::VectorXd mu_acc = Eigen::VectorXd::Zero(kLatentVars);
    Eigen::MatrixXd sigma_acc = Eigen::MatrixXd::Zero(kLatentVars, kLatentVars);
    double nll = 0.0, mse = 0.0, j = 0.0, f = 0.0;
    int rows = 0, chunk = 0;
    for (size_t start = 0; start < val.size(); start += batch, ++chunk) {
        std::vector<int> idx;
        for (size_t i = start; i < val.size() && i < start + batch; ++i) {
            idx.push_back(static_cast<int>(i));
        }
        const BatchData bd = batch_from_patches(val, idx);
        Rng rng = Rng::derive(seed, {kValStream, static_cast<std::uint64_t>(step),
                                     static_cast<std::uint64_t>(chunk)});
        const Eigen::MatrixXd eps = draw_prior_eps(prior, bd.images.n, rng);
        const ForwardResult fwd = forward_pass(params, bd.images, prior, net, eps);
        const double w = static_cast<double>(bd.images.n);
        mu_acc += w * fwd.posterior.mu;
        sigma_acc += w * fwd.posterior.sigma;
        const std::vector<Mask> masks = logits_to_masks(fwd.logits);
        const auto probs = logits_to_probs(fwd.logits);
        for (int b = 0; b < bd.images.n; ++b) {
            nll += prob_nll(probs[b], bd.gt[b]);
            mse += prob_mse(probs[b], bd.gt[b]);
            j += jaccard(masks[b], bd.gt[b]);
            f += boundary_f(masks[b], bd.gt[b]);
            ++rows;
        }
    }
    const GaussianND pooled(mu_acc / rows, sigma_acc / rows);
    ValRecord rec;
    rec.step = step;
    rec.d_mah = mahalanobis(pooled, prior);
    rec.nll = nll / rows;
    rec.mse = mse / rows;
    rec.j = j / rows;
    rec.f = f / rows;
    return rec;
}

TrainResult run_training(const TrainConfig& cfg, const GaussianND& prior,
                         const std::vector<FramePatch>& train_patches,
                         const std::vector<FramePatch>& val_patches,
                         const std::optional<Checkpoint>& resume) {
    validate_train_config(cfg);
    if (train_patches.empty()) throw DataError("training set is empty");
    if (prior.k() != kLatentVars) throw UsageError("prior must be 5-dimensional");

    TrainResult out;
    Checkpoint& ck = out.state;
    if (resume) {
        check_resume_matches(*resume, cfg);
        ck = *resume;
    } else {
        ck.config = cfg.net;
        ck.seed = cfg.seed;
        ck.step = 0;
        Rng rng = Rng::derive(cfg.seed, {kInitStream});
        ck.params = init_params(cfg.net, rng);
        ck.opt_m = ck.params.zeros_like();
        ck.opt_v = ck.params.zeros_like();
    }
    const std::uint64_t seed = ck.seed;
    const int n_train = static_cast<int>(train_patches.size());

    if (!val_patches.empty() && ck.step == 0) {
        out.report.val_log.push_back(
            validate(ck.params, cfg.net, prior, val_patches, cfg.batch, seed, 0));
    }

    for (int s = ck.step; s < cfg.steps; ++s) {
        const double lr = lr_schedule(s, cfg);
        Rng rng = Rng::derive(seed, {kTrainStream, static_cast<std::uint64_t>(s)});
        std::vector<int> idx(cfg.batch);
        for (int& i : idx) i = static_cast<int>(rng.uniform_int(0, n_train - 1));
        const BatchData bd = batch_from_patches(train_patches, idx);
        const BackwardResult res =
            backward(ck.params, bd.images, bd.gt, prior, cfg.beta, cfg.net, rng);
        radam_update(ck.params, res.grads, ck.opt_m, ck.opt_v, s + 1, lr);
        ck.step = s + 1;

        StepRecord rec;
        rec.step = s;
        rec.lr = lr;
        rec.l_total = res.loss.total;
        rec.l_cons = res.loss.cons;
        rec.l_kl = res.loss.kl;
        out.report.train_log.push_back(rec);

        if (!val_patches.empty() && ck.step % cfg.val_interval == 0) {
            out.report.val_log.push_back(validate(ck.params, cfg.net, prior,
                                                  val_patches, cfg.batch, seed,
                                                  ck.step));
        }
        if (!cfg.checkpoint_path.empty()) {
            const bool periodic = cfg.save_every > 0 && ck.step % cfg.save_every == 0;
            if (periodic || ck.step == cfg.steps) {
                save_checkpoint(cfg.checkpoint_path, ck);
            }
        }
    }
    return out;
}

void write_train_csv(const std::string& path, const std::vector<StepRecord>& rows) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "step,lr,l_total,l_cons,l_kl\n";
    for (const StepRecord& r : rows) {
        os << r.step << ',' << format_number(r.lr) << ',' << format_number(r.l_total)
           << ',' << format_number(r.l_cons) << ',' << format_number(r.l_kl) << '\n';
    }
    if (!os) throw DataError("failed writing: " + path);
}

void write_val_csv(const std::string& path, const std::vector<ValRecord>& rows) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "step,d_mah,nll,mse,j,f\n";
    for (const ValRecord& r : rows) {
        os << r.step << ',' << format_number(r.d_mah) << ',' << format_number(r.nll)
           << ',' << format_number(r.mse) << ',' << format_number(r.j) << ','
           << format_number(r.f) << '\n';
    }
    if (!os) throw DataError("failed writing: " + path);
}

CsvTable read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open CSV: " + path);
    CsvTable table;
    std::string line;
    if (!std::getline(is, line)) throw DataError("CSV has no header: " + path);
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) table.columns.push_back(cell);
    if (table.columns.empty()) throw DataError("CSV header empty: " + path);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream rs(line);
        std::vector<double> row;
        while (std::getline(rs, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError("CSV cell is not numeric in " + path + ": " + cell);
            }
        }
        if (row.size() != table.columns.size()) {
            throw DataError("CSV row width mismatch in " + path);
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace mvprior
