#include "mvprior/bottleneck.hpp"

#include <cmath>

namespace mvprior {

namespace {

void check_heads_shape(const Eigen::MatrixXd& m, const char* name) {
    if (m.cols() != kHeadWidth || m.rows() < 1) {
        throw UsageError(std::string(name) + " must be B x 50 with B >= 1");
    }
}

// Norm table: n(i, j) = Euclidean norm over the batch of sigma_head column
// 10i + j, i.e. one length-10 observation vector per latent variable.
Eigen::Matrix<double, kLatentVars, kDrawsPerVar> norm_table(
    const Eigen::MatrixXd& sigma_head) {
    Eigen::Matrix<double, kLatentVars, kDrawsPerVar> n;
    for (int i = 0; i < kLatentVars; ++i) {
        for (int j = 0; j < kDrawsPerVar; ++j) {
            n(i, j) = sigma_head.col(i * kDrawsPerVar + j).norm();
        }
    }
    return n;
}

}  // namespace

Eigen::Matrix<double, 5, 1> mean_head(const HeadActivations& a) {
    check_heads_shape(a.mu_head, "mu_head");
    Eigen::Matrix<double, 5, 1> mu;
    for (int i = 0; i < kLatentVars; ++i) {
        mu[i] = a.mu_head.middleCols(i * kDrawsPerVar, kDrawsPerVar).mean();
    }
    return mu;
}

Eigen::Matrix<double, 5, 5> cov_head(const HeadActivations& a) {
    check_heads_shape(a.sigma_head, "sigma_head");
    const auto n = norm_table(a.sigma_head);
    Eigen::Matrix<double, kLatentVars, 1> nbar = n.rowwise().mean();
    const auto centered = n.colwise() - nbar;
    Eigen::Matrix<double, 5, 5> sigma;
    for (int i = 0; i < kLatentVars; ++i) {
        for (int k = i; k < kLatentVars; ++k) {
            const double v = centered.row(i).dot(centered.row(k)) / (kDrawsPerVar - 1.0);
            sigma(i, k) = v;
            sigma(k, i) = v;
        }
    }
    return sigma;
}

GaussianND posterior_from_heads(const HeadActivations& a) {
    return GaussianND(mean_head(a), cov_head(a));
}

Eigen::MatrixXd draw_prior_eps(const GaussianND& prior, int batch, Rng& rng) {
    if (prior.k() != kLatentVars) throw UsageError("prior must be 5-dimensional");
    if (batch < 1) throw UsageError("batch must be >= 1");
    const Eigen::MatrixXd draws = sample_gaussian(prior, batch * kDrawsPerVar, rng);
    Eigen::MatrixXd eps(batch, kHeadWidth);
    for (int b = 0; b < batch; ++b) {
        for (int j = 0; j < kDrawsPerVar; ++j) {
            for (int i = 0; i < kLatentVars; ++i) {
                eps(b, i * kDrawsPerVar + j) = draws(b * kDrawsPerVar + j, i);
            }
        }
    }
    return eps;
}

LatentSample reparameterize(const GaussianND& prior, const GaussianND& post,
                            const Eigen::MatrixXd& eps) {
    if (prior.k() != kLatentVars || post.k() != kLatentVars) {
        throw UsageError("prior and posterior must be 5-dimensional");
    }
    check_heads_shape(eps, "eps");
    LatentSample out;
    out.z.resize(eps.rows(), kHeadWidth);
    for (int i = 0; i < kLatentVars; ++i) {
        const double var_i = prior.sigma(i, i);
        if (!(var_i > 0.0)) {
            throw UsageError("prior marginal std is zero; reparameterization undefined");
        }
        const double sigma_i = std::sqrt(var_i);
        const double sigma_p = std::sqrt(std::max(post.sigma(i, i), 0.0));
        const double a = sigma_p / sigma_i;
        const double b = post.mu[i] - prior.mu[i] * a;
        out.z.middleCols(i * kDrawsPerVar, kDrawsPerVar) =
            (a * eps.middleCols(i * kDrawsPerVar, kDrawsPerVar)).array() + b;
    }
    return out;
}

Eigen::MatrixXd mean_head_backward(int batch, const Eigen::Matrix<double, 5, 1>& dmu) {
    if (batch < 1) throw UsageError("batch must be >= 1");
    Eigen::MatrixXd d(batch, kHeadWidth);
    for (int i = 0; i < kLatentVars; ++i) {
        d.middleCols(i * kDrawsPerVar, kDrawsPerVar)
            .setConstant(dmu[i] / (batch * static_cast<double>(kDrawsPerVar)));
    }
    return d;
}

Eigen::MatrixXd cov_head_backward(const Eigen::MatrixXd& sigma_head,
                                  const Eigen::Matrix<double, 5, 5>& dsigma) {
    check_heads_shape(sigma_head, "sigma_head");
    const auto n = norm_table(sigma_head);
    Eigen::Matrix<double, kLatentVars, 1> nbar = n.rowwise().mean();
    const Eigen::Matrix<double, kLatentVars, kDrawsPerVar> centered =
        n.colwise() - nbar;

    // d(loss)/d(centered) for Sigma'_{ik} = centered_i . centered_k / 9.
    const Eigen::Matrix<double, 5, 5> gsym = dsigma + dsigma.transpose();
    Eigen::Matrix<double, kLatentVars, kDrawsPerVar> dc =
        (gsym * centered) / (kDrawsPerVar - 1.0);
    // Centering distributes -1/10 of each row's total back to every entry.
    Eigen::Matrix<double, kLatentVars, 1> row_mean = dc.rowwise().mean();
    Eigen::Matrix<double, kLatentVars, kDrawsPerVar> dn = dc.colwise() - row_mean;

    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(sigma_head.rows(), kHeadWidth);
    for (int i = 0; i < kLatentVars; ++i) {
        for (int j = 0; j < kDrawsPerVar; ++j) {
            const int col = i * kDrawsPerVar + j;
            if (n(i, j) > 0.0) {
                d.col(col) = (dn(i, j) / n(i, j)) * sigma_head.col(col);
            }
        }
    }
    return d;
}

ReparamGrad reparameterize_backward(const GaussianND& prior, const GaussianND& post,
                                    const Eigen::MatrixXd& eps,
                                    const Eigen::MatrixXd& dz) {
    if (eps.rows() != dz.rows() || eps.cols() != dz.cols()) {
        throw UsageError("eps and dz shapes differ");
    }
    check_heads_shape(eps, "eps");
    ReparamGrad g;
    g.dmu_prime.setZero();
    g.dsigma_prime.setZero();
    for (int i = 0; i < kLatentVars; ++i) {
        const double sigma_i = std::sqrt(prior.sigma(i, i));
        const auto dz_i = dz.middleCols(i * kDrawsPerVar, kDrawsPerVar);
        const auto eps_i = eps.middleCols(i * kDrawsPerVar, kDrawsPerVar);
        const double db = dz_i.sum();
        const double da = dz_i.cwiseProduct(eps_i).sum();
        g.dmu_prime[i] = db;
        const double dsigma_p = (da - prior.mu[i] * db) / sigma_i;
        const double sigma_p = std::sqrt(std::max(post.sigma(i, i), 0.0));
        if (sigma_p > 0.0) {
            g.dsigma_prime(i, i) = dsigma_p / (2.0 * sigma_p);
        }
    }
    return g;
}

}  // namespace mvprior
