#pragma once

#include <Eigen/Dense>
#include <string>

#include "mvprior/common.hpp"

namespace mvprior {

/// Full-covariance multivariate Gaussian. The covariance is symmetrized on
/// construction and checked to be positive semi-definite (tolerant Cholesky
/// with a jitter ladder, see cholesky_psd).
struct GaussianND {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;

    GaussianND() = default;
    GaussianND(Eigen::VectorXd mu_, Eigen::MatrixXd sigma_);

    int k() const { return static_cast<int>(mu.size()); }
};

/// Lower-triangular factor with sigma + jitter*I ~= L*L^T. strictly_pd is
/// true when every pivot stayed positive, i.e. the factor is invertible.
struct CholeskyResult {
    Eigen::MatrixXd L;
    bool strictly_pd = false;
    double jitter = 0.0;
    /// The ladder coefficient c with jitter = c * trace(sigma) / k.
    double jitter_coeff = 0.0;
};

/// Cholesky with a jitter ladder: try lambda = c * trace(sigma)/k for
/// c in {0, 1e-12, 1e-10, 1e-8, 1e-6}, first success wins. A zero pivot with
/// a (near-)zero residual column is tolerated and yields a zero column in L,
/// so rank-deficient covariances factor exactly (zero covariance -> L = 0).
/// Throws NumericError when every rung fails (indefinite matrix).
CholeskyResult cholesky_psd(const Eigen::MatrixXd& sigma);

/// Same ladder, but requires strictly positive pivots so that L is
/// invertible. Throws NumericError when no rung achieves that.
CholeskyResult cholesky_pd(const Eigen::MatrixXd& sigma);

/// Sample mean and unbiased (n-1) covariance over the rows of `samples`.
GaussianND fit_gaussian(const Eigen::MatrixXd& samples);

/// n rows of mu + L*eps with eps standard normal; deterministic given rng.
Eigen::MatrixXd sample_gaussian(const GaussianND& g, int n, Rng& rng);

/// D_KL(q || p) in closed form. Requires p strictly positive definite after
/// jitter; a singular q yields +infinity.
double kl_divergence(const GaussianND& q, const GaussianND& p);

/// KL value plus its exact gradients with respect to q's parameters.
/// When a jitter rung c > 0 was used for q, the gradient accounts for the
/// trace-proportional diagonal shift so it matches finite differences of
/// the actual computed value.
struct KlGrad {
    double value = 0.0;
    Eigen::VectorXd dmu_q;
    Eigen::MatrixXd dsigma_q;
};
KlGrad kl_divergence_grad(const GaussianND& q, const GaussianND& p);

/// Squared distance between the means under the averaged covariance:
/// (mu_p - mu_q)^T [(Sigma_p + Sigma_q)/2]^{-1} (mu_p - mu_q).
double mahalanobis(const GaussianND& p, const GaussianND& q);

/// Gaussian log-density at x via Cholesky solve.
double log_pdf(const GaussianND& g, const Eigen::VectorXd& x);

// JSON form: {"k": int, "mu": [..], "sigma": [[..]]}, row-major full matrix.
std::string gaussian_to_json(const GaussianND& g);
GaussianND gaussian_from_json(const std::string& text);
void save_gaussian(const std::string& path, const GaussianND& g);
GaussianND load_gaussian(const std::string& path);

/// Built-in 5-variable motion prior (scale-x, scale-y, sin-rotation,
/// translation-x, translation-y), measured on a full-scale video corpus.
/// Used whenever no prior file is supplied.
GaussianND default_prior();

/// The same prior with dependencies dropped: each variable as an independent
/// normal with the published rounded marginal standard deviations.
GaussianND default_prior_marginals();

}  // namespace mvprior
