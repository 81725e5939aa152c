#pragma once

#include <Eigen/Dense>

#include "mvprior/common.hpp"
#include "mvprior/gaussian.hpp"

namespace mvprior {

// The bottleneck works over 5 latent variables, each represented by 10
// neurons, so both head layers are 50 units wide.
inline constexpr int kLatentVars = 5;
inline constexpr int kDrawsPerVar = 10;
inline constexpr int kHeadWidth = kLatentVars * kDrawsPerVar;

/// Raw activations of the two 50-unit head layers for a batch of B inputs.
/// Columns [10i, 10i+10) belong to latent variable i.
struct HeadActivations {
    Eigen::MatrixXd mu_head;     // B x 50
    Eigen::MatrixXd sigma_head;  // B x 50
};

/// Batch of reparameterized latent samples. Stored as B x 50 with the same
/// variable-major column layout as HeadActivations; logically each row is a
/// 5 x 10 block of 10 samples per latent variable.
struct LatentSample {
    Eigen::MatrixXd z;  // B x 50
};

/// mu'_i: average of part i of mu_head over the batch and its 10 neurons.
Eigen::Matrix<double, 5, 1> mean_head(const HeadActivations& a);

/// Sigma': per part, the Euclidean norm of sigma_head along the batch axis
/// gives a length-10 vector; the 5 x 5 unbiased sample covariance (divisor 9)
/// of those five vectors is symmetric positive semi-definite by construction.
Eigen::Matrix<double, 5, 5> cov_head(const HeadActivations& a);

/// mean_head and cov_head packaged as a GaussianND.
GaussianND posterior_from_heads(const HeadActivations& a);

/// B rows, each holding 10 draws from the 5-D prior packed variable-major:
/// eps(b, 10i+j) is variable i of the row's j-th draw.
Eigen::MatrixXd draw_prior_eps(const GaussianND& prior, int batch, Rng& rng);

/// Affine per-variable map of prior draws into the posterior:
/// a_i = sigma'_i / sigma_i, b_i = mu'_i - mu_i * a_i, z = a_i * eps + b_i,
/// where sigma_i is the prior's marginal std and sigma'_i = sqrt(Sigma'_ii).
/// Off-diagonal posterior entries do not enter here; they only act through
/// the KL term of the loss.
LatentSample reparameterize(const GaussianND& prior, const GaussianND& post,
                            const Eigen::MatrixXd& eps);

/// Gradient of a scalar loss w.r.t. mu_head given d(loss)/d(mu').
Eigen::MatrixXd mean_head_backward(int batch, const Eigen::Matrix<double, 5, 1>& dmu);

/// Gradient w.r.t. sigma_head given d(loss)/d(Sigma'). Accepts an arbitrary
/// (not necessarily symmetric) upstream matrix. The norm's derivative at an
/// exactly zero norm is taken as 0.
Eigen::MatrixXd cov_head_backward(const Eigen::MatrixXd& sigma_head,
                                  const Eigen::Matrix<double, 5, 5>& dsigma);

/// Gradients w.r.t. the posterior parameters given d(loss)/dz. The Sigma'
/// part is diagonal because only sigma'_i = sqrt(Sigma'_ii) enters the map;
/// at sigma'_i = 0 the sqrt's subgradient is taken as 0.
struct ReparamGrad {
    Eigen::Matrix<double, 5, 1> dmu_prime;
    Eigen::Matrix<double, 5, 5> dsigma_prime;  // diagonal
};
ReparamGrad reparameterize_backward(const GaussianND& prior, const GaussianND& post,
                                    const Eigen::MatrixXd& eps,
                                    const Eigen::MatrixXd& dz);

}  // namespace mvprior
