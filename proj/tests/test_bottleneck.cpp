#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "mvprior/bottleneck.hpp"
#include "mvprior/common.hpp"
#include "mvprior/gaussian.hpp"

using namespace mvprior;

namespace {

HeadActivations random_heads(int batch, Rng& rng, double spread = 1.0) {
    HeadActivations a;
    a.mu_head = Eigen::MatrixXd(batch, kHeadWidth);
    a.sigma_head = Eigen::MatrixXd(batch, kHeadWidth);
    for (int b = 0; b < batch; ++b) {
        for (int j = 0; j < kHeadWidth; ++j) {
            a.mu_head(b, j) = spread * rng.normal();
            a.sigma_head(b, j) = spread * rng.normal();
        }
    }
    return a;
}

// Direct loop transcription of the posterior construction, kept free of any
// matrix shortcuts so it can act as an oracle.
Eigen::Matrix<double, 5, 1> naive_mean(const Eigen::MatrixXd& mu_head) {
    Eigen::Matrix<double, 5, 1> out;
    const int batch = static_cast<int>(mu_head.rows());
    for (int i = 0; i < 5; ++i) {
        double acc = 0.0;
        for (int b = 0; b < batch; ++b) {
            for (int j = 0; j < 10; ++j) acc += mu_head(b, 10 * i + j);
        }
        out[i] = acc / (batch * 10.0);
    }
    return out;
}

Eigen::Matrix<double, 5, 5> naive_cov(const Eigen::MatrixXd& sigma_head) {
    const int batch = static_cast<int>(sigma_head.rows());
    double table[5][10];
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 10; ++j) {
            double ss = 0.0;
            for (int b = 0; b < batch; ++b) {
                ss += sigma_head(b, 10 * i + j) * sigma_head(b, 10 * i + j);
            }
            table[i][j] = std::sqrt(ss);
        }
    }
    double mean[5];
    for (int i = 0; i < 5; ++i) {
        mean[i] = 0.0;
        for (int j = 0; j < 10; ++j) mean[i] += table[i][j];
        mean[i] /= 10.0;
    }
    Eigen::Matrix<double, 5, 5> out;
    for (int i = 0; i < 5; ++i) {
        for (int k = 0; k < 5; ++k) {
            double acc = 0.0;
            for (int j = 0; j < 10; ++j) {
                acc += (table[i][j] - mean[i]) * (table[k][j] - mean[k]);
            }
            out(i, k) = acc / 9.0;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("constant mean head averages to the constant") {
    HeadActivations a;
    a.mu_head = Eigen::MatrixXd::Constant(8, kHeadWidth, 0.37);
    a.sigma_head = Eigen::MatrixXd::Zero(8, kHeadWidth);
    const auto mu = mean_head(a);
    for (int i = 0; i < 5; ++i) CHECK(mu[i] == doctest::Approx(0.37).epsilon(1e-14));
}

TEST_CASE("mean head averages each block of ten columns separately") {
    HeadActivations a;
    a.mu_head = Eigen::MatrixXd::Zero(4, kHeadWidth);
    for (int i = 0; i < 5; ++i) {
        for (int b = 0; b < 4; ++b) {
            for (int j = 0; j < 10; ++j) a.mu_head(b, 10 * i + j) = i + 1.0 + 0.1 * b;
        }
    }
    const auto mu = mean_head(a);
    for (int i = 0; i < 5; ++i) {
        CHECK(mu[i] == doctest::Approx(i + 1.0 + 0.15).epsilon(1e-14));
    }
}

TEST_CASE("mean head matches a naive loop on random activations") {
    Rng rng(100);
    const HeadActivations a = random_heads(32, rng);
    const auto fast = mean_head(a);
    const auto slow = naive_mean(a.mu_head);
    CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("constant sigma head gives zero spread") {
    HeadActivations a;
    a.mu_head = Eigen::MatrixXd::Zero(6, kHeadWidth);
    a.sigma_head = Eigen::MatrixXd::Constant(6, kHeadWidth, 0.8);
    const auto cov = cov_head(a);
    CHECK(cov.cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("duplicated variable parts produce equal rows and matching cross term") {
    Rng rng(200);
    HeadActivations a = random_heads(16, rng);
    // Make part 1 a copy of part 0: the table rows coincide, so variance and
    // covariance of the two parts are identical.
    a.sigma_head.middleCols(10, 10) = a.sigma_head.middleCols(0, 10);
    const auto cov = cov_head(a);
    CHECK(cov(0, 0) == doctest::Approx(cov(1, 1)).epsilon(1e-12));
    CHECK(cov(0, 1) == doctest::Approx(cov(0, 0)).epsilon(1e-12));
    CHECK((cov.row(0) - cov.row(1)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sigma-head covariance matches a naive oracle and is symmetric PSD") {
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng = Rng::derive(300, {static_cast<std::uint64_t>(trial)});
        const int batch = 2 + static_cast<int>(rng.uniform_int(0, 30));
        const HeadActivations a = random_heads(batch, rng, rng.uniform(0.1, 3.0));
        const auto cov = cov_head(a);
        const auto oracle = naive_cov(a.sigma_head);
        CHECK((cov - oracle).cwiseAbs().maxCoeff() < 1e-11);
        CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
        const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 5, 5>> es(cov);
        CHECK(es.eigenvalues().minCoeff() >= -1e-10);
    }
}

TEST_CASE("posterior assembly always yields a usable gaussian") {
    for (int trial = 0; trial < 200; ++trial) {
        Rng rng = Rng::derive(400, {static_cast<std::uint64_t>(trial)});
        const int batch = 2 + static_cast<int>(rng.uniform_int(0, 14));
        const HeadActivations a = random_heads(batch, rng, rng.uniform(0.05, 2.0));
        const GaussianND post = posterior_from_heads(a);
        REQUIRE(post.k() == 5);
        CHECK((post.mu - naive_mean(a.mu_head)).cwiseAbs().maxCoeff() < 1e-12);
        // Construction runs the PSD check; the distance to the prior must be
        // finite because the averaged covariance is strictly positive.
        const double d = mahalanobis(post, default_prior());
        CHECK(std::isfinite(d));
        CHECK(d >= 0.0);
    }
}

TEST_CASE("prior draws are packed variable-major with prior statistics") {
    const GaussianND prior = default_prior();
    Rng rng(500);
    const Eigen::MatrixXd eps = draw_prior_eps(prior, 2000, rng);
    REQUIRE(eps.rows() == 2000);
    REQUIRE(eps.cols() == kHeadWidth);
    // Column 10i+j holds variable i: its mean and variance across the many
    // draws must match the prior marginals, and columns of different
    // variables from the same draw must reproduce the prior covariance.
    for (int i = 0; i < 5; ++i) {
        const auto col = eps.col(10 * i + 3);
        const double mean = col.mean();
        const double var = (col.array() - mean).square().sum() / (col.size() - 1);
        CHECK(std::abs(mean - prior.mu[i]) < 0.08);
        CHECK(std::abs(var - prior.sigma(i, i)) < 0.12);
    }
    // Cross-covariance of variables 2 and 4 within draw j=5.
    const auto c2 = eps.col(25);
    const auto c4 = eps.col(45);
    const double m2 = c2.mean(), m4 = c4.mean();
    const double cov = ((c2.array() - m2) * (c4.array() - m4)).sum() / (c2.size() - 1);
    CHECK(std::abs(cov - prior.sigma(2, 4)) < 0.1);
    // Different draws within a row are independent: columns j=0 and j=1 of
    // variable 0 should be essentially uncorrelated.
    const auto d0 = eps.col(0);
    const auto d1 = eps.col(1);
    const double mm0 = d0.mean(), mm1 = d1.mean();
    const double cross =
        ((d0.array() - mm0) * (d1.array() - mm1)).sum() / (d0.size() - 1);
    CHECK(std::abs(cross) < 0.05);
}

TEST_CASE("reparameterization is the identity when the posterior equals the prior") {
    const GaussianND prior = default_prior();
    Rng rng(600);
    const Eigen::MatrixXd eps = draw_prior_eps(prior, 8, rng);
    const LatentSample z = reparameterize(prior, prior, eps);
    CHECK((z.z - eps).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero posterior spread collapses samples onto the posterior mean") {
    const GaussianND prior = default_prior();
    Eigen::VectorXd mu(5);
    mu << 0.5, -0.2, 0.1, 0.9, -1.0;
    const GaussianND post(mu, Eigen::MatrixXd::Zero(5, 5));
    Rng rng(601);
    const Eigen::MatrixXd eps = draw_prior_eps(prior, 6, rng);
    const LatentSample z = reparameterize(prior, post, eps);
    for (int b = 0; b < 6; ++b) {
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 10; ++j) {
                CHECK(z.z(b, 10 * i + j) == doctest::Approx(mu[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("the affine map is linear in eps with slope sigma-ratio") {
    const GaussianND prior = default_prior();
    Rng rng(602);
    Eigen::MatrixXd a5(5, 5);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) a5(i, j) = rng.normal();
    }
    const GaussianND post(
        Eigen::VectorXd::Ones(5) * 0.3,
        (a5 * a5.transpose() / 5 + 0.2 * Eigen::MatrixXd::Identity(5, 5)));
    Eigen::MatrixXd e0 = Eigen::MatrixXd::Zero(1, kHeadWidth);
    Eigen::MatrixXd e1 = Eigen::MatrixXd::Zero(1, kHeadWidth);
    for (int i = 0; i < 5; ++i) e1(0, 10 * i + 2) = 1.0;
    const LatentSample z0 = reparameterize(prior, post, e0);
    const LatentSample z1 = reparameterize(prior, post, e1);
    for (int i = 0; i < 5; ++i) {
        const double slope = z1.z(0, 10 * i + 2) - z0.z(0, 10 * i + 2);
        const double expected =
            std::sqrt(post.sigma(i, i)) / std::sqrt(prior.sigma(i, i));
        CHECK(slope == doctest::Approx(expected).epsilon(1e-12));
        // Intercept: b_i = mu'_i - mu_i * a_i.
        CHECK(z0.z(0, 10 * i + 2) ==
              doctest::Approx(post.mu[i] - prior.mu[i] * expected).epsilon(1e-10));
    }
}

TEST_CASE("mapped draws reproduce the posterior marginal moments") {
    const GaussianND prior = default_prior();
    // Posterior with the published rounded marginal spreads.
    const GaussianND post = default_prior_marginals();
    Rng rng(603);
    const int rows = 20000;  // x10 draws per variable per row
    const Eigen::MatrixXd eps = draw_prior_eps(prior, rows, rng);
    const LatentSample z = reparameterize(prior, post, eps);
    for (int i = 0; i < 5; ++i) {
        double acc = 0.0, acc2 = 0.0;
        for (int b = 0; b < rows; ++b) {
            for (int j = 0; j < 10; ++j) {
                const double v = z.z(b, 10 * i + j);
                acc += v;
                acc2 += v * v;
            }
        }
        const double n = rows * 10.0;
        const double mean = acc / n;
        const double var = acc2 / n - mean * mean;
        CHECK(std::abs(mean - post.mu[i]) < 0.02);
        CHECK(std::abs(std::sqrt(var) - std::sqrt(post.sigma(i, i))) < 0.02);
    }
}

TEST_CASE("mean-head gradient spreads evenly over batch and neurons") {
    Eigen::Matrix<double, 5, 1> dmu;
    dmu << 1.0, -2.0, 0.5, 0.0, 3.0;
    const Eigen::MatrixXd g = mean_head_backward(4, dmu);
    REQUIRE(g.rows() == 4);
    REQUIRE(g.cols() == kHeadWidth);
    for (int b = 0; b < 4; ++b) {
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 10; ++j) {
                CHECK(g(b, 10 * i + j) == doctest::Approx(dmu[i] / 40.0).epsilon(1e-14));
            }
        }
    }
    // Finite-difference against the actual mean construction.
    Rng rng(700);
    HeadActivations a = random_heads(4, rng);
    Eigen::Matrix<double, 5, 1> w;
    w << 0.3, -1.1, 0.9, 2.0, -0.4;
    const double h = 1e-6;
    for (int b = 0; b < 4; ++b) {
        for (int j = 0; j < kHeadWidth; j += 7) {
            HeadActivations ap = a, am = a;
            ap.mu_head(b, j) += h;
            am.mu_head(b, j) -= h;
            const double fd =
                (w.dot(mean_head(ap)) - w.dot(mean_head(am))) / (2 * h);
            CHECK(fd == doctest::Approx(mean_head_backward(4, w)(b, j)).epsilon(1e-6));
        }
    }
}

TEST_CASE("sigma-head gradient matches finite differences of a weighted cov") {
    Rng rng(701);
    const HeadActivations a = random_heads(6, rng);
    // Deliberately asymmetric upstream weights: the layer must handle them.
    Eigen::Matrix<double, 5, 5> w;
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) w(i, j) = rng.normal();
    }
    auto scalar = [&](const Eigen::MatrixXd& sigma_head) {
        HeadActivations tmp = a;
        tmp.sigma_head = sigma_head;
        return (w.array() * cov_head(tmp).array()).sum();
    };
    const Eigen::MatrixXd g = cov_head_backward(a.sigma_head, w);
    REQUIRE(g.rows() == 6);
    REQUIRE(g.cols() == kHeadWidth);
    const double h = 1e-6;
    for (int b = 0; b < 6; ++b) {
        for (int j = 0; j < kHeadWidth; j += 5) {
            Eigen::MatrixXd sp = a.sigma_head, sm = a.sigma_head;
            sp(b, j) += h;
            sm(b, j) -= h;
            const double fd = (scalar(sp) - scalar(sm)) / (2 * h);
            CHECK(std::abs(fd - g(b, j)) < 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
    // A whole zero column has zero norm; its gradient is defined as zero.
    Eigen::MatrixXd with_zero = a.sigma_head;
    with_zero.col(3).setZero();
    const Eigen::MatrixXd gz = cov_head_backward(with_zero, w);
    for (int b = 0; b < 6; ++b) CHECK(gz(b, 3) == 0.0);
}

TEST_CASE("latent-map gradients match finite differences") {
    const GaussianND prior = default_prior();
    Rng rng(702);
    Eigen::MatrixXd a5(5, 5);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) a5(i, j) = rng.normal();
    }
    GaussianND post(Eigen::VectorXd::Ones(5) * 0.4,
                    a5 * a5.transpose() / 5 + 0.3 * Eigen::MatrixXd::Identity(5, 5));
    const int batch = 3;
    const Eigen::MatrixXd eps = draw_prior_eps(prior, batch, rng);
    Eigen::MatrixXd dz(batch, kHeadWidth);
    for (int b = 0; b < batch; ++b) {
        for (int j = 0; j < kHeadWidth; ++j) dz(b, j) = rng.normal();
    }
    auto scalar = [&](const GaussianND& p) {
        return (dz.array() * reparameterize(prior, p, eps).z.array()).sum();
    };
    const ReparamGrad g = reparameterize_backward(prior, post, eps, dz);
    const double h = 1e-6;
    for (int i = 0; i < 5; ++i) {
        GaussianND pp = post, pm = post;
        pp.mu[i] += h;
        pm.mu[i] -= h;
        const double fd = (scalar(pp) - scalar(pm)) / (2 * h);
        CHECK(std::abs(fd - g.dmu_prime[i]) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
    for (int i = 0; i < 5; ++i) {
        GaussianND pp = post, pm = post;
        pp.sigma(i, i) += h;
        pm.sigma(i, i) -= h;
        const double fd = (scalar(pp) - scalar(pm)) / (2 * h);
        CHECK(std::abs(fd - g.dsigma_prime(i, i)) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
    // Only the diagonal of Sigma' enters the map.
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            if (i != j) CHECK(g.dsigma_prime(i, j) == 0.0);
        }
    }
}
