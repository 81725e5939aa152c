#include "mvprior/gaussian.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mvprior {

namespace {

constexpr double kLadder[] = {0.0, 1e-12, 1e-10, 1e-8, 1e-6};

// Tolerant Cholesky attempt at one jitter rung. Zero pivots are accepted when
// the residual column below them is also (near) zero, which is exactly the
// positive semi-definite case; otherwise the matrix is indefinite at this
// rung and the attempt fails.
std::optional<Eigen::MatrixXd> try_factor(const Eigen::MatrixXd& a, double lambda,
                                          bool require_pd, bool* pd_out) {
    const int k = static_cast<int>(a.rows());
    const double scale = std::max(a.diagonal().cwiseAbs().maxCoeff() + lambda, 1e-300);
    const double pivot_tol = 1e-11 * scale;
    const double col_tol = std::sqrt(pivot_tol * scale);

    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(k, k);
    bool pd = true;
    for (int j = 0; j < k; ++j) {
        double d = a(j, j) + lambda;
        for (int m = 0; m < j; ++m) d -= L(j, m) * L(j, m);
        if (d > pivot_tol) {
            L(j, j) = std::sqrt(d);
            for (int i = j + 1; i < k; ++i) {
                double s = a(i, j);
                for (int m = 0; m < j; ++m) s -= L(i, m) * L(j, m);
                L(i, j) = s / L(j, j);
            }
        } else if (d >= -pivot_tol && !require_pd) {
            pd = false;
            L(j, j) = 0.0;
            for (int i = j + 1; i < k; ++i) {
                double s = a(i, j);
                for (int m = 0; m < j; ++m) s -= L(i, m) * L(j, m);
                if (std::abs(s) > col_tol) return std::nullopt;
                L(i, j) = 0.0;
            }
        } else {
            return std::nullopt;
        }
    }
    if (pd_out) *pd_out = pd;
    return L;
}

CholeskyResult run_ladder(const Eigen::MatrixXd& sigma, bool require_pd) {
    if (sigma.rows() != sigma.cols() || sigma.rows() < 1) {
        throw UsageError("covariance must be a square matrix of size >= 1");
    }
    const int k = static_cast<int>(sigma.rows());
    const double per_dim_trace = sigma.diagonal().sum() / k;
    for (double c : kLadder) {
        const double lambda = c * per_dim_trace;
        bool pd = false;
        if (auto L = try_factor(sigma, lambda, require_pd, &pd)) {
            return CholeskyResult{std::move(*L), pd, lambda, c};
        }
    }
    throw NumericError(require_pd
                           ? "covariance is singular beyond the jitter ladder"
                           : "covariance is not positive semi-definite");
}

double log_det_from_factor(const Eigen::MatrixXd& L) {
    double ld = 0.0;
    for (int i = 0; i < L.rows(); ++i) ld += std::log(L(i, i));
    return 2.0 * ld;
}

}  // namespace

GaussianND::GaussianND(Eigen::VectorXd mu_, Eigen::MatrixXd sigma_)
    : mu(std::move(mu_)), sigma(std::move(sigma_)) {
    if (mu.size() < 1) throw UsageError("gaussian dimension must be >= 1");
    if (sigma.rows() != mu.size() || sigma.cols() != mu.size()) {
        throw UsageError("covariance shape does not match mean dimension");
    }
    sigma = ((sigma + sigma.transpose()) / 2.0).eval();
    cholesky_psd(sigma);  // rejects indefinite covariances at construction
}

CholeskyResult cholesky_psd(const Eigen::MatrixXd& sigma) {
    return run_ladder(sigma, false);
}

CholeskyResult cholesky_pd(const Eigen::MatrixXd& sigma) {
    return run_ladder(sigma, true);
}

GaussianND fit_gaussian(const Eigen::MatrixXd& samples) {
    const int n = static_cast<int>(samples.rows());
    if (n < 2) throw DataError("need at least 2 samples to fit a gaussian");
    Eigen::VectorXd mu = samples.colwise().mean();
    Eigen::MatrixXd centered = samples.rowwise() - mu.transpose();
    Eigen::MatrixXd sigma = (centered.transpose() * centered) / (n - 1.0);
    return GaussianND(std::move(mu), std::move(sigma));
}

Eigen::MatrixXd sample_gaussian(const GaussianND& g, int n, Rng& rng) {
    if (n < 0) throw UsageError("sample count must be non-negative");
    const int k = g.k();
    const Eigen::MatrixXd L = cholesky_psd(g.sigma).L;
    Eigen::MatrixXd out(n, k);
    Eigen::VectorXd eps(k);
    for (int r = 0; r < n; ++r) {
        for (int i = 0; i < k; ++i) eps[i] = rng.normal();
        out.row(r) = (g.mu + L * eps).transpose();
    }
    return out;
}

double kl_divergence(const GaussianND& q, const GaussianND& p) {
    if (q.k() != p.k()) throw UsageError("gaussian dimensions differ");
    const int k = p.k();
    const CholeskyResult cp = cholesky_pd(p.sigma);
    CholeskyResult cq;
    try {
        cq = cholesky_pd(q.sigma);
    } catch (const NumericError&) {
        return std::numeric_limits<double>::infinity();
    }
    const auto Lp = cp.L.triangularView<Eigen::Lower>();
    const Eigen::MatrixXd sigma_q_j =
        q.sigma + cq.jitter * Eigen::MatrixXd::Identity(k, k);
    const double trace_term = Lp.solve(Lp.solve(sigma_q_j).transpose()).trace();
    const Eigen::VectorXd diff = Lp.solve(p.mu - q.mu);
    const double quad = diff.squaredNorm();
    double value = 0.5 * (trace_term + quad - k + log_det_from_factor(cp.L) -
                          log_det_from_factor(cq.L));
    if (value < 0.0 && value > -1e-10) value = 0.0;
    return value;
}

KlGrad kl_divergence_grad(const GaussianND& q, const GaussianND& p) {
    if (q.k() != p.k()) throw UsageError("gaussian dimensions differ");
    const int k = p.k();
    const CholeskyResult cp = cholesky_pd(p.sigma);
    const CholeskyResult cq = cholesky_pd(q.sigma);

    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(k, k);
    const Eigen::MatrixXd p_inv =
        cp.L.triangularView<Eigen::Lower>().solve(id).transpose() *
        cp.L.triangularView<Eigen::Lower>().solve(id);
    const Eigen::MatrixXd q_inv =
        cq.L.triangularView<Eigen::Lower>().solve(id).transpose() *
        cq.L.triangularView<Eigen::Lower>().solve(id);
    const Eigen::MatrixXd sigma_q_j = q.sigma + cq.jitter * id;

    KlGrad out;
    out.value = 0.5 * ((p_inv * sigma_q_j).trace() +
                       (p.mu - q.mu).dot(p_inv * (p.mu - q.mu)) - k +
                       log_det_from_factor(cp.L) - log_det_from_factor(cq.L));
    if (out.value < 0.0 && out.value > -1e-10) out.value = 0.0;
    out.dmu_q = p_inv * (q.mu - p.mu);
    Eigen::MatrixXd g = 0.5 * (p_inv - q_inv);
    if (cq.jitter_coeff > 0.0) {
        // The computed value used Sigma_q + (c/k)*trace(Sigma_q)*I, so the
        // diagonal shift contributes (c/k)*trace(G)*I to the gradient.
        g += (cq.jitter_coeff / k) * g.trace() * id;
    }
    out.dsigma_q = (g + g.transpose()) / 2.0;
    return out;
}

double mahalanobis(const GaussianND& p, const GaussianND& q) {
    if (q.k() != p.k()) throw UsageError("gaussian dimensions differ");
    const Eigen::MatrixXd pooled = (p.sigma + q.sigma) / 2.0;
    const CholeskyResult c = cholesky_pd(pooled);
    const Eigen::VectorXd diff =
        c.L.triangularView<Eigen::Lower>().solve(p.mu - q.mu);
    return diff.squaredNorm();
}

double log_pdf(const GaussianND& g, const Eigen::VectorXd& x) {
    if (x.size() != g.k()) throw UsageError("point dimension differs from gaussian");
    const int k = g.k();
    const CholeskyResult c = cholesky_pd(g.sigma);
    const Eigen::VectorXd y = c.L.triangularView<Eigen::Lower>().solve(x - g.mu);
    return -0.5 * (k * std::log(2.0 * M_PI) + log_det_from_factor(c.L) +
                   y.squaredNorm());
}

std::string gaussian_to_json(const GaussianND& g) {
    nlohmann::json j;
    j["k"] = g.k();
    j["mu"] = std::vector<double>(g.mu.data(), g.mu.data() + g.k());
    std::vector<std::vector<double>> rows;
    for (int r = 0; r < g.k(); ++r) {
        rows.emplace_back(g.sigma.row(r).begin(), g.sigma.row(r).end());
    }
    j["sigma"] = rows;
    return j.dump(2);
}

GaussianND gaussian_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad gaussian JSON: ") + e.what());
    }
    try {
        const int k = j.at("k").get<int>();
        const auto mu_v = j.at("mu").get<std::vector<double>>();
        const auto sig_v = j.at("sigma").get<std::vector<std::vector<double>>>();
        if (static_cast<int>(mu_v.size()) != k || static_cast<int>(sig_v.size()) != k) {
            throw DataError("gaussian JSON sizes do not match k");
        }
        Eigen::VectorXd mu(k);
        Eigen::MatrixXd sigma(k, k);
        for (int i = 0; i < k; ++i) {
            mu[i] = mu_v[i];
            if (static_cast<int>(sig_v[i].size()) != k) {
                throw DataError("gaussian JSON sigma row has wrong length");
            }
            for (int c = 0; c < k; ++c) sigma(i, c) = sig_v[i][c];
        }
        return GaussianND(std::move(mu), std::move(sigma));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad gaussian JSON: ") + e.what());
    }
}

void save_gaussian(const std::string& path, const GaussianND& g) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << gaussian_to_json(g) << "\n";
    if (!out) throw DataError("short write to " + path);
}

GaussianND load_gaussian(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path + " for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return gaussian_from_json(ss.str());
}

GaussianND default_prior() {
    Eigen::VectorXd mu(5);
    mu << 1.0651, 1.0679, 0.00, 0.0718, 0.083;
    Eigen::MatrixXd sigma(5, 5);
    sigma << 0.265, -0.094, -0.014, -0.023, 0.124,
             -0.094, 0.332, 0.011, 0.056, -0.054,
             -0.014, 0.011, 0.183, 0.073, -0.21,
             -0.023, 0.056, 0.073, 0.107, -0.029,
             0.124, -0.054, -0.21, -0.029, 0.564;
    return GaussianND(std::move(mu), std::move(sigma));
}

GaussianND default_prior_marginals() {
    Eigen::VectorXd mu(5);
    mu << 1.06, 1.06, 0.0, 0.07, 0.08;
    Eigen::VectorXd sd(5);
    sd << 0.52, 0.54, 0.43, 0.34, 0.74;
    Eigen::MatrixXd sigma = sd.cwiseProduct(sd).asDiagonal();
    return GaussianND(std::move(mu), std::move(sigma));
}

}  // namespace mvprior
