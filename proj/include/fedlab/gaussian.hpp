#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>

#include "fedlab/dataset.hpp"

namespace fedlab {

/// Mean + SPD covariance with its lower Cholesky factor cached. All
/// Mahalanobis work goes through the factor, never an explicit inverse.
struct GaussianParams {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    Eigen::MatrixXd chol; // lower-triangular L with L L^T = covariance

    Eigen::Index dims() const { return mean.size(); }
};

inline Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& spd) {
    Eigen::LLT<Eigen::MatrixXd> llt(spd);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("matrix is not positive-definite");
    return llt.matrixL();
}

inline GaussianParams make_gaussian(Eigen::VectorXd mean, Eigen::MatrixXd covariance) {
    if (mean.size() != covariance.rows() || covariance.rows() != covariance.cols())
        throw std::invalid_argument("gaussian: dimension mismatch");
    const double asym = (covariance - covariance.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10)
        throw std::invalid_argument("gaussian: covariance not symmetric");
    GaussianParams g;
    g.mean = std::move(mean);
    g.covariance = std::move(covariance);
    g.chol = cholesky_lower(g.covariance);
    return g;
}

/// Row mean and population covariance (divide by n), ridged with
/// eps * I, eps = 1e-6 * trace/d (1e-6 when the spread is exactly zero).
inline GaussianParams fit_gaussian(const Dataset& data) {
    const Eigen::Index n = data.size();
    const Eigen::Index d = data.dims();
    if (n < 1 || d < 1) throw std::invalid_argument("empty input");

    Eigen::VectorXd mean = data.features.colwise().mean();
    Eigen::MatrixXd centered = data.features.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
    cov = 0.5 * (cov + cov.transpose());

    const double tr = cov.trace();
    const double eps = tr > 0.0 ? 1e-6 * tr / static_cast<double>(d) : 1e-6;
    cov += eps * Eigen::MatrixXd::Identity(d, d);
    return make_gaussian(std::move(mean), std::move(cov));
}

/// Squared Mahalanobis distance of x from g.mean in the g metric.
inline double mahalanobis_sq(const GaussianParams& g, const Eigen::VectorXd& x) {
    Eigen::VectorXd z = g.chol.triangularView<Eigen::Lower>().solve(x - g.mean);
    return z.squaredNorm();
}

/// Shift at exact squared radius: delta = sqrt(C / u.u) * L u with u standard
/// normal, so delta^T Sigma^-1 delta = C identically. The direction is
/// isotropic in the Sigma metric.
inline Eigen::VectorXd shift_from_direction(const GaussianParams& g, double radius_c,
                                            const Eigen::VectorXd& u) {
    if (radius_c < 0.0) throw std::invalid_argument("shift radius must be nonnegative");
    if (u.size() != g.dims()) throw std::invalid_argument("direction dimension mismatch");
    if (radius_c == 0.0) return Eigen::VectorXd::Zero(g.dims());
    const double uu = u.squaredNorm();
    if (uu == 0.0) throw std::invalid_argument("zero direction vector");
    Eigen::VectorXd scaled = g.chol.triangularView<Eigen::Lower>() * u;
    scaled *= std::sqrt(radius_c / uu);
    return scaled;
}

inline Eigen::VectorXd sample_shift_vector(const GaussianParams& g, double radius_c,
                                           std::mt19937_64& rng) {
    if (radius_c < 0.0) throw std::invalid_argument("shift radius must be nonnegative");
    std::normal_distribution<double> n01(0.0, 1.0);
    Eigen::VectorXd u(g.dims());
    do {
        for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = n01(rng);
    } while (u.squaredNorm() == 0.0); // probability-zero guard
    if (radius_c == 0.0) return Eigen::VectorXd::Zero(g.dims());
    return shift_from_direction(g, radius_c, u);
}

/// Normalized importance weights w_i proportional to
/// exp(-1/2 (x_i - shifted_mean)^T Sigma^-1 (x_i - shifted_mean)).
/// Exponents are shifted by their max before exponentiating so far-away
/// samples underflow to harmless zeros instead of poisoning the sum.
inline Eigen::VectorXd importance_weights(const Dataset& data, const Eigen::VectorXd& shifted_mean,
                                          const GaussianParams& g) {
    const Eigen::Index n = data.size();
    if (n < 1) throw std::invalid_argument("empty input");
    if (data.dims() != g.dims()) throw std::invalid_argument("dimension mismatch");

    Eigen::VectorXd log_w(n);
    GaussianParams shifted = g;
    shifted.mean = shifted_mean;
    for (Eigen::Index i = 0; i < n; ++i)
        log_w[i] = -0.5 * mahalanobis_sq(shifted, data.features.row(i).transpose());
    log_w.array() -= log_w.maxCoeff();
    Eigen::VectorXd w = log_w.array().exp();
    w /= w.sum();
    return w;
}

} // namespace fedlab
