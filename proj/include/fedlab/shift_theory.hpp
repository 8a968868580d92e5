#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlab/csvio.hpp"
#include "fedlab/dataset.hpp"
#include "fedlab/gaussian.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

/// Perturbation of a base Gaussian: shifted mean, shifted covariance, and the
/// sample budget used to fit the client's empirical distribution.
struct GaussianPerturbation {
    Eigen::VectorXd delta_mean;
    Eigen::MatrixXd delta_cov; // symmetric; base.covariance + delta_cov stays PD
    GaussianParams base;
    long sample_count = 1;
};

inline void validate(const GaussianPerturbation& p) {
    if (p.delta_mean.size() != p.base.dims() || p.delta_cov.rows() != p.base.dims() ||
        p.delta_cov.cols() != p.base.dims())
        throw std::invalid_argument("perturbation dimension mismatch");
    if ((p.delta_cov - p.delta_cov.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw std::invalid_argument("covariance perturbation not symmetric");
    if (p.sample_count < 1) throw std::invalid_argument("sample count must be positive");
    cholesky_lower(p.base.covariance + p.delta_cov); // throws if not PD
}

/// Perturbation of a generic parametric family. The Fisher information and
/// its directional derivative (already applied to delta) are caller-supplied;
/// nothing here estimates them from data.
struct FisherPerturbation {
    Eigen::VectorXd delta;
    Eigen::MatrixXd fisher;             // N x N, symmetric PSD
    Eigen::MatrixXd fisher_grad_applied; // N x N, the derivative of the Fisher contracted with delta
    long free_params = 1;
    long sample_count = 1;
};

inline void validate(const FisherPerturbation& p) {
    const auto n = p.delta.size();
    if (p.fisher.rows() != n || p.fisher.cols() != n || p.fisher_grad_applied.rows() != n ||
        p.fisher_grad_applied.cols() != n)
        throw std::invalid_argument("perturbation dimension mismatch");
    if ((p.fisher - p.fisher.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw std::invalid_argument("fisher matrix not symmetric");
    if (p.free_params < 1 || p.sample_count < 1)
        throw std::invalid_argument("counts must be positive");
}

/// Closed-form KL(N_p || N_q) in nats. The oracle every approximation in this
/// module is judged against.
inline double kl_gaussian_exact(const GaussianParams& p, const GaussianParams& q) {
    const Eigen::Index d = p.dims();
    if (q.dims() != d) throw std::invalid_argument("dimension mismatch");

    auto logdet = [](const Eigen::MatrixXd& chol) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < chol.rows(); ++i) s += std::log(chol(i, i));
        return 2.0 * s;
    };
    // trace(Sigma_q^-1 Sigma_p) = ||Lq^-1 Lp||_F^2
    Eigen::MatrixXd m = q.chol.triangularView<Eigen::Lower>().solve(p.chol);
    const double tr = m.squaredNorm();
    const double maha = mahalanobis_sq(q, p.mean);
    return 0.5 * (tr + maha - static_cast<double>(d) + logdet(q.chol) - logdet(p.chol));
}

/// Second-order KL estimate for a fitted, perturbed Gaussian against its
/// base, in nats:
///   1/4 ||S dC S||_F^2 - 1/2 trace((dC S)^3)
///   + 1/2 dm^T S (I - dC S) dm + M(M+3)/(4A),
/// with S the base precision. The last term is the expected fitting
/// inflation of an M-dimensional Gaussian estimated from A samples.
inline double kl_approx_gaussian(const GaussianPerturbation& pert) {
    validate(pert);
    const Eigen::Index m = pert.base.dims();
    const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(m, m);
    // S = Sigma^-1 via the cached factor
    Eigen::MatrixXd precision = pert.base.chol.triangularView<Eigen::Lower>().solve(identity);
    precision = pert.base.chol.transpose().triangularView<Eigen::Upper>().solve(precision);

    const Eigen::MatrixXd dc_s = pert.delta_cov * precision;
    const double quad_cov = 0.25 * (precision * pert.delta_cov * precision).squaredNorm();
    const double cubic_cov = -0.5 * (dc_s * dc_s * dc_s).trace();
    const double mean_term =
        0.5 * pert.delta_mean.dot(precision * (identity - dc_s) * pert.delta_mean);
    const double md = static_cast<double>(m);
    const double fitting = md * (md + 3.0) / (4.0 * static_cast<double>(pert.sample_count));
    return quad_cov + cubic_cov + mean_term + fitting;
}

/// Generic second-order KL estimate: 1/2 d^T I d + 1/2 d^T (dI d) d + R/(2A).
inline double kl_approx_fisher(const FisherPerturbation& pert) {
    validate(pert);
    const double quad = 0.5 * pert.delta.dot(pert.fisher * pert.delta);
    const double second = 0.5 * pert.delta.dot(pert.fisher_grad_applied * pert.delta);
    const double fitting =
        static_cast<double>(pert.free_params) / (2.0 * static_cast<double>(pert.sample_count));
    return quad + second + fitting;
}

/// n draws from the Gaussian, as a Dataset with constant labels.
inline Dataset draw_gaussian(const GaussianParams& g, Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Dataset out;
    out.classes = 1;
    out.features.resize(n, g.dims());
    out.labels = Eigen::VectorXi::Zero(n);
    Eigen::VectorXd u(g.dims());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < g.dims(); ++j) u[j] = n01(rng);
        out.features.row(i) =
            (g.mean + g.chol.triangularView<Eigen::Lower>() * u).transpose();
    }
    return out;
}

/// Random symmetric covariance perturbation scaled to the target Frobenius
/// norm; halves the scale (up to 10 times) until base + delta stays PD.
inline Eigen::MatrixXd sample_cov_perturbation(const GaussianParams& base, double frob_norm,
                                               std::mt19937_64& rng) {
    const Eigen::Index m = base.dims();
    if (frob_norm == 0.0) return Eigen::MatrixXd::Zero(m, m);
    std::normal_distribution<double> n01(0.0, 1.0);
    Eigen::MatrixXd g(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) g(i, j) = n01(rng);
    Eigen::MatrixXd sym = 0.5 * (g + g.transpose());
    sym *= frob_norm / sym.norm();

    for (int attempt = 0; attempt <= 10; ++attempt) {
        Eigen::LLT<Eigen::MatrixXd> llt(base.covariance + sym);
        if (llt.info() == Eigen::Success) return sym;
        sym *= 0.5;
    }
    throw std::runtime_error("covariance perturbation could not be made positive-definite");
}

struct ValidationRow {
    int client = 0;
    double radius_c = 0.0;
    long sample_count = 0;
    double real_kl = 0.0;
    double approx_kl = 0.0;
    double random_kl = 0.0;
};

/// Per client: perturb the fitted base Gaussian (mean shift at radius C plus
/// a small symmetric covariance shift), fit A fresh draws from the perturbed
/// law, and compare three numbers: the exact KL of that fit against the base
/// fit (real), the second-order estimate (approx), and the same fit-vs-base
/// KL when the A draws come from the base itself (random, pure fitting
/// error). dsigma_frob_ratio scales the covariance shift relative to
/// ||Sigma||_F; zero disables it.
inline std::vector<ValidationRow> validate_approximation(const Dataset& base,
                                                         const std::vector<double>& client_cs,
                                                         const std::vector<long>& client_as,
                                                         std::uint64_t seed,
                                                         double dsigma_frob_ratio = 0.05) {
    if (client_cs.size() != client_as.size())
        throw std::invalid_argument("radius and sample-count lists must align");
    const GaussianParams fit = fit_gaussian(base);
    for (long a : client_as)
        if (a < 10 * fit.dims())
            throw std::invalid_argument("sample count too small to fit the Gaussian");

    std::vector<ValidationRow> rows;
    for (size_t k = 0; k < client_cs.size(); ++k) {
        auto rng = make_stream(seed, {0x7e01u, static_cast<std::uint64_t>(k)});
        const double c = client_cs[k];
        const long a = client_as[k];

        GaussianPerturbation pert;
        pert.base = fit;
        pert.sample_count = a;
        pert.delta_mean = sample_shift_vector(fit, c, rng);
        pert.delta_cov =
            sample_cov_perturbation(fit, dsigma_frob_ratio * fit.covariance.norm(), rng);

        GaussianParams shifted = make_gaussian(fit.mean + pert.delta_mean,
                                               fit.covariance + pert.delta_cov);
        GaussianParams fit_shifted = fit_gaussian(draw_gaussian(shifted, a, rng));
        GaussianParams fit_plain = fit_gaussian(draw_gaussian(fit, a, rng));

        ValidationRow row;
        row.client = static_cast<int>(k);
        row.radius_c = c;
        row.sample_count = a;
        row.real_kl = kl_gaussian_exact(fit_shifted, fit);
        row.approx_kl = kl_approx_gaussian(pert);
        row.random_kl = kl_gaussian_exact(fit_plain, fit);
        rows.push_back(row);
    }
    return rows;
}

inline void write_validation_csv(const std::vector<ValidationRow>& rows, const std::string& path) {
    CsvWriter w(path);
    w.row({"client", "C", "A", "real_kl", "approx_kl", "random_kl"});
    for (const auto& r : rows)
        w.row({std::to_string(r.client), format_double(r.radius_c), std::to_string(r.sample_count),
               format_double(r.real_kl), format_double(r.approx_kl), format_double(r.random_kl)});
    w.close();
}

} // namespace fedlab
