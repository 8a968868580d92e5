#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlab/csvio.hpp"
#include "fedlab/dataset.hpp"
#include "fedlab/gaussian.hpp"
#include "fedlab/model.hpp"
#include "fedlab/shift_theory.hpp"

namespace fedlab {

/// A 1-D density on an explicit grid. Construction checks that the grid
/// increases and carries essentially all the mass (trapezoid integral within
/// [0.98, 1.02]).
struct Density1D {
    Eigen::VectorXd grid;
    Eigen::VectorXd pdf;
};

inline double trapezoid(const Eigen::VectorXd& grid, const Eigen::VectorXd& values) {
    double total = 0.0;
    for (Eigen::Index i = 0; i + 1 < grid.size(); ++i)
        total += 0.5 * (values[i] + values[i + 1]) * (grid[i + 1] - grid[i]);
    return total;
}

inline Density1D make_density(Eigen::VectorXd grid, Eigen::VectorXd pdf) {
    if (grid.size() != pdf.size() || grid.size() < 2)
        throw std::invalid_argument("density: grid/pdf mismatch");
    for (Eigen::Index i = 0; i + 1 < grid.size(); ++i)
        if (grid[i + 1] <= grid[i]) throw std::invalid_argument("density: grid must increase");
    if (pdf.minCoeff() < 0.0) throw std::invalid_argument("density: negative pdf value");
    const double mass = trapezoid(grid, pdf);
    if (mass < 0.98 || mass > 1.02)
        throw std::invalid_argument("density: grid truncates the distribution (integral " +
                                    std::to_string(mass) + ")");
    return Density1D{std::move(grid), std::move(pdf)};
}

struct PcaResult {
    Eigen::VectorXd direction; // unit length, largest-|component| positive
    double eigenvalue = 0.0;
};

/// Top eigenvector of the population covariance by power iteration
/// (tolerance 1e-9 on the direction change, at most 1000 sweeps).
inline PcaResult pca_direction(const Eigen::MatrixXd& x) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    if (n < 2) throw std::invalid_argument("need at least two samples");
    Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
    if (cov.trace() <= 0.0) throw std::invalid_argument("zero variance");

    Eigen::VectorXd v = Eigen::VectorXd::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
    for (int iter = 0; iter < 1000; ++iter) {
        Eigen::VectorXd next = cov * v;
        const double norm = next.norm();
        if (norm == 0.0) {
            // started orthogonal to the range; nudge and continue
            v.setZero();
            v[iter % d] = 1.0;
            continue;
        }
        next /= norm;
        if (next.dot(v) < 0.0) next = -next;
        const double change = (next - v).norm();
        v = next;
        if (change < 1e-9) break;
    }
    Eigen::Index top = 0;
    v.cwiseAbs().maxCoeff(&top);
    if (v[top] < 0.0) v = -v;
    return PcaResult{v, v.dot(cov * v)};
}

/// Centered data projected on the top principal direction.
inline Eigen::VectorXd pca_project_1d(const Eigen::MatrixXd& x) {
    PcaResult pca = pca_direction(x);
    Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    return centered * pca.direction;
}

/// Silverman bandwidth 1.06 * sd * n^(-1/5) (sample standard deviation).
inline double silverman_bandwidth(const Eigen::VectorXd& samples) {
    const Eigen::Index n = samples.size();
    if (n < 2) throw std::invalid_argument("need at least two samples");
    const double mean = samples.mean();
    const double var = (samples.array() - mean).square().sum() / static_cast<double>(n - 1);
    if (var <= 0.0) throw std::invalid_argument("degenerate samples");
    return 1.06 * std::sqrt(var) * std::pow(static_cast<double>(n), -0.2);
}

/// Gaussian-kernel density estimate evaluated on the grid.
inline Density1D kde_pdf(const Eigen::VectorXd& samples, const Eigen::VectorXd& grid) {
    const double h = silverman_bandwidth(samples);
    const double norm = 1.0 / (static_cast<double>(samples.size()) * h *
                               std::sqrt(2.0 * std::numbers::pi));
    Eigen::VectorXd pdf = Eigen::VectorXd::Zero(grid.size());
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < samples.size(); ++i) {
            const double z = (grid[g] - samples[i]) / h;
            total += std::exp(-0.5 * z * z);
        }
        pdf[g] = norm * total;
    }
    return make_density(grid, std::move(pdf));
}

/// Trapezoid integral of p log(p/q) on the shared grid, both densities
/// floored at 1e-12.
inline double kl_empirical_1d(const Density1D& p, const Density1D& q) {
    if (p.grid.size() != q.grid.size() || (p.grid - q.grid).cwiseAbs().maxCoeff() != 0.0)
        throw std::invalid_argument("densities must share one grid");
    Eigen::VectorXd integrand(p.grid.size());
    for (Eigen::Index i = 0; i < p.grid.size(); ++i) {
        const double pi = std::max(p.pdf[i], 1e-12);
        const double qi = std::max(q.pdf[i], 1e-12);
        integrand[i] = pi * std::log(pi / qi);
    }
    return trapezoid(p.grid, integrand);
}

struct DivergenceRow {
    int client = 0;
    double kl_right = 0.0;
    double kl_wrong = 0.0;
    bool skipped = false; // fewer than two right or two wrong samples
};

struct GridSpec {
    Eigen::Index points = 512;
    double pad_bandwidths = 3.0;
};

namespace detail {

/// 1-D representation each sample is compared in: raw features for linear
/// models, hidden-layer activations for the MLP.
inline Eigen::MatrixXd analysis_representation(const Classifier& model, const Eigen::MatrixXd& x) {
    if (model.kind == ModelKind::Linear) return x;
    return ((x * model.w1).rowwise() + model.b1.transpose()).cwiseMax(0.0);
}

inline Eigen::VectorXd stack(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Eigen::VectorXd shared_grid(const Eigen::VectorXd& pooled, double max_bandwidth,
                                   const GridSpec& spec) {
    const double lo = pooled.minCoeff() - spec.pad_bandwidths * max_bandwidth;
    const double hi = pooled.maxCoeff() + spec.pad_bandwidths * max_bandwidth;
    return Eigen::VectorXd::LinSpaced(spec.points, lo, hi);
}

} // namespace detail

/// Per-client comparison of correctly vs incorrectly predicted samples.
/// All features are projected with one PCA direction fit on the pooled
/// representations, then each client's right (wrong) projections are compared
/// by KDE + empirical KL against the pooled right (wrong) set. Clients
/// without at least two samples on each side are flagged and skipped.
inline std::vector<DivergenceRow> right_wrong_divergence(
    const std::vector<std::pair<Dataset, Classifier>>& clients, const GridSpec& spec = {}) {
    if (clients.size() < 2) throw std::invalid_argument("need at least two clients");

    std::vector<Eigen::MatrixXd> reps;
    Eigen::Index total = 0;
    for (const auto& [data, model] : clients) {
        reps.push_back(detail::analysis_representation(model, data.features));
        total += data.size();
    }
    Eigen::MatrixXd pooled(total, reps.front().cols());
    Eigen::Index at = 0;
    for (const auto& r : reps) {
        pooled.middleRows(at, r.rows()) = r;
        at += r.rows();
    }
    const PcaResult pca = pca_direction(pooled);
    const Eigen::VectorXd pooled_mean = pooled.colwise().mean();

    std::vector<std::vector<double>> right(clients.size()), wrong(clients.size());
    std::vector<double> right_all, wrong_all;
    for (size_t k = 0; k < clients.size(); ++k) {
        const auto& [data, model] = clients[k];
        Eigen::VectorXi pred = predict(model, data.features);
        Eigen::MatrixXd centered = reps[k].rowwise() - pooled_mean.transpose();
        Eigen::VectorXd proj = centered * pca.direction;
        for (Eigen::Index i = 0; i < data.size(); ++i) {
            auto& side = pred[i] == data.labels[i] ? right[k] : wrong[k];
            auto& side_all = pred[i] == data.labels[i] ? right_all : wrong_all;
            side.push_back(proj[i]);
            side_all.push_back(proj[i]);
        }
    }

    auto usable = [](const std::vector<double>& v) {
        if (v.size() < 2) return false;
        for (double x : v)
            if (x != v.front()) return true;
        return false; // zero spread: KDE undefined
    };
    if (!usable(right_all) || !usable(wrong_all))
        throw std::invalid_argument("pooled right/wrong sets too small for density estimation");

    std::vector<DivergenceRow> rows(clients.size());
    std::vector<size_t> eligible;
    double h_right = silverman_bandwidth(detail::stack(right_all));
    double h_wrong = silverman_bandwidth(detail::stack(wrong_all));
    for (size_t k = 0; k < clients.size(); ++k) {
        rows[k].client = static_cast<int>(k);
        if (!usable(right[k]) || !usable(wrong[k])) {
            rows[k].skipped = true;
            continue;
        }
        eligible.push_back(k);
        h_right = std::max(h_right, silverman_bandwidth(detail::stack(right[k])));
        h_wrong = std::max(h_wrong, silverman_bandwidth(detail::stack(wrong[k])));
    }
    if (eligible.size() < 2) throw std::invalid_argument("fewer than two usable clients");

    const Eigen::VectorXd grid_right = detail::shared_grid(detail::stack(right_all), h_right, spec);
    const Eigen::VectorXd grid_wrong = detail::shared_grid(detail::stack(wrong_all), h_wrong, spec);
    const Density1D global_right = kde_pdf(detail::stack(right_all), grid_right);
    const Density1D global_wrong = kde_pdf(detail::stack(wrong_all), grid_wrong);
    for (size_t k : eligible) {
        rows[k].kl_right = kl_empirical_1d(kde_pdf(detail::stack(right[k]), grid_right), global_right);
        rows[k].kl_wrong = kl_empirical_1d(kde_pdf(detail::stack(wrong[k]), grid_wrong), global_wrong);
    }
    return rows;
}

inline void write_divergence_csv(const std::vector<DivergenceRow>& rows, const std::string& path) {
    CsvWriter w(path);
    w.row({"client", "kl_right", "kl_wrong", "skipped"});
    for (const auto& r : rows)
        w.row({std::to_string(r.client), format_double(r.kl_right), format_double(r.kl_wrong),
               r.skipped ? "1" : "0"});
    w.close();
}

/// KL of each client's fitted feature Gaussian against the pooled fit; the
/// coarse per-client divergence diagnostic.
inline std::vector<double> client_divergence(const std::vector<Dataset>& clients) {
    GaussianParams global_fit = fit_gaussian(concat(clients));
    std::vector<double> out;
    out.reserve(clients.size());
    for (const auto& c : clients) out.push_back(kl_gaussian_exact(fit_gaussian(c), global_fit));
    return out;
}

} // namespace fedlab
