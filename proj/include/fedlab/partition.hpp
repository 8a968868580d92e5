#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "fedlab/dataset.hpp"
#include "fedlab/gaussian.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

/// Covariate-shift generation request: one squared Mahalanobis radius shared
/// by all clients plus the per-client draw counts.
struct ShiftSpec {
    double radius_c = 0.0;
    std::vector<Eigen::Index> sizes;
};

/// Power-law client sizes: raw_k = n_total / (k^exponent * Z). Floors are
/// topped up by largest fractional part (ties to the lower client index) so
/// the sizes sum to n_total exactly.
inline std::vector<Eigen::Index> powerlaw_sizes(Eigen::Index n_total, int k_clients,
                                                double exponent = 1.0) {
    if (k_clients < 1) throw std::invalid_argument("need at least one client");
    if (n_total < k_clients) throw std::invalid_argument("n_total too small for K");

    double z = 0.0;
    for (int j = 1; j <= k_clients; ++j) z += std::pow(static_cast<double>(j), -exponent);

    std::vector<Eigen::Index> sizes(static_cast<size_t>(k_clients));
    std::vector<std::pair<double, int>> fracs(static_cast<size_t>(k_clients));
    Eigen::Index assigned = 0;
    for (int k = 1; k <= k_clients; ++k) {
        const double raw = static_cast<double>(n_total) / (std::pow(static_cast<double>(k), exponent) * z);
        const double fl = std::floor(raw);
        sizes[static_cast<size_t>(k - 1)] = static_cast<Eigen::Index>(fl);
        fracs[static_cast<size_t>(k - 1)] = {raw - fl, k - 1};
        assigned += static_cast<Eigen::Index>(fl);
    }
    Eigen::Index remainder = n_total - assigned;
    std::stable_sort(fracs.begin(), fracs.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (Eigen::Index r = 0; r < remainder; ++r)
        sizes[static_cast<size_t>(fracs[static_cast<size_t>(r)].second)] += 1;

    for (Eigen::Index s : sizes)
        if (s < 1) throw std::invalid_argument("n_total too small for K");
    return sizes;
}

/// Allocation core of the Dirichlet partition, exposed so forced probability
/// matrices are testable: probs(c, k) is class c's share for client k. Client
/// k receives floor(probs(c,k) * |class c|) samples; leftovers of each class
/// go to its argmax-probability client (tie to the lower index) so no sample
/// is dropped.
inline std::vector<Dataset> dirichlet_allocate(const Dataset& data, const Eigen::MatrixXd& probs,
                                               std::mt19937_64& rng) {
    const int k_clients = static_cast<int>(probs.cols());
    const int classes = data.classes;
    if (probs.rows() != classes) throw std::invalid_argument("probability matrix row count != classes");

    std::vector<std::vector<Eigen::Index>> by_class(static_cast<size_t>(classes));
    for (Eigen::Index i = 0; i < data.size(); ++i)
        by_class[static_cast<size_t>(data.labels[i])].push_back(i);

    std::vector<std::vector<Eigen::Index>> assigned(static_cast<size_t>(k_clients));
    for (int c = 0; c < classes; ++c) {
        auto& pool = by_class[static_cast<size_t>(c)];
        std::shuffle(pool.begin(), pool.end(), rng);
        const auto n_c = static_cast<double>(pool.size());

        size_t cursor = 0;
        for (int k = 0; k < k_clients; ++k) {
            const auto want = static_cast<size_t>(std::floor(probs(c, k) * n_c));
            for (size_t i = 0; i < want && cursor < pool.size(); ++i, ++cursor)
                assigned[static_cast<size_t>(k)].push_back(pool[cursor]);
        }
        if (cursor < pool.size()) {
            int argmax = 0;
            for (int k = 1; k < k_clients; ++k)
                if (probs(c, k) > probs(c, argmax)) argmax = k;
            for (; cursor < pool.size(); ++cursor)
                assigned[static_cast<size_t>(argmax)].push_back(pool[cursor]);
        }
    }

    std::vector<Dataset> out;
    out.reserve(static_cast<size_t>(k_clients));
    for (int k = 0; k < k_clients; ++k) out.push_back(take_rows(data, assigned[static_cast<size_t>(k)]));
    return out;
}

/// Label-shift partition: per class, client shares drawn from a symmetric
/// Dirichlet(alpha).
inline std::vector<Dataset> partition_dirichlet(const Dataset& data, int k_clients, double alpha,
                                                std::mt19937_64& rng) {
    if (k_clients < 1) throw std::invalid_argument("need at least one client");
    if (alpha <= 0.0) throw std::invalid_argument("dirichlet alpha must be positive");

    Eigen::MatrixXd probs(data.classes, k_clients);
    std::gamma_distribution<double> gamma(alpha, 1.0);
    for (int c = 0; c < data.classes; ++c) {
        double total = 0.0;
        for (int k = 0; k < k_clients; ++k) {
            probs(c, k) = gamma(rng);
            total += probs(c, k);
        }
        probs.row(c) /= total;
    }
    return dirichlet_allocate(data, probs, rng);
}

/// Incremental class coverage: client k (1-based) draws from classes
/// {0..k-1} only, in label order. Each client holds floor(n/K) samples
/// (remainder to the last client), split evenly over its allowed classes;
/// each client's per-class draw is without replacement from a fresh shuffle
/// of the class pool, so clients may share samples but never repeat one.
inline std::vector<Dataset> partition_cla(const Dataset& data, int k_clients, std::mt19937_64& rng) {
    if (k_clients < 1) throw std::invalid_argument("need at least one client");
    if (data.classes < k_clients)
        throw std::invalid_argument("partition requires at least K classes");

    std::vector<std::vector<Eigen::Index>> by_class(static_cast<size_t>(data.classes));
    for (Eigen::Index i = 0; i < data.size(); ++i)
        by_class[static_cast<size_t>(data.labels[i])].push_back(i);

    const Eigen::Index base_size = data.size() / k_clients;
    std::vector<Dataset> out;
    out.reserve(static_cast<size_t>(k_clients));
    for (int k = 1; k <= k_clients; ++k) {
        Eigen::Index total = base_size;
        if (k == k_clients) total += data.size() % k_clients;
        std::vector<Eigen::Index> rows;
        rows.reserve(static_cast<size_t>(total));
        for (int c = 0; c < k; ++c) {
            Eigen::Index want = total / k;
            if (c < total % k) want += 1;
            auto& pool = by_class[static_cast<size_t>(c)];
            if (static_cast<size_t>(want) > pool.size())
                throw std::invalid_argument("insufficient samples in class " + std::to_string(c));
            std::shuffle(pool.begin(), pool.end(), rng);
            rows.insert(rows.end(), pool.begin(), pool.begin() + want);
        }
        out.push_back(take_rows(data, rows));
    }
    return out;
}

struct ShiftResult {
    std::vector<Dataset> clients;
    std::vector<Eigen::VectorXd> deltas; // per-client mean shift
    GaussianParams base;
};

/// Covariate-shift generator: fit the baseline Gaussian once, then per client
/// draw a mean shift at the fixed radius and resample the base data with
/// replacement by importance weights under the shifted mean (covariance
/// unchanged). Labels travel with their rows. Each client consumes its own
/// rng stream keyed by client index.
inline ShiftResult generate_covariate_shift(const Dataset& data, const ShiftSpec& spec,
                                            std::uint64_t seed) {
    for (Eigen::Index n_k : spec.sizes)
        if (n_k < 1) throw std::invalid_argument("client sample count must be >= 1");

    ShiftResult result;
    result.base = fit_gaussian(data);
    const int k_clients = static_cast<int>(spec.sizes.size());
    for (int k = 0; k < k_clients; ++k) {
        auto rng = make_stream(seed, {0x5c1f7u, static_cast<std::uint64_t>(k)});
        Eigen::VectorXd delta = sample_shift_vector(result.base, spec.radius_c, rng);
        Eigen::VectorXd mu_k = result.base.mean + delta;
        Eigen::VectorXd w = importance_weights(data, mu_k, result.base);

        std::discrete_distribution<Eigen::Index> pick(w.data(), w.data() + w.size());
        std::vector<Eigen::Index> rows(static_cast<size_t>(spec.sizes[static_cast<size_t>(k)]));
        for (auto& r : rows) r = pick(rng);
        result.clients.push_back(take_rows(data, rows));
        result.deltas.push_back(std::move(delta));
    }
    return result;
}

} // namespace fedlab
