#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "fedlab/dataset.hpp"
#include "fedlab/losses.hpp"
#include "fedlab/model.hpp"

namespace fedlab {

struct TrainResult {
    Classifier model;
    bool updated = false; // false only for the empty-data no-op
};

/// Mini-batch SGD on CE + kd_coeff * KD against a frozen teacher. Data is
/// reshuffled every epoch from the caller's engine; the last partial batch is
/// included. The input model is untouched; empty data returns it unchanged
/// with the no-op flagged.
inline TrainResult train(const Classifier& model, const Dataset& data, const Classifier* teacher,
                         double kd_coeff, double eta, int epochs, Eigen::Index batch,
                         std::mt19937_64& rng) {
    if (eta < 0.0) throw std::invalid_argument("learning rate must be nonnegative");
    if (epochs < 1) throw std::invalid_argument("need at least one epoch");
    if (batch < 1) throw std::invalid_argument("batch size must be >= 1");
    if (teacher == nullptr && kd_coeff != 0.0)
        throw std::invalid_argument("kd_coeff without a teacher");

    TrainResult result{model, false};
    const Eigen::Index n = data.size();
    if (n == 0) return result;
    result.updated = true;

    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (Eigen::Index at = 0; at < n; at += batch) {
            const Eigen::Index len = std::min(batch, n - at);
            std::vector<Eigen::Index> idx(order.begin() + at, order.begin() + at + len);
            Dataset mb = take_rows(data, idx);
            Gradient g = grad_ce(result.model, mb);
            if (teacher != nullptr && kd_coeff != 0.0) {
                Gradient gk = grad_kd(result.model, *teacher, mb);
                gk *= kd_coeff;
                g += gk;
            }
            result.model.w1 -= eta * g.w1;
            result.model.b1 -= eta * g.b1;
            if (result.model.w2.size()) {
                result.model.w2 -= eta * g.w2;
                result.model.b2 -= eta * g.b2;
            }
        }
    }
    return result;
}

} // namespace fedlab
