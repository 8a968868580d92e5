#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

namespace fedlab {

/// Per-client accuracies before and after federation, aligned by client.
struct AccuracyProfile {
    std::vector<double> acc_standalone;
    std::vector<double> acc_federated;
};

inline void validate(const AccuracyProfile& p) {
    if (p.acc_standalone.size() != p.acc_federated.size())
        throw std::invalid_argument("accuracy vectors must align");
    auto in_range = [](double v) { return v >= 0.0 && v <= 1.0; };
    for (double v : p.acc_standalone)
        if (!in_range(v)) throw std::invalid_argument("accuracy out of [0,1]");
    for (double v : p.acc_federated)
        if (!in_range(v)) throw std::invalid_argument("accuracy out of [0,1]");
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("need two aligned vectors of length >= 2");
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw std::domain_error("undefined correlation");
    return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

/// Collaborative-fairness coefficient: 100 x Pearson correlation between
/// standalone and post-federation accuracies.
inline double cf_coefficient(const AccuracyProfile& profile) {
    validate(profile);
    return 100.0 * pearson(profile.acc_standalone, profile.acc_federated);
}

struct MetricsSummary {
    double max_acc = 0.0;
    double avg_acc = 0.0;
    std::optional<double> cf; // empty when the correlation is undefined
};

inline MetricsSummary summarize(const AccuracyProfile& profile) {
    validate(profile);
    if (profile.acc_federated.empty()) throw std::invalid_argument("need at least one client");
    MetricsSummary s;
    s.max_acc = *std::max_element(profile.acc_federated.begin(), profile.acc_federated.end());
    double total = 0.0;
    for (double v : profile.acc_federated) total += v;
    s.avg_acc = total / static_cast<double>(profile.acc_federated.size());
    try {
        s.cf = cf_coefficient(profile);
    } catch (const std::exception&) {
        s.cf = std::nullopt;
    }
    return s;
}

} // namespace fedlab
