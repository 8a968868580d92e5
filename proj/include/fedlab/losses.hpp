#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "fedlab/dataset.hpp"
#include "fedlab/model.hpp"

namespace fedlab {

inline constexpr double kProbFloor = 1e-12;

inline double accuracy(const Classifier& model, const Dataset& data) {
    if (data.size() < 1) throw std::invalid_argument("empty input");
    Eigen::VectorXi pred = predict(model, data.features);
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < data.size(); ++i)
        if (pred[i] == data.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Mean negative log-probability of the true class, probabilities floored
/// before the log so the loss stays finite.
inline double ce_loss(const Classifier& model, const Dataset& data) {
    if (data.size() < 1) throw std::invalid_argument("empty input");
    Eigen::MatrixXd p = forward(model, data.features);
    double total = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i)
        total += -std::log(std::max(p(i, data.labels[i]), kProbFloor));
    return total / static_cast<double>(data.size());
}

/// Soft-label cross-entropy from the teacher's output distribution to the
/// student's. The teacher is a constant: no gradient ever flows to it.
inline double kd_loss(const Classifier& student, const Classifier& teacher, const Dataset& data) {
    if (data.size() < 1) throw std::invalid_argument("empty input");
    if (student.input_dims() != teacher.input_dims() || student.classes() != teacher.classes())
        throw std::invalid_argument("student/teacher shape mismatch");
    Eigen::MatrixXd ps = forward(student, data.features);
    Eigen::MatrixXd pt = forward(teacher, data.features);
    double total = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i)
        for (Eigen::Index c = 0; c < ps.cols(); ++c)
            total += -pt(i, c) * std::log(std::max(ps(i, c), kProbFloor));
    return total / static_cast<double>(data.size());
}

namespace detail {

// Backprop from d(loss)/d(logits); shared by the CE and KD paths, which
// differ only in the target distribution.
inline Gradient grad_from_dlogits(const Classifier& model, const Eigen::MatrixXd& x,
                                  Eigen::MatrixXd dz) {
    Gradient g = zero_gradient(model);
    dz /= model.tau;
    if (model.kind == ModelKind::Linear) {
        g.w1 = x.transpose() * dz;
        g.b1 = dz.colwise().sum();
        return g;
    }
    Eigen::MatrixXd pre = (x * model.w1).rowwise() + model.b1.transpose();
    Eigen::MatrixXd act = pre.cwiseMax(0.0);
    g.w2 = act.transpose() * dz;
    g.b2 = dz.colwise().sum();
    Eigen::MatrixXd dact = dz * model.w2.transpose();
    Eigen::MatrixXd dpre = (pre.array() > 0.0).cast<double>() * dact.array();
    g.w1 = x.transpose() * dpre;
    g.b1 = dpre.colwise().sum();
    return g;
}

} // namespace detail

/// Exact gradient of ce_loss: d(loss)/d(logits) = (p - onehot(y)) / (n tau).
inline Gradient grad_ce(const Classifier& model, const Dataset& data) {
    if (data.size() < 1) throw std::invalid_argument("empty input");
    Eigen::MatrixXd dz = forward(model, data.features);
    for (Eigen::Index i = 0; i < data.size(); ++i) dz(i, data.labels[i]) -= 1.0;
    dz /= static_cast<double>(data.size());
    return detail::grad_from_dlogits(model, data.features, std::move(dz));
}

/// Exact gradient of kd_loss with respect to the student only:
/// d(loss)/d(logits) = (p_student - p_teacher) / (n tau).
inline Gradient grad_kd(const Classifier& student, const Classifier& teacher, const Dataset& data) {
    if (data.size() < 1) throw std::invalid_argument("empty input");
    if (student.input_dims() != teacher.input_dims() || student.classes() != teacher.classes())
        throw std::invalid_argument("student/teacher shape mismatch");
    Eigen::MatrixXd dz = forward(student, data.features) - forward(teacher, data.features);
    dz /= static_cast<double>(data.size());
    return detail::grad_from_dlogits(student, data.features, std::move(dz));
}

} // namespace fedlab
