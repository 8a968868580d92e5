#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace fedlab {

enum class ModelKind { Linear, Mlp1 };

inline std::string to_string(ModelKind kind) {
    return kind == ModelKind::Linear ? "linear" : "mlp1";
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "linear") return ModelKind::Linear;
    if (s == "mlp1") return ModelKind::Mlp1;
    throw std::invalid_argument("unknown model kind: " + s);
}

/// Softmax classifier, either linear (w1: d x C, b1: C) or with one hidden
/// ReLU layer (w1: d x H, b1: H, w2: H x C, b2: C). Values are immutable in
/// use: training returns a fresh copy.
struct Classifier {
    ModelKind kind = ModelKind::Linear;
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2; // empty for linear
    Eigen::VectorXd b2; // empty for linear
    double tau = 1.0;

    Eigen::Index input_dims() const { return w1.rows(); }
    Eigen::Index classes() const {
        return kind == ModelKind::Linear ? w1.cols() : w2.cols();
    }
    Eigen::Index hidden() const { return kind == ModelKind::Linear ? 0 : w1.cols(); }
};

/// Same shape as the owning classifier's parameters.
struct Gradient {
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;
    Eigen::VectorXd b2;

    Gradient& operator+=(const Gradient& o) {
        w1 += o.w1;
        b1 += o.b1;
        if (w2.size()) w2 += o.w2;
        if (b2.size()) b2 += o.b2;
        return *this;
    }
    Gradient& operator*=(double s) {
        w1 *= s;
        b1 *= s;
        if (w2.size()) w2 *= s;
        if (b2.size()) b2 *= s;
        return *this;
    }
};

inline Gradient zero_gradient(const Classifier& model) {
    Gradient g;
    g.w1 = Eigen::MatrixXd::Zero(model.w1.rows(), model.w1.cols());
    g.b1 = Eigen::VectorXd::Zero(model.b1.size());
    g.w2 = Eigen::MatrixXd::Zero(model.w2.rows(), model.w2.cols());
    g.b2 = Eigen::VectorXd::Zero(model.b2.size());
    return g;
}

/// Linear model starts at zero so the symmetric trivial cases are exact.
inline Classifier make_linear(Eigen::Index dims, Eigen::Index classes, double tau = 1.0) {
    if (dims < 1 || classes < 2) throw std::invalid_argument("bad model shape");
    Classifier m;
    m.kind = ModelKind::Linear;
    m.w1 = Eigen::MatrixXd::Zero(dims, classes);
    m.b1 = Eigen::VectorXd::Zero(classes);
    m.tau = tau;
    return m;
}

/// One-hidden-layer ReLU net, He-style scaled-normal init.
inline Classifier make_mlp1(Eigen::Index dims, Eigen::Index classes, Eigen::Index hidden,
                            std::mt19937_64& rng, double tau = 1.0) {
    if (dims < 1 || classes < 2 || hidden < 1) throw std::invalid_argument("bad model shape");
    Classifier m;
    m.kind = ModelKind::Mlp1;
    std::normal_distribution<double> n01(0.0, 1.0);
    const double s1 = std::sqrt(2.0 / static_cast<double>(dims));
    const double s2 = std::sqrt(2.0 / static_cast<double>(hidden));
    m.w1.resize(dims, hidden);
    for (Eigen::Index i = 0; i < dims; ++i)
        for (Eigen::Index j = 0; j < hidden; ++j) m.w1(i, j) = s1 * n01(rng);
    m.b1 = Eigen::VectorXd::Zero(hidden);
    m.w2.resize(hidden, classes);
    for (Eigen::Index i = 0; i < hidden; ++i)
        for (Eigen::Index j = 0; j < classes; ++j) m.w2(i, j) = s2 * n01(rng);
    m.b2 = Eigen::VectorXd::Zero(classes);
    m.tau = tau;
    return m;
}

inline Eigen::MatrixXd logits(const Classifier& model, const Eigen::MatrixXd& x) {
    if (x.cols() != model.input_dims())
        throw std::invalid_argument("feature dimension mismatch");
    if (model.kind == ModelKind::Linear)
        return (x * model.w1).rowwise() + model.b1.transpose();
    Eigen::MatrixXd hidden = ((x * model.w1).rowwise() + model.b1.transpose()).cwiseMax(0.0);
    return (hidden * model.w2).rowwise() + model.b2.transpose();
}

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd p = z.colwise() - z.rowwise().maxCoeff();
    p = p.array().exp();
    Eigen::VectorXd sums = p.rowwise().sum();
    return p.array().colwise() / sums.array();
}

/// Per-row class probabilities, softmax of logits/tau with row-max
/// stabilization. For two classes this is the sigmoid of the logit gap.
inline Eigen::MatrixXd forward(const Classifier& model, const Eigen::MatrixXd& x) {
    return softmax_rows(logits(model, x) / model.tau);
}

/// Argmax class per row; ties resolve to the lowest class index.
inline Eigen::VectorXi predict(const Classifier& model, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd z = logits(model, x);
    Eigen::VectorXi out(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        int best = 0;
        for (Eigen::Index c = 1; c < z.cols(); ++c)
            if (z(i, c) > z(i, best)) best = static_cast<int>(c);
        out[i] = best;
    }
    return out;
}

inline nlohmann::json to_json(const Classifier& model) {
    auto mat = [](const Eigen::MatrixXd& m) {
        std::vector<double> v(static_cast<size_t>(m.size()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                v[static_cast<size_t>(i * m.cols() + j)] = m(i, j); // row-major
        return v;
    };
    nlohmann::json j;
    j["kind"] = to_string(model.kind);
    j["dims"] = model.input_dims();
    j["classes"] = model.classes();
    j["hidden"] = model.hidden();
    j["tau"] = model.tau;
    j["w1"] = mat(model.w1);
    j["b1"] = std::vector<double>(model.b1.data(), model.b1.data() + model.b1.size());
    j["w2"] = mat(model.w2);
    j["b2"] = std::vector<double>(model.b2.data(), model.b2.data() + model.b2.size());
    return j;
}

inline Classifier classifier_from_json(const nlohmann::json& j) {
    Classifier m;
    m.kind = model_kind_from_string(j.at("kind").get<std::string>());
    const auto dims = j.at("dims").get<Eigen::Index>();
    const auto classes = j.at("classes").get<Eigen::Index>();
    const auto hidden = j.at("hidden").get<Eigen::Index>();
    m.tau = j.at("tau").get<double>();
    auto mat = [&j](const char* key, Eigen::Index rows, Eigen::Index cols) {
        const auto v = j.at(key).get<std::vector<double>>();
        if (static_cast<Eigen::Index>(v.size()) != rows * cols)
            throw std::invalid_argument("bad parameter array size for " + std::string(key));
        Eigen::MatrixXd m2(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index c = 0; c < cols; ++c) m2(i, c) = v[static_cast<size_t>(i * cols + c)];
        return m2;
    };
    if (m.kind == ModelKind::Linear) {
        m.w1 = mat("w1", dims, classes);
        m.b1 = mat("b1", classes, 1);
        m.w2.resize(0, 0);
        m.b2.resize(0);
    } else {
        m.w1 = mat("w1", dims, hidden);
        m.b1 = mat("b1", hidden, 1);
        m.w2 = mat("w2", hidden, classes);
        m.b2 = mat("b2", classes, 1);
    }
    return m;
}

} // namespace fedlab
