#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedlab/gaussian.hpp"
#include "fedlab/rng.hpp"

using namespace fedlab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Dataset from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Dataset d;
    d.classes = 1;
    d.features.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& r : rows) {
        Eigen::Index j = 0;
        for (double v : r) d.features(i, j++) = v;
        ++i;
    }
    d.labels = Eigen::VectorXi::Zero(d.features.rows());
    return d;
}

} // namespace

TEST_CASE("fit_gaussian: zero-spread data gets the pure ridge") {
    Dataset d = from_rows({{3.0, -1.0}, {3.0, -1.0}, {3.0, -1.0}});
    GaussianParams g = fit_gaussian(d);
    REQUIRE(g.mean.isApprox(Eigen::Vector2d(3.0, -1.0)));
    REQUIRE(g.covariance.isApprox(1e-6 * Eigen::Matrix2d::Identity()));
}

TEST_CASE("fit_gaussian: population covariance of the four-point cross") {
    Dataset d = from_rows({{1, 0}, {-1, 0}, {0, 1}, {0, -1}});
    GaussianParams g = fit_gaussian(d);
    const double eps = 1e-6 * 1.0 / 2.0; // trace(diag(.5,.5))/d
    REQUIRE_THAT(g.mean.norm(), WithinAbs(0.0, 1e-15));
    Eigen::Matrix2d expected = Eigen::Vector2d(0.5 + eps, 0.5 + eps).asDiagonal();
    REQUIRE((g.covariance - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("fit_gaussian: one-dimensional population variance") {
    Dataset d = from_rows({{0.0}, {2.0}});
    GaussianParams g = fit_gaussian(d);
    REQUIRE_THAT(g.mean[0], WithinAbs(1.0, 1e-15));
    REQUIRE_THAT(g.covariance(0, 0), WithinRel(1.0 + 1e-6, 1e-12));
}

TEST_CASE("fit_gaussian rejects empty input") {
    Dataset empty;
    empty.classes = 1;
    empty.features.resize(0, 2);
    empty.labels.resize(0);
    REQUIRE_THROWS_WITH(fit_gaussian(empty), "empty input");
}

TEST_CASE("make_gaussian enforces symmetry and positive-definiteness") {
    Eigen::Matrix2d asym;
    asym << 1.0, 0.5, 0.2, 1.0;
    REQUIRE_THROWS_AS(make_gaussian(Eigen::Vector2d::Zero(), asym), std::invalid_argument);
    Eigen::Matrix2d indef;
    indef << 1.0, 2.0, 2.0, 1.0;
    REQUIRE_THROWS_AS(make_gaussian(Eigen::Vector2d::Zero(), indef), std::invalid_argument);
}

TEST_CASE("shift vector: identity metric gives plain Euclidean radius") {
    GaussianParams g = make_gaussian(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    auto rng = make_stream(7);
    Eigen::VectorXd delta = sample_shift_vector(g, 4.0, rng);
    REQUIRE_THAT(delta.norm(), WithinRel(2.0, 1e-12));
}

TEST_CASE("shift vector: zero radius is the zero vector") {
    GaussianParams g = make_gaussian(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    auto rng = make_stream(8);
    REQUIRE(sample_shift_vector(g, 0.0, rng).isZero());
}

TEST_CASE("shift vector: forced direction through diag(4,1)") {
    GaussianParams g =
        make_gaussian(Eigen::Vector2d::Zero(), Eigen::Vector2d(4.0, 1.0).asDiagonal().toDenseMatrix());
    Eigen::VectorXd delta = shift_from_direction(g, 1.0, Eigen::Vector2d(1.0, 0.0));
    REQUIRE_THAT(delta[0], WithinAbs(2.0, 1e-14));
    REQUIRE_THAT(delta[1], WithinAbs(0.0, 1e-14));
}

TEST_CASE("shift vector: negative radius rejected") {
    GaussianParams g = make_gaussian(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    auto rng = make_stream(9);
    REQUIRE_THROWS_AS(sample_shift_vector(g, -1.0, rng), std::invalid_argument);
}

TEST_CASE("shift vector satisfies the Mahalanobis constraint on random metrics") {
    auto rng = make_stream(10);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::Index d = 2 + trial % 5;
        Eigen::MatrixXd a(d, d);
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j) a(i, j) = n01(rng);
        Eigen::MatrixXd cov = a * a.transpose() + 0.25 * Eigen::MatrixXd::Identity(d, d);
        cov = 0.5 * (cov + cov.transpose());
        GaussianParams g = make_gaussian(Eigen::VectorXd::Zero(d), cov);

        const double c = 0.1 + trial * 0.2;
        Eigen::VectorXd delta = sample_shift_vector(g, c, rng);
        GaussianParams at_zero = g;
        const double reached = mahalanobis_sq(at_zero, delta);
        REQUIRE_THAT(reached, WithinRel(c, 1e-9));
    }
}

TEST_CASE("importance weights: single row") {
    Dataset d = from_rows({{1.0, 2.0}});
    GaussianParams g = make_gaussian(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    Eigen::VectorXd w = importance_weights(d, Eigen::Vector2d(5.0, 5.0), g);
    REQUIRE(w.size() == 1);
    REQUIRE_THAT(w[0], WithinAbs(1.0, 1e-15));
}

TEST_CASE("importance weights: symmetry splits mass evenly") {
    Dataset d = from_rows({{1.0, 0.0}, {-1.0, 0.0}});
    GaussianParams g = make_gaussian(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    Eigen::VectorXd w = importance_weights(d, Eigen::Vector2d(0.0, 3.0), g);
    REQUIRE_THAT(w[0], WithinAbs(0.5, 1e-12));
    REQUIRE_THAT(w[1], WithinAbs(0.5, 1e-12));
}

TEST_CASE("importance weights: distances 0 and 2 ln 2 give 2/3 and 1/3") {
    const double r = std::sqrt(2.0 * std::log(2.0));
    Dataset d = from_rows({{0.0, 0.0}, {r, 0.0}});
    GaussianParams g = make_gaussian(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    Eigen::VectorXd w = importance_weights(d, Eigen::Vector2d(0.0, 0.0), g);
    REQUIRE_THAT(w[0], WithinRel(2.0 / 3.0, 1e-12));
    REQUIRE_THAT(w[1], WithinRel(1.0 / 3.0, 1e-12));
}

TEST_CASE("importance weights survive huge Mahalanobis distances") {
    Dataset d = from_rows({{0.0, 0.0}, {80.0, 0.0}, {160.0, 0.0}});
    GaussianParams g = make_gaussian(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    Eigen::VectorXd w = importance_weights(d, Eigen::Vector2d(160.0, 0.0), g);
    REQUIRE(w.allFinite());
    REQUIRE_THAT(w.sum(), WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(w[2], WithinAbs(1.0, 1e-12)); // everything else underflows cleanly
}
