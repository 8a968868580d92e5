#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "fedlab/rng.hpp"
#include "fedlab/shift_theory.hpp"

using namespace fedlab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

GaussianParams gaussian1d(double mean, double var) {
    return make_gaussian(Eigen::VectorXd::Constant(1, mean),
                         Eigen::MatrixXd::Constant(1, 1, var));
}

GaussianParams random_gaussian(Eigen::Index d, std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Eigen::VectorXd mean(d);
    for (Eigen::Index i = 0; i < d; ++i) mean[i] = n01(rng);
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) a(i, j) = n01(rng);
    Eigen::MatrixXd cov = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(d, d);
    return make_gaussian(mean, 0.5 * (cov + cov.transpose()));
}

// Test-side density, written against the covariance inverse directly so the
// Monte-Carlo oracle shares nothing with the Cholesky-based implementation.
double log_pdf(const GaussianParams& g, const Eigen::VectorXd& x) {
    const Eigen::MatrixXd inv = g.covariance.inverse();
    const double quad = (x - g.mean).dot(inv * (x - g.mean));
    const double logdet = std::log(g.covariance.determinant());
    return -0.5 * (quad + logdet + static_cast<double>(g.dims()) * std::log(2.0 * std::numbers::pi));
}

} // namespace

TEST_CASE("kl_gaussian_exact: identical distributions give zero") {
    auto rng = make_stream(40);
    GaussianParams g = random_gaussian(3, rng);
    REQUIRE_THAT(kl_gaussian_exact(g, g), WithinAbs(0.0, 1e-12));
}

TEST_CASE("kl_gaussian_exact: unit-variance mean gap") {
    REQUIRE_THAT(kl_gaussian_exact(gaussian1d(1.0, 1.0), gaussian1d(0.0, 1.0)),
                 WithinAbs(0.5, 1e-12));
}

TEST_CASE("kl_gaussian_exact: variance mismatch") {
    const double expected = 0.5 * (2.0 - 1.0 - std::log(2.0));
    REQUIRE_THAT(kl_gaussian_exact(gaussian1d(0.0, 2.0), gaussian1d(0.0, 1.0)),
                 WithinRel(expected, 1e-12));
}

TEST_CASE("kl_gaussian_exact rejects dimension mismatch") {
    auto rng = make_stream(41);
    REQUIRE_THROWS_AS(kl_gaussian_exact(random_gaussian(2, rng), random_gaussian(3, rng)),
                      std::invalid_argument);
}

TEST_CASE("kl_gaussian_exact is nonnegative and zero only at equality") {
    auto rng = make_stream(42);
    for (int trial = 0; trial < 30; ++trial) {
        GaussianParams p = random_gaussian(1 + trial % 4, rng);
        GaussianParams q = random_gaussian(1 + trial % 4, rng);
        REQUIRE(kl_gaussian_exact(p, q) >= 0.0);
        REQUIRE(kl_gaussian_exact(p, q) > 1e-6); // independent random pairs never coincide
    }
}

TEST_CASE("kl_gaussian_exact agrees with a million-sample Monte-Carlo estimate") {
    auto rng = make_stream(43);
    GaussianParams p = random_gaussian(3, rng);
    GaussianParams q = random_gaussian(3, rng);
    const double closed_form = kl_gaussian_exact(p, q);

    auto draw_rng = make_stream(44);
    Dataset draws = draw_gaussian(p, 1000000, draw_rng);
    double mc = 0.0;
    for (Eigen::Index i = 0; i < draws.size(); ++i) {
        const Eigen::VectorXd x = draws.features.row(i).transpose();
        mc += log_pdf(p, x) - log_pdf(q, x);
    }
    mc /= static_cast<double>(draws.size());
    REQUIRE_THAT(mc, WithinRel(closed_form, 0.02));
}

TEST_CASE("gaussian approximation: zero perturbation leaves the fitting term") {
    GaussianPerturbation pert;
    pert.base = make_gaussian(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
    pert.delta_mean = Eigen::VectorXd::Zero(2);
    pert.delta_cov = Eigen::MatrixXd::Zero(2, 2);
    pert.sample_count = 100;
    REQUIRE(kl_approx_gaussian(pert) == 2.0 * 5.0 / 400.0); // = 0.025
}

TEST_CASE("gaussian approximation: pure mean shift in the identity metric") {
    GaussianPerturbation pert;
    pert.base = make_gaussian(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
    pert.delta_mean = Eigen::Vector3d(0.2, 0.0, 0.0); // squared norm 0.04
    pert.delta_cov = Eigen::MatrixXd::Zero(3, 3);
    pert.sample_count = 10000;
    REQUIRE_THAT(kl_approx_gaussian(pert), WithinRel(0.02045, 1e-12));
}

TEST_CASE("gaussian approximation: isotropic covariance inflation") {
    const Eigen::Index m = 4;
    const double eps = 0.03;
    const long a = 500;
    GaussianPerturbation pert;
    pert.base = make_gaussian(Eigen::VectorXd::Zero(m), Eigen::MatrixXd::Identity(m, m));
    pert.delta_mean = Eigen::VectorXd::Zero(m);
    pert.delta_cov = eps * Eigen::MatrixXd::Identity(m, m);
    pert.sample_count = a;
    const double md = static_cast<double>(m);
    const double expected =
        md * (eps * eps / 4.0 - eps * eps * eps / 2.0) + md * (md + 3.0) / (4.0 * a);
    REQUIRE_THAT(kl_approx_gaussian(pert), WithinRel(expected, 1e-12));
}

TEST_CASE("fisher approximation: zero perturbation leaves R/(2A)") {
    FisherPerturbation pert;
    pert.delta = Eigen::VectorXd::Zero(3);
    pert.fisher = Eigen::MatrixXd::Identity(3, 3);
    pert.fisher_grad_applied = Eigen::MatrixXd::Zero(3, 3);
    pert.free_params = 7;
    pert.sample_count = 50;
    REQUIRE(kl_approx_fisher(pert) == 7.0 / 100.0);
}

TEST_CASE("fisher approximation: identity fisher quadratic") {
    FisherPerturbation pert;
    pert.delta = Eigen::Vector2d(1.0, 1.0); // squared norm 2
    pert.fisher = Eigen::MatrixXd::Identity(2, 2);
    pert.fisher_grad_applied = Eigen::MatrixXd::Zero(2, 2);
    pert.free_params = 4;
    pert.sample_count = 100;
    REQUIRE_THAT(kl_approx_fisher(pert), WithinRel(1.02, 1e-14));
}

TEST_CASE("fisher approximation: scalar arithmetic") {
    FisherPerturbation pert;
    pert.delta = Eigen::VectorXd::Constant(1, 0.1);
    pert.fisher = Eigen::MatrixXd::Constant(1, 1, 3.0);
    pert.fisher_grad_applied = Eigen::MatrixXd::Constant(1, 1, 0.6);
    pert.free_params = 2;
    pert.sample_count = 40;
    const double expected = 0.5 * 0.03 + 0.5 * 0.006 + 2.0 / 80.0;
    REQUIRE_THAT(kl_approx_fisher(pert), WithinRel(expected, 1e-14));
}

namespace {

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Eigen::VectorXd vec(const Eigen::MatrixXd& m) {
    return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

} // namespace

TEST_CASE("gaussian and fisher routes agree when the covariance shift is zero") {
    auto rng = make_stream(45);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index m = 2 + trial % 3;
        GaussianParams base = random_gaussian(m, rng);
        Eigen::VectorXd delta_mean = sample_shift_vector(base, 0.3, rng);

        GaussianPerturbation gp;
        gp.base = base;
        gp.delta_mean = delta_mean;
        gp.delta_cov = Eigen::MatrixXd::Zero(m, m);
        gp.sample_count = 1000;

        FisherPerturbation fp;
        fp.delta = delta_mean;
        fp.fisher = base.covariance.inverse();
        fp.fisher = 0.5 * (fp.fisher + fp.fisher.transpose());
        fp.fisher_grad_applied = Eigen::MatrixXd::Zero(m, m);
        fp.free_params = m * (m + 3) / 2;
        fp.sample_count = 1000;
        // free_params must be even or the halving truncates: M(M+3) is always even
        REQUIRE(2 * fp.free_params == m * (m + 3));

        REQUIRE_THAT(kl_approx_fisher(fp), WithinAbs(kl_approx_gaussian(gp), 1e-10));
    }
}

TEST_CASE("second-order mean term matches the fisher route for nonzero covariance shift") {
    auto rng = make_stream(46);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index m = 2 + trial % 3;
        GaussianParams base = random_gaussian(m, rng);
        Eigen::VectorXd delta_mean = sample_shift_vector(base, 0.5, rng);
        Eigen::MatrixXd delta_cov =
            sample_cov_perturbation(base, 0.05 * base.covariance.norm(), rng);

        GaussianPerturbation with_mean, without_mean;
        with_mean.base = without_mean.base = base;
        with_mean.delta_cov = without_mean.delta_cov = delta_cov;
        with_mean.sample_count = without_mean.sample_count = 2000;
        with_mean.delta_mean = delta_mean;
        without_mean.delta_mean = Eigen::VectorXd::Zero(m);
        const double mean_term = kl_approx_gaussian(with_mean) - kl_approx_gaussian(without_mean);

        Eigen::MatrixXd precision = base.covariance.inverse();
        precision = 0.5 * (precision + precision.transpose());
        FisherPerturbation fp;
        fp.delta = delta_mean;
        fp.fisher = precision;
        fp.fisher_grad_applied = -precision * delta_cov * precision;
        // symmetric up to roundoff for symmetric inputs
        fp.fisher_grad_applied = 0.5 * (fp.fisher_grad_applied + fp.fisher_grad_applied.transpose());
        fp.free_params = 1;
        fp.sample_count = 2000;
        const double fisher_mean_term = kl_approx_fisher(fp) - 1.0 / (2.0 * 2000.0);

        REQUIRE_THAT(fisher_mean_term, WithinAbs(mean_term, 1e-10));
    }
}

TEST_CASE("full kronecker fisher reproduces the gaussian formula at identity covariance") {
    // At Sigma = I the vec-form quadratic and the Frobenius form coincide, so
    // the whole formula must match, covariance blocks included.
    auto rng = make_stream(47);
    const Eigen::Index m = 3;
    GaussianParams base = make_gaussian(Eigen::VectorXd::Zero(m), Eigen::MatrixXd::Identity(m, m));
    Eigen::VectorXd delta_mean = sample_shift_vector(base, 0.2, rng);
    Eigen::MatrixXd delta_cov = sample_cov_perturbation(base, 0.1, rng);

    GaussianPerturbation gp;
    gp.base = base;
    gp.delta_mean = delta_mean;
    gp.delta_cov = delta_cov;
    gp.sample_count = 900;

    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(m, m);
    const Eigen::Index n = m + m * m;
    FisherPerturbation fp;
    fp.delta.resize(n);
    fp.delta << delta_mean, vec(delta_cov);
    fp.fisher = Eigen::MatrixXd::Zero(n, n);
    fp.fisher.topLeftCorner(m, m) = eye;                          // precision block
    fp.fisher.bottomRightCorner(m * m, m * m) = 0.5 * kron(eye, eye); // vec block
    fp.fisher_grad_applied = Eigen::MatrixXd::Zero(n, n);
    fp.fisher_grad_applied.topLeftCorner(m, m) = -delta_cov;
    fp.fisher_grad_applied.bottomRightCorner(m * m, m * m) =
        0.5 * (-kron(delta_cov, eye) - kron(eye, delta_cov));
    fp.free_params = m * (m + 3) / 2;
    fp.sample_count = 900;

    REQUIRE_THAT(kl_approx_fisher(fp), WithinAbs(kl_approx_gaussian(gp), 1e-10));
}

TEST_CASE("approximation is strictly increasing in the shift radius") {
    auto rng = make_stream(48);
    GaussianParams base = random_gaussian(4, rng);
    Eigen::VectorXd direction(4);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (Eigen::Index i = 0; i < direction.size(); ++i) direction[i] = n01(rng);

    double last = -1.0;
    for (double c : {0.0, 0.1, 0.5, 1.0, 2.0, 4.0}) {
        GaussianPerturbation pert;
        pert.base = base;
        pert.delta_mean = shift_from_direction(base, c, direction);
        pert.delta_cov = Eigen::MatrixXd::Zero(4, 4);
        pert.sample_count = 100;
        const double approx = kl_approx_gaussian(pert);
        REQUIRE(approx > last);
        last = approx;
    }
}

TEST_CASE("approximation fidelity in the small-perturbation regime") {
    // M=5, A=1e4, C<=0.25, no covariance shift: the estimate must sit within
    // 10% of exact-shift-KL + fitting term, averaged over 20 seeds.
    const Eigen::Index m = 5;
    const long a = 10000;
    double total_error = 0.0, total_value = 0.0;
    for (int seed = 0; seed < 20; ++seed) {
        auto rng = make_stream(49, {static_cast<std::uint64_t>(seed)});
        GaussianParams base = random_gaussian(m, rng);
        GaussianPerturbation pert;
        pert.base = base;
        pert.delta_mean = sample_shift_vector(base, 0.25, rng);
        pert.delta_cov = Eigen::MatrixXd::Zero(m, m);
        pert.sample_count = a;

        GaussianParams shifted = make_gaussian(base.mean + pert.delta_mean, base.covariance);
        const double exact = kl_gaussian_exact(shifted, base);
        const double fitting = static_cast<double>(m * (m + 3)) / (4.0 * a);
        const double approx = kl_approx_gaussian(pert);
        total_error += std::abs(approx - (exact + fitting));
        total_value += exact + fitting;
    }
    REQUIRE(total_error / 20.0 <= 0.10 * (total_value / 20.0));
}

TEST_CASE("covariance perturbation sampling respects the PD backoff") {
    auto rng = make_stream(50);
    GaussianParams base = random_gaussian(3, rng);
    Eigen::MatrixXd pert = sample_cov_perturbation(base, 5.0 * base.covariance.norm(), rng);
    REQUIRE((pert - pert.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    REQUIRE_NOTHROW(make_gaussian(base.mean, base.covariance + pert));

    auto rng2 = make_stream(51);
    REQUIRE_THROWS_AS(sample_cov_perturbation(base, 1e9, rng2), std::runtime_error);
}

TEST_CASE("validation experiment: zero shift makes real and random twins") {
    double real_mean = 0.0, random_mean = 0.0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        auto rng = make_stream(52, {static_cast<std::uint64_t>(s)});
        GaussianParams base_law = random_gaussian(3, rng);
        Dataset base = draw_gaussian(base_law, 5000, rng);
        auto rows = validate_approximation(base, {0.0}, {2000}, 52 + s, 0.0);
        real_mean += rows[0].real_kl / seeds;
        random_mean += rows[0].random_kl / seeds;
    }
    // both are pure fitting error; they agree in expectation
    REQUIRE_THAT(real_mean, WithinRel(random_mean, 0.35));
}

TEST_CASE("validation experiment: random baseline matches the fitting term") {
    const Eigen::Index m = 5;
    const long a = 10000;
    double random_mean = 0.0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        auto rng = make_stream(53, {static_cast<std::uint64_t>(s)});
        GaussianParams law = random_gaussian(m, rng);
        Dataset base = draw_gaussian(law, 20000, rng);
        auto rows = validate_approximation(base, {1.0}, {a}, 530 + s);
        random_mean += rows[0].random_kl / seeds;
    }
    const double fitting = static_cast<double>(m * (m + 3)) / (4.0 * a);
    REQUIRE_THAT(random_mean, WithinRel(fitting, 0.25));
}

TEST_CASE("validation experiment: real shift dominates the random baseline") {
    double real_mean = 0.0, random_mean = 0.0;
    const int seeds = 10;
    for (int s = 0; s < seeds; ++s) {
        auto rng = make_stream(54, {static_cast<std::uint64_t>(s)});
        GaussianParams law = random_gaussian(4, rng);
        Dataset base = draw_gaussian(law, 10000, rng);
        auto rows = validate_approximation(base, {1.0}, {5000}, 540 + s);
        real_mean += rows[0].real_kl / seeds;
        random_mean += rows[0].random_kl / seeds;
    }
    REQUIRE(real_mean > random_mean);
}

TEST_CASE("validation experiment rejects starved fits") {
    auto rng = make_stream(55);
    GaussianParams law = random_gaussian(4, rng);
    Dataset base = draw_gaussian(law, 1000, rng);
    REQUIRE_THROWS_AS(validate_approximation(base, {1.0}, {30}, 55), std::invalid_argument);
}

TEST_CASE("validation rows serialize with the documented header") {
    auto rng = make_stream(56);
    GaussianParams law = random_gaussian(2, rng);
    Dataset base = draw_gaussian(law, 2000, rng);
    auto rows = validate_approximation(base, {0.5, 2.0}, {500, 500}, 56);
    const auto path = std::filesystem::temp_directory_path() / "fedlab_validation.csv";
    write_validation_csv(rows, path.string());
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "client,C,A,real_kl,approx_kl,random_kl");
    std::string line;
    int count = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++count;
    REQUIRE(count == 2);
    std::filesystem::remove(path);
}
