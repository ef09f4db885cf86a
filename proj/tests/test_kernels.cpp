// Kernel moment conditions by independent quadrature, weight normalization,
// and the documented hand-arithmetic examples.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Core>

#include "civet/errors.hpp"
#include "civet/kernels.hpp"

using namespace civet;

namespace {

// Adaptive Simpson as an independent quadrature oracle. The kernels decay
// like u^(-2*order) so [-50, 50] leaves only a tail far below the 1e-4
// checking tolerance (bounded below).
double simpson(const std::function<double(double)>& f, double a, double b,
               double fa, double fm, double fb) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive(const std::function<double(double)>& f, double a, double b,
                double fa, double fm, double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = simpson(f, a, m, fa, flm, fm);
    const double right = simpson(f, m, b, fm, frm, fb);
    if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol) {
        return left + right + (left + right - whole) / 15.0;
    }
    return adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
           adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b,
                 double tol = 1e-9) {
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    return adaptive(f, a, b, fa, fm, fb, simpson(f, a, b, fa, fm, fb), tol, 40);
}

} // namespace

TEST_CASE("kernels integrate to one and kill lower even moments") {
    for (int order : {2, 4, 6, 8}) {
        CAPTURE(order);
        const double mass =
            integrate([&](double u) { return kernel_eval(order, u); }, -50.0, 50.0);
        CHECK(std::abs(mass - 1.0) < 1e-4);
        for (int p = 2; p < order; p += 2) {
            CAPTURE(p);
            const double mom = integrate(
                [&](double u) { return std::pow(u, p) * kernel_eval(order, u); }, -50.0,
                50.0);
            CHECK(std::abs(mom) < 1e-4);
        }
    }
}

TEST_CASE("kernels are exactly symmetric pointwise") {
    for (int order : {2, 4, 6, 8}) {
        for (double u = 0.0; u <= 6.0; u += 0.03125) {
            REQUIRE(kernel_eval(order, u) == kernel_eval(order, -u));
        }
    }
}

TEST_CASE("order-2 kernel matches its closed form") {
    // (2/pi) / (1 + u^2)^2 at a few points.
    const double pi = std::acos(-1.0);
    CHECK(kernel_eval(2, 0.0) == doctest::Approx(2.0 / pi).epsilon(1e-14));
    CHECK(kernel_eval(2, 1.0) == doctest::Approx(2.0 / pi / 4.0).epsilon(1e-14));
}

TEST_CASE("higher orders go negative somewhere") {
    for (int order : {4, 6, 8}) {
        bool negative = false;
        for (double u = 0.0; u < 5.0; u += 0.01) {
            if (kernel_eval(order, u) < 0.0) negative = true;
        }
        CHECK(negative);
    }
}

TEST_CASE("kernel_order_for rounds up to the available even order and clamps") {
    CHECK(kernel_order_for(1) == 2);
    CHECK(kernel_order_for(2) == 4);
    CHECK(kernel_order_for(3) == 6);
    CHECK(kernel_order_for(4) == 8);
    CHECK(kernel_order_for(6) == 8);
    CHECK(kernel_order_for(20) == 8);
}

TEST_CASE("default bandwidth follows the rate formula") {
    CHECK(default_bandwidth(4000, 6, 1.0) ==
          doctest::Approx(std::pow(4000.0, -1.0 / 20.0)).epsilon(1e-14));
    CHECK(default_bandwidth(4000, 6, 4.5) ==
          doctest::Approx(4.5 * std::pow(4000.0, -1.0 / 20.0)).epsilon(1e-14));
    CHECK_THROWS_AS(default_bandwidth(100, 1, -1.0), Error);
}

TEST_CASE("nw_weights hand examples") {
    SUBCASE("coincident points give uniform weights for every order") {
        Eigen::MatrixXd pts = Eigen::MatrixXd::Constant(5, 2, 0.3);
        Eigen::VectorXd q = Eigen::VectorXd::Constant(2, 0.3);
        for (int order : {2, 4, 6, 8}) {
            KernelSpec spec{order, 0.7, 2};
            Eigen::VectorXd w = nw_weights(pts, q, spec);
            for (int i = 0; i < 5; ++i) CHECK(w[i] == doctest::Approx(0.2).epsilon(1e-12));
        }
    }
    SUBCASE("order 2, distances {0, h} give weights (0.8, 0.2)") {
        // Raw weights are proportional to K(0) = 2/pi and K(1) = (2/pi)/4.
        Eigen::MatrixXd pts(2, 1);
        pts << 0.0, 0.5;
        Eigen::VectorXd q(1);
        q << 0.0;
        KernelSpec spec{2, 0.5, 1};
        Eigen::VectorXd w = nw_weights(pts, q, spec);
        CHECK(w[0] == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(w[1] == doctest::Approx(0.2).epsilon(1e-12));
    }
    SUBCASE("order 4 zeroes a point at distance exactly h") {
        Eigen::MatrixXd pts(2, 1);
        pts << 0.0, 1.0;
        Eigen::VectorXd q(1);
        q << 0.0;
        KernelSpec spec{4, 1.0, 1};
        Eigen::VectorXd w = nw_weights(pts, q, spec);
        CHECK(w[0] == 1.0);
        CHECK(w[1] == 0.0);
    }
}

TEST_CASE("weights are a probability vector on random clouds") {
    std::mt19937_64 gen(2024);
    std::normal_distribution<double> nd;
    for (int order : {2, 4, 6, 8}) {
        Eigen::MatrixXd pts(40, 3);
        for (int i = 0; i < 40; ++i)
            for (int j = 0; j < 3; ++j) pts(i, j) = nd(gen);
        Eigen::VectorXd q(3);
        for (int j = 0; j < 3; ++j) q[j] = nd(gen);
        KernelSpec spec{order, 1.2, 3};
        Eigen::VectorXd w = nw_weights(pts, q, spec);
        CHECK(w.minCoeff() >= 0.0);
        CHECK(std::abs(w.sum() - 1.0) < 1e-10);
    }
}

TEST_CASE("bandwidth at the uniform limit") {
    std::mt19937_64 gen(7);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd pts(30, 2);
    for (int i = 0; i < 30; ++i)
        for (int j = 0; j < 2; ++j) pts(i, j) = nd(gen);
    Eigen::VectorXd q(2);
    q << 0.1, -0.2;
    KernelSpec spec{4, 1e12, 2};
    Eigen::VectorXd w = nw_weights(pts, q, spec);
    for (int i = 0; i < 30; ++i) CHECK(std::abs(w[i] - 1.0 / 30.0) < 1e-6);
}

TEST_CASE("degenerate neighborhood throws a numeric error") {
    // Order 4 vanishes at |u| = 1, so two points both at distance h leave no
    // positive weight.
    Eigen::MatrixXd pts(2, 1);
    pts << 1.0, -1.0;
    Eigen::VectorXd q(1);
    q << 0.0;
    KernelSpec spec{4, 1.0, 1};
    try {
        nw_weights(pts, q, spec);
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::numeric);
    }
}

TEST_CASE("weight matrix rows agree with single-query weights") {
    std::mt19937_64 gen(99);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd pts(25, 3);
    for (int i = 0; i < 25; ++i)
        for (int j = 0; j < 3; ++j) pts(i, j) = nd(gen);
    KernelSpec spec{4, 1.5, 3};
    Eigen::MatrixXd B = nw_weight_matrix(pts, spec);
    for (int i = 0; i < 25; ++i) {
        Eigen::VectorXd w = nw_weights(pts, pts.row(i).transpose(), spec);
        CHECK((B.row(i).transpose() - w).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("kernel spec validation") {
    CHECK_THROWS_AS(KernelSpec{3, 1.0, 1}.validate(), Error);
    CHECK_THROWS_AS((KernelSpec{2, 0.0, 1}).validate(), Error);
    CHECK_THROWS_AS((KernelSpec{2, 1.0, 0}).validate(), Error);
    CHECK_NOTHROW((KernelSpec{8, 0.5, 4}).validate());
}
