#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "lqgrid/observables.hpp"
#include "lqgrid/sim_core.hpp"

using namespace lqgrid;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
    RandomStream rng(seed, "ensemble");
    std::vector<double> x(n);
    for (double& v : x) v = rng.normal();
    return x;
}

// Exact B4 of N(0,1) tilted by exp(theta x^4), by Simpson quadrature.
double tilted_quartic_b4(double theta) {
    const int n = 200000;
    const double lo = -12.0, h = 24.0 / n;
    double m0 = 0, m2 = 0, m4 = 0;
    for (int i = 0; i <= n; ++i) {
        const double x = lo + i * h;
        const double c = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double f = c * std::exp(-0.5 * x * x + theta * x * x * x * x);
        m0 += f;
        m2 += f * x * x;
        m4 += f * x * x * x * x;
    }
    return m4 * m0 / (m2 * m2);
}

double unweighted_binder(const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    const double mean = pairwise_sum(x) / n;
    std::vector<double> d2(x.size()), d4(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - mean;
        d2[i] = d * d;
        d4[i] = d * d * d * d;
    }
    const double mu2 = pairwise_sum(d2) / n;
    return (pairwise_sum(d4) / n) / (mu2 * mu2);
}

}  // namespace

TEST_SUITE("observables") {

TEST_CASE("reweighted expectation basics") {
    const std::vector<double> v{1, 2, 3, 4, 10};
    const std::vector<double> zero(5, 0.0);
    CHECK(reweighted_expectation(v, zero) == 4.0);
    const std::vector<double> one{7.5};
    const std::vector<double> any{-123.0};
    CHECK(reweighted_expectation(one, any) == 7.5);
    CHECK_THROWS(reweighted_expectation(std::vector<double>{}, std::vector<double>{}));
    CHECK_THROWS(reweighted_expectation(v, std::vector<double>(4, 0.0)));
    CHECK(pairwise_sum(std::vector<double>(1000, 0.1)) == doctest::Approx(100.0).epsilon(1e-14));
    const auto w = normalized_weights(std::vector<double>{0.0, std::log(3.0)});
    CHECK(w[0] == doctest::Approx(0.25));
    CHECK(w[1] == doctest::Approx(0.75));
}

TEST_CASE("identity reweighting equals the unweighted pairwise computation bit for bit") {
    const auto x = normals(10007, 3);
    const std::vector<double> zero(x.size(), 0.0);
    CHECK(reweighted_expectation(x, zero) == pairwise_sum(x) / static_cast<double>(x.size()));
    CHECK(binder_cumulant(x, zero) == unweighted_binder(x));
}

TEST_CASE("exponential tilting of a standard normal shifts the mean to t") {
    const auto x = normals(1000000, 21);
    std::vector<double> l(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) l[i] = 0.5 * x[i];
    const Estimate e = jackknife_reweighted_mean(x, l);
    CHECK(e.error > 0.0);
    CHECK(std::abs(e.value - 0.5) < 3.0 * e.error);
}

TEST_CASE("Binder cumulant oracles") {
    const std::vector<double> zero(1000000, 0.0);
    CHECK(std::abs(binder_cumulant(normals(1000000, 1), zero) - 3.0) < 0.02);

    std::vector<double> two(1000);
    for (std::size_t i = 0; i < two.size(); ++i) two[i] = i % 2 ? 1.0 : -1.0;
    CHECK(binder_cumulant(two, std::vector<double>(two.size(), 0.0)) == 1.0);

    RandomStream rng(2, "uniform");
    std::vector<double> u(1000000);
    for (double& v : u) v = 2.0 * rng.uniform() - 1.0;
    CHECK(std::abs(binder_cumulant(u, zero) - 1.8) < 0.02);

    CHECK_THROWS_AS(binder_cumulant(std::vector<double>(10, 2.0), std::vector<double>(10, 0.0)), std::domain_error);
}

TEST_CASE("Binder cumulant is invariant under affine maps") {
    const auto x = normals(5000, 8);
    std::vector<double> l(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) l[i] = 0.3 * x[i] * x[i];
    const double ref = binder_cumulant(x, l);
    for (auto [a, b] : {std::pair{2.0, 5.0}, {-0.1, 100.0}, {1e3, -7.0}}) {
        std::vector<double> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = a * x[i] + b;
        CHECK(binder_cumulant(y, l) == doctest::Approx(ref).epsilon(1e-9));
    }
}

TEST_CASE("a uniform log-weight shift leaves results unchanged") {
    const auto x = normals(4096, 4);
    std::vector<double> l(x.size()), shifted(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        l[i] = std::round(x[i] * 1024.0) / 1024.0;  // dyadic, so the shift is exact
        shifted[i] = l[i] + 1e6;
    }
    CHECK(reweighted_expectation(x, shifted) == reweighted_expectation(x, l));
    CHECK(binder_cumulant(x, shifted) == binder_cumulant(x, l));
    std::vector<double> huge(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) huge[i] = 800.0 * x[i] + 1e6;
    CHECK(std::isfinite(reweighted_expectation(x, huge)));
}

TEST_CASE("jackknife of the mean equals the standard error") {
    const std::vector<double> d{1, 2, 3, 4};
    const std::vector<double> zero(4, 0.0);
    const double se = std::sqrt(5.0 / 3.0) / 2.0;
    const Estimate g = jackknife(reweighted_expectation, d, zero, 1);
    const Estimate f = jackknife_reweighted_mean(d, zero, 1);
    CHECK(g.value == 2.5);
    CHECK(g.error == doctest::Approx(se).epsilon(1e-12));
    CHECK(f.error == doctest::Approx(se).epsilon(1e-12));
    CHECK(se == doctest::Approx(0.6455).epsilon(1e-4));

    const auto x = normals(1000, 5);
    const std::vector<double> z(x.size(), 0.0);
    double s2 = 0;
    const double m = pairwise_sum(x) / 1000.0;
    for (double v : x) s2 += (v - m) * (v - m);
    CHECK(jackknife_reweighted_mean(x, z, 1).error == doctest::Approx(std::sqrt(s2 / 999.0 / 1000.0)).epsilon(1e-12));
    for (std::size_t b : {1u, 2u, 5u, 10u, 100u}) CHECK(jackknife(reweighted_expectation, x, z, b).value == m);
    CHECK(jackknife_reweighted_mean(std::vector<double>(100, 3.0), std::vector<double>(100, 0.0), 10).error == 0.0);
    CHECK_THROWS(jackknife_reweighted_mean(x, z, 600));
    CHECK(block_count(103, 10) == 10);
}

TEST_CASE("fast jackknife paths agree with the generic one") {
    const auto x = normals(2037, 6);
    std::vector<double> l(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) l[i] = -0.2 * std::pow(x[i], 4) + 0.1 * x[i];
    for (std::size_t b : {1u, 7u, 50u}) {
        const Estimate gm = jackknife(reweighted_expectation, x, l, b);
        const Estimate fm = jackknife_reweighted_mean(x, l, b);
        CHECK(fm.value == gm.value);
        CHECK(fm.error == doctest::Approx(gm.error).epsilon(1e-8));
        const Estimate gb = jackknife(binder_cumulant, x, l, b);
        const Estimate fb = jackknife_binder(x, l, b);
        CHECK(fb.value == gb.value);
        CHECK(fb.error == doctest::Approx(gb.error).epsilon(1e-8));
    }
}

TEST_CASE("difference quotients recover the quartic-tilt slope") {
    // d B4 / d theta at 0 for exp(theta x^4) tilting: <x^8> - <x^4>^2 - 2 <x^4>(<x^6> - <x^4>) = 96 - 72.
    CHECK((tilted_quartic_b4(1e-6) - tilted_quartic_b4(-1e-6)) / 2e-6 == doctest::Approx(24.0).epsilon(1e-4));
    CHECK(tilted_quartic_b4(0.0) == doctest::Approx(3.0).epsilon(1e-10));

    const std::vector<double> thetas{-0.001, -0.002, -0.003, -0.004, -0.005};
    RandomStream rng(1234, "ensemble");
    const Ensemble e = synthetic_tilted_ensemble(1000000, thetas, 4, rng);
    const auto q = b4_difference_quotient(e, thetas);
    REQUIRE(q.size() == thetas.size());
    std::vector<FitPoint> pts;
    for (const QuotientPoint& p : q) {
        const double exact = (tilted_quartic_b4(p.theta) - 3.0) / p.theta;
        CHECK(std::abs(p.quotient - exact) < 3.0 * p.error);
        pts.push_back({p.theta, p.quotient, p.error});
    }
    const FitResult fit = extrapolate_mu2(pts);
    REQUIRE(fit.linear);
    CHECK(std::abs(fit.linear->intercept.value - 24.0) < 2.0 * fit.linear->intercept.error);
}

TEST_CASE("difference error is far below the independent-error combination") {
    const std::vector<double> thetas{-0.0005};
    RandomStream rng(99, "ensemble");
    const Ensemble e = synthetic_tilted_ensemble(200000, thetas, 4, rng);
    const auto q = b4_difference_quotient(e, thetas);
    const Estimate b0 = jackknife_binder(e.values, e.column(0.0));
    const Estimate bt = jackknife_binder(e.values, e.column(-0.0005));
    const double combined = std::hypot(b0.error, bt.error) / 0.0005;
    CHECK(q[0].error < 0.2 * combined);
}

TEST_CASE("theta-independent and symmetric ensembles") {
    const std::vector<double> thetas{-0.01, 0.01};
    Ensemble flat;
    flat.values = normals(1000, 3);
    flat.thetas = thetas;
    flat.logweights.assign(2, std::vector<double>(1000, 0.0));
    for (const QuotientPoint& p : b4_difference_quotient(flat, thetas)) {
        CHECK(p.quotient == 0.0);
        CHECK(p.error == 0.0);
    }

    RandomStream rng(3, "ensemble");
    const std::vector<double> one{-0.01};
    Ensemble sym = synthetic_tilted_ensemble(5000, one, 4, rng);
    sym.thetas.push_back(0.01);
    sym.logweights.push_back(sym.logweights[0]);
    const auto q = b4_difference_quotient(sym, thetas);
    CHECK(q[1].quotient == -q[0].quotient);
    CHECK(q[1].error == q[0].error);
    CHECK_THROWS(b4_difference_quotient(sym, std::vector<double>{0.0}));
}

TEST_CASE("Gaussian variance tilt keeps B4 at 3, so its quotient is flat at zero") {
    const std::vector<double> thetas{-0.02, -0.04};
    RandomStream rng(44, "ensemble");
    const Ensemble e = synthetic_tilted_ensemble(400000, thetas, 2, rng);
    for (const QuotientPoint& p : b4_difference_quotient(e, thetas)) CHECK(std::abs(p.quotient) < 3.0 * p.error);
}

TEST_CASE("fits") {
    const std::vector<FitPoint> two{{-0.01, 1.0, 1.0}, {-0.02, 2.0, 1.0}};
    const LinearFit l = fit_linear(two);
    CHECK(l.intercept.value == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
    CHECK(l.slope.value == doctest::Approx(-100.0).epsilon(1e-13));
    CHECK(l.dof == 0);
    CHECK_FALSE(l.chi2_per_dof().has_value());

    const std::vector<FitPoint> flat{{-0.01, 7.0, 0.5}, {-0.02, 7.0, 1.0}, {-0.03, 7.0, 2.0}};
    const FitResult r = extrapolate_mu2(flat);
    CHECK(r.linear->intercept.value == doctest::Approx(7.0).epsilon(1e-14));
    CHECK(r.linear->slope.value == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(r.linear->chi2 == doctest::Approx(0.0).scale(1.0).epsilon(1e-20));
    CHECK(r.constant.value.value == 7.0);
    CHECK(r.constant.chi2 == 0.0);
    CHECK(*r.constant.chi2_per_dof() == 0.0);

    const std::vector<FitPoint> same_theta{{-0.01, 1.0, 1.0}, {-0.01, 2.0, 1.0}};
    CHECK_THROWS_AS(fit_linear(same_theta), RegressionError);
    CHECK_THROWS_AS(fit_constant(std::vector<FitPoint>{{0.1, 1.0, 0.0}}), RegressionError);
    CHECK_FALSE(extrapolate_mu2(std::vector<FitPoint>{{0.1, 1.0, 1.0}}).linear.has_value());
}

TEST_CASE("one-sigma coverage of the linear fit is about 68 percent") {
    RandomStream rng(68, "coverage");
    const double a = 32.0, b = 1700.0;
    const std::vector<double> xs{-0.001, -0.002, -0.003, -0.004, -0.005, -0.006};
    int cover_a = 0, cover_b = 0;
    const int reps = 1000;
    for (int r = 0; r < reps; ++r) {
        std::vector<FitPoint> pts;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double sigma = 1.0 + 0.5 * static_cast<double>(i);
            pts.push_back({xs[i], a + b * xs[i] + sigma * rng.normal(), sigma});
        }
        const LinearFit f = fit_linear(pts);
        cover_a += std::abs(f.intercept.value - a) <= f.intercept.error;
        cover_b += std::abs(f.slope.value - b) <= f.slope.error;
    }
    CHECK(std::abs(cover_a / double(reps) - 0.6827) <= 0.03);
    CHECK(std::abs(cover_b / double(reps) - 0.6827) <= 0.03);
}

TEST_CASE("curvature propagation") {
    const Estimate exact = curvature({32, 0}, {16, 0});
    CHECK(exact.value == 2.0);
    CHECK(exact.error == 0.0);
    const Estimate single = curvature({1, 0.1}, {1, 0});
    CHECK(single.value == 1.0);
    CHECK(single.error == doctest::Approx(0.1).epsilon(1e-15));
    const Estimate e = curvature({10, 1}, {5, 0.5});
    CHECK(e.value == 2.0);
    CHECK(e.error == doctest::Approx(2.0 * std::sqrt(0.02)).epsilon(1e-14));
    CHECK_THROWS_AS(curvature({1, 0}, {0, 1}), std::domain_error);

    RandomStream rng(10, "curvature");
    const int n = 1000000;
    double s = 0, ss = 0;
    for (int i = 0; i < n; ++i) {
        const double r = (10.0 + rng.normal()) / (5.0 + 0.5 * rng.normal());
        s += r;
        ss += r * r;
    }
    const double sd = std::sqrt(ss / n - (s / n) * (s / n));
    CHECK(sd == doctest::Approx(e.error).epsilon(0.05));
}

TEST_CASE("truncated Taylor series for the critical mass") {
    const std::vector<double> c{-39.0};
    CHECK(critical_mass_ratio(c, 0.0) == 1.0);
    CHECK(critical_mass_ratio(c, 0.1) == doctest::Approx(0.61).epsilon(1e-14));
    CHECK(critical_mass_ratio({}, 0.37) == 1.0);
    const std::vector<double> c2{-39.0, 100.0};
    CHECK(critical_mass_ratio(c2, 0.1) == doctest::Approx(1.0 - 0.39 + 0.01).epsilon(1e-14));
}

TEST_CASE("ensemble file round trip and header errors") {
    const std::vector<double> thetas{-0.001, -0.002};
    RandomStream rng(7, "ensemble");
    const Ensemble e = synthetic_tilted_ensemble(50, thetas, 4, rng, 5.1815);
    std::stringstream io;
    write_ensemble(io, e);
    const std::string text = io.str();
    CHECK(text.rfind("beta=5.181500 columns=X,l(-0.001),l(-0.002) thetas=-0.001,-0.002\n", 0) == 0);
    const Ensemble back = parse_ensemble(io);
    CHECK(back.values == e.values);
    CHECK(back.logweights == e.logweights);
    CHECK(back.thetas == e.thetas);

    for (const char* bad : {"beta=5.18 thetas=-0.1\n1 2\n", "beta=5.18 columns=Y,l(-0.1) thetas=-0.1\n1 2\n",
                            "beta=x columns=X,l(-0.1) thetas=-0.1\n1 2\n",
                            "beta=5.18 columns=X,l(-0.2) thetas=-0.1\n1 2\n", ""}) {
        std::istringstream in(bad);
        try {
            parse_ensemble(in);
            FAIL("accepted a malformed header: " << bad);
        } catch (const EnsembleError& err) {
            CHECK(err.line() == 1);
        }
    }
    std::istringstream short_row("beta=5.18 columns=X,l(-0.1) thetas=-0.1\n1 2\n3\n");
    try {
        parse_ensemble(short_row);
        FAIL("accepted a short row");
    } catch (const EnsembleError& err) {
        CHECK(err.line() == 3);
    }
    std::istringstream nonzero("beta=5.18 columns=X,l(0) thetas=0\n1 0\n2 0.5\n");
    CHECK_THROWS_AS(parse_ensemble(nonzero), EnsembleError);
}

}
