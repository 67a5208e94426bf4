#include <catch2/catch_amalgamated.hpp>

#include "sclens/fft.hpp"
#include "sclens/metric.hpp"
#include "sclens/rng.hpp"

using namespace sclens;

namespace {

GridField random_smooth_field(const Box& box, std::uint64_t seed, double freq_scale = 2.0) {
    // random band-limited field: Gaussian spectral envelope, random phases
    GridField f(box);
    Rng rng(seed);
    for (auto& z : f.v) z = cplx{rng.normal(), rng.normal()};
    apply_multiplier(f, [&](const Vec& k) {
        return cplx{std::exp(-norm2(k) / (2.0 * freq_scale * freq_scale)), 0.0};
    });
    const double n = norm_l2(f);
    f *= cplx{1.0 / n, 0.0};
    return f;
}

// 1D conformal metric g = e^{2 phi}: symbolic Christoffel is phi'.
double phi_prime(const Metric& m, double x) {
    Vec d = m.dphi(vec1(x));
    return d[0];
}

}  // namespace

TEST_CASE("flat metric is the identity everywhere") {
    Metric m = Metric::build(MetricFamily::flat, 0.0, 1.0, 2);
    double lo[3][3], up[3][3], gam[3][3][3];
    for (double x : {-2.0, 0.0, 0.3, 5.0}) {
        Vec p = vec2(x, 0.5 * x);
        m.lower(p, lo);
        m.upper(p, up);
        m.christoffel(p, gam);
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k) {
                REQUIRE(lo[j][k] == (j == k ? 1.0 : 0.0));
                REQUIRE(up[j][k] == (j == k ? 1.0 : 0.0));
                for (int l = 0; l < 2; ++l) REQUIRE(gam[l][j][k] == 0.0);
            }
        REQUIRE(m.rho(p) == 1.0);
    }
}

TEST_CASE("conformal bump: Christoffel matches finite differences of log g") {
    Metric m = Metric::build(MetricFamily::conformal_bump, 0.1, 1.0, 1);
    // Gamma = phi' = (1/2) d/dx log g_{11}; finite-difference the metric itself
    const double h = 1e-5;
    for (double x : {-0.8, -0.3, 0.0, 0.2, 0.66, 0.95}) {
        double lo_p[3][3], lo_m[3][3], gam[3][3][3];
        m.lower(vec1(x + h), lo_p);
        m.lower(vec1(x - h), lo_m);
        const double fd = 0.5 * (std::log(lo_p[0][0]) - std::log(lo_m[0][0])) / (2.0 * h);
        m.christoffel(vec1(x), gam);
        REQUIRE_THAT(gam[0][0][0], Catch::Matchers::WithinAbs(fd, 1e-7));
        REQUIRE_THAT(gam[0][0][0], Catch::Matchers::WithinAbs(phi_prime(m, x), 1e-12));
    }
}

TEST_CASE("lens metric: positive definite, euclidean outside the support") {
    Metric m = Metric::build(MetricFamily::lens, 0.3, 1.0, 2);
    Box box(2, 8.0, 32);
    REQUIRE(m.min_eigenvalue(box) > 0.0);
    REQUIRE(m.min_eigenvalue(box) >= 1.0 - 2.0 * 0.3);

    // g == delta exactly for |x| >= R_supp
    double lo[3][3];
    for (double r : {1.0, 1.3, 2.0, 3.7}) {
        m.lower(vec2(r / std::sqrt(2.0), r / std::sqrt(2.0)), lo);
        REQUIRE(lo[0][0] == 1.0);
        REQUIRE(lo[0][1] == 0.0);
        REQUIRE(lo[1][1] == 1.0);
    }
}

TEST_CASE("built-in families satisfy the eigenvalue floor for eps <= 0.5") {
    Box box(2, 8.0, 32);
    for (double eps : {0.1, 0.3, 0.5}) {
        for (auto fam : {MetricFamily::conformal_bump, MetricFamily::lens}) {
            Metric m = Metric::build(fam, eps, 1.0, 2);
            REQUIRE(m.min_eigenvalue(box) >= 1.0 - 2.0 * eps);
        }
    }
}

TEST_CASE("inverse metric really inverts the metric") {
    Metric m = Metric::build(MetricFamily::lens, 0.3, 1.0, 2);
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Vec x = rng.ball(2, 1.5);
        double lo[3][3], up[3][3];
        m.lower(x, lo);
        m.upper(x, up);
        for (int j = 0; j < 2; ++j)
            for (int l = 0; l < 2; ++l) {
                double s = 0.0;
                for (int k = 0; k < 2; ++k) s += up[j][k] * lo[k][l];
                REQUIRE_THAT(s, Catch::Matchers::WithinAbs(j == l ? 1.0 : 0.0, 1e-12));
            }
    }
}

TEST_CASE("christoffel symmetric in lower indices and zero outside support") {
    Metric m = Metric::build(MetricFamily::lens, 0.3, 1.0, 2);
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        Vec x = rng.ball(2, 0.99);
        double gam[3][3][3];
        m.christoffel(x, gam);
        for (int a = 0; a < 2; ++a)
            for (int j = 0; j < 2; ++j)
                for (int k = 0; k < 2; ++k) REQUIRE(gam[a][j][k] == gam[a][k][j]);
    }
    double gam[3][3][3];
    m.christoffel(vec2(2.0, 0.0), gam);  // |x| = 2 R_supp
    for (int a = 0; a < 2; ++a)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k) REQUIRE(gam[a][j][k] == 0.0);
}

TEST_CASE("laplace_beltrami: Fourier eigenfunction on flat metric") {
    Metric m = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
    Box box(1, 16.0, 256);
    const double k = 2.0 * pi * 3 / box.length;
    GridField u(box);
    u.fill([&](const Vec& x) { return std::exp(iu * k * x[0]); });
    GridField lap = laplace_beltrami(m, u);
    for (std::size_t i = 0; i < u.size(); ++i)
        REQUIRE_THAT(std::abs(lap[i] + k * k * u[i]), Catch::Matchers::WithinAbs(0.0, 1e-10));
}

TEST_CASE("laplace_beltrami: variable-coefficient path reduces to the multiplier") {
    // eps ~ 0 forces the general code path; compare against the Fourier oracle
    Metric m = Metric::build(MetricFamily::conformal_bump, 1e-13, 1.0, 1);
    REQUIRE_FALSE(m.is_flat());
    Box box(1, 16.0, 512);
    GridField u(box);
    u.fill([&](const Vec& x) { return std::exp(cplx{-x[0] * x[0], 0.0}); });
    GridField lap = laplace_beltrami(m, u);
    GridField oracle = u;
    apply_multiplier(oracle, [](const Vec& kv) { return cplx{-norm2(kv), 0.0}; });
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        num += std::norm(lap[i] - oracle[i]);
        den += std::norm(oracle[i]);
    }
    REQUIRE(std::sqrt(num / den) < 1e-10);
}

TEST_CASE("laplace_beltrami self-adjoint in L2(dg)") {
    Metric m = Metric::build(MetricFamily::lens, 0.3, 1.0, 2);
    Box box(2, 16.0, 64);
    GridField u = random_smooth_field(box, 21);
    GridField v = random_smooth_field(box, 22);
    // real fields, as in the spec example
    for (auto& z : u.v) z = cplx{z.real(), 0.0};
    for (auto& z : v.v) z = cplx{z.real(), 0.0};
    const MetricSampling& ms = metric_sampling(m, box);
    auto inner_dg = [&](const GridField& a, const GridField& b) {
        cplx s{0.0, 0.0};
        for (std::size_t i = 0; i < a.size(); ++i)
            s += std::conj(a[i]) * b[i] * ms.sqrtg[i];
        return s * box.cell_volume();
    };
    GridField Lu = laplace_beltrami(m, u);
    GridField Lv = laplace_beltrami(m, v);
    const cplx lhs = inner_dg(Lu, v);
    const cplx rhs = inner_dg(u, Lv);
    REQUIRE(std::abs(lhs - rhs) / std::abs(lhs) < 1e-8);
}

TEST_CASE("principal symbol") {
    SECTION("flat gives |xi|^2, vanishes at xi = 0") {
        Metric m = Metric::build(MetricFamily::flat, 0.0, 1.0, 2);
        REQUIRE(m.symbol(vec2(0.3, -1.0), vec2(2.0, 1.0)) == 5.0);
        REQUIRE(m.symbol(vec2(0.1, 0.2), vec2(0.0, 0.0)) == 0.0);
    }
    SECTION("conformal 1D: a = e^{-2 phi} xi^2") {
        Metric m = Metric::build(MetricFamily::conformal_bump, 0.2, 1.0, 1);
        for (double x : {-0.5, 0.0, 0.4}) {
            const double xi = 1.7;
            const double expect = std::exp(-2.0 * m.phi(vec1(x))) * xi * xi;
            REQUIRE_THAT(m.symbol(vec1(x), vec1(xi)),
                         Catch::Matchers::WithinRel(expect, 1e-14));
        }
    }
    SECTION("nonnegative, |xi|^2 outside the support") {
        Metric m = Metric::build(MetricFamily::lens, 0.3, 1.0, 2);
        Rng rng(3);
        for (int i = 0; i < 40; ++i) {
            Vec x = rng.ball(2, 3.0);
            Vec xi = rng.ball(2, 2.0);
            const double a = m.symbol(x, xi);
            REQUIRE(a >= 0.0);
            if (norm(x) >= 1.0)
                REQUIRE_THAT(a, Catch::Matchers::WithinRel(norm2(xi), 1e-14));
        }
    }
}

TEST_CASE("conjugated operator") {
    SECTION("flat: V == 0 and A = -Delta") {
        Metric m = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        Box box(1, 16.0, 256);
        ConjugatedOperator op = conjugated_operator(m, box);
        for (double v : op.potential) REQUIRE(v == 0.0);
        GridField u = random_smooth_field(box, 5);
        GridField Au = op.apply(u);
        GridField oracle = u;
        apply_multiplier(oracle, [](const Vec& k) { return cplx{norm2(k), 0.0}; });
        for (std::size_t i = 0; i < u.size(); ++i)
            REQUIRE_THAT(std::abs(Au[i] - oracle[i]), Catch::Matchers::WithinAbs(0.0, 1e-10));
    }

    SECTION("<A u, u> is real (self-adjoint on L2(dx))") {
        Metric m = Metric::build(MetricFamily::lens, 0.3, 1.0, 2);
        Box box(2, 16.0, 64);
        ConjugatedOperator op = conjugated_operator(m, box);
        GridField u = random_smooth_field(box, 9);
        const cplx q = inner(u, op.apply(u));
        REQUIRE(std::abs(q.imag()) < 1e-10 * std::abs(q.real()));
    }

    SECTION("conformal 1D potential matches the symbolic oracle") {
        // V = e^{-2 phi} (phi''/2 - 3 phi'^2 / 4)
        Metric m = Metric::build(MetricFamily::conformal_bump, 0.15, 1.0, 1);
        Box box(1, 16.0, 2048);
        ConjugatedOperator op = conjugated_operator(m, box);
        double worst = 0.0;
        for (std::size_t i = 0; i < box.size(); ++i) {
            const Vec x = box.point(i);
            const double p1 = m.dphi(x)[0];
            double h2[3][3];
            m.d2phi(x, h2);
            const double oracle =
                std::exp(-2.0 * m.phi(x)) * (0.5 * h2[0][0] - 0.75 * p1 * p1);
            worst = std::max(worst, std::abs(op.potential[i] - oracle));
        }
        REQUIRE(worst < 1e-8);
    }

    SECTION("analytic potential agrees with the spectral route") {
        // independent route: V = rho * (-Delta_g)(rho^{-1}) evaluated with the
        // spectral Laplace-Beltrami operator
        Metric m = Metric::build(MetricFamily::conformal_bump, 0.15, 1.0, 1);
        Box box(1, 16.0, 2048);
        ConjugatedOperator op = conjugated_operator(m, box);
        const MetricSampling& ms = metric_sampling(m, box);
        GridField rinv(box);
        for (std::size_t i = 0; i < rinv.size(); ++i) rinv[i] = ms.inv_rho[i];
        GridField lap = laplace_beltrami(m, rinv);
        double worst = 0.0;
        for (std::size_t i = 0; i < box.size(); ++i)
            worst = std::max(worst, std::abs(-ms.rho[i] * lap[i].real() - op.potential[i]));
        REQUIRE(worst < 1e-4);
    }

    SECTION("conjugation identity: rho^{-1} A(rho u) = -Delta_g u") {
        Metric m = Metric::build(MetricFamily::lens, 0.2, 1.0, 1);
        Box box(1, 16.0, 2048);
        ConjugatedOperator op = conjugated_operator(m, box);
        const MetricSampling& ms = metric_sampling(m, box);
        GridField u(box);
        u.fill([&](const Vec& x) {
            return std::exp(cplx{-1.5 * x[0] * x[0], 0.8 * x[0]});
        });
        GridField ru = u;
        for (std::size_t i = 0; i < u.size(); ++i) ru[i] *= ms.rho[i];
        GridField Aru = op.apply(ru);
        for (std::size_t i = 0; i < u.size(); ++i) Aru[i] *= ms.inv_rho[i];
        GridField lap = laplace_beltrami(m, u);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            num += std::norm(Aru[i] - (-lap[i]));
            den += std::norm(lap[i]);
        }
        REQUIRE(std::sqrt(num / den) < 1e-6);
    }
}

TEST_CASE("custom metric table reproduces the lens family") {
    const int d = 2;
    Metric lens = Metric::build(MetricFamily::lens, 0.2, 1.0, d);
    Box tbox(d, 8.0, 256);
    MetricTable table;
    table.box = tbox;
    table.g.resize(tbox.size());
    for (std::size_t i = 0; i < tbox.size(); ++i) {
        Vec x = tbox.point(i);
        double lo[3][3];
        lens.lower(x, lo);
        table.g[i] = {lo[0][0], lo[0][1], lo[0][2], lo[1][1], lo[1][2], lo[2][2]};
    }
    Metric custom = Metric::from_table(std::move(table), 1.0);

    double worst_g = 0.0, worst_gamma = 0.0;
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        Vec x = rng.ball(d, 0.9);
        double lo_a[3][3], lo_b[3][3], ga[3][3][3], gb[3][3][3];
        lens.lower(x, lo_a);
        custom.lower(x, lo_b);
        lens.christoffel(x, ga);
        custom.christoffel(x, gb);
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k) {
                worst_g = std::max(worst_g, std::abs(lo_a[j][k] - lo_b[j][k]));
                for (int l = 0; l < d; ++l)
                    worst_gamma = std::max(worst_gamma, std::abs(ga[l][j][k] - gb[l][j][k]));
            }
    }
    REQUIRE(worst_g < 1e-3);       // bilinear interpolation floor
    REQUIRE(worst_gamma < 5e-3);   // 4th-order FD + interpolation
}

TEST_CASE("build_metric rejects bad inputs") {
    REQUIRE_THROWS_AS(Metric::build(MetricFamily::flat, 0.0, 1.0, 4), UnsupportedDimension);
    REQUIRE_THROWS_AS(Metric::build(MetricFamily::lens, 1.5, 1.0, 2), NonPositiveDefinite);
}
