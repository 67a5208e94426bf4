#include <catch2/catch_amalgamated.hpp>

#include "sclens/spectral.hpp"

using namespace sclens;

namespace {

GridField band_limited_noise(const Box& box, std::uint64_t seed, double freq_scale = 2.0,
                             bool zero_mean = false) {
    GridField f(box);
    Rng rng(seed);
    for (auto& z : f.v) z = cplx{rng.normal(), rng.normal()};
    apply_multiplier(f, [&](const Vec& k) {
        if (zero_mean && norm2(k) == 0.0) return cplx{0.0, 0.0};
        return cplx{std::exp(-norm2(k) / (2.0 * freq_scale * freq_scale)), 0.0};
    });
    f *= cplx{1.0 / norm_l2(f), 0.0};
    return f;
}

double rel_l2_diff(const GridField& a, const GridField& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += std::norm(a[i] - b[i]);
        den += std::norm(b[i]);
    }
    return std::sqrt(num / std::max(den, 1e-300));
}

// least squares slope of log(value) vs log(param); local helper, the full
// fit lives in the analysis module
double loglog_slope(const std::vector<double>& param, const std::vector<double>& value) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int n = static_cast<int>(param.size());
    for (int i = 0; i < n; ++i) {
        const double x = std::log(param[i]), y = std::log(value[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST_CASE("fourier multiplier basics") {
    Box box(1, 16.0, 512);
    GridField f = band_limited_noise(box, 1);

    SECTION("identity multiplier") {
        GridField g = fourier_multiplier([](const Vec&) { return cplx{1.0, 0.0}; }, f);
        REQUIRE(rel_l2_diff(g, f) < 1e-13);
    }
    SECTION("heat multiplier preserves total mass") {
        cplx before{0.0, 0.0};
        for (auto& z : f.v) before += z;
        GridField g = fourier_multiplier(
            [](const Vec& k) { return cplx{std::exp(-0.7 * norm2(k)), 0.0}; }, f);
        cplx after{0.0, 0.0};
        for (auto& z : g.v) after += z;
        REQUIRE(std::abs(before - after) < 1e-10 * std::abs(before));
    }
    SECTION("-|xi|^2 multiplier equals flat laplace_beltrami") {
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        GridField a = fourier_multiplier([](const Vec& k) { return cplx{-norm2(k), 0.0}; }, f);
        GridField b = laplace_beltrami(flat, f);
        REQUIRE(rel_l2_diff(a, b) < 1e-10);
    }
}

TEST_CASE("frequency cutoffs are nested") {
    FrequencyCutoffs chi;
    chi.eps_band = 0.5;
    // chi_1 == 1 on the closed band [eps, 1/eps]
    REQUIRE(chi.radial(1, 0.5) == 1.0);
    REQUIRE(chi.radial(1, 2.0) == 1.0);
    REQUIRE(chi.radial(1, 1.0) == 1.0);
    // chi_{j+1} == 1 on supp chi_j
    for (int j = 1; j <= 2; ++j) {
        for (double r = 0.01; r < 6.0; r += 0.01) {
            if (chi.radial(j, r) > 0.0) REQUIRE(chi.radial(j + 1, r) == 1.0);
        }
    }
    // vanishes near zero and at infinity
    REQUIRE(chi.radial(3, 1e-3) == 0.0);
    REQUIRE(chi.radial(3, 50.0) == 0.0);
}

TEST_CASE("weyl quantization") {
    Box box(1, 16.0, 256);
    const double h = 0.1;
    GridField f = band_limited_noise(box, 3, 4.0);

    SECTION("a = |xi|^2 gives -h^2 Delta") {
        SeparableSymbol sym;
        sym.terms.push_back({[](const Vec&) { return 1.0; },
                             [](const Vec& xi) { return norm2(xi); }});
        GridField g = weyl_quantize(sym, h, f);
        GridField oracle = fourier_multiplier(
            [&](const Vec& k) { return cplx{h * h * norm2(k), 0.0}; }, f);
        REQUIRE(rel_l2_diff(g, oracle) < 1e-8);
    }

    SECTION("a = V(x) multiplies pointwise") {
        auto vfun = [](const Vec& x) { return std::exp(-x[0] * x[0]); };
        SeparableSymbol sym;
        sym.terms.push_back({vfun, [](const Vec&) { return 1.0; }});
        GridField g = weyl_quantize(sym, h, f);
        GridField oracle = f;
        for (std::size_t i = 0; i < f.size(); ++i) oracle[i] *= vfun(box.point(i));
        REQUIRE(rel_l2_diff(g, oracle) < 1e-10);
    }

    SECTION("real symbols give Hermitian matrices (matrix oracle, N=256)") {
        Metric m = Metric::build(MetricFamily::conformal_bump, 0.15, 1.0, 1);
        WeylOperator op(metric_symbol(m), h, box);
        auto mat = op.dense_matrix();
        const int n = box.n;
        double asym = 0.0, scale = 0.0;
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                asym = std::max(asym, std::abs(mat[r * n + c] - std::conj(mat[c * n + r])));
                scale = std::max(scale, std::abs(mat[r * n + c]));
            }
        REQUIRE(asym <= 1e-8 * scale);

        // <a^w f, f> real
        GridField g = op.apply(f);
        const cplx q = inner(f, g);
        REQUIRE(std::abs(q.imag()) <= 1e-10 * std::abs(q));
    }

    SECTION("d=3 rejected") {
        Box b3(3, 8.0, 8);
        GridField g(b3);
        SeparableSymbol sym;
        sym.terms.push_back({[](const Vec&) { return 1.0; },
                             [](const Vec& xi) { return norm2(xi); }});
        REQUIRE_THROWS_AS(weyl_quantize(sym, 0.1, g), DimensionTooLarge);
    }
}

TEST_CASE("localized operator") {
    FrequencyCutoffs chi;
    chi.eps_band = 0.5;

    SECTION("flat: equals the multiplier chi_3(h xi) |h xi|^2") {
        Box box(1, 16.0, 512);
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        LocalizedOperator op = localized_operator(flat, chi, 0.05, box);
        GridField f = band_limited_noise(box, 5, 8.0);
        GridField g = op.apply(f);
        GridField oracle = fourier_multiplier(
            [&](const Vec& k) {
                const Vec xi = 0.05 * k;
                return cplx{chi(3, xi) * norm2(xi), 0.0};
            },
            f);
        REQUIRE(rel_l2_diff(g, oracle) < 1e-8);
        REQUIRE(op.flat);
    }

    SECTION("zero field maps to zero") {
        Box box(1, 16.0, 128);
        Metric m = Metric::build(MetricFamily::conformal_bump, 0.1, 1.0, 1);
        LocalizedOperator op = localized_operator(m, chi, 0.1, box);
        GridField z(box);
        GridField g = op.apply(z);
        REQUIRE(norm_l2(g) == 0.0);
    }

    SECTION("A(h) and A'(h) agree on frequency-localized data") {
        // difference is the h^2 zero-order part, O(h^2 eps^2) on mid-band data
        Box box(1, 16.0, 1024);
        Metric m = Metric::build(MetricFamily::conformal_bump, 0.005, 1.0, 1);
        ConjugatedOperator a_op = conjugated_operator(m, box);
        std::vector<double> hs = {0.1, 0.05, 0.025};
        std::vector<double> errs;
        for (double h : hs) {
            LocalizedOperator ap = localized_operator(m, chi, h, box);
            // mid-band packet: |h xi| ~ 1 with O(sqrt h) spread
            GridField f(box);
            f.fill([&](const Vec& x) {
                return std::exp(iu * (1.0 / h) * x[0]) *
                       std::exp(-x[0] * x[0] / (2.0 * 0.5));
            });
            f = frequency_localize(chi, 1, h, f);
            GridField lhs = a_op.apply(f);
            lhs *= cplx{h * h, 0.0};
            GridField rhs = ap.apply(f);
            errs.push_back(rel_l2_diff(lhs, rhs) * norm_l2(rhs) / norm_l2(f));
        }
        REQUIRE(errs[1] <= 1e-6);             // h = 0.05
        REQUIRE(errs[0] / errs[1] >= 4.0);    // halving h quarters the error
        REQUIRE(errs[1] / errs[2] >= 4.0);
    }
}

TEST_CASE("heat semigroup and Littlewood-Paley projections") {
    SECTION("flat projection equals the Fourier heat multiplier") {
        Box box(1, 16.0, 512);
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        GridField f = band_limited_noise(box, 7, 3.0);
        const double n_dyadic = 4.0;
        GridField p = heat_lp_project(flat, n_dyadic, f, LpMode::leq);
        GridField oracle = fourier_multiplier(
            [&](const Vec& k) {
                return cplx{std::exp(-norm2(k) / (n_dyadic * n_dyadic)), 0.0};
            },
            f);
        REQUIRE(rel_l2_diff(p, oracle) < 1e-8);
    }

    SECTION("Crank-Nicolson engine validated against the Fourier oracle") {
        // force the CN path on a nearly flat metric; this pins the CN engine
        // accuracy on smooth fields rather than dispatching to the multiplier
        Box box(1, 16.0, 256);
        Metric m = Metric::build(MetricFamily::conformal_bump, 1e-13, 1.0, 1);
        GridField f = band_limited_noise(box, 8, 1.5);
        HeatOptions opt;
        opt.engine = HeatEngine::crank_nicolson;
        opt.substeps = 32;
        GridField p = heat_semigroup(m, 1.0 / 16.0, f, opt);
        GridField oracle = fourier_multiplier(
            [&](const Vec& k) { return cplx{std::exp(-norm2(k) / 16.0), 0.0}; }, f);
        REQUIRE(rel_l2_diff(p, oracle) < 1e-5);
    }

    SECTION("eigenbasis engine matches CN on a lens metric") {
        Box box(1, 16.0, 256);
        Metric m = Metric::build(MetricFamily::lens, 0.3, 1.0, 1);
        GridField f = band_limited_noise(box, 9, 1.5);
        HeatOptions eig;
        eig.engine = HeatEngine::eigenbasis;
        HeatOptions cn;
        cn.engine = HeatEngine::crank_nicolson;
        cn.substeps = 64;
        GridField a = heat_semigroup(m, 0.1, f, eig);
        GridField b = heat_semigroup(m, 0.1, f, cn);
        REQUIRE(rel_l2_diff(a, b) < 1e-4);
    }

    SECTION("heat flow conserves dg-mass on a lens metric") {
        Box box(1, 16.0, 256);
        Metric m = Metric::build(MetricFamily::lens, 0.3, 1.0, 1);
        const MetricSampling& ms = metric_sampling(m, box);
        GridField f = band_limited_noise(box, 10, 1.5);
        auto dg_mass = [&](const GridField& u) {
            cplx s{0.0, 0.0};
            for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * ms.sqrtg[i];
            return s * box.cell_volume();
        };
        const cplx before = dg_mass(f);
        for (double t : {0.1, 1.0}) {
            GridField g = heat_semigroup(m, t, f);
            REQUIRE(std::abs(dg_mass(g) - before) <= 1e-8 * std::abs(before));
        }
    }

    SECTION("constant fields: kept by P_{<=N}, killed by P_N") {
        Box box(1, 16.0, 128);
        Metric m = Metric::build(MetricFamily::lens, 0.2, 1.0, 1);
        GridField c(box);
        for (auto& z : c.v) z = cplx{0.7, -0.2};
        GridField keep = heat_lp_project(m, 4.0, c, LpMode::leq);
        GridField kill = heat_lp_project(m, 4.0, c, LpMode::band);
        REQUIRE(rel_l2_diff(keep, c) < 1e-9);
        REQUIRE(norm_l2(kill) < 1e-9 * norm_l2(c));
    }

    SECTION("telescoping partial sums converge") {
        // f - sum_{N0 < N <= N0 2^J} P_N f - e^{Delta/N0^2} f telescopes to
        // f - e^{Delta/(N0 2^J)^2} f, which vanishes as the band widens
        Box box(1, 16.0, 256);
        Metric m = Metric::build(MetricFamily::lens, 0.25, 1.0, 1);
        GridField f = band_limited_noise(box, 11, 2.0, /*zero_mean=*/true);
        const double n0 = 2.0;
        double prev = 1e9;
        for (int levels : {2, 4, 6}) {
            GridField sum = heat_semigroup(m, 1.0 / (n0 * n0), f);
            for (int j = 1; j <= levels; ++j)
                sum += heat_lp_project(m, n0 * (1 << j), f, LpMode::band);
            const double resid = rel_l2_diff(sum, f);
            REQUIRE(resid < prev + 1e-12);
            prev = resid;
        }
        REQUIRE(prev < 0.01);
    }

    SECTION("projection commutes with Fourier translation on flat") {
        Box box(1, 16.0, 256);
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        GridField f = band_limited_noise(box, 12, 2.0);
        auto translate = [&](GridField g) {
            return fourier_multiplier(
                [&](const Vec& k) { return std::exp(-iu * k[0] * 1.23); }, g);
        };
        GridField a = translate(heat_lp_project(flat, 8.0, f, LpMode::leq));
        GridField b = heat_lp_project(flat, 8.0, translate(f), LpMode::leq);
        REQUIRE(rel_l2_diff(a, b) < 1e-10);
    }
}

TEST_CASE("bernstein operator-norm proxy") {
    SECTION("p=q=2 contraction") {
        Box box(1, 16.0, 512);
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        for (double n : {4.0, 16.0}) {
            auto res = bernstein_check(flat, n, box, 2.0, 2.0);
            REQUIRE(res.ratio <= 1.0 + 1e-6);
        }
    }

    SECTION("L^p contraction for p in {1, 2, inf} on a lens metric") {
        // bank widths ~ 1/N must be grid-resolved for the max-norm bound
        Box box(1, 16.0, 1024);
        Metric m = Metric::build(MetricFamily::lens, 0.2, 1.0, 1);
        for (double p : {1.0, 2.0, std::numeric_limits<double>::infinity()}) {
            auto res = bernstein_check(m, 4.0, box, p, p);
            REQUIRE(res.ratio <= 1.0 + 1e-6);
        }
    }

    SECTION("(2, inf) d=1 exponent is 1/2") {
        Box box(1, 16.0, 2048);
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        std::vector<double> ns = {4.0, 8.0, 16.0, 32.0};
        std::vector<double> ratios;
        for (double n : ns)
            ratios.push_back(
                bernstein_check(flat, n, box, 2.0,
                                std::numeric_limits<double>::infinity())
                    .ratio);
        const double slope = loglog_slope(ns, ratios);
        REQUIRE_THAT(slope, Catch::Matchers::WithinAbs(0.5, 0.1));
    }

    SECTION("(1, inf) d=2 exponent is d = 2") {
        Box box(2, 8.0, 512);
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 2);
        std::vector<double> ns = {2.0, 4.0, 8.0};
        std::vector<double> ratios;
        for (double n : ns)
            ratios.push_back(
                bernstein_check(flat, n, box, 1.0,
                                std::numeric_limits<double>::infinity())
                    .ratio);
        const double slope = loglog_slope(ns, ratios);
        REQUIRE_THAT(slope, Catch::Matchers::WithinAbs(2.0, 0.2));
    }
}

TEST_CASE("sobolev norms") {
    SECTION("flat flavor matches the analytic Gaussian formula") {
        Box box(1, 32.0, 1024);
        const double w = 1.0, k0 = 2.0 * pi * 8 / box.length;
        GridField f(box);
        f.fill([&](const Vec& x) {
            return std::exp(iu * k0 * x[0]) * std::exp(-x[0] * x[0] / (2.0 * w * w));
        });
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        // |f|_{H^1}^2 = k0^2 |g|_2^2 + |g'|_2^2 for real envelope g
        const double g2 = w * std::sqrt(pi);
        const double gp2 = std::sqrt(pi) / (2.0 * w);
        const double oracle = std::sqrt(k0 * k0 * g2 + gp2);
        REQUIRE_THAT(sobolev_norm(flat, f, 1.0), Catch::Matchers::WithinRel(oracle, 1e-10));
        // s=0 is the L2 norm
        REQUIRE_THAT(sobolev_norm(flat, f, 0.0),
                     Catch::Matchers::WithinRel(norm_l2(f), 1e-12));
    }

    SECTION("metric flavor s=1 equals the gradient form") {
        Box box(1, 16.0, 512);
        Metric m = Metric::build(MetricFamily::lens, 0.25, 1.0, 1);
        GridField f = band_limited_noise(box, 13, 2.0);
        const double eig_route = sobolev_norm(m, f, 1.0, SobolevFlavor::metric);
        // gradient form computed directly as the independent route
        const MetricSampling& ms = metric_sampling(m, box);
        auto grad = gradient(f);
        double acc = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i)
            acc += ms.g_upper[0][i] * std::norm(grad[0][i]) * ms.sqrtg[i];
        const double grad_route = std::sqrt(acc * box.cell_volume());
        REQUIRE_THAT(eig_route, Catch::Matchers::WithinRel(grad_route, 1e-6));
    }

    SECTION("metric/flat equivalence ratio for conformal bumps") {
        Box box(1, 16.0, 512);
        for (double eps : {0.05, 0.2}) {
            Metric m = Metric::build(MetricFamily::conformal_bump, eps, 1.0, 1);
            for (std::uint64_t seed : {21ull, 22ull, 23ull}) {
                GridField f = band_limited_noise(box, seed, 2.0, /*zero_mean=*/true);
                for (double s : {0.5, 1.0}) {
                    const double a = sobolev_norm(m, f, s, SobolevFlavor::metric);
                    const double b = sobolev_norm(m, f, s, SobolevFlavor::flat);
                    REQUIRE(a / b >= 1.0 / (1.0 + 5.0 * eps));
                    REQUIRE(a / b <= 1.0 + 5.0 * eps);
                }
            }
        }
    }

    SECTION("d=3 metric flavor: s=1 falls back, s=1/2 rejected") {
        Box box(3, 8.0, 16);
        Metric m = Metric::build(MetricFamily::lens, 0.1, 1.0, 3);
        GridField f = band_limited_noise(box, 31, 1.0);
        REQUIRE_NOTHROW(sobolev_norm(m, f, 1.0, SobolevFlavor::metric));
        REQUIRE_THROWS_AS(sobolev_norm(m, f, 0.5, SobolevFlavor::metric),
                          DimensionTooLarge);
    }
}
