#include <catch2/catch_amalgamated.hpp>

#include "sclens/propagate.hpp"

using namespace sclens;

namespace {

double rel_l2_diff(const GridField& a, const GridField& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += std::norm(a[i] - b[i]);
        den += std::norm(b[i]);
    }
    return std::sqrt(num / std::max(den, 1e-300));
}

// closed-form free evolution of exp(-|x|^2 / (2 sigma))
GridField free_gaussian(const Box& box, double sigma, double t) {
    GridField u(box);
    const cplx s{sigma, 0.0};
    const cplx st = s + cplx{0.0, 2.0 * t};
    const cplx amp = std::pow(s / st, 0.5 * box.dim);
    u.fill([&](const Vec& x) { return amp * std::exp(-norm2(x) / (2.0 * st)); });
    return u;
}

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

GridField gaussian_data(const Box& box, double width, const Vec& center, const Vec& mom) {
    GridField u(box);
    u.fill([&](const Vec& x) {
        const Vec r = x - center;
        return std::exp(cplx{-norm2(r) / (2.0 * width * width), dot(mom, r)});
    });
    return u;
}

}  // namespace

TEST_CASE("flat propagator") {
    Box box(1, 80.0, 2048);

    SECTION("t = 0 is the identity") {
        GridField u = gaussian_data(box, 1.0, vec1(0.5), vec1(2.0));
        GridField v = flat_propagate(u, 0.0);
        REQUIRE(rel_l2_diff(v, u) < 1e-14);
    }

    SECTION("matches the closed-form complex Gaussian") {
        const double sigma = 1.0;
        GridField u0 = free_gaussian(box, sigma, 0.0);
        for (double t : {0.3, 1.0, 2.5}) {
            GridField u = flat_propagate(u0, t);
            GridField oracle = free_gaussian(box, sigma, t);
            double worst = 0.0;
            for (std::size_t i = 0; i < u.size(); ++i)
                worst = std::max(worst, std::abs(u[i] - oracle[i]));
            REQUIRE(worst < 1e-10);
        }
    }

    SECTION("L-infinity decay slope is -d/2 (d=1)") {
        Box big(1, 384.0, 8192);
        GridField u0 = gaussian_data(big, 0.7, vec1(0.0), vec1(0.0));
        std::vector<double> ts = {1.0, 2.0, 4.0, 8.0, 16.0};
        std::vector<double> sups;
        for (double t : ts) sups.push_back(norm_linf(flat_propagate(u0, t)));
        REQUIRE_THAT(loglog_slope(ts, sups), Catch::Matchers::WithinAbs(-0.5, 0.05));
    }
}

TEST_CASE("metric propagator") {
    SECTION("flat CN is second order against the exact propagator") {
        Box box(1, 32.0, 512);
        GridField u0 = free_gaussian(box, 1.0, 0.0);
        GridField exact = flat_propagate(u0, 1.0);
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        std::vector<double> errs;
        for (double dt : {0.02, 0.01, 0.005}) {
            GridField u = metric_propagate(flat, u0, 1.0, dt);
            errs.push_back(rel_l2_diff(u, exact));
        }
        REQUIRE(errs[0] / errs[1] > 3.5);
        REQUIRE(errs[0] / errs[1] < 4.5);
        REQUIRE(errs[1] / errs[2] > 3.5);
        REQUIRE(errs[1] / errs[2] < 4.5);
    }

    SECTION("CN conserves the natural norm on a lens metric") {
        Box box(1, 16.0, 512);
        Metric m = Metric::build(MetricFamily::lens, 0.3, 1.0, 1);
        const MetricSampling& ms = metric_sampling(m, box);
        GridField u0 = gaussian_data(box, 0.8, vec1(-0.5), vec1(3.0));
        auto dg_norm = [&](const GridField& u) {
            double s = 0.0;
            for (std::size_t i = 0; i < u.size(); ++i) s += std::norm(u[i]) * ms.sqrtg[i];
            return std::sqrt(s * box.cell_volume());
        };
        const double before = dg_norm(u0);
        GridField u = metric_propagate(m, u0, 1.0, 1e-2);
        REQUIRE(std::abs(dg_norm(u) / before - 1.0) <= 1e-10);
    }

    SECTION("time reversal returns the initial data") {
        Box box(1, 16.0, 512);
        Metric m = Metric::build(MetricFamily::lens, 0.25, 1.0, 1);
        GridField u0 = gaussian_data(box, 0.8, vec1(-0.4), vec1(2.0));
        GridField u = metric_propagate(m, u0, 0.5, 5e-3);
        GridField back = metric_propagate(m, u, -0.5, 5e-3);
        REQUIRE(rel_l2_diff(back, u0) < 1e-8);
    }

    SECTION("conjugation identity e^{it Delta_g} = rho^{-1} e^{-itA} rho") {
        Box box(1, 16.0, 1024);
        Metric m = Metric::build(MetricFamily::lens, 0.2, 1.0, 1);
        const MetricSampling& ms = metric_sampling(m, box);
        GridField u0 = gaussian_data(box, 0.7, vec1(-0.3), vec1(2.0));
        const double t = 0.4, dt = 2e-3;

        PropagateOptions lap;
        lap.op = Generator::laplace_g;
        GridField left = metric_propagate(m, u0, t, dt, lap);

        GridField ru = u0;
        for (std::size_t i = 0; i < ru.size(); ++i) ru[i] *= ms.rho[i];
        PropagateOptions conj;
        conj.op = Generator::conjugated;
        GridField right = metric_propagate(m, ru, t, dt, conj);
        for (std::size_t i = 0; i < right.size(); ++i) right[i] *= ms.inv_rho[i];

        REQUIRE(rel_l2_diff(left, right) < 2e-5);
    }

    SECTION("semiclassical and localized generators propagate unitarily") {
        Box box(1, 16.0, 256);
        Metric m = Metric::build(MetricFamily::conformal_bump, 0.1, 1.0, 1);
        GridField u0 = gaussian_data(box, 0.7, vec1(-0.5), vec1(0.0));
        u0 = fourier_multiplier(
            [&](const Vec& k) { return std::exp(iu * 10.0 * k[0] * 0.0) *
                                       cplx{std::exp(-sq(norm(k) * 0.1 - 1.0) / 0.1), 0.0}; },
            u0);
        for (Generator gen : {Generator::semiclassical, Generator::localized}) {
            PropagateOptions opt;
            opt.op = gen;
            opt.h = 0.1;
            const double n0 = norm_l2(u0);
            GridField u = metric_propagate(m, u0, 0.2, 5e-3, opt);
            REQUIRE(std::abs(norm_l2(u) / n0 - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("nls stepper") {
    SECTION("mu = 0 reduces exactly to the linear stepper") {
        Box box(1, 16.0, 512);
        Metric m = Metric::build(MetricFamily::lens, 0.2, 1.0, 1);
        NLSProblem prob;
        prob.metric = m;
        prob.mu = 0.0;
        GridField u0 = gaussian_data(box, 0.8, vec1(0.0), vec1(1.0));
        EvolutionState st = nls_init(prob, u0);
        UnitaryStepper lin(m, box, 1e-2);
        for (int s = 0; s < 10; ++s) nls_step(prob, st, lin);
        UnitaryStepper lin2(m, box, 1e-2);
        GridField v = u0;
        for (int s = 0; s < 10; ++s) lin2.step(v);
        REQUIRE(rel_l2_diff(st.field, v) == 0.0);
    }

    SECTION("quintic defocusing conserves mass and energy (d=1 flat)") {
        Box box(1, 16.0, 1024);
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        NLSProblem prob;
        prob.metric = flat;
        GridField u0 = gaussian_data(box, 0.8, vec1(0.0), vec1(0.0));
        EvolutionState st = nls_init(prob, u0);
        const double m0 = st.mass, e0 = st.energy;
        UnitaryStepper lin(flat, box, 1e-3);
        for (int s = 0; s < 200; ++s) nls_step(prob, st, lin);
        nls_refresh_diagnostics(prob, st);
        REQUIRE(std::abs(st.mass / m0 - 1.0) <= 1e-12);
        REQUIRE(std::abs(st.energy / e0 - 1.0) <= 1e-7);
    }

    SECTION("Strang splitting self-converges at second order") {
        Box box(1, 16.0, 512);
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        NLSProblem prob;
        prob.metric = flat;
        GridField u0 = gaussian_data(box, 0.8, vec1(0.0), vec1(0.0));
        auto evolve = [&](double dt) {
            EvolutionState st = nls_init(prob, u0);
            UnitaryStepper lin(flat, box, dt);
            const int n = static_cast<int>(std::lround(0.2 / dt));
            for (int s = 0; s < n; ++s) nls_step(prob, st, lin);
            return st.field;
        };
        GridField ref = evolve(0.2 / 512);
        std::vector<double> errs;
        for (double dt : {0.2 / 16, 0.2 / 32, 0.2 / 64})
            errs.push_back(rel_l2_diff(evolve(dt), ref));
        REQUIRE(errs[0] / errs[1] > 3.5);
        REQUIRE(errs[0] / errs[1] < 4.5);
        REQUIRE(errs[1] / errs[2] > 3.5);
        REQUIRE(errs[1] / errs[2] < 4.6);
    }

    SECTION("blowup guard trips on absurd growth") {
        Box box(1, 16.0, 128);
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        NLSProblem prob;
        prob.metric = flat;
        prob.blowup_ceiling_factor = 0.5;  // force the trip
        GridField u0 = gaussian_data(box, 1.0, vec1(0.0), vec1(0.0));
        EvolutionState st = nls_init(prob, u0);
        UnitaryStepper lin(flat, box, 1e-2);
        REQUIRE_THROWS_AS(nls_step(prob, st, lin), Blowup);
    }
}

TEST_CASE("picard iteration") {
    Box box(1, 16.0, 512);
    Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
    NLSProblem prob;
    prob.metric = flat;

    SECTION("zero data is an immediate fixed point") {
        GridField z(box);
        auto res = picard_iterate(prob, z, 0.2, 8, 3, 1e-2);
        for (const auto& f : res.final_slices) REQUIRE(norm_l2(f) == 0.0);
    }

    SECTION("small data contracts and matches the time stepper") {
        GridField u0 = gaussian_data(box, 0.8, vec1(0.0), vec1(0.0));
        u0 *= cplx{0.2, 0.0};
        auto res = picard_iterate(prob, u0, 0.2, 32, 3, 1e-3);
        for (double r : res.ratios) REQUIRE(r < 0.5);

        EvolutionState st = nls_init(prob, u0);
        UnitaryStepper lin(flat, box, 1e-3);
        for (int s = 0; s < 200; ++s) nls_step(prob, st, lin);
        REQUIRE(rel_l2_diff(res.final_slices.back(), st.field) < 1e-4);
    }

    SECTION("contraction ratio scales like the fourth power of the data size") {
        GridField u0 = gaussian_data(box, 0.8, vec1(0.0), vec1(0.0));
        GridField small = u0;
        small *= cplx{0.1, 0.0};
        GridField big = u0;
        big *= cplx{0.2, 0.0};
        auto ra = picard_iterate(prob, small, 0.2, 16, 3, 2e-3);
        auto rb = picard_iterate(prob, big, 0.2, 16, 3, 2e-3);
        const double scale = rb.ratios.front() / ra.ratios.front();
        // doubling the amplitude multiplies the Lipschitz constant by ~2^4
        REQUIRE(scale >= 8.0);
        REQUIRE(scale <= 32.0);
    }
}

TEST_CASE("scattering comparison") {
    SECTION("flat metric: W(t) is the identity") {
        Box box(1, 128.0, 2048);
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
        GridField u0 = gaussian_data(box, 1.0, vec1(0.0), vec1(1.0));
        auto table = scattering_comparison(flat, u0, {0.0, 1.0, 2.0, 4.0}, 1e-2);
        for (double d : table.cauchy_diff) REQUIRE(d < 1e-10);
    }

    SECTION("lens d=1: Cauchy differences decrease along the ladder") {
        Box box(1, 256.0, 2048);
        Metric m = Metric::build(MetricFamily::lens, 0.3, 1.0, 1);
        GridField u0 = gaussian_data(box, 0.8, vec1(-0.2), vec1(1.0));
        auto table = scattering_comparison(m, u0, {0.5, 1.0, 2.0, 4.0}, 4e-3);
        REQUIRE(table.cauchy_diff.size() == 3);
        REQUIRE(table.cauchy_diff[1] < table.cauchy_diff[0]);
        REQUIRE(table.cauchy_diff[2] < table.cauchy_diff[1]);
    }

    SECTION("data that never meets the bump scatters immediately") {
        Box box(2, 64.0, 256);
        Metric m = Metric::build(MetricFamily::lens, 0.3, 1.0, 2);
        GridField u0 = gaussian_data(box, 1.2, vec2(10.0, 0.0), vec2(1.0, 0.0));
        auto table = scattering_comparison(m, u0, {0.0, 0.25, 0.5, 1.0}, 5e-3);
        for (double d : table.cauchy_diff) REQUIRE(d < 1e-6 * sobolev_norm(m, u0, 1.0));
    }
}
