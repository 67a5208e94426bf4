#pragma once

#include <atomic>
#include <thread>

#include <json.hpp>

#include "sclens/analysis.hpp"
#include "sclens/geodesic.hpp"
#include "sclens/io.hpp"

namespace sclens {

using json = nlohmann::json;

// Fan a fixed task list over a worker pool. Tasks write into preallocated
// slots indexed by task id, so results are independent of scheduling.
inline void parallel_for(int n_tasks, int threads, const std::function<void(int)>& fn) {
    threads = std::max(1, threads);
    if (threads == 1 || n_tasks <= 1) {
        for (int t = 0; t < n_tasks; ++t) fn(t);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex err_mu;
    for (int w = 0; w < std::min(threads, n_tasks); ++w)
        pool.emplace_back([&] {
            while (true) {
                const int t = next.fetch_add(1);
                if (t >= n_tasks) break;
                try {
                    fn(t);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

struct DriverResult {
    std::string name;
    std::string config_hash;
    std::map<std::string, std::string> csv_bodies;  // filename -> body
    json summary;
    bool pass = true;

    void add_csv(const std::string& filename, const CsvWriter& csv) {
        csv_bodies[filename] = csv.body();
    }
    void flag(const std::string& key, bool ok) {
        summary["flags"][key] = ok;
        pass = pass && ok;
    }
};

// Writes CSVs, the JSON summary, and a gnuplot script into out_dir.
inline void write_outputs(const DriverResult& res, const std::string& out_dir,
                          double wall_seconds) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    for (const auto& [name, body] : res.csv_bodies) {
        std::ofstream out(fs::path(out_dir) / name, std::ios::binary);
        out << body;
    }
    json summary = res.summary;
    summary["experiment"] = res.name;
    summary["config_hash"] = res.config_hash;
    summary["pass"] = res.pass;
    summary["wall_seconds"] = wall_seconds;  // sidecar only: CSV bodies stay reproducible
    std::ofstream js(fs::path(out_dir) / "summary.json");
    js << summary.dump(2) << "\n";

    std::ofstream gp(fs::path(out_dir) / "plot.gp");
    gp << "# gnuplot script emitted by sclens '" << res.name << "'\n";
    gp << "set logscale xy\nset key left bottom\nset datafile separator ','\n";
    int idx = 0;
    for (const auto& [name, body] : res.csv_bodies) {
        gp << (idx++ ? "replot" : "plot") << " '" << name
           << "' every ::1 using 1:2 with linespoints title '" << name << "'\n";
    }
    gp << "pause -1\n";
}

// splitmix-derived chunk keys for deterministic Monte-Carlo workers
inline std::uint64_t splitmix_key(std::uint64_t master, std::uint64_t idx) {
    std::uint64_t s = master + 0x9e3779b97f4a7c15ull * (idx + 1);
    splitmix64(s);
    return s;
}

namespace hdetail {

inline Metric metric_from_config(const Config& cfg, int dim) {
    const std::string family = cfg.get_string("metric", "lens");
    const double eps = cfg.get_double("eps", 0.3);
    const double r_supp = cfg.get_double("r_supp", 1.0);
    if (family == "flat") return Metric::build(MetricFamily::flat, 0.0, r_supp, dim);
    if (family == "conformal") return Metric::build(MetricFamily::conformal_bump, eps, r_supp, dim);
    if (family == "lens") return Metric::build(MetricFamily::lens, eps, r_supp, dim);
    if (family == "table")
        return load_metric_table(cfg.get_string("metric_table", ""), r_supp);
    throw ConfigError("unknown metric family '" + family + "'");
}

// delta-proxy of the appendix: chi(hD) eta(X/h) with a narrow Gaussian eta,
// normalized to unit L1 mass before the frequency cutoff
inline GridField appendix_data(const Box& box, double h, const FrequencyCutoffs& chi) {
    GridField f(box);
    const double width = std::max(h, 2.5 * box.spacing());
    f.fill([&](const Vec& x) {
        return cplx{std::exp(-norm2(x) / (2.0 * width * width)), 0.0};
    });
    const double l1 = norm_lp(f, 1.0);
    f *= cplx{1.0 / l1, 0.0};
    return frequency_localize(chi, 1, h, f);
}

// Schwartz bump with Fourier support in the annulus [eps, 1/eps], rescaled to
// concentration scale h (energy-critical normalization h^{-(d-2)/2}).
inline GridField annulus_bump(const Box& box, double h, double eps_band, const Vec& center) {
    GridField g(box);
    int idx[3] = {0, 0, 0};
    for (int j = 0; j < box.dim; ++j) idx[j] = box.index_of(center[j]);
    g[box.flatten(idx)] = cplx{1.0, 0.0};
    apply_multiplier(g, [&](const Vec& k) {
        const double r = h * norm(k);
        const double lo = eps_band, hi = 1.0 / eps_band;
        double w = 0.0;
        if (r >= lo && r <= hi)
            w = 1.0;
        else if (r > 0.7 * lo && r < lo)
            w = smootherstep((r - 0.7 * lo) / (0.3 * lo));
        else if (r > hi && r < 1.3 * hi)
            w = smootherstep((1.3 * hi - r) / (0.3 * hi));
        return cplx{w * std::exp(-r * r / 8.0), 0.0};
    });
    const double n2 = norm_l2(g);
    g *= cplx{std::pow(h, -0.5 * (box.dim - 2)) * std::pow(h, 0.5 * box.dim) / n2, 0.0};
    return g;
}

}  // namespace hdetail

// ---------------------------------------------------------------------------
// dispersive: flat decay law, appendix part (1), appendix part (2)
// ---------------------------------------------------------------------------

inline DriverResult run_dispersive(const Config& cfg, int threads = 1) {
    DriverResult res;
    res.name = "dispersive";
    res.config_hash = cfg.hash();
    const std::string mode = cfg.get_string("mode", "flat_law");
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_long("seed", 1));
    (void)seed;

    if (mode == "flat_law") {
        // L-infinity decay of the free evolution of a Gaussian bump
        std::vector<double> t_ladder = cfg.get_list("t_ladder", {1.0, 2.0, 4.0, 8.0, 16.0});
        const double tol = cfg.get_double("slope_tol", 0.05);
        CsvWriter csv({"dim", "t", "sup_norm", "tail_mass"});
        for (int d : {1, 2}) {
            const double L = cfg.get_double("box_length", d == 1 ? 384.0 : 384.0);
            const int n = static_cast<int>(cfg.get_long("grid_n", d == 1 ? 8192 : 2048));
            Box box(d, L, n);
            const double w = cfg.get_double("width", 0.8);
            GridField u0(box);
            u0.fill([&](const Vec& x) {
                return cplx{std::exp(-norm2(x) / (2.0 * w * w)), 0.0};
            });
            std::vector<double> sups(t_ladder.size());
            std::vector<double> tails(t_ladder.size());
            parallel_for(static_cast<int>(t_ladder.size()), threads, [&](int i) {
                GridField u = flat_propagate(u0, t_ladder[i]);
                sups[i] = norm_linf(u);
                tails[i] = tail_mass_fraction(u);
            });
            for (std::size_t i = 0; i < t_ladder.size(); ++i)
                csv.add_row({static_cast<double>(d), t_ladder[i], sups[i], tails[i]});
            auto fit = fit_decay_slope(t_ladder, sups);
            res.summary["slope_d" + std::to_string(d)] = fit.slope;
            res.summary["width_d" + std::to_string(d)] = fit.width;
            res.flag("flat_law_d" + std::to_string(d),
                     std::abs(fit.slope + 0.5 * d) <= tol);
            bool guard = true;
            for (double t : tails) guard = guard && t <= 1e-8;
            res.flag("boundary_guard_d" + std::to_string(d), guard);
        }
        res.add_csv("dispersive_flat_law.csv", csv);
        return res;
    }

    FrequencyCutoffs chi;
    chi.eps_band = cfg.get_double("eps_band", mode == "appendix2" ? 0.7 : 0.5);

    if (mode == "appendix1") {
        // short-window t-slope of sup|u| under e^{-itA(h)/h}
        const int d = 1;
        const double h = cfg.get_double("h", 0.05);
        const double L = cfg.get_double("box_length", 16.0);
        const int n = static_cast<int>(cfg.get_long("grid_n", 1024));
        const double dt = cfg.get_double("dt", 2e-3);
        std::vector<double> t_ladder =
            cfg.get_list("t_ladder", {0.125, 0.177, 0.25, 0.354, 0.5});
        const double tol = cfg.get_double("slope_tol", 0.1);
        Box box(d, L, n);
        CsvWriter csv({"metric", "t", "sup_norm", "tail_mass"});
        int which = 0;
        for (const std::string family : {"flat", "lens"}) {
            Metric m = family == "flat"
                           ? Metric::build(MetricFamily::flat, 0.0, 1.0, d)
                           : Metric::build(MetricFamily::lens, cfg.get_double("eps", 0.3),
                                           cfg.get_double("r_supp", 1.0), d);
            GridField u0 = hdetail::appendix_data(box, h, chi);
            PropagateOptions popt;
            popt.op = Generator::semiclassical;
            popt.h = h;
            popt.cutoffs = chi;
            std::vector<double> sups(t_ladder.size()), tails(t_ladder.size());
            parallel_for(static_cast<int>(t_ladder.size()), threads, [&](int i) {
                GridField u = metric_propagate(m, u0, t_ladder[i], dt, popt);
                sups[i] = norm_linf(u);
                tails[i] = tail_mass_fraction(u);
            });
            for (std::size_t i = 0; i < t_ladder.size(); ++i)
                csv.add_row({static_cast<double>(which), t_ladder[i], sups[i], tails[i]});
            auto fit = fit_decay_slope(t_ladder, sups);
            res.summary["slope_" + family] = fit.slope;
            res.flag("appendix1_" + family, std::abs(fit.slope + 0.5 * d) <= tol);
            ++which;
        }
        res.add_csv("dispersive_appendix1.csv", csv);
        return res;
    }

    if (mode == "appendix2") {
        // fixed-time h-exponent of sup|u| on the d=2 lens
        const int d = 2;
        const double t_fix = cfg.get_double("t", 1.0);
        const double L = cfg.get_double("box_length", 10.0);
        std::vector<double> hs = cfg.get_list("h_ladder", {0.1, 0.07, 0.05, 0.035});
        const double dt = cfg.get_double("dt", 2.5e-3);
        const double floor_exp = -(d - 0.5) - cfg.get_double("exp_margin", 0.2);
        Metric m = Metric::build(MetricFamily::lens, cfg.get_double("eps", 0.3),
                                 cfg.get_double("r_supp", 1.0), d);
        std::vector<double> sups(hs.size()), tails(hs.size());
        parallel_for(static_cast<int>(hs.size()), threads, [&](int i) {
            const double h = hs[i];
            // resolve the top of the frequency band 1.3/(eps h)
            const double kmax = 1.35 / (chi.eps_band * h);
            int n = 64;
            while (pi * n / L < 1.6 * kmax && n < 4096) n *= 2;
            Box box(d, L, n);
            GridField u0 = hdetail::appendix_data(box, h, chi);
            PropagateOptions popt;
            popt.op = Generator::semiclassical;
            popt.h = h;
            popt.cutoffs = chi;
            GridField u = metric_propagate(m, u0, t_fix, dt, popt);
            sups[i] = norm_linf(u);
            tails[i] = tail_mass_fraction(u);
        });
        CsvWriter csv({"h", "sup_norm", "tail_mass"});
        for (std::size_t i = 0; i < hs.size(); ++i)
            csv.add_row({hs[i], sups[i], tails[i]});
        res.add_csv("dispersive_appendix2.csv", csv);
        auto fit = fit_decay_slope(hs, sups);
        res.summary["h_exponent"] = fit.slope;
        res.summary["h_exponent_floor"] = floor_exp;
        res.flag("appendix2_floor", fit.slope >= floor_exp);
        bool guard = true;
        for (double t : tails) guard = guard && t <= 1e-8;
        res.flag("boundary_guard", guard);
        return res;
    }
    throw ConfigError("dispersive: unknown mode '" + mode + "'");
}

// ---------------------------------------------------------------------------
// extinction: sup_{t >= T h^2} |u|_{L^q} vs h on the d=2 lens
// ---------------------------------------------------------------------------

inline DriverResult run_extinction(const Config& cfg, int threads = 1) {
    DriverResult res;
    res.name = "extinction";
    res.config_hash = cfg.hash();
    const int d = static_cast<int>(cfg.get_long("dim", 2));
    const double q = cfg.get_double("q", 8.0);
    const double T = cfg.get_double("T", 4.0);
    const double L = cfg.get_double("box_length", 16.0);
    const double eps_band = cfg.get_double("eps_band", 0.7);
    const double dt = cfg.get_double("dt", 1e-4);
    const double cg_tol = cfg.get_double("cg_tol", 1e-10);
    const int n_samples = static_cast<int>(cfg.get_long("time_samples", 12));
    std::vector<double> hs = cfg.get_list("h_ladder", {0.1, 0.07, 0.05});
    const double exp_floor = 1.0 / d - cfg.get_double("exp_margin", 0.2);
    Metric m = hdetail::metric_from_config(cfg, d);

    std::vector<double> sups(hs.size()), tails(hs.size(), 0.0);
    parallel_for(static_cast<int>(hs.size()), threads, [&](int i) {
        const double h = hs[i];
        // margin above the band top: lens scattering shifts content by the
        // bump's own spectral width, which must stay below Nyquist
        const double kmax = 1.35 / (eps_band * h);
        int n = 64;
        while (pi * n / L < 1.6 * kmax && n < 4096) n *= 2;
        Box box(d, L, n);
        Vec xh{0.0, 0.0, 0.0};
        auto xh_list = cfg.get_list("x_h", {-0.6, 0.0, 0.0});
        for (int j = 0; j < d; ++j) xh[j] = xh_list[j];
        GridField u0 = hdetail::annulus_bump(box, h, eps_band, xh);
        const double t_start = T * h * h;
        // cap the horizon so the fastest band stays inside the box guard
        const double v_max = 2.0 * 1.3 / (eps_band * h);
        const double t_max =
            std::min(cfg.get_double("t_max", 0.25), 0.6 * (0.4 * L) / v_max);
        const MetricSampling& ms = metric_sampling(m, box);

        PropagateOptions popt;
        popt.cg_tol = cg_tol;
        UnitaryStepper stepper(m, box, dt, popt);
        GridField u = u0;
        double t = 0.0;
        double sup_q = 0.0, tail = 0.0;
        // march to t_start, then sample the window up to t_max
        while (t < t_start - 1e-12) {
            stepper.step(u);
            t += dt;
        }
        for (int s = 0; s < n_samples; ++s) {
            sup_q = std::max(sup_q, norm_lp(u, q, &ms.sqrtg));
            tail = std::max(tail, tail_mass_fraction(u));
            const double t_next = t_start + (t_max - t_start) * (s + 1.0) / n_samples;
            while (t < t_next - 1e-12) {
                stepper.step(u);
                t += dt;
            }
        }
        sups[i] = sup_q;
        tails[i] = tail;
    });

    CsvWriter csv({"h", "sup_lq", "tail_mass"});
    for (std::size_t i = 0; i < hs.size(); ++i) csv.add_row({hs[i], sups[i], tails[i]});
    res.add_csv("extinction.csv", csv);
    bool decreasing = true;
    for (std::size_t i = 0; i + 1 < hs.size(); ++i)
        decreasing = decreasing && sups[i] > sups[i + 1];  // hs descending in h
    // slope fit needs >= 4 points; with 3 use the endpoint exponent
    double expo;
    if (hs.size() >= 4) {
        expo = fit_decay_slope(hs, sups).slope;
    } else {
        expo = std::log(sups.front() / sups.back()) / std::log(hs.front() / hs.back());
    }
    res.summary["h_exponent"] = expo;
    res.summary["exponent_floor"] = exp_floor;
    res.flag("strictly_decreasing", decreasing);
    res.flag("exponent_floor", expo >= exp_floor);
    bool guard = true;
    for (double t : tails) guard = guard && t <= 1e-8;
    res.flag("boundary_guard", guard);
    return res;
}

// ---------------------------------------------------------------------------
// converge: propagator comparison along profile sequences (scenarios a, b, c)
// ---------------------------------------------------------------------------

inline DriverResult run_propagator_convergence(const Config& cfg, int threads = 1) {
    DriverResult res;
    res.name = "converge";
    res.config_hash = cfg.hash();
    const int d = static_cast<int>(cfg.get_long("dim", 2));
    const double L = cfg.get_double("box_length", 32.0);
    const int n = static_cast<int>(cfg.get_long("grid_n", 256));
    const double dt = cfg.get_double("dt", 1e-2);
    std::vector<double> t_ladder = cfg.get_list("t_ladder", {0.25, 0.5, 1.0});
    Box box(d, L, n);
    Metric m = hdetail::metric_from_config(cfg, d);
    Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, d);
    const MetricSampling& ms = metric_sampling(m, box);

    struct Scenario {
        std::string name;
        std::vector<double> lambdas;
        std::vector<Vec> centers;
        bool frozen = false;  // frozen-coefficient comparison operator
    };
    std::vector<Scenario> scenarios;
    scenarios.push_back({"a", {1.0, 2.0, 4.0}, {Vec{0,0,0}, Vec{0,0,0}, Vec{0,0,0}}, false});
    scenarios.push_back({"b", {1.0, 1.0, 1.0},
                         {vec2(4.0, 0.0), vec2(6.0, 0.0), vec2(8.0, 0.0)}, false});
    scenarios.push_back({"c", {1.0, 0.5, 0.25}, {Vec{0,0,0}, Vec{0,0,0}, Vec{0,0,0}}, true});

    CsvWriter csv({"scenario", "index", "lambda", "center", "sup_l6_diff", "sup_h1_diff"});
    for (const auto& sc : scenarios) {
        std::vector<double> l6(sc.lambdas.size()), h1(sc.lambdas.size());
        parallel_for(static_cast<int>(sc.lambdas.size()), threads, [&](int i) {
            const double lam = sc.lambdas[i];
            GridField phi(box);
            const double amp = std::pow(lam, -0.5 * (d - 2));
            phi.fill([&](const Vec& x) {
                return cplx{amp * bump(norm2(x - sc.centers[i]) / (16.0 * lam * lam)),
                            0.0};
            });
            // comparison generator: flat, or frozen coefficients at x_inf = 0
            double up[3][3];
            m.upper(Vec{0.0, 0.0, 0.0}, up);
            auto frozen_mult = [&](const Vec& k) {
                double a = 0.0;
                for (int r = 0; r < d; ++r)
                    for (int c2 = 0; c2 < d; ++c2) a += up[r][c2] * k[r] * k[c2];
                return a;
            };
            double worst6 = 0.0, worst1 = 0.0;
            GridField um = phi;
            double t_prev = 0.0;
            for (double t : t_ladder) {
                um = metric_propagate(m, um, t - t_prev, dt);
                t_prev = t;
                GridField uf = phi;
                if (sc.frozen) {
                    apply_multiplier(uf, [&](const Vec& k) {
                        return std::exp(-iu * t * frozen_mult(k));
                    });
                } else {
                    uf = flat_propagate(uf, t);
                }
                GridField diff = um - uf;
                worst6 = std::max(worst6, norm_lp(diff, 6.0, &ms.sqrtg));
                worst1 = std::max(worst1, sobolev_norm(flat, diff, 1.0));
            }
            l6[i] = worst6;
            h1[i] = worst1;
        });
        for (std::size_t i = 0; i < sc.lambdas.size(); ++i)
            csv.add_row({static_cast<double>(sc.name[0]), static_cast<double>(i),
                         sc.lambdas[i], norm(sc.centers[i]), l6[i], h1[i]});
        bool mono6 = true, mono1 = true;
        for (std::size_t i = 0; i + 1 < l6.size(); ++i) {
            mono6 = mono6 && l6[i + 1] < l6[i];
            mono1 = mono1 && h1[i + 1] < h1[i];
        }
        res.summary["sup_l6_" + sc.name] = l6;
        res.flag("monotone_l6_" + sc.name, mono6);
        if (sc.name != "c") res.flag("monotone_h1_" + sc.name, mono1);
    }
    res.add_csv("converge.csv", csv);
    return res;
}

// ---------------------------------------------------------------------------
// geodesic: trajectories, invariants, preimage-measure sweeps, refocusing
// ---------------------------------------------------------------------------

inline DriverResult run_geodesic(const Config& cfg, int threads = 1) {
    DriverResult res;
    res.name = "geodesic";
    res.config_hash = cfg.hash();
    const int d = static_cast<int>(cfg.get_long("dim", 2));
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_long("seed", 1));
    Metric m = hdetail::metric_from_config(cfg, d);
    Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, d);

    const bool do_invariants = cfg.get_long("run_invariants", 1) != 0;
    const bool do_preimage = cfg.get_long("run_preimage", 1) != 0;

    // trajectory emission: columns t, x1..xd, xi1..xid, a
    if (do_invariants) {
        PhasePoint p;
        auto px = cfg.get_list("start_x", {-0.9, 0.35, 0.0});
        auto pxi = cfg.get_list("start_xi", {1.0, 0.1, 0.0});
        for (int j = 0; j < d; ++j) {
            p.x[j] = px[j];
            p.xi[j] = pxi[j];
        }
        FlowOptions opt;
        opt.dt = cfg.get_double("flow_dt", 1e-3);
        FlowTrajectory traj;
        flow(m, p, cfg.get_double("flow_T", 10.0), opt, &traj);
        std::vector<std::string> cols = {"t"};
        for (int j = 1; j <= d; ++j) cols.push_back("x" + std::to_string(j));
        for (int j = 1; j <= d; ++j) cols.push_back("xi" + std::to_string(j));
        cols.push_back("a");
        CsvWriter csv(cols);
        const std::size_t stride = std::max<std::size_t>(1, traj.t.size() / 2000);
        for (std::size_t i = 0; i < traj.t.size(); i += stride) {
            std::vector<double> row = {traj.t[i]};
            for (int j = 0; j < d; ++j) row.push_back(traj.state[i].x[j]);
            for (int j = 0; j < d; ++j) row.push_back(traj.state[i].xi[j]);
            row.push_back(m.symbol(traj.state[i].x, traj.state[i].xi));
            csv.add_row(row);
        }
        res.add_csv("geodesic_trajectory.csv", csv);

        const double drift = symbol_drift(m, traj);
        res.summary["symbol_drift"] = drift;
        res.flag("symbol_conservation", drift <= cfg.get_double("drift_tol", 1e-8));

        // homogeneity x^t(x, xi) = x^1(x, t xi)
        double worst = 0.0;
        for (double t : cfg.get_list("homogeneity_t", {0.5, 2.0, 5.0})) {
            PhasePoint a = flow(m, p, t, opt);
            PhasePoint q = p;
            q.xi = t * q.xi;
            PhasePoint b = flow(m, q, 1.0, opt);
            worst = std::max(worst, norm(a.x - b.x));
        }
        res.summary["homogeneity_defect"] = worst;
        res.flag("homogeneity", worst <= cfg.get_double("homogeneity_tol", 1e-6));
    }

    // preimage-measure sweep, lens plus flat control. The default target
    // point is the corrected focus of the eps = 0.7 lens for a source on the
    // rim: a full ~1 rad cone of directions lands within ~0.01 of z, so the
    // measure saturates the O(r) bound over the whole radius ladder.
    if (do_preimage) {
        std::vector<double> radii = cfg.get_list("r_ladder", {0.2, 0.1, 0.05, 0.025});
        const long samples = cfg.get_long("mc_samples", 100000);
        const double xi_max = cfg.get_double("xi_max", 1.4);
        const double flat_xi_max = cfg.get_double("flat_xi_max", 0.35);
        Vec x0{0.0, 0.0, 0.0}, z{0.0, 0.0, 0.0};
        auto xl = cfg.get_list("preimage_x", {-1.0, 0.0, 0.0});
        auto zl = cfg.get_list("preimage_z", {0.881, 0.0, 0.0});
        for (int j = 0; j < d; ++j) {
            x0[j] = xl[j];
            z[j] = zl[j];
        }
        const Vec z_flat = x0 + 0.25 * (z - x0);  // near control: ample hit counts

        // deterministic chunked Monte Carlo: worker streams derive from the
        // chunk index, so thread count cannot change the result
        auto sweep = [&](const Metric& metric, const Vec& zz, double xm) {
            const int chunks = 64;
            std::vector<std::vector<long>> hits(chunks);
            parallel_for(chunks, threads, [&](int c) {
                const long lo = samples * c / chunks, hi = samples * (c + 1) / chunks;
                auto est = preimage_measure(metric, x0, zz, radii, hi - lo, xm,
                                            splitmix_key(seed, c));
                std::vector<long> h(radii.size());
                for (std::size_t r = 0; r < radii.size(); ++r) h[r] = est[r].hits;
                hits[c] = h;
            });
            std::vector<MeasureEstimate> out(radii.size());
            for (std::size_t r = 0; r < radii.size(); ++r) {
                long total = 0;
                for (int c = 0; c < chunks; ++c) total += hits[c][r];
                const double frac = static_cast<double>(total) / samples;
                out[r].hits = total;
                out[r].samples = samples;
                out[r].value = ball_volume(d, xm) * frac;
                out[r].std_error =
                    ball_volume(d, xm) *
                    std::sqrt(std::max(frac * (1.0 - frac), 0.0) / samples);
                out[r].reliable = total >= 100;
            }
            return out;
        };
        auto lens_est = sweep(m, z, xi_max);
        auto flat_est = sweep(flat, z_flat, flat_xi_max);

        CsvWriter csv({"metric", "r", "measure", "std_error", "hits"});
        std::vector<double> lens_vals, flat_vals;
        for (std::size_t r = 0; r < radii.size(); ++r) {
            csv.add_row({1.0, radii[r], lens_est[r].value, lens_est[r].std_error,
                         static_cast<double>(lens_est[r].hits)});
            lens_vals.push_back(lens_est[r].value);
        }
        for (std::size_t r = 0; r < radii.size(); ++r) {
            csv.add_row({0.0, radii[r], flat_est[r].value, flat_est[r].std_error,
                         static_cast<double>(flat_est[r].hits)});
            flat_vals.push_back(flat_est[r].value);
        }
        res.add_csv("geodesic_preimage.csv", csv);
        auto lens_fit = fit_decay_slope(radii, lens_vals);
        auto flat_fit = fit_decay_slope(radii, flat_vals);
        res.summary["preimage_slope_lens"] = lens_fit.slope;
        res.summary["preimage_slope_flat"] = flat_fit.slope;
        res.flag("preimage_lens_slope",
                 std::abs(lens_fit.slope - 1.0) <= cfg.get_double("slope_tol", 0.15));
        res.flag("preimage_flat_slope",
                 std::abs(flat_fit.slope - d) <= cfg.get_double("slope_tol", 0.15));
    }
    return res;
}

// ---------------------------------------------------------------------------
// morawetz: identity refinement plus the Bourgain-Morawetz interval sweep
// ---------------------------------------------------------------------------

inline DriverResult run_morawetz(const Config& cfg, int threads = 1) {
    DriverResult res;
    res.name = "morawetz";
    res.config_hash = cfg.hash();
    (void)threads;
    const int d = 3;
    const double L = cfg.get_double("box_length", 16.0);
    const int n = static_cast<int>(cfg.get_long("grid_n", 64));
    Box box(d, L, n);
    Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, d);
    const double radius = cfg.get_double("weight_radius", 4.0);

    // (1) identity residual, linear flat Gaussian, Richardson in the slice dt
    {
        GridField u0(box);
        const double w = cfg.get_double("width", 1.0);
        u0.fill([&](const Vec& x) {
            return cplx{std::exp(-norm2(x) / (2.0 * w * w)), 0.0};
        });
        const double t_center = cfg.get_double("t_center", 0.1);
        auto residual_at = [&](double dt_slice) {
            std::vector<GridField> slices;
            for (int s = -2; s <= 2; ++s)
                slices.push_back(flat_propagate(u0, t_center + s * dt_slice));
            return morawetz_report(slices, dt_slice, flat, radius, 0.0);
        };
        const double dt1 = cfg.get_double("dt_slice", 0.04);
        auto rep1 = residual_at(dt1);
        auto rep2 = residual_at(0.5 * dt1);
        const double ratio = rep1.residual / rep2.residual;
        res.summary["richardson_ratio"] = ratio;
        res.summary["residual_coarse"] = rep1.residual;
        res.flag("identity_2nd_order", ratio >= 3.5 && ratio <= 4.5);
        CsvWriter csv({"dt_slice", "residual", "d2m", "rhs"});
        csv.add_row({dt1, rep1.residual, rep1.d2m, rep1.rhs});
        csv.add_row({0.5 * dt1, rep2.residual, rep2.d2m, rep2.rhs});
        res.add_csv("morawetz_identity.csv", csv);
    }

    // (2) Bourgain-Morawetz: nonlinear small-data run, nested intervals
    {
        NLSProblem prob;
        prob.metric = flat;
        GridField u0(box);
        const double w = cfg.get_double("width", 1.0);
        const double amp = cfg.get_double("amplitude", 0.4);
        u0.fill([&](const Vec& x) {
            return cplx{amp * std::exp(-norm2(x) / (2.0 * w * w)), 0.0};
        });
        std::vector<double> intervals = cfg.get_list("interval_ladder", {1.0, 4.0, 16.0});
        const double dt = cfg.get_double("dt", 5e-3);
        EvolutionState st = nls_init(prob, u0);
        UnitaryStepper lin(flat, box, dt);
        const double t_end = intervals.back();

        std::vector<double> acc(intervals.size(), 0.0);
        std::vector<double> radii;
        for (double iv : intervals) radii.push_back(std::sqrt(iv));
        auto slab = [&](const GridField& u, double r_cut) {
            double s = 0.0;
            for (std::size_t i = 0; i < u.size(); ++i) {
                const Vec x = box.point(i);
                if (norm(x) > r_cut) continue;
                s += std::pow(std::abs(u[i]), 6.0) / bracket(x);
            }
            return s * box.cell_volume();
        };
        const int slice_every = static_cast<int>(cfg.get_long("slice_every", 10));
        double t = 0.0;
        int step_idx = 0;
        // trapezoid accumulation at the sampled slices
        std::vector<double> prev_slab(intervals.size());
        for (std::size_t j = 0; j < intervals.size(); ++j)
            prev_slab[j] = slab(st.field, radii[j]);
        const double tau = dt * slice_every;
        while (t < t_end - 1e-9) {
            for (int s = 0; s < slice_every; ++s) nls_step(prob, st, lin);
            t = st.time;
            ++step_idx;
            for (std::size_t j = 0; j < intervals.size(); ++j) {
                if (t > intervals[j] + 1e-9) continue;
                const double cur = slab(st.field, radii[j]);
                acc[j] += 0.5 * tau * (prev_slab[j] + cur);
                prev_slab[j] = cur;
            }
        }
        CsvWriter csv({"interval", "integral", "ratio"});
        std::vector<double> integrals;
        for (std::size_t j = 0; j < intervals.size(); ++j) {
            const double ratio = acc[j] / (radii[j] * st.energy);
            csv.add_row({intervals[j], acc[j], ratio});
            integrals.push_back(acc[j]);
        }
        res.add_csv("morawetz_bourgain.csv", csv);
        const double expo = std::log(integrals.back() / integrals.front()) /
                            std::log(intervals.back() / intervals.front());
        res.summary["interval_exponent"] = expo;
        res.flag("bourgain_exponent", expo <= cfg.get_double("exp_cap", 0.6));
    }
    return res;
}

// ---------------------------------------------------------------------------
// smoothing: scaled local-smoothing functional sweeps in B and N
// ---------------------------------------------------------------------------

inline DriverResult run_local_smoothing(const Config& cfg, int threads = 1) {
    DriverResult res;
    res.name = "smoothing";
    res.config_hash = cfg.hash();
    const double L = cfg.get_double("box_length", 64.0);
    const int n = static_cast<int>(cfg.get_long("grid_n", 16384));
    Box box(1, L, n);
    Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
    const double dt = cfg.get_double("dt", 2e-4);

    // power-law H^1 data localized at the origin
    GridField phi(box);
    {
        int idx[3] = {box.index_of(0.0), 0, 0};
        phi[box.flatten(idx)] = cplx{1.0, 0.0};
        const double k_lo = cfg.get_double("k_lo", 2.0);
        const double k_hi = cfg.get_double("k_hi", 500.0);
        apply_multiplier(phi, [&](const Vec& k) {
            const double a = std::abs(k[0]);
            if (a < k_lo || a > k_hi) return cplx{0.0, 0.0};
            return cplx{std::pow(a, -1.5), 0.0};
        });
    }

    std::vector<double> b_ladder = cfg.get_list("b_ladder", {1.0, 2.0, 4.0, 8.0});
    std::vector<double> n_ladder = cfg.get_list("n_ladder", {4.0, 8.0, 16.0});
    const double n_fix = cfg.get_double("n_fix", 8.0);
    const double b_fix = cfg.get_double("b_fix", 1.0);
    const double t_win = cfg.get_double("t_window", 1.0);
    const double r_win = cfg.get_double("r_window", 1.0);

    std::vector<double> b_vals(b_ladder.size()), n_vals(n_ladder.size());
    parallel_for(static_cast<int>(b_ladder.size() + n_ladder.size()), threads, [&](int i) {
        if (i < static_cast<int>(b_ladder.size()))
            b_vals[i] = local_smoothing_functional(flat, phi, n_fix, b_ladder[i], t_win,
                                                   r_win, vec1(0.0), dt);
        else {
            const int j = i - static_cast<int>(b_ladder.size());
            n_vals[j] = local_smoothing_functional(flat, phi, n_ladder[j], b_fix, t_win,
                                                   r_win, vec1(0.0), dt);
        }
    });

    CsvWriter csv({"sweep", "param", "functional"});
    for (std::size_t i = 0; i < b_ladder.size(); ++i)
        csv.add_row({0.0, b_ladder[i], b_vals[i]});
    for (std::size_t i = 0; i < n_ladder.size(); ++i)
        csv.add_row({1.0, n_ladder[i], n_vals[i]});
    res.add_csv("smoothing.csv", csv);

    auto b_fit = fit_decay_slope(b_ladder, b_vals);
    res.summary["b_exponent"] = b_fit.slope;
    res.flag("b_exponent", std::abs(b_fit.slope + 0.5) <= cfg.get_double("b_tol", 0.15));
    double n_expo;
    if (n_ladder.size() >= 4) {
        n_expo = fit_decay_slope(n_ladder, n_vals).slope;
    } else {
        n_expo = std::log(n_vals.back() / n_vals.front()) /
                 std::log(n_ladder.back() / n_ladder.front());
    }
    res.summary["n_exponent"] = n_expo;
    res.flag("n_exponent", std::abs(n_expo + 1.0) <= cfg.get_double("n_tol", 0.15));
    return res;
}

// ---------------------------------------------------------------------------
// profiles: synthetic-bubble witness and greedy extraction
// ---------------------------------------------------------------------------

inline DriverResult run_profiles(const Config& cfg, int threads = 1) {
    DriverResult res;
    res.name = "profiles";
    res.config_hash = cfg.hash();
    (void)threads;
    const double L = cfg.get_double("box_length", 16.0);
    const int n = static_cast<int>(cfg.get_long("grid_n", 16384));
    Box box(1, L, n);
    Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, 1);
    std::vector<double> nl;
    for (int j = -2; j <= 10; ++j) nl.push_back(std::pow(2.0, j));

    // single bubble: witness frame recovery
    const double lam = cfg.get_double("lambda", 0.25);
    {
        GridField f = synthetic_bubble(box, lam, vec1(-4.0));
        auto w = inverse_strichartz_witness(flat, f, {0.0, 0.5}, nl);
        res.summary["witness_n"] = w.n_dyadic;
        res.summary["witness_x"] = w.x[0];
        res.summary["witness_value"] = w.value;
        res.flag("witness_scale",
                 w.n_dyadic >= 0.5 / lam && w.n_dyadic <= 2.0 / lam);
        res.flag("witness_center", std::abs(w.x[0] + 4.0) <= lam);
    }

    // two bubbles at the configured scale ratio
    const double ratio = cfg.get_double("scale_ratio", 32.0);
    {
        const double lam2 = lam / ratio;
        GridField f = synthetic_bubble(box, lam, vec1(-4.0));
        GridField b2 = synthetic_bubble(box, lam2, vec1(4.0));
        b2 *= cplx{0.8, 0.0};
        f += b2;
        auto dec = greedy_profile_extract(flat, f, 4, {0.0}, nl);
        CsvWriter csv({"bubble", "scale", "center", "h1_norm"});
        for (std::size_t j = 0; j < dec.frames.size(); ++j)
            csv.add_row({static_cast<double>(j), dec.frames[j].scale,
                         dec.frames[j].center[0], dec.frames[j].h1_norm});
        res.add_csv("profiles.csv", csv);
        res.summary["bubbles_found"] = dec.frames.size();
        res.summary["decoupling_defect"] = dec.decoupling_defect;

        bool big_ok = false, small_ok = false;
        for (const auto& fr : dec.frames) {
            if (std::abs(fr.center[0] + 4.0) <= lam && fr.scale >= lam / 2.0 &&
                fr.scale <= lam * 2.0)
                big_ok = true;
            if (std::abs(fr.center[0] - 4.0) <= lam2 && fr.scale >= lam2 / 2.0 &&
                fr.scale <= lam2 * 2.0)
                small_ok = true;
        }
        res.flag("two_bubble_frames", big_ok && small_ok);
        res.flag("decoupling_defect", dec.decoupling_defect <= 0.05);
    }
    return res;
}

// ---------------------------------------------------------------------------
// nls: conservation run for the quintic equation
// ---------------------------------------------------------------------------

inline DriverResult run_nls(const Config& cfg, int threads = 1) {
    DriverResult res;
    res.name = "nls";
    res.config_hash = cfg.hash();
    const int d = static_cast<int>(cfg.get_long("dim", 1));
    const double L = cfg.get_double("box_length", 16.0);
    const int n = static_cast<int>(cfg.get_long("grid_n", 4096));
    const double dt = cfg.get_double("dt", 1e-4);
    const double t_end = cfg.get_double("t_end", 1.0);
    const double mu = cfg.get_double("mu", 1.0);
    const int p = static_cast<int>(cfg.get_long("p", 5));
    const double width = cfg.get_double("width", 0.8);
    const double amp = cfg.get_double("amplitude", 1.0);
    Box box(d, L, n);

    std::vector<std::string> families;
    {
        std::stringstream ss(cfg.get_string("metrics", "flat,lens"));
        std::string tok;
        while (std::getline(ss, tok, ',')) families.push_back(tok);
    }
    const double eps = cfg.get_double("eps", 0.2);
    const double r_supp = cfg.get_double("r_supp", 1.0);
    const int record_every = static_cast<int>(cfg.get_long("record_every", 200));

    CsvWriter csv({"metric", "t", "mass", "energy", "l6", "linf", "tail_mass"});
    struct Drift {
        double mass = 0.0, energy = 0.0, tail = 0.0;
    };
    std::vector<Drift> drifts(families.size());
    std::vector<std::vector<std::vector<double>>> rows(families.size());

    parallel_for(static_cast<int>(families.size()), threads, [&](int fi) {
        const std::string& family = families[fi];
        Metric m = family == "flat"
                       ? Metric::build(MetricFamily::flat, 0.0, r_supp, d)
                       : family == "lens"
                           ? Metric::build(MetricFamily::lens, eps, r_supp, d)
                           : Metric::build(MetricFamily::conformal_bump, eps, r_supp, d);
        NLSProblem prob;
        prob.metric = m;
        prob.p = p;
        prob.mu = mu;
        GridField u0(box);
        u0.fill([&](const Vec& x) {
            return cplx{amp * std::exp(-norm2(x) / (2.0 * width * width)), 0.0};
        });
        EvolutionState st = nls_init(prob, u0);
        const double m0 = st.mass, e0 = st.energy;
        PropagateOptions popt;
        popt.cg_tol = cfg.get_double("cg_tol", 1e-13);
        UnitaryStepper lin(m, box, dt, popt);
        const long n_steps = std::lround(t_end / dt);
        Drift dr;
        for (long s = 0; s < n_steps; ++s) {
            nls_step(prob, st, lin);
            if ((s + 1) % record_every == 0 || s + 1 == n_steps) {
                nls_refresh_diagnostics(prob, st);
                dr.mass = std::max(dr.mass, std::abs(st.mass / m0 - 1.0));
                dr.energy = std::max(dr.energy, std::abs(st.energy / e0 - 1.0));
                const double tail = tail_mass_fraction(st.field);
                dr.tail = std::max(dr.tail, tail);
                NormSuite ns = norm_suite(m, st.field);
                rows[fi].push_back({static_cast<double>(fi), st.time, st.mass, st.energy,
                                    ns.l6, ns.linf, tail});
            }
        }
        drifts[fi] = dr;
    });

    for (std::size_t fi = 0; fi < families.size(); ++fi) {
        for (const auto& row : rows[fi]) csv.add_row(row);
        res.summary["mass_drift_" + families[fi]] = drifts[fi].mass;
        res.summary["energy_drift_" + families[fi]] = drifts[fi].energy;
        res.flag("mass_" + families[fi],
                 drifts[fi].mass <= cfg.get_double("mass_tol", 1e-10));
        res.flag("energy_" + families[fi],
                 drifts[fi].energy <= cfg.get_double("energy_tol", 1e-6));
        res.flag("boundary_guard_" + families[fi], drifts[fi].tail <= 1e-8);
    }
    res.add_csv("nls.csv", csv);
    return res;
}

}  // namespace sclens
