#pragma once

#include <optional>

#include "sclens/errors.hpp"
#include "sclens/metric.hpp"
#include "sclens/rng.hpp"

namespace sclens {

// A point (x, xi) in T*R^d.
struct PhasePoint {
    Vec x{0.0, 0.0, 0.0};
    Vec xi{0.0, 0.0, 0.0};
};

// Bicharacteristic of a(x, xi) = g^{jk} xi_j xi_k:
//   xdot = a_xi = 2 g(x) xi,   xidot = -a_x.
// Along the flow the symbol is conserved and gamma = int (xi a_xi - a) ds
// accumulates the action phase (for quadratic symbols xi a_xi - a = a, so
// gamma(t) = a0 t up to integration error; we still integrate it).
struct FlowTrajectory {
    std::vector<double> t;
    std::vector<PhasePoint> state;
    std::vector<double> gamma;
    double a0 = 0.0;
};

struct FlowOptions {
    double dt = 1e-3;
    double box_half_width = 1e30;  // LeftDomain beyond this
    double tol_flow = 1e-6;        // symbol-drift monitor
    bool record = false;           // fill a FlowTrajectory
    bool check_drift = false;      // throw StepTooLarge if drift > 100*tol
};

namespace detail {

inline void hamilton_rhs(const Metric& m, const PhasePoint& p, PhasePoint& d) {
    d.x = m.symbol_dxi(p.x, p.xi);
    Vec ax = m.symbol_dx(p.x, p.xi);
    d.xi = -1.0 * ax;
}

inline PhasePoint rk4_step(const Metric& m, const PhasePoint& p, double dt) {
    PhasePoint k1, k2, k3, k4, q;
    hamilton_rhs(m, p, k1);
    q.x = p.x + (0.5 * dt) * k1.x;
    q.xi = p.xi + (0.5 * dt) * k1.xi;
    hamilton_rhs(m, q, k2);
    q.x = p.x + (0.5 * dt) * k2.x;
    q.xi = p.xi + (0.5 * dt) * k2.xi;
    hamilton_rhs(m, q, k3);
    q.x = p.x + dt * k3.x;
    q.xi = p.xi + dt * k3.xi;
    hamilton_rhs(m, q, k4);
    PhasePoint out;
    out.x = p.x + (dt / 6.0) * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x);
    out.xi = p.xi + (dt / 6.0) * (k1.xi + 2.0 * k2.xi + 2.0 * k3.xi + k4.xi);
    return out;
}

// Once outside the support and moving outward the ray is exactly straight
// and stays outside, so the remaining flow is x(t) = x + 2(t-s) xi.
inline bool outgoing_flat(const Metric& m, const PhasePoint& p) {
    return norm2(p.x) >= sq(m.support_radius()) && dot(p.x, p.xi) >= 0.0;
}

}  // namespace detail

inline PhasePoint flow(const Metric& metric, const PhasePoint& p0, double t,
                       const FlowOptions& opt = {}, FlowTrajectory* traj = nullptr) {
    if (!(opt.dt > 0.0)) throw ConfigError("flow: dt must be positive");
    const double dir = (t >= 0.0) ? 1.0 : -1.0;
    const double T = std::abs(t);
    PhasePoint p = p0;
    const double a0 = metric.symbol(p0.x, p0.xi);
    double s = 0.0;
    double gamma = 0.0;

    auto record = [&](double time) {
        if (traj) {
            traj->t.push_back(dir * time);
            traj->state.push_back(p);
            traj->gamma.push_back(gamma);
        }
    };
    if (traj) {
        traj->t.clear();
        traj->state.clear();
        traj->gamma.clear();
        traj->a0 = a0;
    }
    record(0.0);

    while (s < T - 1e-15) {
        // straight-line fast path (also exact under time reversal: reversed
        // outgoing means incoming along the same exterior line)
        if (detail::outgoing_flat(metric, p) && dir > 0.0) {
            const double rem = T - s;
            gamma += metric.symbol(p.x, p.xi) * rem;
            p.x = p.x + (2.0 * rem) * p.xi;
            s = T;
            record(s);
            break;
        }
        const double dt = std::min(opt.dt, T - s);
        // gamma increment by Simpson on (xi a_xi - a); integrand equals a on
        // quadratic symbols, evaluate it anyway for generality
        auto integrand = [&](const PhasePoint& q) {
            Vec axi = metric.symbol_dxi(q.x, q.xi);
            return dot(q.xi, axi) - metric.symbol(q.x, q.xi);
        };
        const double f0 = integrand(p);
        PhasePoint pm = detail::rk4_step(metric, p, dir * 0.5 * dt);
        PhasePoint pn = detail::rk4_step(metric, pm, dir * 0.5 * dt);
        gamma += dt / 6.0 * (f0 + 4.0 * integrand(pm) + integrand(pn));
        p = pn;
        s += dt;

        if (std::abs(p.x[0]) > opt.box_half_width || std::abs(p.x[1]) > opt.box_half_width ||
            std::abs(p.x[2]) > opt.box_half_width)
            throw LeftDomain("flow: trajectory left the computational box");
        if (opt.check_drift && a0 > 0.0) {
            const double drift = std::abs(metric.symbol(p.x, p.xi) - a0) / a0;
            if (drift > 100.0 * opt.tol_flow)
                throw StepTooLarge("flow: symbol drift exceeds 100*tol_flow");
        }
        record(s);
    }
    return p;
}

// Max relative symbol drift along a recorded trajectory.
inline double symbol_drift(const Metric& metric, const FlowTrajectory& traj) {
    double worst = 0.0;
    for (const auto& p : traj.state) {
        const double a = metric.symbol(p.x, p.xi);
        if (traj.a0 > 0.0) worst = std::max(worst, std::abs(a / traj.a0 - 1.0));
    }
    return worst;
}

struct NontrappingReport {
    bool all_escaped = true;
    double max_escape_time = 0.0;
    int non_escapers = 0;
    int samples = 0;
};

// Integrates rays sampled from the region-B proxy
//   { |x| <= 1, eps <= |xi|_g <= 1/eps }
// until |x^t| >= escape_radius or t = T_max.
inline NontrappingReport nontrapping_probe(const Metric& metric, int sample_count,
                                           double t_max, double eps_band = 0.5,
                                           std::uint64_t seed = 1,
                                           double escape_radius = 10.0,
                                           double dt = 2e-3) {
    NontrappingReport rep;
    rep.samples = sample_count;
    Rng rng(seed);
    const int d = metric.dim();
    for (int i = 0; i < sample_count; ++i) {
        PhasePoint p;
        p.x = rng.ball(d, 1.0);
        Vec dirv = rng.direction(d);
        const double target = rng.uniform(eps_band, 1.0 / eps_band);
        // rescale so |xi|_g = target at the starting point
        const double ag = std::sqrt(metric.symbol(p.x, dirv));
        p.xi = (target / ag) * dirv;

        double t = 0.0;
        bool escaped = false;
        while (t < t_max) {
            if (detail::outgoing_flat(metric, p)) {
                // analytic time to reach the escape radius along the straight ray
                const double speed = 2.0 * norm(p.xi);
                if (norm(p.x) >= escape_radius) {
                    escaped = true;
                    break;
                }
                if (speed > 0.0) {
                    const double need = (escape_radius - norm(p.x)) / speed;
                    t += need;
                    escaped = t <= t_max;
                    break;
                }
            }
            p = detail::rk4_step(metric, p, dt);
            t += dt;
            if (norm(p.x) >= escape_radius) {
                escaped = true;
                break;
            }
        }
        if (escaped)
            rep.max_escape_time = std::max(rep.max_escape_time, std::min(t, t_max));
        else {
            rep.all_escaped = false;
            ++rep.non_escapers;
        }
    }
    return rep;
}

struct MeasureEstimate {
    double value = 0.0;     // vol({|xi| <= xi_max}) * hit fraction
    double std_error = 0.0;
    long hits = 0;
    long samples = 0;
    bool reliable = true;   // false if fewer than 100 hits
};

inline double ball_volume(int d, double r) {
    if (d == 1) return 2.0 * r;
    if (d == 2) return pi * r * r;
    return 4.0 / 3.0 * pi * r * r * r;
}

// Monte-Carlo estimate of m({ xi : |x^1(x, xi) - z| <= r }), xi uniform in
// {|xi| <= xi_max}. With several radii the same rays are reused (one flow
// per sample serves every r).
inline std::vector<MeasureEstimate> preimage_measure(const Metric& metric, const Vec& x,
                                                     const Vec& z,
                                                     const std::vector<double>& radii,
                                                     long samples, double xi_max,
                                                     std::uint64_t seed, double dt = 2e-3) {
    if (radii.empty()) throw EmptyInput("preimage_measure: no radii given");
    const int d = metric.dim();
    const double vol = ball_volume(d, xi_max);
    std::vector<long> hits(radii.size(), 0);
    Rng rng(seed);
    FlowOptions opt;
    opt.dt = dt;
    for (long i = 0; i < samples; ++i) {
        PhasePoint p;
        p.x = x;
        p.xi = rng.ball(d, xi_max);
        PhasePoint q = flow(metric, p, 1.0, opt);
        const double dist = norm(q.x - z);
        for (std::size_t j = 0; j < radii.size(); ++j)
            if (dist <= radii[j]) ++hits[j];
    }
    std::vector<MeasureEstimate> out(radii.size());
    for (std::size_t j = 0; j < radii.size(); ++j) {
        const double frac = static_cast<double>(hits[j]) / samples;
        out[j].value = vol * frac;
        out[j].std_error = vol * std::sqrt(std::max(frac * (1.0 - frac), 0.0) / samples);
        out[j].hits = hits[j];
        out[j].samples = samples;
        out[j].reliable = hits[j] >= 100;
    }
    return out;
}

struct RefocusingScan {
    // 2D histogram over [-extent, extent]^2 (d=2) or 1D bins (d=1)
    int bins = 0;
    double extent = 0.0;
    std::vector<double> density;       // bin counts / (count * bin area)
    double peak_density = 0.0;
    Vec peak_center{0.0, 0.0, 0.0};
};

// Histogram of endpoints x^1(x, xi) over a xi-annulus grid. Peaks mark
// refocusing; used to pick z for the preimage sweep.
inline RefocusingScan refocusing_scan(const Metric& metric, const Vec& x,
                                      const std::vector<Vec>& xi_grid, int bins = 64,
                                      double extent = 8.0, double dt = 2e-3) {
    if (xi_grid.empty()) throw EmptyInput("refocusing_scan: empty xi grid");
    const int d = metric.dim();
    RefocusingScan scan;
    scan.bins = bins;
    scan.extent = extent;
    scan.density.assign(d == 1 ? bins : bins * bins, 0.0);
    FlowOptions opt;
    opt.dt = dt;
    const double cell = 2.0 * extent / bins;
    long counted = 0;
    for (const Vec& xi : xi_grid) {
        PhasePoint p;
        p.x = x;
        p.xi = xi;
        PhasePoint q = flow(metric, p, 1.0, opt);
        int bx = static_cast<int>(std::floor((q.x[0] + extent) / cell));
        if (bx < 0 || bx >= bins) continue;
        if (d == 1) {
            scan.density[bx] += 1.0;
        } else {
            int by = static_cast<int>(std::floor((q.x[1] + extent) / cell));
            if (by < 0 || by >= bins) continue;
            scan.density[bx * bins + by] += 1.0;
        }
        ++counted;
    }
    const double cell_vol = (d == 1) ? cell : cell * cell;
    for (auto& v : scan.density) v /= std::max<long>(counted, 1) * cell_vol;
    std::size_t best = 0;
    for (std::size_t i = 0; i < scan.density.size(); ++i)
        if (scan.density[i] > scan.density[best]) best = i;
    scan.peak_density = scan.density[best];
    if (d == 1) {
        scan.peak_center = vec1(-extent + (best + 0.5) * cell);
    } else {
        scan.peak_center = vec2(-extent + (best / bins + 0.5) * cell,
                                -extent + (best % bins + 0.5) * cell);
    }
    return scan;
}

// Annulus lattice of momenta for refocusing scans. Radii are spaced so the
// lattice samples the annulus uniformly in area; the flat pushforward under
// xi -> x + 2 xi is then uniform too.
inline std::vector<Vec> annulus_grid(int d, double r_min, double r_max, int n_radial,
                                     int n_angular) {
    if (n_radial < 1 || n_angular < 1) throw EmptyInput("annulus_grid: empty grid");
    std::vector<Vec> out;
    auto radius = [&](int i) {
        const double u = (i + 0.5) / n_radial;
        if (d == 1) return r_min + (r_max - r_min) * u;
        return std::sqrt(r_min * r_min + (r_max * r_max - r_min * r_min) * u);
    };
    if (d == 1) {
        for (int i = 0; i < n_radial; ++i) {
            out.push_back(vec1(radius(i)));
            out.push_back(vec1(-radius(i)));
        }
        return out;
    }
    for (int i = 0; i < n_radial; ++i) {
        const double r = radius(i);
        for (int a = 0; a < n_angular; ++a) {
            const double th = 2.0 * pi * a / n_angular;
            out.push_back(vec2(r * std::cos(th), r * std::sin(th)));
        }
    }
    return out;
}

}  // namespace sclens
