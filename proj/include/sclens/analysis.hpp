#pragma once

#include <algorithm>

#include "sclens/errors.hpp"
#include "sclens/propagate.hpp"

namespace sclens {

// ---------------------------------------------------------------------------
// Norm suite: per-slice Lebesgue/Sobolev norms and the spacetime proxies
//   Z = L^{10}_t L^{10}_x,  N-proxy = L^2_t L^{6/5}_x,  Y = L^{10}_t H^{1,30/13}
// ---------------------------------------------------------------------------

struct NormSuite {
    double l2 = 0.0;
    double l6 = 0.0;
    double linf = 0.0;
    double grad_l2 = 0.0;
};

inline NormSuite norm_suite(const Metric& metric, const GridField& u) {
    const MetricSampling& ms = metric_sampling(metric, u.box);
    NormSuite s;
    s.l2 = norm_lp(u, 2.0, &ms.sqrtg);
    s.l6 = norm_lp(u, 6.0, &ms.sqrtg);
    s.linf = norm_linf(u);
    Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, u.box.dim);
    s.grad_l2 = sobolev_norm(flat, u, 1.0);
    return s;
}

// Riemann-sum accumulators over stored time slices.
class SpacetimeNorms {
  public:
    void add_slice(const Metric& metric, const GridField& u, double dt) {
        const MetricSampling& ms = metric_sampling(metric, u.box);
        z_acc_ += std::pow(norm_lp(u, 10.0, &ms.sqrtg), 10.0) * dt;
        const double n65 = norm_lp(u, 6.0 / 5.0, &ms.sqrtg);
        n_acc_ += n65 * n65 * dt;
        GridField g = u;
        apply_multiplier(g, [](const Vec& k) { return cplx{norm(k), 0.0}; });
        y_acc_ += std::pow(norm_lp(g, 30.0 / 13.0, &ms.sqrtg), 10.0) * dt;
    }
    double z_proxy() const { return std::pow(z_acc_, 0.1); }
    double n_proxy() const { return std::sqrt(n_acc_); }
    double y_proxy() const { return std::pow(y_acc_, 0.1); }

  private:
    double z_acc_ = 0.0, n_acc_ = 0.0, y_acc_ = 0.0;
};

// ---------------------------------------------------------------------------
// Log-log least squares
// ---------------------------------------------------------------------------

struct SlopeFit {
    double slope = 0.0;
    double width = 0.0;  // two standard errors from the residuals
};

inline SlopeFit fit_decay_slope(const std::vector<double>& param,
                                const std::vector<double>& value) {
    if (param.size() != value.size() || param.size() < 4)
        throw TooFewPoints("fit_decay_slope: need at least 4 points");
    const int n = static_cast<int>(param.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        if (!(param[i] > 0.0) || !(value[i] > 0.0))
            throw NonPositiveValue("fit_decay_slope: inputs must be positive");
        const double x = std::log(param[i]), y = std::log(value[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    SlopeFit fit;
    const double sxx_c = sxx - sx * sx / n;
    fit.slope = (sxy - sx * sy / n) / sxx_c;
    const double intercept = (sy - fit.slope * sx) / n;
    double ss_res = 0.0;
    for (int i = 0; i < n; ++i)
        ss_res += sq(std::log(value[i]) - intercept - fit.slope * std::log(param[i]));
    if (n > 2) fit.width = 2.0 * std::sqrt(ss_res / (n - 2) / sxx_c);
    return fit;
}

// ---------------------------------------------------------------------------
// Morawetz action and identity
//
//   M(t) = int a_R |u|^2 dg
//   d2/dt2 M = 4 Re int (D^2 a)_{ab} D^a conj(u) D^b u dg
//              - int (Delta_g^2 a) |u|^2 dg + (4 mu / 3) int (Delta_g a)|u|^6 dg
//
// with a(x) = <x> truncated by a C^4 radial cutoff at radius R (the
// bi-Laplacian needs four derivatives of the weight).
// ---------------------------------------------------------------------------

struct MorawetzWeight {
    double radius = 8.0;  // cutoff radius R: plateau to R, zero by 2R

    double cut(double r) const { return smootherstep((2.0 * radius - r) / radius); }

    double value(const Vec& x) const { return bracket(x) * cut(norm(x)); }

    Vec grad(const Vec& x) const {
        const double r = norm(x);
        const double br = bracket(x);
        Vec g{0.0, 0.0, 0.0};
        if (r >= 2.0 * radius) return g;
        const double c = cut(r);
        double cp = 0.0;
        if (r > radius && r < 2.0 * radius) {
            // d/dr smootherstep((2R - r)/R) = -s'(t)/R
            const double t = (2.0 * radius - r) / radius;
            const double t2 = t * t;
            const double sp =
                t2 * t2 * (630.0 + t * (-2520.0 + t * (3780.0 + t * (-2520.0 + 630.0 * t))));
            cp = -sp / radius;
        }
        for (int j = 0; j < 3; ++j) g[j] = x[j] / br * c + (r > 0 ? br * cp * x[j] / r : 0.0);
        return g;
    }

    void hess(const Vec& x, int dim, double out[3][3]) const {
        // finite differences of the analytic gradient: the weight is C^4, a
        // 4th-order stencil keeps the Hessian accurate to ~1e-10
        const double h = 1e-3;
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) out[j][k] = 0.0;
        for (int k = 0; k < dim; ++k) {
            Vec xp = x, xm = x, xp2 = x, xm2 = x;
            xp[k] += h;
            xm[k] -= h;
            xp2[k] += 2.0 * h;
            xm2[k] -= 2.0 * h;
            const Vec gp = grad(xp), gm = grad(xm), gp2 = grad(xp2), gm2 = grad(xm2);
            for (int j = 0; j < dim; ++j)
                out[j][k] = (gm2[j] - 8.0 * gm[j] + 8.0 * gp[j] - gp2[j]) / (12.0 * h);
        }
        // enforce symmetry
        for (int j = 0; j < dim; ++j)
            for (int k = j + 1; k < dim; ++k) {
                const double s = 0.5 * (out[j][k] + out[k][j]);
                out[j][k] = out[k][j] = s;
            }
    }
};

struct MorawetzReport {
    double weight_radius = 0.0;
    std::vector<double> times;
    std::vector<double> action;       // M(t_i)
    double dtm = 0.0;                 // dM/dt at the center slice
    double d2m = 0.0;                 // second difference at the center slice
    double hessian_term = 0.0;
    double bilaplacian_term = 0.0;
    double nonlinear_term = 0.0;
    double rhs = 0.0;
    double residual = 0.0;            // |d2m - rhs|
    double dtm_bound = 0.0;           // c R |grad u|_2^2 proxy
};

inline MorawetzReport morawetz_report(const std::vector<GridField>& slices,
                                      double dt_slice, const Metric& metric, double radius,
                                      double mu) {
    if (slices.size() < 5)
        throw TooFewSlices("morawetz_report: need at least 5 uniformly spaced slices");
    const Box& box = slices.front().box;
    const MetricSampling& ms = metric_sampling(metric, box);
    MorawetzWeight w;
    w.radius = radius;

    MorawetzReport rep;
    rep.weight_radius = radius;

    // weight samples
    const std::size_t n = box.size();
    std::vector<double> a_val(n);
    std::vector<double> lap_a(n);  // Delta_g a_R, analytic
    const int d = box.dim;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec x = box.point(i);
        a_val[i] = w.value(x);
        double hs[3][3], gam[3][3][3], up[3][3];
        w.hess(x, d, hs);
        metric.christoffel(x, gam);
        metric.upper(x, up);
        const Vec gr = w.grad(x);
        double lap = 0.0;
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k) {
                double cov = hs[j][k];
                for (int m = 0; m < d; ++m) cov -= gam[m][j][k] * gr[m];
                lap += up[j][k] * cov;
            }
        lap_a[i] = lap;
    }
    // Delta_g^2 a_R via the spectral operator applied to the sampled Delta_g a_R
    GridField lap_field(box);
    for (std::size_t i = 0; i < n; ++i) lap_field[i] = lap_a[i];
    GridField bilap = laplace_beltrami(metric, lap_field);

    auto action_of = [&](const GridField& u) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            acc += a_val[i] * std::norm(u[i]) * ms.sqrtg[i];
        return acc * box.cell_volume();
    };
    for (std::size_t s = 0; s < slices.size(); ++s) {
        rep.times.push_back(s * dt_slice);
        rep.action.push_back(action_of(slices[s]));
    }

    const std::size_t c = slices.size() / 2;
    rep.d2m = (rep.action[c + 1] - 2.0 * rep.action[c] + rep.action[c - 1]) /
              (dt_slice * dt_slice);
    rep.dtm = (rep.action[c + 1] - rep.action[c - 1]) / (2.0 * dt_slice);

    // RHS at the center slice
    const GridField& u = slices[c];
    auto grad_u = gradient(u);
    double hess_term = 0.0, bilap_term = 0.0, nl_term = 0.0, grad_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec x = box.point(i);
        double hs[3][3], gam[3][3][3], up[3][3];
        w.hess(x, d, hs);
        metric.christoffel(x, gam);
        metric.upper(x, up);
        const Vec gr = w.grad(x);
        // raised gradients D^a u = g^{ab} d_b u
        cplx du_up[3] = {0, 0, 0};
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) du_up[a] += up[a][b] * grad_u[b][i];
        double q = 0.0;
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) {
                double cov = hs[a][b];
                for (int m = 0; m < d; ++m) cov -= gam[m][a][b] * gr[m];
                q += cov * (std::conj(du_up[a]) * du_up[b]).real();
            }
        hess_term += q * ms.sqrtg[i];
        bilap_term += bilap[i].real() * std::norm(u[i]) * ms.sqrtg[i];
        nl_term += lap_a[i] * std::pow(std::abs(u[i]), 6.0) * ms.sqrtg[i];
        grad_sq += std::norm(grad_u[0][i]) * ms.sqrtg[i];
    }
    const double vol = box.cell_volume();
    rep.hessian_term = 4.0 * hess_term * vol;
    rep.bilaplacian_term = -bilap_term * vol;
    rep.nonlinear_term = (4.0 * mu / 3.0) * nl_term * vol;
    rep.rhs = rep.hessian_term + rep.bilaplacian_term + rep.nonlinear_term;
    rep.residual = std::abs(rep.d2m - rep.rhs);

    NormSuite ns = norm_suite(metric, u);
    rep.dtm_bound = radius * ns.grad_l2 * ns.grad_l2 + radius * ns.l2 * ns.l2;
    return rep;
}

// ---------------------------------------------------------------------------
// Bourgain-Morawetz ratio
// ---------------------------------------------------------------------------

struct BourgainMorawetzResult {
    double spacetime_integral = 0.0;  // int_I int_{|x| <= |I|^{1/2}} |u|^6 / <x> dx dt
    double interval_length = 0.0;
    double energy = 0.0;
    double ratio = 0.0;
    bool degenerate = false;  // u == 0: guarded 0/0
};

inline BourgainMorawetzResult bourgain_morawetz_ratio(const std::vector<GridField>& slices,
                                                      double dt_slice, const Metric& metric,
                                                      int p = 5, double mu = 1.0) {
    if (slices.size() < 2) throw TooFewSlices("bourgain_morawetz_ratio: need >= 2 slices");
    BourgainMorawetzResult res;
    res.interval_length = dt_slice * (slices.size() - 1);
    const double r_cut = std::sqrt(res.interval_length);
    const Box& box = slices.front().box;

    NLSProblem prob;
    prob.metric = metric;
    prob.p = p;
    prob.mu = mu;
    res.energy = nls_energy(prob, slices.front());
    if (res.energy <= 0.0) {
        res.degenerate = true;
        return res;
    }

    double acc = 0.0;
    for (std::size_t s = 0; s < slices.size(); ++s) {
        const double wt = (s == 0 || s + 1 == slices.size()) ? 0.5 : 1.0;  // trapezoid
        double slab = 0.0;
        for (std::size_t i = 0; i < box.size(); ++i) {
            const Vec x = box.point(i);
            if (norm(x) > r_cut) continue;
            slab += std::pow(std::abs(slices[s][i]), 6.0) / bracket(x);
        }
        acc += wt * slab;
    }
    res.spacetime_integral = acc * box.cell_volume() * dt_slice;
    res.ratio = res.spacetime_integral / (std::sqrt(res.interval_length) * res.energy);
    return res;
}

// ---------------------------------------------------------------------------
// Scaled local smoothing functional
//   | grad e^{it Delta_g} P_{>BN} phi |_{L^2( |t - t0| <= T N^{-2},
//                                             |x - x0| <= R N^{-1} )}
// ---------------------------------------------------------------------------

// Spectral projection P_{<= N} = chi(sqrt(-Delta_g)/N) with chi a smoothstep
// equal to 1 below 1 and 0 above 1.2.
inline GridField sharp_lp_low(const Metric& metric, double n_dyadic, const GridField& f) {
    auto profile = [n_dyadic](double lam) {
        return radial_plateau(std::sqrt(std::max(lam, 0.0)) / n_dyadic, 1.0, 1.2);
    };
    if (metric.is_flat()) {
        GridField g = f;
        apply_multiplier(g, [&](const Vec& k) { return cplx{profile(norm2(k)), 0.0}; });
        return g;
    }
    if (f.box.dim > 2)
        throw DimensionTooLarge("sharp_lp_low: metric flavor needs d <= 2");
    return metric_function_apply(metric, f, profile);
}

inline double local_smoothing_functional(const Metric& metric, const GridField& phi,
                                         double n_dyadic, double b_sep, double t_window,
                                         double r_window, const Vec& x0, double dt) {
    GridField hi = phi - sharp_lp_low(metric, b_sep * n_dyadic, phi);
    const double t_half = t_window / (n_dyadic * n_dyadic);
    const double r_tube = r_window / n_dyadic;
    const Box& box = phi.box;

    const int n_slices = std::max(4, static_cast<int>(std::ceil(2.0 * t_half / dt)));
    const double tau = 2.0 * t_half / n_slices;

    // start at t0 - t_half and march forward, accumulating the tube integral
    GridField u = metric.is_flat() ? flat_propagate(hi, -t_half)
                                   : metric_propagate(metric, hi, -t_half, dt);
    PropagateOptions popt;
    UnitaryStepper stepper(metric, box, tau, popt);
    double acc = 0.0;
    for (int s = 0; s <= n_slices; ++s) {
        auto grad = gradient(u);
        double slab = 0.0;
        for (std::size_t i = 0; i < box.size(); ++i) {
            if (norm(box.point(i) - x0) > r_tube) continue;
            for (int j = 0; j < box.dim; ++j) slab += std::norm(grad[j][i]);
        }
        const double wt = (s == 0 || s == n_slices) ? 0.5 : 1.0;
        acc += wt * slab * box.cell_volume() * tau;
        if (s < n_slices) stepper.step(u);
    }
    return std::sqrt(acc);
}

// ---------------------------------------------------------------------------
// Inverse-Strichartz concentration witness and greedy profile extraction
// ---------------------------------------------------------------------------

struct ConcentrationWitness {
    double t = 0.0;
    Vec x{0.0, 0.0, 0.0};
    double n_dyadic = 1.0;
    double value = 0.0;      // |(P_N)^2 e^{it Delta_g} f (x)| at the argmax
    double objective = 0.0;  // N^{1 - d/2} * value (scale covariant; N^{-1/2} at d=3)
    double proxy = 0.0;      // N^{1/2} eps^{9/4} A^{-5/4}
};

// Maximizes the scale-covariant objective over the (t, N) ladders and all
// grid points. The time ladder always contains t = 0.
inline ConcentrationWitness inverse_strichartz_witness(
    const Metric& metric, const GridField& f, const std::vector<double>& t_ladder,
    const std::vector<double>& n_ladder, double eps = 0.0, double bound_a = 1.0,
    double dt = 1e-2, const HeatOptions& heat = {}) {
    if (n_ladder.empty()) throw EmptyInput("witness: empty N ladder");
    std::vector<double> times = t_ladder;
    if (std::find(times.begin(), times.end(), 0.0) == times.end())
        times.insert(times.begin(), 0.0);

    ConcentrationWitness best;
    const int d = f.box.dim;
    for (double t : times) {
        GridField ut = (t == 0.0) ? f
                       : metric.is_flat()
                           ? flat_propagate(f, t)
                           : metric_propagate(metric, f, t, dt);
        for (double nv : n_ladder) {
            GridField p = heat_lp_project(metric, nv, ut, LpMode::band, heat);
            p = heat_lp_project(metric, nv, p, LpMode::band, heat);
            const double weight = std::pow(nv, 1.0 - 0.5 * d);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double obj = weight * std::abs(p[i]);
                if (obj > best.objective) {
                    best.objective = obj;
                    best.value = std::abs(p[i]);
                    best.t = t;
                    best.x = f.box.point(i);
                    best.n_dyadic = nv;
                }
            }
        }
    }
    best.proxy = std::sqrt(best.n_dyadic) * std::pow(eps, 2.25) * std::pow(bound_a, -1.25);
    return best;
}

struct ProfileFrame {
    double scale = 1.0;  // lambda = 1 / N*
    Vec center{0.0, 0.0, 0.0};
    double time = 0.0;
    double h1_norm = 0.0;  // flat H^1 of the extracted bubble
};

struct ProfileDecomposition {
    std::vector<ProfileFrame> frames;
    std::vector<GridField> bubbles;
    GridField remainder;
    std::vector<double> remainder_h1;  // after each extraction
    double decoupling_defect = 0.0;    // | |f|^2 - sum |b|^2 - |r|^2 | / |f|^2
    bool stalled = false;
};

// Greedy extraction: witness -> windowed cut around (x*, 8/N*) at the witness
// time, pulled back by the linear flow -> subtract -> repeat.
inline ProfileDecomposition greedy_profile_extract(
    const Metric& metric, const GridField& f, int max_bubbles,
    const std::vector<double>& t_ladder, const std::vector<double>& n_ladder,
    double stall_fraction = 0.01, double dt = 1e-2) {
    if (max_bubbles < 0 || max_bubbles > 8)
        throw ConfigError("greedy_profile_extract: J must be in [0, 8]");
    Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, f.box.dim);
    ProfileDecomposition out;
    out.remainder = f;
    const double total0 = sobolev_norm(flat, f, 1.0);
    if (total0 == 0.0) return out;

    for (int j = 0; j < max_bubbles; ++j) {
        ConcentrationWitness w =
            inverse_strichartz_witness(metric, out.remainder, t_ladder, n_ladder);
        if (w.value == 0.0) break;
        GridField at_t = (w.t == 0.0) ? out.remainder
                         : metric.is_flat()
                             ? flat_propagate(out.remainder, w.t)
                             : metric_propagate(metric, out.remainder, w.t, dt);
        const double r_in = 8.0 / w.n_dyadic;
        const double r_out = 12.0 / w.n_dyadic;
        GridField bubble_t(at_t.box);
        for (std::size_t i = 0; i < at_t.size(); ++i) {
            const double r = norm(at_t.box.point(i) - w.x);
            bubble_t[i] = at_t[i] * radial_plateau(r, r_in, r_out);
        }
        GridField bubble = (w.t == 0.0) ? bubble_t
                           : metric.is_flat()
                               ? flat_propagate(bubble_t, -w.t)
                               : metric_propagate(metric, bubble_t, -w.t, dt);

        const double before = sobolev_norm(flat, out.remainder, 1.0);
        GridField next = out.remainder - bubble;
        const double after = sobolev_norm(flat, next, 1.0);
        const double bub_h1 = sobolev_norm(flat, bubble, 1.0);
        if (sq(before) - sq(after) < stall_fraction * sq(before)) {
            out.stalled = true;
            break;
        }
        ProfileFrame frame;
        frame.scale = 1.0 / w.n_dyadic;
        frame.center = w.x;
        frame.time = w.t;
        frame.h1_norm = bub_h1;
        out.frames.push_back(frame);
        out.bubbles.push_back(std::move(bubble));
        out.remainder = std::move(next);
        out.remainder_h1.push_back(after);
    }

    double sum_sq = sq(sobolev_norm(flat, out.remainder, 1.0));
    for (const auto& b : out.bubbles) sum_sq += sq(sobolev_norm(flat, b, 1.0));
    out.decoupling_defect = std::abs(sq(total0) - sum_sq) / sq(total0);
    return out;
}

// Energy-critical bubble lambda^{-(d-2)/2} phi((x - x0)/lambda) on a smooth
// compactly supported profile; the synthetic-corpus generator for tests.
inline GridField synthetic_bubble(const Box& box, double lambda, const Vec& x0) {
    GridField f(box);
    const double amp = std::pow(lambda, -0.5 * (box.dim - 2));
    f.fill([&](const Vec& x) {
        const double r2 = norm2(x - x0) / (lambda * lambda);
        return cplx{amp * bump(r2 / 16.0), 0.0};  // support radius 4 lambda
    });
    return f;
}

}  // namespace sclens
