#pragma once

#include "sclens/errors.hpp"
#include "sclens/spectral.hpp"

namespace sclens {

// Which Hamiltonian drives the unitary evolution u_t = -i H u:
//   laplace_g:     H = -Delta_g          (e^{it Delta_g})
//   conjugated:    H = A                 (e^{-itA},  A = rho(-Delta_g)rho^{-1})
//   semiclassical: H = A(h)/h = h A      (e^{-itA(h)/h})
//   localized:     H = A'(h)/h           (e^{-itA'(h)/h})
enum class Generator { laplace_g, conjugated, semiclassical, localized };

struct PropagateOptions {
    Generator op = Generator::laplace_g;
    double h = 1.0;  // semiclassical parameter for the A(h) variants
    FrequencyCutoffs cutoffs;
    double cg_tol = 1e-12;
    int cg_max_iter = 500;
};

// Crank-Nicolson stepper, exactly unitary in the generator's natural inner
// product (Cayley transform). Flat metrics reduce every generator to a
// Fourier multiplier and the CN transfer function is applied diagonally,
// which keeps the O(dt^2) semantics without CG solves. Variable-coefficient
// solves run preconditioned CG on the normal equations I + tau^2 H^2 with the
// flat-symbol solve as preconditioner.
class UnitaryStepper {
  public:
    UnitaryStepper(const Metric& metric, const Box& box, double dt,
                   const PropagateOptions& opt = {})
        : metric_(metric), box_(box), dt_(dt), opt_(opt) {
        const double tau = 0.5 * dt_;
        if (metric.is_flat() || symbol_is_diagonal()) {
            diagonal_cn_ = sample_multiplier(box, [&](const Vec& w) {
                const cplx z = iu * tau * flat_symbol(w);
                return (1.0 - z) / (1.0 + z);
            });
            return;
        }
        if (opt_.op == Generator::conjugated || opt_.op == Generator::semiclassical)
            conj_ = std::make_shared<ConjugatedOperator>(conjugated_operator(metric, box));
        if (opt_.op == Generator::localized)
            local_ = std::make_shared<LocalizedOperator>(
                localized_operator(metric, opt_.cutoffs, opt_.h, box));
        precond_ = sample_multiplier(box, [&](const Vec& w) {
            const double s = flat_symbol(w);
            return cplx{1.0 / (1.0 + tau * tau * s * s), 0.0};
        });
        if (opt_.op == Generator::laplace_g)
            weight_ = &metric_sampling(metric, box).sqrtg;
    }

    double dt() const { return dt_; }
    const Box& box() const { return box_; }

    // advance u by one step of size dt (or -dt when reverse)
    void step(GridField& u, bool reverse = false) {
        if (!diagonal_cn_.empty()) {
            if (!reverse) {
                apply_multiplier(u, diagonal_cn_);
            } else {
                Fft::forward(u);
                for (std::size_t i = 0; i < u.size(); ++i) u[i] /= diagonal_cn_[i];
                Fft::backward(u);
            }
            return;
        }
        const double tau = (reverse ? -0.5 : 0.5) * dt_;
        // rhs = (I - i tau H) u, then solve (I + i tau H) w = rhs via
        // normal equations (I + tau^2 H^2) w = (I - i tau H) rhs
        GridField hu = apply_h(u);
        GridField rhs = u;
        for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] -= iu * tau * hu[i];
        GridField hrhs = apply_h(rhs);
        GridField b = rhs;
        for (std::size_t i = 0; i < b.size(); ++i) b[i] -= iu * tau * hrhs[i];
        u = solve_normal(tau, b, warm_ ? *warm_ : u);
        if (!warm_) warm_ = std::make_shared<GridField>(u);
        else *warm_ = u;
    }

  private:
    bool symbol_is_diagonal() const {
        // all generators are Fourier multipliers on flat metrics only
        return metric_.is_flat();
    }

    double flat_symbol(const Vec& w) const {
        switch (opt_.op) {
            case Generator::laplace_g:
            case Generator::conjugated:
                return norm2(w);
            case Generator::semiclassical:
                return opt_.h * norm2(w);
            case Generator::localized: {
                const Vec xi = opt_.h * w;
                return opt_.cutoffs(3, xi) * norm2(xi) / opt_.h;
            }
        }
        return 0.0;
    }

    GridField apply_h(const GridField& u) const {
        switch (opt_.op) {
            case Generator::laplace_g: {
                GridField lap = laplace_beltrami(metric_, u);
                lap *= cplx{-1.0, 0.0};
                return lap;
            }
            case Generator::conjugated:
                return conj_->apply(u);
            case Generator::semiclassical: {
                GridField au = conj_->apply(u);
                au *= cplx{opt_.h, 0.0};
                return au;
            }
            case Generator::localized: {
                GridField au = local_->apply(u);
                au *= cplx{1.0 / opt_.h, 0.0};
                return au;
            }
        }
        return u;
    }

    cplx weighted_inner(const GridField& a, const GridField& b) const {
        cplx s{0.0, 0.0};
        if (weight_) {
            for (std::size_t i = 0; i < a.size(); ++i)
                s += std::conj(a[i]) * b[i] * (*weight_)[i];
        } else {
            for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
        }
        return s * box_.cell_volume();
    }

    GridField solve_normal(double tau, const GridField& b, const GridField& guess) {
        auto aa = [&](const GridField& v) {
            GridField hv = apply_h(v);
            GridField hhv = apply_h(hv);
            GridField out = v;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += tau * tau * hhv[i];
            return out;
        };
        auto precond = [&](const GridField& r) {
            GridField z = r;
            apply_multiplier(z, precond_);
            return z;
        };
        GridField x = guess;
        GridField r = b - aa(x);
        GridField z = precond(r);
        GridField p = z;
        double rz = weighted_inner(r, z).real();
        const double bnorm = std::sqrt(std::abs(weighted_inner(b, b).real())) + 1e-300;
        bool converged = false;
        for (int it = 0; it < opt_.cg_max_iter; ++it) {
            const double rnorm = std::sqrt(std::abs(weighted_inner(r, r).real()));
            if (rnorm / bnorm < opt_.cg_tol) {
                converged = true;
                break;
            }
            GridField ap = aa(p);
            const double pap = weighted_inner(p, ap).real();
            if (!(pap > 0.0)) throw SolverDiverged("CN inner CG lost positivity");
            const double alpha = rz / pap;
            for (std::size_t i = 0; i < x.size(); ++i) {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            z = precond(r);
            const double rz_new = weighted_inner(r, z).real();
            const double beta = rz_new / rz;
            rz = rz_new;
            for (std::size_t i = 0; i < p.size(); ++i) p[i] = z[i] + beta * p[i];
        }
        if (!converged) {
            const double rnorm = std::sqrt(std::abs(weighted_inner(r, r).real()));
            if (rnorm / bnorm > 1e3 * opt_.cg_tol)
                throw SolverDiverged("CN inner CG did not converge");
        }
        return x;
    }

    Metric metric_;
    Box box_;
    double dt_;
    PropagateOptions opt_;
    std::vector<cplx> diagonal_cn_;
    std::vector<cplx> precond_;
    std::shared_ptr<ConjugatedOperator> conj_;
    std::shared_ptr<LocalizedOperator> local_;
    const std::vector<double>* weight_ = nullptr;
    std::shared_ptr<GridField> warm_;
};

// Exact free evolution e^{it Delta} (round-off only); unitary on L2.
inline GridField flat_propagate(GridField f, double t) {
    apply_multiplier(f, [&](const Vec& k) { return std::exp(-iu * t * norm2(k)); });
    return f;
}

// e^{-itH} f by Crank-Nicolson with steps of size ~dt (t is divided evenly).
inline GridField metric_propagate(const Metric& metric, GridField f, double t, double dt,
                                  const PropagateOptions& opt = {}) {
    if (t == 0.0) return f;
    if (!(dt > 0.0)) throw ConfigError("metric_propagate: dt must be positive");
    const int n_steps = std::max(1, static_cast<int>(std::lround(std::abs(t) / dt)));
    UnitaryStepper stepper(metric, f.box, std::abs(t) / n_steps, opt);
    const bool reverse = t < 0.0;
    for (int s = 0; s < n_steps; ++s) stepper.step(f, reverse);
    return f;
}

// ---------------------------------------------------------------------------
// Quintic (or general odd-power) NLS: i u_t + Delta_g u = mu |u|^{p-1} u
// ---------------------------------------------------------------------------

struct NLSProblem {
    Metric metric;
    int p = 5;        // odd integer >= 3
    double mu = 1.0;  // 0 linear, +1 defocusing
    double blowup_ceiling_factor = 1e6;

    void validate() const {
        if (p < 3 || p % 2 == 0) throw ConfigError("NLS: p must be an odd integer >= 3");
        if (mu != 0.0 && mu != 1.0) throw ConfigError("NLS: mu must be 0 or 1");
    }
};

struct EvolutionState {
    GridField field;
    double time = 0.0;
    double mass = 0.0;
    double energy = 0.0;
    double initial_max = 0.0;
};

inline double nls_mass(const NLSProblem& prob, const GridField& u) {
    const MetricSampling& ms = metric_sampling(prob.metric, u.box);
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += std::norm(u[i]) * ms.sqrtg[i];
    return acc * u.box.cell_volume();
}

// E(u) = int 1/2 g^{jk} d_j u d_k conj(u) + mu/(p+1) |u|^{p+1} dg
inline double nls_energy(const NLSProblem& prob, const GridField& u) {
    const MetricSampling& ms = metric_sampling(prob.metric, u.box);
    auto grad = gradient(u);
    const int d = u.box.dim;
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        double kin = 0.0;
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k)
                kin += ms.g_upper[detail::sym6(j, k)][i] *
                       (grad[j][i] * std::conj(grad[k][i])).real();
        double pot = 0.0;
        if (prob.mu != 0.0)
            pot = prob.mu / (prob.p + 1.0) * std::pow(std::abs(u[i]), prob.p + 1.0);
        acc += (0.5 * kin + pot) * ms.sqrtg[i];
    }
    return acc * u.box.cell_volume();
}

inline EvolutionState nls_init(const NLSProblem& prob, GridField u0) {
    prob.validate();
    EvolutionState st;
    st.initial_max = norm_linf(u0);
    st.field = std::move(u0);
    st.mass = nls_mass(prob, st.field);
    st.energy = nls_energy(prob, st.field);
    return st;
}

// One Strang step: exact nonlinear phase (mass preserved pointwise), unitary
// linear step, exact nonlinear phase.
inline void nls_step(const NLSProblem& prob, EvolutionState& state, UnitaryStepper& lin) {
    const double dt = lin.dt();
    auto half_phase = [&](GridField& u) {
        if (prob.mu == 0.0) return;
        const double c = 0.5 * dt * prob.mu;
        const int pow_exp = prob.p - 1;
        for (auto& z : u.v) {
            const double amp2 = std::norm(z);
            double a = amp2;
            for (int e = 2; e < pow_exp; e += 2) a *= amp2;
            z *= std::exp(cplx{0.0, -c * a});
        }
    };
    half_phase(state.field);
    lin.step(state.field);
    half_phase(state.field);
    state.time += dt;
    if (norm_linf(state.field) > prob.blowup_ceiling_factor * state.initial_max)
        throw Blowup("nls_step: sup-norm ceiling exceeded (under-resolution guard)");
}

inline void nls_refresh_diagnostics(const NLSProblem& prob, EvolutionState& state) {
    state.mass = nls_mass(prob, state.field);
    state.energy = nls_energy(prob, state.field);
}

// ---------------------------------------------------------------------------
// Picard/Duhamel iteration of the small-data local theory
// ---------------------------------------------------------------------------

struct PicardResult {
    std::vector<double> ratios;          // |u_{k+2}-u_{k+1}| / |u_{k+1}-u_k|
    double z_proxy_linear = 0.0;         // L^{10}_t L^{10}_x of the linear flow
    std::vector<GridField> final_slices; // last iterate on the time grid
    std::vector<double> times;
    bool converged = true;
};

// Iterates I(u) = e^{it Delta_g} u0 - i mu int_0^t e^{i(t-s) Delta_g} |u|^4 u ds
// on stored time slices (trapezoid in s); distances are max-over-slices
// flat H^1 norms.
inline PicardResult picard_iterate(const NLSProblem& prob, const GridField& u0,
                                   double t_final, int n_slices, int iterations,
                                   double dt_lin) {
    prob.validate();
    if (n_slices < 2) throw ConfigError("picard_iterate: need at least 2 slices");
    const double dtau = t_final / n_slices;
    const Metric& metric = prob.metric;

    PropagateOptions popt;
    popt.op = Generator::laplace_g;
    const int sub = std::max(1, static_cast<int>(std::lround(dtau / dt_lin)));
    UnitaryStepper prop(metric, u0.box, dtau / sub, popt);
    auto advance = [&](GridField f) {
        for (int s = 0; s < sub; ++s) prop.step(f);
        return f;
    };

    PicardResult res;
    // linear flow slices
    std::vector<GridField> lin;
    lin.push_back(u0);
    res.times.push_back(0.0);
    for (int m = 1; m <= n_slices; ++m) {
        lin.push_back(advance(lin.back()));
        res.times.push_back(m * dtau);
    }
    {
        double acc = 0.0;
        const MetricSampling& ms = metric_sampling(metric, u0.box);
        for (const auto& f : lin)
            acc += std::pow(norm_lp(f, 10.0, &ms.sqrtg), 10.0) * dtau;
        res.z_proxy_linear = std::pow(acc, 0.1);
    }

    auto nonlinearity = [&](const GridField& u) {
        GridField f = u;
        const int pw = prob.p - 1;
        for (auto& z : f.v) {
            const double amp2 = std::norm(z);
            double a = amp2;
            for (int e = 2; e < pw; e += 2) a *= amp2;
            z *= prob.mu * a;
        }
        return f;
    };

    auto duhamel_map = [&](const std::vector<GridField>& u) {
        std::vector<GridField> out;
        out.reserve(u.size());
        GridField acc(u0.box);  // running integral, advanced with the flow
        out.push_back(lin[0]);
        GridField f_prev = nonlinearity(u[0]);
        for (std::size_t m = 1; m < u.size(); ++m) {
            GridField f_cur = nonlinearity(u[m]);
            GridField inc = advance(f_prev);
            acc = advance(acc);
            for (std::size_t i = 0; i < acc.size(); ++i)
                acc[i] += 0.5 * dtau * (inc[i] + f_cur[i]);
            GridField im = lin[m];
            for (std::size_t i = 0; i < im.size(); ++i) im[i] -= iu * acc[i];
            out.push_back(std::move(im));
            f_prev = std::move(f_cur);
        }
        return out;
    };

    auto dist = [&](const std::vector<GridField>& a, const std::vector<GridField>& b) {
        Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, u0.box.dim);
        double worst = 0.0;
        for (std::size_t m = 0; m < a.size(); ++m) {
            GridField d = a[m] - b[m];
            worst = std::max(worst, sobolev_norm(flat, d, 1.0));
        }
        return worst;
    };

    std::vector<GridField> prev = lin;
    std::vector<GridField> cur = duhamel_map(prev);
    double d_prev = dist(cur, prev);
    int bad_streak = 0;
    for (int k = 0; k < iterations; ++k) {
        std::vector<GridField> next = duhamel_map(cur);
        const double d_cur = dist(next, cur);
        if (d_prev > 0.0) {
            const double ratio = d_cur / d_prev;
            res.ratios.push_back(ratio);
            bad_streak = (ratio > 1.0) ? bad_streak + 1 : 0;
            if (bad_streak >= 3)
                throw NotContracting(
                    "picard_iterate: ratios exceeded 1 for 3 consecutive iterations");
        }
        prev = std::move(cur);
        cur = std::move(next);
        d_prev = d_cur;
    }
    res.final_slices = std::move(cur);
    return res;
}

// ---------------------------------------------------------------------------
// Linear scattering comparison W(t) = e^{-it Delta} e^{it Delta_g}
// ---------------------------------------------------------------------------

struct ScatteringTable {
    std::vector<double> times;
    std::vector<double> cauchy_diff;  // |W(t_{i+1})u0 - W(t_i)u0|_{H^1}
    std::vector<double> tail_mass;
};

// The backward flat factor is inverted with the same Crank-Nicolson transfer
// function (not the exact multiplier): where the generators agree the scheme
// phase errors cancel exactly, so Cauchy differences measure the metric
// interaction rather than discretization drift.
inline ScatteringTable scattering_comparison(const Metric& metric, const GridField& u0,
                                             const std::vector<double>& t_ladder,
                                             double dt, double tail_guard = 1e-8) {
    if (t_ladder.size() < 2) throw ConfigError("scattering_comparison: need >= 2 times");
    ScatteringTable table;
    Metric flat = Metric::build(MetricFamily::flat, 0.0, 1.0, u0.box.dim);
    PropagateOptions popt;
    popt.op = Generator::laplace_g;

    GridField state = u0;
    double t_cur = 0.0;
    GridField w_prev;
    for (std::size_t i = 0; i < t_ladder.size(); ++i) {
        const double t = t_ladder[i];
        if (t < t_cur) throw ConfigError("scattering_comparison: ladder must increase");
        if (t > t_cur) state = metric_propagate(metric, state, t - t_cur, dt, popt);
        t_cur = t;
        const double tail = tail_mass_fraction(state);
        table.tail_mass.push_back(tail);
        if (tail > tail_guard)
            throw BoundaryContaminated("scattering_comparison: boundary tail mass " +
                                       std::to_string(tail));
        GridField w = (t > 0.0) ? metric_propagate(flat, state, -t, dt, popt) : state;
        table.times.push_back(t);
        if (i > 0) {
            GridField d = w - w_prev;
            table.cauchy_diff.push_back(sobolev_norm(flat, d, 1.0));
        }
        w_prev = std::move(w);
    }
    return table;
}

}  // namespace sclens
