#pragma once

#include <Eigen/Dense>

#include "sclens/metric.hpp"
#include "sclens/rng.hpp"

namespace sclens {

struct DimensionTooLarge : Error {
    using Error::Error;
};
struct PhaseGridTooCoarse : Error {
    using Error::Error;
};

inline GridField fourier_multiplier(const std::function<cplx(const Vec&)>& m, GridField f) {
    apply_multiplier(f, m);
    return f;
}

// Nested smooth radial cutoffs chi_1 < chi_2 < chi_3 with
//   {eps <= |xi| <= 1/eps} < chi_1  and  chi_{j+1} = 1 on supp chi_j.
// Realized as C^2 smoothstep profiles; plateau/support radii are recorded so
// experiment metadata can reproduce the symbols bit-exactly.
struct FrequencyCutoffs {
    double eps_band = 0.5;
    double ratio = 1.25;  // support/plateau radius ratio between levels

    double plateau_lo(int j) const { return eps_band / std::pow(ratio, j - 1); }
    double plateau_hi(int j) const { return std::pow(ratio, j - 1) / eps_band; }
    double support_lo(int j) const { return plateau_lo(j) / ratio; }
    double support_hi(int j) const { return plateau_hi(j) * ratio; }

    // radial profile of chi_j
    double radial(int j, double r) const {
        if (j < 1 || j > 3) throw ConfigError("FrequencyCutoffs: level must be 1..3");
        const double lo = plateau_lo(j), hi = plateau_hi(j);
        if (r >= lo && r <= hi) return 1.0;
        if (r < lo) {
            const double s = support_lo(j);
            if (r <= s) return 0.0;
            return smoothstep((r - s) / (lo - s));
        }
        const double s = support_hi(j);
        if (r >= s) return 0.0;
        return smoothstep((s - r) / (s - hi));
    }

    double operator()(int j, const Vec& xi) const { return radial(j, norm(xi)); }
};

// ---------------------------------------------------------------------------
// Semiclassical Weyl quantization
//
//   a^w(X, hD) f (x) = (2 pi h)^{-d} int e^{i(x-y)xi/h} a((x+y)/2, xi) f(y) dy dxi
//
// for symbols given as sums of separable terms a = sum_r alpha_r(x) beta_r(xi)
// (covers |xi|^2, V(x), g^{jk}(x) xi_j xi_k and their cutoffs chi(xi) a).
// In the Fourier basis e^{i omega x} the operator has the exact matrix
//   M_{kl} = sum_r  alphahat_r(k - l) * beta_r( h (omega_k + omega_l) / 2 ),
// Hermitian for real alpha, beta. Coefficients alphahat are taken from a
// doubled grid so differences up to |k-l| < N are unaliased.
// ---------------------------------------------------------------------------

struct SymbolTerm {
    std::function<double(const Vec&)> fx;   // alpha(x)
    std::function<double(const Vec&)> fxi;  // beta(xi)
};

struct SeparableSymbol {
    std::vector<SymbolTerm> terms;
};

namespace detail {

// signed-order reindex: spectral array in FFTW layout -> array indexed by
// m + n/2, m in [-n/2, n/2)
inline int signed_pos(int m, int n) { return m + n / 2; }

// true Fourier coefficients of f (basis e^{i omega x}, x in [-L/2, L/2))
inline std::vector<cplx> true_coeffs(const GridField& f) {
    GridField g = f;
    Fft::forward(g);
    const Box& b = f.box;
    std::vector<cplx> out(f.size());
    const double scale = 1.0 / static_cast<double>(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        int idx[3];
        b.unflatten(i, idx);
        int msum = 0;
        std::size_t pos = 0;
        for (int j = 0; j < b.dim; ++j) {
            const int m = b.mode(idx[j]);
            msum += m;
            pos = pos * b.n + static_cast<std::size_t>(signed_pos(m, b.n));
        }
        out[pos] = g[i] * scale * ((msum & 1) ? -1.0 : 1.0);
    }
    return out;
}

inline GridField from_true_coeffs(const Box& b, const std::vector<cplx>& c) {
    GridField g(b);
    const double scale = static_cast<double>(g.size());  // Fft::backward divides by it
    for (std::size_t i = 0; i < g.size(); ++i) {
        int idx[3];
        b.unflatten(i, idx);
        int msum = 0;
        std::size_t pos = 0;
        for (int j = 0; j < b.dim; ++j) {
            const int m = b.mode(idx[j]);
            msum += m;
            pos = pos * b.n + static_cast<std::size_t>(signed_pos(m, b.n));
        }
        g[i] = c[pos] * (((msum & 1) ? -1.0 : 1.0) * scale);
    }
    Fft::backward(g);
    return g;
}

}  // namespace detail

class WeylOperator {
  public:
    WeylOperator(SeparableSymbol symbol, double h, const Box& box)
        : h_(h), box_(box) {
        if (box.dim > 2)
            throw DimensionTooLarge("weyl_quantize supports d in {1,2}");
        const int n = box.n;
        const Box fine(box.dim, box.length, 2 * n);
        for (auto& term : symbol.terms) {
            TermData td;
            // alpha coefficients from the doubled grid: difference modes up
            // to |m| <= n are unaliased for resolved alpha
            GridField alpha(fine);
            alpha.fill([&](const Vec& x) { return cplx{term.fx(x), 0.0}; });
            td.alpha_hat = detail::true_coeffs(alpha);
            // beta on the half-integer sum grid: index s in [-n, n),
            // xi = h * (pi / L) * s per axis
            const int ns = 2 * n;
            if (box.dim == 1) {
                td.beta.resize(ns);
                for (int s = -n; s < n; ++s)
                    td.beta[s + n] = term.fxi(vec1(h * pi * s / box.length));
            } else {
                td.beta.resize(static_cast<std::size_t>(ns) * ns);
                for (int s1 = -n; s1 < n; ++s1)
                    for (int s2 = -n; s2 < n; ++s2)
                        td.beta[(s1 + n) * static_cast<std::size_t>(ns) + (s2 + n)] =
                            term.fxi(vec2(h * pi * s1 / box.length,
                                          h * pi * s2 / box.length));
            }
            terms_.push_back(std::move(td));
        }
    }

    double h() const { return h_; }
    const Box& box() const { return box_; }

    GridField apply(const GridField& f) const {
        if (f.box != box_) throw Error("GridMismatch: Weyl operator built on a different grid");
        std::vector<cplx> c = detail::true_coeffs(f);
        std::vector<cplx> out(c.size(), cplx{0.0, 0.0});
        const int n = box_.n;
        if (box_.dim == 1) {
            for (const auto& td : terms_) {
                // alpha_hat index: difference m in (-n, n) stored at m + n
                for (int k = -n / 2; k < n / 2; ++k) {
                    cplx acc{0.0, 0.0};
                    const std::size_t krow = static_cast<std::size_t>(k + n / 2);
                    for (int l = -n / 2; l < n / 2; ++l) {
                        const cplx a = alpha_at(td, k - l);
                        if (a == cplx{0.0, 0.0}) continue;
                        acc += a * td.beta[k + l + n] * c[l + n / 2];
                    }
                    out[krow] += acc;
                }
            }
        } else {
            const std::size_t ns = static_cast<std::size_t>(2 * n);
            for (const auto& td : terms_) {
                for (int k1 = -n / 2; k1 < n / 2; ++k1)
                    for (int k2 = -n / 2; k2 < n / 2; ++k2) {
                        cplx acc{0.0, 0.0};
                        for (int l1 = -n / 2; l1 < n / 2; ++l1)
                            for (int l2 = -n / 2; l2 < n / 2; ++l2) {
                                const cplx a = alpha_at2(td, k1 - l1, k2 - l2);
                                if (a == cplx{0.0, 0.0}) continue;
                                acc += a *
                                       td.beta[(k1 + l1 + n) * ns + (k2 + l2 + n)] *
                                       c[(l1 + n / 2) * static_cast<std::size_t>(n) +
                                         (l2 + n / 2)];
                            }
                        out[(k1 + n / 2) * static_cast<std::size_t>(n) + (k2 + n / 2)] +=
                            acc;
                    }
            }
        }
        return detail::from_true_coeffs(box_, out);
    }

    // dense matrix in the signed Fourier basis (test oracle; d=1 only)
    std::vector<cplx> dense_matrix() const {
        if (box_.dim != 1) throw DimensionTooLarge("dense_matrix: d=1 only");
        const int n = box_.n;
        std::vector<cplx> mat(static_cast<std::size_t>(n) * n, cplx{0.0, 0.0});
        for (const auto& td : terms_)
            for (int k = -n / 2; k < n / 2; ++k)
                for (int l = -n / 2; l < n / 2; ++l)
                    mat[(k + n / 2) * static_cast<std::size_t>(n) + (l + n / 2)] +=
                        alpha_at(td, k - l) * td.beta[k + l + n];
        return mat;
    }

  private:
    struct TermData {
        std::vector<cplx> alpha_hat;  // doubled-grid coefficients, signed layout
        std::vector<double> beta;     // sum-grid samples
    };

    cplx alpha_at(const TermData& td, int m) const {
        // doubled grid: modes in [-n, n), stored at m + n
        const int n = box_.n;
        if (m < -n || m >= n) return cplx{0.0, 0.0};
        return td.alpha_hat[static_cast<std::size_t>(m + n)];
    }
    cplx alpha_at2(const TermData& td, int m1, int m2) const {
        const int n = box_.n;
        if (m1 < -n || m1 >= n || m2 < -n || m2 >= n) return cplx{0.0, 0.0};
        return td.alpha_hat[static_cast<std::size_t>(m1 + n) * (2 * n) + (m2 + n)];
    }

    double h_;
    Box box_;
    std::vector<TermData> terms_;
};

inline GridField weyl_quantize(const SeparableSymbol& a, double h, const GridField& f) {
    WeylOperator op(a, h, f.box);
    return op.apply(f);
}

// principal symbol of the metric as a separable sum over index pairs
inline SeparableSymbol metric_symbol(const Metric& metric,
                                     std::function<double(const Vec&)> xi_cut = nullptr) {
    SeparableSymbol sym;
    const int d = metric.dim();
    for (int j = 0; j < d; ++j)
        for (int k = j; k < d; ++k) {
            const double c = (j == k) ? 1.0 : 2.0;
            SymbolTerm t;
            t.fx = [metric, j, k, c](const Vec& x) {
                double up[3][3];
                metric.upper(x, up);
                return c * up[j][k];
            };
            t.fxi = [j, k, xi_cut](const Vec& xi) {
                const double v = xi[j] * xi[k];
                return xi_cut ? v * xi_cut(xi) : v;
            };
            sym.terms.push_back(std::move(t));
        }
    return sym;
}

// Frequency-localized operator A'(h) = (chi_3 a)^w(X, hD). For flat metrics
// this is exactly the Fourier multiplier chi_3(h xi) |h xi|^2.
struct LocalizedOperator {
    double h = 1.0;
    Box box;
    bool flat = false;
    std::vector<cplx> multiplier;            // flat path
    std::shared_ptr<WeylOperator> weyl;      // general path

    GridField apply(const GridField& f) const {
        if (flat) {
            GridField g = f;
            apply_multiplier(g, multiplier);
            return g;
        }
        return weyl->apply(f);
    }
};

inline LocalizedOperator localized_operator(const Metric& metric,
                                            const FrequencyCutoffs& cutoffs, double h,
                                            const Box& box) {
    LocalizedOperator op;
    op.h = h;
    op.box = box;
    op.flat = metric.is_flat();
    if (op.flat) {
        op.multiplier = sample_multiplier(box, [&](const Vec& w) {
            const Vec xi = h * w;
            return cplx{cutoffs(3, xi) * norm2(xi), 0.0};
        });
        return op;
    }
    auto cut = [cutoffs](const Vec& xi) { return cutoffs(3, xi); };
    op.weyl = std::make_shared<WeylOperator>(metric_symbol(metric, cut), h, box);
    return op;
}

// chi_j(hD): smooth frequency cutoff at semiclassical scale h
inline GridField frequency_localize(const FrequencyCutoffs& cutoffs, int level, double h,
                                    GridField f) {
    apply_multiplier(f, [&](const Vec& w) { return cplx{cutoffs(level, h * w), 0.0}; });
    return f;
}

// ---------------------------------------------------------------------------
// Heat semigroup e^{t Delta_g} and heat-kernel Littlewood-Paley projections
// ---------------------------------------------------------------------------

enum class HeatEngine { automatic, fourier, crank_nicolson, eigenbasis };

// Dense symmetric eigendecomposition of -Delta_g in L2(dg); cached per
// (metric, box). Backs the metric heat flow in d=1 and the metric-flavored
// Sobolev norms.
struct MetricEigenbasis {
    Eigen::MatrixXd q;       // orthonormal in the symmetrized coordinates
    Eigen::VectorXd lambda;  // eigenvalues of -Delta_g, ascending
    std::vector<double> bhalf, binvhalf;
};

inline const MetricEigenbasis& metric_eigenbasis(const Metric& metric, const Box& box,
                                                 std::size_t max_dim = 4096) {
    static std::unordered_map<std::uint64_t, std::shared_ptr<MetricEigenbasis>> cache;
    static std::mutex mu;
    if (box.size() > max_dim)
        throw DimensionTooLarge("metric eigendecomposition limited to " +
                                std::to_string(max_dim) + " grid points");
    std::uint64_t key = metric.hash() ^ (0x517cc1b727220a95ull * box.n) ^
                        (0x2545f4914f6cdd1dull * box.dim);
    std::uint64_t lb;
    std::memcpy(&lb, &box.length, 8);
    key ^= lb;
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find(key);
        if (it != cache.end()) return *it->second;
    }

    const std::size_t n = box.size();
    const MetricSampling& ms = metric_sampling(metric, box);
    auto basis = std::make_shared<MetricEigenbasis>();
    basis->bhalf.resize(n);
    basis->binvhalf.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        basis->bhalf[i] = std::sqrt(ms.sqrtg[i]);
        basis->binvhalf[i] = 1.0 / basis->bhalf[i];
    }

    // columns of -Delta_g, symmetrized by D = diag(sqrt(sqrt|g|))
    Eigen::MatrixXd s(n, n);
    GridField e(box);
    for (std::size_t j = 0; j < n; ++j) {
        std::fill(e.v.begin(), e.v.end(), cplx{0.0, 0.0});
        e[j] = cplx{1.0, 0.0};
        GridField col = laplace_beltrami(metric, e);
        for (std::size_t i = 0; i < n; ++i)
            s(i, j) = -col[i].real() * basis->bhalf[i] * basis->binvhalf[j];
    }
    s = 0.5 * (s + s.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s);
    basis->q = solver.eigenvectors();
    basis->lambda = solver.eigenvalues();

    std::lock_guard<std::mutex> lock(mu);
    cache[key] = basis;
    return *cache[key];
}

// f(-Delta_g) u through the eigenbasis
inline GridField metric_function_apply(const Metric& metric, const GridField& u,
                                       const std::function<double(double)>& f) {
    const Box& box = u.box;
    const MetricEigenbasis& eb = metric_eigenbasis(metric, box);
    const std::size_t n = box.size();
    Eigen::VectorXd re(n), im(n);
    for (std::size_t i = 0; i < n; ++i) {
        re(i) = u[i].real() * eb.bhalf[i];
        im(i) = u[i].imag() * eb.bhalf[i];
    }
    Eigen::VectorXd cre = eb.q.transpose() * re;
    Eigen::VectorXd cim = eb.q.transpose() * im;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = f(std::max(eb.lambda(static_cast<Eigen::Index>(i)), 0.0));
        cre(i) *= w;
        cim(i) *= w;
    }
    re = eb.q * cre;
    im = eb.q * cim;
    GridField out(box);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = cplx{re(i) * eb.binvhalf[i], im(i) * eb.binvhalf[i]};
    return out;
}

struct HeatOptions {
    HeatEngine engine = HeatEngine::automatic;
    int substeps = 8;       // per application (spec: 8 per dyadic time)
    double cg_tol = 1e-12;
    int cg_max_iter = 400;
};

namespace detail {

// Preconditioned CG for (I - tau Delta_g) u = rhs in the L2(dg) inner
// product; the flat solve is the preconditioner.
inline GridField heat_cn_solve(const Metric& metric, double tau, const GridField& rhs,
                               const GridField& guess, const HeatOptions& opt) {
    const Box& box = rhs.box;
    const MetricSampling& ms = metric_sampling(metric, box);
    auto a_apply = [&](const GridField& u) {
        GridField lap = laplace_beltrami(metric, u);
        GridField out = u;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= tau * lap[i];
        return out;
    };
    auto dg_inner = [&](const GridField& a, const GridField& b) {
        cplx s{0.0, 0.0};
        for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i] * ms.sqrtg[i];
        return s * box.cell_volume();
    };
    auto precond = [&](const GridField& r) {
        GridField z = r;
        apply_multiplier(z, [&](const Vec& k) { return cplx{1.0 / (1.0 + tau * norm2(k)), 0.0}; });
        return z;
    };

    GridField x = guess;
    GridField r = rhs - a_apply(x);
    GridField z = precond(r);
    GridField p = z;
    double rz = dg_inner(r, z).real();
    const double rhs_norm = std::sqrt(std::abs(dg_inner(rhs, rhs).real())) + 1e-300;
    for (int it = 0; it < opt.cg_max_iter; ++it) {
        if (std::sqrt(std::abs(dg_inner(r, r).real())) / rhs_norm < opt.cg_tol) break;
        GridField ap = a_apply(p);
        const double pap = dg_inner(p, ap).real();
        const double alpha = rz / pap;
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = precond(r);
        const double rz_new = dg_inner(r, z).real();
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = z[i] + beta * p[i];
    }
    return x;
}

}  // namespace detail

// e^{t Delta_g} f. Flat metrics use the exact Fourier multiplier; variable
// metrics use the dense eigenbasis when affordable (d=1, small d=2 grids) and
// otherwise Crank-Nicolson with CG solves in L2(dg). The CN path starts with
// two implicit-Euler half-substeps (Rannacher smoothing) so unresolved modes
// are damped rather than reflected.
inline GridField heat_semigroup(const Metric& metric, double t, GridField f,
                                const HeatOptions& opt = {}) {
    if (t < 0.0) throw ConfigError("heat_semigroup: t must be >= 0");
    if (t == 0.0) return f;
    HeatEngine engine = opt.engine;
    if (engine == HeatEngine::automatic) {
        if (metric.is_flat())
            engine = HeatEngine::fourier;
        else if (f.box.size() <= 2048)
            engine = HeatEngine::eigenbasis;
        else
            engine = HeatEngine::crank_nicolson;
    }
    switch (engine) {
        case HeatEngine::fourier: {
            if (!metric.is_flat())
                throw ConfigError("heat_semigroup: fourier engine needs a flat metric");
            apply_multiplier(f, [&](const Vec& k) { return cplx{std::exp(-t * norm2(k)), 0.0}; });
            return f;
        }
        case HeatEngine::eigenbasis:
            return metric_function_apply(metric, f,
                                         [&](double lam) { return std::exp(-t * lam); });
        default: {
            const int k = std::max(2, opt.substeps);
            const double tau = t / k;
            GridField u = std::move(f);
            // Rannacher start: two implicit-Euler half-substeps
            u = detail::heat_cn_solve(metric, 0.5 * tau, u, u, opt);
            u = detail::heat_cn_solve(metric, 0.5 * tau, u, u, opt);
            for (int step = 1; step < k; ++step) {
                GridField lap = laplace_beltrami(metric, u);
                GridField rhs = u;
                for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] += 0.5 * tau * lap[i];
                u = detail::heat_cn_solve(metric, 0.5 * tau, rhs, u, opt);
            }
            return u;
        }
    }
}

enum class LpMode { leq, band };  // P_{<=N} or P_N

// Heat-kernel Littlewood-Paley projections:
//   P_{<=N} = e^{Delta_g / N^2},  P_N = e^{Delta_g / N^2} - e^{4 Delta_g / N^2}
inline GridField heat_lp_project(const Metric& metric, double n_dyadic, const GridField& f,
                                 LpMode mode, const HeatOptions& opt = {}) {
    if (!(n_dyadic > 0.0)) throw ConfigError("heat_lp_project: N must be positive");
    const double t = 1.0 / (n_dyadic * n_dyadic);
    GridField low = heat_semigroup(metric, t, f, opt);
    if (mode == LpMode::leq) return low;
    GridField lower = heat_semigroup(metric, 4.0 * t, f, opt);
    return low - lower;
}

// ---------------------------------------------------------------------------
// Bernstein operator-norm proxy
// ---------------------------------------------------------------------------

struct BernsteinResult {
    double ratio = 0.0;  // max over the bank of |P_{<=N} f|_q / |f|_p
    int argmax = -1;
};

// L^p norm with the Riemannian weight; p = infinity means the max norm.
inline double lebesgue_norm(const GridField& f, double p, const Metric& metric) {
    if (std::isinf(p)) return norm_linf(f);
    const MetricSampling& ms = metric_sampling(metric, f.box);
    return norm_lp(f, p, &ms.sqrtg);
}

// Measures |P_{<=N}|_{L^p -> L^q} on a deterministic bank of test fields.
// The bank probes the N-scale: Gaussian bumps of width ~ 1/N at scattered
// centers plus band-limited noise, all identical across (p, q) pairs.
inline BernsteinResult bernstein_check(const Metric& metric, double n_dyadic,
                                       const Box& box, double p, double q,
                                       int bank_size = 8, std::uint64_t seed = 2024,
                                       const HeatOptions& opt = {}) {
    BernsteinResult res;
    Rng rng(seed);
    for (int b = 0; b < bank_size; ++b) {
        GridField f(box);
        if (b + 2 > bank_size) {
            // band-limited noise probe
            for (auto& z : f.v) z = cplx{rng.normal(), rng.normal()};
            apply_multiplier(f, [&](const Vec& k) {
                return cplx{std::exp(-norm2(k) / sq(2.0 * n_dyadic)), 0.0};
            });
        } else {
            const Vec c = rng.ball(box.dim, 2.0);
            const double w = 0.5 / n_dyadic;
            f.fill([&](const Vec& x) {
                return cplx{std::exp(-norm2(x - c) / (2.0 * w * w)), 0.0};
            });
        }
        GridField pf = heat_lp_project(metric, n_dyadic, f, LpMode::leq, opt);
        const double num = lebesgue_norm(pf, q, metric);
        const double den = lebesgue_norm(f, p, metric);
        if (den > 0.0 && num / den > res.ratio) {
            res.ratio = num / den;
            res.argmax = b;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Sobolev norms
// ---------------------------------------------------------------------------

enum class SobolevFlavor { flat, metric };

// |u|_{H^s}: flat flavor is the Fourier multiplier |xi|^s in L2(dx); metric
// flavor is |(-Delta_g)^{s/2} u|_{L2(dg)} through the dense eigenbasis
// (d <= 2). In d=3 the metric flavor falls back to the exact gradient form,
// available only for s = 1.
inline double sobolev_norm(const Metric& metric, const GridField& f, double s,
                           SobolevFlavor flavor = SobolevFlavor::flat) {
    if (s != 0.0 && s != 0.5 && s != 1.0)
        throw ConfigError("sobolev_norm: s must be 0, 1/2, or 1");
    if (flavor == SobolevFlavor::flat || metric.is_flat()) {
        GridField g = f;
        Fft::forward(g);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i)
            acc += std::pow(norm2(g.box.wavevector(i)), s) * std::norm(g[i]);
        return std::sqrt(acc * f.box.cell_volume() / f.size());
    }

    const bool eig_ok = f.box.dim <= 2 && f.box.size() <= 4096;
    if (!eig_ok) {
        if (s == 1.0) {
            // gradient form: int g^{jk} d_j u d_k conj(u) dg
            const MetricSampling& ms = metric_sampling(metric, f.box);
            auto grad = gradient(f);
            double acc = 0.0;
            const int d = f.box.dim;
            for (std::size_t i = 0; i < f.size(); ++i) {
                double q = 0.0;
                for (int j = 0; j < d; ++j)
                    for (int k = 0; k < d; ++k)
                        q += ms.g_upper[detail::sym6(j, k)][i] *
                             (grad[j][i] * std::conj(grad[k][i])).real();
                acc += q * ms.sqrtg[i];
            }
            return std::sqrt(std::max(acc, 0.0) * f.box.cell_volume());
        }
        throw DimensionTooLarge(
            "sobolev_norm: metric flavor with s < 1 needs an eigendecomposable grid");
    }

    GridField g = metric_function_apply(metric, f,
                                        [&](double lam) { return std::pow(lam, 0.5 * s); });
    const MetricSampling& ms = metric_sampling(metric, f.box);
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += std::norm(g[i]) * ms.sqrtg[i];
    return std::sqrt(acc * f.box.cell_volume());
}

}  // namespace sclens
