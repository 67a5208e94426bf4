#pragma once

#include <cstring>
#include <memory>
#include <mutex>
#include <unordered_map>

#include "sclens/fft.hpp"
#include "sclens/grid.hpp"

namespace sclens {

struct NonPositiveDefinite : Error {
    using Error::Error;
};
struct UnsupportedDimension : Error {
    using Error::Error;
};

enum class MetricFamily { flat, conformal_bump, lens, custom_table };

// Sampled metric table for the custom family: g_{jk} at the nodes of a Box,
// symmetric components stored as (11, 12, 13, 22, 23, 33).
struct MetricTable {
    Box box;
    std::vector<std::array<double, 6>> g;  // size box.size()
};

// Riemannian metric g = delta + compactly supported perturbation.
//
// The built-in families are conformal, g_{jk} = e^{2 phi(x)} delta_{jk}:
//   conformal_bump:  phi = eps * chi(|x|^2 / R^2)
//   lens:            g^{jk} = (1 - eps*chi) delta^{jk}, i.e.
//                    phi = -1/2 log(1 - eps*chi)
// with chi the classical C^infinity bump. A positive lens amplitude lowers
// the wave speed inside the bump, so rays passing through it converge and
// generically refocus. Derivatives of the built-ins are analytic; custom
// tables use 4th-order centered differences.
class Metric {
  public:
    Metric() = default;

    static Metric build(MetricFamily family, double eps, double r_supp, int dim) {
        if (dim < 1 || dim > 3) throw UnsupportedDimension("metric dimension must be 1, 2, or 3");
        if (!(r_supp > 0.0)) throw ConfigError("metric support radius must be positive");
        Metric m;
        m.family_ = family;
        m.dim_ = dim;
        m.eps_ = (family == MetricFamily::flat) ? 0.0 : eps;
        m.r_supp_ = r_supp;
        if (family == MetricFamily::lens && eps >= 1.0)
            throw NonPositiveDefinite("lens amplitude must be < 1 for positive definiteness");
        if (family == MetricFamily::custom_table)
            throw ConfigError("custom tables are built via Metric::from_table");
        m.check_positive_definite();
        m.hash_ = m.compute_hash();
        return m;
    }

    static Metric from_table(MetricTable table, double r_supp) {
        Metric m;
        m.family_ = MetricFamily::custom_table;
        m.dim_ = table.box.dim;
        m.eps_ = 0.0;
        m.r_supp_ = r_supp;
        m.table_ = std::make_shared<MetricTable>(std::move(table));
        m.build_table_derivatives();
        m.check_positive_definite();
        m.hash_ = m.compute_hash();
        return m;
    }

    int dim() const { return dim_; }
    double eps() const { return eps_; }
    double support_radius() const { return r_supp_; }
    MetricFamily family() const { return family_; }
    bool is_flat() const {
        if (family_ == MetricFamily::custom_table) return false;
        return family_ == MetricFamily::flat || eps_ == 0.0;
    }
    std::uint64_t hash() const { return hash_; }

    // g_{jk}(x)
    void lower(const Vec& x, double out[3][3]) const {
        if (family_ == MetricFamily::custom_table) {
            table_lower(x, out);
            return;
        }
        const double e2p = std::exp(2.0 * phi(x));
        diag(out, e2p);
    }

    // g^{jk}(x)
    void upper(const Vec& x, double out[3][3]) const {
        if (family_ == MetricFamily::custom_table) {
            double lo[3][3];
            table_lower(x, lo);
            invert(lo, out);
            return;
        }
        const double e2m = std::exp(-2.0 * phi(x));
        diag(out, e2m);
    }

    // d_l g^{jk}(x) -> out[l][j][k]
    void dupper(const Vec& x, double out[3][3][3]) const {
        if (family_ == MetricFamily::custom_table) {
            table_dupper(x, out);
            return;
        }
        Vec dp = dphi(x);
        const double e2m = std::exp(-2.0 * phi(x));
        for (int l = 0; l < 3; ++l)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k)
                    out[l][j][k] = (j == k && j < dim_) ? -2.0 * dp[l] * e2m : 0.0;
    }

    double sqrt_det(const Vec& x) const {
        if (family_ == MetricFamily::custom_table) {
            double lo[3][3];
            table_lower(x, lo);
            return std::sqrt(det(lo));
        }
        return std::exp(dim_ * phi(x));
    }

    // rho = |g|^{1/4}, the square root of the Riemannian density
    double rho(const Vec& x) const { return std::sqrt(sqrt_det(x)); }

    // principal symbol a(x, xi) = g^{jk} xi_j xi_k
    double symbol(const Vec& x, const Vec& xi) const {
        double up[3][3];
        upper(x, up);
        double a = 0.0;
        for (int j = 0; j < dim_; ++j)
            for (int k = 0; k < dim_; ++k) a += up[j][k] * xi[j] * xi[k];
        return a;
    }

    // da/dxi = 2 g^{jk} xi_k
    Vec symbol_dxi(const Vec& x, const Vec& xi) const {
        double up[3][3];
        upper(x, up);
        Vec out{0.0, 0.0, 0.0};
        for (int j = 0; j < dim_; ++j)
            for (int k = 0; k < dim_; ++k) out[j] += 2.0 * up[j][k] * xi[k];
        return out;
    }

    // da/dx = (d_l g^{jk}) xi_j xi_k
    Vec symbol_dx(const Vec& x, const Vec& xi) const {
        if (is_flat() || norm2(x) >= r_supp_ * r_supp_) return Vec{0.0, 0.0, 0.0};
        double du[3][3][3];
        dupper(x, du);
        Vec out{0.0, 0.0, 0.0};
        for (int l = 0; l < dim_; ++l)
            for (int j = 0; j < dim_; ++j)
                for (int k = 0; k < dim_; ++k) out[l] += du[l][j][k] * xi[j] * xi[k];
        return out;
    }

    // Gamma^m_{jk}(x) -> out[m][j][k]; symmetric in (j,k), zero outside the
    // support: Gamma^m_{jk} = 1/2 g^{ml} (d_j g_{lk} + d_k g_{lj} - d_l g_{jk}).
    void christoffel(const Vec& x, double out[3][3][3]) const {
        for (int m = 0; m < 3; ++m)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) out[m][j][k] = 0.0;
        if (is_flat() || norm2(x) >= r_supp_ * r_supp_) return;

        if (family_ != MetricFamily::custom_table) {
            // conformal shortcut: Gamma^m_{jk} = d^m_j phi_k + d^m_k phi_j
            //                                    - delta_{jk} phi_m
            Vec dp = dphi(x);
            for (int m = 0; m < dim_; ++m)
                for (int j = 0; j < dim_; ++j)
                    for (int k = 0; k < dim_; ++k) {
                        double v = 0.0;
                        if (m == j) v += dp[k];
                        if (m == k) v += dp[j];
                        if (j == k) v -= dp[m];
                        out[m][j][k] = v;
                    }
            return;
        }

        double up[3][3], dlo[3][3][3];
        upper(x, up);
        table_dlower(x, dlo);
        for (int m = 0; m < dim_; ++m)
            for (int j = 0; j < dim_; ++j)
                for (int k = 0; k < dim_; ++k) {
                    double s = 0.0;
                    for (int l = 0; l < dim_; ++l)
                        s += up[m][l] * (dlo[j][l][k] + dlo[k][l][j] - dlo[l][j][k]);
                    out[m][j][k] = 0.5 * s;
                }
    }

    // conformal exponent phi and its gradient (built-in families)
    double phi(const Vec& x) const {
        if (is_flat()) return 0.0;
        const double s = norm2(x) / (r_supp_ * r_supp_);
        const double b = bump(s);
        if (family_ == MetricFamily::conformal_bump) return eps_ * b;
        return -0.5 * std::log(1.0 - eps_ * b);  // lens
    }

    Vec dphi(const Vec& x) const {
        Vec out{0.0, 0.0, 0.0};
        if (is_flat()) return out;
        const double R2 = r_supp_ * r_supp_;
        const double s = norm2(x) / R2;
        if (s >= 1.0) return out;
        const double bs = bump_ds(s);
        double ps;  // d phi / ds
        if (family_ == MetricFamily::conformal_bump) {
            ps = eps_ * bs;
        } else {
            ps = 0.5 * eps_ * bs / (1.0 - eps_ * bump(s));
        }
        for (int j = 0; j < dim_; ++j) out[j] = ps * 2.0 * x[j] / R2;
        return out;
    }

    // Hessian of phi (built-in families), used by analytic weight formulas
    void d2phi(const Vec& x, double out[3][3]) const {
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) out[j][k] = 0.0;
        if (is_flat()) return;
        const double R2 = r_supp_ * r_supp_;
        const double s = norm2(x) / R2;
        if (s >= 1.0) return;
        const double b = bump(s), bs = bump_ds(s), bss = bump_dss(s);
        double ps, pss;
        if (family_ == MetricFamily::conformal_bump) {
            ps = eps_ * bs;
            pss = eps_ * bss;
        } else {
            const double q = 1.0 - eps_ * b;
            ps = 0.5 * eps_ * bs / q;
            pss = 0.5 * eps_ * bss / q + 0.5 * eps_ * eps_ * bs * bs / (q * q);
        }
        for (int j = 0; j < dim_; ++j)
            for (int k = 0; k < dim_; ++k) {
                out[j][k] = pss * (2.0 * x[j] / R2) * (2.0 * x[k] / R2);
                if (j == k) out[j][k] += ps * 2.0 / R2;
            }
    }

    // Smallest eigenvalue of g_{jk}(x) over a sampling lattice.
    double min_eigenvalue(const Box& box) const {
        double best = 1e300;
        for (std::size_t i = 0; i < box.size(); ++i) {
            Vec x = box.point(i);
            double lo[3][3];
            lower(x, lo);
            best = std::min(best, min_eig_sym(lo, dim_));
        }
        return best;
    }

  private:
    MetricFamily family_ = MetricFamily::flat;
    int dim_ = 1;
    double eps_ = 0.0;
    double r_supp_ = 1.0;
    std::shared_ptr<MetricTable> table_;
    std::shared_ptr<std::vector<std::array<double, 18>>> table_dg_;  // d_l g_{jk}, 6 per axis
    std::uint64_t hash_ = 0;

    void diag(double out[3][3], double v) const {
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) out[j][k] = 0.0;
        for (int j = 0; j < dim_; ++j) out[j][j] = v;
        for (int j = dim_; j < 3; ++j) out[j][j] = 1.0;
    }

    double det(const double m[3][3]) const {
        if (dim_ == 1) return m[0][0];
        if (dim_ == 2) return m[0][0] * m[1][1] - m[0][1] * m[1][0];
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
               m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    }

    void invert(const double m[3][3], double out[3][3]) const {
        diag(out, 1.0);
        const double d = det(m);
        if (dim_ == 1) {
            out[0][0] = 1.0 / m[0][0];
        } else if (dim_ == 2) {
            out[0][0] = m[1][1] / d;
            out[1][1] = m[0][0] / d;
            out[0][1] = -m[0][1] / d;
            out[1][0] = -m[1][0] / d;
        } else {
            out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / d;
            out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / d;
            out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / d;
            out[1][0] = out[0][1];
            out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / d;
            out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / d;
            out[2][0] = out[0][2];
            out[2][1] = out[1][2];
            out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / d;
        }
    }

    static double min_eig_sym(const double m[3][3], int d) {
        if (d == 1) return m[0][0];
        if (d == 2) {
            const double tr = m[0][0] + m[1][1];
            const double dd = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - dd));
            return tr / 2.0 - disc;
        }
        // d == 3: bisection on the characteristic polynomial is overkill;
        // use Gershgorin-refined power iteration on (cI - m).
        double c = 0.0;
        for (int j = 0; j < 3; ++j) {
            double row = 0.0;
            for (int k = 0; k < 3; ++k) row += std::abs(m[j][k]);
            c = std::max(c, row);
        }
        double v[3] = {1.0, 0.7, 0.3};
        double lam = 0.0;
        for (int it = 0; it < 200; ++it) {
            double w[3] = {0, 0, 0};
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) w[j] += (c * (j == k ? 1.0 : 0.0) - m[j][k]) * v[k];
            double nn = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
            if (nn == 0.0) break;
            for (int j = 0; j < 3; ++j) v[j] = w[j] / nn;
            lam = nn;
        }
        return c - lam;
    }

    void check_positive_definite() const {
        // sample a lattice over the support cube plus margin
        const int ns = 17;
        const double ext = 1.2 * r_supp_;
        int total = 1;
        for (int j = 0; j < dim_; ++j) total *= ns;
        for (int t = 0; t < total; ++t) {
            int rem = t;
            Vec x{0.0, 0.0, 0.0};
            for (int j = 0; j < dim_; ++j) {
                x[j] = -ext + 2.0 * ext * (rem % ns) / (ns - 1);
                rem /= ns;
            }
            double lo[3][3];
            lower(x, lo);
            if (min_eig_sym(lo, dim_) <= 0.0)
                throw NonPositiveDefinite("sampled metric is not positive definite");
        }
    }

    std::uint64_t compute_hash() const {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&h](std::uint64_t v) {
            h ^= v;
            h *= 1099511628211ull;
        };
        mix(static_cast<std::uint64_t>(family_));
        mix(static_cast<std::uint64_t>(dim_));
        std::uint64_t bits;
        std::memcpy(&bits, &eps_, 8);
        mix(bits);
        std::memcpy(&bits, &r_supp_, 8);
        mix(bits);
        if (table_)
            for (const auto& row : table_->g)
                for (double v : row) {
                    std::memcpy(&bits, &v, 8);
                    mix(bits);
                }
        return h;
    }

    // ---- custom-table machinery ----

    static int sym_index(int j, int k) {
        // (11,12,13,22,23,33) -> 0..5
        if (j > k) std::swap(j, k);
        static const int lut[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
        return lut[j][k];
    }

    void build_table_derivatives() {
        const Box& b = table_->box;
        auto dg = std::make_shared<std::vector<std::array<double, 18>>>(b.size());
        const double inv12h = 1.0 / (12.0 * b.spacing());
        for (std::size_t i = 0; i < b.size(); ++i) {
            int idx[3];
            b.unflatten(i, idx);
            for (int axis = 0; axis < dim_; ++axis) {
                auto shifted = [&](int off) -> const std::array<double, 6>& {
                    int jdx[3] = {idx[0], idx[1], idx[2]};
                    jdx[axis] = ((jdx[axis] + off) % b.n + b.n) % b.n;
                    return table_->g[b.flatten(jdx)];
                };
                const auto& m2 = shifted(-2);
                const auto& m1 = shifted(-1);
                const auto& p1 = shifted(1);
                const auto& p2 = shifted(2);
                for (int c = 0; c < 6; ++c)
                    (*dg)[i][axis * 6 + c] =
                        (m2[c] - 8.0 * m1[c] + 8.0 * p1[c] - p2[c]) * inv12h;
            }
        }
        table_dg_ = std::move(dg);
    }

    // multilinear interpolation helpers
    template <typename F>
    double interp(const Vec& x, F&& value_at_node) const {
        const Box& b = table_->box;
        double w[3][2];
        int i0[3] = {0, 0, 0};
        for (int j = 0; j < dim_; ++j) {
            double u = (x[j] + 0.5 * b.length) / b.spacing();
            double fl = std::floor(u);
            i0[j] = static_cast<int>(fl);
            w[j][1] = u - fl;
            w[j][0] = 1.0 - w[j][1];
        }
        double acc = 0.0;
        const int corners = 1 << dim_;
        for (int c = 0; c < corners; ++c) {
            int idx[3] = {0, 0, 0};
            double ww = 1.0;
            for (int j = 0; j < dim_; ++j) {
                const int bit = (c >> j) & 1;
                idx[j] = ((i0[j] + bit) % b.n + b.n) % b.n;
                ww *= w[j][bit];
            }
            acc += ww * value_at_node(b.flatten(idx));
        }
        return acc;
    }

    void table_lower(const Vec& x, double out[3][3]) const {
        diag(out, 1.0);
        for (int j = 0; j < dim_; ++j)
            for (int k = j; k < dim_; ++k) {
                const int c = sym_index(j, k);
                const double v = interp(x, [&](std::size_t i) { return table_->g[i][c]; });
                out[j][k] = out[k][j] = v;
            }
    }

    void table_dlower(const Vec& x, double out[3][3][3]) const {
        for (int l = 0; l < 3; ++l)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) out[l][j][k] = 0.0;
        for (int l = 0; l < dim_; ++l)
            for (int j = 0; j < dim_; ++j)
                for (int k = j; k < dim_; ++k) {
                    const int c = l * 6 + sym_index(j, k);
                    const double v =
                        interp(x, [&](std::size_t i) { return (*table_dg_)[i][c]; });
                    out[l][j][k] = out[l][k][j] = v;
                }
    }

    void table_dupper(const Vec& x, double out[3][3][3]) const {
        // d g^{-1} = -g^{-1} (d g) g^{-1}
        double lo[3][3], up[3][3], dlo[3][3][3];
        table_lower(x, lo);
        invert(lo, up);
        table_dlower(x, dlo);
        for (int l = 0; l < 3; ++l)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) out[l][j][k] = 0.0;
        for (int l = 0; l < dim_; ++l)
            for (int j = 0; j < dim_; ++j)
                for (int k = 0; k < dim_; ++k) {
                    double s = 0.0;
                    for (int a = 0; a < dim_; ++a)
                        for (int b2 = 0; b2 < dim_; ++b2)
                            s += up[j][a] * dlo[l][a][b2] * up[b2][k];
                    out[l][j][k] = -s;
                }
    }
};

// Grid samples of metric quantities reused by every field operation; cached
// per (metric, box). Immutable after construction.
struct MetricSampling {
    Box box;
    std::vector<double> sqrtg;      // sqrt|g|
    std::vector<double> inv_sqrtg;  // 1/sqrt|g|
    std::vector<double> rho;        // |g|^{1/4}
    std::vector<double> inv_rho;
    // W^{jk} = sqrt|g| g^{jk} and plain g^{jk}, symmetric storage
    std::array<std::vector<double>, 6> w_upper;
    std::array<std::vector<double>, 6> g_upper;
    bool flat = true;
};

inline const MetricSampling& metric_sampling(const Metric& metric, const Box& box) {
    static std::unordered_map<std::uint64_t, std::shared_ptr<MetricSampling>> cache;
    static std::mutex mu;
    std::uint64_t key = metric.hash();
    key ^= 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(box.n) * 31 +
                                    static_cast<std::uint64_t>(box.dim));
    std::uint64_t lb;
    std::memcpy(&lb, &box.length, 8);
    key ^= lb;

    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end() && it->second->box == box) return *it->second;

    auto s = std::make_shared<MetricSampling>();
    s->box = box;
    s->flat = metric.is_flat();
    const std::size_t n = box.size();
    s->sqrtg.resize(n);
    s->inv_sqrtg.resize(n);
    s->rho.resize(n);
    s->inv_rho.resize(n);
    const int d = box.dim;
    for (int c = 0; c < 6; ++c) {
        s->w_upper[c].assign(n, 0.0);
        s->g_upper[c].assign(n, 0.0);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const Vec x = box.point(i);
        const double sg = metric.sqrt_det(x);
        s->sqrtg[i] = sg;
        s->inv_sqrtg[i] = 1.0 / sg;
        s->rho[i] = std::sqrt(sg);
        s->inv_rho[i] = 1.0 / s->rho[i];
        double up[3][3];
        metric.upper(x, up);
        for (int j = 0; j < d; ++j)
            for (int k = j; k < d; ++k) {
                const int c = (j == 0 && k == 0)   ? 0
                              : (j == 0 && k == 1) ? 1
                              : (j == 0 && k == 2) ? 2
                              : (j == 1 && k == 1) ? 3
                              : (j == 1 && k == 2) ? 4
                                                   : 5;
                s->g_upper[c][i] = up[j][k];
                s->w_upper[c][i] = sg * up[j][k];
            }
    }
    cache[key] = s;
    return *cache[key];
}

namespace detail {
inline int sym6(int j, int k) {
    if (j > k) std::swap(j, k);
    static const int lut[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
    return lut[j][k];
}
}  // namespace detail

// Laplace-Beltrami operator on a grid field:
//   Delta_g u = |g|^{-1/2} d_j ( |g|^{1/2} g^{jk} d_k u )
// with spectral derivatives and pointwise tensor contraction.
inline GridField laplace_beltrami(const Metric& metric, const GridField& u) {
    const Box& box = u.box;
    if (metric.dim() != box.dim)
        throw Error("GridMismatch: metric and field dimensions differ");
    const int d = box.dim;

    if (metric.is_flat()) {
        GridField out = u;
        apply_multiplier(out, [](const Vec& k) { return cplx{-norm2(k), 0.0}; });
        return out;
    }

    const MetricSampling& ms = metric_sampling(metric, box);
    std::vector<GridField> grad = gradient(u);

    // w^j = W^{jk} d_k u, then accumulate d_j w^j in spectral space
    GridField acc(box);
    std::vector<cplx> spec(box.size(), cplx{0.0, 0.0});
    for (int j = 0; j < d; ++j) {
        GridField wj(box);
        for (std::size_t i = 0; i < wj.size(); ++i) {
            cplx s{0.0, 0.0};
            for (int k = 0; k < d; ++k) s += ms.w_upper[detail::sym6(j, k)][i] * grad[k][i];
            wj[i] = s;
        }
        Fft::forward(wj);
        for (std::size_t i = 0; i < wj.size(); ++i) {
            int idx[3];
            box.unflatten(i, idx);
            const int m = box.mode(idx[j]);
            const double kj = (m == -box.n / 2) ? 0.0 : 2.0 * pi * m / box.length;
            spec[i] += iu * kj * wj[i];
        }
    }
    acc.v = std::move(spec);
    Fft::backward(acc);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] *= ms.inv_sqrtg[i];
    return acc;
}

// Divergence-form operator A = rho (-Delta_g) rho^{-1} = -d_j g^{jk} d_k + V,
// self-adjoint on L^2(dx). V = rho * (-Delta_g)(rho^{-1}) is compactly
// supported (up to spectral ripple).
struct ConjugatedOperator {
    Metric metric;
    Box box;
    std::vector<double> potential;  // V on the grid

    GridField apply(const GridField& u) const {
        if (u.box != box) throw Error("GridMismatch: operator built on a different grid");
        const int d = box.dim;
        const MetricSampling& ms = metric_sampling(metric, box);
        std::vector<GridField> grad = gradient(u);
        GridField acc(box);
        std::vector<cplx> spec(box.size(), cplx{0.0, 0.0});
        for (int j = 0; j < d; ++j) {
            GridField wj(box);
            for (std::size_t i = 0; i < wj.size(); ++i) {
                cplx s{0.0, 0.0};
                for (int k = 0; k < d; ++k)
                    s += ms.g_upper[detail::sym6(j, k)][i] * grad[k][i];
                wj[i] = s;
            }
            Fft::forward(wj);
            for (std::size_t i = 0; i < wj.size(); ++i) {
                int idx[3];
                box.unflatten(i, idx);
                const int m = box.mode(idx[j]);
                const double kj = (m == -box.n / 2) ? 0.0 : 2.0 * pi * m / box.length;
                spec[i] += iu * kj * wj[i];
            }
        }
        acc.v = std::move(spec);
        Fft::backward(acc);
        for (std::size_t i = 0; i < acc.size(); ++i)
            acc[i] = -acc[i] + potential[i] * u[i];
        return acc;
    }
};

inline ConjugatedOperator conjugated_operator(const Metric& metric, const Box& box) {
    ConjugatedOperator op;
    op.metric = metric;
    op.box = box;
    op.potential.assign(box.size(), 0.0);
    if (metric.is_flat()) return op;

    if (metric.family() == MetricFamily::custom_table) {
        // no analytic derivatives: V = rho * (-Delta_g)(rho^{-1}) spectrally
        const MetricSampling& ms = metric_sampling(metric, box);
        GridField rinv(box);
        for (std::size_t i = 0; i < rinv.size(); ++i) rinv[i] = ms.inv_rho[i];
        GridField lap = laplace_beltrami(metric, rinv);
        for (std::size_t i = 0; i < lap.size(); ++i)
            op.potential[i] = -ms.rho[i] * lap[i].real();
        return op;
    }

    // Conformal families g = e^{2 phi} delta: with rho = e^{d phi / 2},
    //   V = rho (-Delta_g) rho^{-1}
    //     = e^{-2 phi} [ (d/2) Lap(phi) + (d^2/4 - d) |grad phi|^2 ],
    // evaluated from the analytic derivatives of phi.
    const int d = box.dim;
    for (std::size_t i = 0; i < box.size(); ++i) {
        const Vec x = box.point(i);
        const Vec dp = metric.dphi(x);
        double h2[3][3];
        metric.d2phi(x, h2);
        double lap_phi = 0.0;
        for (int j = 0; j < d; ++j) lap_phi += h2[j][j];
        op.potential[i] = std::exp(-2.0 * metric.phi(x)) *
                          (0.5 * d * lap_phi + (0.25 * d * d - d) * norm2(dp));
    }
    return op;
}

}  // namespace sclens
