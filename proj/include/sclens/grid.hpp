#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "sclens/util.hpp"

namespace sclens {

// Periodic box [-L/2, L/2)^d sampled with n points per axis (n a power of 2).
struct Box {
    int dim = 1;
    double length = 16.0;
    int n = 256;

    Box() = default;
    Box(int d, double L, int N) : dim(d), length(L), n(N) {
        if (d < 1 || d > 3) throw ConfigError("Box: dimension must be 1, 2, or 3");
        if (N < 2 || (N & (N - 1)) != 0) throw ConfigError("Box: n must be a power of two");
        if (!(L > 0.0)) throw ConfigError("Box: length must be positive");
    }

    bool operator==(const Box& o) const {
        return dim == o.dim && length == o.length && n == o.n;
    }
    bool operator!=(const Box& o) const { return !(*this == o); }

    std::size_t size() const {
        std::size_t s = 1;
        for (int j = 0; j < dim; ++j) s *= static_cast<std::size_t>(n);
        return s;
    }
    double spacing() const { return length / n; }
    double cell_volume() const {
        double v = 1.0;
        for (int j = 0; j < dim; ++j) v *= spacing();
        return v;
    }

    double coord(int i) const { return -0.5 * length + i * spacing(); }

    // signed integer mode for axis index i in [0, n)
    int mode(int i) const { return (i < n / 2) ? i : i - n; }
    // angular frequency of axis index i
    double freq(int i) const { return 2.0 * pi * mode(i) / length; }

    void unflatten(std::size_t flat, int (&idx)[3]) const {
        idx[0] = idx[1] = idx[2] = 0;
        for (int j = dim - 1; j >= 0; --j) {
            idx[j] = static_cast<int>(flat % n);
            flat /= n;
        }
    }
    std::size_t flatten(const int (&idx)[3]) const {
        std::size_t f = 0;
        for (int j = 0; j < dim; ++j) f = f * n + static_cast<std::size_t>(idx[j]);
        return f;
    }

    Vec point(std::size_t flat) const {
        int idx[3];
        unflatten(flat, idx);
        Vec x{0.0, 0.0, 0.0};
        for (int j = 0; j < dim; ++j) x[j] = coord(idx[j]);
        return x;
    }

    Vec wavevector(std::size_t flat) const {
        int idx[3];
        unflatten(flat, idx);
        Vec k{0.0, 0.0, 0.0};
        for (int j = 0; j < dim; ++j) k[j] = freq(idx[j]);
        return k;
    }

    // nearest grid index for coordinate x (wrapped)
    int index_of(double x) const {
        double u = (x + 0.5 * length) / spacing();
        long i = std::lround(u);
        long m = i % n;
        if (m < 0) m += n;
        return static_cast<int>(m);
    }
};

// Complex scalar field sampled on a Box; the carrier of every PDE state.
class GridField {
  public:
    GridField() = default;
    explicit GridField(const Box& b) : box(b), v(b.size(), cplx{0.0, 0.0}) {}

    Box box;
    std::vector<cplx> v;

    std::size_t size() const { return v.size(); }
    cplx& operator[](std::size_t i) { return v[i]; }
    const cplx& operator[](std::size_t i) const { return v[i]; }

    GridField& operator+=(const GridField& o) {
        require_same_grid(o);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
        return *this;
    }
    GridField& operator-=(const GridField& o) {
        require_same_grid(o);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= o.v[i];
        return *this;
    }
    GridField& operator*=(cplx s) {
        for (auto& z : v) z *= s;
        return *this;
    }

    void require_same_grid(const GridField& o) const {
        if (box != o.box) throw Error("GridMismatch: fields live on different grids");
    }

    void fill(const std::function<cplx(const Vec&)>& f) {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(box.point(i));
    }

  private:
};

inline GridField operator+(GridField a, const GridField& b) { return a += b; }
inline GridField operator-(GridField a, const GridField& b) { return a -= b; }
inline GridField operator*(cplx s, GridField a) { return a *= s; }

// L^2(dx) inner product (Riemann sum)
inline cplx inner(const GridField& a, const GridField& b) {
    a.require_same_grid(b);
    cplx s{0.0, 0.0};
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return s * a.box.cell_volume();
}

inline double norm_l2(const GridField& f) {
    double s = 0.0;
    for (const auto& z : f.v) s += std::norm(z);
    return std::sqrt(s * f.box.cell_volume());
}

// L^p(dx) norm; w == nullptr means Lebesgue measure, otherwise the Riemann
// sum carries the weight samples (e.g. sqrt|g| for dg).
inline double norm_lp(const GridField& f, double p, const std::vector<double>* w = nullptr) {
    if (p <= 0.0) throw ConfigError("norm_lp: p must be positive");
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        double m = std::abs(f[i]);
        double t = std::pow(m, p);
        if (w) t *= (*w)[i];
        s += t;
    }
    return std::pow(s * f.box.cell_volume(), 1.0 / p);
}

inline double norm_linf(const GridField& f) {
    double m = 0.0;
    for (const auto& z : f.v) m = std::max(m, std::abs(z));
    return m;
}

// Fraction of |f|^2 mass in the outer shell |x|_inf > guard * L/2; the
// boundary-contamination guard every PDE experiment records.
inline double tail_mass_fraction(const GridField& f, double guard = 0.8) {
    double tot = 0.0, tail = 0.0;
    const double edge = guard * 0.5 * f.box.length;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double m = std::norm(f[i]);
        tot += m;
        Vec x = f.box.point(i);
        double xinf = 0.0;
        for (int j = 0; j < f.box.dim; ++j) xinf = std::max(xinf, std::abs(x[j]));
        if (xinf > edge) tail += m;
    }
    return tot > 0.0 ? tail / tot : 0.0;
}

}  // namespace sclens
