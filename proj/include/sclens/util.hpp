#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sclens {

using cplx = std::complex<double>;
inline constexpr double pi = 3.141592653589793238462643383279502884;
inline constexpr cplx iu{0.0, 1.0};

// All module errors derive from this; the CLI maps them to exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NumericalError : Error {
    using Error::Error;
};

// Spatial/momentum vector in d <= 3 dimensions. Unused components stay zero,
// so Euclidean dot products can ignore the runtime dimension.
using Vec = std::array<double, 3>;

inline Vec vec1(double x) { return {x, 0.0, 0.0}; }
inline Vec vec2(double x, double y) { return {x, y, 0.0}; }
inline Vec vec3(double x, double y, double z) { return {x, y, z}; }

inline double dot(const Vec& a, const Vec& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm2(const Vec& a) { return dot(a, a); }
inline double norm(const Vec& a) { return std::sqrt(norm2(a)); }

inline Vec operator+(Vec a, const Vec& b) {
    for (int i = 0; i < 3; ++i) a[i] += b[i];
    return a;
}
inline Vec operator-(Vec a, const Vec& b) {
    for (int i = 0; i < 3; ++i) a[i] -= b[i];
    return a;
}
inline Vec operator*(double s, Vec a) {
    for (int i = 0; i < 3; ++i) a[i] *= s;
    return a;
}

// Japanese bracket <x> = sqrt(1 + |x|^2).
inline double bracket(double r2) { return std::sqrt(1.0 + r2); }
inline double bracket(const Vec& x) { return bracket(norm2(x)); }

// Quintic smoothstep: C^2, s(0)=0, s(1)=1, vanishing first and second
// derivatives at both ends.
inline double smoothstep(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

// 9th-order smootherstep: C^4 at both ends. Used where four derivatives of a
// cutoff enter (Morawetz bi-Laplacian weight).
inline double smootherstep(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    const double t2 = t * t;
    return t2 * t2 * t * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + 70.0 * t))));
}

// Radial profile equal to 1 below r0, 0 above r1, C^2 smoothstep between.
inline double radial_plateau(double r, double r0, double r1) {
    if (r <= r0) return 1.0;
    if (r >= r1) return 0.0;
    return smoothstep((r1 - r) / (r1 - r0));
}

// C^infinity bump in |x| < 1 of the classical exp(-s/(1-s)) form, s = r^2.
// chi(0) = 1, chi == 0 for r >= 1, all derivatives vanish at the edge.
inline double bump(double r2) {
    if (r2 >= 1.0) return 0.0;
    return std::exp(-r2 / (1.0 - r2));
}

// d(bump)/d(r2).
inline double bump_ds(double r2) {
    if (r2 >= 1.0) return 0.0;
    const double om = 1.0 - r2;
    return -bump(r2) / (om * om);
}

// d^2(bump)/d(r2)^2.
inline double bump_dss(double r2) {
    if (r2 >= 1.0) return 0.0;
    const double om = 1.0 - r2;
    return bump(r2) * (1.0 / (om * om * om * om) - 2.0 / (om * om * om));
}

inline double sq(double x) { return x * x; }

}  // namespace sclens
