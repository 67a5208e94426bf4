#pragma once

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

#include "sclens/grid.hpp"

namespace sclens {

// Thin FFTW wrapper. Plans are created once per (dim, n, sign) with
// FFTW_ESTIMATE (planning must stay deterministic for reproducible runs) and
// reused through fftw_execute_dft, which is thread-safe.
class Fft {
  public:
    static void forward(GridField& f) { run(f, FFTW_FORWARD); }

    static void backward(GridField& f) {
        run(f, FFTW_BACKWARD);
        const double s = 1.0 / static_cast<double>(f.size());
        for (auto& z : f.v) z *= s;
    }

  private:
    static void run(GridField& f, int sign) {
        fftw_plan plan = get_plan(f.box, sign);
        auto* data = reinterpret_cast<fftw_complex*>(f.v.data());
        fftw_execute_dft(plan, data, data);
    }

    static fftw_plan get_plan(const Box& box, int sign) {
        static std::map<std::tuple<int, int, int>, fftw_plan> cache;
        static std::mutex mu;
        std::lock_guard<std::mutex> lock(mu);
        auto key = std::make_tuple(box.dim, box.n, sign);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;

        std::vector<cplx> scratch(box.size());
        auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
        int dims[3] = {box.n, box.n, box.n};
        fftw_plan plan = fftw_plan_dft(box.dim, dims, buf, buf, sign,
                                       FFTW_ESTIMATE | FFTW_UNALIGNED);
        if (!plan) throw NumericalError("FFTW plan creation failed");
        cache[key] = plan;
        return plan;
    }
};

// f <- IFFT( m(k) * FFT(f) ) with m evaluated on the angular-frequency grid.
inline void apply_multiplier(GridField& f, const std::function<cplx(const Vec&)>& m) {
    Fft::forward(f);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] *= m(f.box.wavevector(i));
    Fft::backward(f);
}

// Same but with precomputed multiplier samples (index-aligned with the grid).
inline void apply_multiplier(GridField& f, const std::vector<cplx>& m) {
    Fft::forward(f);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] *= m[i];
    Fft::backward(f);
}

inline std::vector<cplx> sample_multiplier(const Box& box,
                                           const std::function<cplx(const Vec&)>& m) {
    std::vector<cplx> out(box.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = m(box.wavevector(i));
    return out;
}

// Spectral partial derivative d/dx_axis. The Nyquist mode is zeroed so that
// derivatives of real fields stay real and the operator is skew-adjoint on
// the grid.
inline GridField partial(const GridField& f, int axis) {
    GridField g = f;
    Fft::forward(g);
    const Box& box = g.box;
    for (std::size_t i = 0; i < g.size(); ++i) {
        int idx[3];
        box.unflatten(i, idx);
        const int m = box.mode(idx[axis]);
        const double k = (m == -box.n / 2) ? 0.0 : 2.0 * pi * m / box.length;
        g[i] *= iu * k;
    }
    Fft::backward(g);
    return g;
}

// All first derivatives with a single forward transform.
inline std::vector<GridField> gradient(const GridField& f) {
    GridField fh = f;
    Fft::forward(fh);
    std::vector<GridField> out;
    out.reserve(f.box.dim);
    for (int axis = 0; axis < f.box.dim; ++axis) {
        GridField g = fh;
        const Box& box = g.box;
        for (std::size_t i = 0; i < g.size(); ++i) {
            int idx[3];
            box.unflatten(i, idx);
            const int m = box.mode(idx[axis]);
            const double k = (m == -box.n / 2) ? 0.0 : 2.0 * pi * m / box.length;
            g[i] *= iu * k;
        }
        Fft::backward(g);
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace sclens
