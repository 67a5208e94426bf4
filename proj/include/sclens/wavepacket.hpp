#pragma once

#include "sclens/errors.hpp"
#include "sclens/geodesic.hpp"
#include "sclens/spectral.hpp"

namespace sclens {

// Gaussian coherent state of width sqrt(h) at phase-space point (x0, xi0).
struct Wavepacket {
    Vec x0{0.0, 0.0, 0.0};
    Vec xi0{0.0, 0.0, 0.0};
    double h = 0.1;
};

// Unit-normalized packet
//   psi(y) = (pi h)^{-d/4} e^{i xi0 (y - x0)/h} e^{-(y - x0)^2 / (2h)}.
// The FBI transform below carries the extra (2 pi h)^{-d/2} of the paper's
// normalization so that T_h is an isometry with plain dx dxi measure.
inline GridField synthesize_wavepacket(const Wavepacket& wp, const Box& box) {
    if (wp.h <= 0.0) throw ConfigError("wavepacket: h must be positive");
    if (std::sqrt(wp.h) < 4.0 * box.spacing())
        throw Unresolvable("wavepacket width sqrt(h) below 4 grid spacings");
    for (int j = 0; j < box.dim; ++j)
        if (std::abs(wp.x0[j]) >= 0.5 * box.length)
            throw ConfigError("wavepacket center outside the box");
    GridField f(box);
    const double amp = std::pow(pi * wp.h, -0.25 * box.dim);
    f.fill([&](const Vec& y) {
        const Vec r = y - wp.x0;
        return amp * std::exp(cplx{-norm2(r) / (2.0 * wp.h), dot(wp.xi0, r) / wp.h});
    });
    return f;
}

// Phase-space sampling grid for FBI tables. Spatial nodes are a stride
// subset of the PDE grid (no interpolation); momentum nodes are symmetric
// about zero. Spacings must resolve the sqrt(h) phase-space scale.
struct PhaseGrid {
    int dim = 1;
    int stride = 1;           // spatial stride on the PDE grid
    std::vector<double> x;    // per-axis spatial nodes
    std::vector<double> xi;   // per-axis momentum nodes
    double dx = 0.0, dxi = 0.0;

    std::size_t nx() const { return x.size(); }
    std::size_t nxi() const { return xi.size(); }
    std::size_t x_cells() const {
        std::size_t s = 1;
        for (int j = 0; j < dim; ++j) s *= nx();
        return s;
    }
    std::size_t xi_cells() const {
        std::size_t s = 1;
        for (int j = 0; j < dim; ++j) s *= nxi();
        return s;
    }
};

// The resolvability floor is sqrt(h)/2; the default grid is four times
// finer. Plancherel sums subsample |T|^2, whose spatial band is twice the
// field's, so the default resolution is what the 1e-4 isometry needs.
inline PhaseGrid make_phase_grid(const Box& box, double h, double xi_max,
                                 int stride = 0, double resolution = 8.0) {
    PhaseGrid g;
    g.dim = box.dim;
    const double target = std::sqrt(h) / resolution;
    if (stride <= 0) stride = std::max(1, static_cast<int>(target / box.spacing()));
    g.stride = stride;
    g.dx = stride * box.spacing();
    if (g.dx > 0.5 * std::sqrt(h) * (1.0 + 1e-12))
        throw PhaseGridTooCoarse("phase grid dx exceeds sqrt(h)/2");
    for (int i = 0; i < box.n; i += stride) g.x.push_back(box.coord(i));
    const int nxi_half = static_cast<int>(std::ceil(xi_max / target));
    g.dxi = xi_max / nxi_half;
    for (int j = -nxi_half; j <= nxi_half; ++j) g.xi.push_back(j * g.dxi);
    return g;
}

// FBI transform table: values T_h f(x_i, xi_j) with row-major layout
// [xi multi-index][x multi-index].
struct FbiTable {
    double h = 0.1;
    PhaseGrid grid;
    Box field_box;
    std::vector<cplx> val;

    std::size_t index(std::size_t xi_flat, std::size_t x_flat) const {
        return xi_flat * grid.x_cells() + x_flat;
    }
    Vec x_point(std::size_t x_flat) const {
        Vec p{0.0, 0.0, 0.0};
        for (int j = grid.dim - 1; j >= 0; --j) {
            p[j] = grid.x[x_flat % grid.nx()];
            x_flat /= grid.nx();
        }
        return p;
    }
    Vec xi_point(std::size_t xi_flat) const {
        Vec p{0.0, 0.0, 0.0};
        for (int j = grid.dim - 1; j >= 0; --j) {
            p[j] = grid.xi[xi_flat % grid.nxi()];
            xi_flat /= grid.nxi();
        }
        return p;
    }
    double cell_measure() const {
        double m = 1.0;
        for (int j = 0; j < grid.dim; ++j) m *= grid.dx * grid.dxi;
        return m;
    }

    // discrete Plancherel sum  sum |T|^2 dx dxi
    double plancherel_sum() const {
        double s = 0.0;
        for (const auto& z : val) s += std::norm(z);
        return s * cell_measure();
    }
};

namespace detail {

// Windowed-phase kernel K_xi(u) = e^{-u^2/(2h)} e^{i s xi u / h} with u the
// wrapped displacement, indexed from offset zero as circular convolution
// expects. Carrying the phase on the wrapped displacement keeps the packets
// coherent across the periodic seam; a raw-coordinate phase would leave a
// phase jump there that leaks broadband energy into every xi row.
inline GridField packet_kernel(const Box& box, double h, const Vec& xi, double sign) {
    GridField k(box);
    for (std::size_t i = 0; i < k.size(); ++i) {
        int idx[3];
        box.unflatten(i, idx);
        double q = 0.0, phase = 0.0;
        for (int j = 0; j < box.dim; ++j) {
            double uj = idx[j] * box.spacing();
            if (uj > 0.5 * box.length) uj -= box.length;  // wrapped displacement
            q += uj * uj;
            phase += xi[j] * uj;
        }
        k[i] = std::exp(cplx{-q / (2.0 * h), sign * phase / h});
    }
    return k;
}

}  // namespace detail

// T_h f(x, xi) = (2 pi h)^{-d/2} <psi_{(x,xi)}, f>; assembled one xi-row at a
// time with an FFT convolution against the Gaussian window.
inline FbiTable fbi_transform(const GridField& f, double h, const PhaseGrid& grid) {
    const Box& box = f.box;
    if (box.dim > 2) throw DimensionTooLarge("full FBI tables support d in {1,2}");
    if (grid.dx > 0.5 * std::sqrt(h) * (1.0 + 1e-12) ||
        grid.dxi > 0.5 * std::sqrt(h) * (1.0 + 1e-12))
        throw PhaseGridTooCoarse("FBI phase grid must resolve sqrt(h)/2");
    FbiTable table;
    table.h = h;
    table.grid = grid;
    table.field_box = box;
    table.val.assign(grid.xi_cells() * grid.x_cells(), cplx{0.0, 0.0});

    const double c_norm = std::pow(2.0 * pi * h, -0.5 * box.dim) *
                          std::pow(pi * h, -0.25 * box.dim) * box.cell_volume();
    GridField fhat = f;
    Fft::forward(fhat);

    for (std::size_t xf = 0; xf < grid.xi_cells(); ++xf) {
        const Vec xi = table.xi_point(xf);
        // T(x, .) = c int conj(K_xi)(y - x) f(y) dy, one circular convolution
        GridField kernel = detail::packet_kernel(box, h, xi, +1.0);  // K_xi(-u) = conj K_xi(u)
        Fft::forward(kernel);
        GridField g(box);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = fhat[i] * kernel[i];
        Fft::backward(g);
        // subsample at the phase-grid stride
        for (std::size_t xp = 0; xp < grid.x_cells(); ++xp) {
            const Vec x = table.x_point(xp);
            int idx[3] = {0, 0, 0};
            for (int j = 0; j < box.dim; ++j) idx[j] = box.index_of(x[j]);
            table.val[table.index(xf, xp)] = c_norm * g[box.flatten(idx)];
        }
    }
    return table;
}

// T_h^* F(y) = int psi_{(x,xi)}(y) F(x,xi) dx dxi (quadrature superposition)
inline GridField fbi_adjoint(const FbiTable& table) {
    const Box& box = table.field_box;
    const double h = table.h;
    GridField out(box);
    const double c_norm = std::pow(2.0 * pi * h, -0.5 * box.dim) *
                          std::pow(pi * h, -0.25 * box.dim) * table.cell_measure();

    for (std::size_t xf = 0; xf < table.grid.xi_cells(); ++xf) {
        const Vec xi = table.xi_point(xf);
        GridField s(box);
        for (std::size_t xp = 0; xp < table.grid.x_cells(); ++xp) {
            const Vec x = table.x_point(xp);
            int idx[3] = {0, 0, 0};
            for (int j = 0; j < box.dim; ++j) idx[j] = box.index_of(x[j]);
            s[box.flatten(idx)] += table.val[table.index(xf, xp)];
        }
        GridField kernel = detail::packet_kernel(box, h, xi, +1.0);
        Fft::forward(kernel);
        Fft::forward(s);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] *= kernel[i];
        Fft::backward(s);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += c_norm * s[i];
    }
    return out;
}

// Phase-space region B = { |x - center| <= h^theta, lo <= |xi| <= hi }.
struct RegionB {
    Vec center{0.0, 0.0, 0.0};
    double theta = 0.45;
    double band_lo = 0.05;
    double band_hi = 20.0;
    double h = 0.1;

    static RegionB from_eps(const Vec& center, double eps_band, double h,
                            double theta = 0.45) {
        if (!(theta < 0.5) || !(theta > 0.0))
            throw ConfigError("RegionB: theta must lie in (0, 1/2)");
        if (!(eps_band > 0.0) || eps_band / 10.0 >= 10.0 / eps_band)
            throw ConfigError("RegionB: empty frequency band");
        RegionB b;
        b.center = center;
        b.theta = theta;
        b.band_lo = eps_band / 10.0;
        b.band_hi = 10.0 / eps_band;
        b.h = h;
        return b;
    }

    bool contains(const Vec& x, const Vec& xi) const {
        if (norm(x - center) > std::pow(h, theta)) return false;
        const double r = norm(xi);
        return r >= band_lo && r <= band_hi;
    }
};

// Exact partition of a table by membership in B: F_in + F_out = F, and the
// two parts have disjoint supports cell by cell.
inline std::pair<FbiTable, FbiTable> truncate_to_region(const FbiTable& table,
                                                        const RegionB& region) {
    FbiTable in = table, out = table;
    for (std::size_t xf = 0; xf < table.grid.xi_cells(); ++xf) {
        const Vec xi = table.xi_point(xf);
        for (std::size_t xp = 0; xp < table.grid.x_cells(); ++xp) {
            const Vec x = table.x_point(xp);
            const std::size_t i = table.index(xf, xp);
            if (region.contains(x, xi))
                out.val[i] = cplx{0.0, 0.0};
            else
                in.val[i] = cplx{0.0, 0.0};
        }
    }
    return {std::move(in), std::move(out)};
}

// Flow-transported wavepacket frame of the short-time parametrix: center
// x0^t, momentum xi0^t, action phase gamma, width C sqrt(h).
struct ParametrixFrame {
    Vec x_t{0.0, 0.0, 0.0};
    Vec xi_t{0.0, 0.0, 0.0};
    double gamma = 0.0;
    double width = 0.0;
};

inline ParametrixFrame short_time_parametrix(const Wavepacket& wp, const Metric& metric,
                                             double t, double dt = 1e-3,
                                             double width_constant = 1.0) {
    FlowOptions opt;
    opt.dt = dt;
    FlowTrajectory traj;
    PhasePoint p;
    p.x = wp.x0;
    p.xi = wp.xi0;
    PhasePoint q = flow(metric, p, t, opt, &traj);
    ParametrixFrame frame;
    frame.x_t = q.x;
    frame.xi_t = q.xi;
    frame.gamma = traj.gamma.back();
    frame.width = width_constant * std::sqrt(wp.h);
    return frame;
}

// Long-time dispersive envelope
//   h^{-3d/4} |t|^{-d/2} (1 + |x - x0^t| / (sqrt(h) |t|))^{-N}
// valid once the packet's ray has exited |x| >= exit_radius; the precondition
// is checked on the ray itself.
struct LongTimeEnvelope {
    Wavepacket wp;
    Metric metric;
    int dim = 1;
    double t_exit = 0.0;
    double decay_order = 4.0;
    double flow_dt = 1e-3;

    double operator()(double t, const Vec& x) const {
        FlowOptions opt;
        opt.dt = flow_dt;
        PhasePoint p;
        p.x = wp.x0;
        p.xi = wp.xi0;
        PhasePoint q = flow(metric, p, t, opt);
        const double r = norm(x - q.x) / (std::sqrt(wp.h) * std::abs(t));
        return std::pow(wp.h, -0.75 * dim) * std::pow(std::abs(t), -0.5 * dim) *
               std::pow(1.0 + r, -decay_order);
    }

    Vec center(double t) const {
        FlowOptions opt;
        opt.dt = flow_dt;
        PhasePoint p;
        p.x = wp.x0;
        p.xi = wp.xi0;
        return flow(metric, p, t, opt).x;
    }
};

inline LongTimeEnvelope long_time_envelope(const Wavepacket& wp, const Metric& metric,
                                           double t_exit, double exit_radius = 10.0,
                                           double decay_order = 4.0,
                                           double flow_dt = 1e-3) {
    FlowOptions opt;
    opt.dt = flow_dt;
    PhasePoint p;
    p.x = wp.x0;
    p.xi = wp.xi0;
    PhasePoint q = flow(metric, p, t_exit, opt);
    if (norm(q.x) < exit_radius || dot(q.x, q.xi) <= 0.0)
        throw NotExited("long_time_envelope: ray has not exited |x| >= " +
                        std::to_string(exit_radius) + " by t_exit");
    LongTimeEnvelope env;
    env.wp = wp;
    env.metric = metric;
    env.dim = metric.dim();
    env.t_exit = t_exit;
    env.decay_order = decay_order;
    env.flow_dt = flow_dt;
    return env;
}

}  // namespace sclens
