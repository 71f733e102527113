#pragma once

#include "core.hpp"
#include "fields.hpp"
#include "gauss.hpp"
#include "parallel.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <vector>

namespace bubblescope {

enum class Scheme { Auto, Tensor, Spherical, Separable };

inline const char* scheme_name(Scheme s)
{
    switch (s) {
    case Scheme::Auto: return "auto";
    case Scheme::Tensor: return "tensor";
    case Scheme::Spherical: return "spherical";
    case Scheme::Separable: return "separable";
    }
    return "auto";
}

inline Scheme scheme_from_name(const std::string& s)
{
    if (s == "auto") return Scheme::Auto;
    if (s == "tensor") return Scheme::Tensor;
    if (s == "spherical") return Scheme::Spherical;
    if (s == "separable") return Scheme::Separable;
    throw Error(Errc::ConfigError, "quadrature.scheme: unknown scheme '" + s + "'");
}

struct QuadratureSpec {
    Scheme scheme = Scheme::Auto;
    int nodes_per_axis = 32;   // tensor rules
    int nodes_per_panel = 10;  // composite rules of the adapted schemes
    int angular_nodes = 48;    // trapezoid points on full circles
    double panel_width = 1.0;  // uniform panel width in units of the kernel scale r
    double axial_panel_width = 2.0;
    int workers = 0;           // 0: process default

    Json to_json() const
    {
        return Json{{"scheme", scheme_name(scheme)},
                    {"nodes_per_axis", nodes_per_axis},
                    {"nodes_per_panel", nodes_per_panel},
                    {"angular_nodes", angular_nodes},
                    {"panel_width", panel_width},
                    {"axial_panel_width", axial_panel_width},
                    {"reduction", "pairwise over fixed task order"}};
    }
    static QuadratureSpec from_json(const Json& j)
    {
        QuadratureSpec q;
        q.scheme = scheme_from_name(j.value("scheme", scheme_name(q.scheme)));
        q.nodes_per_axis = j.value("nodes_per_axis", q.nodes_per_axis);
        q.nodes_per_panel = j.value("nodes_per_panel", q.nodes_per_panel);
        q.angular_nodes = j.value("angular_nodes", q.angular_nodes);
        q.panel_width = j.value("panel_width", q.panel_width);
        q.axial_panel_width = j.value("axial_panel_width", q.axial_panel_width);
        return q;
    }
};

/// Integrand callback: y, field sample at y (null when no field), weight, accumulator.
using NodeFn = std::function<void(const Vec& y, const FieldSample* s, double w, double* acc)>;

/// Geometry of an adapted node set.
struct Layout {
    Scheme scheme = Scheme::Tensor;
    Concentration conc;       // cylinder axis (Separable)
    Vec center;               // spherical center
    Vec pole_axis;            // spherical polar axis
    double pole_scale = 0.0;  // angular grading near the poles, 0 = none
};

namespace detail {

inline std::vector<double> graded_breaks(double s0, double uniform_w, double smax)
{
    std::vector<double> br{0.0};
    if (smax <= 0.0) return br;
    double s = 0.0;
    if (s0 > 0.0 && s0 < 0.5 * uniform_w) {
        s = std::min(s0, smax);
        br.push_back(s);
        while (s < smax) {
            const double w = std::min(s, uniform_w);
            if (w >= uniform_w) break;
            s = std::min(s + w, smax);
            br.push_back(s);
        }
    }
    if (s < smax) {
        const int n = std::max(1, static_cast<int>(std::ceil((smax - s) / uniform_w - 1e-9)));
        const double a = s;
        for (int i = 1; i <= n; ++i) br.push_back(a + (smax - a) * i / n);
    }
    return br;
}

inline int angular_count(int base, double offset, double r)
{
    int n = base;
    if (offset > 0.0) {
        const int need = static_cast<int>(std::ceil(2.0 * std::numbers::pi * offset / (0.5 * r)));
        n = std::max(n, need);
    }
    return (n + 3) / 4 * 4;
}

inline void check_finite(const double* acc, std::size_t n, const Vec& y)
{
    for (std::size_t k = 0; k < n; ++k) {
        if (!std::isfinite(acc[k])) {
            std::ostringstream os;
            os << "non-finite integrand at node (";
            for (int i = 0; i < y.size(); ++i) os << (i ? ", " : "") << y(i);
            os << ")";
            throw Error(Errc::NonFiniteSample, os.str());
        }
    }
}

} // namespace detail

/// Chooses the node layout for a ball integral of a field.
inline Layout choose_layout(const MapField& f, const Vec& x, double radius, const QuadratureSpec& q)
{
    const int m = f.dim();
    Layout lay;
    for (const Vec& p : f.singular_points()) {
        if ((p - x).norm() < radius) {
            if (q.scheme == Scheme::Tensor || q.scheme == Scheme::Separable)
                throw Error(Errc::NearSingular, "integration ball contains a singular point; spherical scheme required");
            lay.scheme = Scheme::Spherical;
            lay.center = p;
            const Concentration c = f.concentration();
            lay.pole_axis = unit_vec(m, m - 1);
            if (c.present && c.L.cols() == 1 && c.P.transpose().operator*(p - c.base).norm() < 1e-12) {
                lay.pole_axis = c.L.col(0);
                lay.pole_scale = c.scale;
            }
            return lay;
        }
    }
    if (q.scheme == Scheme::Spherical) {
        lay.scheme = Scheme::Spherical;
        lay.center = x;
        lay.pole_axis = unit_vec(m, m - 1);
        return lay;
    }
    const Concentration c = f.concentration();
    if (q.scheme != Scheme::Tensor && c.present) {
        lay.scheme = Scheme::Separable;
        lay.conc = c;
        return lay;
    }
    if (m == 4) throw Error(Errc::InvalidArgument, "m = 4 requires the separable scheme on an L-invariant field");
    if (q.scheme == Scheme::Separable) {
        // no declared axis: polar/cylindrical coordinates around x itself
        lay.scheme = Scheme::Separable;
        lay.conc.present = true;
        lay.conc.base = x;
        lay.conc.L = Mat::Zero(m, m - 2);
        for (int j = 0; j < m - 2; ++j) lay.conc.L(2 + j, j) = 1.0;
        lay.conc.P = Mat::Zero(m, 2);
        lay.conc.P(0, 0) = lay.conc.P(1, 1) = 1.0;
        lay.conc.scale = radius;
        return lay;
    }
    lay.scheme = Scheme::Tensor;
    return lay;
}

/// Integrates a vector-valued integrand over the ball B(x, radius) using the layout.
/// `r` sets the uniform panel width; the integrand must vanish outside the ball.
inline std::vector<double> integrate_ball(const MapField* f, int m, const Vec& x, double radius, double r,
                                          const QuadratureSpec& q, const Layout& lay, std::size_t width,
                                          const NodeFn& fn)
{
    const int np = q.nodes_per_panel;
    const double uw = q.panel_width * r;
    const double rad2 = radius * radius;
    std::vector<std::vector<double>> parts;

    auto finish = [&](std::size_t ntask, const std::function<void(std::size_t, double*)>& task) {
        parts.assign(ntask, std::vector<double>(width, 0.0));
        parallel_for(ntask, [&](std::size_t i) { task(i, parts[i].data()); }, q.workers);
        return pairwise_reduce(std::move(parts), width);
    };

    if (f && !f->contains_ball(x, radius)) throw Error(Errc::DomainEscape, "integration ball leaves the field domain");

    if (lay.scheme == Scheme::Tensor) {
        const GaussRule& g = gauss_legendre(q.nodes_per_axis);
        const int n = q.nodes_per_axis;
        std::size_t ntask = static_cast<std::size_t>(n);
        return finish(ntask, [&](std::size_t i0, double* acc) {
            Vec y(m);
            std::vector<int> idx(m, 0);
            idx[0] = static_cast<int>(i0);
            const std::size_t inner = static_cast<std::size_t>(std::pow(n, m - 1));
            for (std::size_t lin = 0; lin < inner; ++lin) {
                std::size_t rem = lin;
                double w = radius * g.w[idx[0]];
                y(0) = x(0) + radius * g.x[idx[0]];
                for (int d = 1; d < m; ++d) {
                    idx[d] = static_cast<int>(rem % n);
                    rem /= n;
                    y(d) = x(d) + radius * g.x[idx[d]];
                    w *= radius * g.w[idx[d]];
                }
                if ((y - x).squaredNorm() > rad2) continue;
                if (f) {
                    const FieldSample s = f->sample(y);
                    fn(y, &s, w, acc);
                } else {
                    fn(y, nullptr, w, acc);
                }
                detail::check_finite(acc, width, y);
            }
        });
    }

    if (lay.scheme == Scheme::Spherical) {
        const Vec& c = lay.center;
        const double off = (x - c).norm();
        const double rmax = off + radius;
        if (m == 2) {
            const Nodes1D rad = composite_nodes(detail::graded_breaks(0.0, 0.5 * uw, rmax), np);
            const int nphi = detail::angular_count(q.angular_nodes, off, r);
            return finish(rad.size(), [&](std::size_t i, double* acc) {
                const double s = rad.x[i];
                Vec y(2);
                for (int k = 0; k < nphi; ++k) {
                    const double ph = 2.0 * std::numbers::pi * k / nphi;
                    y << c(0) + s * std::cos(ph), c(1) + s * std::sin(ph);
                    if ((y - x).squaredNorm() > rad2) continue;
                    const double w = rad.w[i] * s * 2.0 * std::numbers::pi / nphi;
                    if (f) {
                        const FieldSample smp = f->sample(y);
                        fn(y, &smp, w, acc);
                    } else {
                        fn(y, nullptr, w, acc);
                    }
                    detail::check_finite(acc, width, y);
                }
            });
        }
        if (m != 3) throw Error(Errc::InvalidArgument, "spherical scheme supports m = 2, 3");
        Vec3 a(lay.pole_axis(0), lay.pole_axis(1), lay.pole_axis(2));
        a.normalize();
        Vec3 b1 = (std::abs(a(0)) < 0.9 ? Vec3::UnitX() : Vec3::UnitY());
        b1 = (b1 - b1.dot(a) * a).normalized();
        const Vec3 b2 = a.cross(b1);
        const Nodes1D rad = composite_nodes(detail::graded_breaks(0.0, 0.5 * uw, rmax), np);
        const double th_u = std::min(0.2, 0.5 * r / std::max(off, r));
        std::vector<double> tb = detail::graded_breaks(lay.pole_scale > 0 ? lay.pole_scale / 8.0 : 0.0, th_u, 0.5 * std::numbers::pi);
        std::vector<double> tbr = tb;
        for (auto it = tb.rbegin() + 1; it != tb.rend(); ++it) tbr.push_back(std::numbers::pi - *it);
        const Nodes1D th = composite_nodes(tbr, np);
        const int nphi = detail::angular_count(q.angular_nodes, off, r);
        const bool homog = f != nullptr && f->homogeneous0();
        return finish(th.size(), [&](std::size_t j, double* acc) {
            const double st = std::sin(th.x[j]), ct = std::cos(th.x[j]);
            Vec y(3), u(3);
            for (int k = 0; k < nphi; ++k) {
                const double ph = 2.0 * std::numbers::pi * k / nphi;
                const Vec3 d = ct * a + st * (std::cos(ph) * b1 + std::sin(ph) * b2);
                u << c(0) + d(0), c(1) + d(1), c(2) + d(2);
                std::optional<FieldSample> unit;
                for (std::size_t i = 0; i < rad.size(); ++i) {
                    const double rho = rad.x[i];
                    y << c(0) + rho * d(0), c(1) + rho * d(1), c(2) + rho * d(2);
                    if ((y - x).squaredNorm() > rad2) continue;
                    const double w = rad.w[i] * rho * rho * th.w[j] * st * 2.0 * std::numbers::pi / nphi;
                    if (!f) {
                        fn(y, nullptr, w, acc);
                    } else if (homog) {
                        // 0-homogeneous: the Jacobian scales like 1/rho along rays
                        if (!unit) unit = f->sample(u);
                        FieldSample smp{unit->u, unit->J / rho};
                        fn(y, &smp, w, acc);
                    } else {
                        const FieldSample smp = f->sample(y);
                        fn(y, &smp, w, acc);
                    }
                    detail::check_finite(acc, width, y);
                }
            }
        });
    }

    // sheared cylindrical layout: y = base + L t + P (c(t) + w)
    const Concentration& cc = lay.conc;
    const int d = m - 2;
    const Vec tx = cc.L.transpose() * (x - cc.base);
    const Eigen::Vector2d px = cc.P.transpose() * (x - cc.base);
    std::vector<Nodes1D> ax(d);
    for (int j = 0; j < d; ++j) {
        const int panels = std::max(1, static_cast<int>(std::ceil(2.0 * radius / (q.axial_panel_width * r) - 1e-9)));
        ax[j] = uniform_panels(tx(j) - radius, tx(j) + radius, panels, np);
    }
    std::size_t nax = 1;
    for (int j = 0; j < d; ++j) nax *= ax[j].size();
    std::vector<Vec> tnodes(nax);
    std::vector<double> twts(nax);
    std::vector<Eigen::Vector2d> shifts(nax);
    double off = 0.0;
    for (std::size_t lin = 0; lin < nax; ++lin) {
        std::size_t rem = lin;
        Vec t(d);
        double w = 1.0;
        for (int j = 0; j < d; ++j) {
            const std::size_t k = rem % ax[j].size();
            rem /= ax[j].size();
            t(j) = ax[j].x[k];
            w *= ax[j].w[k];
        }
        tnodes[lin] = t;
        twts[lin] = w;
        shifts[lin] = cc.shift ? cc.shift(t) : Eigen::Vector2d::Zero();
        off = std::max(off, (px - shifts[lin]).norm());
    }
    const double smax = off + radius;
    const double s0 = cc.scale / 8.0;
    const Nodes1D rad = composite_nodes(detail::graded_breaks(s0, 0.5 * uw, smax), np);
    const int nphi = detail::angular_count(q.angular_nodes, off, r);
    std::vector<double> cph(nphi), sph(nphi);
    for (int k = 0; k < nphi; ++k) {
        cph[k] = std::cos(2.0 * std::numbers::pi * k / nphi);
        sph[k] = std::sin(2.0 * std::numbers::pi * k / nphi);
    }
    const bool cache = cc.l_invariant && !cc.shift && f != nullptr;
    return finish(rad.size(), [&](std::size_t i, double* acc) {
        const double s = rad.x[i];
        const double wr = rad.w[i] * s * 2.0 * std::numbers::pi / nphi;
        Vec y(m);
        for (int k = 0; k < nphi; ++k) {
            const Eigen::Vector2d wv(s * cph[k], s * sph[k]);
            std::optional<FieldSample> cached;
            for (std::size_t lin = 0; lin < nax; ++lin) {
                y = cc.base + cc.P * (shifts[lin] + wv);
                if (d > 0) y += cc.L * tnodes[lin];
                if ((y - x).squaredNorm() > rad2) continue;
                const double w = wr * twts[lin];
                if (!f) {
                    fn(y, nullptr, w, acc);
                } else if (cache) {
                    if (!cached) cached = f->sample(y);
                    fn(y, &*cached, w, acc);
                } else {
                    const FieldSample smp = f->sample(y);
                    fn(y, &smp, w, acc);
                }
                detail::check_finite(acc, width, y);
            }
        }
    });
}

/// Polar layout in the plane around `center`, radially graded from scale / 8.
inline Layout polar_layout(const Vec& center, double scale)
{
    Layout lay;
    lay.scheme = Scheme::Separable;
    lay.conc.present = true;
    lay.conc.base = center;
    lay.conc.L = Mat(2, 0);
    lay.conc.P = Mat::Identity(2, 2);
    lay.conc.scale = scale;
    return lay;
}

/// Convenience: integrates a field-weighted integrand over B(x, radius) with an automatic layout.
inline std::vector<double> integrate_field_ball(const MapField& f, const Vec& x, double radius, double r,
                                                const QuadratureSpec& q, std::size_t width, const NodeFn& fn)
{
    const Layout lay = choose_layout(f, x, radius, q);
    return integrate_ball(&f, f.dim(), x, radius, r, q, lay, width, fn);
}

/// Region descriptors for plain integrals.
struct BallRegion {
    Vec center;
    double radius = 1.0;
};
struct BoxRegion {
    Vec lo, hi;
};

/// Tensor Gauss-Legendre over a box, nodes_per_axis per axis.
inline double integrate(const std::function<double(const Vec&)>& f, const BoxRegion& box, const QuadratureSpec& q)
{
    const int m = static_cast<int>(box.lo.size());
    const int n = q.nodes_per_axis;
    const GaussRule& g = gauss_legendre(n);
    std::vector<std::vector<double>> parts(n, std::vector<double>(1, 0.0));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i0) {
        const std::size_t inner = static_cast<std::size_t>(std::pow(n, m - 1));
        Vec y(m);
        double acc = 0.0;
        for (std::size_t lin = 0; lin < inner; ++lin) {
            std::size_t rem = lin;
            double w = 1.0;
            for (int d = 0; d < m; ++d) {
                const std::size_t k = d == 0 ? i0 : rem % n;
                if (d > 0) rem /= n;
                const double h = 0.5 * (box.hi(d) - box.lo(d));
                y(d) = 0.5 * (box.hi(d) + box.lo(d)) + h * g.x[k];
                w *= h * g.w[k];
            }
            const double v = f(y);
            if (!std::isfinite(v)) detail::check_finite(&v, 1, y);
            acc += w * v;
        }
        parts[i0][0] = acc;
    }, q.workers);
    return pairwise_reduce(std::move(parts), 1)[0];
}

/// Ball integral in polar/spherical coordinates around the ball center.
inline double integrate(const std::function<double(const Vec&)>& f, const BallRegion& ball, const QuadratureSpec& q)
{
    const int m = static_cast<int>(ball.center.size());
    Layout lay;
    lay.scheme = Scheme::Spherical;
    lay.center = ball.center;
    lay.pole_axis = unit_vec(m, m - 1);
    QuadratureSpec qq = q;
    if (m == 1) {
        BoxRegion b{ball.center.array() - ball.radius, ball.center.array() + ball.radius};
        return integrate(f, b, q);
    }
    const auto v = integrate_ball(nullptr, m, ball.center, ball.radius, ball.radius, qq, lay, 1,
                                  [&](const Vec& y, const FieldSample*, double w, double* acc) { acc[0] += w * f(y); });
    return v[0];
}

/// Equal-weight average over the circle of radius s around ap.base + y_L in the perpendicular plane.
inline double circle_average(const std::function<double(const Vec&)>& f, const AffinePlane& ap, const Vec& y_L, double s,
                             int n_nodes)
{
    if (ap.plane.ambient() - ap.plane.dim() != 2) throw Error(Errc::DimensionMismatch, "circle_average needs a codimension-2 plane");
    if (!(s > 0.0)) throw Error(Errc::OnAxis, "circle radius must be positive");
    if (n_nodes < 4) throw Error(Errc::InvalidArgument, "circle_average needs at least 4 nodes");
    const Mat& P = ap.plane.perp_basis();
    double acc = 0.0;
    for (int k = 0; k < n_nodes; ++k) {
        const double a = 2.0 * std::numbers::pi * k / n_nodes;
        const Vec y = ap.base + y_L + s * (std::cos(a) * P.col(0) + std::sin(a) * P.col(1));
        acc += f(y);
    }
    return acc / n_nodes;
}

} // namespace bubblescope
