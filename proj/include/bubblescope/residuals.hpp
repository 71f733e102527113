#pragma once

#include "core.hpp"
#include "fields.hpp"
#include "quadrature.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace bubblescope {

/// SplitMix64 finalizer applied to seed + counter * golden gamma; stateless, so a value
/// depends only on (seed, stream, index).
inline std::uint64_t splitmix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t counter_bits(std::uint64_t seed, std::uint64_t stream, std::uint64_t index)
{
    return splitmix64(splitmix64(seed ^ (0x632be59bd9b4e019ULL * (stream + 1))) + index * 0x9e3779b97f4a7c15ULL);
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index)
{
    return static_cast<double>(counter_bits(seed, stream, index) >> 11) * 0x1.0p-53;
}

/// Finite-difference tension residual Delta u + |grad u|^2 u with central step h.
inline Vec3 harmonic_residual(const MapField& f, const Vec& y, double h)
{
    if (!(h > 0.0)) throw Error(Errc::InvalidArgument, "step must be positive");
    for (const Vec& p : f.singular_points())
        if ((p - y).norm() <= 10.0 * h) throw Error(Errc::NearSingular, "stencil too close to a singular point");
    const int m = f.dim();
    const FieldSample s0 = f.sample(y);
    Vec3 lap = Vec3::Zero();
    for (int i = 0; i < m; ++i) {
        Vec yp = y, ym = y;
        yp(i) += h;
        ym(i) -= h;
        lap += (f.value(yp) - 2.0 * s0.u + f.value(ym)) / (h * h);
    }
    return lap + s0.J.squaredNorm() * s0.u;
}

/// Compactly supported test vector field with a known gradient.
struct BumpField {
    Vec center;
    double radius = 1.0;
    Vec direction;  // xi = direction * (1 - |y - c|^2 / radius^2)^3 inside the ball

    Vec value(const Vec& y) const
    {
        const double q = (y - center).squaredNorm() / sqr(radius);
        if (q >= 1.0) return Vec::Zero(center.size());
        return direction * std::pow(1.0 - q, 3);
    }
    /// G(i, j) = d_i xi^j.
    Mat grad(const Vec& y) const
    {
        const int m = static_cast<int>(center.size());
        const Vec d = y - center;
        const double q = d.squaredNorm() / sqr(radius);
        if (q >= 1.0) return Mat::Zero(m, m);
        const double g = -6.0 * sqr(1.0 - q) / sqr(radius);
        return (g * d) * direction.transpose();
    }
    Json to_json() const
    {
        Json j{{"radius", radius}};
        j["center"] = std::vector<double>(center.data(), center.data() + center.size());
        j["direction"] = std::vector<double>(direction.data(), direction.data() + direction.size());
        return j;
    }
};

/// Seeded bumps: centers uniform in [lo, hi]^m, radii uniform in [rmin, rmax], unit directions.
inline std::vector<BumpField> random_bumps(int m, std::uint64_t seed, int count, double lo, double hi, double rmin, double rmax)
{
    std::vector<BumpField> out;
    for (int k = 0; k < count; ++k) {
        std::uint64_t idx = 0;
        auto next = [&] { return counter_uniform(seed, static_cast<std::uint64_t>(k), idx++); };
        BumpField b;
        b.center.resize(m);
        for (int i = 0; i < m; ++i) b.center(i) = lo + (hi - lo) * next();
        b.radius = rmin + (rmax - rmin) * next();
        b.direction.resize(m);
        // Box-Muller pairs give an isotropic direction
        for (int i = 0; i < m; ++i) {
            const double u1 = std::max(next(), 1e-300), u2 = next();
            b.direction(i) = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        }
        b.direction.normalize();
        out.push_back(b);
    }
    return out;
}

struct StationaryResidual {
    double raw = 0.0;         // integral of the stress tensor against grad xi
    double scale = 0.0;       // integral of |grad u|^2 |grad xi|
    double normalized = 0.0;  // raw / scale
    std::string scheme;
};

/// Integral of (|grad u|^2 delta_ij - 2 <d_i u, d_j u>) d_i xi^j over supp xi.
inline StationaryResidual stationary_residual(const MapField& f, const BumpField& xi, const QuadratureSpec& q)
{
    const int m = f.dim();
    if (xi.center.size() != m || xi.direction.size() != m) throw Error(Errc::DimensionMismatch, "test field dimension differs from field dimension");
    if (!f.contains_ball(xi.center, xi.radius)) throw Error(Errc::SupportEscapesDomain, "test field support leaves the field domain");
    const Layout lay = choose_layout(f, xi.center, xi.radius, q);
    const double panel_scale = 0.5 * xi.radius;
    const auto v = integrate_ball(&f, m, xi.center, xi.radius, panel_scale, q, lay, 2,
        [&](const Vec& y, const FieldSample* s, double w, double* acc) {
            const Mat Dxi = xi.grad(y);
            const Mat G = s->J * s->J.transpose();
            const double trG = G.trace();
            double stress = 0.0;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) stress += ((i == j ? trG : 0.0) - 2.0 * G(i, j)) * Dxi(i, j);
            acc[0] += w * stress;
            acc[1] += w * trG * Dxi.norm();
        });
    StationaryResidual out;
    out.raw = v[0];
    out.scale = v[1];
    out.normalized = v[1] > 0.0 ? std::abs(v[0]) / v[1] : 0.0;
    out.scheme = scheme_name(lay.scheme);
    return out;
}

} // namespace bubblescope
