#pragma once

#include "core.hpp"
#include "gauss.hpp"
#include "geometry.hpp"

#include <cmath>
#include <numbers>

namespace bubblescope {

/// Area of the unit sphere S^{k-1} in R^k.
inline double sphere_area(int k)
{
    return 2.0 * std::pow(std::numbers::pi, 0.5 * k) / std::tgamma(0.5 * k);
}

/// Volume of the unit ball in R^k.
inline double ball_volume(int k) { return std::pow(std::numbers::pi, 0.5 * k) / std::tgamma(0.5 * k + 1.0); }

/// Cutoff heat kernel: rho(t) = c_m e^{-t} on [0,R], Hermite quadratic tail on [R,R+2].
class HeatMollifier {
public:
    static constexpr int kPanelNodes = 20;

    HeatMollifier() : HeatMollifier(2, 20.0) {}
    HeatMollifier(int m, double R) : m_(m), R_(R)
    {
        if (m < 1 || m > kMaxDim) throw Error(Errc::InvalidArgument, "mollifier dimension out of range");
        if (!(R >= 3.0)) throw Error(Errc::InvalidArgument, "mollifier R must be >= 3");
        c_ = 1.0;
        c_ = 1.0 / radial_mass(m_);
        panels_ = static_cast<int>(std::ceil(std::sqrt(2.0 * R_) / 0.5)) + 2;
    }

    int m() const { return m_; }
    double R() const { return R_; }
    double c() const { return c_; }
    double eR() const { return std::exp(-R_); }
    /// Number of Gauss-Legendre nodes used for c_m.
    int normalization_nodes() const { return panels_ * kPanelNodes; }
    /// Radius of supp rho_r.
    double support_radius(double r) const { return r * std::sqrt(2.0 * (R_ + 2.0)); }

    double rho(double t) const
    {
        if (t < 0.0) t = 0.0;
        if (t <= R_) return c_ * std::exp(-t);
        if (t >= R_ + 2.0) return 0.0;
        return c_ * std::exp(-R_) * sqr(1.0 - 0.5 * (t - R_));
    }
    double rho_dot(double t) const
    {
        if (t < 0.0) t = 0.0;
        if (t <= R_) return -c_ * std::exp(-t);
        if (t >= R_ + 2.0) return 0.0;
        return -c_ * std::exp(-R_) * (1.0 - 0.5 * (t - R_));
    }
    /// rho and rho_dot together with one exponential.
    void rho_pair(double t, double& v, double& vd) const
    {
        if (t < 0.0) t = 0.0;
        if (t <= R_) {
            v = c_ * std::exp(-t);
            vd = -v;
        } else if (t >= R_ + 2.0) {
            v = vd = 0.0;
        } else {
            const double q = 1.0 - 0.5 * (t - R_);
            vd = -c_ * std::exp(-R_) * q;
            v = -vd * q;
        }
    }
    double rho_ddot(double t) const
    {
        if (t < R_) return c_ * std::exp(-t);
        if (t >= R_ + 2.0) return 0.0;
        return 0.5 * c_ * std::exp(-R_);
    }
    /// Tail mass P(t) = int_t^inf rho.
    double rho_primitive(double t) const
    {
        const double eR = std::exp(-R_);
        if (t >= R_ + 2.0) return 0.0;
        if (t >= R_) return c_ * eR * (2.0 / 3.0) * std::pow(1.0 - 0.5 * (t - R_), 3);
        return c_ * (std::exp(-t) - eR) + c_ * eR * (2.0 / 3.0);
    }

    double rho_r(const Vec& y, double r) const { return rho_r_sq(y.squaredNorm(), r); }
    double rho_dot_r(const Vec& y, double r) const { return rho_dot_r_sq(y.squaredNorm(), r); }
    double rho_r_sq(double y2, double r) const
    {
        check_scale(r);
        return std::pow(r, -m_) * rho(y2 / (2.0 * r * r));
    }
    double rho_dot_r_sq(double y2, double r) const
    {
        check_scale(r);
        return std::pow(r, -m_) * rho_dot(y2 / (2.0 * r * r));
    }

    /// int_{R^k} rho(|z|^2/2) dz with the current constant.
    double marginal_mass(int k) const
    {
        if (k == 0) return rho(0.0);
        return radial_mass(k);
    }
    /// int_0^inf rho(t^2/2) dt, the mass seen along one ray.
    double ray_mass() const { return 0.5 * marginal_mass(1); }

    static void check_scale(double r)
    {
        if (!(r > 0.0) || !std::isfinite(r)) throw Error(Errc::NonpositiveScale, "scale r must be positive");
    }

private:
    double radial_mass(int k) const
    {
        const double s1 = std::sqrt(2.0 * R_), s2 = std::sqrt(2.0 * (R_ + 2.0));
        const int np = static_cast<int>(std::ceil(s1 / 0.5));
        std::vector<double> br;
        for (int i = 0; i <= np; ++i) br.push_back(s1 * i / np);
        br.push_back(0.5 * (s1 + s2));
        br.push_back(s2);
        const Nodes1D nd = composite_nodes(br, kPanelNodes);
        double acc = 0.0;
        for (std::size_t i = 0; i < nd.size(); ++i) {
            const double s = nd.x[i];
            acc += nd.w[i] * rho(0.5 * s * s) * std::pow(s, k - 1);
        }
        return sphere_area(k) * acc;
    }

    int m_;
    double R_;
    double c_ = 1.0;
    int panels_ = 0;
};

/// Transition profile: 0 for t <= 1, 1 for t >= 2, quintic smoothstep between.
inline double psi_hat(double t)
{
    if (t <= 1.0) return 0.0;
    if (t >= 2.0) return 1.0;
    const double u = t - 1.0;
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
}

/// Restricted kernels rho_hat and rho_tilde around a codimension-2 plane through 0.
class RestrictedMollifier {
public:
    RestrictedMollifier(const HeatMollifier& base, Plane L) : mol_(base), L_(std::move(L))
    {
        if (L_.ambient() != mol_.m()) throw Error(Errc::DimensionMismatch, "plane and mollifier dimension differ");
    }
    const HeatMollifier& base() const { return mol_; }
    const Plane& plane() const { return L_; }

    /// Tube factor psi_hat(e^{2R} |pi_perp y|^2 / 2r^2).
    double tube_factor(double perp_sq, double r) const
    {
        return psi_hat(std::exp(2.0 * mol_.R()) * perp_sq / (2.0 * r * r));
    }
    double rho_hat_r(const Vec& y, double r) const
    {
        const Vec w = L_.project_perp(y);
        return mol_.rho_r(y, r) * tube_factor(w.squaredNorm(), r);
    }
    /// Closed form through the tail mass P, with the tube transition integrated by Gauss-Legendre.
    double rho_tilde_r(const Vec& y, double r) const
    {
        HeatMollifier::check_scale(r);
        const double b2 = L_.project(y).squaredNorm();
        const double u0 = y.squaredNorm() / (2.0 * r * r);
        const double beta = b2 / (2.0 * r * r);
        const double e2R = std::exp(-2.0 * mol_.R());
        const double lo = beta + e2R, hi = beta + 2.0 * e2R;
        double v = 0.0;
        if (u0 >= hi) {
            v = mol_.rho_primitive(u0);
        } else {
            v = mol_.rho_primitive(hi);
            const double a = std::max(u0, lo);
            const GaussRule& g = gauss_legendre(16);
            const double h = 0.5 * (hi - a), c = 0.5 * (hi + a);
            for (std::size_t i = 0; i < g.x.size(); ++i) {
                const double u = c + h * g.x[i];
                v += h * g.w[i] * psi_hat((u - beta) / e2R) * mol_.rho(u);
            }
        }
        return std::pow(r, -mol_.m()) * v;
    }
    /// Direct route: integrate (s/r^2) rho_hat_r along the perpendicular ray from y outward.
    double rho_tilde_r_by_ray(const Vec& y, double r, int panels = 64) const
    {
        const Vec yL = L_.project(y);
        const Vec w = y - yL;
        const double a = w.norm();
        Vec n = w;
        if (a > 0.0) {
            n /= a;
        } else {
            n = L_.perp_basis().col(0);
        }
        const double smax = mol_.support_radius(r);
        if (a >= smax) return 0.0;
        std::vector<double> br;
        const double e = std::exp(-mol_.R()) * r;
        for (double b : {std::sqrt(2.0) * e, 2.0 * e})
            if (b > a) br.push_back(b);
        br.insert(br.begin(), a);
        const double last = br.back();
        for (int i = 1; i <= panels; ++i) br.push_back(last + (smax - last) * i / panels);
        const Nodes1D nd = composite_nodes(br, 12);
        double acc = 0.0;
        for (std::size_t i = 0; i < nd.size(); ++i) {
            const double s = nd.x[i];
            const Vec p = yL + s * n;
            acc += nd.w[i] * s / (r * r) * rho_hat_r(p, r);
        }
        return acc;
    }

private:
    HeatMollifier mol_;
    Plane L_;
};

/// Cutoff 1 on t <= 1.1, 0 on t >= 1.9, cubic smoothstep between.
inline double phi_cut(double t)
{
    if (t <= 1.1) return 1.0;
    if (t >= 1.9) return 0.0;
    const double u = (t - 1.1) / 0.8;
    return 1.0 - u * u * (3.0 - 2.0 * u);
}
inline double phi_cut_d1(double t)
{
    if (t <= 1.1 || t >= 1.9) return 0.0;
    const double u = (t - 1.1) / 0.8;
    return -6.0 * u * (1.0 - u) / 0.8;
}
inline double phi_cut_d2(double t)
{
    if (t <= 1.1 || t >= 1.9) return 0.0;
    const double u = (t - 1.1) / 0.8;
    return -6.0 * (1.0 - 2.0 * u) / 0.64;
}

/// psi_T(x,r) = phi(rr_x / r) phi(r) phi(|pi_{L_A}(x - p)|^2).
inline double psi_T(double rr_x, double r, double la_dist_sq)
{
    HeatMollifier::check_scale(r);
    return phi_cut(rr_x / r) * phi_cut(r) * phi_cut(la_dist_sq);
}

inline double psi_T(const Vec& x, double r, const Plane& L_A, const Vec& p, double rr_x)
{
    return psi_T(rr_x, r, L_A.project(x - p).squaredNorm());
}

} // namespace bubblescope
