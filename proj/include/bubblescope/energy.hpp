#pragma once

#include "core.hpp"
#include "fields.hpp"
#include "geometry.hpp"
#include "mollifier.hpp"
#include "quadrature.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <type_traits>

namespace bubblescope {

/// Mollifier scale R plus quadrature settings; one mollifier per ambient dimension.
class Engine {
public:
    explicit Engine(double R = 20.0, QuadratureSpec q = {}) : R_(R), quad_(q)
    {
        for (int m = 1; m <= kMaxDim; ++m) mols_[m] = std::make_shared<HeatMollifier>(m, R);
    }
    double R() const { return R_; }
    const QuadratureSpec& quad() const { return quad_; }
    QuadratureSpec& quad() { return quad_; }
    const HeatMollifier& mol(int m) const
    {
        if (m < 1 || m > kMaxDim) throw Error(Errc::DimensionMismatch, "no mollifier for this dimension");
        return *mols_[m];
    }
    Json mollifier_json(int m) const
    {
        const HeatMollifier& h = mol(m);
        return Json{{"m", m}, {"R", R_}, {"c_m", h.c()}, {"c_m_nodes", h.normalization_nodes()}, {"tail", "hermite-quadratic C1"}};
    }

private:
    double R_;
    QuadratureSpec quad_;
    std::array<std::shared_ptr<HeatMollifier>, kMaxDim + 1> mols_;
};

enum class PartialKind { L, Normal, Angular, Perp };

inline const char* partial_kind_name(PartialKind k)
{
    switch (k) {
    case PartialKind::L: return "L";
    case PartialKind::Normal: return "n_perp";
    case PartialKind::Angular: return "alpha_perp";
    case PartialKind::Perp: return "L_perp";
    }
    return "?";
}

struct EnergyReport {
    Vec x;
    double r = 0.0;
    double theta = 0.0;
    double pinching = 0.0;
    double pinching_raw = 0.0;
    bool pinching_flagged = false;
    Mat Q;
    Vec grad_direct;
    Vec grad_stationary;
    bool has_plane = false;
    // partial energies w.r.t. the supplied plane
    double part_L = 0.0, part_n = 0.0, part_alpha = 0.0, part_perp = 0.0;
    // restricted (rho_hat) variants
    double hat_full = 0.0, hat_L = 0.0, hat_n = 0.0, hat_alpha = 0.0, hat_perp = 0.0;

    double partial(PartialKind k) const
    {
        switch (k) {
        case PartialKind::L: return part_L;
        case PartialKind::Normal: return part_n;
        case PartialKind::Angular: return part_alpha;
        case PartialKind::Perp: return part_perp;
        }
        return 0.0;
    }
};

namespace detail {

enum Slot : int { kTheta = 0, kPinch, kPartL, kPartN, kPartA, kPartP, kHatF, kHatL, kHatN, kHatA, kHatP, kFixed };

inline void check_ball(const MapField& f, const Vec& x, double r, const Engine& eng)
{
    if (x.size() != f.dim()) throw Error(Errc::DimensionMismatch, "point dimension differs from field dimension");
    HeatMollifier::check_scale(r);
    if (!f.contains_ball(x, eng.mol(f.dim()).support_radius(r))) throw Error(Errc::DomainEscape, "support ball leaves the field domain");
}

} // namespace detail

/// Full energy report at (x, r): theta, pinching, Q, both gradient modes and, when
/// a plane is given, partial and restricted energies relative to x + L.
inline EnergyReport energy_report(const MapField& f, const Vec& x, double r, const Engine& eng,
                                  const Plane* plane = nullptr)
{
    using namespace detail;
    check_ball(f, x, r, eng);
    const int m = f.dim();
    const HeatMollifier& mol = eng.mol(m);
    const double radius = mol.support_radius(r);
    const double rm = std::pow(r, -m);
    const double r2 = r * r;
    const double inv2r2 = 1.0 / (2.0 * r2);
    const double e2R = std::exp(2.0 * mol.R());
    const double tmax = mol.R() + 2.0;
    const std::size_t oQ = kFixed, oGD = oQ + m * m, oGS = oGD + m, width = oGS + m;
    Mat Pp;
    Mat C;
    bool codim2 = false;
    if (plane) {
        if (plane->ambient() != m) throw Error(Errc::DimensionMismatch, "plane ambient dimension differs from field dimension");
        Pp = plane->projector();
        C = plane->perp_basis();
        codim2 = plane->dim() == m - 2;
    }
    auto kernel = [&]<int M>(std::integral_constant<int, M>) -> NodeFn {
        using VM = Eigen::Matrix<double, M, 1>;
        using MM = Eigen::Matrix<double, M, M>;
        const VM xf = x;
        MM Pf = MM::Zero();
        Eigen::Matrix<double, M, 2> Cf = Eigen::Matrix<double, M, 2>::Zero();
        if (plane) {
            Pf = Pp;
            if (codim2) Cf = C;
        }
        return [&, xf, Pf, Cf](const Vec& y, const FieldSample* s, double w, double* acc) {
            const VM d = VM(y) - xf;
            const double t = d.squaredNorm() * inv2r2;
            if (t >= tmax) return;
            double k, kd;
            mol.rho_pair(t, k, kd);
            k *= rm;
            kd *= rm;
            const Eigen::Matrix<double, M, 3> J = s->J.topLeftCorner(M, 3);
            const MM G = J * J.transpose();
            const double trG = G.trace();
            const VM Gd = G * d;
            acc[kTheta] += w * r2 * k * trG;
            acc[kPinch] += w * (-2.0) * kd * d.dot(Gd);
            for (int i = 0; i < M; ++i) {
                for (int j = 0; j < M; ++j) acc[oQ + i * M + j] += w * r2 * k * G(i, j);
                acc[oGD + i] += w * kd * (-d(i)) * trG;
                acc[oGS + i] += w * 2.0 * kd * (-Gd(i));
            }
            if (plane) {
                const VM wp = d - Pf * d;
                const double wp2 = wp.squaredNorm();
                const double trPG = (Pf * G).trace();
                const double pn = wp.dot(G * wp);
                const double pp = wp2 * (trG - trPG);
                double pa = 0.0;
                if (codim2) {
                    const double a = wp.dot(Cf.col(0)), b = wp.dot(Cf.col(1));
                    const VM va = -b * Cf.col(0) + a * Cf.col(1);
                    pa = va.dot(G * va);
                }
                const double kh = k * psi_hat(e2R * wp2 * inv2r2);
                acc[kPartL] += w * r2 * k * trPG;
                acc[kPartN] += w * k * pn;
                acc[kPartA] += w * k * pa;
                acc[kPartP] += w * k * pp;
                acc[kHatF] += w * r2 * kh * trG;
                acc[kHatL] += w * r2 * kh * trPG;
                acc[kHatN] += w * kh * pn;
                acc[kHatA] += w * kh * pa;
                acc[kHatP] += w * kh * pp;
            }
        };
    };
    NodeFn fn;
    switch (m) {
    case 1: fn = kernel(std::integral_constant<int, 1>{}); break;
    case 2: fn = kernel(std::integral_constant<int, 2>{}); break;
    case 3: fn = kernel(std::integral_constant<int, 3>{}); break;
    default: fn = kernel(std::integral_constant<int, 4>{}); break;
    }
    const auto v = integrate_field_ball(f, x, radius, r, eng.quad(), width, fn);
    EnergyReport rep;
    rep.x = x;
    rep.r = r;
    rep.theta = v[kTheta];
    rep.pinching_raw = v[kPinch];
    rep.pinching = v[kPinch];
    if (rep.pinching < 0.0) {
        if (rep.pinching >= -1e-10) {
            rep.pinching = 0.0;
        } else {
            rep.pinching_flagged = true;
        }
    }
    rep.Q.resize(m, m);
    rep.grad_direct.resize(m);
    rep.grad_stationary.resize(m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) rep.Q(i, j) = v[oQ + i * m + j];
        rep.grad_direct(i) = v[oGD + i];
        rep.grad_stationary(i) = v[oGS + i];
    }
    rep.Q = 0.5 * (rep.Q + rep.Q.transpose()).eval();
    if (plane) {
        rep.has_plane = true;
        rep.part_L = v[kPartL];
        rep.part_n = v[kPartN];
        rep.part_alpha = v[kPartA];
        rep.part_perp = v[kPartP];
        rep.hat_full = v[kHatF];
        rep.hat_L = v[kHatL];
        rep.hat_n = v[kHatN];
        rep.hat_alpha = v[kHatA];
        rep.hat_perp = v[kHatP];
    }
    return rep;
}

inline double theta(const MapField& f, const Vec& x, double r, const Engine& eng) { return energy_report(f, x, r, eng).theta; }

inline double pinching(const MapField& f, const Vec& x, double r, const Engine& eng)
{
    return energy_report(f, x, r, eng).pinching;
}

inline double partial_energy(const MapField& f, const Vec& x, double r, const Plane& L, PartialKind kind, const Engine& eng)
{
    if ((kind == PartialKind::Angular) && L.dim() != f.dim() - 2)
        throw Error(Errc::DimensionMismatch, "angular partial energy needs a codimension-2 plane");
    return energy_report(f, x, r, eng, &L).partial(kind);
}

enum class RestrictedKind { Full, Normal, Angular };

inline double restricted_energy(const MapField& f, const Vec& x, double r, const Plane& L, RestrictedKind kind, const Engine& eng)
{
    if (L.dim() != f.dim() - 2) throw Error(Errc::DimensionMismatch, "restricted energies need a codimension-2 plane");
    const EnergyReport rep = energy_report(f, x, r, eng, &L);
    switch (kind) {
    case RestrictedKind::Full: return rep.hat_full;
    case RestrictedKind::Normal: return rep.hat_n;
    case RestrictedKind::Angular: return rep.hat_alpha;
    }
    return 0.0;
}

struct EnergyTensor {
    Mat Q;
    Vec x;
    double r = 0.0;
    Vec values;   // descending
    Mat vectors;  // columns
    double theta() const { return Q.trace(); }
};

inline EnergyTensor make_energy_tensor(const EnergyReport& rep)
{
    EnergyTensor T;
    T.Q = rep.Q;
    T.x = rep.x;
    T.r = rep.r;
    const SymEigen e = jacobi_eigen(rep.Q);
    T.values = e.values;
    T.vectors = e.vectors;
    return T;
}

inline EnergyTensor energy_tensor(const MapField& f, const Vec& x, double r, const Engine& eng)
{
    return make_energy_tensor(energy_report(f, x, r, eng));
}

enum class GradientMode { Direct, Stationary };

inline Vec theta_gradient(const MapField& f, const Vec& x, double r, GradientMode mode, const Engine& eng)
{
    const EnergyReport rep = energy_report(f, x, r, eng);
    return mode == GradientMode::Direct ? rep.grad_direct : rep.grad_stationary;
}

/// E_alpha = s^2 times the circle average of |<grad u, alpha_perp>|^2 through y.
inline double angular_energy(const MapField& f, const AffinePlane& ap, const Vec& y, int n_circle = 48)
{
    const PerpPolar pp = perp_polar(ap, y);
    const Mat& C = ap.plane.perp_basis();
    const double avg = circle_average(
        [&](const Vec& z) {
            const Vec w = ap.plane.project_perp(z - ap.base);
            const double a = w.dot(C.col(0)), b = w.dot(C.col(1));
            const double s = std::hypot(a, b);
            const Vec al = (-b * C.col(0) + a * C.col(1)) / s;
            const Jac J = f.jacobian(z);
            return (J.transpose() * al).squaredNorm();
        },
        ap, pp.y_L, pp.s, n_circle);
    return pp.s * pp.s * avg;
}

struct SubharmonicityResult {
    double E_alpha = 0.0;
    double laplacian = 0.0;
    double ratio = 0.0;
};

/// Finite-difference conformal Laplacian (d/d ln s)^2 + s^2 Delta_L of E_alpha at y.
/// The annular window is s in [e^{-R} r, R r].
inline SubharmonicityResult subharmonicity_probe(const MapField& f, const AffinePlane& ap, const Vec& y, double h_log,
                                                 double r, double R, int n_circle = 48)
{
    const PerpPolar pp = perp_polar(ap, y);
    const double s = pp.s;
    const double lo = std::exp(-R) * r, hi = R * r;
    if (s * std::exp(-2.0 * h_log) < lo || s * std::exp(2.0 * h_log) > hi)
        throw Error(Errc::StencilEscape, "log-scale stencil leaves the annular window");
    const Mat& B = ap.plane.basis();
    auto E = [&](const Vec& yL, double ss) {
        const Vec z = ap.base + yL + ss * pp.n;
        return angular_energy(f, ap, z, n_circle);
    };
    auto d2 = [](double fm2, double fm1, double f0, double fp1, double fp2, double h) {
        return (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * h * h);
    };
    SubharmonicityResult out;
    const double f0 = E(pp.y_L, s);
    out.E_alpha = f0;
    double lap = d2(E(pp.y_L, s * std::exp(-2 * h_log)), E(pp.y_L, s * std::exp(-h_log)), f0,
                    E(pp.y_L, s * std::exp(h_log)), E(pp.y_L, s * std::exp(2 * h_log)), h_log);
    const double hL = h_log * s;
    for (int j = 0; j < B.cols(); ++j) {
        const Vec e = B.col(j);
        lap += s * s * d2(E(pp.y_L - 2 * hL * e, s), E(pp.y_L - hL * e, s), f0, E(pp.y_L + hL * e, s), E(pp.y_L + 2 * hL * e, s), hL);
    }
    out.laplacian = lap;
    out.ratio = f0 != 0.0 ? lap / f0 : 0.0;
    return out;
}

} // namespace bubblescope
