#pragma once

#include "core.hpp"
#include "geometry.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <vector>

namespace bubblescope {

using Json = nlohmann::ordered_json;
using cplx = std::complex<double>;

struct FieldSample {
    Vec3 u;
    Jac J;
};

/// Where a field concentrates energy: an (m-2)-dimensional axis, optionally
/// sheared by a perpendicular offset depending on the axis coordinates.
struct Concentration {
    bool present = false;
    Vec base;
    Mat L;  // m x (m-2), orthonormal
    Mat P;  // m x 2, orthonormal basis of the perpendicular plane
    std::function<Eigen::Vector2d(const Vec& t)> shift;
    double scale = 1.0;
    bool l_invariant = false;
};

class MapField {
public:
    virtual ~MapField() = default;
    virtual int dim() const = 0;
    virtual FieldSample sample(const Vec& y) const = 0;
    virtual Vec3 value(const Vec& y) const { return sample(y).u; }
    virtual Jac jacobian(const Vec& y) const { return sample(y).J; }
    virtual std::vector<Vec> singular_points() const { return {}; }
    virtual Concentration concentration() const { return {}; }
    virtual Json metadata() const = 0;
    /// Whether the closed ball lies inside the domain of definition.
    virtual bool contains_ball(const Vec&, double) const { return true; }
    /// True when u(c + t v) = u(c + v) for t > 0 about every singular point c.
    virtual bool homogeneous0() const { return false; }
};

using FieldPtr = std::shared_ptr<const MapField>;

struct BubbleParams {
    double lambda = 1.0;
    Eigen::Vector2d center = Eigen::Vector2d::Zero();
    int orientation = 1;
};

inline void check_bubble_params(const BubbleParams& p)
{
    if (!(p.lambda > 0.0) || !std::isfinite(p.lambda)) throw Error(Errc::InvalidArgument, "bubble lambda must be positive");
    if (p.orientation != 1 && p.orientation != -1) throw Error(Errc::InvalidArgument, "bubble orientation must be +1 or -1");
}

/// Inverse stereographic projection z -> S^2 and its 3x2 Jacobian.
inline Vec3 stereo(const Eigen::Vector2d& z)
{
    const double q = 1.0 + z.squaredNorm();
    return Vec3(2.0 * z(0) / q, 2.0 * z(1) / q, 1.0 - 2.0 / q);
}

inline Eigen::Matrix<double, 3, 2> stereo_jac(const Eigen::Vector2d& z)
{
    const double q = 1.0 + z.squaredNorm();
    const double q2 = q * q;
    Eigen::Matrix<double, 3, 2> D;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) D(j, i) = 2.0 * (i == j ? 1.0 : 0.0) / q - 4.0 * z(j) * z(i) / q2;
        D(2, i) = 4.0 * z(i) / q2;
    }
    return D;
}

/// Planar bubble b(w) = S((w - c)/lambda), second coordinate flipped for orientation -1.
struct PlanarBubble {
    BubbleParams p;

    Eigen::Vector2d chart(const Eigen::Vector2d& w) const
    {
        Eigen::Vector2d z = (w - p.center) / p.lambda;
        if (p.orientation < 0) z(1) = -z(1);
        return z;
    }
    Vec3 value(const Eigen::Vector2d& w) const { return stereo(chart(w)); }
    /// Columns are d/dw_1, d/dw_2.
    Eigen::Matrix<double, 3, 2> jac(const Eigen::Vector2d& w) const
    {
        Eigen::Matrix<double, 3, 2> D = stereo_jac(chart(w)) / p.lambda;
        if (p.orientation < 0) D.col(1) = -D.col(1);
        return D;
    }
    double density(const Eigen::Vector2d& w) const
    {
        const double l2 = p.lambda * p.lambda;
        return 8.0 * l2 / sqr(l2 + (w - p.center).squaredNorm());
    }
};

inline Json bubble_json(const BubbleParams& p)
{
    return Json{{"lambda", p.lambda}, {"center", {p.center(0), p.center(1)}}, {"orientation", p.orientation}};
}

class ConstantField final : public MapField {
public:
    ConstantField(int m, Vec3 value) : m_(m), u_(value.normalized()) {}
    int dim() const override { return m_; }
    FieldSample sample(const Vec&) const override { return {u_, Jac::Zero(m_, 3)}; }
    Json metadata() const override { return Json{{"family", "constant"}, {"m", m_}, {"value", {u_(0), u_(1), u_(2)}}}; }

private:
    int m_;
    Vec3 u_;
};

class StandardBubble final : public MapField {
public:
    explicit StandardBubble(BubbleParams p) : b_{p} { check_bubble_params(p); }
    int dim() const override { return 2; }
    FieldSample sample(const Vec& y) const override
    {
        const Eigen::Vector2d w(y(0), y(1));
        FieldSample s;
        s.u = b_.value(w);
        s.J = b_.jac(w).transpose();
        return s;
    }
    Concentration concentration() const override
    {
        Concentration c;
        c.present = true;
        c.base = make_vec({b_.p.center(0), b_.p.center(1)});
        c.L = Mat(2, 0);
        c.P = Mat::Identity(2, 2);
        c.scale = b_.p.lambda;
        c.l_invariant = true;
        return c;
    }
    Json metadata() const override
    {
        Json j{{"family", "standard_bubble"}, {"m", 2}};
        j["bubble"] = bubble_json(b_.p);
        return j;
    }
    const PlanarBubble& bubble() const { return b_; }

private:
    PlanarBubble b_;
};

/// U(x) = b(x_1, x_2); invariant along span(e_3, ..., e_m).
class ProductBubble final : public MapField {
public:
    ProductBubble(int m, BubbleParams p) : m_(m), b_{p}
    {
        if (m != 3 && m != 4) throw Error(Errc::InvalidArgument, "product_bubble needs m in {3,4}");
        check_bubble_params(p);
    }
    int dim() const override { return m_; }
    FieldSample sample(const Vec& y) const override
    {
        const Eigen::Vector2d w(y(0), y(1));
        FieldSample s;
        s.u = b_.value(w);
        s.J = Jac::Zero(m_, 3);
        s.J.topRows(2) = b_.jac(w).transpose();
        return s;
    }
    Concentration concentration() const override
    {
        Concentration c;
        c.present = true;
        c.base = Vec::Zero(m_);
        c.base(0) = b_.p.center(0);
        c.base(1) = b_.p.center(1);
        c.L = Mat::Zero(m_, m_ - 2);
        for (int j = 0; j < m_ - 2; ++j) c.L(2 + j, j) = 1.0;
        c.P = Mat::Zero(m_, 2);
        c.P(0, 0) = c.P(1, 1) = 1.0;
        c.scale = b_.p.lambda;
        c.l_invariant = true;
        return c;
    }
    Json metadata() const override
    {
        Json j{{"family", "product_bubble"}, {"m", m_}};
        j["bubble"] = bubble_json(b_.p);
        return j;
    }
    const PlanarBubble& bubble() const { return b_; }

private:
    int m_;
    PlanarBubble b_;
};

enum class ConeVariant { Balanced, Literal };

/// Degree-2 family on CP^1 extended 0-homogeneously to R^3. Literal is
/// [z0 z1, lam z0^2 + z0 z1 + lam z1^2]; Balanced drops the middle z0 z1 term, which makes the
/// energy density invariant under w -> -w so the vertex flux of the stress tensor vanishes.
class ConeMap final : public MapField {
public:
    explicit ConeMap(double lambda, ConeVariant v = ConeVariant::Balanced)
        : lam_(lambda), variant_(v), c0_(v == ConeVariant::Literal ? 1.0 : 0.0)
    {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(Errc::InvalidArgument, "cone_map lambda must be nonnegative");
    }
    int dim() const override { return 3; }

    FieldSample sample(const Vec& x) const override
    {
        const double rx = x.norm();
        if (rx == 0.0) throw Error(Errc::SingularPoint, "cone_map evaluated at the origin");
        // chart on the domain sphere: w from the north pole, v = 1/w from the south pole
        cplx w;
        std::array<cplx, 3> dw;
        if (x(2) <= 0.0) {
            const double den = rx - x(2);
            w = cplx(x(0), x(1)) / den;
            for (int k = 0; k < 3; ++k) {
                const cplx e = cplx(k == 0 ? 1.0 : 0.0, k == 1 ? 1.0 : 0.0);
                dw[k] = e / den - w * (x(k) / rx - (k == 2 ? 1.0 : 0.0)) / den;
            }
        } else {
            const double den = rx + x(2);
            w = cplx(x(0), -x(1)) / den;
            for (int k = 0; k < 3; ++k) {
                const cplx e = cplx(k == 0 ? 1.0 : 0.0, k == 1 ? -1.0 : 0.0);
                dw[k] = e / den - w * (x(k) / rx + (k == 2 ? 1.0 : 0.0)) / den;
            }
        }
        // zeta = c0 + lam (w + 1/w) is symmetric under w -> 1/w
        const cplx den = lam_ + c0_ * w + lam_ * w * w;
        FieldSample s;
        s.J.resize(3, 3);
        if (std::abs(den) > std::abs(w)) {
            // |zeta| > 1: use eta = 1/zeta and the reflected chart
            const cplx eta = w / den;
            const cplx deta = (lam_ - lam_ * w * w) / (den * den);
            const Eigen::Vector2d e(eta.real(), eta.imag());
            Vec3 u = stereo(e);
            Eigen::Matrix<double, 3, 2> D = stereo_jac(e);
            u(1) = -u(1);
            u(2) = -u(2);
            D.row(1) = -D.row(1);
            D.row(2) = -D.row(2);
            s.u = u;
            for (int k = 0; k < 3; ++k) {
                const cplx d = deta * dw[k];
                s.J.row(k) = (D.col(0) * d.real() + D.col(1) * d.imag()).transpose();
            }
        } else {
            const cplx zeta = den / w;
            const cplx dz = lam_ * (1.0 - 1.0 / (w * w));
            const Eigen::Vector2d z(zeta.real(), zeta.imag());
            s.u = stereo(z);
            const Eigen::Matrix<double, 3, 2> D = stereo_jac(z);
            for (int k = 0; k < 3; ++k) {
                const cplx d = dz * dw[k];
                s.J.row(k) = (D.col(0) * d.real() + D.col(1) * d.imag()).transpose();
            }
        }
        return s;
    }
    std::vector<Vec> singular_points() const override { return {Vec::Zero(3)}; }
    bool homogeneous0() const override { return true; }
    Concentration concentration() const override
    {
        Concentration c;
        c.present = lam_ > 0.0;
        c.base = Vec::Zero(3);
        c.L = Mat::Zero(3, 1);
        c.L(2, 0) = 1.0;
        c.P = Mat::Zero(3, 2);
        c.P(0, 0) = c.P(1, 1) = 1.0;
        c.scale = 0.25 * lam_;
        c.l_invariant = false;
        return c;
    }
    Json metadata() const override
    {
        return Json{{"family", "cone_map"}, {"m", 3}, {"lambda", lam_}, {"variant", variant_ == ConeVariant::Literal ? "literal" : "balanced"}};
    }
    double lambda() const { return lam_; }
    ConeVariant variant() const { return variant_; }

private:
    double lam_;
    ConeVariant variant_;
    double c0_;
};

/// Center curve of the bent family; default tau(t) = a (sin(t_1/2), 0).
struct CenterCurve {
    double a = 0.0;
    double freq = 0.5;
    Eigen::Vector2d value(const Vec& t) const { return Eigen::Vector2d(a * std::sin(freq * t(0)), 0.0); }
    /// Row j holds d tau / d t_j.
    Eigen::Matrix<double, Eigen::Dynamic, 2, 0, kMaxDim, 2> grad(const Vec& t) const
    {
        Eigen::Matrix<double, Eigen::Dynamic, 2, 0, kMaxDim, 2> g = Eigen::Matrix<double, Eigen::Dynamic, 2, 0, kMaxDim, 2>::Zero(t.size(), 2);
        g(0, 0) = a * freq * std::cos(freq * t(0));
        return g;
    }
    Eigen::Vector2d second(const Vec& t) const { return Eigen::Vector2d(-a * freq * freq * std::sin(freq * t(0)), 0.0); }
};

/// U(y) = b(y_perp - tau(y_L)); not harmonic for a != 0.
class BentBubble final : public MapField {
public:
    BentBubble(int m, BubbleParams p, CenterCurve tau) : m_(m), b_{p}, tau_(tau)
    {
        if (m != 3 && m != 4) throw Error(Errc::InvalidArgument, "bent_bubble needs m in {3,4}");
        check_bubble_params(p);
        if (!(tau.a >= 0.0)) throw Error(Errc::InvalidArgument, "bent_bubble amplitude must be nonnegative");
        if (tau.freq > 1.0) throw Error(Errc::InvalidArgument, "bent_bubble frequency above 1 breaks |tau''| <= a");
    }
    int dim() const override { return m_; }
    FieldSample sample(const Vec& y) const override
    {
        const Vec t = y.tail(m_ - 2);
        const Eigen::Vector2d w = Eigen::Vector2d(y(0), y(1)) - tau_.value(t);
        const Eigen::Matrix<double, 3, 2> D = b_.jac(w);
        const auto g = tau_.grad(t);
        FieldSample s;
        s.u = b_.value(w);
        s.J.resize(m_, 3);
        s.J.topRows(2) = D.transpose();
        for (int j = 0; j < m_ - 2; ++j) s.J.row(2 + j) = -(D * g.row(j).transpose()).transpose();
        return s;
    }
    Concentration concentration() const override
    {
        Concentration c;
        c.present = true;
        c.base = Vec::Zero(m_);
        c.base(0) = b_.p.center(0);
        c.base(1) = b_.p.center(1);
        c.L = Mat::Zero(m_, m_ - 2);
        for (int j = 0; j < m_ - 2; ++j) c.L(2 + j, j) = 1.0;
        c.P = Mat::Zero(m_, 2);
        c.P(0, 0) = c.P(1, 1) = 1.0;
        const CenterCurve tau = tau_;
        c.shift = [tau](const Vec& t) { return tau.value(t); };
        c.scale = b_.p.lambda;
        c.l_invariant = false;
        return c;
    }
    Json metadata() const override
    {
        Json j{{"family", "bent_bubble"}, {"m", m_}};
        j["bubble"] = bubble_json(b_.p);
        j["tau"] = Json{{"amplitude", tau_.a}, {"frequency", tau_.freq}, {"form", "a*(sin(freq*t1), 0)"}};
        return j;
    }
    /// True center set point above the axis coordinates t.
    Vec center_point(const Vec& t) const
    {
        Vec p(m_);
        const Eigen::Vector2d c = b_.p.center + tau_.value(t);
        p(0) = c(0);
        p(1) = c(1);
        p.tail(m_ - 2) = t;
        return p;
    }
    const CenterCurve& curve() const { return tau_; }
    const PlanarBubble& bubble() const { return b_; }

private:
    int m_;
    PlanarBubble b_;
    CenterCurve tau_;
};

/// U_R(y) = U(R^T y) for an orthogonal R.
class RotatedField final : public MapField {
public:
    RotatedField(FieldPtr base, Mat R) : base_(std::move(base)), R_(std::move(R))
    {
        if (R_.rows() != base_->dim() || R_.cols() != base_->dim()) throw Error(Errc::DimensionMismatch, "rotation size differs from field dimension");
    }
    int dim() const override { return base_->dim(); }
    FieldSample sample(const Vec& y) const override
    {
        FieldSample s = base_->sample(R_.transpose() * y);
        s.J = R_ * s.J;
        return s;
    }
    std::vector<Vec> singular_points() const override
    {
        std::vector<Vec> out;
        for (const Vec& p : base_->singular_points()) out.push_back(R_ * p);
        return out;
    }
    Concentration concentration() const override
    {
        Concentration c = base_->concentration();
        if (!c.present) return c;
        c.base = R_ * c.base;
        c.L = R_ * c.L;
        c.P = R_ * c.P;
        return c;
    }
    bool contains_ball(const Vec& x, double rad) const override { return base_->contains_ball(R_.transpose() * x, rad); }
    bool homogeneous0() const override { return base_->homogeneous0(); }
    Json metadata() const override
    {
        Json j{{"family", "rotated"}};
        j["base"] = base_->metadata();
        Json rows = Json::array();
        for (int i = 0; i < R_.rows(); ++i) {
            Json row = Json::array();
            for (int k = 0; k < R_.cols(); ++k) row.push_back(R_(i, k));
            rows.push_back(row);
        }
        j["rotation"] = rows;
        return j;
    }

private:
    FieldPtr base_;
    Mat R_;
};

/// Pull-back of a 0-homogeneous field on R^3 to the plane through the stereographic
/// chart of the unit sphere from the pole `from` (conformal, so Dirichlet energy is kept).
class LinkChart final : public MapField {
public:
    LinkChart(FieldPtr cone, Vec3 from) : cone_(std::move(cone)), p_(from.normalized())
    {
        if (cone_->dim() != 3) throw Error(Errc::DimensionMismatch, "link chart needs a field on R^3");
        Vec3 a = std::abs(p_(0)) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
        e1_ = (a - a.dot(p_) * p_).normalized();
        e2_ = p_.cross(e1_);
    }
    int dim() const override { return 2; }
    /// Point of the unit sphere over chart coordinate z.
    Vec3 sphere_point(const Eigen::Vector2d& z) const
    {
        const double q = 1.0 + z.squaredNorm();
        return (2.0 * z(0) * e1_ + 2.0 * z(1) * e2_ + (z.squaredNorm() - 1.0) * p_) / q;
    }
    /// Chart coordinate of a sphere point other than the projection pole.
    Eigen::Vector2d chart(const Vec3& w) const
    {
        const Vec3 n = w.normalized();
        const double den = 1.0 - n.dot(p_);
        return Eigen::Vector2d(n.dot(e1_) / den, n.dot(e2_) / den);
    }
    FieldSample sample(const Vec& y) const override
    {
        const Eigen::Vector2d z(y(0), y(1));
        const double q = 1.0 + z.squaredNorm();
        const Vec3 w = sphere_point(z);
        Eigen::Matrix<double, 3, 2> Dw;
        for (int i = 0; i < 2; ++i) {
            const Vec3 ei = i == 0 ? e1_ : e2_;
            Dw.col(i) = (2.0 * ei + 2.0 * z(i) * p_) / q - 2.0 * z(i) * w / q;
        }
        Vec x(3);
        x << w(0), w(1), w(2);
        FieldSample c = cone_->sample(x);
        FieldSample s;
        s.u = c.u;
        s.J.resize(2, 3);
        for (int i = 0; i < 2; ++i) s.J.row(i) = Dw.col(i).transpose() * c.J;
        return s;
    }
    Json metadata() const override
    {
        Json j{{"family", "link_chart"}, {"m", 2}, {"pole", {p_(0), p_(1), p_(2)}}};
        j["base"] = cone_->metadata();
        return j;
    }

private:
    FieldPtr cone_;
    Vec3 p_, e1_, e2_;
};

/// Restriction of a field to the 2-D affine slice origin + E w; the Jacobian keeps the
/// tangential partials E^T grad u.
class SliceField final : public MapField {
public:
    SliceField(FieldPtr base, Vec origin, Mat E) : base_(std::move(base)), o_(std::move(origin)), E_(std::move(E))
    {
        if (o_.size() != base_->dim() || E_.rows() != base_->dim() || E_.cols() != 2)
            throw Error(Errc::DimensionMismatch, "slice frame does not match the field dimension");
        if ((E_.transpose() * E_ - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() > 1e-10)
            throw Error(Errc::InvalidArgument, "slice frame must be orthonormal");
    }
    int dim() const override { return 2; }
    Vec lift(const Vec& w) const { return o_ + E_ * w; }
    FieldSample sample(const Vec& w) const override
    {
        FieldSample s = base_->sample(lift(w));
        FieldSample out;
        out.u = s.u;
        out.J = E_.transpose() * s.J;
        return out;
    }
    std::vector<Vec> singular_points() const override
    {
        std::vector<Vec> out;
        for (const Vec& p : base_->singular_points()) {
            const Vec w = E_.transpose() * (p - o_);
            if ((lift(w) - p).norm() < 1e-12) out.push_back(w);
        }
        return out;
    }
    bool contains_ball(const Vec& x, double rad) const override { return base_->contains_ball(lift(x), rad); }
    Json metadata() const override
    {
        Json j{{"family", "slice"}};
        j["base"] = base_->metadata();
        j["origin"] = std::vector<double>(o_.data(), o_.data() + o_.size());
        Json cols = Json::array();
        for (int c = 0; c < 2; ++c) {
            const Vec v = E_.col(c);
            cols.push_back(std::vector<double>(v.data(), v.data() + v.size()));
        }
        j["frame"] = cols;
        return j;
    }
    const Vec& origin() const { return o_; }
    const Mat& frame() const { return E_; }

private:
    FieldPtr base_;
    Vec o_;
    Mat E_;
};

inline FieldPtr make_constant(int m, Vec3 v = Vec3::UnitZ()) { return std::make_shared<ConstantField>(m, v); }
inline FieldPtr make_standard_bubble(BubbleParams p) { return std::make_shared<StandardBubble>(p); }
inline FieldPtr make_product_bubble(int m, BubbleParams p) { return std::make_shared<ProductBubble>(m, p); }
inline FieldPtr make_cone_map(double lambda, ConeVariant v = ConeVariant::Balanced) { return std::make_shared<ConeMap>(lambda, v); }
inline FieldPtr make_bent_bubble(int m, BubbleParams p, double a, double freq = 0.5)
{
    return std::make_shared<BentBubble>(m, p, CenterCurve{a, freq});
}

inline BubbleParams bubble_params(double lambda, double cx = 0.0, double cy = 0.0, int orientation = 1)
{
    BubbleParams p;
    p.lambda = lambda;
    p.center = Eigen::Vector2d(cx, cy);
    p.orientation = orientation;
    return p;
}

/// Energy density |grad u|^2 at y.
inline double energy_density(const MapField& f, const Vec& y) { return f.jacobian(y).squaredNorm(); }

} // namespace bubblescope
