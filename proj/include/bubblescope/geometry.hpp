#pragma once

#include "core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace bubblescope {

/// Symmetric eigendecomposition, eigenvalues sorted descending.
struct SymEigen {
    Vec values;
    Mat vectors; // column i belongs to values(i)
    int sweeps = 0;
};

/// Cyclic Jacobi with a fixed (p,q) sweep order.
inline SymEigen jacobi_eigen(const Mat& A_in, int max_sweeps = 50)
{
    const int n = static_cast<int>(A_in.rows());
    if (A_in.cols() != n) throw Error(Errc::DimensionMismatch, "jacobi_eigen needs a square matrix");
    Mat A = 0.5 * (A_in + A_in.transpose());
    Mat V = Mat::Identity(n, n);
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        double off = 0.0, diag = 0.0;
        for (int p = 0; p < n; ++p) {
            diag += sqr(A(p, p));
            for (int q = p + 1; q < n; ++q) off += sqr(A(p, q));
        }
        if (off == 0.0 || off <= 1e-32 * diag) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = A(p, q);
                if (apq == 0.0) continue;
                const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
                A(p, q) = A(q, p) = 0.0;
                for (int k = 0; k < n; ++k) {
                    const double vkp = V(k, p), vkq = V(k, q);
                    V(k, p) = c * vkp - s * vkq;
                    V(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::array<int, kMaxDim> idx{};
    for (int i = 0; i < n; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.begin() + n, [&](int a, int b) { return A(a, a) > A(b, b); });
    SymEigen out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (int i = 0; i < n; ++i) {
        out.values(i) = A(idx[i], idx[i]);
        Vec v = V.col(idx[i]);
        // deterministic sign: largest-magnitude component positive
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0) v = -v;
        out.vectors.col(i) = v;
    }
    out.sweeps = sweep;
    return out;
}

/// k-dimensional linear subspace of R^m with orthonormal basis, projector and
/// an ordered orthonormal basis of the complement.
class Plane {
public:
    Plane() = default;

    int ambient() const { return m_; }
    int dim() const { return k_; }
    const Mat& basis() const { return basis_; }         // m x k
    const Mat& perp_basis() const { return perp_; }     // m x (m-k)
    const Mat& projector() const { return proj_; }
    Mat perp_projector() const { return Mat::Identity(m_, m_) - proj_; }

    Vec project(const Vec& v) const { return proj_ * v; }
    Vec project_perp(const Vec& v) const { return v - proj_ * v; }

    static Plane from_orthonormal(int m, const Mat& basis)
    {
        Plane p;
        p.m_ = m;
        p.k_ = static_cast<int>(basis.cols());
        p.basis_ = basis;
        p.proj_ = basis * basis.transpose();
        if (p.k_ == 0) p.proj_ = Mat::Zero(m, m);
        p.build_perp();
        return p;
    }

    /// The complementary subspace, with basis taken from perp_basis().
    Plane complement() const { return from_orthonormal(m_, perp_); }

private:
    void build_perp()
    {
        perp_.resize(m_, m_ - k_);
        Mat acc(m_, m_);
        int have = 0;
        for (int j = 0; j < k_; ++j) acc.col(have++) = basis_.col(j);
        int np = 0;
        for (int i = 0; i < m_ && np < m_ - k_; ++i) {
            Vec v = unit_vec(m_, i);
            for (int pass = 0; pass < 2; ++pass)
                for (int j = 0; j < have; ++j) v -= acc.col(j).dot(v) * acc.col(j);
            const double n = v.norm();
            if (n < 1e-8) continue;
            v /= n;
            acc.col(have++) = v;
            perp_.col(np++) = v;
        }
    }

    int m_ = 0;
    int k_ = 0;
    Mat basis_;
    Mat perp_;
    Mat proj_;
};

/// Orthonormalize by modified Gram-Schmidt with one re-orthogonalization pass.
inline Plane make_plane(int m, const std::vector<Vec>& vectors)
{
    const int k = static_cast<int>(vectors.size());
    if (k > m) throw Error(Errc::DegenerateSpan, "more vectors than ambient dimension");
    Mat A(m, k);
    for (int j = 0; j < k; ++j) {
        if (vectors[j].size() != m) throw Error(Errc::DimensionMismatch, "vector length differs from ambient dimension");
        A.col(j) = vectors[j];
    }
    if (k > 0) {
        const Eigen::MatrixXd Ad = A;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(Ad);
        const Eigen::VectorXd s = svd.singularValues();
        const double scale = std::max(1.0, s(0));
        if (s(k - 1) <= 1e-10 * scale) throw Error(Errc::DegenerateSpan, "vectors are not linearly independent");
    }
    Mat Q(m, k);
    for (int j = 0; j < k; ++j) {
        Vec v = A.col(j);
        for (int pass = 0; pass < 2; ++pass)
            for (int i = 0; i < j; ++i) v -= Q.col(i).dot(v) * Q.col(i);
        Q.col(j) = v / v.norm();
    }
    return Plane::from_orthonormal(m, Q);
}

inline Plane coordinate_plane(int m, std::initializer_list<int> axes)
{
    std::vector<Vec> vs;
    for (int a : axes) vs.push_back(unit_vec(m, a));
    return make_plane(m, vs);
}

/// Operator norm of the projector difference.
inline double grassmann_distance(const Plane& V, const Plane& W)
{
    if (V.ambient() != W.ambient() || V.dim() != W.dim())
        throw Error(Errc::DimensionMismatch, "planes differ in ambient or plane dimension");
    const Mat D = V.projector() - W.projector();
    const SymEigen e = jacobi_eigen(D);
    return std::max(std::abs(e.values(0)), std::abs(e.values(e.values.size() - 1)));
}

struct AffinePlane {
    Plane plane;
    Vec base;
};

struct PerpPolar {
    Vec y_L;
    double s = 0.0;
    Vec n;
    Vec alpha;
};

/// Cylindrical coordinates of y around base + L, codimension 2.
inline PerpPolar perp_polar(const AffinePlane& ap, const Vec& y)
{
    const Plane& L = ap.plane;
    if (L.ambient() - L.dim() != 2) throw Error(Errc::DimensionMismatch, "perp_polar needs a codimension-2 plane");
    const Vec d = y - ap.base;
    PerpPolar out;
    out.y_L = L.project(d);
    const Vec w = d - out.y_L;
    out.s = w.norm();
    if (out.s <= 1e-14) throw Error(Errc::OnAxis, "point lies on the axis plane");
    out.n = w / out.s;
    const Mat& P = L.perp_basis();
    const double a = out.n.dot(P.col(0));
    const double b = out.n.dot(P.col(1));
    out.alpha = -b * P.col(0) + a * P.col(1);
    return out;
}

/// Rotation of R^m taking unit vectors to a random orthonormal frame; used in tests and scenarios.
inline Mat orthonormalize_columns(const Mat& A)
{
    const int m = static_cast<int>(A.rows());
    Mat Q(m, A.cols());
    for (int j = 0; j < A.cols(); ++j) {
        Vec v = A.col(j);
        for (int pass = 0; pass < 2; ++pass)
            for (int i = 0; i < j; ++i) v -= Q.col(i).dot(v) * Q.col(i);
        Q.col(j) = v / v.norm();
    }
    return Q;
}

} // namespace bubblescope
