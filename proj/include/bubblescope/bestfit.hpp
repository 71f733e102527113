#pragma once

#include "core.hpp"
#include "energy.hpp"
#include "fields.hpp"
#include "geometry.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace bubblescope {

struct BestPlaneResult {
    Plane plane;        // span of the m-2 smallest eigenvectors
    Plane complement;   // span of the 2 largest
    double theta_L = 0.0;
    double gap = 0.0;
    double theta = 0.0;
    bool degenerate = false;
    EnergyTensor tensor;
};

/// Best plane from an already computed tensor; throws DegenerateSpectrum when gap/theta <= 1e-6
/// unless `allow_degenerate`.
inline BestPlaneResult best_plane_from(const EnergyTensor& T, bool allow_degenerate = false)
{
    const int m = static_cast<int>(T.Q.rows());
    if (m < 2) throw Error(Errc::DimensionMismatch, "best plane needs m >= 2");
    BestPlaneResult out;
    out.tensor = T;
    out.theta = T.values.sum();
    out.theta_L = 0.0;
    for (int i = 2; i < m; ++i) out.theta_L += T.values(i);
    const double l3 = m > 2 ? T.values(2) : 0.0;
    out.gap = T.values(1) - l3;
    out.degenerate = !(out.theta > 0.0) || out.gap / out.theta <= 1e-6;
    if (out.degenerate && !allow_degenerate)
        throw Error(Errc::DegenerateSpectrum, "eigenvalue gap lambda_2 - lambda_3 too small relative to theta");
    out.plane = Plane::from_orthonormal(m, T.vectors.rightCols(m - 2));
    out.complement = Plane::from_orthonormal(m, T.vectors.leftCols(2));
    return out;
}

inline BestPlaneResult best_plane(const MapField& f, const Vec& x, double r, const Engine& eng, bool allow_degenerate = false)
{
    return best_plane_from(energy_tensor(f, x, r, eng), allow_degenerate);
}

struct ThetaELValue {
    Eigen::Vector2d value = Eigen::Vector2d::Zero();
    double theta = 0.0;
    BestPlaneResult best;
};

/// Theta(z) = r pi_{L_A perp}[pi_perp_{z,r} grad theta(z, r)] in the stored basis of L_A perp.
inline ThetaELValue theta_EL_map(const MapField& f, const Vec& z, double r, const Plane& L_A, const Engine& eng)
{
    const int m = f.dim();
    if (L_A.ambient() != m || L_A.dim() != m - 2) throw Error(Errc::DimensionMismatch, "L_A must be a codimension-2 plane");
    const EnergyReport rep = energy_report(f, z, r, eng);
    ThetaELValue out;
    out.best = best_plane_from(make_energy_tensor(rep));
    out.theta = rep.theta;
    const Vec g = out.best.complement.project(rep.grad_direct);
    const Mat& P = L_A.perp_basis();
    out.value = r * Eigen::Vector2d(P.col(0).dot(g), P.col(1).dot(g));
    return out;
}

enum class NodeStatus { Converged, Copied, Degenerate, Diverged };

inline const char* node_status_name(NodeStatus s)
{
    switch (s) {
    case NodeStatus::Converged: return "converged";
    case NodeStatus::Copied: return "copied";
    case NodeStatus::Degenerate: return "degenerate";
    case NodeStatus::Diverged: return "diverged";
    }
    return "?";
}

/// Graph over a uniform lattice in an affine (m-2)-plane with values in its 2-dimensional
/// complement, stored in the complement's basis; cubic Lagrange interpolation per axis.
class SubmanifoldGraph {
public:
    SubmanifoldGraph() = default;
    SubmanifoldGraph(AffinePlane base, Vec lo, double spacing, std::vector<int> counts, double r)
        : base_(std::move(base)), lo_(std::move(lo)), h_(spacing), n_(std::move(counts)), r_(r)
    {
        const int d = base_.plane.dim();
        if (static_cast<int>(n_.size()) != d || lo_.size() != d) throw Error(Errc::DimensionMismatch, "lattice does not match plane dimension");
        std::size_t total = 1;
        for (int k : n_) total *= static_cast<std::size_t>(std::max(k, 1));
        vals_.assign(total, Eigen::Vector2d::Zero());
        res_.assign(total, 0.0);
        theta_.assign(total, 0.0);
        iters_.assign(total, 0);
        status_.assign(total, NodeStatus::Converged);
    }

    const AffinePlane& base() const { return base_; }
    int param_dim() const { return base_.plane.dim(); }
    double spacing() const { return h_; }
    double scale() const { return r_; }
    const Vec& lo() const { return lo_; }
    const std::vector<int>& counts() const { return n_; }
    std::size_t size() const { return vals_.size(); }

    Vec node_param(std::size_t lin) const
    {
        Vec t(param_dim());
        for (int j = 0; j < param_dim(); ++j) {
            t(j) = lo_(j) + h_ * static_cast<double>(lin % n_[j]);
            lin /= n_[j];
        }
        return t;
    }
    Eigen::Vector2d& value(std::size_t i) { return vals_[i]; }
    const Eigen::Vector2d& value(std::size_t i) const { return vals_[i]; }
    double& residual(std::size_t i) { return res_[i]; }
    double residual(std::size_t i) const { return res_[i]; }
    double& theta_at(std::size_t i) { return theta_[i]; }
    double theta_at(std::size_t i) const { return theta_[i]; }
    int& iterations(std::size_t i) { return iters_[i]; }
    int iterations(std::size_t i) const { return iters_[i]; }
    NodeStatus& status(std::size_t i) { return status_[i]; }
    NodeStatus status(std::size_t i) const { return status_[i]; }

    /// Ambient point base + t + P c for parameters t (coordinates in the plane basis) and value c.
    Vec embed(const Vec& t, const Eigen::Vector2d& c) const
    {
        const Mat& B = base_.plane.basis();
        const Mat& P = base_.plane.perp_basis();
        Vec y = base_.base + P.col(0) * c(0) + P.col(1) * c(1);
        if (param_dim() > 0) y += B * t;
        return y;
    }
    Vec node_point(std::size_t i) const { return embed(node_param(i), vals_[i]); }

    /// Cubic Lagrange interpolation through the 4 nearest nodes per axis (linear with 2 nodes).
    Eigen::Vector2d interpolate(const Vec& t) const
    {
        const int d = param_dim();
        if (d == 0) return vals_[0];
        std::array<std::array<double, 4>, kMaxDim> w{};
        std::array<std::array<int, 4>, kMaxDim> idx{};
        std::array<int, kMaxDim> cnt{};
        for (int j = 0; j < d; ++j) {
            const int n = n_[j];
            const double s = (t(j) - lo_(j)) / h_;
            if (n == 1) {
                cnt[j] = 1;
                idx[j][0] = 0;
                w[j][0] = 1.0;
                continue;
            }
            const int order = std::min(n, 4);
            int k0 = static_cast<int>(std::floor(s)) - (order == 4 ? 1 : 0);
            k0 = std::clamp(k0, 0, n - order);
            cnt[j] = order;
            for (int a = 0; a < order; ++a) {
                idx[j][a] = k0 + a;
                double l = 1.0;
                for (int b = 0; b < order; ++b)
                    if (b != a) l *= (s - (k0 + b)) / static_cast<double>(a - b);
                w[j][a] = l;
            }
        }
        Eigen::Vector2d out = Eigen::Vector2d::Zero();
        std::size_t combos = 1;
        for (int j = 0; j < d; ++j) combos *= cnt[j];
        for (std::size_t c = 0; c < combos; ++c) {
            std::size_t rem = c, lin = 0, stride = 1;
            double ww = 1.0;
            for (int j = 0; j < d; ++j) {
                const int a = static_cast<int>(rem % cnt[j]);
                rem /= cnt[j];
                lin += static_cast<std::size_t>(idx[j][a]) * stride;
                stride *= n_[j];
                ww *= w[j][a];
            }
            out += ww * vals_[lin];
        }
        return out;
    }
    Vec point(const Vec& t) const { return embed(t, interpolate(t)); }

    double sup_norm() const
    {
        double s = 0.0;
        for (const auto& v : vals_) s = std::max(s, v.norm());
        return s;
    }
    /// Largest forward difference quotient |c(t + h e_j) - c(t)| / h.
    double grad_norm() const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < size(); ++i) {
            std::size_t stride = 1, rem = i;
            for (int j = 0; j < param_dim(); ++j) {
                const int k = static_cast<int>(rem % n_[j]);
                rem /= n_[j];
                if (k + 1 < n_[j]) s = std::max(s, (vals_[i + stride] - vals_[i]).norm() / h_);
                stride *= n_[j];
            }
        }
        return s;
    }
    /// Largest second difference quotient along lattice axes.
    double hessian_norm() const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < size(); ++i) {
            std::size_t stride = 1, rem = i;
            for (int j = 0; j < param_dim(); ++j) {
                const int k = static_cast<int>(rem % n_[j]);
                rem /= n_[j];
                if (k >= 1 && k + 1 < n_[j])
                    s = std::max(s, (vals_[i + stride] - 2.0 * vals_[i] + vals_[i - stride]).norm() / (h_ * h_));
                stride *= n_[j];
            }
        }
        return s;
    }
    double max_residual() const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < size(); ++i)
            if (status_[i] == NodeStatus::Converged) s = std::max(s, res_[i]);
        return s;
    }
    bool all_converged() const
    {
        for (auto st : status_)
            if (st == NodeStatus::Diverged || st == NodeStatus::Degenerate) return false;
        return true;
    }

    /// CSV lattice: t_1..t_d, c_1, c_2, y_1..y_m, residual, theta, iterations, status.
    void write_csv(std::ostream& os) const
    {
        const int d = param_dim(), m = base_.plane.ambient();
        os << std::setprecision(17);
        for (int j = 0; j < d; ++j) os << "t" << j + 1 << ",";
        os << "c1,c2,";
        for (int i = 0; i < m; ++i) os << "y" << i + 1 << ",";
        os << "residual,theta,iterations,status\r\n";
        for (std::size_t i = 0; i < size(); ++i) {
            const Vec t = node_param(i);
            const Vec y = node_point(i);
            for (int j = 0; j < d; ++j) os << t(j) << ",";
            os << vals_[i](0) << "," << vals_[i](1) << ",";
            for (int k = 0; k < m; ++k) os << y(k) << ",";
            os << res_[i] << "," << theta_[i] << "," << iters_[i] << "," << node_status_name(status_[i]) << "\r\n";
        }
    }

    Json to_json() const
    {
        Json j{{"scale", r_}, {"spacing", h_}, {"nodes", size()}, {"sup_norm", sup_norm()}, {"grad_norm", grad_norm()},
               {"hessian_norm", hessian_norm()}, {"max_residual", max_residual()}, {"all_converged", all_converged()}};
        j["counts"] = n_;
        return j;
    }
    /// Everything needed to rebuild the graph: base point, plane basis, lattice and values.
    Json lattice_json() const
    {
        auto col = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
        Json basis = Json::array();
        for (int j = 0; j < base_.plane.dim(); ++j) basis.push_back(col(base_.plane.basis().col(j)));
        Json vals = Json::array();
        for (const auto& v : vals_) vals.push_back(Json::array({v(0), v(1)}));
        return Json{{"ambient", base_.plane.ambient()}, {"base", col(base_.base)}, {"basis", basis}, {"lo", col(lo_)},
                    {"spacing", h_}, {"counts", n_}, {"scale", r_}, {"values", vals}};
    }
    static SubmanifoldGraph from_lattice_json(const Json& j)
    {
        auto vec = [](const Json& a) {
            const auto v = a.get<std::vector<double>>();
            return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
        };
        const int m = j.at("ambient").get<int>();
        Mat B(m, j.at("basis").size());
        for (std::size_t c = 0; c < j.at("basis").size(); ++c) B.col(static_cast<Eigen::Index>(c)) = vec(j.at("basis")[c]);
        SubmanifoldGraph G(AffinePlane{Plane::from_orthonormal(m, B), vec(j.at("base"))}, vec(j.at("lo")), j.at("spacing").get<double>(),
                           j.at("counts").get<std::vector<int>>(), j.at("scale").get<double>());
        const Json& vals = j.at("values");
        if (vals.size() != G.size()) throw Error(Errc::InvalidArgument, "lattice value count differs from the lattice size");
        for (std::size_t i = 0; i < G.size(); ++i) G.vals_[i] = Eigen::Vector2d(vals[i][0].get<double>(), vals[i][1].get<double>());
        return G;
    }

private:
    AffinePlane base_;
    Vec lo_;
    double h_ = 1.0;
    std::vector<int> n_;
    double r_ = 1.0;
    std::vector<Eigen::Vector2d> vals_;
    std::vector<double> res_;
    std::vector<double> theta_;
    std::vector<int> iters_;
    std::vector<NodeStatus> status_;
};

struct TrOptions {
    double newton_tol = 1e-8;   // relative to theta at the node
    int max_iterations = 30;
    int max_halvings = 8;
    double fd_step = 1e-4;      // times r
    double spacing = 0.25;      // lattice spacing, times r
    int workers = 1;            // node-level workers; quadrature parallelizes inside
};

/// Solves Theta = 0 on each node of a uniform lattice over the window [-W, W]^{m-2} of L_A
/// (parameters relative to the base point). `guess`, when given, supplies initial values.
/// `rr`, when given, is the radius function; nodes with rr >= 3r copy the guess unchanged.
inline SubmanifoldGraph build_Tr(const MapField& f, const AffinePlane& L_A, double r, double window, const Engine& eng,
                                 const TrOptions& opt = {}, const SubmanifoldGraph* guess = nullptr,
                                 const std::function<double(const Vec&)>& rr = nullptr)
{
    const int m = f.dim();
    const int d = m - 2;
    if (L_A.plane.ambient() != m || L_A.plane.dim() != d) throw Error(Errc::DimensionMismatch, "L_A must be a codimension-2 plane");
    HeatMollifier::check_scale(r);
    const double h = opt.spacing * r;
    std::vector<int> counts(d);
    Vec lo(d);
    for (int j = 0; j < d; ++j) {
        const int half = static_cast<int>(std::floor(window / h + 1e-9));
        counts[j] = 2 * half + 1;
        lo(j) = -half * h;
    }
    SubmanifoldGraph G(L_A, lo, h, counts, r);
    const double fd = opt.fd_step * r;
    parallel_for(G.size(), [&](std::size_t i) {
        const Vec t = G.node_param(i);
        Eigen::Vector2d c = guess ? guess->interpolate(t) : Eigen::Vector2d::Zero();
        if (rr && guess) {
            const double rx = rr(G.embed(t, c));
            if (rx >= 3.0 * r) {
                G.value(i) = c;
                G.status(i) = NodeStatus::Copied;
                return;
            }
        }
        auto eval = [&](const Eigen::Vector2d& cc) { return theta_EL_map(f, G.embed(t, cc), r, L_A.plane, eng); };
        ThetaELValue cur;
        try {
            cur = eval(c);
        } catch (const Error& e) {
            if (e.code() != Errc::DegenerateSpectrum) throw;
            G.value(i) = c;
            G.status(i) = NodeStatus::Degenerate;
            return;
        }
        int it = 0;
        for (; it < opt.max_iterations; ++it) {
            if (cur.value.norm() <= opt.newton_tol * cur.theta) break;
            Eigen::Matrix2d Jm;
            for (int k = 0; k < 2; ++k) {
                Eigen::Vector2d cp = c;
                cp(k) += fd;
                Jm.col(k) = (eval(cp).value - cur.value) / fd;
            }
            const Eigen::Vector2d step = -Jm.fullPivLu().solve(cur.value);
            if (!step.allFinite()) break;
            double a = 1.0;
            bool accepted = false;
            for (int hv = 0; hv <= opt.max_halvings; ++hv) {
                const ThetaELValue trial = eval(c + a * step);
                if (trial.value.norm() < cur.value.norm()) {
                    c += a * step;
                    cur = trial;
                    accepted = true;
                    break;
                }
                a *= 0.5;
            }
            if (!accepted) break;
        }
        G.value(i) = c;
        G.residual(i) = cur.value.norm();
        G.theta_at(i) = cur.theta;
        G.iterations(i) = it;
        G.status(i) = cur.value.norm() <= opt.newton_tol * cur.theta ? NodeStatus::Converged : NodeStatus::Diverged;
    }, opt.workers);
    for (std::size_t i = 0; i < G.size(); ++i) {
        if (G.status(i) == NodeStatus::Diverged) {
            std::ostringstream os;
            os << "node " << i << " at t = (";
            const Vec t = G.node_param(i);
            for (int j = 0; j < d; ++j) os << (j ? ", " : "") << t(j);
            os << ") stalled with |Theta| = " << G.residual(i) << " after " << G.iterations(i) << " iterations";
            throw Error(Errc::NewtonDiverged, os.str());
        }
    }
    return G;
}

struct ELCheck {
    Vec lhs;  // pi_perp grad theta in the basis of the best plane's complement
    Vec rhs;  // 2 int -rho_dot_r <grad u, y - x><grad u, v> over the same basis
    double lhs_norm = 0.0;
    double rhs_norm = 0.0;
    double rel_diff = 0.0;
    double theta = 0.0;
};

inline ELCheck el_equivalence_check(const MapField& f, const Vec& x, double r, const Engine& eng)
{
    const EnergyReport rep = energy_report(f, x, r, eng);
    const BestPlaneResult bp = best_plane_from(make_energy_tensor(rep), true);
    const Mat& C = bp.complement.basis();
    ELCheck out;
    out.lhs = C.transpose() * rep.grad_direct;
    out.rhs = C.transpose() * rep.grad_stationary;
    out.lhs_norm = out.lhs.norm();
    out.rhs_norm = out.rhs.norm();
    const double scale = std::max(out.lhs_norm, out.rhs_norm);
    out.rel_diff = scale > 0.0 ? (out.lhs - out.rhs).norm() / scale : 0.0;
    out.theta = rep.theta;
    return out;
}

} // namespace bubblescope
