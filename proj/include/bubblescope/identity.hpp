#pragma once

#include "bestfit.hpp"
#include "core.hpp"
#include "energy.hpp"
#include "fields.hpp"
#include "gauss.hpp"
#include "geometry.hpp"
#include "mollifier.hpp"
#include "quadrature.hpp"
#include "regions.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

namespace bubblescope {

/// lambda -> member of a degenerating family.
using Family = std::function<FieldPtr(double)>;

inline Json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
inline Json vec2_json(const Eigen::Vector2d& v) { return Json::array({v(0), v(1)}); }

// ---------------------------------------------------------------------------------------------
// defect density

struct DefectEstimate {
    Vec x;
    double r = 0.0;
    std::vector<double> lambdas;  // decreasing
    std::vector<double> values;   // theta_lambda(x, r) / normalization
    double extrapolated = 0.0;
    double spread = 0.0;          // max_i |values_i - extrapolated| / |extrapolated|
    double normalization = 0.0;
    std::string mode;             // "marginal" or "ray"

    Json to_json() const
    {
        return Json{{"x", vec_json(x)}, {"r", r}, {"lambdas", lambdas}, {"values", values}, {"e", extrapolated},
                    {"spread", spread}, {"normalization", normalization}, {"normalization_mode", mode},
                    {"extrapolation", "Richardson, order 1 in lambda^2, last two members"}};
    }
};

/// e(x) = lim theta_lambda(x, r) / c'_{m-2}. With `ray` the normalization is the single-ray mass
/// (a vertex of a cone carrying one bubble per ray).
inline DefectEstimate defect_density(const Family& fam, const Vec& x, double r, std::vector<double> lambdas, const Engine& eng,
                                     bool ray = false, double max_spread = 0.05)
{
    if (lambdas.size() < 2) throw Error(Errc::InvalidArgument, "defect density needs at least two family members");
    for (std::size_t i = 1; i < lambdas.size(); ++i)
        if (!(lambdas[i] < lambdas[i - 1])) throw Error(Errc::InvalidArgument, "lambda list must be strictly decreasing");
    DefectEstimate out;
    out.x = x;
    out.r = r;
    out.lambdas = lambdas;
    const int m = static_cast<int>(x.size());
    const HeatMollifier& mol = eng.mol(m);
    out.normalization = ray ? mol.ray_mass() : mol.marginal_mass(m - 2);
    out.mode = ray ? "ray" : "marginal";
    for (double lam : lambdas) {
        FieldPtr f = fam(lam);
        if (f->dim() != m) throw Error(Errc::DimensionMismatch, "family member dimension differs from the point");
        out.values.push_back(theta(*f, x, r, eng) / out.normalization);
    }
    const std::size_t n = lambdas.size();
    const double la = sqr(lambdas[n - 2]), lb = sqr(lambdas[n - 1]);
    const double ea = out.values[n - 2], eb = out.values[n - 1];
    out.extrapolated = (la * eb - lb * ea) / (la - lb);
    double sp = 0.0;
    const double scale = std::abs(out.extrapolated);
    for (double v : out.values) sp = std::max(sp, scale > 0.0 ? std::abs(v - out.extrapolated) / scale : std::abs(v));
    out.spread = sp;
    if (sp > max_spread)
        throw Error(Errc::NonConvergent, "defect sequence spread " + std::to_string(sp) + " exceeds " + std::to_string(max_spread));
    return out;
}

// ---------------------------------------------------------------------------------------------
// bubble extraction on 2-D slices

struct BubbleNode {
    Eigen::Vector2d center = Eigen::Vector2d::Zero();
    double lambda = 0.0;           // fitted scale s_j
    Vec3 image = Vec3::Zero();     // u(center)
    double peak_density = 0.0;
    double fit_rms = 0.0;          // rms log-density misfit on the fit stencil
    double pyramid_scale = 0.0;    // smallest dyadic s with theta^2(center, s) >= eps0
    double ball_radius = 0.0;      // S * lambda unless shrunk to keep balls disjoint
    bool shrunk = false;
    double captured = 0.0;         // slice energy in the ball minus the children's balls
    double tail = 0.0;             // model energy outside the ball
    double energy = 0.0;           // E_j = captured + tail
    int parent = -1;
    std::vector<int> children;

    Json to_json() const
    {
        return Json{{"center", vec2_json(center)}, {"lambda", lambda}, {"image", {image(0), image(1), image(2)}},
                    {"peak_density", peak_density}, {"fit_rms", fit_rms}, {"pyramid_scale", pyramid_scale},
                    {"ball_radius", ball_radius}, {"shrunk", shrunk}, {"captured", captured}, {"tail", tail},
                    {"energy", energy}, {"parent", parent}, {"children", children}};
    }
};

struct ExtractSpec {
    Eigen::Vector2d window_center = Eigen::Vector2d::Zero();
    double window_radius = 1.0;
    double eps0 = 1.0;          // energy floor per node
    double S = 10.0;            // ball inflation
    int seeds_per_axis = 33;
    double min_density = 1e-10; // peaks below this are ignored

    Json to_json() const
    {
        return Json{{"window_center", vec2_json(window_center)}, {"window_radius", window_radius}, {"eps0", eps0},
                    {"S", S}, {"seeds_per_axis", seeds_per_axis}, {"min_density", min_density}};
    }
};

struct BubbleTree {
    ExtractSpec spec;
    std::vector<BubbleNode> nodes;
    double window_energy = 0.0;
    double residual_energy = 0.0;  // window energy outside all bubble balls
    int peaks_found = 0;
    Json slice;

    double total_energy() const
    {
        double s = 0.0;
        for (const auto& n : nodes) s += n.energy;
        return s;
    }
    /// Balls pairwise disjoint or nested.
    bool balls_consistent() const
    {
        for (std::size_t i = 0; i < nodes.size(); ++i)
            for (std::size_t j = i + 1; j < nodes.size(); ++j) {
                const double d = (nodes[i].center - nodes[j].center).norm();
                const double ri = nodes[i].ball_radius, rj = nodes[j].ball_radius;
                const bool disjoint = d >= ri + rj - 1e-12;
                const bool nested = d + std::min(ri, rj) <= std::max(ri, rj) + 1e-12;
                if (!disjoint && !nested) return false;
            }
        return true;
    }
    Json to_json() const
    {
        Json j{{"spec", spec.to_json()}, {"window_energy", window_energy}, {"residual_energy", residual_energy},
               {"peaks_found", peaks_found}, {"total_energy", total_energy()}, {"count", nodes.size()},
               {"balls_consistent", balls_consistent()}, {"slice", slice}};
        Json arr = Json::array();
        for (const auto& n : nodes) arr.push_back(n.to_json());
        j["nodes"] = arr;
        return j;
    }
};

namespace detail {

inline double slice_density(const MapField& f, const Eigen::Vector2d& w)
{
    Vec y(2);
    y << w(0), w(1);
    return f.jacobian(y).squaredNorm();
}

/// Compass search on the density, shrinking the step until it falls below tol.
inline Eigen::Vector2d ascend(const MapField& f, Eigen::Vector2d y, double h, const ExtractSpec& spec, double& peak)
{
    peak = slice_density(f, y);
    const Eigen::Vector2d dirs[4] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (int it = 0; it < 4000 && h > 1e-15; ++it) {
        const double lam = peak > 0.0 ? std::sqrt(8.0 / peak) : spec.window_radius;
        if (h < 1e-5 * lam) break;
        double best = peak;
        int bi = -1;
        for (int k = 0; k < 4; ++k) {
            const Eigen::Vector2d z = y + h * dirs[k];
            if ((z - spec.window_center).norm() > spec.window_radius) continue;
            const double v = slice_density(f, z);
            if (v > best) {
                best = v;
                bi = k;
            }
        }
        if (bi < 0) {
            h *= 0.5;
        } else {
            y += h * dirs[bi];
            peak = best;
            h *= 1.5;
        }
    }
    return y;
}

/// Levenberg-Marquardt on log|grad u|^2 - log(8 l^2 / (l^2 + |w - c|^2)^2) over a polar stencil.
inline void fit_bubble(const MapField& f, BubbleNode& node)
{
    double lam = node.lambda;
    Eigen::Vector2d c = node.center;
    std::vector<Eigen::Vector2d> pts;
    std::vector<double> logd;
    const double rings[] = {0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0};
    for (double s : rings) {
        const int na = s == 0.0 ? 1 : 16;
        for (int a = 0; a < na; ++a) {
            const double t = 2.0 * std::numbers::pi * a / na;
            const Eigen::Vector2d w = c + s * lam * Eigen::Vector2d(std::cos(t), std::sin(t));
            const double v = slice_density(f, w);
            if (v > 0.0 && std::isfinite(v)) {
                pts.push_back(w);
                logd.push_back(std::log(v));
            }
        }
    }
    auto residuals = [&](const Eigen::Vector3d& p, Eigen::VectorXd& r, Eigen::MatrixXd* Jm) {
        const double l = std::exp(p(2));
        r.resize(static_cast<Eigen::Index>(pts.size()));
        if (Jm) Jm->resize(r.size(), 3);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const Eigen::Vector2d d = pts[i] - p.head<2>();
            const double q = l * l + d.squaredNorm();
            r(i) = std::log(8.0) + 2.0 * p(2) - 2.0 * std::log(q) - logd[i];
            if (Jm) {
                (*Jm)(i, 0) = 4.0 * d(0) / q;
                (*Jm)(i, 1) = 4.0 * d(1) / q;
                (*Jm)(i, 2) = 2.0 - 4.0 * l * l / q;
            }
        }
    };
    Eigen::Vector3d p(c(0), c(1), std::log(lam));
    Eigen::VectorXd r;
    Eigen::MatrixXd Jm;
    residuals(p, r, &Jm);
    double cost = r.squaredNorm();
    double mu = 1e-3;
    for (int it = 0; it < 100 && pts.size() >= 3; ++it) {
        const Eigen::Matrix3d A = Jm.transpose() * Jm;
        const Eigen::Vector3d g = Jm.transpose() * r;
        Eigen::Matrix3d Ad = A;
        for (int k = 0; k < 3; ++k) Ad(k, k) += mu * std::max(A(k, k), 1e-12);
        const Eigen::Vector3d step = Ad.ldlt().solve(-g);
        const Eigen::Vector3d pn = p + step;
        Eigen::VectorXd rn;
        residuals(pn, rn, nullptr);
        const double cn = rn.squaredNorm();
        if (cn < cost) {
            p = pn;
            residuals(p, r, &Jm);
            const double drop = cost - cn;
            cost = cn;
            mu = std::max(mu * 0.3, 1e-12);
            if (drop <= 1e-28 + 1e-14 * cost && step.norm() < 1e-12) break;
        } else {
            mu *= 10.0;
            if (mu > 1e12) break;
        }
    }
    node.center = p.head<2>();
    node.lambda = std::exp(p(2));
    node.fit_rms = pts.empty() ? 0.0 : std::sqrt(cost / static_cast<double>(pts.size()));
}

/// Energy of a 2-D field in the disk B(c, rad) intersected with the window, radially graded at `scale`.
inline double disk_energy(const MapField& f, const Eigen::Vector2d& c, double rad, double scale, const ExtractSpec& spec,
                          const QuadratureSpec& q, const std::function<double(const Eigen::Vector2d&)>& weight = nullptr)
{
    Vec cv(2);
    cv << c(0), c(1);
    const Layout lay = polar_layout(cv, scale);
    const auto v = integrate_ball(&f, 2, cv, rad, std::max(scale, rad / 32.0), q, lay, 1,
        [&](const Vec& y, const FieldSample* s, double w, double* acc) {
            const Eigen::Vector2d z(y(0), y(1));
            if ((z - spec.window_center).norm() > spec.window_radius) return;
            const double wt = weight ? weight(z) : 1.0;
            acc[0] += w * wt * s->J.squaredNorm();
        });
    return v[0];
}

} // namespace detail

/// theta^2(y, s): slice energy of a 2-D field in B_s(y).
inline double slice_disk_energy(const MapField& f, const Eigen::Vector2d& y, double s, const QuadratureSpec& q, double scale = 0.0)
{
    if (f.dim() != 2) throw Error(Errc::DimensionMismatch, "slice energy needs a 2-D field");
    ExtractSpec all;
    all.window_center = y;
    all.window_radius = s * (1.0 + 1e-12);
    return detail::disk_energy(f, y, s, scale > 0.0 ? scale : s / 8.0, all, q);
}

/// Greedy multiscale extraction: density peaks from a seed lattice, standard-bubble fits, the energy
/// floor, nesting, and the residual energy outside all S-inflated balls.
inline BubbleTree extract_bubbles(const MapField& f, const ExtractSpec& spec, const QuadratureSpec& q)
{
    if (f.dim() != 2) throw Error(Errc::DimensionMismatch, "bubble extraction needs a 2-D slice field");
    if (!(spec.window_radius > 0.0) || !(spec.eps0 > 0.0) || !(spec.S > 1.0)) throw Error(Errc::InvalidArgument, "extraction needs positive window, eps0 and S > 1");
    BubbleTree tree;
    tree.spec = spec;
    tree.slice = f.metadata();
    const int G = std::max(3, spec.seeds_per_axis);
    const double Rw = spec.window_radius;
    const double h0 = 2.0 * Rw / (G - 1);
    std::vector<BubbleNode> peaks;
    for (int i = 0; i < G; ++i)
        for (int j = 0; j < G; ++j) {
            const Eigen::Vector2d y = spec.window_center + Eigen::Vector2d(-Rw + h0 * i, -Rw + h0 * j);
            if ((y - spec.window_center).norm() > Rw) continue;
            if (!(detail::slice_density(f, y) > spec.min_density)) continue;
            double pk = 0.0;
            const Eigen::Vector2d c = detail::ascend(f, y, 0.5 * h0, spec, pk);
            if (!(pk > spec.min_density)) continue;
            const double lam = std::sqrt(8.0 / pk);
            bool dup = false;
            for (auto& p : peaks)
                if ((p.center - c).norm() < 0.5 * std::min(p.lambda, lam)) {
                    dup = true;
                    break;
                }
            if (dup) continue;
            BubbleNode n;
            n.center = c;
            n.lambda = lam;
            n.peak_density = pk;
            peaks.push_back(n);
        }
    tree.peaks_found = static_cast<int>(peaks.size());
    std::vector<BubbleNode> kept;
    for (BubbleNode n : peaks) {
        detail::fit_bubble(f, n);
        if (!(n.lambda > 0.0) || !std::isfinite(n.lambda) || (n.center - spec.window_center).norm() > Rw) continue;
        Vec cv(2);
        cv << n.center(0), n.center(1);
        n.image = f.value(cv);
        n.ball_radius = spec.S * n.lambda;
        kept.push_back(n);
    }
    // refits of nearby peaks may land on the same bubble
    std::vector<BubbleNode> uniq;
    for (const auto& n : kept) {
        bool dup = false;
        for (const auto& u : uniq)
            if ((u.center - n.center).norm() < 0.5 * std::min(u.lambda, n.lambda)) dup = true;
        if (!dup) uniq.push_back(n);
    }
    std::sort(uniq.begin(), uniq.end(), [](const BubbleNode& a, const BubbleNode& b) {
        if (a.lambda != b.lambda) return a.lambda > b.lambda;
        if (a.center(0) != b.center(0)) return a.center(0) < b.center(0);
        return a.center(1) < b.center(1);
    });
    // disjoint or nested balls
    for (std::size_t i = 0; i < uniq.size(); ++i)
        for (std::size_t j = i + 1; j < uniq.size(); ++j) {
            auto& a = uniq[i];
            auto& b = uniq[j];
            const double d = (a.center - b.center).norm();
            const bool nested = d + b.ball_radius <= a.ball_radius;
            if (!nested && d < a.ball_radius + b.ball_radius) {
                const double cap = 0.5 * d;
                if (a.ball_radius > cap) { a.ball_radius = cap; a.shrunk = true; }
                if (b.ball_radius > cap) { b.ball_radius = cap; b.shrunk = true; }
            }
        }
    // energies, floor, nesting
    const double eps0 = spec.eps0;
    std::vector<double> ball_energy(uniq.size());
    for (std::size_t i = 0; i < uniq.size(); ++i) {
        auto& n = uniq[i];
        ball_energy[i] = detail::disk_energy(f, n.center, n.ball_radius, n.lambda, spec, q);
        n.tail = 8.0 * std::numbers::pi / (1.0 + sqr(n.ball_radius / n.lambda));
        double s = Rw;
        while (s > 1e-3 * n.lambda && slice_disk_energy(f, n.center, 0.5 * s, q, std::min(n.lambda, 0.5 * s)) >= eps0) s *= 0.5;
        n.pyramid_scale = s;
    }
    for (std::size_t i = 0; i < uniq.size(); ++i) {
        for (std::size_t k = i; k-- > 0;) {
            const double d = (uniq[k].center - uniq[i].center).norm();
            if (d + uniq[i].ball_radius <= uniq[k].ball_radius) {
                uniq[i].parent = static_cast<int>(k);
                break;
            }
        }
    }
    for (std::size_t i = 0; i < uniq.size(); ++i) {
        double cap = ball_energy[i];
        for (std::size_t k = 0; k < uniq.size(); ++k)
            if (uniq[k].parent == static_cast<int>(i)) cap -= ball_energy[k];
        uniq[i].captured = cap;
        uniq[i].energy = cap + uniq[i].tail;
    }
    // drop nodes under the floor, keeping parent indices valid
    std::vector<int> remap(uniq.size(), -1);
    for (std::size_t i = 0; i < uniq.size(); ++i) {
        if (uniq[i].energy < eps0) continue;
        remap[i] = static_cast<int>(tree.nodes.size());
        BubbleNode n = uniq[i];
        int p = n.parent;
        while (p >= 0 && remap[p] < 0) p = uniq[p].parent;
        n.parent = p >= 0 ? remap[p] : -1;
        n.children.clear();
        tree.nodes.push_back(n);
    }
    for (std::size_t i = 0; i < tree.nodes.size(); ++i)
        if (tree.nodes[i].parent >= 0) tree.nodes[tree.nodes[i].parent].children.push_back(static_cast<int>(i));
    // window energy by a partition of unity graded around each node plus a background piece
    double lam_min = Rw;
    for (const auto& n : tree.nodes) lam_min = std::min(lam_min, n.lambda);
    const double phi0 = sqr(lam_min) / std::pow(Rw / 8.0, 4);
    auto phi = [&](std::size_t k, const Eigen::Vector2d& z) {
        const auto& n = tree.nodes[k];
        return sqr(n.lambda) / sqr(sqr(n.lambda) + (z - n.center).squaredNorm());
    };
    auto denom = [&](const Eigen::Vector2d& z) {
        double s = phi0;
        for (std::size_t k = 0; k < tree.nodes.size(); ++k) s += phi(k, z);
        return s;
    };
    double total = detail::disk_energy(f, spec.window_center, Rw, tree.nodes.empty() ? Rw : Rw / 8.0, spec, q,
                                       [&](const Eigen::Vector2d& z) { return phi0 / denom(z); });
    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
        const auto& n = tree.nodes[k];
        const double reach = (n.center - spec.window_center).norm() + Rw;
        total += detail::disk_energy(f, n.center, reach, n.lambda, spec, q,
                                     [&](const Eigen::Vector2d& z) { return phi(k, z) / denom(z); });
    }
    tree.window_energy = total;
    double inside = 0.0;
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        if (tree.nodes[i].parent >= 0) continue;
        double e = tree.nodes[i].captured;
        std::vector<int> stack(tree.nodes[i].children.begin(), tree.nodes[i].children.end());
        while (!stack.empty()) {
            const int c = stack.back();
            stack.pop_back();
            e += tree.nodes[c].captured;
            for (int g : tree.nodes[c].children) stack.push_back(g);
        }
        inside += e;
    }
    tree.residual_energy = total - inside;
    return tree;
}

/// Extraction on the 2-D affine slice `slice` of an m-dimensional field; window centered at the slice base.
inline BubbleTree extract_bubbles(const FieldPtr& f, const AffinePlane& slice, ExtractSpec spec, const QuadratureSpec& q)
{
    if (slice.plane.dim() != 2) throw Error(Errc::DimensionMismatch, "slice must be a 2-plane");
    SliceField s(f, slice.base, slice.plane.basis());
    return extract_bubbles(s, spec, q);
}

// ---------------------------------------------------------------------------------------------
// identity report

/// lambda -> 2-D slice field of the family member.
using SliceMaker = std::function<FieldPtr(const FieldPtr&)>;

inline SliceMaker plane_slice(const AffinePlane& slice)
{
    return [slice](const FieldPtr& f) -> FieldPtr {
        if (slice.plane.dim() != 2) throw Error(Errc::DimensionMismatch, "slice must be a 2-plane");
        return std::make_shared<SliceField>(f, slice.base, slice.plane.basis());
    };
}

/// Stereographic chart of the unit sphere around the origin of a cone-like field.
inline SliceMaker link_slice(Vec3 pole)
{
    return [pole](const FieldPtr& f) -> FieldPtr { return std::make_shared<LinkChart>(f, pole); };
}

struct IdentityReport {
    DefectEstimate defect;
    BubbleTree tree;
    double smallest_lambda = 0.0;
    double sum_E = 0.0;
    double discrepancy = 0.0;
    double relative = 0.0;
    double tolerance = 0.02;
    bool sub_energy_ok = true;  // sum_E <= e (1 + tolerance)

    Json to_json() const
    {
        Json E = Json::array();
        for (const auto& n : tree.nodes) E.push_back(n.energy);
        return Json{{"e", defect.extrapolated}, {"bubble_energies", E}, {"sum_E", sum_E}, {"K", tree.nodes.size()},
                    {"discrepancy", discrepancy}, {"relative_discrepancy", relative}, {"normalization", defect.normalization},
                    {"normalization_mode", defect.mode}, {"smallest_lambda", smallest_lambda}, {"tolerance", tolerance},
                    {"sub_energy_ok", sub_energy_ok}, {"defect", defect.to_json()}, {"tree", tree.to_json()}};
    }
};

inline IdentityReport energy_identity_report(const Family& fam, const Vec& x, double r, const std::vector<double>& lambdas,
                                             const SliceMaker& slice, const ExtractSpec& spec, const Engine& eng,
                                             bool ray = false, double tolerance = 0.02)
{
    IdentityReport rep;
    rep.defect = defect_density(fam, x, r, lambdas, eng, ray);
    rep.smallest_lambda = lambdas.back();
    FieldPtr s = slice(fam(lambdas.back()));
    rep.tree = extract_bubbles(*s, spec, eng.quad());
    rep.sum_E = rep.tree.total_energy();
    const double e = rep.defect.extrapolated;
    rep.discrepancy = std::abs(e - rep.sum_E);
    rep.relative = e != 0.0 ? rep.discrepancy / std::abs(e) : rep.discrepancy;
    rep.tolerance = tolerance;
    rep.sub_energy_ok = rep.sum_E <= e + tolerance * std::abs(e) + 1e-12;
    return rep;
}

// ---------------------------------------------------------------------------------------------
// integrals over graphs

struct GraphQuadrature {
    int nodes_per_panel = 6;
    int panels = 0;        // per axis; 0 = one panel per lattice cell
    int angular_nodes = 48;
};

namespace detail {

/// d c / d t of the graph interpolant by central differences inside one stencil.
inline Mat graph_gradient(const SubmanifoldGraph& T, const Vec& t)
{
    const int d = T.param_dim();
    Mat D(2, d);
    const double h = 1e-5 * T.spacing();
    for (int j = 0; j < d; ++j) {
        Vec tp = t, tm = t;
        tp(j) += h;
        tm(j) -= h;
        D.col(j) = (T.interpolate(tp) - T.interpolate(tm)) / (2.0 * h);
    }
    return D;
}

inline double area_element(const SubmanifoldGraph& T, const Vec& t)
{
    const int d = T.param_dim();
    const Mat D = graph_gradient(T, t);
    const Mat M = Mat::Identity(d, d) + D.transpose() * D;
    return std::sqrt(M.determinant());
}

} // namespace detail

/// Visits the quadrature nodes of |t| <= window on the graph with weights that include the
/// area element sqrt(det(I + grad t^T grad t)).
inline void visit_graph_nodes(const SubmanifoldGraph& T, double window, const GraphQuadrature& gq,
                              const std::function<void(const Vec& x, double w)>& visit)
{
    const int d = T.param_dim();
    if (d == 0) {
        visit(T.point(Vec(0)), 1.0);
        return;
    }
    if (T.grad_norm() >= 0.5) throw Error(Errc::SteepGraph, "graph Lipschitz constant must stay below 1/2");
    for (int j = 0; j < d; ++j) {
        const double lo = T.lo()(j), hi = lo + T.spacing() * (T.counts()[j] - 1);
        if (-window < lo - 1e-12 || window > hi + 1e-12) throw Error(Errc::DomainEscape, "integration window leaves the graph lattice");
    }
    const GaussRule& gr = gauss_legendre(gq.nodes_per_panel);
    if (d == 1) {
        std::vector<double> br;
        if (gq.panels > 0) {
            for (int k = 0; k <= gq.panels; ++k) br.push_back(-window + 2.0 * window * k / gq.panels);
        } else {
            br.push_back(-window);
            for (int k = 0; k < T.counts()[0]; ++k) {
                const double v = T.lo()(0) + T.spacing() * k;
                if (v > -window + 1e-14 && v < window - 1e-14) br.push_back(v);
            }
            br.push_back(window);
        }
        for (std::size_t p = 0; p + 1 < br.size(); ++p) {
            const double c = 0.5 * (br[p] + br[p + 1]), hw = 0.5 * (br[p + 1] - br[p]);
            for (std::size_t k = 0; k < gr.x.size(); ++k) {
                Vec t(1);
                t(0) = c + hw * gr.x[k];
                visit(T.point(t), hw * gr.w[k] * detail::area_element(T, t));
            }
        }
        return;
    }
    if (d == 2) {
        const int np = gq.panels > 0 ? gq.panels : std::max(2, static_cast<int>(std::ceil(window / T.spacing())));
        for (int p = 0; p < np; ++p) {
            const double a = window * p / np, b = window * (p + 1) / np;
            const double c = 0.5 * (a + b), hw = 0.5 * (b - a);
            for (std::size_t k = 0; k < gr.x.size(); ++k) {
                const double s = c + hw * gr.x[k];
                for (int q = 0; q < gq.angular_nodes; ++q) {
                    const double ang = 2.0 * std::numbers::pi * q / gq.angular_nodes;
                    Vec t(2);
                    t << s * std::cos(ang), s * std::sin(ang);
                    visit(T.point(t), hw * gr.w[k] * s * (2.0 * std::numbers::pi / gq.angular_nodes) * detail::area_element(T, t));
                }
            }
        }
        return;
    }
    throw Error(Errc::DimensionMismatch, "graph integrals support parameter dimension 0, 1 or 2");
}

/// Integral of g over the graph point(t), |t| <= window.
inline double integrate_graph(const std::function<double(const Vec&)>& g, const SubmanifoldGraph& T, double window,
                              const GraphQuadrature& gq = {})
{
    double acc = 0.0;
    visit_graph_nodes(T, window, gq, [&](const Vec& x, double w) { acc += w * g(x); });
    return acc;
}

/// Flat graph t = 0 over L_A with the lattice covering [-window, window]^{m-2}.
inline SubmanifoldGraph flat_graph(const AffinePlane& L_A, double window, double r, double spacing)
{
    const int d = L_A.plane.dim();
    const int n = d == 0 ? 1 : static_cast<int>(std::ceil(2.0 * window / spacing - 1e-9)) + 1;
    Vec lo(d);
    for (int j = 0; j < d; ++j) lo(j) = -spacing * (n - 1) / 2.0;
    return SubmanifoldGraph(L_A, lo, spacing, std::vector<int>(d, n), r);
}

// ---------------------------------------------------------------------------------------------
// profiles

/// Window of psi_T: the cutoff phi(|pi_{L_A}(x - p)|^2) vanishes for |.|^2 >= 1.9.
inline double psi_window() { return std::sqrt(1.9); }

struct ProfileRow {
    double r = 0.0;
    double value = 0.0;
    double residual = std::numeric_limits<double>::quiet_NaN();  // superconvexity residual, interior rows
    double d2 = std::numeric_limits<double>::quiet_NaN();
};

struct Profile {
    std::string kind;
    std::vector<ProfileRow> rows;
    double fit_a = 0.0;          // least squares value ~ a / |ln r|
    double a_star = 0.0;         // max value * |ln r|
    double delta_star = 0.0;     // max value
    double mono_C = 0.0;         // max over s <= r of value(s) / value(r)
    double min_residual = std::numeric_limits<double>::quiet_NaN();

    Json to_json() const
    {
        Json arr = Json::array();
        for (const auto& rw : rows) {
            Json j{{"r", rw.r}, {"value", rw.value}};
            j["residual"] = std::isfinite(rw.residual) ? Json(rw.residual) : Json(nullptr);
            arr.push_back(j);
        }
        Json j{{"kind", kind}, {"rows", arr}, {"fit_a", fit_a}, {"a_star", a_star}, {"delta_star", delta_star}, {"mono_C", mono_C}};
        j["min_residual"] = std::isfinite(min_residual) ? Json(min_residual) : Json(nullptr);
        return j;
    }
    void write_csv(std::ostream& os) const
    {
        os << std::setprecision(17) << "r,value,d2,residual\r\n";
        for (const auto& rw : rows) {
            os << rw.r << "," << rw.value << ",";
            if (std::isfinite(rw.d2)) os << rw.d2;
            os << ",";
            if (std::isfinite(rw.residual)) os << rw.residual;
            os << "\r\n";
        }
    }
};

struct ProfileSpec {
    RadiusFunction rr;      // radius function in psi_T
    GraphQuadrature gq{6, 4, 48};
};

namespace detail {

inline double graph_psi_integral(const SubmanifoldGraph& T, const RadiusFunction& rr, const GraphQuadrature& gq,
                                 const std::function<double(const Vec&)>& term)
{
    const AffinePlane& LA = T.base();
    const double r = T.scale();
    return integrate_graph(
        [&](const Vec& x) {
            const double psi = psi_T(x, r, LA.plane, LA.base, rr(x, LA));
            return psi == 0.0 ? 0.0 : psi * term(x);
        },
        T, psi_window(), gq);
}

inline void fill_fits(Profile& p)
{
    double num = 0.0, den = 0.0;
    for (const auto& rw : p.rows) {
        p.delta_star = std::max(p.delta_star, rw.value);
        if (rw.r < 1.0) {
            const double g = 1.0 / std::abs(std::log(rw.r));
            num += rw.value * g;
            den += g * g;
            p.a_star = std::max(p.a_star, rw.value / g);
        }
    }
    p.fit_a = den > 0.0 ? num / den : 0.0;
    for (std::size_t i = 0; i < p.rows.size(); ++i)
        for (std::size_t j = 0; j < p.rows.size(); ++j)
            if (p.rows[i].r <= p.rows[j].r && p.rows[j].value > 0.0) p.mono_C = std::max(p.mono_C, p.rows[i].value / p.rows[j].value);
}

inline std::vector<const SubmanifoldGraph*> sorted_by_scale(const std::vector<SubmanifoldGraph>& Ts)
{
    std::vector<const SubmanifoldGraph*> v;
    for (const auto& T : Ts) v.push_back(&T);
    std::sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->scale() < b->scale(); });
    return v;
}

} // namespace detail

/// theta_L(T_r) = int_{T_r} psi_T theta_L(x, r), theta_L from the best plane at (x, r).
inline Profile L_energy_profile(const MapField& f, const std::vector<SubmanifoldGraph>& Ts, const Engine& eng, const ProfileSpec& spec = {})
{
    Profile p;
    p.kind = "L";
    for (const SubmanifoldGraph* T : detail::sorted_by_scale(Ts)) {
        const double r = T->scale();
        ProfileRow rw;
        rw.r = r;
        rw.value = detail::graph_psi_integral(*T, spec.rr, spec.gq,
                                              [&](const Vec& x) { return best_plane(f, x, r, eng, true).theta_L; });
        p.rows.push_back(rw);
    }
    detail::fill_fits(p);
    return p;
}

/// hat-theta_alpha(T_r) = int_{T_r} psi_T int rho_hat_r E_alpha, with the angular frame of L_A,
/// and the residual (r d/dr)^2 v - v at interior grid points.
inline Profile angular_profile(const MapField& f, const std::vector<SubmanifoldGraph>& Ts, const Engine& eng, const ProfileSpec& spec = {})
{
    if (Ts.size() < 7) throw Error(Errc::GridTooCoarse, "angular profile needs at least 7 scales");
    Profile p;
    p.kind = "angular";
    for (const SubmanifoldGraph* T : detail::sorted_by_scale(Ts)) {
        const double r = T->scale();
        const Plane& L = T->base().plane;
        if (L.ambient() - L.dim() != 2) throw Error(Errc::DimensionMismatch, "angular energy needs a codimension-2 base plane");
        ProfileRow rw;
        rw.r = r;
        rw.value = detail::graph_psi_integral(*T, spec.rr, spec.gq,
                                              [&](const Vec& x) { return energy_report(f, x, r, eng, &L).hat_alpha; });
        p.rows.push_back(rw);
    }
    for (std::size_t i = 1; i + 1 < p.rows.size(); ++i) {
        const double hm = std::log(p.rows[i].r / p.rows[i - 1].r), hp = std::log(p.rows[i + 1].r / p.rows[i].r);
        const double v0 = p.rows[i].value;
        const double d2 = 2.0 * ((p.rows[i + 1].value - v0) / hp - (v0 - p.rows[i - 1].value) / hm) / (hp + hm);
        p.rows[i].d2 = d2;
        p.rows[i].residual = d2 - v0;
        p.min_residual = std::isfinite(p.min_residual) ? std::min(p.min_residual, d2 - v0) : d2 - v0;
    }
    detail::fill_fits(p);
    return p;
}

struct RadialBalance {
    double r = 0.0;
    double hat_n = 0.0;     // hat-theta(T, r; n_{L perp})
    double theta_L = 0.0;   // theta(T, r; L)
    double hat_alpha = 0.0; // hat-theta(T, r; alpha_{L perp})
    double hat_L = 0.0;     // hat-theta(T, r; L)
    double theta = 0.0;     // int psi theta, for relative comparisons
    double lhs = 0.0, rhs = 0.0, slack = 0.0;

    Json to_json() const
    {
        return Json{{"r", r}, {"hat_n", hat_n}, {"theta_L", theta_L}, {"hat_alpha", hat_alpha}, {"hat_L", hat_L},
                    {"theta", theta}, {"lhs", lhs}, {"rhs", rhs}, {"slack", slack}};
    }
};

/// Flat-T toy balance hat_n + 2 theta_L <= hat_alpha + hat_L (+ eps(r)); slack = rhs - lhs.
inline RadialBalance radial_balance_toy(const MapField& f, const AffinePlane& L_A, double r, const Engine& eng, const ProfileSpec& spec = {})
{
    if (L_A.plane.ambient() != f.dim()) throw Error(Errc::DimensionMismatch, "plane ambient dimension differs from field dimension");
    if (L_A.plane.ambient() - L_A.plane.dim() != 2) throw Error(Errc::DimensionMismatch, "toy balance needs a codimension-2 plane");
    const SubmanifoldGraph T = flat_graph(L_A, psi_window(), r, 0.25);
    RadialBalance b;
    b.r = r;
    visit_graph_nodes(T, psi_window(), spec.gq, [&](const Vec& x, double w) {
        const double psi = psi_T(x, r, L_A.plane, L_A.base, spec.rr(x, L_A));
        if (psi == 0.0) return;
        const EnergyReport rep = energy_report(f, x, r, eng, &L_A.plane);
        const double wp = w * psi;
        b.hat_n += wp * rep.hat_n;
        b.theta_L += wp * rep.part_L;
        b.hat_alpha += wp * rep.hat_alpha;
        b.hat_L += wp * rep.hat_L;
        b.theta += wp * rep.theta;
    });
    b.lhs = b.hat_n + 2.0 * b.theta_L;
    b.rhs = b.hat_alpha + b.hat_L;
    b.slack = b.rhs - b.lhs;
    return b;
}

} // namespace bubblescope
