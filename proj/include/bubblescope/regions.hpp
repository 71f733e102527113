#pragma once

#include "bestfit.hpp"
#include "core.hpp"
#include "energy.hpp"
#include "fields.hpp"
#include "geometry.hpp"
#include "grid_field.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

namespace bubblescope {

struct SymmetryScore {
    Vec x;
    double r = 0.0;
    int k = 0;
    double score = 0.0;
    Plane witness;
    int candidates = 0;
};

namespace detail {

inline void subsets(int n, int k, int start, std::vector<int>& cur, std::vector<std::vector<int>>& out)
{
    if (static_cast<int>(cur.size()) == k) {
        out.push_back(cur);
        return;
    }
    for (int i = start; i < n; ++i) {
        cur.push_back(i);
        subsets(n, k, i + 1, cur, out);
        cur.pop_back();
    }
}

/// r^2 int rho_r |pi_L grad u|^2 + int rho_r <grad u, pi_{L perp}(y - x)>^2.
inline double symmetry_integral(const EnergyReport& rep) { return rep.part_L + rep.part_n; }

} // namespace detail

/// Minimum of the (k, eps)-symmetry integral over the k-dimensional eigen-subspaces of Q(x, r)
/// and, when given, an extra candidate plane.
inline SymmetryScore symmetry_score(const MapField& f, const Vec& x, double r, int k, const Engine& eng,
                                    const Plane* extra = nullptr)
{
    const int m = f.dim();
    if (k < 0 || k > m) throw Error(Errc::InvalidArgument, "symmetry dimension out of range");
    const EnergyTensor T = energy_tensor(f, x, r, eng);
    std::vector<Plane> cands;
    std::vector<std::vector<int>> subs;
    std::vector<int> cur;
    detail::subsets(m, k, 0, cur, subs);
    for (const auto& s : subs) {
        Mat B(m, k);
        for (int j = 0; j < k; ++j) B.col(j) = T.vectors.col(s[j]);
        cands.push_back(Plane::from_orthonormal(m, B));
    }
    if (extra && extra->dim() == k && extra->ambient() == m) cands.push_back(*extra);
    SymmetryScore out;
    out.x = x;
    out.r = r;
    out.k = k;
    out.score = std::numeric_limits<double>::infinity();
    out.candidates = static_cast<int>(cands.size());
    for (const Plane& P : cands) {
        const double v = detail::symmetry_integral(energy_report(f, x, r, eng, &P));
        if (v < out.score) {
            out.score = v;
            out.witness = P;
        }
    }
    out.score = std::max(out.score, 0.0);
    return out;
}

struct StratumLabel {
    Vec x;
    std::vector<double> scales;
    std::vector<std::vector<double>> scores;  // [scale][k], k = 0..m
    std::vector<int> top_k;                   // per scale: largest k with score <= eps, -1 if none
    int k_star = -1;                          // max over scales of top_k
};

/// Labels each point by the largest k for which u is (k, eps)-symmetric at some sampled scale;
/// the point then lies in S^j_eps exactly for j >= k_star.
inline std::vector<StratumLabel> stratification_sample(const MapField& f, const std::vector<Vec>& points,
                                                       const std::vector<double>& scales, double eps, const Engine& eng,
                                                       const Plane* extra = nullptr)
{
    const int m = f.dim();
    std::vector<StratumLabel> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        StratumLabel& lab = out[i];
        lab.x = points[i];
        lab.scales = scales;
        for (double s : scales) {
            std::vector<double> row;
            int top = -1;
            for (int k = 0; k <= m; ++k) {
                const double v = symmetry_score(f, points[i], s, k, eng, extra).score;
                row.push_back(v);
                if (v <= eps) top = k;
            }
            lab.scores.push_back(row);
            lab.top_k.push_back(top);
            lab.k_star = std::max(lab.k_star, top);
        }
    }
    return out;
}

/// r_x = c0 + c1 |pi_{L_A}(x - base)|.
struct RadiusFunction {
    double c0 = 0.0;
    double c1 = 0.0;
    double operator()(const Vec& x, const AffinePlane& L_A) const { return c0 + c1 * L_A.plane.project(x - L_A.base).norm(); }
    Json to_json() const { return Json{{"c0", c0}, {"c1", c1}, {"form", "c0 + c1*|pi_LA(x - base)|"}}; }
};

struct CertificateEntry {
    std::string name;
    double value = 0.0;
    bool binding = false;  // contributes to certified_delta
    std::string where;
};

struct RegionCertificate {
    std::string kind;
    double certified_delta = 0.0;
    std::vector<CertificateEntry> breakdown;
    bool nontrivial = true;  // (a3) or (b3) against the configured floor
    Json descriptor;
    std::string note;

    double entry(const std::string& name) const
    {
        for (const auto& e : breakdown)
            if (e.name == name) return e.value;
        throw Error(Errc::InvalidArgument, "no certificate entry " + name);
    }
    std::string binding_condition() const
    {
        std::string best;
        double v = -1.0;
        for (const auto& e : breakdown)
            if (e.binding && e.value > v) {
                v = e.value;
                best = e.name;
            }
        return best;
    }
    Json to_json() const
    {
        Json j{{"kind", kind}, {"certified_delta", certified_delta}, {"nontrivial", nontrivial}, {"binding", binding_condition()}};
        Json b = Json::array();
        for (const auto& e : breakdown) b.push_back(Json{{"name", e.name}, {"value", e.value}, {"binding", e.binding}, {"where", e.where}});
        j["breakdown"] = b;
        j["descriptor"] = descriptor;
        j["note"] = note;
        return j;
    }
};

struct AnnularSpec {
    int r_points = 8;       // geometric r-grid size per sample
    double r_max = 2.0;     // desk-domain truncation of the scale range
    double eps0 = 0.1;      // nontriviality floor for (a3)
    int stride = 1;         // use every stride-th lattice node
};

namespace detail {

inline std::string point_str(const Vec& x, double r)
{
    std::ostringstream os;
    os << std::setprecision(6) << "x=(";
    for (int i = 0; i < x.size(); ++i) os << (i ? "," : "") << x(i);
    os << ") r=" << r;
    return os.str();
}

inline Json engine_json(const Engine& eng) { return Json{{"R", eng.R()}, {"quadrature", eng.quad().to_json()}}; }

inline std::vector<double> geometric_grid(double a, double b, int n)
{
    std::vector<double> g;
    if (n <= 1 || b <= a) return {a};
    for (int i = 0; i < n; ++i) g.push_back(a * std::pow(b / a, static_cast<double>(i) / (n - 1)));
    return g;
}

} // namespace detail

/// Checks (a1) graph bounds, (a2) pinching over [r_x, r_max], (a3) theta(x, r_x) > eps0.
inline RegionCertificate annular_certificate(const MapField& f, const SubmanifoldGraph& T, const RadiusFunction& rr,
                                             const AnnularSpec& spec, const Engine& eng)
{
    RegionCertificate c;
    c.kind = "annular";
    const AffinePlane& LA = T.base();
    // (a1): |t| + |grad t| + r_x |hess t|
    double rmax_x = 0.0;
    for (std::size_t i = 0; i < T.size(); ++i) rmax_x = std::max(rmax_x, rr(T.node_point(i), LA));
    const double a1_sup = T.sup_norm(), a1_grad = T.grad_norm(), a1_hess = rmax_x * T.hessian_norm();
    const double a1 = a1_sup + a1_grad + a1_hess;
    std::vector<std::size_t> nodes;
    for (std::size_t i = 0; i < T.size(); i += static_cast<std::size_t>(std::max(1, spec.stride))) nodes.push_back(i);
    std::vector<double> pin(nodes.size(), 0.0), th(nodes.size(), 0.0);
    std::vector<double> pin_r(nodes.size(), 0.0);
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        const Vec x = T.node_point(nodes[k]);
        const double rx = rr(x, LA);
        if (!(rx > 0.0)) throw Error(Errc::InvalidArgument, "radius function must be positive on the graph");
        for (double r : detail::geometric_grid(rx, std::max(rx, spec.r_max), spec.r_points)) {
            const EnergyReport rep = energy_report(f, x, r, eng);
            if (r == rx) th[k] = rep.theta;
            if (rep.pinching > pin[k]) {
                pin[k] = rep.pinching;
                pin_r[k] = r;
            }
        }
    }
    std::size_t kp = 0, kt = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (pin[k] > pin[kp]) kp = k;
        if (th[k] < th[kt]) kt = k;
    }
    const double a2 = nodes.empty() ? 0.0 : pin[kp];
    const double a3 = nodes.empty() ? 0.0 : th[kt];
    c.breakdown.push_back({"a1_sup", a1_sup, false, ""});
    c.breakdown.push_back({"a1_grad", a1_grad, false, ""});
    c.breakdown.push_back({"a1_hess", a1_hess, false, ""});
    c.breakdown.push_back({"a1", a1, true, ""});
    c.breakdown.push_back({"a2", a2, true, nodes.empty() ? "" : detail::point_str(T.node_point(nodes[kp]), pin_r[kp])});
    c.breakdown.push_back({"a3_min_theta", a3, false, nodes.empty() ? "" : detail::point_str(T.node_point(nodes[kt]), rr(T.node_point(nodes[kt]), LA))});
    c.breakdown.push_back({"a3_floor", spec.eps0, false, ""});
    c.certified_delta = std::max(a1, a2);
    c.nontrivial = a3 > spec.eps0;
    c.descriptor = Json{{"field", f.metadata()}, {"radius", rr.to_json()}, {"graph", T.to_json()}, {"lattice", T.lattice_json()},
                        {"r_points", spec.r_points}, {"r_max", spec.r_max}, {"eps0", spec.eps0}, {"stride", spec.stride},
                        {"engine", detail::engine_json(eng)}};
    c.note = "flat base: curvature condition vacuous; (a2) scale range truncated to r <= r_max";
    return c;
}

struct ExcludedBall {
    Vec center;
    double radius = 0.0;
};

struct BubbleSpec {
    int samples_per_axis = 9;   // tensor sample lattice over B_r(center)
    double eps_floor = 1.0;     // (b3) nontriviality floor for the model's slice energy
    double slice_scale = 0.0;   // radial grading scale for the slice integral (0: r / 100)
};

/// Checks (b1) r^2 |pi_L grad u|^2, (b2) |b - u|^2 + r^2 |grad b - grad u|^2 on sampled points of
/// B_r(center) minus the excluded balls, (b3) the model's energy on the slice center + L perp,
/// and (b4) the excluded radii relative to r.
inline RegionCertificate bubble_certificate(const MapField& f, const Vec& center, double r, const Plane& L,
                                            const std::vector<ExcludedBall>& excluded, const MapField& model,
                                            const BubbleSpec& spec, const Engine& eng)
{
    const int m = f.dim();
    if (model.dim() != m || L.ambient() != m || center.size() != m) throw Error(Errc::DimensionMismatch, "bubble certificate inputs differ in dimension");
    RegionCertificate c;
    c.kind = "bubble";
    const int n = std::max(2, spec.samples_per_axis);
    const Mat PL = L.projector();
    double b1 = 0.0, b2 = 0.0;
    Vec w1, w2;
    std::size_t total = 1;
    for (int i = 0; i < m; ++i) total *= static_cast<std::size_t>(n);
    for (std::size_t lin = 0; lin < total; ++lin) {
        std::size_t rem = lin;
        Vec y(m);
        for (int i = 0; i < m; ++i) {
            const int k = static_cast<int>(rem % n);
            rem /= n;
            y(i) = center(i) + r * (-1.0 + 2.0 * k / (n - 1));
        }
        if ((y - center).norm() > r) continue;
        bool skip = false;
        for (const auto& e : excluded)
            if ((y - e.center).norm() < e.radius) skip = true;
        for (const Vec& p : f.singular_points())
            if ((y - p).norm() < 1e-9) skip = true;
        if (skip) continue;
        const FieldSample su = f.sample(y);
        const FieldSample sb = model.sample(y);
        const double v1 = r * r * (PL * su.J).squaredNorm();
        const double v2 = (sb.u - su.u).squaredNorm() + r * r * (sb.J - su.J).squaredNorm();
        if (v1 > b1) {
            b1 = v1;
            w1 = y;
        }
        if (v2 > b2) {
            b2 = v2;
            w2 = y;
        }
    }
    // (b3) slice energies through the center
    const Plane Lp = L.complement();
    auto sliced = [&](const MapField& g) {
        auto base = std::shared_ptr<const MapField>(&g, [](const MapField*) {});
        SliceField s(base, center, Lp.basis());
        std::vector<ExcludedBall> ex2;
        for (const auto& e : excluded) {
            const Vec d = e.center - center;
            const double off = L.project(d).norm();
            if (off < e.radius) ex2.push_back({Lp.basis().transpose() * d, std::sqrt(e.radius * e.radius - off * off)});
        }
        const double scale = spec.slice_scale > 0.0 ? spec.slice_scale : r / 100.0;
        const Layout lay = polar_layout(Vec::Zero(2), scale);
        QuadratureSpec q = eng.quad();
        const auto v = integrate_ball(&s, 2, Vec::Zero(2), r, r / 8.0, q, lay, 1,
            [&](const Vec& w, const FieldSample* smp, double wt, double* acc) {
                for (const auto& e : ex2)
                    if ((w - e.center).norm() < e.radius) return;
                acc[0] += wt * smp->J.squaredNorm();
            });
        return v[0];
    };
    const double eb = sliced(model);
    const double eu = sliced(f);
    double rmin = std::numeric_limits<double>::infinity();
    for (const auto& e : excluded) rmin = std::min(rmin, e.radius);
    c.breakdown.push_back({"b1", b1, true, w1.size() ? detail::point_str(w1, r) : ""});
    c.breakdown.push_back({"b2", b2, true, w2.size() ? detail::point_str(w2, r) : ""});
    c.breakdown.push_back({"b3_model_energy", eb, false, ""});
    c.breakdown.push_back({"b3_field_energy", eu, false, ""});
    c.breakdown.push_back({"b3_mismatch", std::abs(eu - eb), false, ""});
    c.breakdown.push_back({"b4_min_excluded_over_r", excluded.empty() ? 0.0 : rmin / r, false, ""});
    c.certified_delta = std::max(b1, b2);
    c.nontrivial = eb > spec.eps_floor;
    Json ex = Json::array();
    for (const auto& e : excluded) ex.push_back(Json{{"center", std::vector<double>(e.center.data(), e.center.data() + e.center.size())}, {"radius", e.radius}});
    c.descriptor = Json{{"field", f.metadata()}, {"model", model.metadata()}, {"r", r}, {"excluded", ex},
                        {"center", std::vector<double>(center.data(), center.data() + center.size())},
                        {"samples_per_axis", n}, {"eps_floor", spec.eps_floor}, {"slice_scale", spec.slice_scale},
                        {"engine", detail::engine_json(eng)}};
    Json basis = Json::array();
    for (int j = 0; j < L.dim(); ++j) {
        const Vec v = L.basis().col(j);
        basis.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    }
    c.descriptor["plane"] = Json{{"ambient", m}, {"basis", basis}};
    c.note = "b2 sampled on a tensor lattice; b3 integrates the slice-tangential energy";
    return c;
}

/// Recomputes a certificate from its descriptor alone.
inline RegionCertificate replay_certificate(const Json& d)
{
    auto vec = [](const Json& a) {
        const auto v = a.get<std::vector<double>>();
        return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    const Engine eng(d.at("engine").at("R").get<double>(), QuadratureSpec::from_json(d.at("engine").at("quadrature")));
    const FieldPtr f = field_from_metadata(d.at("field"));
    if (d.contains("lattice")) {
        const SubmanifoldGraph T = SubmanifoldGraph::from_lattice_json(d.at("lattice"));
        const RadiusFunction rr{d.at("radius").at("c0").get<double>(), d.at("radius").at("c1").get<double>()};
        AnnularSpec spec;
        spec.r_points = d.at("r_points").get<int>();
        spec.r_max = d.at("r_max").get<double>();
        spec.eps0 = d.at("eps0").get<double>();
        spec.stride = d.at("stride").get<int>();
        return annular_certificate(*f, T, rr, spec, eng);
    }
    const int m = d.at("plane").at("ambient").get<int>();
    Mat B(m, d.at("plane").at("basis").size());
    for (std::size_t c = 0; c < d.at("plane").at("basis").size(); ++c) B.col(static_cast<Eigen::Index>(c)) = vec(d.at("plane").at("basis")[c]);
    std::vector<ExcludedBall> ex;
    for (const auto& e : d.at("excluded")) ex.push_back({vec(e.at("center")), e.at("radius").get<double>()});
    BubbleSpec spec;
    spec.samples_per_axis = d.at("samples_per_axis").get<int>();
    spec.eps_floor = d.at("eps_floor").get<double>();
    spec.slice_scale = d.at("slice_scale").get<double>();
    return bubble_certificate(*f, vec(d.at("center")), d.at("r").get<double>(), Plane::from_orthonormal(m, B), ex,
                              *field_from_metadata(d.at("model")), spec, eng);
}

struct ConeSplitting {
    double lhs = 0.0;
    double rhs = 0.0;
    double ratio = 0.0;
    double alpha = 0.0;  // achieved independence margin / r
    bool top = false;
};

/// lhs = theta(x0, r; L) + theta(x0, r; n_{L perp}) (top variant: + full L perp term),
/// rhs = sum_j r theta_dot(x_j, 1.2 r) (top variant: 1.4 r), with L = span{x_j - x0}.
inline ConeSplitting cone_splitting_check(const MapField& f, const std::vector<Vec>& pts, double r, const Engine& eng,
                                          bool top = false, double alpha = 0.01)
{
    const int m = f.dim();
    if (pts.empty()) throw Error(Errc::DegenerateConfiguration, "no points");
    std::vector<Vec> dirs;
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j < pts.size(); ++j) {
        Vec d = pts[j] - pts[0];
        Vec res = d;
        for (const Vec& q : dirs) res -= q.dot(res) * q;
        const double dist = res.norm();
        margin = std::min(margin, dist / r);
        if (dist < alpha * r) throw Error(Errc::DegenerateConfiguration, "points are not alpha-linearly independent at this scale");
        dirs.push_back(res / dist);
    }
    if (dirs.size() > static_cast<std::size_t>(m)) throw Error(Errc::DegenerateConfiguration, "too many points for the dimension");
    const Plane L = dirs.empty() ? Plane::from_orthonormal(m, Mat(m, 0)) : make_plane(m, dirs);
    const EnergyReport rep = energy_report(f, pts[0], r, eng, &L);
    ConeSplitting out;
    out.top = top;
    out.alpha = dirs.empty() ? 0.0 : margin;
    out.lhs = top ? rep.part_L + rep.part_perp : rep.part_L + rep.part_n;
    const double s = top ? 1.4 : 1.2;
    for (const Vec& p : pts) out.rhs += energy_report(f, p, s * r, eng).pinching;
    out.ratio = out.rhs > 0.0 ? out.lhs / out.rhs : (out.lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    return out;
}

inline void write_stratification_csv(const std::vector<StratumLabel>& labels, std::ostream& os)
{
    os << std::setprecision(17);
    if (labels.empty()) return;
    const int m = static_cast<int>(labels[0].x.size());
    for (int i = 0; i < m; ++i) os << "x" << i + 1 << ",";
    os << "scale,";
    for (std::size_t k = 0; k < labels[0].scores[0].size(); ++k) os << "sigma_" << k << ",";
    os << "top_k,k_star\r\n";
    for (const auto& lab : labels)
        for (std::size_t s = 0; s < lab.scales.size(); ++s) {
            for (int i = 0; i < m; ++i) os << lab.x(i) << ",";
            os << lab.scales[s] << ",";
            for (double v : lab.scores[s]) os << v << ",";
            os << lab.top_k[s] << "," << lab.k_star << "\r\n";
        }
}

} // namespace bubblescope
