#pragma once

#include "core.hpp"
#include "fields.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace bubblescope {

/// Samples of u on a regular lattice, interpolated multilinearly and renormalized onto S^2.
/// The Jacobian is the exact derivative of the normalized interpolant.
class GridField final : public MapField {
public:
    GridField(int m, std::vector<int> n, Vec lo, double spacing, std::vector<Vec3> values)
        : m_(m), n_(std::move(n)), lo_(std::move(lo)), h_(spacing), u_(std::move(values))
    {
        if (m < 1 || m > kMaxDim) throw Error(Errc::InvalidArgument, "grid dimension out of range");
        if (static_cast<int>(n_.size()) != m || lo_.size() != m) throw Error(Errc::DimensionMismatch, "grid header inconsistent with m");
        if (!(h_ > 0.0)) throw Error(Errc::InvalidArgument, "grid spacing must be positive");
        std::size_t total = 1;
        for (int k : n_) {
            if (k < 2) throw Error(Errc::InvalidArgument, "grid needs at least 2 nodes per axis");
            total *= static_cast<std::size_t>(k);
        }
        if (u_.size() != total) throw Error(Errc::DimensionMismatch, "grid sample count differs from header");
    }

    int dim() const override { return m_; }
    double spacing() const { return h_; }
    const Vec& lo() const { return lo_; }
    Vec hi() const
    {
        Vec v = lo_;
        for (int i = 0; i < m_; ++i) v(i) += h_ * (n_[i] - 1);
        return v;
    }

    bool contains_ball(const Vec& x, double rad) const override
    {
        const Vec h = hi();
        for (int i = 0; i < m_; ++i)
            if (x(i) - rad < lo_(i) || x(i) + rad > h(i)) return false;
        return true;
    }

    FieldSample sample(const Vec& y) const override
    {
        if (y.size() != m_) throw Error(Errc::DimensionMismatch, "point dimension differs from grid dimension");
        std::array<int, kMaxDim> i0{};
        std::array<double, kMaxDim> fr{};
        for (int i = 0; i < m_; ++i) {
            const double s = (y(i) - lo_(i)) / h_;
            if (s < -1e-12 || s > n_[i] - 1 + 1e-12) throw Error(Errc::DomainEscape, "point outside the grid");
            int k = static_cast<int>(std::floor(s));
            k = std::clamp(k, 0, n_[i] - 2);
            i0[i] = k;
            fr[i] = s - k;
        }
        Vec3 v = Vec3::Zero();
        Eigen::Matrix<double, Eigen::Dynamic, 3, 0, kMaxDim, 3> dv = Eigen::Matrix<double, Eigen::Dynamic, 3, 0, kMaxDim, 3>::Zero(m_, 3);
        for (int corner = 0; corner < (1 << m_); ++corner) {
            std::size_t idx = 0, stride = 1;
            double w = 1.0;
            std::array<double, kMaxDim> wi{};
            for (int i = 0; i < m_; ++i) {
                const int b = (corner >> i) & 1;
                idx += static_cast<std::size_t>(i0[i] + b) * stride;
                stride *= static_cast<std::size_t>(n_[i]);
                wi[i] = b ? fr[i] : 1.0 - fr[i];
                w *= wi[i];
            }
            const Vec3& uc = u_[idx];
            v += w * uc;
            for (int i = 0; i < m_; ++i) {
                double dw = ((corner >> i) & 1 ? 1.0 : -1.0) / h_;
                for (int k = 0; k < m_; ++k)
                    if (k != i) dw *= wi[k];
                dv.row(i) += dw * uc.transpose();
            }
        }
        const double nv = v.norm();
        if (nv < 1e-12) throw Error(Errc::NonFiniteSample, "interpolated grid value vanishes");
        FieldSample s;
        s.u = v / nv;
        const Eigen::Matrix3d T = (Eigen::Matrix3d::Identity() - s.u * s.u.transpose()) / nv;
        s.J.resize(m_, 3);
        for (int i = 0; i < m_; ++i) s.J.row(i) = (T * dv.row(i).transpose()).transpose();
        return s;
    }

    Json metadata() const override
    {
        Json j{{"family", "grid"}, {"m", m_}, {"spacing", h_}};
        j["n"] = n_;
        Json lo = Json::array();
        for (int i = 0; i < m_; ++i) lo.push_back(lo_(i));
        j["lo"] = lo;
        if (!source_.empty()) j["source"] = source_;
        return j;
    }
    void set_source(std::string s) { source_ = std::move(s); }

private:
    int m_;
    std::vector<int> n_;
    Vec lo_;
    double h_;
    std::vector<Vec3> u_;
    std::string source_;
};

/// CSV grid format: a header line "# m=<m> n=<n1>,...,<nm> lo=<l1>,...,<lm> spacing=<h>",
/// then one line y_1,...,y_m,u_1,u_2,u_3 per node with the first axis varying fastest.
inline void write_grid_csv(const MapField& f, const Vec& lo, double spacing, const std::vector<int>& n, std::ostream& os)
{
    const int m = f.dim();
    os << std::setprecision(17);
    os << "# m=" << m << " n=";
    for (int i = 0; i < m; ++i) os << (i ? "," : "") << n[i];
    os << " lo=";
    for (int i = 0; i < m; ++i) os << (i ? "," : "") << lo(i);
    os << " spacing=" << spacing << "\n";
    std::size_t total = 1;
    for (int k : n) total *= static_cast<std::size_t>(k);
    Vec y(m);
    for (std::size_t lin = 0; lin < total; ++lin) {
        std::size_t rem = lin;
        for (int i = 0; i < m; ++i) {
            y(i) = lo(i) + spacing * static_cast<double>(rem % n[i]);
            rem /= n[i];
        }
        const Vec3 u = f.value(y);
        for (int i = 0; i < m; ++i) os << y(i) << ",";
        os << u(0) << "," << u(1) << "," << u(2) << "\n";
    }
}

namespace detail {

inline std::vector<double> split_doubles(const std::string& s)
{
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

} // namespace detail

inline std::shared_ptr<GridField> read_grid_csv(std::istream& is, const std::string& source = "")
{
    std::string line;
    if (!std::getline(is, line) || line.rfind("#", 0) != 0) throw Error(Errc::IoError, "grid file lacks a '#' header line");
    int m = 0;
    std::vector<int> n;
    std::vector<double> lo;
    double h = 0.0;
    try {
        std::stringstream hs(line.substr(1));
        std::string tok;
        while (hs >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
            if (key == "m") m = std::stoi(val);
            else if (key == "n") for (double d : detail::split_doubles(val)) n.push_back(static_cast<int>(d));
            else if (key == "lo") lo = detail::split_doubles(val);
            else if (key == "spacing") h = std::stod(val);
        }
    } catch (const std::exception& e) {
        throw Error(Errc::IoError, std::string("malformed grid header: ") + e.what());
    }
    if (m < 1 || static_cast<int>(n.size()) != m || static_cast<int>(lo.size()) != m || !(h > 0.0))
        throw Error(Errc::IoError, "grid header must give m, n, lo and spacing");
    std::vector<Vec3> vals;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> d;
        try {
            d = detail::split_doubles(line);
        } catch (const std::exception&) {
            throw Error(Errc::IoError, "unparsable grid line " + std::to_string(lineno));
        }
        if (static_cast<int>(d.size()) != m + 3) throw Error(Errc::IoError, "grid line " + std::to_string(lineno) + " has the wrong column count");
        vals.emplace_back(d[m], d[m + 1], d[m + 2]);
    }
    Vec lov(m);
    for (int i = 0; i < m; ++i) lov(i) = lo[i];
    auto g = std::make_shared<GridField>(m, n, lov, h, std::move(vals));
    g->set_source(source);
    return g;
}

inline std::shared_ptr<GridField> load_grid_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error(Errc::IoError, "cannot open grid file " + path);
    return read_grid_csv(in, path);
}

/// Rebuilds a field from its metadata(); grid fields are reloaded from their recorded source.
inline FieldPtr field_from_metadata(const Json& j)
{
    auto vec = [](const Json& a) {
        const auto v = a.get<std::vector<double>>();
        return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    auto bubble = [](const Json& b) {
        return bubble_params(b.at("lambda").get<double>(), b.at("center")[0].get<double>(), b.at("center")[1].get<double>(),
                             b.at("orientation").get<int>());
    };
    const std::string fam = j.at("family").get<std::string>();
    if (fam == "constant") {
        const auto u = j.at("value").get<std::vector<double>>();
        return make_constant(j.at("m").get<int>(), Vec3(u.at(0), u.at(1), u.at(2)));
    }
    if (fam == "standard_bubble") return make_standard_bubble(bubble(j.at("bubble")));
    if (fam == "product_bubble") return make_product_bubble(j.at("m").get<int>(), bubble(j.at("bubble")));
    if (fam == "cone_map")
        return make_cone_map(j.at("lambda").get<double>(), j.at("variant").get<std::string>() == "literal" ? ConeVariant::Literal : ConeVariant::Balanced);
    if (fam == "bent_bubble")
        return make_bent_bubble(j.at("m").get<int>(), bubble(j.at("bubble")), j.at("tau").at("amplitude").get<double>(),
                                j.at("tau").at("frequency").get<double>());
    if (fam == "rotated") {
        const Json& rows = j.at("rotation");
        Mat R(rows.size(), rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t k = 0; k < rows.size(); ++k) R(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k].get<double>();
        return std::make_shared<RotatedField>(field_from_metadata(j.at("base")), R);
    }
    if (fam == "link_chart") {
        const auto p = j.at("pole").get<std::vector<double>>();
        return std::make_shared<LinkChart>(field_from_metadata(j.at("base")), Vec3(p.at(0), p.at(1), p.at(2)));
    }
    if (fam == "slice") {
        const Vec o = vec(j.at("origin"));
        Mat E(o.size(), 2);
        for (int c = 0; c < 2; ++c) E.col(c) = vec(j.at("frame")[c]);
        return std::make_shared<SliceField>(field_from_metadata(j.at("base")), o, E);
    }
    if (fam == "grid") {
        if (!j.contains("source")) throw Error(Errc::InvalidArgument, "grid metadata has no source file to reload");
        return load_grid_csv(j.at("source").get<std::string>());
    }
    throw Error(Errc::InvalidArgument, "unknown field family " + fam);
}

} // namespace bubblescope
