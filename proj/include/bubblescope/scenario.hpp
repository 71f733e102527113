#pragma once

#include "bestfit.hpp"
#include "core.hpp"
#include "energy.hpp"
#include "fields.hpp"
#include "gauss.hpp"
#include "geometry.hpp"
#include "grid_field.hpp"
#include "identity.hpp"
#include "mollifier.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "regions.hpp"
#include "residuals.hpp"

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace bubblescope {

// ---------------------------------------------------------------------------------------------
// checksums and CSV

inline std::uint64_t fnv1a64(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::string checksum(std::string_view s) { return hex64(fnv1a64(s)); }

/// RFC-4180 writer: CRLF records, quoting on demand, 17 significant digits.
class CsvWriter {
public:
    CsvWriter() { os_ << std::setprecision(17); }

    void comment(const std::string& line) { os_ << "# " << line << "\r\n"; }
    void header(const std::vector<std::string>& cols)
    {
        begin();
        for (const auto& c : cols) cell(c);
        end();
    }
    void begin() { first_ = true; }
    void end() { os_ << "\r\n"; }
    void cell(const std::string& s)
    {
        sep();
        if (s.find_first_of(",\"\r\n") == std::string::npos) {
            os_ << s;
            return;
        }
        os_ << '"';
        for (char c : s) {
            if (c == '"') os_ << '"';
            os_ << c;
        }
        os_ << '"';
    }
    void cell(const char* s) { cell(std::string(s)); }
    void cell(double v)
    {
        sep();
        if (std::isfinite(v)) os_ << v;
        else if (std::isnan(v)) os_ << "nan";
        else os_ << (v > 0 ? "inf" : "-inf");
    }
    void cell(int v)
    {
        sep();
        os_ << v;
    }
    void cell(std::size_t v)
    {
        sep();
        os_ << v;
    }
    void empty() { sep(); }
    std::string str() const { return os_.str(); }

private:
    void sep()
    {
        if (!first_) os_ << ',';
        first_ = false;
    }
    std::ostringstream os_;
    bool first_ = true;
};

// ---------------------------------------------------------------------------------------------
// config access

/// Read-only view of a JSON object with a dotted path for error messages.
class ConfigNode {
public:
    ConfigNode(const Json& j, std::string path) : j_(&j), path_(std::move(path))
    {
        if (!j.is_object()) fail("", "must be an object");
    }

    const std::string& path() const { return path_; }
    const Json& json() const { return *j_; }
    bool has(const std::string& key) const { return j_->contains(key) && !(*j_)[key].is_null(); }

    [[noreturn]] void fail(const std::string& key, const std::string& why) const
    {
        std::string where = path_;
        if (!key.empty()) where += (where.empty() ? "" : ".") + key;
        throw Error(Errc::ConfigError, where + ": " + why);
    }

    double number(const std::string& key) const
    {
        if (!has(key)) fail(key, "required field missing");
        const Json& v = (*j_)[key];
        if (!v.is_number()) fail(key, "must be a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) fail(key, "must be finite");
        return d;
    }
    double number(const std::string& key, double dflt) const { return has(key) ? number(key) : dflt; }
    double positive(const std::string& key) const
    {
        const double d = number(key);
        if (!(d > 0.0)) fail(key, "must be positive");
        return d;
    }
    double positive(const std::string& key, double dflt) const { return has(key) ? positive(key) : dflt; }
    int integer(const std::string& key) const
    {
        if (!has(key)) fail(key, "required field missing");
        const Json& v = (*j_)[key];
        if (!v.is_number_integer()) fail(key, "must be an integer");
        return v.get<int>();
    }
    int integer(const std::string& key, int dflt) const { return has(key) ? integer(key) : dflt; }
    bool boolean(const std::string& key, bool dflt) const
    {
        if (!has(key)) return dflt;
        const Json& v = (*j_)[key];
        if (!v.is_boolean()) fail(key, "must be true or false");
        return v.get<bool>();
    }
    std::string string(const std::string& key) const
    {
        if (!has(key)) fail(key, "required field missing");
        const Json& v = (*j_)[key];
        if (!v.is_string()) fail(key, "must be a string");
        return v.get<std::string>();
    }
    std::string string(const std::string& key, const std::string& dflt) const { return has(key) ? string(key) : dflt; }
    std::vector<double> numbers(const std::string& key) const
    {
        if (!has(key)) fail(key, "required field missing");
        const Json& v = (*j_)[key];
        if (!v.is_array()) fail(key, "must be an array of numbers");
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) fail(key, "must be an array of numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }
    std::vector<double> numbers(const std::string& key, std::vector<double> dflt) const { return has(key) ? numbers(key) : dflt; }
    std::vector<int> integers(const std::string& key) const
    {
        if (!has(key)) fail(key, "required field missing");
        const Json& v = (*j_)[key];
        if (!v.is_array()) fail(key, "must be an array of integers");
        std::vector<int> out;
        for (const auto& e : v) {
            if (!e.is_number_integer()) fail(key, "must be an array of integers");
            out.push_back(e.get<int>());
        }
        return out;
    }
    Vec point(const std::string& key, int m) const
    {
        const auto v = numbers(key);
        if (static_cast<int>(v.size()) != m) fail(key, "must have " + std::to_string(m) + " coordinates");
        Vec x(m);
        for (int i = 0; i < m; ++i) x(i) = v[i];
        return x;
    }
    std::vector<Vec> points(const std::string& key, int m) const
    {
        if (!has(key)) fail(key, "required field missing");
        const Json& v = (*j_)[key];
        if (!v.is_array() || v.empty()) fail(key, "must be a non-empty array of points");
        std::vector<Vec> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_array() || static_cast<int>(v[i].size()) != m) fail(key, "each point needs " + std::to_string(m) + " coordinates");
            Vec x(m);
            for (int k = 0; k < m; ++k) {
                if (!v[i][k].is_number()) fail(key, "coordinates must be numbers");
                x(k) = v[i][k].get<double>();
            }
            out.push_back(x);
        }
        return out;
    }
    ConfigNode child(const std::string& key) const
    {
        if (!has(key)) fail(key, "required section missing");
        return ConfigNode((*j_)[key], path_.empty() ? key : path_ + "." + key);
    }
    std::optional<ConfigNode> maybe_child(const std::string& key) const
    {
        if (!has(key)) return std::nullopt;
        return child(key);
    }

private:
    const Json* j_;
    std::string path_;
};

// ---------------------------------------------------------------------------------------------
// fields, engine

/// Builds the field; `lambda_override` replaces the configured scale (family members).
inline FieldPtr field_from_config(const ConfigNode& c, const std::filesystem::path& base_dir,
                                  double lambda_override = std::numeric_limits<double>::quiet_NaN())
{
    const std::string fam = c.string("family");
    auto lambda = [&] {
        if (std::isfinite(lambda_override)) return lambda_override;
        return c.positive("lambda");
    };
    auto params = [&] {
        BubbleParams p;
        p.lambda = lambda();
        const auto ctr = c.numbers("center", {0.0, 0.0});
        if (ctr.size() != 2) c.fail("center", "must have 2 coordinates");
        p.center = Eigen::Vector2d(ctr[0], ctr[1]);
        p.orientation = c.integer("orientation", 1);
        if (p.orientation != 1 && p.orientation != -1) c.fail("orientation", "must be 1 or -1");
        return p;
    };
    if (fam == "constant") {
        const int m = c.integer("m", 2);
        if (m < 1 || m > kMaxDim) c.fail("m", "must be between 1 and 4");
        const auto v = c.numbers("value", {0.0, 0.0, 1.0});
        if (v.size() != 3) c.fail("value", "must have 3 components");
        const Vec3 u(v[0], v[1], v[2]);
        if (std::abs(u.norm() - 1.0) > 1e-12) c.fail("value", "must be a unit vector");
        return make_constant(m, u);
    }
    if (fam == "standard_bubble") return make_standard_bubble(params());
    if (fam == "product_bubble") {
        const int m = c.integer("m", 3);
        if (m < 2 || m > kMaxDim) c.fail("m", "must be between 2 and 4");
        return make_product_bubble(m, params());
    }
    if (fam == "cone_map") {
        const std::string v = c.string("variant", "balanced");
        if (v != "balanced" && v != "literal") c.fail("variant", "must be 'balanced' or 'literal'");
        return make_cone_map(lambda(), v == "literal" ? ConeVariant::Literal : ConeVariant::Balanced);
    }
    if (fam == "bent_bubble") {
        const int m = c.integer("m", 3);
        if (m != 3 && m != 4) c.fail("m", "must be 3 or 4");
        const double a = c.number("a");
        if (a < 0.0) c.fail("a", "must be nonnegative");
        const double freq = c.number("frequency", 0.5);
        if (!(freq > 0.0) || freq > 1.0) c.fail("frequency", "must lie in (0, 1]");
        return make_bent_bubble(m, params(), a, freq);
    }
    if (fam == "grid") {
        std::filesystem::path p = c.string("path");
        if (p.is_relative()) p = base_dir / p;
        try {
            return load_grid_csv(p.string());
        } catch (const Error& e) {
            c.fail("path", e.what());
        }
    }
    c.fail("family", "unknown family '" + fam + "'");
}

inline Engine engine_from_config(const ConfigNode& root)
{
    double R = 20.0;
    if (auto m = root.maybe_child("mollifier")) R = m->positive("R", 20.0);
    QuadratureSpec q;
    if (auto qc = root.maybe_child("quadrature")) {
        try {
            q.scheme = scheme_from_name(qc->string("scheme", "auto"));
        } catch (const Error&) {
            qc->fail("scheme", "must be auto, tensor, spherical or separable");
        }
        q.nodes_per_axis = qc->integer("nodes_per_axis", q.nodes_per_axis);
        q.nodes_per_panel = qc->integer("nodes_per_panel", q.nodes_per_panel);
        q.angular_nodes = qc->integer("angular_nodes", q.angular_nodes);
        q.panel_width = qc->positive("panel_width", q.panel_width);
        q.axial_panel_width = qc->positive("axial_panel_width", q.axial_panel_width);
        if (q.nodes_per_axis < 2) qc->fail("nodes_per_axis", "must be at least 2");
        if (q.nodes_per_panel < 2) qc->fail("nodes_per_panel", "must be at least 2");
        if (q.angular_nodes < 8) qc->fail("angular_nodes", "must be at least 8");
    }
    return Engine(R, q);
}

/// Coordinate plane spanned by the listed axes through `base`.
inline AffinePlane affine_from_config(const ConfigNode& c, int m, const std::string& axes_key = "plane_axes",
                                      const std::string& base_key = "base")
{
    const auto axes = c.integers(axes_key);
    for (int a : axes)
        if (a < 0 || a >= m) c.fail(axes_key, "axis index out of range");
    Mat B = Mat::Zero(m, static_cast<int>(axes.size()));
    for (std::size_t j = 0; j < axes.size(); ++j) B(axes[j], static_cast<int>(j)) = 1.0;
    for (std::size_t i = 0; i < axes.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (axes[i] == axes[j]) c.fail(axes_key, "axes must be distinct");
    AffinePlane ap;
    ap.plane = Plane::from_orthonormal(m, B);
    ap.base = c.has(base_key) ? c.point(base_key, m) : Vec::Zero(m);
    return ap;
}

inline std::vector<double> scale_grid(const ConfigNode& c, const std::string& prefix, int dflt_count)
{
    if (c.has(prefix + "s")) {
        auto v = c.numbers(prefix + "s");
        for (double r : v)
            if (!(r > 0.0)) c.fail(prefix + "s", "scales must be positive");
        return v;
    }
    const double lo = c.positive(prefix + "_min"), hi = c.positive(prefix + "_max");
    if (hi < lo) c.fail(prefix + "_max", "must not be below " + prefix + "_min");
    const int n = c.integer(prefix + "_count", dflt_count);
    if (n < 1) c.fail(prefix + "_count", "must be positive");
    return detail::geometric_grid(lo, hi, n);
}

// ---------------------------------------------------------------------------------------------
// analyses

struct Assertion {
    std::string name;
    double value = 0.0;
    double limit = 0.0;
    std::string relation;  // "<=", ">=", "=="
    bool pass = true;
    std::string where;

    Json to_json() const
    {
        return Json{{"name", name}, {"value", value}, {"limit", limit}, {"relation", relation}, {"pass", pass}, {"where", where}};
    }
};

struct PlotRow {
    std::string series;
    double x = 0.0;
    double y = 0.0;
};

struct AnalysisOutput {
    Json report = Json::object();
    std::vector<std::pair<std::string, std::string>> tables;  // suffix, CSV body
    std::vector<PlotRow> plot;
    std::vector<Assertion> assertions;

    void check(const std::string& name, double value, const std::string& rel, double limit, const std::string& where = "")
    {
        Assertion a{name, value, limit, rel, true, where};
        if (rel == "<=") a.pass = value <= limit;
        else if (rel == ">=") a.pass = value >= limit;
        else a.pass = value == limit;
        if (!std::isfinite(value)) a.pass = false;
        assertions.push_back(a);
    }
};

struct ScenarioContext {
    Json config;
    std::filesystem::path base_dir;
    FieldPtr field;
    Engine engine;
    std::uint64_t seed = 0;
    std::string name;

    ConfigNode field_node() const { return ConfigNode(config["field"], "field"); }
    Family family() const
    {
        const Json fj = config["field"];
        const auto dir = base_dir;
        return [fj, dir](double lam) { return field_from_config(ConfigNode(fj, "field"), dir, lam); };
    }
};

namespace detail {

inline std::string series_name(const std::string& what, const Vec& x)
{
    std::ostringstream os;
    os << std::setprecision(17) << what << " x=(";
    for (int i = 0; i < x.size(); ++i) os << (i ? " " : "") << x(i);
    os << ")";
    return os.str();
}

inline std::string fmt(double v)
{
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

/// Reference center curve from the field's declared concentration: base + L t + P shift(t).
inline std::optional<double> curve_distance(const MapField& f, const Vec& y)
{
    const Concentration c = f.concentration();
    if (!c.present || c.L.cols() != f.dim() - 2) return std::nullopt;
    const Vec t = c.L.transpose() * (y - c.base);
    Vec p = c.base + c.L * t;
    if (c.shift) {
        const Eigen::Vector2d s = c.shift(t);
        p += c.P.col(0) * s(0) + c.P.col(1) * s(1);
    }
    return (y - p).norm();
}

inline TrOptions tr_options(const ConfigNode& a)
{
    TrOptions o;
    o.newton_tol = a.positive("newton_tol", o.newton_tol);
    o.max_iterations = a.integer("max_iterations", o.max_iterations);
    o.spacing = a.positive("spacing", o.spacing);
    o.fd_step = a.positive("fd_step", o.fd_step);
    return o;
}

inline FieldPtr slice_of(const ConfigNode& a, const FieldPtr& f, Vec* origin_out = nullptr)
{
    if (a.has("link_pole")) {
        if (f->dim() != 3) a.fail("link_pole", "link charts need a field on R^3");
        const auto p = a.numbers("link_pole");
        if (p.size() != 3) a.fail("link_pole", "must have 3 components");
        const Vec3 v(p[0], p[1], p[2]);
        if (v.norm() < 1e-12) a.fail("link_pole", "must be nonzero");
        return link_slice(v)(f);
    }
    const int m = f->dim();
    if (m == 2 && !a.has("slice_axes")) return f;
    AffinePlane sl = affine_from_config(a, m, "slice_axes", "slice_base");
    if (sl.plane.dim() != 2) a.fail("slice_axes", "a slice needs exactly 2 axes");
    if (origin_out) *origin_out = sl.base;
    return plane_slice(sl)(f);
}

inline ExtractSpec extract_spec(const ConfigNode& a)
{
    ExtractSpec es;
    es.window_radius = a.positive("window_radius", 1.0);
    const auto wc = a.numbers("window_center", {0.0, 0.0});
    if (wc.size() != 2) a.fail("window_center", "must have 2 coordinates");
    es.window_center = Eigen::Vector2d(wc[0], wc[1]);
    es.eps0 = a.positive("eps0", 1.0);
    es.S = a.number("S", 10.0);
    if (!(es.S > 1.0)) a.fail("S", "must exceed 1");
    es.seeds_per_axis = a.integer("seeds_per_axis", 33);
    if (es.seeds_per_axis < 3) a.fail("seeds_per_axis", "must be at least 3");
    return es;
}

inline void tree_outputs(const BubbleTree& tree, AnalysisOutput& out, const std::string& prefix)
{
    CsvWriter w;
    w.header({"node", "c1", "c2", "lambda", "ball_radius", "captured", "tail", "energy", "fit_rms", "pyramid_scale", "parent"});
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const auto& n = tree.nodes[i];
        w.begin();
        w.cell(i);
        w.cell(n.center(0));
        w.cell(n.center(1));
        w.cell(n.lambda);
        w.cell(n.ball_radius);
        w.cell(n.captured);
        w.cell(n.tail);
        w.cell(n.energy);
        w.cell(n.fit_rms);
        w.cell(n.pyramid_scale);
        w.cell(n.parent);
        w.end();
    }
    out.tables.emplace_back(prefix + "nodes", w.str());
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        out.plot.push_back({"bubble_center", tree.nodes[i].center(0), tree.nodes[i].center(1)});
        out.plot.push_back({"bubble_energy", static_cast<double>(i), tree.nodes[i].energy});
        out.plot.push_back({"bubble_scale", static_cast<double>(i), tree.nodes[i].lambda});
    }
}

} // namespace detail

inline AnalysisOutput analysis_energy_sweep(const ScenarioContext& ctx, const ConfigNode& a)
{
    const MapField& f = *ctx.field;
    const int m = f.dim();
    const auto pts = a.points("points", m);
    const auto rs = scale_grid(a, "r", 20);
    const bool mono = a.boolean("check_monotone", true);
    const bool pin = a.boolean("check_pinching", true);
    const double h = a.positive("fd_log_step", 1e-3);
    const double pin_tol = a.positive("pinching_tolerance", 1e-3);
    AnalysisOutput out;
    CsvWriter w;
    std::vector<std::string> cols;
    for (int i = 0; i < m; ++i) cols.push_back("x" + std::to_string(i + 1));
    for (const char* c : {"r", "theta", "pinching", "pinching_fd"}) cols.push_back(c);
    w.header(cols);
    Json rows = Json::array();
    double worst_drop = 0.0, worst_pin = 0.0;
    std::string where_drop, where_pin;
    for (const Vec& x : pts) {
        double prev = -std::numeric_limits<double>::infinity();
        for (double r : rs) {
            const EnergyReport rep = energy_report(f, x, r, ctx.engine);
            double fd = std::numeric_limits<double>::quiet_NaN();
            if (pin) {
                const double tp = theta(f, x, r * std::exp(h), ctx.engine), tm = theta(f, x, r * std::exp(-h), ctx.engine);
                fd = (tp - tm) / (2.0 * h);
                const double err = std::abs(rep.pinching - fd) / (pin_tol * std::abs(fd) + 1e-9 * rep.theta);
                if (err > worst_pin) {
                    worst_pin = err;
                    where_pin = detail::point_str(x, r);
                }
            }
            if (prev > -std::numeric_limits<double>::infinity()) {
                const double drop = (prev - rep.theta) / std::max(rep.theta, 1e-300);
                if (drop > worst_drop) {
                    worst_drop = drop;
                    where_drop = detail::point_str(x, r);
                }
            }
            prev = rep.theta;
            w.begin();
            for (int i = 0; i < m; ++i) w.cell(x(i));
            w.cell(r);
            w.cell(rep.theta);
            w.cell(rep.pinching);
            if (pin) w.cell(fd);
            else w.empty();
            w.end();
            out.plot.push_back({detail::series_name("theta", x), r, rep.theta});
            out.plot.push_back({detail::series_name("pinching", x), r, rep.pinching});
            rows.push_back(Json{{"x", vec_json(x)}, {"r", r}, {"theta", rep.theta}, {"pinching", rep.pinching}});
        }
    }
    out.tables.emplace_back("", w.str());
    out.report["rows"] = rows;
    out.report["worst_relative_drop"] = worst_drop;
    if (mono) out.check("monotone (relative drop)", worst_drop, "<=", 1e-10, where_drop);
    if (pin) out.check("pinching vs finite difference (error / tolerance)", worst_pin, "<=", 1.0, where_pin);
    return out;
}

inline AnalysisOutput analysis_tensor_sweep(const ScenarioContext& ctx, const ConfigNode& a)
{
    const MapField& f = *ctx.field;
    const int m = f.dim();
    const auto pts = a.points("points", m);
    const auto rs = scale_grid(a, "r", 5);
    std::optional<AffinePlane> ref;
    if (a.has("plane_axes")) ref = affine_from_config(a, m);
    AnalysisOutput out;
    CsvWriter w;
    std::vector<std::string> cols;
    for (int i = 0; i < m; ++i) cols.push_back("x" + std::to_string(i + 1));
    cols.push_back("r");
    cols.push_back("theta");
    for (int i = 0; i < m; ++i) cols.push_back("lambda" + std::to_string(i + 1));
    for (const char* c : {"gap", "theta_L", "degenerate", "grassmann_to_reference"}) cols.push_back(c);
    w.header(cols);
    Json rows = Json::array();
    const int k = ref ? ref->plane.dim() : m - 2;
    for (const Vec& x : pts)
        for (double r : rs) {
            const EnergyTensor T = energy_tensor(f, x, r, ctx.engine);
            BestPlaneResult b;
            bool have_plane = true;
            try {
                b = best_plane_from(T, true);
            } catch (const Error&) {
                have_plane = false;
            }
            double dgr = std::numeric_limits<double>::quiet_NaN();
            if (ref && have_plane && b.plane.dim() == k) dgr = grassmann_distance(b.plane, ref->plane);
            w.begin();
            for (int i = 0; i < m; ++i) w.cell(x(i));
            w.cell(r);
            w.cell(T.theta());
            for (int i = 0; i < m; ++i) w.cell(T.values(i));
            w.cell(have_plane ? b.gap : std::numeric_limits<double>::quiet_NaN());
            w.cell(have_plane ? b.theta_L : std::numeric_limits<double>::quiet_NaN());
            w.cell(have_plane && b.degenerate ? 1 : 0);
            w.cell(dgr);
            w.end();
            for (int i = 0; i < m; ++i) out.plot.push_back({detail::series_name("lambda" + std::to_string(i + 1), x), r, T.values(i)});
            Json row{{"x", vec_json(x)}, {"r", r}, {"theta", T.theta()}};
            row["eigenvalues"] = std::vector<double>(T.values.data(), T.values.data() + m);
            if (have_plane) row["gap"] = b.gap;
            rows.push_back(row);
        }
    out.tables.emplace_back("", w.str());
    out.report["rows"] = rows;
    return out;
}

inline AnalysisOutput analysis_symmetry_map(const ScenarioContext& ctx, const ConfigNode& a)
{
    const MapField& f = *ctx.field;
    const int m = f.dim();
    const auto axes = a.integers("grid_axes");
    if (axes.size() != 2 || axes[0] == axes[1]) a.fail("grid_axes", "must name two distinct axes");
    for (int ax : axes)
        if (ax < 0 || ax >= m) a.fail("grid_axes", "axis index out of range");
    const Vec base = a.has("base") ? a.point("base", m) : Vec::Zero(m);
    const auto lo = a.numbers("lo"), hi = a.numbers("hi");
    if (lo.size() != 2) a.fail("lo", "must have 2 entries");
    if (hi.size() != 2) a.fail("hi", "must have 2 entries");
    const int n = a.integer("n", 5);
    if (n < 1) a.fail("n", "must be positive");
    const auto scales = a.numbers("scales");
    if (scales.empty()) a.fail("scales", "must not be empty");
    const double eps = a.positive("eps");
    std::optional<AffinePlane> extra;
    if (a.has("plane_axes")) extra = affine_from_config(a, m);
    std::vector<Vec> pts;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            Vec x = base;
            x(axes[0]) = n == 1 ? lo[0] : lo[0] + (hi[0] - lo[0]) * i / (n - 1);
            x(axes[1]) = n == 1 ? lo[1] : lo[1] + (hi[1] - lo[1]) * j / (n - 1);
            pts.push_back(x);
        }
    const auto labels = stratification_sample(f, pts, scales, eps, ctx.engine, extra ? &extra->plane : nullptr);
    AnalysisOutput out;
    std::ostringstream os;
    write_stratification_csv(labels, os);
    out.tables.emplace_back("", os.str());
    Json arr = Json::array();
    for (const auto& lab : labels) {
        arr.push_back(Json{{"x", vec_json(lab.x)}, {"top_k", lab.top_k}, {"k_star", lab.k_star}, {"scores", lab.scores}});
        for (std::size_t s = 0; s < lab.scales.size(); ++s)
            for (std::size_t k = 0; k < lab.scores[s].size(); ++k)
                out.plot.push_back({"sigma_" + std::to_string(k) + " r=" + detail::fmt(lab.scales[s]) + " x2=" + detail::fmt(lab.x(axes[1])),
                                    lab.x(axes[0]), lab.scores[s][k]});
    }
    CsvWriter hm;
    hm.header({"x1", "x2", "scale", "k", "sigma"});
    for (const auto& lab : labels)
        for (std::size_t s = 0; s < lab.scales.size(); ++s)
            for (std::size_t k = 0; k < lab.scores[s].size(); ++k) {
                hm.begin();
                hm.cell(lab.x(axes[0]));
                hm.cell(lab.x(axes[1]));
                hm.cell(lab.scales[s]);
                hm.cell(k);
                hm.cell(lab.scores[s][k]);
                hm.end();
            }
    out.tables.emplace_back("heatmap", hm.str());
    out.report["labels"] = arr;
    out.report["eps"] = eps;
    return out;
}

inline AnalysisOutput analysis_build_tr(const ScenarioContext& ctx, const ConfigNode& a)
{
    const MapField& f = *ctx.field;
    const int m = f.dim();
    const AffinePlane LA = affine_from_config(a, m);
    if (LA.plane.dim() != m - 2) a.fail("plane_axes", "needs m - 2 axes");
    const auto rs = scale_grid(a, "r", 3);
    const double window = a.positive("window", 0.5);
    const TrOptions opt = detail::tr_options(a);
    AnalysisOutput out;
    Json graphs = Json::array();
    double worst_rel = 0.0, worst_dist = 0.0;
    std::string where_rel, where_dist;
    bool have_curve = false;
    for (std::size_t k = 0; k < rs.size(); ++k) {
        const double r = rs[k];
        const SubmanifoldGraph T = build_Tr(f, LA, r, window, ctx.engine, opt);
        std::ostringstream os;
        T.write_csv(os);
        out.tables.emplace_back("r" + std::to_string(k + 1), os.str());
        double dist = 0.0, rel = 0.0;
        for (std::size_t i = 0; i < T.size(); ++i) {
            const Vec y = T.node_point(i);
            if (auto d = detail::curve_distance(f, y)) {
                have_curve = true;
                dist = std::max(dist, *d);
                if (*d > worst_dist) {
                    worst_dist = *d;
                    where_dist = detail::point_str(y, r);
                }
            }
            const double rr = T.theta_at(i) > 0.0 ? T.residual(i) / T.theta_at(i) : T.residual(i);
            rel = std::max(rel, rr);
            if (rr > worst_rel) {
                worst_rel = rr;
                where_rel = detail::point_str(y, r);
            }
            out.plot.push_back({"t_r r=" + detail::fmt(r), T.node_param(i).size() ? T.node_param(i)(0) : 0.0, T.value(i).norm()});
        }
        Json g = T.to_json();
        g["max_relative_residual"] = rel;
        if (have_curve) g["sup_distance_to_center_curve"] = dist;
        graphs.push_back(g);
        if (!T.all_converged()) out.check("all nodes converged", 0.0, "==", 1.0, "r=" + detail::fmt(r));
    }
    out.report["graphs"] = graphs;
    out.report["options"] = Json{{"newton_tol", opt.newton_tol}, {"max_iterations", opt.max_iterations}, {"spacing", opt.spacing}, {"window", window}};
    if (auto e = a.maybe_child("expect")) {
        if (e->has("max_relative_residual")) out.check("relative residual", worst_rel, "<=", e->positive("max_relative_residual"), where_rel);
        if (e->has("max_sup_distance")) {
            if (!have_curve) e->fail("max_sup_distance", "field declares no reference center curve");
            out.check("sup distance to center curve", worst_dist, "<=", e->positive("max_sup_distance"), where_dist);
        }
    }
    return out;
}

inline AnalysisOutput analysis_annulus_cert(const ScenarioContext& ctx, const ConfigNode& a)
{
    const MapField& f = *ctx.field;
    const int m = f.dim();
    const AffinePlane LA = affine_from_config(a, m);
    if (LA.plane.dim() != m - 2) a.fail("plane_axes", "needs m - 2 axes");
    const double r = a.positive("r");
    const double window = a.positive("window", 0.5);
    RadiusFunction rr;
    if (auto rc = a.maybe_child("radius")) {
        rr.c0 = rc->number("c0", 0.0);
        rr.c1 = rc->number("c1", 0.0);
    } else {
        rr.c0 = a.positive("radius_c0");
    }
    AnnularSpec spec;
    spec.r_points = a.integer("r_points", spec.r_points);
    spec.r_max = a.positive("r_max", spec.r_max);
    spec.eps0 = a.positive("eps0", spec.eps0);
    spec.stride = a.integer("stride", spec.stride);
    const SubmanifoldGraph T = build_Tr(f, LA, r, window, ctx.engine, detail::tr_options(a));
    const RegionCertificate cert = annular_certificate(f, T, rr, spec, ctx.engine);
    AnalysisOutput out;
    out.report["certificate"] = cert.to_json();
    CsvWriter w;
    w.header({"name", "value", "binding", "where"});
    for (const auto& e : cert.breakdown) {
        w.begin();
        w.cell(e.name);
        w.cell(e.value);
        w.cell(e.binding ? 1 : 0);
        w.cell(e.where);
        w.end();
        out.plot.push_back({"breakdown " + e.name, 0.0, e.value});
    }
    out.tables.emplace_back("", w.str());
    std::ostringstream os;
    T.write_csv(os);
    out.tables.emplace_back("graph", os.str());
    if (auto e = a.maybe_child("expect")) {
        if (e->has("max_delta")) out.check("certified delta", cert.certified_delta, "<=", e->positive("max_delta"), cert.binding_condition());
        if (e->boolean("nontrivial", false)) out.check("(a3) min theta over floor", cert.entry("a3_min_theta"), ">=", spec.eps0);
    }
    return out;
}

inline AnalysisOutput analysis_bubble_tree(const ScenarioContext& ctx, const ConfigNode& a)
{
    const FieldPtr s = detail::slice_of(a, ctx.field);
    const ExtractSpec es = detail::extract_spec(a);
    const BubbleTree tree = extract_bubbles(*s, es, ctx.engine.quad());
    AnalysisOutput out;
    out.report["tree"] = tree.to_json();
    detail::tree_outputs(tree, out, "");
    out.check("balls disjoint or nested", tree.balls_consistent() ? 1.0 : 0.0, "==", 1.0);
    out.check("node count times eps0 over window energy", static_cast<double>(tree.nodes.size()) * es.eps0, "<=",
              tree.window_energy * (1.0 + 1e-9) + 1e-12);
    if (auto e = a.maybe_child("expect")) {
        if (e->has("count")) out.check("bubble count", static_cast<double>(tree.nodes.size()), "==", e->integer("count"));
        if (e->has("energy_each")) {
            const double target = e->number("energy_each"), tol = e->positive("energy_tolerance", 0.01);
            for (std::size_t i = 0; i < tree.nodes.size(); ++i)
                out.check("relative energy error node " + std::to_string(i), std::abs(tree.nodes[i].energy - target) / target, "<=", tol);
        }
    }
    return out;
}

inline AnalysisOutput analysis_identity(const ScenarioContext& ctx, const ConfigNode& a)
{
    const int m = ctx.field->dim();
    const Vec x = a.point("x", m);
    const double r = a.positive("r", 1.0);
    const auto lams = a.numbers("lambdas");
    if (lams.size() < 2) a.fail("lambdas", "needs at least two values");
    for (std::size_t i = 1; i < lams.size(); ++i)
        if (!(lams[i] < lams[i - 1])) a.fail("lambdas", "must be strictly decreasing");
    for (double l : lams)
        if (!(l > 0.0)) a.fail("lambdas", "must be positive");
    const bool ray = a.boolean("ray_normalized", false);
    const double tol = a.positive("tolerance", 0.02);
    const ExtractSpec es = detail::extract_spec(a);
    const ConfigNode an = a;
    SliceMaker sm = [an](const FieldPtr& f) { return detail::slice_of(an, f); };
    const IdentityReport rep = energy_identity_report(ctx.family(), x, r, lams, sm, es, ctx.engine, ray, tol);
    AnalysisOutput out;
    out.report["identity"] = rep.to_json();
    CsvWriter w;
    w.header({"lambda", "e_estimate"});
    for (std::size_t i = 0; i < lams.size(); ++i) {
        w.begin();
        w.cell(lams[i]);
        w.cell(rep.defect.values[i]);
        w.end();
        out.plot.push_back({"e_estimate", lams[i], rep.defect.values[i]});
    }
    out.plot.push_back({"e_extrapolated", 0.0, rep.defect.extrapolated});
    out.tables.emplace_back("convergence", w.str());
    detail::tree_outputs(rep.tree, out, "tree_");
    out.check("sub-energy inequality sum E <= e (1 + tol)", rep.sum_E, "<=", rep.defect.extrapolated * (1.0 + tol) + 1e-12);
    if (auto e = a.maybe_child("expect")) {
        if (e->has("max_relative_discrepancy")) out.check("relative discrepancy", rep.relative, "<=", e->positive("max_relative_discrepancy"));
        if (e->has("count")) out.check("bubble count", static_cast<double>(rep.tree.nodes.size()), "==", e->integer("count"));
        if (e->has("e")) {
            const double target = e->number("e"), t = e->positive("e_tolerance", 0.01);
            out.check("relative defect error", std::abs(rep.defect.extrapolated - target) / std::abs(target), "<=", t);
        }
    }
    return out;
}

inline AnalysisOutput analysis_profiles(const ScenarioContext& ctx, const ConfigNode& a)
{
    const MapField& f = *ctx.field;
    const int m = f.dim();
    const AffinePlane LA = affine_from_config(a, m);
    if (LA.plane.dim() != m - 2) a.fail("plane_axes", "needs m - 2 axes");
    const auto rs = scale_grid(a, "r", 9);
    const bool fit = a.boolean("fit_tr", false);
    const double spacing = a.positive("lattice_spacing", 0.5);
    ProfileSpec ps;
    if (auto rc = a.maybe_child("radius")) {
        ps.rr.c0 = rc->number("c0", 0.0);
        ps.rr.c1 = rc->number("c1", 0.0);
    }
    ps.gq.panels = a.integer("panels", ps.gq.panels);
    ps.gq.nodes_per_panel = a.integer("nodes_per_panel", ps.gq.nodes_per_panel);
    std::vector<std::string> kinds{"L", "angular", "toy"};
    if (a.has("kinds")) {
        kinds.clear();
        for (const auto& k : a.json()["kinds"]) {
            if (!k.is_string()) a.fail("kinds", "must be strings");
            const std::string s = k.get<std::string>();
            if (s != "L" && s != "angular" && s != "toy") a.fail("kinds", "unknown profile kind '" + s + "'");
            kinds.push_back(s);
        }
    }
    std::vector<SubmanifoldGraph> Ts;
    for (double r : rs) {
        if (fit) {
            TrOptions opt = detail::tr_options(a);
            opt.spacing = spacing / r;
            Ts.push_back(build_Tr(f, LA, r, psi_window(), ctx.engine, opt));
        } else {
            Ts.push_back(flat_graph(LA, psi_window(), r, spacing));
        }
    }
    AnalysisOutput out;
    auto emit = [&](const Profile& p) {
        std::ostringstream os;
        p.write_csv(os);
        out.tables.emplace_back(p.kind, os.str());
        out.report[p.kind] = p.to_json();
        for (const auto& rw : p.rows) {
            out.plot.push_back({p.kind + " value", rw.r, rw.value});
            if (std::isfinite(rw.residual)) out.plot.push_back({p.kind + " superconvexity residual", rw.r, rw.residual});
        }
    };
    auto expect = a.maybe_child("expect");
    for (const auto& k : kinds) {
        if (k == "L") {
            const Profile p = L_energy_profile(f, Ts, ctx.engine, ps);
            emit(p);
            if (expect && expect->has("max_L")) out.check("max L-energy", p.delta_star, "<=", expect->number("max_L"));
            if (expect && expect->has("max_mono_C")) out.check("almost-monotonicity constant", p.mono_C, "<=", expect->positive("max_mono_C"));
        } else if (k == "angular") {
            const Profile p = angular_profile(f, Ts, ctx.engine, ps);
            emit(p);
            if (expect && expect->has("min_residual")) out.check("superconvexity residual", p.min_residual, ">=", expect->number("min_residual"));
        } else {
            CsvWriter w;
            w.header({"r", "hat_n", "theta_L", "hat_alpha", "hat_L", "theta", "slack"});
            Json arr = Json::array();
            double worst = std::numeric_limits<double>::infinity();
            for (double r : rs) {
                const RadialBalance b = radial_balance_toy(f, LA, r, ctx.engine, ps);
                w.begin();
                for (double v : {b.r, b.hat_n, b.theta_L, b.hat_alpha, b.hat_L, b.theta, b.slack}) w.cell(v);
                w.end();
                arr.push_back(b.to_json());
                out.plot.push_back({"toy slack", r, b.slack});
                worst = std::min(worst, b.theta > 0.0 ? b.slack / b.theta : 0.0);
            }
            out.tables.emplace_back("toy", w.str());
            out.report["toy"] = arr;
            if (expect && expect->has("min_relative_slack")) out.check("toy slack / theta", worst, ">=", expect->number("min_relative_slack"));
        }
    }
    return out;
}

/// Mollifier, quadrature and geometry invariants plus a few field identities.
inline AnalysisOutput self_check_suite(const Engine& eng, std::uint64_t seed)
{
    AnalysisOutput out;
    Json rows = Json::array();
    auto record = [&](const std::string& name, double value, const std::string& rel, double limit) {
        out.check(name, value, rel, limit);
        rows.push_back(out.assertions.back().to_json());
    };
    QuadratureSpec q = eng.quad();
    for (int m = 1; m <= 3; ++m) {
        const HeatMollifier& h = eng.mol(m);
        const double mass = integrate([&](const Vec& y) { return h.rho_r(y, 1.0); }, BallRegion{Vec::Zero(m), h.support_radius(1.0)}, q);
        record("mollifier mass m=" + std::to_string(m), std::abs(mass - 1.0), "<=", 1e-8);
    }
    {
        const HeatMollifier& h = eng.mol(3);
        const Vec y = make_vec({0.3, -0.2, 0.5});
        const double r = 0.37;
        record("mollifier scaling identity", std::abs(h.rho_r(y, r) - std::pow(r, -3) * h.rho_r(y / r, 1.0)) / h.rho_r(y, r), "<=", 1e-13);
        record("marginal mass c'_1 against 1/(2 pi)", std::abs(h.marginal_mass(1) * 2.0 * std::numbers::pi - 1.0), "<=", 1e-6);
    }
    {
        const GaussRule& g = gauss_legendre(10);
        double s = 0.0;
        for (std::size_t i = 0; i < g.x.size(); ++i) s += g.w[i] * std::pow(g.x[i], 18);
        record("Gauss-Legendre n=10 exact on x^18", std::abs(s - 2.0 / 19.0), "<=", 1e-14);
    }
    {
        Mat A(4, 4);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j <= i; ++j) A(i, j) = A(j, i) = counter_uniform(seed, 1000, static_cast<std::uint64_t>(4 * i + j)) - 0.5;
        const SymEigen e = jacobi_eigen(A);
        Mat D = Mat::Zero(4, 4);
        for (int i = 0; i < 4; ++i) D(i, i) = e.values(i);
        record("Jacobi residual |A V - V D|", (A * e.vectors - e.vectors * D).norm(), "<=", 1e-12);
        record("Jacobi orthonormality", (e.vectors.transpose() * e.vectors - Mat::Identity(4, 4)).norm(), "<=", 1e-12);
        const Plane L = make_plane(4, {e.vectors.col(0), e.vectors.col(2)});
        record("projector complement identity", (L.projector() + L.complement().projector() - Mat::Identity(4, 4)).norm(), "<=", 1e-12);
    }
    {
        const FieldPtr b = make_standard_bubble(bubble_params(1.0));
        const double R = 1e3;
        const double e = slice_disk_energy(*b, Eigen::Vector2d::Zero(), R, q, 1.0);
        record("standard bubble disk energy", std::abs(e / (8.0 * std::numbers::pi * R * R / (1.0 + R * R)) - 1.0), "<=", 1e-6);
        const auto bumps = random_bumps(2, seed, 3, -0.5, 0.5, 0.3, 0.8);
        double worst = 0.0;
        for (const auto& xi : bumps) worst = std::max(worst, stationary_residual(*b, xi, q).normalized);
        record("standard bubble stationary residual", worst, "<=", 1e-3);
        const Vec x = make_vec({0.2, 0.1});
        const double r = 0.5, hh = 1e-3;
        const EnergyReport rep = energy_report(*b, x, r, eng);
        const double fd = (theta(*b, x, r * std::exp(hh), eng) - theta(*b, x, r * std::exp(-hh), eng)) / (2.0 * hh);
        record("pinching against finite difference", std::abs(rep.pinching - fd) / std::abs(fd), "<=", 1e-3);
    }
    out.report["checks"] = rows;
    return out;
}

inline AnalysisOutput analysis_self_check(const ScenarioContext& ctx, const ConfigNode&) { return self_check_suite(ctx.engine, ctx.seed); }

inline const std::vector<std::pair<std::string, std::function<AnalysisOutput(const ScenarioContext&, const ConfigNode&)>>>& analysis_table()
{
    static const std::vector<std::pair<std::string, std::function<AnalysisOutput(const ScenarioContext&, const ConfigNode&)>>> t{
        {"energy-sweep", analysis_energy_sweep}, {"tensor-sweep", analysis_tensor_sweep}, {"symmetry-map", analysis_symmetry_map},
        {"annulus-cert", analysis_annulus_cert}, {"build-tr", analysis_build_tr},       {"bubble-tree", analysis_bubble_tree},
        {"identity", analysis_identity},         {"profiles", analysis_profiles},       {"self-check", analysis_self_check}};
    return t;
}

// ---------------------------------------------------------------------------------------------
// scenario runner

struct RunOptions {
    std::string out_dir;  // overrides config and environment when set
    int workers = 1;
};

struct RunResult {
    std::filesystem::path out_dir;
    std::vector<std::string> files;
    int assertions = 0;
    int failures = 0;
    std::vector<Assertion> failed;
    Json manifest;
};

/// Output directory: --out, then BUBBLESCOPE_OUT_DIR, then the config's "output", then out/<name>.
inline std::filesystem::path resolve_output_dir(const RunOptions& opt, const ConfigNode& root, const std::string& name)
{
    if (!opt.out_dir.empty()) return opt.out_dir;
    if (const char* env = std::getenv("BUBBLESCOPE_OUT_DIR"); env && *env) return std::filesystem::path(env) / name;
    if (root.has("output")) return root.string("output");
    return std::filesystem::path("out") / name;
}

inline std::string csv_with_header(const std::string& header_line, const std::string& body) { return "# " + header_line + "\r\n" + body; }

inline RunResult run_scenario_json(const Json& config, const std::filesystem::path& base_dir, const RunOptions& opt)
{
    const ConfigNode root(config, "");
    ScenarioContext ctx{config, base_dir, nullptr, engine_from_config(root), 0, root.string("name", "scenario")};
    for (char c : ctx.name)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) root.fail("name", "may only contain letters, digits, '-' and '_'");
    if (root.has("seed")) {
        const Json& s = config["seed"];
        if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) root.fail("seed", "must be a nonnegative integer");
        ctx.seed = s.get<std::uint64_t>();
    }
    ctx.field = field_from_config(root.child("field"), base_dir);
    if (!root.has("analyses") || !config["analyses"].is_array() || config["analyses"].empty()) root.fail("analyses", "must be a non-empty array");
    default_workers() = std::max(1, opt.workers);

    Json canon = config;
    canon.erase("output");
    const std::string scen_sum = checksum(canon.dump());
    const int m = ctx.field->dim();
    const std::string mol_sum = checksum(ctx.engine.mollifier_json(m).dump());
    const std::string quad_sum = checksum(ctx.engine.quad().to_json().dump());
    const Json header{{"tool", "bubblescope"}, {"version", BUBBLESCOPE_VERSION}, {"scenario", ctx.name},
                      {"scenario_checksum", scen_sum}, {"mollifier_checksum", mol_sum}, {"quadrature_checksum", quad_sum}};
    const std::string csv_head = "scenario=" + ctx.name + " scenario_checksum=" + scen_sum + " mollifier_checksum=" + mol_sum +
                                 " quadrature_checksum=" + quad_sum;

    // validate every analysis entry before running any of them
    std::vector<std::pair<std::string, ConfigNode>> plan;
    for (std::size_t i = 0; i < config["analyses"].size(); ++i) {
        const ConfigNode a(config["analyses"][i], "analyses[" + std::to_string(i) + "]");
        const std::string type = a.string("type");
        bool known = false;
        for (const auto& [n, fn] : analysis_table()) known |= n == type;
        if (!known) a.fail("type", "unknown analysis '" + type + "'");
        plan.emplace_back(type, a);
    }

    RunResult res;
    res.out_dir = resolve_output_dir(opt, root, ctx.name);
    std::error_code ec;
    std::filesystem::create_directories(res.out_dir, ec);
    if (ec) throw Error(Errc::IoError, "cannot create output directory " + res.out_dir.string() + ": " + ec.message());
    Json files = Json::array();
    auto write = [&](const std::string& fname, const std::string& body) {
        std::ofstream os(res.out_dir / fname, std::ios::binary);
        if (!os) throw Error(Errc::IoError, "cannot write " + (res.out_dir / fname).string());
        os << body;
        res.files.push_back(fname);
        files.push_back(Json{{"file", fname}, {"bytes", body.size()}, {"fnv1a64", checksum(body)}});
    };
    Json summary = Json::array();
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const auto& [type, a] = plan[i];
        std::ostringstream idx;
        idx << std::setw(2) << std::setfill('0') << i + 1;
        const std::string stem = idx.str() + "_" + type;
        AnalysisOutput out;
        for (const auto& [n, fn] : analysis_table())
            if (n == type) {
                try {
                    out = fn(ctx, a);
                } catch (const Error& e) {
                    if (e.code() == Errc::ConfigError) throw;
                    throw Error(Errc::AnalysisError, "analysis " + std::to_string(i + 1) + " (" + type + "): " + e.what());
                }
            }
        Json rep;
        Json h = header;
        h["analysis"] = type;
        h["index"] = i + 1;
        rep["header"] = h;
        rep["config"] = a.json();
        rep["mollifier"] = ctx.engine.mollifier_json(m);
        rep["quadrature"] = ctx.engine.quad().to_json();
        rep["field"] = ctx.field->metadata();
        for (auto it = out.report.begin(); it != out.report.end(); ++it) rep[it.key()] = it.value();
        Json asserts = Json::array();
        int failed = 0;
        for (const auto& as : out.assertions) {
            asserts.push_back(as.to_json());
            ++res.assertions;
            if (!as.pass) {
                ++failed;
                ++res.failures;
                res.failed.push_back(as);
            }
        }
        rep["assertions"] = asserts;
        rep["passed"] = failed == 0;
        write(stem + ".json", rep.dump(2) + "\n");
        for (const auto& [suffix, body] : out.tables) write(stem + (suffix.empty() ? "" : "_" + suffix) + ".csv", csv_with_header(csv_head, body));
        if (!out.plot.empty()) {
            CsvWriter w;
            w.header({"series", "x", "y"});
            for (const auto& p : out.plot) {
                w.begin();
                w.cell(p.series);
                w.cell(p.x);
                w.cell(p.y);
                w.end();
            }
            write(stem + "_plot.csv", csv_with_header(csv_head, w.str()));
        }
        summary.push_back(Json{{"index", i + 1}, {"type", type}, {"assertions", out.assertions.size()}, {"failed", failed}});
    }
    Json man = header;
    man["inputs"] = Json{{"config", canon}};
    if (ctx.field->metadata().contains("source")) {
        const std::string src = ctx.field->metadata()["source"].get<std::string>();
        std::ifstream in(src, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        man["inputs"]["grid_file"] = Json{{"path", std::filesystem::path(src).filename().string()}, {"fnv1a64", checksum(ss.str())}};
    }
    man["mollifier"] = ctx.engine.mollifier_json(m);
    man["quadrature"] = ctx.engine.quad().to_json();
    man["analyses"] = summary;
    man["files"] = files;
    man["assertions"] = Json{{"total", res.assertions}, {"failed", res.failures}};
    res.manifest = man;
    {
        std::ofstream os(res.out_dir / "manifest.json", std::ios::binary);
        if (!os) throw Error(Errc::IoError, "cannot write manifest");
        os << man.dump(2) << "\n";
    }
    res.files.push_back("manifest.json");
    return res;
}

inline Json load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error(Errc::IoError, "cannot open config " + path);
    try {
        return Json::parse(in);
    } catch (const std::exception& e) {
        throw Error(Errc::ConfigError, std::string("config is not valid JSON: ") + e.what());
    }
}

inline RunResult run_scenario(const std::string& config_path, const RunOptions& opt)
{
    const Json cfg = load_config(config_path);
    if (!cfg.is_object()) throw Error(Errc::ConfigError, "config must be a JSON object");
    return run_scenario_json(cfg, std::filesystem::path(config_path).parent_path(), opt);
}

} // namespace bubblescope
