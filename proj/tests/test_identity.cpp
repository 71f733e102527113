#include <bubblescope/identity.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace bubblescope;

namespace {

constexpr double k8pi = 8.0 * std::numbers::pi;

Family product_family(int m = 3)
{
    return [m](double l) { return make_product_bubble(m, bubble_params(l)); };
}

Family cone_family()
{
    return [](double l) { return make_cone_map(l); };
}

Family constant_family()
{
    return [](double) { return make_constant(3); };
}

AffinePlane xy_slice(double z = 0.0)
{
    return AffinePlane{coordinate_plane(3, {0, 1}), make_vec({0.0, 0.0, z})};
}

AffinePlane z_axis()
{
    return AffinePlane{coordinate_plane(3, {2}), Vec::Zero(3)};
}

// Dirichlet energy of a 2-D field in the disk |w| < rad by log-radial Simpson x periodic trapezoid
double polar_energy(const MapField& f, double rad, double rmin = 1e-9)
{
    const int nr = 4000, na = 96;
    const double a = std::log(rmin), b = std::log(rad);
    double acc = 0.0;
    for (int i = 0; i <= nr; ++i) {
        const double rho = std::exp(a + (b - a) * i / nr);
        const double w = (i == 0 || i == nr) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        double ring = 0.0;
        for (int k = 0; k < na; ++k) {
            const double phi = 2.0 * std::numbers::pi * k / na;
            ring += f.jacobian(make_vec({rho * std::cos(phi), rho * std::sin(phi)})).squaredNorm();
        }
        acc += w * ring * (2.0 * std::numbers::pi / na) * rho * rho;
    }
    return acc * (b - a) / (3.0 * nr);
}

std::vector<SubmanifoldGraph> flat_graphs(const AffinePlane& LA, const std::vector<double>& rs)
{
    std::vector<SubmanifoldGraph> Ts;
    for (double r : rs) Ts.push_back(flat_graph(LA, psi_window(), r, 0.5));
    return Ts;
}

std::vector<double> geometric(double lo, double hi, int n)
{
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(lo * std::pow(hi / lo, i / double(n - 1)));
    return v;
}

void expect_tree_invariants(const BubbleTree& t)
{
    EXPECT_TRUE(t.balls_consistent());
    EXPECT_LE(static_cast<double>(t.nodes.size()), t.window_energy / t.spec.eps0 + 1e-12);
    for (const auto& n : t.nodes) EXPECT_GE(n.energy, t.spec.eps0);
    EXPECT_GE(t.residual_energy, -1e-12);
}

ProfileSpec coarse_profile()
{
    ProfileSpec ps;
    ps.gq = GraphQuadrature{4, 2, 48};
    return ps;
}

} // namespace

TEST(DefectDensity, ProductIsEightPi)
{
    const Engine eng;
    const DefectEstimate d = defect_density(product_family(), Vec::Zero(3), 1.0, {0.1, 0.01, 0.001}, eng);
    EXPECT_NEAR(d.extrapolated, k8pi, 0.01 * k8pi);
    EXPECT_EQ(d.mode, "marginal");
    EXPECT_NEAR(d.normalization, 1.0 / (2.0 * std::numbers::pi), 1e-8);
    EXPECT_LE(d.spread, 0.05);
}

TEST(DefectDensity, ConstantFamilyIsZero)
{
    const Engine eng;
    const DefectEstimate d = defect_density(constant_family(), make_vec({0.2, 0.0, 0.1}), 1.0, {0.1, 0.01}, eng);
    EXPECT_EQ(d.extrapolated, 0.0);
    for (double v : d.values) EXPECT_EQ(v, 0.0);
}

TEST(DefectDensity, ProductScaleInvariant)
{
    const Engine eng;
    for (double r : {0.5, 1.0, 1.5}) {
        const DefectEstimate d = defect_density(product_family(), make_vec({0.0, 0.0, 0.3}), r, {0.05, 0.005, 0.0005}, eng);
        EXPECT_NEAR(d.extrapolated, k8pi, 0.01 * k8pi) << "r = " << r;
    }
}

TEST(DefectDensity, ConeAxisPointMatchesSliceEnergy)
{
    const Engine eng;
    const double lmin = 0.001;
    const SliceField s(make_cone_map(lmin), make_vec({0.0, 0.0, 1.0}), coordinate_plane(3, {0, 1}).basis());
    const double oracle = polar_energy(s, 1.0);
    RecordProperty("slice_energy", std::to_string(oracle));
    EXPECT_NEAR(oracle, k8pi, 0.01 * k8pi);
    const DefectEstimate d = defect_density(cone_family(), make_vec({0.0, 0.0, 1.0}), 0.5, {0.01, 0.003, lmin}, eng);
    EXPECT_NEAR(d.extrapolated, oracle, 0.01 * oracle);
}

TEST(DefectDensity, DivergentSequenceIsNonConvergent)
{
    const Engine eng;
    const Family blowing_up = [](double l) { return make_product_bubble(3, bubble_params(100.0 * l)); };
    try {
        defect_density(blowing_up, Vec::Zero(3), 1.0, {0.1, 0.01, 0.001}, eng);
        ADD_FAILURE() << "expected NonConvergent";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NonConvergent);
    }
}

TEST(DefectDensity, ArgumentChecks)
{
    const Engine eng;
    EXPECT_THROW(defect_density(product_family(), Vec::Zero(3), 1.0, {0.1}, eng), Error);
    EXPECT_THROW(defect_density(product_family(), Vec::Zero(3), 1.0, {0.01, 0.1}, eng), Error);
    EXPECT_THROW(defect_density(product_family(), Vec::Zero(3), 1.0, {0.1, 0.1}, eng), Error);
    EXPECT_THROW(defect_density(product_family(), Vec::Zero(2), 1.0, {0.1, 0.01}, eng), Error);
}

TEST(ExtractBubbles, ProductSliceOneNode)
{
    const Engine eng;
    const double l = 0.01;
    const BubbleTree t = extract_bubbles(make_product_bubble(3, bubble_params(l)), xy_slice(0.2), ExtractSpec{}, eng.quad());
    ASSERT_EQ(t.nodes.size(), 1u);
    EXPECT_NEAR(t.nodes[0].lambda, l, 0.01 * l);
    EXPECT_LE(t.nodes[0].center.norm(), 0.01 * l);
    EXPECT_NEAR(t.nodes[0].energy, k8pi, 0.01 * k8pi);
    expect_tree_invariants(t);
}

TEST(ExtractBubbles, ConstantIsEmpty)
{
    const Engine eng;
    const BubbleTree t = extract_bubbles(make_constant(3), xy_slice(), ExtractSpec{}, eng.quad());
    EXPECT_TRUE(t.nodes.empty());
    EXPECT_EQ(t.residual_energy, 0.0);
    EXPECT_EQ(t.total_energy(), 0.0);
}

TEST(ExtractBubbles, ConeLinkSplitsIntoTwo)
{
    const Engine eng;
    ExtractSpec spec;
    spec.window_radius = 2.0;
    const FieldPtr link = link_slice(Vec3::UnitX())(make_cone_map(0.003));
    const BubbleTree t = extract_bubbles(*link, spec, eng.quad());
    ASSERT_EQ(t.nodes.size(), 2u);
    for (const auto& n : t.nodes) EXPECT_NEAR(n.energy, k8pi, 0.02 * k8pi);
    EXPECT_NEAR(t.window_energy, 2.0 * k8pi, 0.02 * 2.0 * k8pi);
    EXPECT_NEAR(t.nodes[0].center.norm(), 1.0, 0.05);
    EXPECT_NEAR(t.nodes[1].center.norm(), 1.0, 0.05);
    EXPECT_GE((t.nodes[0].center - t.nodes[1].center).norm(), 1.9);
    expect_tree_invariants(t);
}

TEST(ExtractBubbles, TwoSeparatedBubblesAndEnergyFloor)
{
    const Engine eng;
    struct Pair final : MapField {
        FieldPtr a = make_standard_bubble(bubble_params(0.01, -0.5, 0.0));
        FieldPtr b = make_standard_bubble(bubble_params(0.02, 0.5, 0.0));
        int dim() const override { return 2; }
        FieldSample sample(const Vec& y) const override
        {
            // glue two bubbles along x = 0 through the constant value at infinity
            return y(0) < 0.0 ? a->sample(y) : b->sample(y);
        }
        Json metadata() const override { return Json{{"family", "pair"}}; }
    };
    const Pair f;
    ExtractSpec spec;
    const BubbleTree t = extract_bubbles(f, spec, eng.quad());
    ASSERT_EQ(t.nodes.size(), 2u);
    expect_tree_invariants(t);
    spec.eps0 = 30.0;
    const BubbleTree none = extract_bubbles(f, spec, eng.quad());
    EXPECT_TRUE(none.nodes.empty());
    EXPECT_NEAR(none.residual_energy, none.window_energy, 1e-12);
}

TEST(IdentityReport, ProductWithinTwoPercent)
{
    const Engine eng;
    const IdentityReport rep = energy_identity_report(product_family(), Vec::Zero(3), 1.0, {0.1, 0.01, 0.001},
                                                      plane_slice(xy_slice()), ExtractSpec{}, eng);
    EXPECT_EQ(rep.tree.nodes.size(), 1u);
    EXPECT_LE(rep.relative, 0.02);
    EXPECT_TRUE(rep.sub_energy_ok);
    EXPECT_DOUBLE_EQ(rep.discrepancy, std::abs(rep.defect.extrapolated - rep.sum_E));
    EXPECT_DOUBLE_EQ(rep.sum_E, rep.tree.total_energy());
    const Json j = rep.to_json();
    EXPECT_EQ(j["K"].get<int>(), 1);
    EXPECT_EQ(j["normalization_mode"], "marginal");
}

TEST(IdentityReport, ConeVertexTwoBubbles)
{
    const Engine eng;
    ExtractSpec spec;
    spec.window_radius = 2.0;
    const IdentityReport rep = energy_identity_report(cone_family(), Vec::Zero(3), 1.0, {0.05, 0.01, 0.003},
                                                      link_slice(Vec3::UnitX()), spec, eng, true);
    EXPECT_EQ(rep.tree.nodes.size(), 2u);
    EXPECT_NEAR(rep.defect.extrapolated, 2.0 * k8pi, 0.02 * 2.0 * k8pi);
    EXPECT_LE(rep.relative, 0.03);
    EXPECT_TRUE(rep.sub_energy_ok);
    EXPECT_EQ(rep.defect.mode, "ray");
}

TEST(IdentityReport, ConeAxisPointOneBubble)
{
    const Engine eng;
    const IdentityReport rep = energy_identity_report(cone_family(), make_vec({0.0, 0.0, 1.0}), 0.5, {0.01, 0.003, 0.001},
                                                      plane_slice(xy_slice(1.0)), ExtractSpec{}, eng);
    EXPECT_EQ(rep.tree.nodes.size(), 1u);
    EXPECT_LE(rep.relative, 0.03);
    EXPECT_TRUE(rep.sub_energy_ok);
}

TEST(IdentityReport, ConstantIsZero)
{
    const Engine eng;
    const IdentityReport rep = energy_identity_report(constant_family(), Vec::Zero(3), 1.0, {0.1, 0.01},
                                                      plane_slice(xy_slice()), ExtractSpec{}, eng);
    EXPECT_EQ(rep.defect.extrapolated, 0.0);
    EXPECT_EQ(rep.sum_E, 0.0);
    EXPECT_EQ(rep.discrepancy, 0.0);
    EXPECT_TRUE(rep.sub_energy_ok);
}

TEST(IdentityReport, PropagatesNonConvergent)
{
    const Engine eng;
    const Family blowing_up = [](double l) { return make_product_bubble(3, bubble_params(100.0 * l)); };
    EXPECT_THROW(energy_identity_report(blowing_up, Vec::Zero(3), 1.0, {0.1, 0.01, 0.001}, plane_slice(xy_slice()),
                                        ExtractSpec{}, eng),
                 Error);
}

TEST(LProfile, ProductVanishes)
{
    const Engine eng;
    const FieldPtr f = make_product_bubble(3, bubble_params(0.01));
    const Profile p = L_energy_profile(*f, flat_graphs(z_axis(), geometric(0.03, 0.3, 4)), eng, coarse_profile());
    ASSERT_EQ(p.rows.size(), 4u);
    for (const auto& rw : p.rows) EXPECT_LE(std::abs(rw.value), 1e-10);
}

TEST(LProfile, BentPositiveUnderEnvelope)
{
    const Engine eng;
    const FieldPtr f = make_bent_bubble(3, bubble_params(0.02), 0.05);
    const Profile p = L_energy_profile(*f, flat_graphs(z_axis(), geometric(0.05, 0.5, 6)), eng, coarse_profile());
    ASSERT_EQ(p.rows.size(), 6u);
    double C = 0.0;
    for (std::size_t i = 0; i < p.rows.size(); ++i) {
        const auto& rw = p.rows[i];
        EXPECT_GT(rw.value, 0.0) << "r = " << rw.r;
        EXPECT_LE(rw.value, std::min(p.delta_star, p.a_star / std::abs(std::log(rw.r))) * (1 + 1e-12));
        if (i > 0) {
            EXPECT_GT(rw.r, p.rows[i - 1].r);
        }
        for (std::size_t j = i; j < p.rows.size(); ++j) C = std::max(C, rw.value / p.rows[j].value);
    }
    EXPECT_DOUBLE_EQ(C, p.mono_C);
    EXPECT_GE(p.mono_C, 1.0);
    EXPECT_GT(p.fit_a, 0.0);
    RecordProperty("mono_C", std::to_string(p.mono_C));
    RecordProperty("a_star", std::to_string(p.a_star));
}

TEST(AngularProfile, ProductDeepAnnulusSuperconvex)
{
    const Engine eng;
    const double l = 0.003;
    const FieldPtr f = make_product_bubble(3, bubble_params(l));
    const Profile p = angular_profile(*f, flat_graphs(z_axis(), geometric(3 * l, 0.3, 9)), eng, coarse_profile());
    ASSERT_EQ(p.rows.size(), 9u);
    int interior = 0;
    for (const auto& rw : p.rows) {
        EXPECT_GT(rw.value, 0.0);
        if (std::isfinite(rw.residual)) {
            ++interior;
            EXPECT_GE(rw.residual, 0.0) << "r = " << rw.r;
        }
    }
    EXPECT_EQ(interior, 7);
    EXPECT_GE(p.min_residual, 0.0);
}

TEST(AngularProfile, ConstantIsZero)
{
    const Engine eng;
    const FieldPtr f = make_constant(3);
    const Profile p = angular_profile(*f, flat_graphs(z_axis(), geometric(0.05, 0.5, 7)), eng, coarse_profile());
    for (const auto& rw : p.rows) {
        EXPECT_EQ(rw.value, 0.0);
        if (std::isfinite(rw.residual)) {
            EXPECT_EQ(rw.residual, 0.0);
        }
    }
}

TEST(AngularProfile, BentResidualTracked)
{
    const Engine eng;
    const FieldPtr f = make_bent_bubble(3, bubble_params(0.01), 0.05);
    const Profile p = angular_profile(*f, flat_graphs(z_axis(), geometric(0.03, 0.3, 7)), eng, coarse_profile());
    ASSERT_TRUE(std::isfinite(p.min_residual));
    const double E = std::max(0.0, -p.min_residual);
    RecordProperty("frak_E", std::to_string(E));
    EXPECT_LE(E, p.delta_star);
}

TEST(AngularProfile, GridTooCoarse)
{
    const Engine eng;
    const FieldPtr f = make_constant(3);
    try {
        angular_profile(*f, flat_graphs(z_axis(), geometric(0.05, 0.5, 6)), eng);
        ADD_FAILURE() << "expected GridTooCoarse";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::GridTooCoarse);
    }
}

TEST(RadialBalance, ProductConformalEquality)
{
    const Engine eng;
    const FieldPtr f = make_product_bubble(3, bubble_params(0.03));
    const RadialBalance b = radial_balance_toy(*f, z_axis(), 0.3, eng, coarse_profile());
    EXPECT_GT(b.theta, 0.0);
    EXPECT_LE(std::abs(b.theta_L), 1e-12 * b.theta);
    EXPECT_LE(std::abs(b.hat_L), 1e-12 * b.theta);
    EXPECT_LE(b.hat_n, b.hat_alpha + 1e-3 * b.theta);
    EXPECT_NEAR(b.hat_n, b.hat_alpha, 1e-3 * b.theta);
    EXPECT_GE(b.slack, -1e-3 * b.theta);
    EXPECT_DOUBLE_EQ(b.slack, b.rhs - b.lhs);
}

TEST(RadialBalance, ConstantIsZero)
{
    const Engine eng;
    const RadialBalance b = radial_balance_toy(*make_constant(3), z_axis(), 0.3, eng, coarse_profile());
    for (double v : {b.hat_n, b.theta_L, b.hat_alpha, b.hat_L, b.theta, b.slack}) EXPECT_EQ(v, 0.0);
}

TEST(RadialBalance, BentSlackTracked)
{
    const Engine eng;
    for (double a : {0.02, 0.05}) {
        const RadialBalance b = radial_balance_toy(*make_bent_bubble(3, bubble_params(0.03), a), z_axis(), 0.3, eng, coarse_profile());
        EXPECT_TRUE(std::isfinite(b.slack));
        EXPECT_GT(b.theta_L, 0.0);
        RecordProperty("relative_slack_a" + std::to_string(a), std::to_string(b.slack / b.theta));
    }
}

TEST(RadialBalance, NeedsCodimensionTwo)
{
    const Engine eng;
    EXPECT_THROW(radial_balance_toy(*make_constant(3), xy_slice(), 0.3, eng), Error);
}
