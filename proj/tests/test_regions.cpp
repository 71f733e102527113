#include <bubblescope/identity.hpp>
#include <bubblescope/regions.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace bubblescope;

namespace {

const double kPi = std::numbers::pi;

// Standard bubble followed by a target rotation.
class RotatedBubble final : public MapField {
public:
    RotatedBubble(BubbleParams p, Eigen::Matrix3d R) : b_{p}, R_(std::move(R)) {}
    int dim() const override { return 2; }
    FieldSample sample(const Vec& y) const override
    {
        const Eigen::Vector2d w(y(0), y(1));
        FieldSample s;
        s.u = R_ * b_.value(w);
        s.J = (R_ * b_.jac(w)).transpose();
        return s;
    }
    Json metadata() const override { return Json{{"family", "rotated_bubble"}, {"bubble", bubble_json(b_.p)}}; }

private:
    PlanarBubble b_;
    Eigen::Matrix3d R_;
};

// Kabsch fit of the target rotation on a spiral of samples around the fitted center.
Eigen::Matrix3d fit_rotation(const MapField& f, const PlanarBubble& b)
{
    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    for (int i = 0; i < 40; ++i) {
        const double a = 0.157 * i, rr = b.p.lambda * (0.3 + 0.1 * i);
        const Eigen::Vector2d w = b.p.center + rr * Eigen::Vector2d(std::cos(a), std::sin(a));
        H += f.value(make_vec({w(0), w(1)})) * b.value(w).transpose();
    }
    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d U = svd.matrixU();
    if ((U * svd.matrixV().transpose()).determinant() < 0) U.col(2) *= -1.0;
    return U * svd.matrixV().transpose();
}

// theta(x, r) at x on the axis of the product bubble: int_0^inf e^{-u/2r^2} 4 l^2/(l^2 + u)^2 du
double product_axis_theta(double l, double r)
{
    const int n = 400000;
    const double umax = 60.0 * r * r;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double u = umax * i / n;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += w * std::exp(-u / (2 * r * r)) * 4 * l * l / sqr(l * l + u);
    }
    return acc * umax / (3.0 * n);
}

const Plane kNoPlane2 = Plane::from_orthonormal(2, Mat(2, 0));

} // namespace

TEST(SymmetryScore, ConeVertexIsZeroSymmetric)
{
    const Engine eng;
    const FieldPtr f = make_cone_map(0.4);
    for (double r : {0.1, 1.0}) EXPECT_LE(symmetry_score(*f, Vec::Zero(3), r, 0, eng).score, 1e-10);
}

TEST(SymmetryScore, ProductShrinksWithScaleRatio)
{
    const Engine eng;
    const FieldPtr f = make_product_bubble(3, bubble_params(0.01));
    const Plane LA = coordinate_plane(3, {2});
    double first = -1.0, prev = INFINITY;
    for (int i = 0; i < 10; ++i) {
        const double r = 0.02 * std::pow(50.0, i / 9.0);
        const SymmetryScore s = symmetry_score(*f, make_vec({0.0, 0.0, 0.1}), r, 1, eng, &LA);
        EXPECT_GE(s.score, 0.0);
        EXPECT_LE(s.score, prev * (1 + 1e-12)) << "r = " << r;
        if (first < 0.0) first = s.score;
        prev = s.score;
    }
    EXPECT_LE(prev, 0.01 * first);
}

TEST(SymmetryScore, NoLineSymmetryAtBubbleScale)
{
    const Engine eng;
    const double l = 0.3;
    const FieldPtr f = make_standard_bubble(bubble_params(l, 0.1, 0.2));
    const Vec c = make_vec({0.1, 0.2});
    EXPECT_GE(symmetry_score(*f, c, l, 1, eng).score, 0.1 * theta(*f, c, l, eng));
}

TEST(SymmetryScore, ExtraCandidateNeverHurts)
{
    const Engine eng;
    const FieldPtr f = make_bent_bubble(3, bubble_params(0.1), 0.1);
    const Plane LA = coordinate_plane(3, {2});
    const Vec x = make_vec({0.02, 0.01, 0.3});
    for (int k = 0; k <= 3; ++k) {
        const SymmetryScore a = symmetry_score(*f, x, 0.4, k, eng);
        const SymmetryScore b = symmetry_score(*f, x, 0.4, k, eng, &LA);
        EXPECT_LE(b.score, a.score);
        EXPECT_GE(a.score, 0.0);
        EXPECT_EQ(b.candidates, a.candidates + (k == 1 ? 1 : 0));
    }
    EXPECT_THROW(symmetry_score(*f, x, 0.4, 4, eng), Error);
}

TEST(Stratification, ConeProductAndConstantLabels)
{
    const Engine eng;
    const std::vector<double> scales = {0.1, 0.5, 1.0};
    const auto cone = stratification_sample(*make_cone_map(0.4), {Vec::Zero(3)}, scales, 0.01, eng);
    for (int top : cone[0].top_k) EXPECT_GE(top, 0);

    const Plane LA = coordinate_plane(3, {2});
    const auto prod = stratification_sample(*make_product_bubble(3, bubble_params(1e-3)), {make_vec({0.0, 0.0, 0.0}), make_vec({0.0, 0.0, 0.5})},
                                            {1.0}, 0.01, eng, &LA);
    for (const auto& lab : prod) EXPECT_GE(lab.top_k[0], 1);

    const auto flat = stratification_sample(*make_constant(3), {make_vec({0.3, 0.1, 0.0})}, scales, 0.01, eng);
    EXPECT_EQ(flat[0].k_star, 3);
    for (const auto& row : flat[0].scores)
        for (double v : row) EXPECT_EQ(v, 0.0);

    std::ostringstream os;
    write_stratification_csv(prod, os);
    const std::string csv = os.str();
    EXPECT_EQ(csv.substr(0, csv.find('\r')), "x1,x2,x3,scale,sigma_0,sigma_1,sigma_2,sigma_3,top_k,k_star");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(AnnularCertificate, ProductPinchingDecaysWithLambda)
{
    const Engine eng;
    const AffinePlane LA{coordinate_plane(3, {2}), Vec::Zero(3)};
    AnnularSpec spec;
    spec.r_points = 6;
    double prev = INFINITY;
    // r_x fixed at 10 lambda_0 with lambda_0 = 1e-2; at r_x = 10 lambda the pinching only sees r/lambda
    for (double l : {1e-2, 5e-3, 2e-3}) {
        const FieldPtr f = make_product_bubble(3, bubble_params(l));
        const SubmanifoldGraph T = flat_graph(LA, 0.2, 0.2, 0.1);
        const RegionCertificate c = annular_certificate(*f, T, RadiusFunction{0.1, 0.0}, spec, eng);
        EXPECT_EQ(c.entry("a1"), 0.0);
        EXPECT_EQ(c.certified_delta, c.entry("a2"));
        EXPECT_LT(c.certified_delta, prev) << "lambda = " << l;
        EXPECT_TRUE(c.nontrivial);
        prev = c.certified_delta;
    }
}

TEST(AnnularCertificate, NontrivialityAgainstClosedForm)
{
    const Engine eng;
    const double l = 1e-2;
    const FieldPtr f = make_product_bubble(3, bubble_params(l));
    const AffinePlane LA{coordinate_plane(3, {2}), Vec::Zero(3)};
    const SubmanifoldGraph T = flat_graph(LA, 0.1, 0.1, 0.1);
    AnnularSpec spec;
    spec.r_points = 3;
    // r_x = l/10: theta ~ 8 (r/l)^2 sits below eps0 = 0.1
    const RegionCertificate small = annular_certificate(*f, T, RadiusFunction{l / 10, 0.0}, spec, eng);
    const double oracle = product_axis_theta(l, l / 10);
    EXPECT_NEAR(oracle, 0.077, 0.002);
    EXPECT_NEAR(small.entry("a3_min_theta"), oracle, 1e-4 * oracle);
    EXPECT_FALSE(small.nontrivial);
    const RegionCertificate at_l = annular_certificate(*f, T, RadiusFunction{l, 0.0}, spec, eng);
    EXPECT_NEAR(at_l.entry("a3_min_theta"), product_axis_theta(l, l), 1e-4);
    EXPECT_TRUE(at_l.nontrivial);
}

TEST(AnnularCertificate, BentGraphBindsOnA1)
{
    const Engine eng;
    const double a = 0.05, l = 0.01;
    const FieldPtr f = make_bent_bubble(3, bubble_params(l), a);
    const AffinePlane LA{coordinate_plane(3, {2}), Vec::Zero(3)};
    const SubmanifoldGraph T = build_Tr(*f, LA, 0.3, 0.3, eng);
    AnnularSpec spec;
    spec.r_points = 4;
    spec.stride = 2;
    const RegionCertificate c = annular_certificate(*f, T, RadiusFunction{0.5, 0.0}, spec, eng);
    EXPECT_EQ(c.binding_condition(), "a1");
    EXPECT_GT(c.entry("a1"), 0.1 * a);
    EXPECT_LT(c.entry("a1"), 3.0 * a);
    EXPECT_EQ(c.certified_delta, std::max(c.entry("a1"), c.entry("a2")));
}

TEST(BubbleCertificate, SelfModelOnProduct)
{
    const Engine eng;
    const double l = 0.05, r = 0.5;
    const FieldPtr f = make_product_bubble(3, bubble_params(l));
    const Plane LA = coordinate_plane(3, {2});
    const RegionCertificate c = bubble_certificate(*f, Vec::Zero(3), r, LA, {}, *f, BubbleSpec{}, eng);
    EXPECT_EQ(c.entry("b1"), 0.0);
    EXPECT_LE(c.entry("b2"), 1e-10);
    // 8 pi minus the tail outside the disk of radius r
    EXPECT_NEAR(c.entry("b3_model_energy"), 8 * kPi * r * r / (l * l + r * r), 1e-6 * 8 * kPi);
    EXPECT_TRUE(c.nontrivial);
    EXPECT_EQ(c.certified_delta, std::max(c.entry("b1"), c.entry("b2")));
}

TEST(BubbleCertificate, MisfitModelIsDetected)
{
    const Engine eng;
    const FieldPtr f = make_product_bubble(3, bubble_params(0.05));
    const FieldPtr wrong = make_product_bubble(3, bubble_params(0.1));
    const RegionCertificate c = bubble_certificate(*f, Vec::Zero(3), 0.5, coordinate_plane(3, {2}), {}, *wrong, BubbleSpec{}, eng);
    EXPECT_GT(c.entry("b2"), 0.1);
    EXPECT_EQ(c.binding_condition(), "b2");
}

TEST(BubbleCertificate, ExcludedBallsAndRadiusFloor)
{
    const Engine eng;
    const FieldPtr f = make_standard_bubble(bubble_params(0.05));
    const FieldPtr wrong = make_standard_bubble(bubble_params(0.1));
    const RegionCertificate full = bubble_certificate(*f, Vec::Zero(2), 0.5, kNoPlane2, {}, *wrong, BubbleSpec{}, eng);
    const RegionCertificate cut = bubble_certificate(*f, Vec::Zero(2), 0.5, kNoPlane2, {{Vec::Zero(2), 0.2}}, *wrong, BubbleSpec{}, eng);
    EXPECT_LT(cut.entry("b2"), full.entry("b2"));
    EXPECT_NEAR(cut.entry("b4_min_excluded_over_r"), 0.4, 1e-15);
    EXPECT_LT(cut.entry("b3_model_energy"), full.entry("b3_model_energy"));
}

TEST(BubbleCertificate, ConeSliceImprovesAlongLambdaSweep)
{
    const Engine eng;
    const AffinePlane sl{coordinate_plane(3, {0, 1}), make_vec({0.0, 0.0, 1.0})};
    double prev = INFINITY;
    for (double l : {0.1, 0.03, 0.01}) {
        const FieldPtr cone = make_cone_map(l);
        const BubbleTree t = extract_bubbles(cone, sl, ExtractSpec{}, eng.quad());
        ASSERT_EQ(t.nodes.size(), 1u);
        const BubbleNode& n = t.nodes[0];
        const SliceField s(cone, sl.base, sl.plane.basis());
        double best = INFINITY;
        for (int o : {1, -1}) {
            const PlanarBubble b{bubble_params(n.lambda, n.center(0), n.center(1), o)};
            const RotatedBubble model(b.p, fit_rotation(s, b));
            const RegionCertificate c = bubble_certificate(s, make_vec({n.center(0), n.center(1)}), 10 * n.lambda, kNoPlane2, {}, model, BubbleSpec{}, eng);
            best = std::min(best, c.certified_delta);
        }
        EXPECT_LT(best, prev) << "lambda = " << l;
        prev = best;
    }
    EXPECT_LT(prev, 1e-3);
}

TEST(Certificate, ReproducibleFromDescriptor)
{
    const Engine eng;
    const FieldPtr f = make_bent_bubble(3, bubble_params(0.05), 0.05);
    const AffinePlane LA{coordinate_plane(3, {2}), Vec::Zero(3)};
    const SubmanifoldGraph T = build_Tr(*f, LA, 0.3, 0.15, eng);
    AnnularSpec spec;
    spec.r_points = 3;
    const RegionCertificate a = annular_certificate(*f, T, RadiusFunction{0.5, 0.1}, spec, eng);
    const RegionCertificate a2 = replay_certificate(Json::parse(a.to_json().dump()).at("descriptor"));
    EXPECT_NEAR(a2.certified_delta, a.certified_delta, 1e-12);

    const FieldPtr wrong = make_bent_bubble(3, bubble_params(0.07), 0.0);
    const RegionCertificate b = bubble_certificate(*f, make_vec({0.0, 0.0, 0.2}), 0.4, make_plane(3, {make_vec({0.1, 0.0, 1.0})}),
                                                   {{make_vec({0.0, 0.0, 0.2}), 0.05}}, *wrong, BubbleSpec{}, eng);
    const RegionCertificate b2 = replay_certificate(Json::parse(b.to_json().dump()).at("descriptor"));
    EXPECT_NEAR(b2.certified_delta, b.certified_delta, 1e-12);
    EXPECT_EQ(b2.entry("b3_field_energy"), b.entry("b3_field_energy"));
}

TEST(ConeSplitting, CollinearAndCoincidentPointsRejected)
{
    const Engine eng;
    const FieldPtr f = make_product_bubble(3, bubble_params(0.1));
    try {
        cone_splitting_check(*f, {Vec::Zero(3), make_vec({0.0, 0.0, 0.3}), make_vec({0.0, 0.0, 0.6})}, 0.5, eng);
        ADD_FAILURE() << "expected DegenerateConfiguration";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::DegenerateConfiguration);
    }
    EXPECT_THROW(cone_splitting_check(*f, {Vec::Zero(3), make_vec({0.0, 0.0, 1e-4})}, 0.5, eng), Error);
    EXPECT_THROW(cone_splitting_check(*f, {}, 0.5, eng), Error);
}

TEST(ConeSplitting, ProductAxisRatioTracking)
{
    const Engine eng;
    const std::vector<Vec> pts = {make_vec({0.0, 0.0, 0.0}), make_vec({0.0, 0.0, 0.3})};
    const Plane LA = coordinate_plane(3, {2});
    for (bool top : {false, true}) {
        double lo = INFINITY, hi = 0.0, prev_l = INFINITY, prev_r = INFINITY;
        for (double l : {0.1, 0.03, 0.01, 0.003}) {
            const FieldPtr f = make_product_bubble(3, bubble_params(l));
            const ConeSplitting c = cone_splitting_check(*f, pts, 0.5, eng, top);
            const EnergyReport rep = energy_report(*f, pts[0], 0.5, eng, &LA);
            EXPECT_LE(rep.part_L, 1e-12);
            EXPECT_NEAR(c.alpha, 0.6, 1e-12);
            EXPECT_LT(c.lhs, prev_l);
            EXPECT_LT(c.rhs, prev_r);
            prev_l = c.lhs;
            prev_r = c.rhs;
            lo = std::min(lo, c.ratio);
            hi = std::max(hi, c.ratio);
        }
        EXPECT_LE(hi / lo, 100.0) << (top ? "top" : "plain");
    }
}
