#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace bubblescope {

constexpr int kMaxDim = 4;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;
using Vec3 = Eigen::Vector3d;
/// Rows are the partials d_i u in R^3.
using Jac = Eigen::Matrix<double, Eigen::Dynamic, 3, 0, kMaxDim, 3>;

enum class Errc {
    DegenerateSpan,
    DimensionMismatch,
    OnAxis,
    SingularPoint,
    NearSingular,
    SupportEscapesDomain,
    NonpositiveScale,
    NonFiniteSample,
    SteepGraph,
    DomainEscape,
    StencilEscape,
    DegenerateSpectrum,
    NewtonDiverged,
    DegenerateConfiguration,
    NonConvergent,
    GridTooCoarse,
    ConfigError,
    AnalysisError,
    InvalidArgument,
    IoError,
};

inline const char* errc_name(Errc c)
{
    switch (c) {
    case Errc::DegenerateSpan: return "DegenerateSpan";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::OnAxis: return "OnAxis";
    case Errc::SingularPoint: return "SingularPoint";
    case Errc::NearSingular: return "NearSingular";
    case Errc::SupportEscapesDomain: return "SupportEscapesDomain";
    case Errc::NonpositiveScale: return "NonpositiveScale";
    case Errc::NonFiniteSample: return "NonFiniteSample";
    case Errc::SteepGraph: return "SteepGraph";
    case Errc::DomainEscape: return "DomainEscape";
    case Errc::StencilEscape: return "StencilEscape";
    case Errc::DegenerateSpectrum: return "DegenerateSpectrum";
    case Errc::NewtonDiverged: return "NewtonDiverged";
    case Errc::DegenerateConfiguration: return "DegenerateConfiguration";
    case Errc::NonConvergent: return "NonConvergent";
    case Errc::GridTooCoarse: return "GridTooCoarse";
    case Errc::ConfigError: return "ConfigError";
    case Errc::AnalysisError: return "AnalysisError";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code)
    {
    }
    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

inline double sqr(double v) { return v * v; }

inline Vec make_vec(std::initializer_list<double> v)
{
    Vec out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

inline Vec unit_vec(int m, int i)
{
    Vec e = Vec::Zero(m);
    e(i) = 1.0;
    return e;
}

} // namespace bubblescope
