#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace bubblescope {

/// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussRule {
    std::vector<double> x;
    std::vector<double> w;
};

inline GaussRule compute_gauss_legendre(int n)
{
    if (n < 1) throw std::invalid_argument("Gauss-Legendre order must be positive");
    GaussRule g;
    g.x.resize(n);
    g.w.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 1; j <= n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        double p0 = 1.0, p1 = 0.0;
        for (int j = 1; j <= n; ++j) {
            const double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
        }
        dp = n * (z * p0 - p1) / (z * z - 1.0);
        const double w = 2.0 / ((1.0 - z * z) * dp * dp);
        g.x[i] = -z;
        g.x[n - 1 - i] = z;
        g.w[i] = g.w[n - 1 - i] = w;
    }
    if (n % 2 == 1) g.x[n / 2] = 0.0;
    return g;
}

inline const GaussRule& gauss_legendre(int n)
{
    static std::mutex mu;
    static std::map<int, GaussRule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, compute_gauss_legendre(n)).first;
    return it->second;
}

/// Composite Gauss-Legendre nodes over consecutive panels [b_i, b_{i+1}].
struct Nodes1D {
    std::vector<double> x;
    std::vector<double> w;
    void append_panel(double a, double b, int n)
    {
        const GaussRule& g = gauss_legendre(n);
        const double h = 0.5 * (b - a), c = 0.5 * (a + b);
        for (int i = 0; i < n; ++i) {
            x.push_back(c + h * g.x[i]);
            w.push_back(h * g.w[i]);
        }
    }
    std::size_t size() const { return x.size(); }
};

inline Nodes1D composite_nodes(const std::vector<double>& breaks, int n)
{
    Nodes1D out;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i)
        if (breaks[i + 1] > breaks[i]) out.append_panel(breaks[i], breaks[i + 1], n);
    return out;
}

inline Nodes1D uniform_panels(double a, double b, int panels, int n)
{
    std::vector<double> br;
    for (int i = 0; i <= panels; ++i) br.push_back(a + (b - a) * i / panels);
    return composite_nodes(br, n);
}

} // namespace bubblescope
