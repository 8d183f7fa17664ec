#ifndef SVRECON_QUADRATURE_HPP
#define SVRECON_QUADRATURE_HPP

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace svrecon {

/// Gauss-Legendre rule on [-1, 1]; exact for polynomials of degree 2*order - 1.
class GaussLegendre {
public:
    explicit GaussLegendre(int order) : nodes_(order), weights_(order)
    {
        if (order < 1)
            throw std::invalid_argument("quadrature order must be positive");
        // Newton on P_n from the Chebyshev-like initial guess; roots are symmetric.
        const int n = order;
        for (int i = 0; i < (n + 1) / 2; ++i) {
            double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
            double dp = 0.0;
            for (int iter = 0; iter < 100; ++iter) {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= n; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                if (n == 1)
                    p0 = 1.0, p1 = x;
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-16)
                    break;
            }
            // recompute derivative at the converged root
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes_[i] = -x;
            nodes_[n - 1 - i] = x;
            weights_[i] = weights_[n - 1 - i] = w;
        }
        if (n % 2 == 1)
            nodes_[n / 2] = 0.0;
    }

    int order() const { return int(nodes_.size()); }
    const std::vector<double>& nodes() const { return nodes_; }
    const std::vector<double>& weights() const { return weights_; }

    /// Integrates f over [a, b].
    template <class F>
    double integrate(F&& f, double a, double b) const
    {
        const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
        double sum = 0.0;
        for (std::size_t q = 0; q < nodes_.size(); ++q)
            sum += weights_[q] * f(mid + half * nodes_[q]);
        return half * sum;
    }

private:
    std::vector<double> nodes_;
    std::vector<double> weights_;
};

} // namespace svrecon

#endif // SVRECON_QUADRATURE_HPP
