#ifndef SVRECON_BASIS_HPP
#define SVRECON_BASIS_HPP

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "svrecon/error.hpp"
#include "svrecon/geometry.hpp"
#include "svrecon/quadrature.hpp"

namespace svrecon {

/// Half-width of the basis support in local (voxel-width) units.
inline constexpr double kSupportHalfWidth = 1.5;

enum class Continuity { C1_polynomial, C0_with_sines };

/// Elementary-function family {1, x, ..., x^d, sin(w pi x / 1.5) ...} together with
/// the orthonormal null space of the support-boundary constraints.
class BasisSpec {
public:
    BasisSpec() = default;

    int degree() const { return degree_; }
    const std::vector<int>& sine_frequencies() const { return sine_freqs_; }
    Continuity continuity() const { return continuity_; }
    /// Columns map free coefficients to elementary-function coefficients.
    const Eigen::MatrixXd& null_space() const { return null_space_; }
    int num_elementary() const { return degree_ + 1 + int(sine_freqs_.size()); }
    int free_dimension() const { return int(null_space_.cols()); }
    bool is_polynomial() const { return sine_freqs_.empty(); }

    /// Derivative `order` (0..2) of elementary function u at x.
    double elementary(int u, int order, double x) const
    {
        if (u <= degree_) {
            if (u < order)
                return 0.0;
            double c = 1.0;
            for (int k = 0; k < order; ++k)
                c *= double(u - k);
            return c * std::pow(x, u - order);
        }
        const double w = sine_wavenumber(sine_freqs_[u - degree_ - 1]);
        switch (order) {
        case 0: return std::sin(w * x);
        case 1: return w * std::cos(w * x);
        default: return -w * w * std::sin(w * x);
        }
    }

    /// Constraint rows: value (and for C1, slope) at both support ends.
    Eigen::MatrixXd constraint_matrix() const
    {
        const int rows = continuity_ == Continuity::C1_polynomial ? 4 : 2;
        Eigen::MatrixXd c(rows, num_elementary());
        for (int u = 0; u < num_elementary(); ++u) {
            c(0, u) = elementary(u, 0, -kSupportHalfWidth);
            c(1, u) = elementary(u, 0, kSupportHalfWidth);
            if (rows == 4) {
                c(2, u) = elementary(u, 1, -kSupportHalfWidth);
                c(3, u) = elementary(u, 1, kSupportHalfWidth);
            }
        }
        return c;
    }

    static double sine_wavenumber(int omega) { return omega * std::numbers::pi / kSupportHalfWidth; }

    /// Text form: degree, frequencies, continuity flag, then null-space rows.
    std::string to_text() const
    {
        std::ostringstream os;
        os.precision(17);
        os << "degree " << degree_ << "\nfrequencies " << sine_freqs_.size();
        for (int w : sine_freqs_)
            os << ' ' << w;
        os << "\ncontinuity " << (continuity_ == Continuity::C1_polynomial ? "C1" : "C0") << "\nnull_space "
           << null_space_.rows() << ' ' << null_space_.cols() << '\n';
        for (Eigen::Index r = 0; r < null_space_.rows(); ++r) {
            for (Eigen::Index c = 0; c < null_space_.cols(); ++c)
                os << (c ? " " : "") << null_space_(r, c);
            os << '\n';
        }
        return os.str();
    }

    friend BasisSpec make_basis_spec(int degree, std::vector<int> sine_freqs, Continuity continuity);

private:
    int degree_ = 4;
    std::vector<int> sine_freqs_;
    Continuity continuity_ = Continuity::C1_polynomial;
    Eigen::MatrixXd null_space_;
};

inline BasisSpec make_basis_spec(int degree, std::vector<int> sine_freqs, Continuity continuity)
{
    if (degree < 0)
        throw Error(ErrorKind::InsufficientDegree, "negative degree");
    for (std::size_t i = 0; i < sine_freqs.size(); ++i) {
        if (sine_freqs[i] <= 0)
            throw Error(ErrorKind::InvalidFrequency, "sine frequencies must be positive integers");
        for (std::size_t j = 0; j < i; ++j)
            if (sine_freqs[i] == sine_freqs[j])
                throw Error(ErrorKind::InvalidFrequency, "duplicate sine frequency");
    }
    BasisSpec spec;
    spec.degree_ = degree;
    spec.sine_freqs_ = std::move(sine_freqs);
    spec.continuity_ = continuity;

    const Eigen::MatrixXd c = spec.constraint_matrix();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double tol = 1e-12 * std::max(1.0, sv.size() ? sv(0) : 0.0);
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > tol)
            ++rank;
    const int n = spec.num_elementary();
    if (n - rank <= 0)
        throw Error(ErrorKind::InsufficientDegree,
                    "constraints leave no free coefficients (degree " + std::to_string(degree) + ")");
    Eigen::MatrixXd null = svd.matrixV().rightCols(n - rank);
    // deterministic sign: largest-magnitude entry of each column is positive
    for (Eigen::Index col = 0; col < null.cols(); ++col) {
        Eigen::Index arg = 0;
        null.col(col).cwiseAbs().maxCoeff(&arg);
        if (null(arg, col) < 0)
            null.col(col) *= -1.0;
    }
    spec.null_space_ = std::move(null);
    return spec;
}

inline BasisSpec default_basis_spec() { return make_basis_spec(4, {}, Continuity::C1_polynomial); }

/// Per-axis free coefficients m^x, m^y, m^z.
struct BasisParams {
    std::array<Eigen::VectorXd, 3> axis;

    static BasisParams unit(const BasisSpec& spec)
    {
        BasisParams p;
        for (auto& a : p.axis) {
            a = Eigen::VectorXd::Zero(spec.free_dimension());
            a(0) = 1.0;
        }
        return p;
    }

    bool is_zero() const
    {
        return std::any_of(axis.begin(), axis.end(), [](const auto& a) { return a.size() == 0 || a.isZero(0.0); });
    }
};

/// One-dimensional profile b(x) = sum_u c_u q_u(x) restricted to [-1.5, 1.5].
class AxisProfile {
public:
    AxisProfile() = default;

    AxisProfile(const BasisSpec& spec, const Eigen::VectorXd& free)
    {
        if (free.size() != spec.free_dimension())
            throw Error(ErrorKind::ShapeMismatch, "basis parameter length differs from free dimension");
        const Eigen::VectorXd c = spec.null_space() * free;
        poly_.assign(c.data(), c.data() + spec.degree() + 1);
        for (std::size_t j = 0; j < spec.sine_frequencies().size(); ++j) {
            sine_amp_.push_back(c(spec.degree() + 1 + Eigen::Index(j)));
            sine_k_.push_back(BasisSpec::sine_wavenumber(spec.sine_frequencies()[j]));
        }
    }

    /// Value and first two derivatives; all zero outside the support.
    std::array<double, 3> eval(double x) const
    {
        std::array<double, 3> r{0.0, 0.0, 0.0};
        if (std::abs(x) > kSupportHalfWidth)
            return r;
        const int d = int(poly_.size()) - 1;
        for (int u = d; u >= 0; --u) {
            r[2] = r[2] * x + 2.0 * r[1];
            r[1] = r[1] * x + r[0];
            r[0] = r[0] * x + poly_[u];
        }
        for (std::size_t j = 0; j < sine_amp_.size(); ++j) {
            const double k = sine_k_[j], s = std::sin(k * x), c = std::cos(k * x);
            r[0] += sine_amp_[j] * s;
            r[1] += sine_amp_[j] * k * c;
            r[2] -= sine_amp_[j] * k * k * s;
        }
        return r;
    }

    const std::vector<double>& polynomial() const { return poly_; }

private:
    std::vector<double> poly_;
    std::vector<double> sine_amp_;
    std::vector<double> sine_k_;
};

/// B(p; m) = b^x(x) b^y(y) b^z(z) with zero outside [-1.5, 1.5]^3.
class TensorBasis {
public:
    TensorBasis() = default;

    TensorBasis(const BasisSpec& spec, const BasisParams& params)
    {
        if (params.is_zero())
            throw Error(ErrorKind::ZeroBasis, "basis parameters are zero on some axis");
        for (int a = 0; a < 3; ++a)
            axis_[a] = AxisProfile(spec, params.axis[a]);
    }

    const AxisProfile& axis(int a) const { return axis_[a]; }

private:
    std::array<AxisProfile, 3> axis_;
};

enum class DerivOrder { value = 0, gradient = 1, hessian = 2 };

/// Scalar field sample; entries above the requested order are left zero.
struct FieldSample {
    double value = 0.0;
    Vec3 gradient = Vec3::Zero();
    Eigen::Matrix3d hessian = Eigen::Matrix3d::Zero();
};

inline bool inside_support(const Vec3& local)
{
    return local.cwiseAbs().maxCoeff() <= kSupportHalfWidth;
}

/// Evaluates B at a point in the basis' local frame.
inline FieldSample eval_basis(const TensorBasis& basis, const Vec3& local, DerivOrder order = DerivOrder::hessian)
{
    FieldSample s;
    if (!inside_support(local))
        return s;
    const auto bx = basis.axis(0).eval(local.x());
    const auto by = basis.axis(1).eval(local.y());
    const auto bz = basis.axis(2).eval(local.z());
    s.value = bx[0] * by[0] * bz[0];
    if (order == DerivOrder::value)
        return s;
    s.gradient = Vec3(bx[1] * by[0] * bz[0], bx[0] * by[1] * bz[0], bx[0] * by[0] * bz[1]);
    if (order == DerivOrder::gradient)
        return s;
    auto& h = s.hessian;
    h(0, 0) = bx[2] * by[0] * bz[0];
    h(1, 1) = bx[0] * by[2] * bz[0];
    h(2, 2) = bx[0] * by[0] * bz[2];
    h(0, 1) = h(1, 0) = bx[1] * by[1] * bz[0];
    h(0, 2) = h(2, 0) = bx[1] * by[0] * bz[1];
    h(1, 2) = h(2, 1) = bx[0] * by[1] * bz[1];
    return s;
}

inline FieldSample eval_basis(const BasisSpec& spec, const BasisParams& m, const Vec3& local,
                              DerivOrder order = DerivOrder::hessian)
{
    return eval_basis(TensorBasis(spec, m), local, order);
}

/// A basis placed in grid space: local = (x - center) / width.
struct PlacedBasis {
    const TensorBasis* basis = nullptr;
    Vec3 center = Vec3::Zero();
    double width = 1.0;

    Vec3 to_local(const Vec3& x) const { return (x - center) / width; }

    /// Value/gradient/hessian with respect to grid coordinates.
    FieldSample eval(const Vec3& x, DerivOrder order = DerivOrder::hessian) const
    {
        FieldSample s = eval_basis(*basis, to_local(x), order);
        s.gradient /= width;
        s.hessian /= width * width;
        return s;
    }
};

/// Axis-aligned box in grid coordinates.
struct Box3 {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Zero();
};

/// I[i][j] = integral over [a, b] of b_k^(i) * b_l^(j), chain-rule factors included.
using AxisMoments = std::array<std::array<double, 3>, 3>;

inline AxisMoments axis_moments(const AxisProfile& pk, double ck, double wk, const AxisProfile& pl, double cl,
                                 double wl, double a, double b, const GaussLegendre& gl)
{
    AxisMoments m{};
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    const double sk[3] = {1.0, 1.0 / wk, 1.0 / (wk * wk)};
    const double sl[3] = {1.0, 1.0 / wl, 1.0 / (wl * wl)};
    for (int q = 0; q < gl.order(); ++q) {
        const double x = mid + half * gl.nodes()[q];
        const double w = half * gl.weights()[q];
        const auto vk = pk.eval((x - ck) / wk);
        const auto vl = pl.eval((x - cl) / wl);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                m[i][j] += w * (vk[i] * sk[i]) * (vl[j] * sl[j]);
    }
    return m;
}

/// Single-basis integrals J[i] = integral over [a, b] of b^(i).
inline std::array<double, 3> axis_integrals(const AxisProfile& p, double c, double w, double a, double b,
                                            const GaussLegendre& gl)
{
    std::array<double, 3> r{};
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    const double s[3] = {1.0, 1.0 / w, 1.0 / (w * w)};
    for (int q = 0; q < gl.order(); ++q) {
        const double x = mid + half * gl.nodes()[q];
        const auto v = p.eval((x - c) / w);
        for (int i = 0; i < 3; ++i)
            r[i] += half * gl.weights()[q] * v[i] * s[i];
    }
    return r;
}

struct CellIntegrals {
    double grad_grad = 0.0; ///< integral of grad B_k . grad B_l
    double lap_lap = 0.0;   ///< integral of lap B_k * lap B_l
    double hess_hess = 0.0; ///< integral of H(B_k) : H(B_l)
    Vec3 grad_vec = Vec3::Zero(); ///< integral of grad B_k
};

namespace detail {

inline double gram_gradient(const AxisMoments& x, const AxisMoments& y, const AxisMoments& z)
{
    return x[1][1] * y[0][0] * z[0][0] + x[0][0] * y[1][1] * z[0][0] + x[0][0] * y[0][0] * z[1][1];
}

inline double gram_laplacian(const AxisMoments& x, const AxisMoments& y, const AxisMoments& z)
{
    const double diag = x[2][2] * y[0][0] * z[0][0] + x[0][0] * y[2][2] * z[0][0] + x[0][0] * y[0][0] * z[2][2];
    const double xy = (x[2][0] * y[0][2] + x[0][2] * y[2][0]) * z[0][0];
    const double xz = (x[2][0] * z[0][2] + x[0][2] * z[2][0]) * y[0][0];
    const double yz = (y[2][0] * z[0][2] + y[0][2] * z[2][0]) * x[0][0];
    return diag + (xy + xz + yz);
}

inline double gram_hessian(const AxisMoments& x, const AxisMoments& y, const AxisMoments& z)
{
    const double diag = x[2][2] * y[0][0] * z[0][0] + x[0][0] * y[2][2] * z[0][0] + x[0][0] * y[0][0] * z[2][2];
    const double mixed = 2.0 * (x[1][1] * y[1][1] * z[0][0] + x[1][1] * y[0][0] * z[1][1] + x[0][0] * y[1][1] * z[1][1]);
    return diag + mixed;
}

inline void accumulate(AxisMoments& acc, const AxisMoments& m)
{
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            acc[i][j] += m[i][j];
}

} // namespace detail

inline int default_quadrature_order(const BasisSpec& spec)
{
    return std::max(4, (2 * spec.degree() + 2) / 2);
}

/// Inner-product integrals of two placed bases over one grid-space cell, using
/// tensor Gauss-Legendre of order Q per axis.
inline CellIntegrals cell_inner_products(const PlacedBasis& k, const PlacedBasis& l, const Box3& cell, int quad_order)
{
    if (!((cell.hi - cell.lo).minCoeff() > 0.0))
        throw Error(ErrorKind::DegenerateCell, "cell has non-positive extent");
    const GaussLegendre gl(quad_order);
    std::array<AxisMoments, 3> m;
    std::array<std::array<double, 3>, 3> j;
    for (int a = 0; a < 3; ++a) {
        m[a] = axis_moments(k.basis->axis(a), k.center[a], k.width, l.basis->axis(a), l.center[a], l.width,
                            cell.lo[a], cell.hi[a], gl);
        j[a] = axis_integrals(k.basis->axis(a), k.center[a], k.width, cell.lo[a], cell.hi[a], gl);
    }
    CellIntegrals r;
    r.grad_grad = detail::gram_gradient(m[0], m[1], m[2]);
    r.lap_lap = detail::gram_laplacian(m[0], m[1], m[2]);
    r.hess_hess = detail::gram_hessian(m[0], m[1], m[2]);
    r.grad_vec = Vec3(j[0][1] * j[1][0] * j[2][0], j[0][0] * j[1][1] * j[2][0], j[0][0] * j[1][0] * j[2][1]);
    return r;
}

} // namespace svrecon

#endif // SVRECON_BASIS_HPP
