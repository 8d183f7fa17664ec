#ifndef SVRECON_SOLVER_HPP
#define SVRECON_SOLVER_HPP

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "svrecon/basis.hpp"
#include "svrecon/error.hpp"
#include "svrecon/geometry.hpp"
#include "svrecon/parallel.hpp"
#include "svrecon/quadrature.hpp"
#include "svrecon/voxel.hpp"

namespace svrecon {

/// lambda_H weights the Hessian (biharmonic) block, lambda_P the point screening block.
struct SolverWeights {
    double lambda_H = 3.0;
    double lambda_P = 64.0;

    void validate() const
    {
        if (!(lambda_H >= 0.0) || !(lambda_P >= 0.0) || !std::isfinite(lambda_H) || !std::isfinite(lambda_P))
            throw Error(ErrorKind::InvalidConfig, "solver weights must be finite and non-negative");
    }
};

struct Dof {
    VoxelKey key;
    Vec3 center = Vec3::Zero(); ///< grid units
    double width = 1.0;         ///< grid units
    std::uint32_t basis_id = 0;
};

/// Row numbering of basis-carrying voxels plus the basis instance attached to each.
class DofTable {
public:
    DofTable() = default;

    DofTable(const SparseVoxelHierarchy& h, const BasisSpec& spec)
        : spec_(spec), max_scale_(h.adaptive_depth())
    {
        bases_.emplace_back(spec, BasisParams::unit(spec));
        for (const auto& key : h.basis_voxels()) {
            const auto* rec = h.find(key);
            Dof d;
            d.key = key;
            d.center = h.grid_center(key);
            d.width = key.width();
            if (rec->basis_params) {
                d.basis_id = std::uint32_t(bases_.size());
                bases_.emplace_back(spec, *rec->basis_params);
            }
            index_.emplace(key, std::uint32_t(dofs_.size()));
            dofs_.push_back(d);
        }
    }

    std::size_t size() const { return dofs_.size(); }
    const Dof& operator[](std::size_t i) const { return dofs_[i]; }
    const std::vector<Dof>& dofs() const { return dofs_; }
    const BasisSpec& spec() const { return spec_; }
    int max_scale() const { return max_scale_; }

    long long index_of(const VoxelKey& key) const
    {
        auto it = index_.find(key);
        return it == index_.end() ? -1 : static_cast<long long>(it->second);
    }

    PlacedBasis placed(std::size_t i) const
    {
        const auto& d = dofs_[i];
        return {&bases_[d.basis_id], d.center, d.width};
    }

    const TensorBasis& basis_of(std::size_t i) const { return bases_[dofs_[i].basis_id]; }

    /// Calls f(dof, placed) for every basis whose closed support contains grid point g.
    template <class F>
    void for_each_basis_at(const Vec3& g, F&& f) const
    {
        for (int s = 1; s <= max_scale_; ++s) {
            const double w = double(1 << (s - 1));
            const CellIndex j{floor_to_int(g.x() / w), floor_to_int(g.y() / w), floor_to_int(g.z() / w)};
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const long long idx = index_of({s, {j[0] + dx, j[1] + dy, j[2] + dz}});
                        if (idx < 0)
                            continue;
                        const auto pb = placed(std::size_t(idx));
                        if (inside_support(pb.to_local(g)))
                            f(std::size_t(idx), pb);
                    }
        }
    }

private:
    BasisSpec spec_;
    int max_scale_ = 1;
    std::vector<Dof> dofs_;
    std::vector<TensorBasis> bases_;
    std::unordered_map<VoxelKey, std::uint32_t, VoxelKeyHash> index_;
};

/// Compressed-row symmetric matrix storing both triangles.
class SparseMatrix {
public:
    SparseMatrix() = default;

    /// Pattern from sorted unique upper-triangle pairs (i <= j).
    static SparseMatrix from_upper_pattern(std::size_t n, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& upper)
    {
        SparseMatrix m;
        m.n_ = n;
        std::vector<std::size_t> counts(n + 1, 0);
        for (const auto& [i, j] : upper) {
            ++counts[i + 1];
            if (i != j)
                ++counts[j + 1];
        }
        m.row_ptr_.assign(n + 1, 0);
        for (std::size_t r = 0; r < n; ++r)
            m.row_ptr_[r + 1] = m.row_ptr_[r] + counts[r + 1];
        m.cols_.assign(m.row_ptr_.back(), 0);
        std::vector<std::size_t> fill(m.row_ptr_.begin(), m.row_ptr_.end() - 1);
        for (const auto& [i, j] : upper) {
            m.cols_[fill[i]++] = j;
            if (i != j)
                m.cols_[fill[j]++] = i;
        }
        for (std::size_t r = 0; r < n; ++r)
            std::sort(m.cols_.begin() + std::ptrdiff_t(m.row_ptr_[r]), m.cols_.begin() + std::ptrdiff_t(m.row_ptr_[r + 1]));
        m.vals_.assign(m.cols_.size(), 0.0);
        return m;
    }

    std::size_t rows() const { return n_; }
    std::size_t nonzeros() const { return vals_.size(); }
    const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
    const std::vector<std::uint32_t>& cols() const { return cols_; }
    const std::vector<double>& values() const { return vals_; }
    std::vector<double>& values_mut() { return vals_; }

    /// Storage slot of (i, j), or npos.
    std::size_t position(std::size_t i, std::size_t j) const
    {
        auto b = cols_.begin() + std::ptrdiff_t(row_ptr_[i]), e = cols_.begin() + std::ptrdiff_t(row_ptr_[i + 1]);
        auto it = std::lower_bound(b, e, std::uint32_t(j));
        return (it != e && *it == j) ? std::size_t(it - cols_.begin()) : npos;
    }

    double at(std::size_t i, std::size_t j) const
    {
        const auto p = position(i, j);
        return p == npos ? 0.0 : vals_[p];
    }

    void multiply(const std::vector<double>& x, std::vector<double>& y) const
    {
        y.assign(n_, 0.0);
        for (std::size_t r = 0; r < n_; ++r) {
            double s = 0.0;
            for (std::size_t p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p)
                s += vals_[p] * x[cols_[p]];
            y[r] = s;
        }
    }

    std::vector<double> diagonal() const
    {
        std::vector<double> d(n_, 0.0);
        for (std::size_t r = 0; r < n_; ++r)
            d[r] = at(r, r);
        return d;
    }

    Eigen::MatrixXd to_dense() const
    {
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(Eigen::Index(n_), Eigen::Index(n_));
        for (std::size_t r = 0; r < n_; ++r)
            for (std::size_t p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p)
                d(Eigen::Index(r), Eigen::Index(cols_[p])) = vals_[p];
        return d;
    }

    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

private:
    std::size_t n_ = 0;
    std::vector<std::size_t> row_ptr_;
    std::vector<std::uint32_t> cols_;
    std::vector<double> vals_;
};

struct GalerkinSystem {
    DofTable dofs;
    SparseMatrix A;
    std::vector<double> b;
    /// Upper-triangle pairs (k <= l) in dof indices; defines the sparsity pattern.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
};

struct AssemblyOptions {
    int quad_order = 0; ///< 0 selects default_quadrature_order(spec)
    unsigned workers = 1;
};

struct PairIntegrals {
    double grad_grad = 0.0;
    double lap_lap = 0.0;
    double hess_hess = 0.0;
};

/// Integrals of one basis pair over (domain cells) within the intersection of both supports.
inline PairIntegrals integrate_pair(const DofTable& dofs, std::size_t k, std::size_t l, const DomainCells& domain,
                                    const GaussLegendre& gl)
{
    PairIntegrals out;
    const auto [klo, khi] = enlarged_region(dofs[k].key);
    const auto [llo, lhi] = enlarged_region(dofs[l].key);
    CellIndex lo, hi;
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max(klo[a], llo[a]);
        hi[a] = std::min(khi[a], lhi[a]);
        if (hi[a] <= lo[a])
            return out;
    }
    const long long inside = domain.count_in_box(lo, hi);
    if (inside == 0)
        return out;
    const auto pk = dofs.placed(k), pl = dofs.placed(l);
    std::array<std::vector<AxisMoments>, 3> m;
    for (int a = 0; a < 3; ++a) {
        m[a].reserve(std::size_t(hi[a] - lo[a]));
        for (int c = lo[a]; c < hi[a]; ++c)
            m[a].push_back(axis_moments(pk.basis->axis(a), pk.center[a], pk.width, pl.basis->axis(a), pl.center[a],
                                        pl.width, double(c), double(c + 1), gl));
    }
    const long long volume = (long long)(hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
    if (inside == volume) {
        std::array<AxisMoments, 3> total{};
        for (int a = 0; a < 3; ++a)
            for (const auto& mm : m[a])
                detail::accumulate(total[a], mm);
        out.grad_grad = detail::gram_gradient(total[0], total[1], total[2]);
        out.lap_lap = detail::gram_laplacian(total[0], total[1], total[2]);
        out.hess_hess = detail::gram_hessian(total[0], total[1], total[2]);
        return out;
    }
    for (int z = lo[2]; z < hi[2]; ++z)
        for (int y = lo[1]; y < hi[1]; ++y)
            for (int x = lo[0]; x < hi[0]; ++x) {
                if (!domain.contains({x, y, z}))
                    continue;
                const auto& mx = m[0][std::size_t(x - lo[0])];
                const auto& my = m[1][std::size_t(y - lo[1])];
                const auto& mz = m[2][std::size_t(z - lo[2])];
                out.grad_grad += detail::gram_gradient(mx, my, mz);
                out.lap_lap += detail::gram_laplacian(mx, my, mz);
                out.hess_hess += detail::gram_hessian(mx, my, mz);
            }
    return out;
}

namespace detail {

inline void check_domain_normals(const DomainCells& domain)
{
    for (const auto& n : domain.normals()) {
        const double len = n.norm();
        if (len != 0.0 && std::abs(len - 1.0) > kUnitTolerance)
            throw Error(ErrorKind::UnnormalizedNormals, "domain cell normal is not unit length");
    }
}

inline std::vector<std::pair<std::uint32_t, std::uint32_t>> dof_pairs(const SparseVoxelHierarchy& h,
                                                                      const DofTable& dofs)
{
    std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
    for (const auto& [a, b] : neighbor_pairs(h)) {
        auto i = std::uint32_t(dofs.index_of(a)), j = std::uint32_t(dofs.index_of(b));
        out.emplace_back(std::min(i, j), std::max(i, j));
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// sum_p B_k(p) B_l(p) per stored slot (upper and lower mirrored), and sum_p B_k(p) xi(p).
inline void point_sums(const DofTable& dofs, const SparseMatrix& pattern, const PointCloud& cloud, double base_size,
                       std::vector<double>& gram, std::vector<double>& rhs)
{
    gram.assign(pattern.nonzeros(), 0.0);
    rhs.assign(dofs.size(), 0.0);
    std::vector<std::pair<std::size_t, double>> active;
    for (const auto& p : cloud.points()) {
        active.clear();
        const Vec3 g = p.position / base_size;
        dofs.for_each_basis_at(g, [&](std::size_t idx, const PlacedBasis& pb) {
            const double v = pb.eval(g, DerivOrder::value).value;
            if (v != 0.0)
                active.emplace_back(idx, v);
        });
        std::sort(active.begin(), active.end());
        for (std::size_t a = 0; a < active.size(); ++a) {
            rhs[active[a].first] += active[a].second * p.screening;
            for (std::size_t b = a; b < active.size(); ++b) {
                const auto pos = pattern.position(active[a].first, active[b].first);
                if (pos == SparseMatrix::npos)
                    throw Error(ErrorKind::ShapeMismatch, "point couples bases outside the neighbor pattern");
                gram[pos] += active[a].second * active[b].second;
            }
        }
    }
    // mirror upper sums into lower slots
    for (std::size_t r = 0; r < pattern.rows(); ++r)
        for (std::size_t q = pattern.row_ptr()[r]; q < pattern.row_ptr()[r + 1]; ++q) {
            const std::size_t c = pattern.cols()[q];
            if (c < r)
                gram[q] = gram[pattern.position(c, r)];
        }
}

/// integral over domain cells of grad B_k . N.
inline std::vector<double> normal_rhs(const DofTable& dofs, const DomainCells& domain, const GaussLegendre& gl)
{
    std::vector<double> rhs(dofs.size(), 0.0);
    for (std::size_t k = 0; k < dofs.size(); ++k) {
        const auto [lo, hi] = enlarged_region(dofs[k].key);
        if (domain.count_in_box(lo, hi) == 0)
            continue;
        const auto pk = dofs.placed(k);
        std::array<std::vector<std::array<double, 3>>, 3> j;
        for (int a = 0; a < 3; ++a)
            for (int c = lo[a]; c < hi[a]; ++c)
                j[a].push_back(axis_integrals(pk.basis->axis(a), pk.center[a], pk.width, double(c), double(c + 1), gl));
        double sum = 0.0;
        for (int z = lo[2]; z < hi[2]; ++z)
            for (int y = lo[1]; y < hi[1]; ++y)
                for (int x = lo[0]; x < hi[0]; ++x) {
                    const long long idx = domain.index_of({x, y, z});
                    if (idx < 0)
                        continue;
                    const Vec3& n = domain.normal(std::size_t(idx));
                    if (n.isZero(0.0))
                        continue;
                    const auto& jx = j[0][std::size_t(x - lo[0])];
                    const auto& jy = j[1][std::size_t(y - lo[1])];
                    const auto& jz = j[2][std::size_t(z - lo[2])];
                    sum += jx[1] * jy[0] * jz[0] * n.x() + jx[0] * jy[1] * jz[0] * n.y() + jx[0] * jy[0] * jz[1] * n.z();
                }
        rhs[k] = sum;
    }
    return rhs;
}

struct AssemblyParts {
    DofTable dofs;
    SparseMatrix pattern;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    std::vector<PairIntegrals> integrals; // per pair
    std::vector<double> point_gram;      // per stored slot
    std::vector<double> point_rhs;
    std::vector<double> normal_rhs;
};

inline AssemblyParts assemble_parts(const SparseVoxelHierarchy& h, const DomainCells& domain, const BasisSpec& spec,
                                    const PointCloud& cloud, const AssemblyOptions& opt)
{
    if (domain.empty())
        throw Error(ErrorKind::EmptyDomain, "integration domain has no cells");
    check_domain_normals(domain);
    AssemblyParts parts;
    parts.dofs = DofTable(h, spec);
    if (parts.dofs.size() == 0)
        throw Error(ErrorKind::EmptyDomain, "scaffold carries no basis functions");
    const GaussLegendre gl(opt.quad_order > 0 ? opt.quad_order : default_quadrature_order(spec));
    parts.pairs = dof_pairs(h, parts.dofs);
    parts.pattern = SparseMatrix::from_upper_pattern(parts.dofs.size(), parts.pairs);
    parts.integrals.resize(parts.pairs.size());
    parallel_for(parts.pairs.size(), resolve_workers(opt.workers), [&](std::size_t i) {
        parts.integrals[i] = integrate_pair(parts.dofs, parts.pairs[i].first, parts.pairs[i].second, domain, gl);
    });
    point_sums(parts.dofs, parts.pattern, cloud, h.base_size(), parts.point_gram, parts.point_rhs);
    parts.normal_rhs = normal_rhs(parts.dofs, domain, gl);
    return parts;
}

inline void write_pair(SparseMatrix& A, std::size_t k, std::size_t l, double v)
{
    A.values_mut()[A.position(k, l)] = v;
    A.values_mut()[A.position(l, k)] = v;
}

} // namespace detail

/// A = sum over domain cells of (grad.grad + lambda_H lap.lap) + lambda_P sum_p B_k(p) B_l(p);
/// b = sum over cells of grad_vec . N + lambda_P sum_p B_k(p) xi(p).
inline GalerkinSystem assemble_system(const SparseVoxelHierarchy& h, const DomainCells& domain, const BasisSpec& spec,
                                      const SolverWeights& weights, const PointCloud& cloud,
                                      const AssemblyOptions& opt = {})
{
    weights.validate();
    auto parts = detail::assemble_parts(h, domain, spec, cloud, opt);
    GalerkinSystem sys;
    sys.A = std::move(parts.pattern);
    for (std::size_t i = 0; i < parts.pairs.size(); ++i) {
        const auto [k, l] = parts.pairs[i];
        const auto& in = parts.integrals[i];
        const double point = parts.point_gram[sys.A.position(k, l)];
        detail::write_pair(sys.A, k, l, (in.grad_grad + weights.lambda_H * in.lap_lap) + weights.lambda_P * point);
    }
    sys.b.resize(parts.dofs.size());
    for (std::size_t k = 0; k < sys.b.size(); ++k)
        sys.b[k] = parts.normal_rhs[k] + weights.lambda_P * parts.point_rhs[k];
    sys.dofs = std::move(parts.dofs);
    sys.pairs = std::move(parts.pairs);
    return sys;
}

/// Screened-Poisson system: stiffness plus point screening, no biharmonic block.
inline GalerkinSystem assemble_screened_poisson(const SparseVoxelHierarchy& h, const DomainCells& domain,
                                                const BasisSpec& spec, double lambda_P, const PointCloud& cloud,
                                                const AssemblyOptions& opt = {})
{
    auto parts = detail::assemble_parts(h, domain, spec, cloud, opt);
    GalerkinSystem sys;
    sys.A = std::move(parts.pattern);
    for (std::size_t i = 0; i < parts.pairs.size(); ++i) {
        const auto [k, l] = parts.pairs[i];
        const double point = parts.point_gram[sys.A.position(k, l)];
        detail::write_pair(sys.A, k, l, parts.integrals[i].grad_grad + lambda_P * point);
    }
    sys.b.resize(parts.dofs.size());
    for (std::size_t k = 0; k < sys.b.size(); ++k)
        sys.b[k] = parts.normal_rhs[k] + lambda_P * parts.point_rhs[k];
    sys.dofs = std::move(parts.dofs);
    sys.pairs = std::move(parts.pairs);
    return sys;
}

struct SolveResult {
    std::vector<double> coefficients;
    int iterations = 0;
    double residual = 0.0; ///< ||A x - b|| / ||b||, recomputed from the final iterate
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

} // namespace detail

/// Jacobi-preconditioned conjugate gradients. Throws NotConverged with the best iterate.
inline SolveResult pcg(const SparseMatrix& A, const std::vector<double>& b, double tol, int max_iter)
{
    if (!(tol > 0.0))
        throw Error(ErrorKind::InvalidConfig, "tolerance must be positive");
    const std::size_t n = A.rows();
    SolveResult res;
    res.coefficients.assign(n, 0.0);
    const double bnorm = detail::norm(b);
    if (bnorm == 0.0)
        return res;

    std::vector<double> inv_diag = A.diagonal();
    for (auto& d : inv_diag)
        d = d > 0.0 ? 1.0 / d : 1.0;

    auto& x = res.coefficients;
    std::vector<double> r = b, z(n), p(n), q(n);
    for (std::size_t i = 0; i < n; ++i)
        z[i] = inv_diag[i] * r[i];
    p = z;
    double rz = detail::dot(r, z);
    double rel = 1.0;
    std::vector<double> best = x;
    double best_rel = rel;
    int it = 0;
    while (it < max_iter) {
        A.multiply(p, q);
        const double pq = detail::dot(p, q);
        if (!(pq > 0.0))
            break;
        const double step = rz / pq;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += step * p[i];
            r[i] -= step * q[i];
        }
        ++it;
        rel = detail::norm(r) / bnorm;
        if (rel < best_rel) {
            best_rel = rel;
            best = x;
        }
        if (rel <= tol)
            break;
        for (std::size_t i = 0; i < n; ++i)
            z[i] = inv_diag[i] * r[i];
        const double rz_new = detail::dot(r, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i)
            p[i] = z[i] + beta * p[i];
    }
    res.iterations = it;
    A.multiply(x, q);
    for (std::size_t i = 0; i < n; ++i)
        q[i] -= b[i];
    res.residual = detail::norm(q) / bnorm;
    if (rel > tol)
        throw NotConverged(it, best_rel, std::move(best));
    return res;
}

inline SolveResult solve_coefficients(const GalerkinSystem& sys, double tol, int max_iter)
{
    return pcg(sys.A, sys.b, tol, max_iter);
}

/// f(p) = sum_k alpha_k B_k(p), evaluated in world coordinates.
class ImplicitField {
public:
    ImplicitField() = default;

    ImplicitField(DofTable dofs, std::vector<double> coefficients, double base_size)
        : dofs_(std::move(dofs)), coeffs_(std::move(coefficients)), base_size_(base_size)
    {
        if (coeffs_.size() != dofs_.size())
            throw Error(ErrorKind::ShapeMismatch, "coefficient count differs from dof count");
        for (double c : coeffs_)
            if (!std::isfinite(c))
                throw Error(ErrorKind::InvalidConfig, "non-finite coefficient");
    }

    const DofTable& dofs() const { return dofs_; }
    const std::vector<double>& coefficients() const { return coeffs_; }
    double base_size() const { return base_size_; }

    /// Derivatives with respect to grid coordinates (world / base_size).
    FieldSample eval_grid(const Vec3& g, DerivOrder order = DerivOrder::gradient) const
    {
        FieldSample out;
        dofs_.for_each_basis_at(g, [&](std::size_t idx, const PlacedBasis& pb) {
            const double a = coeffs_[idx];
            if (a == 0.0)
                return;
            const auto s = pb.eval(g, order);
            out.value += a * s.value;
            out.gradient += a * s.gradient;
            out.hessian += a * s.hessian;
        });
        return out;
    }

    /// Derivatives with respect to world coordinates.
    FieldSample eval(const Vec3& p, DerivOrder order = DerivOrder::gradient) const
    {
        FieldSample s = eval_grid(p / base_size_, order);
        s.gradient /= base_size_;
        s.hessian /= base_size_ * base_size_;
        return s;
    }

    double value(const Vec3& p) const { return eval(p, DerivOrder::value).value; }

    ImplicitField negated() const
    {
        auto c = coeffs_;
        for (auto& v : c)
            v = -v;
        return ImplicitField(dofs_, std::move(c), base_size_);
    }

private:
    DofTable dofs_;
    std::vector<double> coeffs_;
    double base_size_ = 1.0;
};

struct EnergyTerms {
    double normal = 0.0;    ///< integral of |grad f - N|^2
    double hessian = 0.0;   ///< integral of |H(f)|_F^2
    double laplacian = 0.0; ///< integral of (lap f)^2, the form used by the linear system
    double point = 0.0;     ///< sum_p (f(p) - xi(p))^2
    double total = 0.0;     ///< normal + lambda_H * hessian + lambda_P * point
};

/// Direct per-cell tensor Gauss-Legendre quadrature of the energy (grid units, matching the system).
inline EnergyTerms energy(const ImplicitField& field, const DomainCells& domain, const PointCloud& cloud,
                          const SolverWeights& weights, int quad_order = 0, unsigned workers = 1)
{
    const auto& dofs = field.dofs();
    const auto& alpha = field.coefficients();
    const GaussLegendre gl(quad_order > 0 ? quad_order : default_quadrature_order(dofs.spec()));
    const int Q = gl.order();
    std::vector<std::array<double, 3>> per_cell(domain.size());

    parallel_for(domain.size(), resolve_workers(workers), [&](std::size_t ci) {
        const CellIndex c = domain.cell(ci);
        // f, fx, fy, fz, fxx, fyy, fzz, fxy, fxz, fyz at each node
        std::vector<std::array<double, 10>> acc(std::size_t(Q * Q * Q), std::array<double, 10>{});
        const auto nq = static_cast<std::size_t>(Q);
        std::vector<std::array<double, 3>> tx(nq), ty(nq), tz(nq);
        const Vec3 mid(c[0] + 0.5, c[1] + 0.5, c[2] + 0.5);
        for (int s = 1; s <= dofs.max_scale(); ++s) {
            const int w = 1 << (s - 1);
            const CellIndex j{floor_to_int(mid.x() / w), floor_to_int(mid.y() / w), floor_to_int(mid.z() / w)};
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const VoxelKey key{s, {j[0] + dx, j[1] + dy, j[2] + dz}};
                        const long long idx = dofs.index_of(key);
                        if (idx < 0 || alpha[std::size_t(idx)] == 0.0)
                            continue;
                        const auto [lo, hi] = enlarged_region(key);
                        bool covers = true;
                        for (int a = 0; a < 3; ++a)
                            covers = covers && lo[a] <= c[a] && c[a] + 1 <= hi[a];
                        if (!covers)
                            continue;
                        const auto pb = dofs.placed(std::size_t(idx));
                        const double inv = 1.0 / pb.width;
                        const double sc[3] = {1.0, inv, inv * inv};
                        for (int q = 0; q < Q; ++q) {
                            const double u = 0.5 * (1.0 + gl.nodes()[q]);
                            auto fill = [&](std::array<double, 3>& t, int a) {
                                const auto v = pb.basis->axis(a).eval((c[a] + u - pb.center[a]) * inv);
                                t = {v[0] * sc[0], v[1] * sc[1], v[2] * sc[2]};
                            };
                            fill(tx[std::size_t(q)], 0);
                            fill(ty[std::size_t(q)], 1);
                            fill(tz[std::size_t(q)], 2);
                        }
                        const double a = alpha[std::size_t(idx)];
                        std::size_t n = 0;
                        for (int qz = 0; qz < Q; ++qz)
                            for (int qy = 0; qy < Q; ++qy) {
                                const auto& Y = ty[std::size_t(qy)];
                                const auto& Z = tz[std::size_t(qz)];
                                const double y0z0 = a * Y[0] * Z[0], y1z0 = a * Y[1] * Z[0], y0z1 = a * Y[0] * Z[1];
                                const double y2z0 = a * Y[2] * Z[0], y0z2 = a * Y[0] * Z[2], y1z1 = a * Y[1] * Z[1];
                                for (int qx = 0; qx < Q; ++qx, ++n) {
                                    const auto& X = tx[std::size_t(qx)];
                                    auto& r = acc[n];
                                    r[0] += X[0] * y0z0;
                                    r[1] += X[1] * y0z0;
                                    r[2] += X[0] * y1z0;
                                    r[3] += X[0] * y0z1;
                                    r[4] += X[2] * y0z0;
                                    r[5] += X[0] * y2z0;
                                    r[6] += X[0] * y0z2;
                                    r[7] += X[1] * y1z0;
                                    r[8] += X[1] * y0z1;
                                    r[9] += X[0] * y1z1;
                                }
                            }
                    }
        }
        const Vec3& N = domain.normal(ci);
        double en = 0.0, eh = 0.0, el = 0.0;
        std::size_t n = 0;
        for (int qz = 0; qz < Q; ++qz)
            for (int qy = 0; qy < Q; ++qy)
                for (int qx = 0; qx < Q; ++qx, ++n) {
                    const double w = 0.125 * gl.weights()[qx] * gl.weights()[qy] * gl.weights()[qz];
                    const auto& r = acc[n];
                    const double gx = r[1] - N.x(), gy = r[2] - N.y(), gz = r[3] - N.z();
                    en += w * (gx * gx + gy * gy + gz * gz);
                    eh += w * (r[4] * r[4] + r[5] * r[5] + r[6] * r[6] + 2.0 * (r[7] * r[7] + r[8] * r[8] + r[9] * r[9]));
                    const double lap = r[4] + r[5] + r[6];
                    el += w * lap * lap;
                }
        per_cell[ci] = {en, eh, el};
    });

    EnergyTerms e;
    for (const auto& v : per_cell) {
        e.normal += v[0];
        e.hessian += v[1];
        e.laplacian += v[2];
    }
    for (const auto& p : cloud.points()) {
        const double d = field.eval(p.position, DerivOrder::value).value - p.screening;
        e.point += d * d;
    }
    e.total = e.normal + weights.lambda_H * e.hessian + weights.lambda_P * e.point;
    return e;
}

/// Coordinate-format dump: "k l value" per stored entry, and one rhs value per line.
inline void dump_system(const GalerkinSystem& sys, const std::filesystem::path& matrix_path,
                        const std::filesystem::path& rhs_path)
{
    std::string m = fmt::format("{} {} {}\n", sys.A.rows(), sys.A.rows(), sys.A.nonzeros());
    for (std::size_t r = 0; r < sys.A.rows(); ++r)
        for (std::size_t p = sys.A.row_ptr()[r]; p < sys.A.row_ptr()[r + 1]; ++p)
            m += fmt::format("{} {} {:.17g}\n", r, sys.A.cols()[p], sys.A.values()[p]);
    std::string v;
    for (double x : sys.b)
        v += fmt::format("{:.17g}\n", x);
    std::ofstream fm(matrix_path, std::ios::binary), fv(rhs_path, std::ios::binary);
    if (!fm || !fm.write(m.data(), std::streamsize(m.size())) || !fv || !fv.write(v.data(), std::streamsize(v.size())))
        throw Error(ErrorKind::IoError, "cannot write system dump");
}

} // namespace svrecon

#endif // SVRECON_SOLVER_HPP
