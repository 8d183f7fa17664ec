#ifndef SVRECON_VOXEL_HPP
#define SVRECON_VOXEL_HPP

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "svrecon/basis.hpp"
#include "svrecon/error.hpp"
#include "svrecon/geometry.hpp"

namespace svrecon {

using CellIndex = std::array<int, 3>;

/// Voxel at scale s (1 = finest) with integer grid coordinates at that scale.
struct VoxelKey {
    int scale = 1;
    CellIndex ijk{0, 0, 0};

    auto operator<=>(const VoxelKey&) const = default;

    VoxelKey parent() const
    {
        auto half = [](int v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); };
        return {scale + 1, {half(ijk[0]), half(ijk[1]), half(ijk[2])}};
    }

    /// Edge length in finest-cell units.
    int width() const { return 1 << (scale - 1); }
};

struct VoxelKeyHash {
    std::size_t operator()(const VoxelKey& k) const noexcept
    {
        std::uint64_t h = std::uint64_t(k.scale) * 0x9E3779B97F4A7C15ull;
        for (int v : k.ijk)
            h = (h ^ std::uint64_t(std::uint32_t(v))) * 0x100000001B3ull + (h >> 29);
        return std::size_t(h);
    }
};

struct CellIndexHash {
    std::size_t operator()(const CellIndex& c) const noexcept { return VoxelKeyHash{}(VoxelKey{0, c}); }
};

inline int floor_to_int(double v) { return static_cast<int>(std::floor(v)); }

struct VoxelRecord {
    VoxelKey key;
    std::size_t point_count = 0;
    Vec3 centroid = Vec3::Zero(); ///< geometric center, world units
    Vec3 accum_normal = Vec3::Zero();
    std::vector<std::uint32_t> points; ///< indices into the cloud used to build the hierarchy
    std::optional<BasisParams> basis_params;
    std::optional<Eigen::VectorXd> feature;
};

/// Multi-scale sparse voxel scaffold anchored at the world origin.
/// Scale s has edge 2^(s-1) * base_size; scales above the adaptive depth
/// only serve as containment parents and carry no basis functions.
class SparseVoxelHierarchy {
public:
    SparseVoxelHierarchy() = default;

    SparseVoxelHierarchy(double base_size, int num_scales, int adaptive_depth)
        : base_size_(base_size), num_scales_(num_scales), adaptive_depth_(adaptive_depth),
          voxels_(std::size_t(std::max(num_scales, 0))), index_(std::size_t(std::max(num_scales, 0)))
    {
        if (!(base_size > 0.0) || !std::isfinite(base_size))
            throw Error(ErrorKind::InvalidConfig, "base voxel size must be positive");
        if (num_scales < 1)
            throw Error(ErrorKind::InvalidConfig, "need at least one scale");
        if (adaptive_depth < 1 || adaptive_depth > num_scales)
            throw Error(ErrorKind::InvalidConfig, "adaptive depth must lie in [1, num_scales]");
    }

    double base_size() const { return base_size_; }
    int num_scales() const { return num_scales_; }
    int adaptive_depth() const { return adaptive_depth_; }
    bool carries_basis(int scale) const { return scale >= 1 && scale <= adaptive_depth_; }

    double edge(int scale) const { return std::ldexp(base_size_, scale - 1); }

    /// World position to finest-cell (grid) units.
    Vec3 to_grid(const Vec3& world) const { return world / base_size_; }
    Vec3 to_world(const Vec3& grid) const { return grid * base_size_; }

    VoxelKey key_of(const Vec3& world, int scale) const
    {
        const Vec3 g = world / edge(scale);
        return {scale, {floor_to_int(g.x()), floor_to_int(g.y()), floor_to_int(g.z())}};
    }

    Vec3 centroid(const VoxelKey& key) const
    {
        const double e = edge(key.scale);
        return Vec3((key.ijk[0] + 0.5) * e, (key.ijk[1] + 0.5) * e, (key.ijk[2] + 0.5) * e);
    }

    /// Center in grid units.
    Vec3 grid_center(const VoxelKey& key) const
    {
        const double w = key.width();
        return Vec3((key.ijk[0] + 0.5) * w, (key.ijk[1] + 0.5) * w, (key.ijk[2] + 0.5) * w);
    }

    const std::vector<VoxelRecord>& voxels(int scale) const { return voxels_.at(std::size_t(scale - 1)); }
    std::vector<VoxelRecord>& voxels_mut(int scale) { return voxels_.at(std::size_t(scale - 1)); }

    const VoxelRecord* find(const VoxelKey& key) const
    {
        if (key.scale < 1 || key.scale > num_scales_)
            return nullptr;
        const auto& idx = index_[std::size_t(key.scale - 1)];
        auto it = idx.find(key);
        return it == idx.end() ? nullptr : &voxels_[std::size_t(key.scale - 1)][it->second];
    }

    VoxelRecord* find_mut(const VoxelKey& key)
    {
        return const_cast<VoxelRecord*>(std::as_const(*this).find(key));
    }

    bool contains(const VoxelKey& key) const { return find(key) != nullptr; }

    std::size_t size() const
    {
        std::size_t n = 0;
        for (const auto& v : voxels_)
            n += v.size();
        return n;
    }

    bool empty() const { return size() == 0; }

    /// Inserts a voxel and all its ancestors (zero point count when new).
    VoxelRecord& insert(const VoxelKey& key)
    {
        if (key.scale < 1 || key.scale > num_scales_)
            throw Error(ErrorKind::InvalidConfig, "voxel scale outside [1, S]");
        VoxelKey k = key;
        while (k.scale <= num_scales_) {
            auto& idx = index_[std::size_t(k.scale - 1)];
            auto& vec = voxels_[std::size_t(k.scale - 1)];
            auto it = idx.find(k);
            if (it == idx.end()) {
                VoxelRecord rec;
                rec.key = k;
                rec.centroid = centroid(k);
                idx.emplace(k, vec.size());
                vec.push_back(std::move(rec));
            }
            k = k.parent();
        }
        return *find_mut(key);
    }

    /// Sorts voxels by key within each scale; called after construction.
    void finalize()
    {
        for (std::size_t s = 0; s < voxels_.size(); ++s) {
            auto& vec = voxels_[s];
            std::sort(vec.begin(), vec.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
            index_[s].clear();
            for (std::size_t i = 0; i < vec.size(); ++i)
                index_[s].emplace(vec[i].key, i);
        }
    }

    /// Voxels that host a basis function, in key order (scale-major).
    std::vector<VoxelKey> basis_voxels() const
    {
        std::vector<VoxelKey> out;
        for (int s = 1; s <= adaptive_depth_; ++s)
            for (const auto& v : voxels(s))
                out.push_back(v.key);
        return out;
    }

    /// Text dump, one "s i j k point_count" line per voxel.
    std::string dump() const
    {
        std::string out;
        for (int s = 1; s <= num_scales_; ++s)
            for (const auto& v : voxels(s))
                out += std::to_string(s) + ' ' + std::to_string(v.key.ijk[0]) + ' ' + std::to_string(v.key.ijk[1])
                    + ' ' + std::to_string(v.key.ijk[2]) + ' ' + std::to_string(v.point_count) + '\n';
        return out;
    }

private:
    double base_size_ = 0.02;
    int num_scales_ = 1;
    int adaptive_depth_ = 1;
    std::vector<std::vector<VoxelRecord>> voxels_;
    std::vector<std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash>> index_;
};

/// Active voxel at scale s iff it contains at least one point.
inline SparseVoxelHierarchy build_hierarchy(const PointCloud& cloud, double base_size, int num_scales,
                                            int adaptive_depth)
{
    SparseVoxelHierarchy h(base_size, num_scales, adaptive_depth);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud[i];
        for (int s = 1; s <= num_scales; ++s) {
            auto& rec = h.insert(h.key_of(p.position, s));
            ++rec.point_count;
            rec.points.push_back(std::uint32_t(i));
            if (p.normal)
                rec.accum_normal += *p.normal;
        }
    }
    h.finalize();
    return h;
}

/// Finest-cell decomposition of the integration domain with per-cell normals and points.
class DomainCells {
public:
    DomainCells() = default;

    std::size_t size() const { return cells_.size(); }
    bool empty() const { return cells_.empty(); }
    const std::vector<CellIndex>& cells() const { return cells_; }
    const CellIndex& cell(std::size_t i) const { return cells_[i]; }

    const std::vector<Vec3>& normals() const { return normals_; }
    std::vector<Vec3>& normals_mut() { return normals_; }
    const Vec3& normal(std::size_t i) const { return normals_[i]; }

    /// Index of a cell, or -1 when the cell is outside the domain.
    long long index_of(const CellIndex& c) const
    {
        if (!in_box(c))
            return -1;
        return lookup_[linear(c)];
    }

    bool contains(const CellIndex& c) const { return index_of(c) >= 0; }

    /// Number of domain cells in the half-open box [lo, hi).
    long long count_in_box(const CellIndex& lo, const CellIndex& hi) const
    {
        CellIndex a, b;
        for (int d = 0; d < 3; ++d) {
            a[d] = std::clamp(lo[d], lo_[d], hi_[d]) - lo_[d];
            b[d] = std::clamp(hi[d], lo_[d], hi_[d]) - lo_[d];
            if (b[d] <= a[d])
                return 0;
        }
        auto S = [&](int x, int y, int z) { return prefix_[(std::size_t(z) * (dims_[1] + 1) + y) * (dims_[0] + 1) + x]; };
        return S(b[0], b[1], b[2]) - S(a[0], b[1], b[2]) - S(b[0], a[1], b[2]) - S(b[0], b[1], a[2])
            + S(a[0], a[1], b[2]) + S(a[0], b[1], a[2]) + S(b[0], a[1], a[2]) - S(a[0], a[1], a[2]);
    }

    const CellIndex& box_lo() const { return lo_; }
    const CellIndex& box_hi() const { return hi_; }

    /// Points (cloud indices) whose finest cell is cell i.
    std::pair<const std::uint32_t*, const std::uint32_t*> points_in(std::size_t i) const
    {
        if (point_offsets_.empty())
            return {nullptr, nullptr};
        return {point_ids_.data() + point_offsets_[i], point_ids_.data() + point_offsets_[i + 1]};
    }

    /// Builds from an explicit (possibly unsorted, duplicated) cell list.
    static DomainCells from_cells(std::vector<CellIndex> cells)
    {
        DomainCells d;
        std::sort(cells.begin(), cells.end());
        cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
        d.cells_ = std::move(cells);
        d.normals_.assign(d.cells_.size(), Vec3::Zero());
        if (d.cells_.empty())
            return d;
        d.lo_ = d.hi_ = d.cells_.front();
        for (const auto& c : d.cells_)
            for (int k = 0; k < 3; ++k) {
                d.lo_[k] = std::min(d.lo_[k], c[k]);
                d.hi_[k] = std::max(d.hi_[k], c[k] + 1);
            }
        d.build_tables();
        return d;
    }

    /// Assigns points to their finest cells (points outside the domain are ignored).
    void attach_points(const PointCloud& cloud, double base_size)
    {
        std::vector<std::uint32_t> counts(cells_.size() + 1, 0);
        std::vector<long long> owner(cloud.size(), -1);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const Vec3 g = cloud[i].position / base_size;
            const long long idx = index_of({floor_to_int(g.x()), floor_to_int(g.y()), floor_to_int(g.z())});
            owner[i] = idx;
            if (idx >= 0)
                ++counts[std::size_t(idx) + 1];
        }
        point_offsets_.assign(cells_.size() + 1, 0);
        for (std::size_t c = 0; c < cells_.size(); ++c)
            point_offsets_[c + 1] = point_offsets_[c] + counts[c + 1];
        point_ids_.assign(point_offsets_.back(), 0);
        std::vector<std::uint32_t> fill(point_offsets_.begin(), point_offsets_.end() - 1);
        for (std::size_t i = 0; i < cloud.size(); ++i)
            if (owner[i] >= 0)
                point_ids_[fill[std::size_t(owner[i])]++] = std::uint32_t(i);
    }

private:
    bool in_box(const CellIndex& c) const
    {
        for (int k = 0; k < 3; ++k)
            if (c[k] < lo_[k] || c[k] >= hi_[k])
                return false;
        return true;
    }

    std::size_t linear(const CellIndex& c) const
    {
        return (std::size_t(c[2] - lo_[2]) * dims_[1] + std::size_t(c[1] - lo_[1])) * dims_[0]
            + std::size_t(c[0] - lo_[0]);
    }

    void build_tables()
    {
        for (int k = 0; k < 3; ++k)
            dims_[k] = std::size_t(hi_[k] - lo_[k]);
        lookup_.assign(dims_[0] * dims_[1] * dims_[2], -1);
        for (std::size_t i = 0; i < cells_.size(); ++i)
            lookup_[linear(cells_[i])] = static_cast<long long>(i);
        const std::size_t nx = dims_[0] + 1, ny = dims_[1] + 1, nz = dims_[2] + 1;
        prefix_.assign(nx * ny * nz, 0);
        for (std::size_t z = 1; z < nz; ++z)
            for (std::size_t y = 1; y < ny; ++y)
                for (std::size_t x = 1; x < nx; ++x) {
                    const long long here = lookup_[((z - 1) * dims_[1] + (y - 1)) * dims_[0] + (x - 1)] >= 0 ? 1 : 0;
                    auto at = [&](std::size_t a, std::size_t b, std::size_t c) -> long long& {
                        return prefix_[(c * ny + b) * nx + a];
                    };
                    at(x, y, z) = here + at(x - 1, y, z) + at(x, y - 1, z) + at(x, y, z - 1) - at(x - 1, y - 1, z)
                        - at(x - 1, y, z - 1) - at(x, y - 1, z - 1) + at(x - 1, y - 1, z - 1);
                }
    }

    std::vector<CellIndex> cells_;
    std::vector<Vec3> normals_;
    CellIndex lo_{0, 0, 0}, hi_{0, 0, 0};
    std::array<std::size_t, 3> dims_{0, 0, 0};
    std::vector<long long> lookup_;
    std::vector<long long> prefix_;
    std::vector<std::uint32_t> point_offsets_;
    std::vector<std::uint32_t> point_ids_;
};

/// Finest-cell box [lo, hi) covered by the 3x-enlarged region of a voxel (= its basis support).
inline std::pair<CellIndex, CellIndex> enlarged_region(const VoxelKey& key)
{
    const int w = key.width();
    CellIndex lo, hi;
    for (int d = 0; d < 3; ++d) {
        lo[d] = (key.ijk[d] - 1) * w;
        hi[d] = (key.ijk[d] + 2) * w;
    }
    return {lo, hi};
}

/// Union of the enlarged regions of all active voxels at scales <= max_scale.
inline DomainCells rasterize_domain(const SparseVoxelHierarchy& h, int max_scale)
{
    if (h.empty())
        throw Error(ErrorKind::EmptyDomain, "hierarchy has no voxels");
    max_scale = std::min(max_scale, h.num_scales());
    std::vector<CellIndex> cells;
    for (int s = 1; s <= max_scale; ++s)
        for (const auto& v : h.voxels(s)) {
            const auto [lo, hi] = enlarged_region(v.key);
            for (int z = lo[2]; z < hi[2]; ++z)
                for (int y = lo[1]; y < hi[1]; ++y)
                    for (int x = lo[0]; x < hi[0]; ++x)
                        cells.push_back({x, y, z});
        }
    return DomainCells::from_cells(std::move(cells));
}

inline DomainCells rasterize_domain(const SparseVoxelHierarchy& h) { return rasterize_domain(h, h.num_scales()); }

/// True when two voxels' basis supports overlap with positive volume.
inline bool supports_intersect(const VoxelKey& a, const VoxelKey& b)
{
    const auto [alo, ahi] = enlarged_region(a);
    const auto [blo, bhi] = enlarged_region(b);
    for (int d = 0; d < 3; ++d)
        if (!(alo[d] < bhi[d] && blo[d] < ahi[d]))
            return false;
    return true;
}

/// All unordered pairs (first <= second, self-pairs included) of basis-carrying voxels
/// whose supports intersect, sorted.
inline std::vector<std::pair<VoxelKey, VoxelKey>> neighbor_pairs(const SparseVoxelHierarchy& h)
{
    std::vector<std::pair<VoxelKey, VoxelKey>> out;
    for (int s = 1; s <= h.adaptive_depth(); ++s)
        for (const auto& v : h.voxels(s)) {
            const auto [lo, hi] = enlarged_region(v.key);
            for (int t = 1; t <= h.adaptive_depth(); ++t) {
                const int w = 1 << (t - 1);
                // candidate j: (j-1)w < hi and lo < (j+2)w
                CellIndex jlo, jhi;
                for (int d = 0; d < 3; ++d) {
                    jlo[d] = static_cast<int>(std::floor(double(lo[d]) / w)) - 2;
                    jhi[d] = static_cast<int>(std::ceil(double(hi[d]) / w)) + 1;
                }
                for (int z = jlo[2]; z <= jhi[2]; ++z)
                    for (int y = jlo[1]; y <= jhi[1]; ++y)
                        for (int x = jlo[0]; x <= jhi[0]; ++x) {
                            const VoxelKey other{t, {x, y, z}};
                            if (other < v.key || !h.contains(other))
                                continue;
                            if (supports_intersect(v.key, other))
                                out.emplace_back(v.key, other);
                        }
            }
        }
    std::sort(out.begin(), out.end());
    return out;
}

/// Per-scale sets (sorted) of voxel keys containing at least one surface sample.
inline std::vector<std::vector<VoxelKey>> ground_truth_occupancy(const PointCloud& samples, double base_size,
                                                                 int num_scales)
{
    if (samples.empty())
        throw Error(ErrorKind::EmptyCloud, "no surface samples");
    SparseVoxelHierarchy h(base_size, num_scales, num_scales);
    std::vector<std::vector<VoxelKey>> out(static_cast<std::size_t>(num_scales));
    for (const auto& p : samples.points())
        for (int s = 1; s <= num_scales; ++s)
            out[std::size_t(s - 1)].push_back(h.key_of(p.position, s));
    for (auto& v : out) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return out;
}

} // namespace svrecon

#endif // SVRECON_VOXEL_HPP
