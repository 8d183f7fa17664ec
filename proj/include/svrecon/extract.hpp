#ifndef SVRECON_EXTRACT_HPP
#define SVRECON_EXTRACT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <unordered_map>
#include <vector>

#include "svrecon/error.hpp"
#include "svrecon/geometry.hpp"
#include "svrecon/mc_tables.hpp"
#include "svrecon/solver.hpp"
#include "svrecon/spatial_index.hpp"
#include "svrecon/voxel.hpp"

namespace svrecon {

namespace detail {

/// Corner values cached over the domain's bounding box of grid points.
class CornerCache {
public:
    CornerCache(const DomainCells& domain)
    {
        CellIndex lo = domain.cell(0), hi = domain.cell(0);
        for (const auto& c : domain.cells())
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], c[a]);
                hi[a] = std::max(hi[a], c[a] + 1);
            }
        lo_ = lo;
        for (int a = 0; a < 3; ++a)
            n_[a] = std::size_t(hi[a] - lo[a] + 1);
        values_.assign(n_[0] * n_[1] * n_[2], std::numeric_limits<double>::quiet_NaN());
    }

    std::uint64_t id(const CellIndex& g) const
    {
        return (std::uint64_t(g[2] - lo_[2]) * n_[1] + std::uint64_t(g[1] - lo_[1])) * n_[0]
             + std::uint64_t(g[0] - lo_[0]);
    }

    template <class F>
    double get(const CellIndex& g, F& f)
    {
        double& v = values_[id(g)];
        if (std::isnan(v))
            v = f(Vec3(g[0], g[1], g[2]));
        return v;
    }

private:
    CellIndex lo_{};
    std::array<std::size_t, 3> n_{};
    std::vector<double> values_;
};

} // namespace detail

/// Marching cubes over every cell of `domain`. `grid_value(g)` returns the field at grid point g
/// (grid units); output vertices are in world units (grid * base_size).
/// A corner is inside when its value is below iso. Triangles wind counter-clockwise seen from outside.
template <class GridField>
TriangleMesh extract_mesh_grid(GridField&& grid_value, const DomainCells& domain, double base_size, double iso = 0.0)
{
    if (domain.empty())
        throw Error(ErrorKind::EmptyDomain, "extraction domain has no cells");
    detail::CornerCache cache(domain);
    std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
    TriangleMesh mesh;

    for (const auto& c : domain.cells()) {
        std::array<double, 8> v;
        std::array<CellIndex, 8> g;
        int index = 0;
        for (int k = 0; k < 8; ++k) {
            g[k] = {c[0] + mc::kCorner[k][0], c[1] + mc::kCorner[k][1], c[2] + mc::kCorner[k][2]};
            v[k] = cache.get(g[k], grid_value);
            if (v[k] < iso)
                index |= 1 << k;
        }
        if (index == 0 || index == 255)
            continue;
        const auto* row = mc::kTriangles[index];
        for (int t = 0; row[t] != -1; t += 3) {
            Triangle tri;
            for (int j = 0; j < 3; ++j) {
                const int e = row[t + j];
                int a = mc::kEdge[e][0], b = mc::kEdge[e][1];
                if (g[b] < g[a])
                    std::swap(a, b);
                int axis = 0;
                while (g[a][axis] == g[b][axis])
                    ++axis;
                const std::uint64_t key = cache.id(g[a]) * 3 + std::uint64_t(axis);
                auto [it, fresh] = edge_vertex.emplace(key, std::uint32_t(mesh.vertices.size()));
                if (fresh) {
                    double s = (iso - v[a]) / (v[b] - v[a]);
                    if (!(s > 1e-9)) // keep vertices off cell corners so welding below is exact
                        s = 0.0;
                    else if (!(s < 1.0 - 1e-9))
                        s = 1.0;
                    Vec3 p(g[a][0], g[a][1], g[a][2]);
                    p[axis] = s == 1.0 ? double(g[b][axis]) : p[axis] + s;
                    mesh.vertices.push_back(p * base_size);
                }
                tri[std::size_t(j)] = it->second;
            }
            // table winding is clockwise from outside for this corner convention
            mesh.triangles.push_back({tri[0], tri[2], tri[1]});
        }
    }
    if (mesh.triangles.empty())
        throw Error(ErrorKind::NoCrossing, "level set does not cross the domain");

    // weld vertices that landed on the same cell corner, drop collapsed triangles
    std::map<std::array<double, 3>, std::uint32_t> by_pos;
    std::vector<std::uint32_t> remap(mesh.vertices.size());
    std::vector<Vec3> verts;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const auto& p = mesh.vertices[i];
        auto [it, fresh] = by_pos.emplace(std::array<double, 3>{p.x(), p.y(), p.z()}, std::uint32_t(verts.size()));
        if (fresh)
            verts.push_back(p);
        remap[i] = it->second;
    }
    std::vector<Triangle> tris;
    tris.reserve(mesh.triangles.size());
    for (auto t : mesh.triangles) {
        for (auto& i : t)
            i = remap[i];
        if (t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
            tris.push_back(t);
    }
    mesh.vertices = std::move(verts);
    mesh.triangles = std::move(tris);
    return mesh;
}

/// Same as extract_mesh_grid with a field given in world coordinates.
template <class WorldField>
TriangleMesh extract_mesh_world(WorldField&& world_value, const DomainCells& domain, double base_size,
                                double iso = 0.0)
{
    return extract_mesh_grid([&](const Vec3& g) { return world_value(g * base_size); }, domain, base_size, iso);
}

/// Zero level set (or `iso`) of the implicit field; vertex normals from the field gradient.
inline TriangleMesh extract_mesh(const ImplicitField& field, const DomainCells& domain, double iso = 0.0)
{
    auto mesh = extract_mesh_grid([&](const Vec3& g) { return field.eval_grid(g, DerivOrder::value).value; },
                                  domain, field.base_size(), iso);
    mesh.vertex_normals.reserve(mesh.vertices.size());
    for (const auto& p : mesh.vertices) {
        const Vec3 n = field.eval_grid(p / field.base_size(), DerivOrder::gradient).gradient;
        mesh.vertex_normals.push_back(n.norm() > 0.0 ? Vec3(n.normalized()) : Vec3(Vec3::UnitZ()));
    }
    return mesh;
}

/// Deletes vertices farther than tau from every input point, with their incident triangles.
inline TriangleMesh remove_floaters(const TriangleMesh& mesh, const PointCloud& cloud, double tau)
{
    if (!(tau > 0.0))
        throw Error(ErrorKind::InvalidConfig, "floater threshold must be positive");
    if (cloud.empty())
        throw Error(ErrorKind::EmptyCloud, "floater removal needs input points");
    const PointIndex index(cloud.positions());
    std::vector<std::uint32_t> remap(mesh.vertices.size(), std::numeric_limits<std::uint32_t>::max());
    TriangleMesh out;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        if (index.nearest(mesh.vertices[i]).second > tau)
            continue;
        remap[i] = std::uint32_t(out.vertices.size());
        out.vertices.push_back(mesh.vertices[i]);
        if (mesh.has_vertex_normals())
            out.vertex_normals.push_back(mesh.vertex_normals[i]);
    }
    constexpr auto gone = std::numeric_limits<std::uint32_t>::max();
    for (const auto& t : mesh.triangles) {
        if (remap[t[0]] == gone || remap[t[1]] == gone || remap[t[2]] == gone)
            continue;
        out.triangles.push_back({remap[t[0]], remap[t[1]], remap[t[2]]});
    }
    return out;
}

} // namespace svrecon

#endif // SVRECON_EXTRACT_HPP
