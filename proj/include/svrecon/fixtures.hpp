#ifndef SVRECON_FIXTURES_HPP
#define SVRECON_FIXTURES_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "svrecon/geometry.hpp"

namespace svrecon::fixtures {

/// n points on a sphere (Fibonacci lattice) with exact outward normals.
inline PointCloud sphere_samples(std::size_t n, const Vec3& center, double radius)
{
    std::vector<Vec3> pos, nrm;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (double(i) + 0.5) / double(n);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * double(i);
        const Vec3 d(r * std::cos(phi), r * std::sin(phi), z);
        nrm.push_back(d);
        pos.push_back(center + radius * d);
    }
    return PointCloud::from_oriented(pos, nrm);
}

/// n uniform random points on the square [lo, hi]^2 at height z, normals +z.
inline PointCloud plane_samples(std::size_t n, double z, double lo, double hi, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<Vec3> pos, nrm;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = u(rng), y = u(rng);
        pos.emplace_back(x, y, z);
        nrm.push_back(Vec3::UnitZ());
    }
    return PointCloud::from_oriented(pos, nrm);
}

/// Subdivided icosahedron projected onto the sphere; counter-clockwise seen from outside.
inline TriangleMesh icosphere(const Vec3& center, double radius, int subdivisions)
{
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                           {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto& p : v)
        p.normalize();
    std::vector<Triangle> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                               {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},  {3, 2, 6},  {3, 6, 8},
                               {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},  {9, 8, 1}};
    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
        auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
            auto key = std::minmax(a, b);
            auto it = mid.find(key);
            if (it != mid.end())
                return it->second;
            v.push_back((v[a] + v[b]).normalized());
            return mid[key] = std::uint32_t(v.size() - 1);
        };
        std::vector<Triangle> next;
        for (const auto& tri : f) {
            const auto a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
            next.push_back({tri[0], a, c});
            next.push_back({tri[1], b, a});
            next.push_back({tri[2], c, b});
            next.push_back({a, b, c});
        }
        f = std::move(next);
    }
    TriangleMesh m;
    for (const auto& p : v) {
        m.vertices.push_back(center + radius * p);
        m.vertex_normals.push_back(p);
    }
    m.triangles = std::move(f);
    return m;
}

/// Axis-aligned closed box, outward winding.
inline TriangleMesh box_mesh(const Vec3& lo, const Vec3& hi)
{
    TriangleMesh m;
    for (int i = 0; i < 8; ++i)
        m.vertices.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
    m.triangles = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                   {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
    return m;
}

} // namespace svrecon::fixtures

#endif // SVRECON_FIXTURES_HPP
