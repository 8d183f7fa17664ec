#ifndef SVRECON_NORMALS_HPP
#define SVRECON_NORMALS_HPP

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <tuple>
#include <vector>

#include "svrecon/error.hpp"
#include "svrecon/geometry.hpp"
#include "svrecon/spatial_index.hpp"
#include "svrecon/voxel.hpp"

namespace svrecon {

struct NormalEstimate {
    Vec3 normal = Vec3::UnitZ();
    double confidence = 0.0; ///< 1 - 3 * lambda_min / trace, clamped to [0, 1]
};

namespace detail {

inline NormalEstimate pca_normal(const std::vector<Vec3>& pts, const std::vector<std::uint32_t>& nbrs)
{
    Vec3 mean = Vec3::Zero();
    for (auto j : nbrs)
        mean += pts[j];
    mean /= double(nbrs.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (auto j : nbrs) {
        const Vec3 d = pts[j] - mean;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    // eigenvalues ascending
    NormalEstimate e;
    e.normal = eig.eigenvectors().col(0).normalized();
    const double trace = eig.eigenvalues().sum();
    e.confidence = trace > 0.0 ? std::clamp(1.0 - 3.0 * eig.eigenvalues()(0) / trace, 0.0, 1.0) : 0.0;
    return e;
}

} // namespace detail

/// PCA normals over k nearest neighbors, oriented by propagation along a minimum
/// spanning forest of the k-NN graph (edge weight 1 - |n_i . n_j|). Each component is
/// seeded at its highest point, whose normal is turned toward +z.
inline std::vector<NormalEstimate> estimate_normals(const PointCloud& cloud, int k)
{
    if (k < 3)
        throw Error(ErrorKind::InvalidConfig, "k must be at least 3");
    if (cloud.size() < std::size_t(k))
        throw Error(ErrorKind::TooFewPoints, "cloud has fewer points than k");

    const auto pts = cloud.positions();
    const PointIndex index(pts);
    const std::size_t n = pts.size();

    std::vector<std::vector<std::uint32_t>> knn(n);
    std::vector<NormalEstimate> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        knn[i] = index.knn(pts[i], std::size_t(k));
        out[i] = detail::pca_normal(pts, knn[i]);
    }

    // symmetric adjacency
    std::vector<std::vector<std::uint32_t>> adj(n);
    for (std::size_t i = 0; i < n; ++i)
        for (auto j : knn[i])
            if (j != i) {
                adj[i].push_back(j);
                adj[j].push_back(std::uint32_t(i));
            }
    for (auto& a : adj) {
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
    }

    // seeds: visit components in order of decreasing height (ties by index)
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = std::uint32_t(i);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return pts[a].z() > pts[b].z(); });

    std::vector<char> visited(n, 0);
    using Edge = std::tuple<double, std::uint32_t, std::uint32_t>; // weight, to, from
    for (auto seed : order) {
        if (visited[seed])
            continue;
        if (out[seed].normal.z() < 0.0)
            out[seed].normal = -out[seed].normal;
        visited[seed] = 1;
        std::priority_queue<Edge, std::vector<Edge>, std::greater<Edge>> heap;
        auto push_edges = [&](std::uint32_t from) {
            for (auto to : adj[from])
                if (!visited[to])
                    heap.emplace(1.0 - std::abs(out[from].normal.dot(out[to].normal)), to, from);
        };
        push_edges(seed);
        while (!heap.empty()) {
            auto [w, to, from] = heap.top();
            heap.pop();
            if (visited[to])
                continue;
            visited[to] = 1;
            if (out[from].normal.dot(out[to].normal) < 0.0)
                out[to].normal = -out[to].normal;
            push_edges(to);
        }
    }
    return out;
}

/// Per-cell normal = normalized sum of tent-weighted point normals over the 3x3x3 block of
/// cells around each point's cell; weight prod_a (1 - |g_a - c_a| / 2) in grid units.
/// Cells whose weighted sum cancels are left with a zero normal.
inline DomainCells splat_normal_field(const PointCloud& cloud, DomainCells domain, double base_size)
{
    if (!cloud.has_normals())
        throw Error(ErrorKind::MissingNormals, "normal splatting requires a normal on every point");
    std::vector<Vec3> sum(domain.size(), Vec3::Zero());
    std::vector<double> weight(domain.size(), 0.0);
    for (const auto& p : cloud.points()) {
        const Vec3 g = p.position / base_size;
        const CellIndex c0{floor_to_int(g.x()), floor_to_int(g.y()), floor_to_int(g.z())};
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const CellIndex c{c0[0] + dx, c0[1] + dy, c0[2] + dz};
                    const long long idx = domain.index_of(c);
                    if (idx < 0)
                        continue;
                    double w = 1.0;
                    for (int a = 0; a < 3; ++a)
                        w *= 1.0 - std::abs(g[a] - (c[a] + 0.5)) / 2.0;
                    sum[std::size_t(idx)] += w * *p.normal;
                    weight[std::size_t(idx)] += w;
                }
    }
    auto& normals = domain.normals_mut();
    for (std::size_t i = 0; i < domain.size(); ++i) {
        const double len = sum[i].norm();
        normals[i] = (weight[i] > 0.0 && len > 1e-12 * weight[i]) ? Vec3(sum[i] / len) : Vec3(Vec3::Zero());
    }
    return domain;
}

} // namespace svrecon

#endif // SVRECON_NORMALS_HPP
