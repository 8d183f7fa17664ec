#include <gtest/gtest.h>

#include <set>

#include "svrecon/extract.hpp"
#include "svrecon/fixtures.hpp"
#include "svrecon/metrics.hpp"
#include "test_util.hpp"

using namespace svrecon;

namespace {

DomainCells block(int lo, int hi)
{
    std::vector<CellIndex> cells;
    for (int z = lo; z < hi; ++z)
        for (int y = lo; y < hi; ++y)
            for (int x = lo; x < hi; ++x)
                cells.push_back({x, y, z});
    return DomainCells::from_cells(cells);
}

long long euler_characteristic(const TriangleMesh& m)
{
    std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
    for (const auto& t : m.triangles)
        for (int i = 0; i < 3; ++i)
            edges.insert(std::minmax(t[std::size_t(i)], t[std::size_t((i + 1) % 3)]));
    return (long long)m.vertices.size() - (long long)edges.size() + (long long)m.triangles.size();
}

} // namespace

TEST(ExtractMesh, LinearFieldGivesExactPlane)
{
    const double b = 0.03;
    const auto mesh = extract_mesh_world([](const Vec3& p) { return p.z() - 0.5; }, block(10, 24), b);
    ASSERT_FALSE(mesh.triangles.empty());
    mesh.validate();
    for (const auto& v : mesh.vertices)
        EXPECT_NEAR(v.z(), 0.5, 1e-6);
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
        EXPECT_GT(mesh.face_normal(t).z(), 0.999); // outward = toward positive values
}

TEST(ExtractMesh, AnalyticSphere)
{
    const double b = 0.02, r = 0.3;
    const Vec3 c(0.5, 0.5, 0.5);
    auto f = [&](const Vec3& p) { return (p - c).norm() - r; };
    const auto mesh = extract_mesh_world(f, block(5, 45), b);
    mesh.validate();
    const double tol = 0.5 * std::sqrt(3.0) * b;
    for (const auto& v : mesh.vertices)
        EXPECT_LE(std::abs((v - c).norm() - r), tol);
    EXPECT_EQ(euler_characteristic(mesh), 2);
    EXPECT_TRUE(is_edge_manifold_closed(mesh));
    EXPECT_TRUE(is_watertight(mesh));
    double outward = 0.0;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        const Vec3 centroid = (mesh.vertices[tri[0]] + mesh.vertices[tri[1]] + mesh.vertices[tri[2]]) / 3.0;
        outward += mesh.face_normal(t).dot((centroid - c).normalized());
        EXPECT_GT(mesh.triangle_area(t), 1e-12);
    }
    EXPECT_GT(outward / double(mesh.triangles.size()), 0.95);
}

TEST(ExtractMesh, VerticesLieOnSignChangingEdges)
{
    const double b = 0.05;
    auto f = [](const Vec3& p) { return std::sin(7 * p.x()) + std::cos(5 * p.y()) * p.z() - 0.3; };
    const auto mesh = extract_mesh_world(f, block(0, 20), b);
    for (const auto& v : mesh.vertices) {
        const Vec3 g = v / b;
        int axis = -1;
        for (int a = 0; a < 3; ++a)
            if (std::abs(g[a] - std::round(g[a])) > 1e-9)
                axis = a;
        if (axis < 0)
            continue; // on a corner (exact zero)
        Vec3 lo = g.array().round(), hi = lo;
        lo[axis] = std::floor(g[axis]);
        hi[axis] = lo[axis] + 1;
        EXPECT_LE(f(lo * b) * f(hi * b), 0.0);
    }
}

TEST(ExtractMesh, NoCrossingAndEmptyDomain)
{
    EXPECT_ERROR_KIND(extract_mesh_world([](const Vec3&) { return 1.0; }, block(0, 4), 0.1), ErrorKind::NoCrossing);
    EXPECT_ERROR_KIND(extract_mesh_world([](const Vec3&) { return 1.0; }, DomainCells{}, 0.1), ErrorKind::EmptyDomain);
}

TEST(ExtractMesh, IsoValueShiftsSurface)
{
    const double b = 0.03;
    const auto mesh = extract_mesh_world([](const Vec3& p) { return p.z(); }, block(10, 24), b, 0.41);
    for (const auto& v : mesh.vertices)
        EXPECT_NEAR(v.z(), 0.41, 1e-9);
}

TEST(RemoveFloaters, KeepsEverythingWithinTau)
{
    const auto sphere = fixtures::icosphere(Vec3(0.5, 0.5, 0.5), 0.3, 3);
    const auto cloud = PointCloud::from_positions(sphere.vertices);
    const auto out = remove_floaters(sphere, cloud, 0.01);
    EXPECT_EQ(out.vertices.size(), sphere.vertices.size());
    EXPECT_EQ(out.triangles, sphere.triangles);
}

TEST(RemoveFloaters, DropsDistantBlobIdempotently)
{
    const double tau = 0.02;
    auto mesh = fixtures::icosphere(Vec3(0.5, 0.5, 0.5), 0.3, 3);
    const auto cloud = PointCloud::from_positions(mesh.vertices);
    const auto nsphere = mesh.vertices.size();
    const auto ntri = mesh.triangles.size();
    const auto blob = fixtures::icosphere(Vec3(0.5, 0.5, 0.8 + 10 * tau), 0.01, 1);
    for (auto t : blob.triangles) {
        for (auto& i : t)
            i += std::uint32_t(nsphere);
        mesh.triangles.push_back(t);
    }
    mesh.vertices.insert(mesh.vertices.end(), blob.vertices.begin(), blob.vertices.end());
    const auto out = remove_floaters(mesh, cloud, tau);
    EXPECT_EQ(out.vertices.size(), nsphere);
    EXPECT_EQ(out.triangles.size(), ntri);
    const auto again = remove_floaters(out, cloud, tau);
    EXPECT_EQ(again.vertices, out.vertices);
    EXPECT_EQ(again.triangles, out.triangles);
}

TEST(RemoveFloaters, Errors)
{
    const auto sphere = fixtures::icosphere(Vec3::Zero(), 1.0, 1);
    EXPECT_ERROR_KIND(remove_floaters(sphere, PointCloud::from_positions(sphere.vertices), 0.0), ErrorKind::InvalidConfig);
    EXPECT_ERROR_KIND(remove_floaters(sphere, PointCloud{}, 0.1), ErrorKind::EmptyCloud);
}
