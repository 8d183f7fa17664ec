#include <gtest/gtest.h>

#include <cmath>

#include "svrecon/fixtures.hpp"
#include "svrecon/geometry.hpp"
#include "svrecon/io.hpp"
#include "test_util.hpp"

using namespace svrecon;

TEST(LoadPointCloud, ThreeLineXyz)
{
    const auto dir = testutil::scratch();
    testutil::write_file(dir / "a.xyz", "0 0 0\n1 0 0\n0 1 0\n");
    const auto c = load_point_cloud(dir / "a.xyz");
    ASSERT_EQ(c.size(), 3u);
    EXPECT_EQ(c.bbox().min, Vec3(0, 0, 0));
    EXPECT_EQ(c.bbox().max, Vec3(1, 1, 0));
    EXPECT_FALSE(c.has_normals());
    EXPECT_EQ(c[1].position, Vec3(1, 0, 0));
    EXPECT_EQ(c[2].screening, 0.0);
}

TEST(LoadPointCloud, PlyNormalsAreRenormalized)
{
    const auto dir = testutil::scratch();
    testutil::write_file(dir / "n.ply", "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                                        "property float z\nproperty float nx\nproperty float ny\nproperty float nz\n"
                                        "end_header\n0 0 0 0 0 2\n1 1 1 3 4 0\n");
    const auto c = load_point_cloud(dir / "n.ply");
    ASSERT_TRUE(c.has_normals());
    EXPECT_NEAR((*c[0].normal - Vec3(0, 0, 1)).norm(), 0.0, 1e-12);
    EXPECT_NEAR((*c[1].normal - Vec3(0.6, 0.8, 0)).norm(), 0.0, 1e-12);
}

TEST(LoadPointCloud, Errors)
{
    const auto dir = testutil::scratch();
    testutil::write_file(dir / "empty.xyz", "");
    EXPECT_ERROR_KIND(load_point_cloud(dir / "empty.xyz"), ErrorKind::EmptyCloud);
    EXPECT_ERROR_KIND(load_point_cloud(dir / "missing.xyz"), ErrorKind::FileNotFound);
    testutil::write_file(dir / "bad.xyz", "0 0 0\n1 x 0\n");
    try {
        load_point_cloud(dir / "bad.xyz");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(NormalizeToUnitCube, SymmetricCube)
{
    const auto [c, t] = normalize_to_unit_cube(PointCloud::from_positions({{-1, -1, -1}, {1, 1, 1}}), 0.0);
    EXPECT_NEAR((c[0].position - Vec3(0, 0, 0)).norm(), 0.0, 1e-15);
    EXPECT_NEAR((c[1].position - Vec3(1, 1, 1)).norm(), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(t.scale, 0.5);
}

TEST(NormalizeToUnitCube, SinglePointIsCentered)
{
    const auto [c, t] = normalize_to_unit_cube(PointCloud::from_positions({{3, -2, 7}}), 0.1);
    EXPECT_EQ(c[0].position, Vec3(0.5, 0.5, 0.5));
    EXPECT_EQ(t.scale, 1.0);
}

TEST(NormalizeToUnitCube, SphereRespectsPaddingAndIsIdempotent)
{
    const auto s = fixtures::sphere_samples(2000, Vec3(3, -1, 2), 1.0);
    const auto [c, t] = normalize_to_unit_cube(s, 0.05);
    for (const auto& p : c.points()) {
        EXPECT_GE(p.position.minCoeff(), 0.05 - 1e-12);
        EXPECT_LE(p.position.maxCoeff(), 0.95 + 1e-12);
    }
    const auto [c2, t2] = normalize_to_unit_cube(c, 0.05);
    for (std::size_t i = 0; i < c.size(); ++i)
        EXPECT_NEAR((c2[i].position - c[i].position).norm(), 0.0, 1e-12);
    EXPECT_NEAR(t2.scale, 1.0, 1e-12);
    // inverse maps back
    for (std::size_t i = 0; i < c.size(); i += 97)
        EXPECT_NEAR((t.apply_inverse(c[i].position) - s[i].position).norm(), 0.0, 1e-12);
    EXPECT_ERROR_KIND(normalize_to_unit_cube(PointCloud{}, 0.0), ErrorKind::EmptyCloud);
}

TEST(Transform, RoundTrip)
{
    const Transform t{2.5, Vec3(0.1, -3, 4)};
    const Vec3 p(1.25, -0.5, 9);
    EXPECT_NEAR((t.inverse().apply(t.apply(p)) - p).norm(), 0.0, 1e-12);
    EXPECT_NEAR((t.apply_inverse(t.apply(p)) - p).norm(), 0.0, 1e-12);
}

TEST(WriteMesh, SingleTriangleObj)
{
    const auto dir = testutil::scratch();
    TriangleMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    m.triangles = {{0, 1, 2}};
    write_mesh(m, dir / "t.obj");
    const auto text = testutil::read_file(dir / "t.obj");
    int v = 0, f = 0;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        v += line.rfind("v ", 0) == 0;
        f += line.rfind("f ", 0) == 0;
    }
    EXPECT_EQ(v, 3);
    EXPECT_EQ(f, 1);
}

TEST(WriteMesh, RoundTripBothFormats)
{
    const auto dir = testutil::scratch();
    const auto m = fixtures::icosphere(Vec3(0.5, 0.5, 0.5), 0.3, 2);
    for (const char* name : {"s.ply", "s.obj"}) {
        write_mesh(m, dir / name);
        const auto r = load_mesh(dir / name);
        ASSERT_EQ(r.vertices.size(), m.vertices.size());
        ASSERT_EQ(r.triangles.size(), m.triangles.size());
        ASSERT_TRUE(r.has_vertex_normals());
        for (std::size_t i = 0; i < m.vertices.size(); ++i) {
            EXPECT_NEAR((r.vertices[i] - m.vertices[i]).cwiseAbs().maxCoeff(), 0.0, 1e-6);
            EXPECT_NEAR(r.vertex_normals[i].norm(), 1.0, 1e-6);
        }
        EXPECT_EQ(r.triangles, m.triangles);
    }
    EXPECT_NE(testutil::read_file(dir / "s.ply").find("property double nx"), std::string::npos);
}

TEST(WriteMesh, InvalidMeshAndUnwritablePath)
{
    const auto dir = testutil::scratch();
    TriangleMesh bad;
    bad.vertices = {{0, 0, 0}, {1, 0, 0}};
    bad.triangles = {{0, 1, 1}};
    EXPECT_ERROR_KIND(write_mesh(bad, dir / "bad.ply"), ErrorKind::DegenerateMesh);
    TriangleMesh ok;
    ok.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    ok.triangles = {{0, 1, 2}};
    EXPECT_ERROR_KIND(write_mesh(ok, dir / "no_such_dir" / "x.ply"), ErrorKind::IoError);
}

TEST(WriteXyz, RoundTripKeepsNormals)
{
    const auto dir = testutil::scratch();
    const auto s = fixtures::sphere_samples(50, Vec3(0.5, 0.5, 0.5), 0.25);
    write_xyz(s, dir / "s.xyz");
    const auto r = load_point_cloud(dir / "s.xyz");
    ASSERT_EQ(r.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_NEAR((r[i].position - s[i].position).norm(), 0.0, 1e-6);
        EXPECT_NEAR(r[i].normal->norm(), 1.0, 1e-6);
    }
}
