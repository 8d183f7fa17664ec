#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "../support/oracles.hpp"
#include "svrecon/fixtures.hpp"
#include "svrecon/normals.hpp"
#include "svrecon/solver.hpp"
#include "test_util.hpp"

using namespace svrecon;

namespace {

struct Setup {
    SparseVoxelHierarchy h;
    DomainCells domain;
    PointCloud cloud;
};

Setup small_sphere(std::size_t n = 300, double b = 0.05, int S = 2)
{
    Setup s;
    s.cloud = fixtures::sphere_samples(n, Vec3(0.5, 0.5, 0.5), 0.2);
    s.h = build_hierarchy(s.cloud, b, S, S);
    s.domain = splat_normal_field(s.cloud, rasterize_domain(s.h), b);
    return s;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

} // namespace

TEST(AssembleSystem, StiffnessOnlyHasPositiveDiagonal)
{
    auto s = small_sphere();
    const auto sys = assemble_system(s.h, s.domain, default_basis_spec(), {0.0, 0.0}, s.cloud);
    for (double d : sys.A.diagonal())
        EXPECT_GT(d, 0.0);
    // equals the gradient Gram matrix of the screened path with no screening
    const auto sp = assemble_screened_poisson(s.h, s.domain, default_basis_spec(), 0.0, s.cloud);
    EXPECT_EQ(sys.A.values(), sp.A.values());
}

TEST(AssembleSystem, ZeroNormalsGiveZeroRhsAndZeroSolution)
{
    auto s = small_sphere();
    for (auto& n : s.domain.normals_mut())
        n.setZero();
    const auto sys = assemble_system(s.h, s.domain, default_basis_spec(), {}, s.cloud);
    for (double v : sys.b)
        EXPECT_EQ(v, 0.0);
    const auto r = solve_coefficients(sys, 1e-10, 100);
    EXPECT_EQ(r.iterations, 0);
    for (double v : r.coefficients)
        EXPECT_EQ(v, 0.0);
}

TEST(AssembleSystem, TwoVoxelMatchesRiemannOracle)
{
    const double b = 0.02;
    const auto cloud = PointCloud::from_oriented({{0.51, 0.51, 0.51}, {0.53, 0.515, 0.51}}, {{0, 0, 1}, {0.6, 0, 0.8}});
    const auto h = build_hierarchy(cloud, b, 1, 1);
    ASSERT_EQ(h.voxels(1).size(), 2u);
    const auto domain = splat_normal_field(cloud, rasterize_domain(h), b);
    const SolverWeights w{3.0, 64.0};
    const auto sys = assemble_system(h, domain, default_basis_spec(), w, cloud);
    const auto ref = oracle::dense_reference(sys.dofs, domain, cloud, b, w);
    const Eigen::MatrixXd A = sys.A.to_dense();
    EXPECT_LE(max_abs(A - ref.A), 1e-6 * max_abs(ref.A));
    const Eigen::VectorXd bv = Eigen::Map<const Eigen::VectorXd>(sys.b.data(), Eigen::Index(sys.b.size()));
    EXPECT_LE((bv - ref.b).cwiseAbs().maxCoeff(), 1e-6 * ref.b.cwiseAbs().maxCoeff());
}

TEST(AssembleSystem, SymmetricAndPositiveSemidefinite)
{
    auto s = small_sphere(200, 0.08, 2);
    const auto sys = assemble_system(s.h, s.domain, default_basis_spec(), {}, s.cloud);
    ASSERT_LE(sys.dofs.size(), 200u);
    const Eigen::MatrixXd A = sys.A.to_dense();
    EXPECT_LE(max_abs(A - A.transpose()), 1e-12 * max_abs(A));
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8 * eig.eigenvalues().cwiseAbs().maxCoeff());
    EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
}

TEST(AssembleSystem, ScreenedPoissonBitMatchesAtZeroHessianWeight)
{
    auto s = small_sphere();
    const auto a = assemble_system(s.h, s.domain, default_basis_spec(), {0.0, 64.0}, s.cloud);
    const auto b = assemble_screened_poisson(s.h, s.domain, default_basis_spec(), 64.0, s.cloud);
    EXPECT_EQ(a.A.values(), b.A.values());
    EXPECT_EQ(a.b, b.b);
}

TEST(AssembleSystem, NormalFlipNegatesSolution)
{
    auto s = small_sphere();
    const auto spec = default_basis_spec();
    const auto a = assemble_system(s.h, s.domain, spec, {}, s.cloud);
    auto flipped = s.domain;
    for (auto& n : flipped.normals_mut())
        n = -n;
    const auto b = assemble_system(s.h, flipped, spec, {}, s.cloud);
    EXPECT_EQ(a.A.values(), b.A.values());
    for (std::size_t k = 0; k < a.b.size(); ++k)
        EXPECT_EQ(a.b[k], -b.b[k]);
    const auto xa = solve_coefficients(a, 1e-12, 10000).coefficients;
    const auto xb = solve_coefficients(b, 1e-12, 10000).coefficients;
    for (std::size_t k = 0; k < xa.size(); ++k)
        EXPECT_EQ(xa[k], -xb[k]);
}

TEST(AssembleSystem, IntegerTranslationLeavesCoefficients)
{
    const double b = 0.0625; // power of two: shifted positions stay exact, including points on cell faces
    const auto base = fixtures::sphere_samples(300, Vec3(0.5, 0.5, 0.5), 0.2);
    const Vec3 shift = Vec3(3, -2, 5) * b * 2; // whole coarse cells keep the hierarchy aligned
    std::vector<OrientedPoint> moved = base.points();
    for (auto& p : moved)
        p.position += shift;
    auto solve = [&](const PointCloud& c) {
        const auto h = build_hierarchy(c, b, 2, 2);
        const auto d = splat_normal_field(c, rasterize_domain(h), b);
        const auto sys = assemble_system(h, d, default_basis_spec(), {}, c);
        return std::make_pair(sys.dofs, solve_coefficients(sys, 1e-12, 10000).coefficients);
    };
    const auto [d0, x0] = solve(base);
    const auto [d1, x1] = solve(PointCloud(moved));
    ASSERT_EQ(d0.size(), d1.size());
    double scale = 0.0;
    for (double v : x0)
        scale = std::max(scale, std::abs(v));
    for (std::size_t k = 0; k < d0.size(); ++k) {
        auto key = d0[k].key;
        const int f = 2 / key.width();
        key.ijk = {key.ijk[0] + 3 * f, key.ijk[1] - 2 * f, key.ijk[2] + 5 * f};
        const auto j = d1.index_of(key);
        ASSERT_GE(j, 0);
        EXPECT_NEAR(x0[k], x1[std::size_t(j)], 1e-10 * std::max(1.0, scale));
    }
}

TEST(AssembleSystem, Errors)
{
    auto s = small_sphere();
    EXPECT_ERROR_KIND(assemble_system(s.h, DomainCells{}, default_basis_spec(), {}, s.cloud), ErrorKind::EmptyDomain);
    auto bad = s.domain;
    bad.normals_mut()[0] = Vec3(0, 0, 2);
    EXPECT_ERROR_KIND(assemble_system(s.h, bad, default_basis_spec(), {}, s.cloud), ErrorKind::UnnormalizedNormals);
    EXPECT_ERROR_KIND(assemble_system(s.h, s.domain, default_basis_spec(), {-1.0, 64.0}, s.cloud),
                      ErrorKind::InvalidConfig);
}

TEST(Pcg, MatchesDenseSolve)
{
    const auto D = oracle::random_spd(50, 17);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    std::vector<double> b(50);
    for (auto& v : b)
        v = g(rng);
    const auto r = pcg(oracle::to_sparse(D), b, 1e-12, 500);
    const Eigen::VectorXd ref = D.ldlt().solve(Eigen::Map<const Eigen::VectorXd>(b.data(), 50));
    const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(r.coefficients.data(), 50);
    EXPECT_LE((x - ref).norm(), 1e-6 * ref.norm());
    EXPECT_LE(r.residual, 1e-11);
}

TEST(Pcg, ZeroRhsAndNotConverged)
{
    const auto A = oracle::to_sparse(oracle::random_spd(30, 4));
    const auto z = pcg(A, std::vector<double>(30, 0.0), 1e-8, 10);
    EXPECT_EQ(z.iterations, 0);
    std::vector<double> b(30, 1.0);
    try {
        pcg(A, b, 1e-14, 2);
        FAIL();
    } catch (const NotConverged& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotConverged);
        EXPECT_EQ(e.best_iterate().size(), 30u);
    }
    EXPECT_ERROR_KIND(pcg(A, b, 0.0, 10), ErrorKind::InvalidConfig);
}

TEST(Pcg, SphereConvergesWithinTenTimesDof)
{
    auto s = small_sphere(1500, 0.04, 3);
    const auto sys = assemble_system(s.h, s.domain, default_basis_spec(), {}, s.cloud);
    const auto r = solve_coefficients(sys, 1e-8, int(10 * sys.dofs.size()));
    EXPECT_LE(r.iterations, int(10 * sys.dofs.size()));
    EXPECT_LE(r.residual, 1e-8 * 1.01);
}

TEST(ImplicitField, FarAwayIsZeroAndSingleDofIsTheBasis)
{
    auto s = small_sphere();
    DofTable dofs(s.h, default_basis_spec());
    std::vector<double> a(dofs.size(), 0.0);
    a[3] = 1.0;
    const ImplicitField f(dofs, a, 0.05);
    const auto far = f.eval(Vec3(10, 10, 10), DerivOrder::hessian);
    EXPECT_EQ(far.value, 0.0);
    EXPECT_EQ(far.gradient, Vec3::Zero());
    const auto pb = dofs.placed(3);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.6, 1.6);
    for (int i = 0; i < 100; ++i) {
        const Vec3 local(u(rng), u(rng), u(rng));
        const Vec3 g = pb.center + pb.width * local;
        EXPECT_NEAR(f.eval_grid(g, DerivOrder::value).value, eval_basis(*pb.basis, local, DerivOrder::value).value,
                    1e-15);
    }
    EXPECT_ERROR_KIND(ImplicitField(dofs, std::vector<double>(2, 0.0), 0.05), ErrorKind::ShapeMismatch);
}

TEST(ImplicitField, GradientMatchesCentralDifferences)
{
    auto s = small_sphere();
    const auto sys = assemble_system(s.h, s.domain, default_basis_spec(), {}, s.cloud);
    const ImplicitField f(sys.dofs, solve_coefficients(sys, 1e-10, 10000).coefficients, 0.05);
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> pick(0, s.domain.size() - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double h = 1e-4 * 0.05;
    int checked = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto& c = s.domain.cell(pick(rng));
        const Vec3 p = Vec3(c[0] + u(rng), c[1] + u(rng), c[2] + u(rng)) * 0.05;
        const Vec3 g = f.eval(p).gradient;
        if (g.norm() <= 0.1)
            continue;
        Vec3 fd;
        for (int a = 0; a < 3; ++a) {
            Vec3 e = Vec3::Zero();
            e[a] = h;
            fd[a] = (f.value(p + e) - f.value(p - e)) / (2 * h);
        }
        EXPECT_LE((fd - g).norm(), 1e-4 * g.norm());
        ++checked;
    }
    EXPECT_GT(checked, 100);
}

TEST(Energy, ZeroFieldPlugIn)
{
    auto s = small_sphere();
    std::vector<OrientedPoint> pts = s.cloud.points();
    for (std::size_t i = 0; i < pts.size(); ++i)
        pts[i].screening = 0.01 * double(i % 7);
    const PointCloud cloud(pts);
    const DofTable dofs(s.h, default_basis_spec());
    const ImplicitField zero(dofs, std::vector<double>(dofs.size(), 0.0), 0.05);
    const auto e = energy(zero, s.domain, cloud, {});
    double en = 0.0, ep = 0.0;
    for (const auto& n : s.domain.normals())
        en += n.squaredNorm();
    for (const auto& p : pts)
        ep += p.screening * p.screening;
    EXPECT_NEAR(e.normal, en, 1e-9 * en);
    EXPECT_EQ(e.hessian, 0.0);
    EXPECT_NEAR(e.point, ep, 1e-12);
}

TEST(Energy, SolutionIsStationary)
{
    auto s = small_sphere();
    const SolverWeights w{};
    const auto sys = assemble_system(s.h, s.domain, default_basis_spec(), w, s.cloud);
    const auto x = solve_coefficients(sys, 1e-12, 10000).coefficients;
    const double e0 = energy(ImplicitField(sys.dofs, x, 0.05), s.domain, s.cloud, w).total;
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    for (int i = 0; i < 20; ++i) {
        const auto k = pick(rng);
        for (double eps : {1e-3, -1e-3}) {
            auto y = x;
            y[k] += eps;
            EXPECT_GE(energy(ImplicitField(sys.dofs, y, 0.05), s.domain, s.cloud, w).total, e0 * (1 - 1e-12));
        }
    }
}

TEST(DumpSystem, CoordinateFormat)
{
    const auto dir = testutil::scratch();
    const auto cloud = PointCloud::from_oriented({{0.51, 0.51, 0.51}}, {{0, 0, 1}});
    const auto h = build_hierarchy(cloud, 0.02, 1, 1);
    const auto d = splat_normal_field(cloud, rasterize_domain(h), 0.02);
    const auto sys = assemble_system(h, d, default_basis_spec(), {}, cloud);
    dump_system(sys, dir / "A.txt", dir / "b.txt");
    const auto text = testutil::read_file(dir / "A.txt");
    EXPECT_EQ(text.substr(0, 6), "1 1 1\n");
    EXPECT_EQ(text.substr(6, 4), "0 0 ");
    EXPECT_DOUBLE_EQ(std::stod(text.substr(10)), sys.A.at(0, 0));
    const auto rhs = testutil::read_file(dir / "b.txt");
    EXPECT_EQ(std::count(rhs.begin(), rhs.end(), '\n'), 1);
}
