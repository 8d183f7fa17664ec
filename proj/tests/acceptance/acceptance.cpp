// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// usage: acceptance [work_dir]
#include <sys/resource.h>

#include <Eigen/Dense>
#include <fmt/format.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>

#include "../support/oracles.hpp"
#include "svrecon/fixtures.hpp"
#include "svrecon/svrecon.hpp"

namespace fs = std::filesystem;
using namespace svrecon;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

fs::path g_work;

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

double peak_rss_bytes()
{
    rusage u{};
    getrusage(RUSAGE_SELF, &u);
    return double(u.ru_maxrss) * 1024.0; // kilobytes on linux
}

double rel_max(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref)
{
    return (a - ref).cwiseAbs().maxCoeff() / std::max(ref.cwiseAbs().maxCoeff(), 1e-300);
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size())); }

Config sphere_config()
{
    auto c = Config::load(fs::path(SVRECON_SOURCE_DIR) / "configs" / "default.ini");
    c.io.input = g_work / "sphere.xyz";
    c.io.output = g_work / "sphere_mesh.ply";
    c.io.normalize = false; // the fixture already sits in the unit cube; b is in its units
    return c;
}

const Vec3 kCenter(0.5, 0.5, 0.5);
constexpr double kRadius = 0.35;

// ---- 1 -------------------------------------------------------------------------------------------

Outcome sphere_end_to_end()
{
    write_xyz(fixtures::sphere_samples(3000, kCenter, kRadius), g_work / "sphere.xyz");
    const auto gt = fixtures::icosphere(kCenter, kRadius, 6);
    write_mesh(gt, g_work / "sphere_gt.ply");
    const auto cfg = sphere_config();
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = reconstruct(cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto m = evaluate_meshes(load_mesh(cfg.io.output), gt, MetricsOptions{30000, 0.01, 100000, 0}, "sphere");
    const double rss = peak_rss_bytes();
    const double cap = 4.0 * 1024 * 1024 * 1024;
    const bool ok = m.chamfer_l1 <= 5.0 && m.normal_consistency_percent >= 95.0 && m.iou && *m.iou >= 0.90
                 && secs <= 120.0 && double(r.peak_memory_estimate_bytes) <= cap && rss <= cap;
    return {ok, fmt::format("chamfer_l1={:.3f} (<=5) nc={:.2f} (>=95) iou={} (>=0.9) f={:.2f} time={:.1f}s dof={} "
                            "cg={} mem_est={:.1f}MB rss={:.1f}MB",
                            m.chamfer_l1, m.normal_consistency_percent, m.iou ? fmt::format("{:.4f}", *m.iou) : "null",
                            m.f_score_percent, secs, r.dof, r.cg_iterations, r.peak_memory_estimate_bytes / 1048576.0,
                            rss / 1048576.0)};
}

// ---- 2 -------------------------------------------------------------------------------------------

// fraction of probes at +-2b with the expected sign, split above / below
std::pair<double, double> plane_probe(double z0)
{
    Config c;
    c.io.normalize = false;
    const double b = c.scaffold.base_size;
    const auto rec = reconstruct_cloud(fixtures::plane_samples(2000, z0, 0.2, 0.8, 3), c);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    int above = 0, below = 0;
    for (int i = 0; i < 1000; ++i) {
        const double x = u(rng), y = u(rng);
        above += rec.field.value(Vec3(x, y, z0 + 2 * b)) > 0.0;
        below += rec.field.value(Vec3(x, y, z0 - 2 * b)) < 0.0;
    }
    return {above / 1000.0, below / 1000.0};
}

Outcome plane_sign()
{
    const auto [above, below] = plane_probe(0.5);
    const double frac = (above + below) / 2;
    // informational: same test with the plane at other heights inside one finest cell
    std::string sweep;
    const double b = Config{}.scaffold.base_size;
    for (int k = 1; k < 8; k += 2) {
        const auto [a, d] = plane_probe(0.5 + k * b / 8);
        sweep += fmt::format(" z+{}b/8:{:.1f}%", k, 50 * (a + d));
    }
    return {frac >= 0.99, fmt::format("plane z=0.5: {:.2f}% correct (>=99%; above {:.1f}%, below {:.1f}%); other "
                                      "heights:{}",
                                      100 * frac, 100 * above, 100 * below, sweep)};
}

// ---- 3, 4 ----------------------------------------------------------------------------------------

struct Scaffold {
    PointCloud cloud;
    SparseVoxelHierarchy h;
    DomainCells domain;
    GalerkinSystem sys;
};

constexpr double kScaffoldB = 1.0 / 32.0;

// clustered random points with random unit normals, 1-3 scales
std::optional<Scaffold> random_scaffold(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> npts(1, 40), nscale(1, 3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g;
    const int S = nscale(rng);
    const Vec3 origin(0.3 + 0.1 * u(rng), 0.3 + 0.1 * u(rng), 0.3 + 0.1 * u(rng));
    const double spread = kScaffoldB * (1.0 + 7.0 * u(rng));
    std::vector<Vec3> pos, nrm;
    const int n = npts(rng);
    for (int i = 0; i < n; ++i) {
        pos.push_back(origin + spread * Vec3(u(rng), u(rng), u(rng)));
        nrm.push_back(Vec3(g(rng), g(rng), g(rng)).normalized());
    }
    Scaffold s;
    s.cloud = PointCloud::from_oriented(pos, nrm);
    std::vector<OrientedPoint> pts = s.cloud.points();
    for (auto& p : pts)
        p.screening = 0.1 * g(rng); // nonzero targets exercise the point rhs too
    s.cloud = PointCloud(std::move(pts));
    s.h = build_hierarchy(s.cloud, kScaffoldB, S, S);
    s.domain = splat_normal_field(s.cloud, rasterize_domain(s.h), kScaffoldB);
    s.sys = assemble_system(s.h, s.domain, default_basis_spec(), SolverWeights{}, s.cloud);
    if (s.sys.dofs.size() > 200)
        return std::nullopt;
    return s;
}

std::vector<Scaffold>& scaffolds()
{
    static std::vector<Scaffold> all = [] {
        std::vector<Scaffold> v;
        for (std::uint64_t seed = 1; v.size() < 20; ++seed)
            if (auto s = random_scaffold(seed))
                v.push_back(std::move(*s));
        return v;
    }();
    return all;
}

Outcome system_correctness()
{
    double worst_a = 0.0, worst_b = 0.0, worst_sym = 0.0, worst_eig = 0.0;
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& s : scaffolds()) {
        const auto ref = oracle::dense_reference(s.sys.dofs, s.domain, s.cloud, kScaffoldB, SolverWeights{});
        const Eigen::MatrixXd A = s.sys.A.to_dense();
        worst_a = std::max(worst_a, rel_max(A, ref.A));
        worst_b = std::max(worst_b, rel_max(to_eigen(s.sys.b), ref.b));
        const double norm = A.cwiseAbs().maxCoeff();
        worst_sym = std::max(worst_sym, (A - A.transpose()).cwiseAbs().maxCoeff() / norm);
        const double emin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A).eigenvalues().minCoeff();
        worst_eig = std::min(worst_eig, emin / A.norm());
        lo = std::min(lo, s.sys.dofs.size());
        hi = std::max(hi, s.sys.dofs.size());
    }
    const bool ok = worst_a <= 1e-6 && worst_b <= 1e-6 && worst_sym <= 1e-12 && worst_eig >= -1e-8;
    return {ok, fmt::format("{} scaffolds, {}..{} dof: A rel err {:.2e}, b rel err {:.2e} (<=1e-6), asym {:.1e} "
                            "(<=1e-12), min eig/|A| {:.1e} (>=-1e-8)",
                            scaffolds().size(), lo, hi, worst_a, worst_b, worst_sym, worst_eig)};
}

Outcome galerkin_optimality()
{
    struct Fixture {
        std::string name;
        PointCloud cloud;
        double b;
        int S;
    };
    std::vector<Fixture> fx{
        {"sphere", fixtures::sphere_samples(300, kCenter, 0.2), 0.05, 2},
        {"plane", fixtures::plane_samples(300, 0.5, 0.3, 0.7, 5), 0.05, 2},
        {"scaffold", scaffolds().front().cloud, kScaffoldB, 2},
    };
    std::string detail;
    bool ok = true;
    const SolverWeights w{};
    for (const auto& f : fx) {
        const auto h = build_hierarchy(f.cloud, f.b, f.S, f.S);
        const auto domain = splat_normal_field(f.cloud, rasterize_domain(h), f.b);
        const auto sys = assemble_system(h, domain, default_basis_spec(), w, f.cloud);
        const auto x = solve_coefficients(sys, 1e-12, 100000).coefficients;
        const double e0 = energy(ImplicitField(sys.dofs, x, f.b), domain, f.cloud, w).total;
        std::mt19937_64 rng(7);
        std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
        std::bernoulli_distribution sign;
        int violations = 0;
        double min_rise = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 100; ++i) {
            auto y = x;
            y[pick(rng)] += sign(rng) ? 1e-3 : -1e-3;
            const double e = energy(ImplicitField(sys.dofs, y, f.b), domain, f.cloud, w).total;
            // quadrature round-off on E itself is the only slack
            violations += e < e0 - 1e-12 * std::abs(e0);
            min_rise = std::min(min_rise, e - e0);
        }
        ok = ok && violations == 0;
        detail += fmt::format("{} ({} dof): {} decreases, min rise {:.2e}; ", f.name, x.size(), violations, min_rise);
    }
    double worst = 0.0;
    for (const auto& s : scaffolds()) {
        const auto x = to_eigen(solve_coefficients(s.sys, 1e-12, 100000).coefficients);
        const Eigen::VectorXd d = s.sys.A.to_dense().ldlt().solve(to_eigen(s.sys.b));
        if (d.norm() > 0.0)
            worst = std::max(worst, (x - d).norm() / d.norm());
    }
    ok = ok && worst <= 1e-6;
    detail += fmt::format("CG vs dense on {} systems: max rel diff {:.2e} (<=1e-6)", scaffolds().size(), worst);
    return {ok, detail};
}

// ---- 5 -------------------------------------------------------------------------------------------

Outcome regularization_path()
{
    const auto cloud = fixtures::sphere_samples(3000, kCenter, kRadius);
    const Config c = sphere_config();
    const double b = c.scaffold.base_size;
    const auto h = build_hierarchy(cloud, b, c.scaffold.num_scales, c.adaptive_depth());
    const auto domain = splat_normal_field(cloud, rasterize_domain(h), b);
    const auto spec = default_basis_spec();
    std::vector<double> eh;
    std::string detail;
    for (double lh : {0.0, 1.0, 3.0, 6.0, 64.0}) {
        const SolverWeights w{lh, c.solver.lambda_P};
        const auto sys = assemble_system(h, domain, spec, w, cloud);
        const auto x = solve_coefficients(sys, 1e-10, int(20 * sys.dofs.size())).coefficients;
        eh.push_back(energy(ImplicitField(sys.dofs, x, b), domain, cloud, w).hessian);
        detail += fmt::format("E_H({})={:.6g} ", lh, eh.back());
    }
    bool monotone = true;
    for (std::size_t i = 1; i < eh.size(); ++i)
        monotone = monotone && eh[i] <= eh[i - 1] * (1 + 1e-9);
    const auto a = assemble_system(h, domain, spec, SolverWeights{0.0, c.solver.lambda_P}, cloud);
    const auto p = assemble_screened_poisson(h, domain, spec, c.solver.lambda_P, cloud);
    const bool bits = a.A.values() == p.A.values() && a.A.cols() == p.A.cols() && a.b == p.b;
    detail += fmt::format("; non-increasing: {}; lambda_H=0 bit-matches screened Poisson: {}", monotone, bits);
    return {monotone && bits, detail};
}

// ---- 6 -------------------------------------------------------------------------------------------

Outcome basis_correctness()
{
    double constraint = 0.0;
    std::vector<BasisSpec> specs{default_basis_spec(), make_basis_spec(5, {}, Continuity::C1_polynomial),
                                 make_basis_spec(6, {1, 2}, Continuity::C1_polynomial)};
    for (const auto& spec : specs)
        for (int col = 0; col < spec.free_dimension(); ++col) {
            Eigen::VectorXd m = Eigen::VectorXd::Zero(spec.free_dimension());
            m(col) = 1.0;
            const AxisProfile prof(spec, m);
            for (double x : {-1.5, 1.5}) {
                const auto v = prof.eval(x);
                constraint = std::max({constraint, std::abs(v[0]), std::abs(v[1])});
            }
        }

    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(-1.4, 1.4);
    double grad_err = 0.0, hess_err = 0.0;
    for (const auto& spec : specs) {
        BasisParams m;
        for (auto& a : m.axis) {
            a.resize(spec.free_dimension());
            for (Eigen::Index i = 0; i < a.size(); ++i)
                a(i) = g(rng);
        }
        const TensorBasis B(spec, m);
        const double h = 1e-5;
        for (int i = 0; i < 200; ++i) {
            const Vec3 p(u(rng), u(rng), u(rng));
            const auto s = eval_basis(B, p);
            Vec3 fd;
            Eigen::Matrix3d fh;
            for (int a = 0; a < 3; ++a) {
                Vec3 e = Vec3::Zero();
                e[a] = h;
                const auto sp = eval_basis(B, p + e), sm = eval_basis(B, p - e);
                fd[a] = (sp.value - sm.value) / (2 * h);
                fh.col(a) = (sp.gradient - sm.gradient) / (2 * h);
            }
            grad_err = std::max(grad_err, (fd - s.gradient).norm() / std::max(1.0, s.gradient.norm()));
            hess_err = std::max(hess_err, (fh - s.hessian).norm() / std::max(1.0, s.hessian.norm()));
        }
    }

    double quad = 0.0;
    for (int Q = 1; Q <= 12; ++Q) {
        const GaussLegendre gl(Q);
        for (int k = 0; k <= 2 * Q - 1; ++k)
            quad = std::max(quad, std::abs(gl.integrate([k](double x) { return std::pow(x, k); }, 0.0, 1.0) - 1.0 / (k + 1)));
    }

    double additivity = 0.0;
    const auto& spec = specs[1];
    auto rand_params = [&] {
        BasisParams m;
        for (auto& a : m.axis) {
            a.resize(spec.free_dimension());
            for (Eigen::Index i = 0; i < a.size(); ++i)
                a(i) = g(rng);
        }
        return m;
    };
    const TensorBasis Bk(spec, rand_params()), Bl(spec, rand_params());
    const PlacedBasis k{&Bk, Vec3(0.5, 0.5, 0.5), 1.0}, l{&Bl, Vec3(1.0, 1.0, 0.0), 2.0};
    const int Q = default_quadrature_order(spec);
    const Box3 cell{Vec3(0, 0, 0), Vec3(1, 1, 1)};
    const auto whole = cell_inner_products(k, l, cell, Q);
    for (int a = 0; a < 3; ++a) {
        Box3 lo = cell, hi = cell;
        lo.hi[a] = hi.lo[a] = 0.37;
        const auto p = cell_inner_products(k, l, lo, Q), q = cell_inner_products(k, l, hi, Q);
        additivity = std::max({additivity, std::abs(p.grad_grad + q.grad_grad - whole.grad_grad),
                               std::abs(p.lap_lap + q.lap_lap - whole.lap_lap),
                               std::abs(p.hess_hess + q.hess_hess - whole.hess_hess),
                               (p.grad_vec + q.grad_vec - whole.grad_vec).norm()});
    }
    const bool ok = constraint <= 1e-12 && grad_err <= 1e-6 && hess_err <= 1e-4 && quad <= 1e-12 && additivity <= 1e-12;
    return {ok, fmt::format("edge residual {:.1e} (<=1e-12), grad fd {:.1e} (<=1e-6), hess fd {:.1e} (<=1e-4), "
                            "quadrature {:.1e} (<=1e-12), additivity {:.1e} (<=1e-12)",
                            constraint, grad_err, hess_err, quad, additivity)};
}

// ---- 7 -------------------------------------------------------------------------------------------

Outcome field_derivatives()
{
    Config c;
    c.io.normalize = false;
    c.scaffold.base_size = 0.04;
    c.scaffold.num_scales = 3;
    const auto rec = reconstruct_cloud(fixtures::sphere_samples(1500, kCenter, kRadius), c);
    const auto domain = rasterize_domain(rec.hierarchy, 1);
    const double b = c.scaffold.base_size;
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> pick(0, domain.size() - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    int tested = 0, tries = 0;
    while (tested < 1000 && tries < 100000) {
        ++tries;
        const auto cell = domain.cell(pick(rng));
        const Vec3 p = b * Vec3(cell[0] + u(rng), cell[1] + u(rng), cell[2] + u(rng));
        const auto s = rec.field.eval(p);
        if (s.gradient.norm() <= 0.1)
            continue;
        const double h = 1e-6;
        Vec3 fd;
        for (int a = 0; a < 3; ++a) {
            Vec3 e = Vec3::Zero();
            e[a] = h;
            fd[a] = (rec.field.value(p + e) - rec.field.value(p - e)) / (2 * h);
        }
        worst = std::max(worst, (fd - s.gradient).norm() / s.gradient.norm());
        ++tested;
    }
    return {tested == 1000 && worst <= 1e-4,
            fmt::format("{} in-domain points with |grad f|>0.1: max rel err {:.2e} (<=1e-4)", tested, worst)};
}

// ---- 8 -------------------------------------------------------------------------------------------

Eigen::VectorXd random_vec(int n, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i)
        x(i) = u(rng);
    return x;
}

Outcome prior_invariants()
{
    const int C = 8;
    const auto spec = default_basis_spec();
    const auto w = WeightBundle::random(C, 3, spec.free_dimension(), 42);
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> count(1, 40);

    double softmax = 0.0, perm = 0.0;
    for (int v = 0; v < 1000; ++v) {
        std::vector<AttentionPoint> pts(std::size_t(count(rng)));
        for (auto& p : pts)
            p = {random_vec(3, rng) * 0.5, random_vec(C, rng) * 3.0};
        const auto f = random_vec(C, rng);
        const auto r = point_voxel_attention(f, pts, w);
        double sum = 0.0;
        for (double a : r.weights)
            sum += a;
        softmax = std::max(softmax, std::abs(sum - 1.0));
        std::shuffle(pts.begin(), pts.end(), rng);
        perm = std::max(perm, (point_voxel_attention(f, pts, w).feature - r.feature).cwiseAbs().maxCoeff());
    }

    // routing: every count around both thresholds, with and without neighbouring levels
    bool routing = true;
    const Eigen::VectorXd dn = Eigen::VectorXd::Constant(1, 1.0), cur = Eigen::VectorXd::Constant(1, 2.0),
                          up = Eigen::VectorXd::Constant(1, 3.0);
    for (long long n_min : {1LL, 4LL, 10LL})
        for (long long n_max : {n_min + 1, n_min + 7, 32LL}) {
            if (n_max <= n_min)
                continue;
            for (long long n = 0; n <= n_max + 3; ++n) {
                const double expect = n > n_max ? 1.0 : n < n_min ? 3.0 : 2.0;
                routing = routing && select_kernel_feature(dn, cur, up, n, n_min, n_max)(0) == expect;
                routing = routing && select_kernel_feature(std::nullopt, cur, std::nullopt, n, n_min, n_max)(0) == 2.0;
            }
        }

    const auto cloud = fixtures::sphere_samples(800, kCenter, 0.3);
    const auto h = build_hierarchy(cloud, 0.05, 3, 3);
    const auto g0 = embed_features(h, cloud, w);
    const auto routed = multi_layer_conv(g0, h, w, 0, std::numeric_limits<long long>::max());
    const auto plain = sparse_conv(g0, h, w);
    double conv = 0.0;
    for (int s = 1; s <= 3; ++s)
        conv = std::max(conv, (routed.at(s) - plain.at(s)).cwiseAbs().maxCoeff());

    // losses: constructed perfect prediction and uniform prediction on a plane patch
    struct PlaneField {
        FieldSample eval(const Vec3& p, DerivOrder) const
        {
            FieldSample s;
            s.value = p.z() - 0.5;
            s.gradient = Vec3::UnitZ();
            return s;
        }
    } field;
    const auto samples = fixtures::plane_samples(800, 0.5, 0.3, 0.7, 2);
    const auto hs = build_hierarchy(samples, 0.04, 3, 3);
    const auto labels = ground_truth_occupancy(samples, 0.04, 3);
    PriorOutputs perfect;
    for (int s = 1; s <= 3; ++s) {
        const auto n = hs.voxels(s).size();
        perfect.normals.emplace_back(n, Vec3::UnitZ());
        perfect.low_confidence.emplace_back(n, false);
        perfect.basis.emplace_back(n, BasisParams::unit(spec));
        perfect.occupancy_logits.emplace_back(n, kLogitClamp);
    }
    const auto L = loss_components(hs, perfect, &field, labels, samples, {}, TrainingPhase::full);
    auto uniform = perfect;
    for (auto& d : uniform.occupancy_logits)
        std::fill(d.begin(), d.end(), 0.0);
    const auto U = loss_components(hs, uniform, &field, labels, samples, {}, TrainingPhase::full);
    const double ln2_err = std::abs(U.structure / 3.0 - std::numbers::ln2);
    const double zero = std::max({L.structure, L.voxel_normal, L.surface, L.gradient});

    const bool ok = softmax <= 1e-6 && perm <= 1e-6 && routing && conv <= 1e-7 && zero <= 1e-9 && ln2_err <= 1e-9;
    return {ok, fmt::format("softmax |sum-1| {:.1e}, permutation {:.1e}, routing {}, conv vs plain {:.1e}, "
                            "perfect loss {:.1e}, uniform L_struct - ln2 per depth {:.1e}",
                            softmax, perm, routing ? "exact" : "WRONG", conv, zero, ln2_err)};
}

// ---- 9 -------------------------------------------------------------------------------------------

Outcome metrics_self_tests()
{
    const auto sphere = fixtures::icosphere(kCenter, 0.3, 4);
    const auto self = evaluate_meshes(sphere, sphere, MetricsOptions{20000, 0.01, 20000, 0}, "self");
    const bool identities = self.chamfer_l1 == 0.0 && self.chamfer_l2 == 0.0 && self.f_score_percent == 100.0
                         && std::abs(self.normal_consistency_percent - 100.0) <= 1e-9 && self.iou && *self.iou == 1.0;

    // lattice offset by eps: chamfer is eps, f-score flips at tau = eps
    std::vector<Vec3> p, q;
    const double eps = 1e-3;
    for (int i = 0; i < 125; ++i) {
        const Vec3 v(0.1 * (i % 5), 0.1 * ((i / 5) % 5), 0.1 * (i / 25));
        p.push_back(v);
        q.push_back(v + Vec3(eps, 0, 0));
    }
    const auto P = PointCloud::from_positions(p), Qc = PointCloud::from_positions(q);
    const bool offsets = std::abs(chamfer(P, Qc) - eps) <= 1e-15 && f_score(P, Qc, 2 * eps) == 100.0
                      && f_score(P, Qc, 0.5 * eps) == 0.0;

    const auto cube = fixtures::box_mesh(Vec3(0, 0, 0), Vec3(1, 1, 1));
    const auto shifted = fixtures::box_mesh(Vec3(0.5, 0, 0), Vec3(1.5, 1, 1));
    const auto r = iou_estimate(cube, shifted, 100000, 9);
    const bool cube_ok = r.standard_error <= 0.01 && std::abs(r.iou - 1.0 / 3.0) <= 3 * r.standard_error;
    return {identities && offsets && cube_ok,
            fmt::format("self: chamfer {} f {} nc {:.6f} iou {}; offset lattice {}; cube overlap iou {:.4f} "
                        "+- {:.4f} (true 1/3, se<=0.01)",
                        self.chamfer_l1, self.f_score_percent, self.normal_consistency_percent,
                        self.iou ? fmt::format("{}", *self.iou) : "null", offsets ? "ok" : "WRONG", r.iou,
                        r.standard_error)};
}

// ---- 10 ------------------------------------------------------------------------------------------

Outcome determinism()
{
    auto cfg = sphere_config();
    if (!fs::exists(cfg.io.output))
        reconstruct(cfg);
    const auto mesh = slurp(cfg.io.output), report = slurp(cfg.report_path());
    reconstruct(cfg);
    const bool same = slurp(cfg.io.output) == mesh && slurp(cfg.report_path()) == report;
    return {same && !mesh.empty(), fmt::format("mesh {} bytes, report {} bytes, second run {}", mesh.size(),
                                                report.size(), same ? "byte-identical" : "DIFFERS")};
}

} // namespace

int main(int argc, char** argv)
{
    g_work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "svrecon_acceptance";
    fs::create_directories(g_work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"sphere end-to-end", sphere_end_to_end},
        {"plane sign", plane_sign},
        {"system vs dense oracle", system_correctness},
        {"Galerkin optimality", galerkin_optimality},
        {"regularization path", regularization_path},
        {"basis correctness", basis_correctness},
        {"field derivatives", field_derivatives},
        {"prior invariants", prior_invariants},
        {"metrics self-tests", metrics_self_tests},
        {"determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, fmt::format("threw: {}", e.what())};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        fmt::print("{} criterion {:2} {}: {} [{:.1f}s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail,
                   secs);
        std::fflush(stdout);
        failed += !o.pass;
    }
    fmt::print("{}/{} criteria passed\n", criteria.size() - std::size_t(failed), criteria.size());
    return failed == 0 ? 0 : 1;
}
