#ifndef SVRECON_METRICS_HPP
#define SVRECON_METRICS_HPP

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "svrecon/error.hpp"
#include "svrecon/geometry.hpp"
#include "svrecon/spatial_index.hpp"

namespace svrecon {

/// Area-weighted uniform samples with face normals; deterministic per seed.
inline PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed)
{
    if (n == 0)
        throw Error(ErrorKind::InvalidConfig, "sample count must be positive");
    mesh.validate();
    std::vector<double> cdf;
    cdf.reserve(mesh.triangles.size());
    double total = 0.0;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        total += mesh.triangle_area(t);
        cdf.push_back(total);
    }
    if (mesh.triangles.empty() || !(total > 0.0))
        throw Error(ErrorKind::DegenerateMesh, "mesh has no area to sample");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<OrientedPoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = u01(rng) * total;
        auto t = std::size_t(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
        t = std::min(t, cdf.size() - 1);
        const double s = std::sqrt(u01(rng)), w = u01(rng);
        const auto& tri = mesh.triangles[t];
        const Vec3 p = (1.0 - s) * mesh.vertices[tri[0]] + s * (1.0 - w) * mesh.vertices[tri[1]]
                     + s * w * mesh.vertices[tri[2]];
        out.push_back({p, mesh.face_normal(t), 0.0});
    }
    return PointCloud(std::move(out));
}

enum class ChamferNorm { L1, L2 };

namespace detail {

inline void require_nonempty(const PointCloud& a, const PointCloud& b)
{
    if (a.empty() || b.empty())
        throw Error(ErrorKind::EmptyCloud, "metric needs non-empty clouds");
}

} // namespace detail

/// Symmetric mean nearest-neighbor distance (L1: distance, L2: squared distance), raw units.
inline double chamfer(const PointCloud& pred, const PointCloud& gt, ChamferNorm norm = ChamferNorm::L1)
{
    detail::require_nonempty(pred, gt);
    const PointIndex ip(pred.positions()), ig(gt.positions());
    auto one_way = [&](const PointCloud& from, const PointIndex& to) {
        double s = 0.0;
        for (const auto& p : from.points()) {
            const double d = (to.point(to.nearest(p.position).first) - p.position).norm();
            s += norm == ChamferNorm::L1 ? d : d * d;
        }
        return s / double(from.size());
    };
    return 0.5 * (one_way(pred, ig) + one_way(gt, ip));
}

/// Percent F-score at distance threshold tau.
inline double f_score(const PointCloud& pred, const PointCloud& gt, double tau)
{
    if (!(tau > 0.0))
        throw Error(ErrorKind::InvalidConfig, "f-score threshold must be positive");
    detail::require_nonempty(pred, gt);
    const PointIndex ip(pred.positions()), ig(gt.positions());
    auto frac = [&](const PointCloud& from, const PointIndex& to) {
        std::size_t hit = 0;
        for (const auto& p : from.points())
            if (to.nearest(p.position).second <= tau)
                ++hit;
        return double(hit) / double(from.size());
    };
    const double precision = frac(pred, ig), recall = frac(gt, ip);
    return precision + recall > 0.0 ? 200.0 * precision * recall / (precision + recall) : 0.0;
}

/// Percent symmetric mean |cos| between each sample normal and its nearest neighbor's normal.
inline double normal_consistency(const PointCloud& pred, const PointCloud& gt)
{
    detail::require_nonempty(pred, gt);
    if (!pred.has_normals() || !gt.has_normals())
        throw Error(ErrorKind::MissingNormals, "normal consistency needs normals on both clouds");
    const PointIndex ip(pred.positions()), ig(gt.positions());
    auto one_way = [&](const PointCloud& from, const PointCloud& to, const PointIndex& idx) {
        double s = 0.0;
        for (const auto& p : from.points())
            s += std::abs(p.normal->dot(*to[idx.nearest(p.position).first].normal));
        return s / double(from.size());
    };
    return 50.0 * (one_way(pred, gt, ig) + one_way(gt, pred, ip));
}

/// Ray-parity inside test against a triangle soup; rays run along +axis.
class InsideTester {
public:
    InsideTester(const TriangleMesh& mesh, int axis = 2) : mesh_(mesh), axis_(axis)
    {
        u_ = (axis + 1) % 3;
        v_ = (axis + 2) % 3;
        if (mesh.vertices.empty())
            return;
        lo_ = hi_ = Eigen::Vector2d(mesh.vertices[0][u_], mesh.vertices[0][v_]);
        for (const auto& p : mesh.vertices) {
            lo_ = lo_.cwiseMin(Eigen::Vector2d(p[u_], p[v_]));
            hi_ = hi_.cwiseMax(Eigen::Vector2d(p[u_], p[v_]));
        }
        res_ = std::max<std::size_t>(1, std::size_t(std::sqrt(double(mesh.triangles.size()))));
        buckets_.assign(res_ * res_, {});
        for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
            const auto& tri = mesh.triangles[t];
            Eigen::Vector2d a = proj(mesh.vertices[tri[0]]), b = a;
            for (int k = 1; k < 3; ++k) {
                a = a.cwiseMin(proj(mesh.vertices[tri[std::size_t(k)]]));
                b = b.cwiseMax(proj(mesh.vertices[tri[std::size_t(k)]]));
            }
            const auto [i0, j0] = bucket(a);
            const auto [i1, j1] = bucket(b);
            for (std::size_t j = j0; j <= j1; ++j)
                for (std::size_t i = i0; i <= i1; ++i)
                    buckets_[j * res_ + i].push_back(std::uint32_t(t));
        }
    }

    /// Number of triangles crossed by the ray from q along +axis.
    std::size_t crossings(const Vec3& q) const
    {
        const Eigen::Vector2d p = proj(q);
        if (buckets_.empty() || (p.array() < lo_.array()).any() || (p.array() > hi_.array()).any())
            return 0;
        const auto [i, j] = bucket(p);
        std::size_t count = 0;
        for (auto t : buckets_[j * res_ + i]) {
            const auto& tri = mesh_.triangles[t];
            Vec3 A = mesh_.vertices[tri[0]], B = mesh_.vertices[tri[1]], C = mesh_.vertices[tri[2]];
            Eigen::Vector2d a = proj(A), b = proj(B), c = proj(C);
            double area = cross(b - a, c - a);
            if (area == 0.0)
                continue;
            if (area < 0.0) {
                std::swap(b, c);
                std::swap(B, C);
                area = -area;
            }
            if (!covers(a, b, p) || !covers(b, c, p) || !covers(c, a, p))
                continue;
            const double wa = cross(b - p, c - p) / area, wb = cross(c - p, a - p) / area, wc = 1.0 - wa - wb;
            const double h = wa * A[axis_] + wb * B[axis_] + wc * C[axis_];
            if (h > q[axis_])
                ++count;
        }
        return count;
    }

    bool inside(const Vec3& q) const { return crossings(q) % 2 == 1; }

private:
    Eigen::Vector2d proj(const Vec3& p) const { return {p[u_], p[v_]}; }

    static double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

    /// Half-open edge rule so a point on a shared edge belongs to exactly one side.
    static bool covers(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p)
    {
        // evaluate from the lexicographically smaller endpoint so shared edges agree bit-for-bit
        const bool flip = b.x() < a.x() || (b.x() == a.x() && b.y() < a.y());
        const double w = flip ? -cross(a - b, p - b) : cross(b - a, p - a);
        if (w != 0.0)
            return w > 0.0;
        const Eigen::Vector2d d = b - a;
        return d.y() > 0.0 || (d.y() == 0.0 && d.x() < 0.0);
    }

    std::pair<std::size_t, std::size_t> bucket(const Eigen::Vector2d& p) const
    {
        auto cell = [&](double x, double lo, double hi) {
            if (!(hi > lo))
                return std::size_t(0);
            const double f = (x - lo) / (hi - lo) * double(res_);
            return std::min(res_ - 1, std::size_t(std::max(0.0, f)));
        };
        return {cell(p.x(), lo_.x(), hi_.x()), cell(p.y(), lo_.y(), hi_.y())};
    }

    TriangleMesh mesh_; // owned: testers outlive temporaries
    int axis_, u_ = 0, v_ = 1;
    Eigen::Vector2d lo_ = Eigen::Vector2d::Zero(), hi_ = Eigen::Vector2d::Zero();
    std::size_t res_ = 1;
    std::vector<std::vector<std::uint32_t>> buckets_;
};

/// Every undirected edge is shared by exactly two triangles.
inline bool is_edge_manifold_closed(const TriangleMesh& mesh)
{
    if (mesh.triangles.empty())
        return false;
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> count;
    for (const auto& t : mesh.triangles)
        for (int k = 0; k < 3; ++k) {
            auto a = t[std::size_t(k)], b = t[std::size_t((k + 1) % 3)];
            ++count[{std::min(a, b), std::max(a, b)}];
        }
    return std::all_of(count.begin(), count.end(), [](const auto& kv) { return kv.second == 2; });
}

/// Closed edge-manifold mesh whose +z and +x ray parities agree on a probe set.
inline bool is_watertight(const TriangleMesh& mesh, std::size_t probes = 256, std::uint64_t seed = 7)
{
    if (!is_edge_manifold_closed(mesh))
        return false;
    Vec3 lo = mesh.vertices[0], hi = lo;
    for (const auto& p : mesh.vertices) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const InsideTester tz(mesh, 2), tx(mesh, 0);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (std::size_t i = 0; i < probes; ++i) {
        const Vec3 q(lo.x() + u01(rng) * (hi.x() - lo.x()), lo.y() + u01(rng) * (hi.y() - lo.y()),
                     lo.z() + u01(rng) * (hi.z() - lo.z()));
        if (tz.inside(q) != tx.inside(q))
            return false;
    }
    return true;
}

struct IouResult {
    double iou = 0.0;
    double standard_error = 0.0;
};

/// Monte-Carlo volumetric IoU over n uniform samples of the joint bounding box.
inline IouResult iou_estimate(const TriangleMesh& pred, const TriangleMesh& gt, std::size_t n, std::uint64_t seed)
{
    if (n < 1000)
        throw Error(ErrorKind::InvalidConfig, "IoU needs at least 1000 samples");
    if (!is_watertight(pred) || !is_watertight(gt))
        throw Error(ErrorKind::NonWatertight, "IoU requires watertight meshes");
    Vec3 lo = pred.vertices[0], hi = lo;
    for (const auto* m : {&pred, &gt})
        for (const auto& p : m->vertices) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
    const InsideTester tp(pred), tg(gt);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 q(lo.x() + u01(rng) * (hi.x() - lo.x()), lo.y() + u01(rng) * (hi.y() - lo.y()),
                     lo.z() + u01(rng) * (hi.z() - lo.z()));
        const bool a = tp.inside(q), b = tg.inside(q);
        inter += (a && b);
        uni += (a || b);
    }
    IouResult r;
    if (uni == 0)
        return r;
    r.iou = double(inter) / double(uni);
    r.standard_error = std::sqrt(r.iou * (1.0 - r.iou) / double(uni));
    return r;
}

inline double iou(const TriangleMesh& pred, const TriangleMesh& gt, std::size_t n, std::uint64_t seed)
{
    return iou_estimate(pred, gt, n, seed).iou;
}

struct MetricsOptions {
    std::size_t surface_samples = 30000;
    double f_score_tau = 0.01;
    std::size_t iou_samples = 100000;
    std::uint64_t seed = 0;
};

struct MetricsReport {
    std::string name;
    double chamfer_l1 = 0.0;        ///< x 1e3
    double chamfer_l2 = 0.0;        ///< x 1e5
    double f_score_percent = 0.0;
    double normal_consistency_percent = 0.0;
    std::optional<double> iou;      ///< empty when a mesh is not watertight
    double iou_standard_error = 0.0;
    MetricsOptions options;

    static std::string csv_header()
    {
        return "name,chamfer_l1,chamfer_l2,f_score,normal_consistency,iou,iou_stderr,f_score_tau,surface_samples,"
               "iou_samples,seed";
    }

    std::string csv_row() const
    {
        return fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{},{:.9g},{:.9g},{},{},{}", name, chamfer_l1, chamfer_l2,
                           f_score_percent, normal_consistency_percent,
                           iou ? fmt::format("{:.9g}", *iou) : std::string("null"), iou_standard_error,
                           options.f_score_tau, options.surface_samples, options.iou_samples, options.seed);
    }
};

/// Samples both meshes and computes every metric; IoU is left empty for non-watertight input.
inline MetricsReport evaluate_meshes(const TriangleMesh& pred, const TriangleMesh& gt, const MetricsOptions& opt,
                                     std::string name = "")
{
    const auto sp = sample_surface(pred, opt.surface_samples, opt.seed);
    // same seed on both sides: a mesh scored against itself gets identical samples
    const auto sg = sample_surface(gt, opt.surface_samples, opt.seed);
    MetricsReport r;
    r.name = std::move(name);
    r.options = opt;
    r.chamfer_l1 = 1e3 * chamfer(sp, sg, ChamferNorm::L1);
    r.chamfer_l2 = 1e5 * chamfer(sp, sg, ChamferNorm::L2);
    r.f_score_percent = f_score(sp, sg, opt.f_score_tau);
    r.normal_consistency_percent = normal_consistency(sp, sg);
    if (is_watertight(pred) && is_watertight(gt)) {
        const auto est = iou_estimate(pred, gt, opt.iou_samples, opt.seed + 2);
        r.iou = est.iou;
        r.iou_standard_error = est.standard_error;
    }
    return r;
}

} // namespace svrecon

#endif // SVRECON_METRICS_HPP
