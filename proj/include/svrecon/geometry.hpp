#ifndef SVRECON_GEOMETRY_HPP
#define SVRECON_GEOMETRY_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "svrecon/error.hpp"

namespace svrecon {

using Vec3 = Eigen::Vector3d;
using Vec3i = Eigen::Vector3i;

inline constexpr double kUnitTolerance = 1e-6;

inline bool is_finite(const Vec3& v)
{
    return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

struct OrientedPoint {
    Vec3 position = Vec3::Zero();
    std::optional<Vec3> normal;
    /// Target field value at this sample; 0 asserts the point lies on the surface.
    double screening = 0.0;
};

struct BoundingBox {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    Vec3 extent() const { return max - min; }
    Vec3 center() const { return 0.5 * (min + max); }
};

/// Ordered sample set with a tight bounding box. Immutable once built.
class PointCloud {
public:
    PointCloud() = default;

    explicit PointCloud(std::vector<OrientedPoint> points) : points_(std::move(points))
    {
        if (points_.empty())
            return;
        bbox_.min = bbox_.max = points_.front().position;
        for (const auto& p : points_) {
            bbox_.min = bbox_.min.cwiseMin(p.position);
            bbox_.max = bbox_.max.cwiseMax(p.position);
        }
    }

    static PointCloud from_positions(const std::vector<Vec3>& positions)
    {
        std::vector<OrientedPoint> pts;
        pts.reserve(positions.size());
        for (const auto& p : positions)
            pts.push_back({p, std::nullopt, 0.0});
        return PointCloud(std::move(pts));
    }

    static PointCloud from_oriented(const std::vector<Vec3>& positions, const std::vector<Vec3>& normals)
    {
        if (positions.size() != normals.size())
            throw Error(ErrorKind::ShapeMismatch, "positions and normals differ in length");
        std::vector<OrientedPoint> pts;
        pts.reserve(positions.size());
        for (std::size_t i = 0; i < positions.size(); ++i)
            pts.push_back({positions[i], normals[i].normalized(), 0.0});
        return PointCloud(std::move(pts));
    }

    const std::vector<OrientedPoint>& points() const { return points_; }
    const OrientedPoint& operator[](std::size_t i) const { return points_[i]; }
    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    const BoundingBox& bbox() const { return bbox_; }

    bool has_normals() const
    {
        return !points_.empty()
            && std::all_of(points_.begin(), points_.end(), [](const auto& p) { return p.normal.has_value(); });
    }

    std::vector<Vec3> positions() const
    {
        std::vector<Vec3> out;
        out.reserve(points_.size());
        for (const auto& p : points_)
            out.push_back(p.position);
        return out;
    }

    /// Copy with normals replaced (renormalized to unit length).
    PointCloud with_normals(const std::vector<Vec3>& normals) const
    {
        if (normals.size() != points_.size())
            throw Error(ErrorKind::ShapeMismatch, "normal count differs from point count");
        auto pts = points_;
        for (std::size_t i = 0; i < pts.size(); ++i)
            pts[i].normal = normals[i].normalized();
        return PointCloud(std::move(pts));
    }

private:
    std::vector<OrientedPoint> points_;
    BoundingBox bbox_;
};

using Triangle = std::array<std::uint32_t, 3>;

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<Triangle> triangles;
    std::vector<Vec3> vertex_normals; // empty or one per vertex

    bool has_vertex_normals() const { return !vertex_normals.empty(); }

    void validate() const
    {
        if (!vertex_normals.empty() && vertex_normals.size() != vertices.size())
            throw Error(ErrorKind::ShapeMismatch, "vertex normal count differs from vertex count");
        const auto n = vertices.size();
        for (const auto& t : triangles) {
            if (t[0] >= n || t[1] >= n || t[2] >= n)
                throw Error(ErrorKind::DegenerateMesh, "triangle index out of range");
            if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
                throw Error(ErrorKind::DegenerateMesh, "triangle repeats a vertex index");
        }
    }

    double triangle_area(std::size_t t) const
    {
        const auto& tri = triangles[t];
        return 0.5 * (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).norm();
    }

    Vec3 face_normal(std::size_t t) const
    {
        const auto& tri = triangles[t];
        return (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).normalized();
    }
};

/// Uniform scale + translation, p' = scale * p + translation.
struct Transform {
    double scale = 1.0;
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return scale * p + translation; }
    Vec3 apply_inverse(const Vec3& p) const { return (p - translation) / scale; }

    Transform inverse() const { return {1.0 / scale, -translation / scale}; }

    /// (*this) after `first`.
    Transform compose(const Transform& first) const
    {
        return {scale * first.scale, scale * first.translation + translation};
    }
};

/// Maps the cloud into [padding, 1 - padding]^3 with one uniform scale, centered at 0.5.
/// The returned transform maps input coordinates to the normalized ones; use
/// `apply_inverse` to go back. Zero-extent clouds are translated only.
inline std::pair<PointCloud, Transform> normalize_to_unit_cube(const PointCloud& cloud, double padding)
{
    if (cloud.empty())
        throw Error(ErrorKind::EmptyCloud, "cannot normalize an empty cloud");
    if (!(padding >= 0.0 && padding < 0.5))
        throw Error(ErrorKind::InvalidConfig, "padding must lie in [0, 0.5)");

    const auto& box = cloud.bbox();
    const double extent = box.extent().maxCoeff();
    Transform t;
    t.scale = extent > 0.0 ? (1.0 - 2.0 * padding) / extent : 1.0;
    t.translation = Vec3::Constant(0.5) - t.scale * box.center();

    std::vector<OrientedPoint> pts = cloud.points();
    for (auto& p : pts)
        p.position = t.apply(p.position);
    return {PointCloud(std::move(pts)), t};
}

inline TriangleMesh transform_mesh(const TriangleMesh& mesh, const Transform& t)
{
    TriangleMesh out = mesh;
    for (auto& v : out.vertices)
        v = t.apply(v);
    return out;
}

} // namespace svrecon

#endif // SVRECON_GEOMETRY_HPP
