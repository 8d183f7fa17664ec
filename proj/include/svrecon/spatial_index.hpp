#ifndef SVRECON_SPATIAL_INDEX_HPP
#define SVRECON_SPATIAL_INDEX_HPP

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <limits>
#include <utility>
#include <vector>

#include "svrecon/geometry.hpp"

namespace svrecon {

/// Nearest / k-nearest queries over a fixed point set.
class PointIndex {
    using BPoint = boost::geometry::model::point<double, 3, boost::geometry::cs::cartesian>;
    using Value = std::pair<BPoint, std::uint32_t>;
    using Tree = boost::geometry::index::rtree<Value, boost::geometry::index::rstar<16>>;

public:
    PointIndex() = default;

    explicit PointIndex(const std::vector<Vec3>& points) : points_(points)
    {
        std::vector<Value> values;
        values.reserve(points.size());
        for (std::size_t i = 0; i < points.size(); ++i)
            values.emplace_back(to_b(points[i]), std::uint32_t(i));
        tree_ = Tree(values.begin(), values.end());
    }

    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    const Vec3& point(std::size_t i) const { return points_[i]; }

    /// Index and Euclidean distance of the nearest point; ties resolved by lowest index.
    std::pair<std::uint32_t, double> nearest(const Vec3& q) const
    {
        auto r = knn(q, 1);
        return {r.front(), (points_[r.front()] - q).norm()};
    }

    /// k nearest indices sorted by (distance, index).
    std::vector<std::uint32_t> knn(const Vec3& q, std::size_t k) const
    {
        k = std::min(k, points_.size());
        std::vector<Value> hits;
        hits.reserve(k);
        tree_.query(boost::geometry::index::nearest(to_b(q), unsigned(k)), std::back_inserter(hits));
        std::vector<std::pair<double, std::uint32_t>> ranked;
        ranked.reserve(hits.size());
        for (const auto& h : hits)
            ranked.emplace_back((points_[h.second] - q).squaredNorm(), h.second);
        std::sort(ranked.begin(), ranked.end());
        std::vector<std::uint32_t> out;
        out.reserve(ranked.size());
        for (const auto& r : ranked)
            out.push_back(r.second);
        return out;
    }

private:
    static BPoint to_b(const Vec3& p) { return BPoint(p.x(), p.y(), p.z()); }

    std::vector<Vec3> points_;
    Tree tree_;
};

} // namespace svrecon

#endif // SVRECON_SPATIAL_INDEX_HPP
