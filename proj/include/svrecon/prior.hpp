#ifndef SVRECON_PRIOR_HPP
#define SVRECON_PRIOR_HPP

#include <Eigen/Core>
#include <boost/crc.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "svrecon/basis.hpp"
#include "svrecon/error.hpp"
#include "svrecon/geometry.hpp"
#include "svrecon/voxel.hpp"

namespace svrecon {

/// Named dense array, row-major.
struct NamedArray {
    std::vector<std::size_t> dims;
    std::vector<double> data;

    std::size_t numel() const
    {
        std::size_t n = 1;
        for (auto d : dims)
            n *= d;
        return n;
    }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Two-layer perceptron y = W2 relu(W1 x + b1) + b2.
struct Mlp {
    Eigen::MatrixXd W1, W2;
    Eigen::VectorXd b1, b2;

    Eigen::VectorXd operator()(const Eigen::VectorXd& x) const
    {
        if (x.size() != W1.cols())
            throw Error(ErrorKind::ShapeMismatch, "mlp input width mismatch");
        return W2 * (W1 * x + b1).cwiseMax(0.0) + b2;
    }
};

/// Inputs of the voxel embedding: mean offset (3), mean normal (3), log1p(count).
inline constexpr int kEmbedInputs = 7;
/// Inputs of the point embedding: offset (3), normal (3).
inline constexpr int kPointInputs = 6;

/// Every learned array of the prior, keyed by name. See docs/weight_bundle_format.md.
class WeightBundle {
public:
    WeightBundle() = default;

    int channels() const { return channels_; }
    int num_scales() const { return num_scales_; }
    int free_dimension() const { return free_dim_; }
    const std::map<std::string, NamedArray>& arrays() const { return arrays_; }

    void set(const std::string& name, NamedArray a)
    {
        if (a.data.size() != a.numel())
            throw Error(ErrorKind::ShapeMismatch, "array data size differs from its dims: " + name);
        arrays_[name] = std::move(a);
    }

    const NamedArray& at(const std::string& name) const
    {
        auto it = arrays_.find(name);
        if (it == arrays_.end())
            throw Error(ErrorKind::ShapeMismatch, "weight bundle lacks array " + name);
        return it->second;
    }

    Eigen::MatrixXd matrix(const std::string& name) const
    {
        const auto& a = at(name);
        if (a.dims.size() != 2)
            throw Error(ErrorKind::ShapeMismatch, name + " is not a matrix");
        return Eigen::Map<const RowMatrix>(a.data.data(), Eigen::Index(a.dims[0]), Eigen::Index(a.dims[1]));
    }

    Eigen::VectorXd vector(const std::string& name) const
    {
        const auto& a = at(name);
        if (a.dims.size() != 1)
            throw Error(ErrorKind::ShapeMismatch, name + " is not a vector");
        return Eigen::Map<const Eigen::VectorXd>(a.data.data(), Eigen::Index(a.dims[0]));
    }

    /// Slice o of a [27, out, in] kernel.
    Eigen::MatrixXd kernel(const std::string& name, int o) const
    {
        const auto& a = at(name);
        if (a.dims.size() != 3 || a.dims[0] != 27)
            throw Error(ErrorKind::ShapeMismatch, name + " is not a 27-offset kernel");
        const std::size_t slab = a.dims[1] * a.dims[2];
        return Eigen::Map<const RowMatrix>(a.data.data() + std::size_t(o) * slab, Eigen::Index(a.dims[1]),
                                           Eigen::Index(a.dims[2]));
    }

    Mlp mlp(const std::string& prefix) const
    {
        return {matrix(prefix + ".W1"), matrix(prefix + ".W2"), vector(prefix + ".b1"), vector(prefix + ".b2")};
    }

    static std::string conv_name(int scale) { return fmt::format("conv.s{}", scale); }

    /// Expected dims of every array for the given layout.
    static std::map<std::string, std::vector<std::size_t>> layout(int channels, int num_scales, int free_dim)
    {
        const auto C = std::size_t(channels);
        std::map<std::string, std::vector<std::size_t>> out;
        auto add_mlp = [&](const std::string& p, std::size_t in, std::size_t hidden, std::size_t outw) {
            out[p + ".W1"] = {hidden, in};
            out[p + ".b1"] = {hidden};
            out[p + ".W2"] = {outw, hidden};
            out[p + ".b2"] = {outw};
        };
        add_mlp("embed", kEmbedInputs, C, C);
        add_mlp("point", kPointInputs, C, C);
        for (int s = 1; s <= num_scales; ++s)
            out[conv_name(s)] = {27, C, C};
        add_mlp("attn.q", C, C, C);
        add_mlp("attn.u", C, C, C);
        add_mlp("attn.k", C, C, C);
        add_mlp("attn.pos", 3, C, C);
        add_mlp("attn.w", C, C, 1);
        add_mlp("head.normal", C, C, 3);
        add_mlp("head.basis", C, C, 3 * std::size_t(free_dim));
        add_mlp("head.occupancy", C, C, 1);
        return out;
    }

    /// Checks that every expected array is present with the expected dims and finite values.
    void validate() const
    {
        const auto expected = layout(channels_, num_scales_, free_dim_);
        if (channels_ < 1 || num_scales_ < 1 || free_dim_ < 1)
            throw Error(ErrorKind::ShapeMismatch, "weight bundle header dims must be positive");
        for (const auto& [name, dims] : expected) {
            if (at(name).dims != dims)
                throw Error(ErrorKind::ShapeMismatch, "array " + name + " has unexpected dims");
        }
        for (const auto& [name, a] : arrays_) {
            if (name != "meta" && !expected.count(name))
                throw Error(ErrorKind::ShapeMismatch, "unexpected array " + name);
            for (double v : a.data)
                if (!std::isfinite(v))
                    throw Error(ErrorKind::InvalidConfig, "non-finite weight in " + name);
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases; deterministic per seed.
    static WeightBundle random(int channels, int num_scales, int free_dim, std::uint64_t seed)
    {
        WeightBundle w = zeros(channels, num_scales, free_dim);
        std::mt19937_64 rng(seed);
        for (auto& [name, a] : w.arrays_) {
            if (name == "meta" || a.dims.size() == 1)
                continue;
            const double bound = 1.0 / std::sqrt(double(a.dims.back()));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (auto& v : a.data)
                v = u(rng);
        }
        return w;
    }

    static WeightBundle zeros(int channels, int num_scales, int free_dim)
    {
        WeightBundle w;
        w.channels_ = channels;
        w.num_scales_ = num_scales;
        w.free_dim_ = free_dim;
        for (const auto& [name, dims] : layout(channels, num_scales, free_dim)) {
            NamedArray a;
            a.dims = dims;
            a.data.assign(a.numel(), 0.0);
            w.arrays_[name] = std::move(a);
        }
        w.arrays_["meta"] = NamedArray{{3}, {double(channels), double(num_scales), double(free_dim)}};
        return w;
    }

    static WeightBundle from_arrays(std::map<std::string, NamedArray> arrays)
    {
        WeightBundle w;
        auto it = arrays.find("meta");
        if (it == arrays.end() || it->second.dims != std::vector<std::size_t>{3})
            throw Error(ErrorKind::ShapeMismatch, "weight bundle lacks its meta array");
        w.channels_ = int(it->second.data[0]);
        w.num_scales_ = int(it->second.data[1]);
        w.free_dim_ = int(it->second.data[2]);
        w.arrays_ = std::move(arrays);
        w.validate();
        return w;
    }

private:
    int channels_ = 0;
    int num_scales_ = 0;
    int free_dim_ = 0;
    std::map<std::string, NamedArray> arrays_;
};

namespace detail {

inline constexpr char kBundleMagic[4] = {'S', 'V', 'R', 'W'};
inline constexpr std::uint32_t kBundleVersion = 1;

template <class T>
void put_le(std::string& out, T v)
{
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(std::begin(b), std::end(b));
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos)
{
    if (pos + sizeof(T) > in.size())
        throw ParseError(0, "weight bundle truncated");
    unsigned char b[sizeof(T)];
    std::memcpy(b, in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(std::begin(b), std::end(b));
    pos += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

inline std::uint32_t crc32(const std::string& bytes)
{
    boost::crc_32_type crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

} // namespace detail

inline std::string serialize_weights(const WeightBundle& w)
{
    std::string out(detail::kBundleMagic, 4);
    detail::put_le<std::uint32_t>(out, detail::kBundleVersion);
    detail::put_le<std::uint32_t>(out, std::uint32_t(w.arrays().size()));
    for (const auto& [name, a] : w.arrays()) {
        detail::put_le<std::uint32_t>(out, std::uint32_t(name.size()));
        out += name;
        detail::put_le<std::uint32_t>(out, std::uint32_t(a.dims.size()));
        for (auto d : a.dims)
            detail::put_le<std::uint64_t>(out, d);
        for (double v : a.data)
            detail::put_le<double>(out, v);
    }
    detail::put_le<std::uint32_t>(out, detail::crc32(out));
    return out;
}

inline WeightBundle deserialize_weights(const std::string& bytes)
{
    if (bytes.size() < 16 || bytes.compare(0, 4, detail::kBundleMagic, 4) != 0)
        throw ParseError(0, "not a weight bundle");
    std::size_t tail = bytes.size() - 4;
    const std::string body = bytes.substr(0, tail);
    if (detail::get_le<std::uint32_t>(bytes, tail) != detail::crc32(body))
        throw Error(ErrorKind::ChecksumMismatch, "weight bundle checksum mismatch");
    std::size_t pos = 4;
    if (detail::get_le<std::uint32_t>(body, pos) != detail::kBundleVersion)
        throw ParseError(0, "unsupported weight bundle version");
    const auto count = detail::get_le<std::uint32_t>(body, pos);
    std::map<std::string, NamedArray> arrays;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = detail::get_le<std::uint32_t>(body, pos);
        if (pos + len > body.size())
            throw ParseError(0, "weight bundle truncated");
        std::string name = body.substr(pos, len);
        pos += len;
        NamedArray a;
        const auto rank = detail::get_le<std::uint32_t>(body, pos);
        if (rank > 8)
            throw ParseError(0, "implausible array rank");
        for (std::uint32_t r = 0; r < rank; ++r)
            a.dims.push_back(std::size_t(detail::get_le<std::uint64_t>(body, pos)));
        const std::size_t n = a.numel();
        if (n > (body.size() - pos) / 8)
            throw ParseError(0, "weight bundle truncated");
        a.data.resize(n);
        for (auto& v : a.data)
            v = detail::get_le<double>(body, pos);
        arrays.emplace(std::move(name), std::move(a));
    }
    if (pos != body.size())
        throw ParseError(0, "trailing bytes in weight bundle");
    return WeightBundle::from_arrays(std::move(arrays));
}

inline void save_weights(const WeightBundle& w, const std::filesystem::path& path)
{
    const auto bytes = serialize_weights(w);
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(bytes.data(), std::streamsize(bytes.size())))
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
}

inline WeightBundle load_weights(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw Error(ErrorKind::FileNotFound, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_weights(bytes);
}

/// Per-voxel features, one C x n matrix per scale with columns in h.voxels(s) order.
struct FeatureGrid {
    std::vector<Eigen::MatrixXd> scales;

    const Eigen::MatrixXd& at(int scale) const { return scales.at(std::size_t(scale - 1)); }
};

namespace detail {

inline std::size_t voxel_position(const SparseVoxelHierarchy& h, const VoxelRecord* rec)
{
    return std::size_t(rec - h.voxels(rec->key.scale).data());
}

inline CellIndex offset_of(int o) { return {o % 3 - 1, (o / 3) % 3 - 1, o / 9 - 1}; }

} // namespace detail

/// Kernel input for a neighbor holding N_vj points: the finer-scale feature when N_vj > N_max,
/// the coarser one when N_vj < N_min, otherwise (including the boundaries) the current one.
/// A missing level falls back to the current feature.
inline Eigen::VectorXd select_kernel_feature(const std::optional<Eigen::VectorXd>& f_down, const Eigen::VectorXd& f_cur,
                                             const std::optional<Eigen::VectorXd>& f_up, long long n_vj, long long n_min,
                                             long long n_max)
{
    if (!(n_min < n_max))
        throw Error(ErrorKind::InvalidConfig, "N_min must be below N_max");
    if (n_vj > n_max)
        return f_down ? *f_down : f_cur;
    if (n_vj < n_min)
        return f_up ? *f_up : f_cur;
    return f_cur;
}

/// Initial voxel features from the points each voxel holds.
inline FeatureGrid embed_features(const SparseVoxelHierarchy& h, const PointCloud& cloud, const WeightBundle& w)
{
    const Mlp embed = w.mlp("embed");
    FeatureGrid g;
    for (int s = 1; s <= h.num_scales(); ++s) {
        const auto& vox = h.voxels(s);
        Eigen::MatrixXd F(w.channels(), Eigen::Index(vox.size()));
        const double e = h.edge(s);
        for (std::size_t i = 0; i < vox.size(); ++i) {
            Eigen::VectorXd x = Eigen::VectorXd::Zero(kEmbedInputs);
            Vec3 d = Vec3::Zero(), n = Vec3::Zero();
            for (auto p : vox[i].points) {
                d += (cloud[p].position - vox[i].centroid) / e;
                if (cloud[p].normal)
                    n += *cloud[p].normal;
            }
            if (!vox[i].points.empty()) {
                d /= double(vox[i].points.size());
                n /= double(vox[i].points.size());
            }
            x << d, n, std::log1p(double(vox[i].point_count));
            F.col(Eigen::Index(i)) = embed(x);
        }
        g.scales.push_back(std::move(F));
    }
    return g;
}

namespace detail {

inline void check_grid(const FeatureGrid& grid, const SparseVoxelHierarchy& h, const WeightBundle& w)
{
    if (int(grid.scales.size()) != h.num_scales() || h.num_scales() > w.num_scales())
        throw Error(ErrorKind::ShapeMismatch, "feature grid scale count differs from scaffold");
    for (int s = 1; s <= h.num_scales(); ++s)
        if (grid.at(s).rows() != w.channels() || grid.at(s).cols() != Eigen::Index(h.voxels(s).size()))
            throw Error(ErrorKind::ShapeMismatch, "feature grid shape differs from kernel or scaffold");
}

} // namespace detail

/// One layer of count-routed sparse convolution with a residual connection:
/// F_i + sum over the 27 offsets of W_s(o) * select_kernel_feature(neighbor).
inline FeatureGrid multi_layer_conv(const FeatureGrid& grid, const SparseVoxelHierarchy& h, const WeightBundle& w,
                                    long long n_min, long long n_max)
{
    detail::check_grid(grid, h, w);
    FeatureGrid out = grid;
    for (int s = 1; s <= h.num_scales(); ++s) {
        std::array<Eigen::MatrixXd, 27> W;
        for (int o = 0; o < 27; ++o)
            W[std::size_t(o)] = w.kernel(WeightBundle::conv_name(s), o);
        const auto& vox = h.voxels(s);
        for (std::size_t i = 0; i < vox.size(); ++i) {
            Eigen::VectorXd acc = grid.at(s).col(Eigen::Index(i));
            for (int o = 0; o < 27; ++o) {
                const auto off = detail::offset_of(o);
                const VoxelKey nk{s, {vox[i].key.ijk[0] + off[0], vox[i].key.ijk[1] + off[1], vox[i].key.ijk[2] + off[2]}};
                const auto* nb = h.find(nk);
                if (!nb)
                    continue;
                const Eigen::VectorXd cur = grid.at(s).col(Eigen::Index(detail::voxel_position(h, nb)));
                std::optional<Eigen::VectorXd> down, up;
                if (s > 1) {
                    Eigen::VectorXd sum = Eigen::VectorXd::Zero(w.channels());
                    int found = 0;
                    for (int c = 0; c < 8; ++c) {
                        const VoxelKey ck{s - 1, {2 * nk.ijk[0] + (c & 1), 2 * nk.ijk[1] + ((c >> 1) & 1),
                                                  2 * nk.ijk[2] + ((c >> 2) & 1)}};
                        if (const auto* child = h.find(ck)) {
                            sum += grid.at(s - 1).col(Eigen::Index(detail::voxel_position(h, child)));
                            ++found;
                        }
                    }
                    if (found > 0)
                        down = sum / double(found);
                }
                if (s < h.num_scales())
                    if (const auto* parent = h.find(nk.parent()))
                        up = grid.at(s + 1).col(Eigen::Index(detail::voxel_position(h, parent)));
                acc += W[std::size_t(o)]
                     * select_kernel_feature(down, cur, up, (long long)nb->point_count, n_min, n_max);
            }
            out.scales[std::size_t(s - 1)].col(Eigen::Index(i)) = acc;
        }
    }
    return out;
}

/// Plain sparse convolution over same-scale neighbors plus residual.
inline FeatureGrid sparse_conv(const FeatureGrid& grid, const SparseVoxelHierarchy& h, const WeightBundle& w)
{
    detail::check_grid(grid, h, w);
    FeatureGrid out = grid;
    for (int s = 1; s <= h.num_scales(); ++s) {
        std::array<Eigen::MatrixXd, 27> W;
        for (int o = 0; o < 27; ++o)
            W[std::size_t(o)] = w.kernel(WeightBundle::conv_name(s), o);
        const auto& vox = h.voxels(s);
        for (std::size_t i = 0; i < vox.size(); ++i) {
            Eigen::VectorXd acc = grid.at(s).col(Eigen::Index(i));
            for (int o = 0; o < 27; ++o) {
                const auto off = detail::offset_of(o);
                const auto* nb =
                    h.find({s, {vox[i].key.ijk[0] + off[0], vox[i].key.ijk[1] + off[1], vox[i].key.ijk[2] + off[2]}});
                if (nb)
                    acc += W[std::size_t(o)] * grid.at(s).col(Eigen::Index(detail::voxel_position(h, nb)));
            }
            out.scales[std::size_t(s - 1)].col(Eigen::Index(i)) = acc;
        }
    }
    return out;
}

struct AttentionPoint {
    Vec3 delta = Vec3::Zero();  ///< position relative to the voxel center, in voxel widths
    Eigen::VectorXd feature;
};

struct AttentionResult {
    Eigen::VectorXd feature;        ///< F_v + sum_j softmax(w)_j (u_j + pos_j)
    std::vector<double> weights;    ///< softmax weights in input order
};

/// Point-to-voxel attention. Points are reduced in a canonical order so the result does not
/// depend on their input order.
inline AttentionResult point_voxel_attention(const Eigen::VectorXd& f_v, const std::vector<AttentionPoint>& points,
                                             const WeightBundle& w)
{
    if (points.empty())
        throw Error(ErrorKind::EmptyVoxel, "attention needs at least one point");
    const Mlp phi_q = w.mlp("attn.q"), phi_u = w.mlp("attn.u"), psi_k = w.mlp("attn.k"), phi_pos = w.mlp("attn.pos"),
              phi_w = w.mlp("attn.w");
    if (f_v.size() != w.channels())
        throw Error(ErrorKind::ShapeMismatch, "voxel feature width differs from channel count");

    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    auto key = [&](std::size_t i) {
        std::vector<double> k{points[i].delta.x(), points[i].delta.y(), points[i].delta.z()};
        k.insert(k.end(), points[i].feature.data(), points[i].feature.data() + points[i].feature.size());
        return k;
    };
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return key(a) < key(b); });

    const Eigen::VectorXd k_v = psi_k(f_v);
    std::vector<double> logits(points.size());
    std::vector<Eigen::VectorXd> values(points.size());
    for (auto i : order) {
        if (points[i].feature.size() != w.channels())
            throw Error(ErrorKind::ShapeMismatch, "point feature width differs from channel count");
        const Eigen::VectorXd pos = phi_pos(points[i].delta);
        logits[i] = phi_w(k_v - phi_q(points[i].feature) + pos)(0);
        values[i] = phi_u(points[i].feature) + pos;
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (auto i : order)
        mx = std::max(mx, logits[i]);
    double z = 0.0;
    for (auto i : order)
        z += std::exp(logits[i] - mx);
    AttentionResult r;
    r.weights.resize(points.size());
    r.feature = f_v;
    for (auto i : order) {
        r.weights[i] = std::exp(logits[i] - mx) / z;
        r.feature += r.weights[i] * values[i];
    }
    return r;
}

/// Refines every voxel holding points with attention over its points.
inline FeatureGrid attend_points(const FeatureGrid& grid, const SparseVoxelHierarchy& h, const PointCloud& cloud,
                                 const WeightBundle& w)
{
    detail::check_grid(grid, h, w);
    const Mlp point = w.mlp("point");
    FeatureGrid out = grid;
    for (int s = 1; s <= h.num_scales(); ++s) {
        const auto& vox = h.voxels(s);
        const double e = h.edge(s);
        for (std::size_t i = 0; i < vox.size(); ++i) {
            if (vox[i].points.empty())
                continue;
            std::vector<AttentionPoint> pts;
            for (auto p : vox[i].points) {
                AttentionPoint ap;
                ap.delta = (cloud[p].position - vox[i].centroid) / e;
                Eigen::VectorXd x = Eigen::VectorXd::Zero(kPointInputs);
                x.head<3>() = ap.delta;
                if (cloud[p].normal)
                    x.tail<3>() = *cloud[p].normal;
                ap.feature = point(x);
                pts.push_back(std::move(ap));
            }
            out.scales[std::size_t(s - 1)].col(Eigen::Index(i)) =
                point_voxel_attention(grid.at(s).col(Eigen::Index(i)), pts, w).feature;
        }
    }
    return out;
}

/// Head outputs per voxel, parallel to h.voxels(s).
struct PriorOutputs {
    std::vector<std::vector<Vec3>> normals;
    std::vector<std::vector<bool>> low_confidence;
    std::vector<std::vector<BasisParams>> basis;
    std::vector<std::vector<double>> occupancy_logits;
};

/// Normal, basis-parameter and occupancy heads. Zero normals become (0,0,1) flagged low-confidence;
/// basis parameters are the unit defaults plus the head output, falling back to the defaults when an
/// axis comes out identically zero.
inline PriorOutputs predict_priors(const FeatureGrid& grid, const SparseVoxelHierarchy& h, const WeightBundle& w,
                                   const BasisSpec& spec)
{
    detail::check_grid(grid, h, w);
    if (spec.free_dimension() != w.free_dimension())
        throw Error(ErrorKind::ShapeMismatch, "basis head width differs from the basis family");
    const Mlp hn = w.mlp("head.normal"), hb = w.mlp("head.basis"), ho = w.mlp("head.occupancy");
    const auto unit = BasisParams::unit(spec);
    const int fd = spec.free_dimension();
    PriorOutputs out;
    for (int s = 1; s <= h.num_scales(); ++s) {
        const auto n = h.voxels(s).size();
        std::vector<Vec3> normals(n);
        std::vector<bool> low(n, false);
        std::vector<BasisParams> basis(n);
        std::vector<double> logits(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Eigen::VectorXd f = grid.at(s).col(Eigen::Index(i));
            const Eigen::VectorXd raw = hn(f);
            const Vec3 nv(raw(0), raw(1), raw(2));
            if (nv.norm() > 0.0 && std::isfinite(nv.norm())) {
                normals[i] = nv.normalized();
            } else {
                normals[i] = Vec3::UnitZ();
                low[i] = true;
            }
            const Eigen::VectorXd b = hb(f);
            BasisParams m = unit;
            for (int a = 0; a < 3; ++a)
                m.axis[std::size_t(a)] += b.segment(a * fd, fd);
            basis[i] = m.is_zero() ? unit : m;
            logits[i] = ho(f)(0);
        }
        out.normals.push_back(std::move(normals));
        out.low_confidence.push_back(std::move(low));
        out.basis.push_back(std::move(basis));
        out.occupancy_logits.push_back(std::move(logits));
    }
    return out;
}

struct PriorOptions {
    long long n_min = 4;
    long long n_max = 32;
};

/// embed -> count-routed convolution -> point attention -> heads.
inline PriorOutputs run_prior(const SparseVoxelHierarchy& h, const PointCloud& cloud, const WeightBundle& w,
                              const BasisSpec& spec, const PriorOptions& opt = {})
{
    w.validate();
    auto g = embed_features(h, cloud, w);
    g = multi_layer_conv(g, h, w, opt.n_min, opt.n_max);
    g = attend_points(g, h, cloud, w);
    return predict_priors(g, h, w, spec);
}

/// Stores predicted basis parameters on the basis-carrying voxels.
inline void attach_basis_params(SparseVoxelHierarchy& h, const PriorOutputs& out)
{
    for (int s = 1; s <= h.adaptive_depth(); ++s) {
        auto& vox = h.voxels_mut(s);
        for (std::size_t i = 0; i < vox.size(); ++i)
            vox[i].basis_params = out.basis.at(std::size_t(s - 1)).at(i);
    }
}

/// Per-point normals taken from the finest voxel holding each point.
inline std::vector<Vec3> point_normals_from_prior(const SparseVoxelHierarchy& h, const PriorOutputs& out,
                                                  std::size_t num_points)
{
    std::vector<Vec3> normals(num_points, Vec3::UnitZ());
    const auto& vox = h.voxels(1);
    for (std::size_t i = 0; i < vox.size(); ++i)
        for (auto p : vox[i].points)
            normals.at(p) = out.normals[0][i];
    return normals;
}

enum class TrainingPhase { structure_only, full };

struct LossWeights {
    double w_struct = 1.0;
    double w_vox = 1.0;
    double w_surf = 1.0;
    double w_grad = 1.0;
};

struct LossComponents {
    double structure = 0.0;     ///< sum over depths of mean binary cross-entropy
    double voxel_normal = 0.0;  ///< sum over depths of mean L1 normal error
    double surface = 0.0;       ///< mean |f| on surface samples
    double gradient = 0.0;      ///< mean (1 - cos(grad f, n))
    double total = 0.0;
};

inline constexpr double kLogitClamp = 30.0;

/// Numerically stable BCE on a clamped logit.
inline double binary_cross_entropy(double logit, bool label)
{
    const double z = std::clamp(logit, -kLogitClamp, kLogitClamp);
    const double t = label ? -z : z; // loss = log(1 + exp(t))
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

/// Training-loss components as evaluation functions. `labels[d]` holds the occupied keys at scale d+1
/// (from ground_truth_occupancy); `field` needs eval(p, DerivOrder) and is unused in the structure-only phase.
template <class Field>
LossComponents loss_components(const SparseVoxelHierarchy& h, const PriorOutputs& pred, const Field* field,
                               const std::vector<std::vector<VoxelKey>>& labels, const PointCloud& samples,
                               const LossWeights& lw, TrainingPhase phase)
{
    if (labels.size() < std::size_t(h.num_scales()))
        throw Error(ErrorKind::MissingLabels, "occupancy labels missing for some depth");
    if (!samples.has_normals())
        throw Error(ErrorKind::MissingNormals, "surface samples need normals");
    LossComponents L;
    for (int s = 1; s <= h.num_scales(); ++s) {
        const auto& vox = h.voxels(s);
        const auto& lab = labels[std::size_t(s - 1)];
        if (vox.empty())
            continue;
        double ce = 0.0;
        for (std::size_t i = 0; i < vox.size(); ++i)
            ce += binary_cross_entropy(pred.occupancy_logits.at(std::size_t(s - 1)).at(i),
                                       std::binary_search(lab.begin(), lab.end(), vox[i].key));
        L.structure += ce / double(vox.size());

        std::map<VoxelKey, Vec3> gt;
        for (const auto& p : samples.points())
            gt.try_emplace(h.key_of(p.position, s), Vec3::Zero()).first->second += *p.normal;
        double l1 = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < vox.size(); ++i) {
            auto it = gt.find(vox[i].key);
            if (it == gt.end() || it->second.norm() == 0.0)
                continue;
            l1 += (pred.normals.at(std::size_t(s - 1)).at(i) - it->second.normalized()).cwiseAbs().sum();
            ++count;
        }
        if (count > 0)
            L.voxel_normal += l1 / double(count);
    }
    L.total = lw.w_struct * L.structure + lw.w_vox * L.voxel_normal;
    if (phase == TrainingPhase::full) {
        if (!field)
            throw Error(ErrorKind::InvalidConfig, "full-phase losses need a field");
        for (const auto& p : samples.points()) {
            const auto fs = field->eval(p.position, DerivOrder::gradient);
            L.surface += std::abs(fs.value);
            const double g = fs.gradient.norm();
            L.gradient += g > 0.0 ? 1.0 - fs.gradient.dot(*p.normal) / g : 1.0;
        }
        if (!samples.empty()) {
            L.surface /= double(samples.size());
            L.gradient /= double(samples.size());
        }
        L.total += lw.w_surf * L.surface + lw.w_grad * L.gradient;
    }
    return L;
}

} // namespace svrecon

#endif // SVRECON_PRIOR_HPP
