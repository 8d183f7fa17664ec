#ifndef SVRECON_IO_HPP
#define SVRECON_IO_HPP

#include <fmt/format.h>
#include <fmt/os.h>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "svrecon/error.hpp"
#include "svrecon/geometry.hpp"

namespace svrecon {

enum class CloudFormat { xyz, ply, obj };
enum class MeshFormat { ply, obj };

namespace detail {

inline std::string lower_extension(const std::filesystem::path& path)
{
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return ext;
}

inline std::vector<std::string_view> split_ws(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i])))
            ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j])))
            ++j;
        if (j > i)
            out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

inline double parse_double(std::string_view tok, std::size_t line)
{
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ParseError(line, "expected a number, got '" + std::string(tok) + "'");
    if (!std::isfinite(v))
        throw ParseError(line, "non-finite value");
    return v;
}

inline long long parse_int(std::string_view tok, std::size_t line)
{
    long long v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ParseError(line, "expected an integer, got '" + std::string(tok) + "'");
    return v;
}

inline std::ifstream open_input(const std::filesystem::path& path, bool binary = false)
{
    if (!std::filesystem::exists(path))
        throw Error(ErrorKind::FileNotFound, path.string());
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in)
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    return in;
}

inline Vec3 checked_unit(const Vec3& n, std::size_t line)
{
    const double len = n.norm();
    if (!(len > 0.0))
        throw ParseError(line, "zero-length normal");
    return n / len;
}

struct PlyProperty {
    std::string name;
    std::string type;      // scalar type, or count type for lists
    std::string item_type; // list item type; empty for scalars
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
};

struct PlyHeader {
    enum class Encoding { ascii, binary_le, binary_be } encoding = Encoding::ascii;
    std::vector<PlyElement> elements;
    std::size_t header_lines = 0;
};

inline PlyHeader read_ply_header(std::istream& in)
{
    PlyHeader h;
    std::string line;
    std::size_t lineno = 0;
    bool have_format = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        auto tok = split_ws(line);
        if (lineno == 1) {
            if (tok.size() != 1 || tok[0] != "ply")
                throw ParseError(lineno, "missing ply magic");
            continue;
        }
        if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info")
            continue;
        if (tok[0] == "format") {
            if (tok.size() < 2)
                throw ParseError(lineno, "malformed format line");
            if (tok[1] == "ascii")
                h.encoding = PlyHeader::Encoding::ascii;
            else if (tok[1] == "binary_little_endian")
                h.encoding = PlyHeader::Encoding::binary_le;
            else if (tok[1] == "binary_big_endian")
                h.encoding = PlyHeader::Encoding::binary_be;
            else
                throw ParseError(lineno, "unknown ply encoding");
            have_format = true;
        } else if (tok[0] == "element") {
            if (tok.size() != 3)
                throw ParseError(lineno, "malformed element line");
            h.elements.push_back({std::string(tok[1]), std::size_t(parse_int(tok[2], lineno)), {}});
        } else if (tok[0] == "property") {
            if (h.elements.empty())
                throw ParseError(lineno, "property before element");
            if (tok.size() == 3)
                h.elements.back().properties.push_back({std::string(tok[2]), std::string(tok[1]), {}});
            else if (tok.size() == 5 && tok[1] == "list")
                h.elements.back().properties.push_back(
                    {std::string(tok[4]), std::string(tok[2]), std::string(tok[3])});
            else
                throw ParseError(lineno, "malformed property line");
        } else if (tok[0] == "end_header") {
            if (!have_format)
                throw ParseError(lineno, "missing format line");
            h.header_lines = lineno;
            return h;
        } else {
            throw ParseError(lineno, "unexpected header keyword '" + std::string(tok[0]) + "'");
        }
    }
    throw ParseError(lineno, "unterminated ply header");
}

inline std::size_t ply_type_size(const std::string& t, std::size_t line)
{
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8")
        return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16")
        return 2;
    if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32")
        return 4;
    if (t == "double" || t == "float64")
        return 8;
    throw ParseError(line, "unknown ply type '" + t + "'");
}

inline double read_binary_scalar(std::istream& in, const std::string& t, bool big_endian, std::size_t line)
{
    const std::size_t size = ply_type_size(t, line);
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), std::streamsize(size)))
        throw ParseError(line, "truncated binary body");
    if (big_endian)
        std::reverse(buf, buf + size);
    auto as = [&](auto v) {
        std::memcpy(&v, buf, sizeof(v));
        return double(v);
    };
    if (t == "char" || t == "int8") return as(std::int8_t{});
    if (t == "uchar" || t == "uint8") return as(std::uint8_t{});
    if (t == "short" || t == "int16") return as(std::int16_t{});
    if (t == "ushort" || t == "uint16") return as(std::uint16_t{});
    if (t == "int" || t == "int32") return as(std::int32_t{});
    if (t == "uint" || t == "uint32") return as(std::uint32_t{});
    if (t == "float" || t == "float32") return as(float{});
    return as(double{});
}

/// Raw contents of a ply file: vertex properties by name plus face index lists.
struct PlyData {
    std::vector<std::vector<double>> vertex_rows;
    std::vector<std::string> vertex_names;
    std::vector<std::vector<long long>> faces;
};

inline PlyData read_ply(const std::filesystem::path& path)
{
    auto in = open_input(path, true);
    PlyHeader h = read_ply_header(in);
    PlyData data;
    std::size_t lineno = h.header_lines;
    const bool ascii = h.encoding == PlyHeader::Encoding::ascii;
    const bool big = h.encoding == PlyHeader::Encoding::binary_be;

    for (const auto& el : h.elements) {
        const bool is_vertex = el.name == "vertex";
        const bool is_face = el.name == "face";
        if (is_vertex)
            for (const auto& p : el.properties)
                data.vertex_names.push_back(p.name);
        for (std::size_t r = 0; r < el.count; ++r) {
            std::vector<double> row;
            std::vector<long long> face;
            if (ascii) {
                std::string line;
                do {
                    if (!std::getline(in, line))
                        throw ParseError(lineno, "unexpected end of file in element '" + el.name + "'");
                    ++lineno;
                    if (!line.empty() && line.back() == '\r')
                        line.pop_back();
                } while (split_ws(line).empty());
                auto tok = split_ws(line);
                std::size_t t = 0;
                for (const auto& p : el.properties) {
                    if (t >= tok.size())
                        throw ParseError(lineno, "too few values");
                    if (p.item_type.empty()) {
                        row.push_back(parse_double(tok[t++], lineno));
                    } else {
                        const auto n = parse_int(tok[t++], lineno);
                        if (n < 0 || t + std::size_t(n) > tok.size())
                            throw ParseError(lineno, "bad list length");
                        for (long long k = 0; k < n; ++k) {
                            const auto idx = parse_int(tok[t++], lineno);
                            if (is_face && (p.name == "vertex_indices" || p.name == "vertex_index"))
                                face.push_back(idx);
                        }
                    }
                }
            } else {
                ++lineno;
                for (const auto& p : el.properties) {
                    if (p.item_type.empty()) {
                        row.push_back(read_binary_scalar(in, p.type, big, lineno));
                    } else {
                        const auto n = static_cast<long long>(read_binary_scalar(in, p.type, big, lineno));
                        for (long long k = 0; k < n; ++k) {
                            const auto idx = static_cast<long long>(read_binary_scalar(in, p.item_type, big, lineno));
                            if (is_face && (p.name == "vertex_indices" || p.name == "vertex_index"))
                                face.push_back(idx);
                        }
                    }
                }
            }
            if (is_vertex)
                data.vertex_rows.push_back(std::move(row));
            if (is_face)
                data.faces.push_back(std::move(face));
        }
    }
    return data;
}

inline int column_of(const std::vector<std::string>& names, const std::string& n)
{
    auto it = std::find(names.begin(), names.end(), n);
    return it == names.end() ? -1 : int(it - names.begin());
}

struct ObjData {
    std::vector<Vec3> vertices;
    std::vector<Vec3> normals;
    std::vector<std::vector<long long>> faces;
};

inline ObjData read_obj(const std::filesystem::path& path)
{
    auto in = open_input(path);
    ObjData data;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto tok = split_ws(line);
        if (tok.empty() || tok[0].front() == '#')
            continue;
        if (tok[0] == "v" || tok[0] == "vn") {
            if (tok.size() < 4)
                throw ParseError(lineno, "expected three coordinates");
            Vec3 v(parse_double(tok[1], lineno), parse_double(tok[2], lineno), parse_double(tok[3], lineno));
            (tok[0] == "v" ? data.vertices : data.normals).push_back(v);
        } else if (tok[0] == "f") {
            if (tok.size() < 4)
                throw ParseError(lineno, "face needs at least three vertices");
            std::vector<long long> face;
            for (std::size_t k = 1; k < tok.size(); ++k) {
                auto slash = tok[k].find('/');
                auto idx = parse_int(tok[k].substr(0, slash), lineno);
                if (idx < 0)
                    idx = static_cast<long long>(data.vertices.size()) + idx + 1;
                if (idx < 1)
                    throw ParseError(lineno, "face index out of range");
                face.push_back(idx - 1);
            }
            data.faces.push_back(std::move(face));
        }
        // other statements (vt, g, o, s, usemtl, ...) are ignored
    }
    return data;
}

inline std::vector<Triangle> triangulate(const std::vector<std::vector<long long>>& faces, std::size_t nverts)
{
    std::vector<Triangle> tris;
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const auto& face = faces[f];
        for (auto idx : face)
            if (idx < 0 || std::size_t(idx) >= nverts)
                throw ParseError(f + 1, "face references missing vertex");
        for (std::size_t k = 1; k + 1 < face.size(); ++k)
            tris.push_back({std::uint32_t(face[0]), std::uint32_t(face[k]), std::uint32_t(face[k + 1])});
    }
    return tris;
}

} // namespace detail

inline CloudFormat cloud_format_from_path(const std::filesystem::path& path)
{
    const auto ext = detail::lower_extension(path);
    if (ext == ".ply")
        return CloudFormat::ply;
    if (ext == ".obj")
        return CloudFormat::obj;
    return CloudFormat::xyz;
}

inline MeshFormat mesh_format_from_path(const std::filesystem::path& path)
{
    return detail::lower_extension(path) == ".obj" ? MeshFormat::obj : MeshFormat::ply;
}

/// Reads points in file order. Normals are kept (and renormalized) iff the file has them.
inline PointCloud load_point_cloud(const std::filesystem::path& path, CloudFormat format)
{
    std::vector<OrientedPoint> pts;
    switch (format) {
    case CloudFormat::xyz: {
        auto in = detail::open_input(path);
        std::string line;
        std::size_t lineno = 0;
        std::size_t columns = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto tok = detail::split_ws(line);
            if (tok.empty() || tok[0].front() == '#')
                continue;
            if (tok.size() != 3 && tok.size() != 6)
                throw ParseError(lineno, "expected 3 or 6 columns");
            if (columns == 0)
                columns = tok.size();
            else if (columns != tok.size())
                throw ParseError(lineno, "inconsistent column count");
            OrientedPoint p;
            p.position = Vec3(detail::parse_double(tok[0], lineno), detail::parse_double(tok[1], lineno),
                              detail::parse_double(tok[2], lineno));
            if (tok.size() == 6)
                p.normal = detail::checked_unit(Vec3(detail::parse_double(tok[3], lineno),
                                                     detail::parse_double(tok[4], lineno),
                                                     detail::parse_double(tok[5], lineno)),
                                                lineno);
            pts.push_back(std::move(p));
        }
        break;
    }
    case CloudFormat::ply: {
        auto data = detail::read_ply(path);
        const int cx = detail::column_of(data.vertex_names, "x");
        const int cy = detail::column_of(data.vertex_names, "y");
        const int cz = detail::column_of(data.vertex_names, "z");
        const int nx = detail::column_of(data.vertex_names, "nx");
        const int ny = detail::column_of(data.vertex_names, "ny");
        const int nz = detail::column_of(data.vertex_names, "nz");
        if (cx < 0 || cy < 0 || cz < 0)
            throw ParseError(1, "vertex element lacks x/y/z");
        const bool normals = nx >= 0 && ny >= 0 && nz >= 0;
        for (std::size_t r = 0; r < data.vertex_rows.size(); ++r) {
            const auto& row = data.vertex_rows[r];
            OrientedPoint p;
            p.position = Vec3(row[cx], row[cy], row[cz]);
            if (normals)
                p.normal = detail::checked_unit(Vec3(row[nx], row[ny], row[nz]), r + 1);
            pts.push_back(std::move(p));
        }
        break;
    }
    case CloudFormat::obj: {
        auto data = detail::read_obj(path);
        const bool normals = !data.normals.empty() && data.normals.size() == data.vertices.size();
        for (std::size_t i = 0; i < data.vertices.size(); ++i) {
            OrientedPoint p;
            p.position = data.vertices[i];
            if (normals)
                p.normal = detail::checked_unit(data.normals[i], i + 1);
            pts.push_back(std::move(p));
        }
        break;
    }
    }
    if (pts.empty())
        throw Error(ErrorKind::EmptyCloud, path.string());
    return PointCloud(std::move(pts));
}

inline PointCloud load_point_cloud(const std::filesystem::path& path)
{
    return load_point_cloud(path, cloud_format_from_path(path));
}

inline TriangleMesh load_mesh(const std::filesystem::path& path, MeshFormat format)
{
    TriangleMesh mesh;
    if (format == MeshFormat::ply) {
        auto data = detail::read_ply(path);
        const int cx = detail::column_of(data.vertex_names, "x");
        const int cy = detail::column_of(data.vertex_names, "y");
        const int cz = detail::column_of(data.vertex_names, "z");
        const int nx = detail::column_of(data.vertex_names, "nx");
        const int ny = detail::column_of(data.vertex_names, "ny");
        const int nz = detail::column_of(data.vertex_names, "nz");
        if (cx < 0 || cy < 0 || cz < 0)
            throw ParseError(1, "vertex element lacks x/y/z");
        for (const auto& row : data.vertex_rows) {
            mesh.vertices.emplace_back(row[cx], row[cy], row[cz]);
            if (nx >= 0 && ny >= 0 && nz >= 0)
                mesh.vertex_normals.push_back(Vec3(row[nx], row[ny], row[nz]).normalized());
        }
        mesh.triangles = detail::triangulate(data.faces, mesh.vertices.size());
    } else {
        auto data = detail::read_obj(path);
        mesh.vertices = data.vertices;
        if (data.normals.size() == data.vertices.size())
            for (const auto& n : data.normals)
                mesh.vertex_normals.push_back(n.normalized());
        mesh.triangles = detail::triangulate(data.faces, mesh.vertices.size());
    }
    return mesh;
}

inline TriangleMesh load_mesh(const std::filesystem::path& path)
{
    return load_mesh(path, mesh_format_from_path(path));
}

/// ASCII output, 9 significant digits per coordinate.
inline void write_mesh(const TriangleMesh& mesh, const std::filesystem::path& path, MeshFormat format)
{
    mesh.validate();
    std::string out;
    const bool normals = mesh.has_vertex_normals();
    if (format == MeshFormat::ply) {
        out += "ply\nformat ascii 1.0\n";
        out += fmt::format("element vertex {}\n", mesh.vertices.size());
        out += "property double x\nproperty double y\nproperty double z\n";
        if (normals)
            out += "property double nx\nproperty double ny\nproperty double nz\n";
        out += fmt::format("element face {}\n", mesh.triangles.size());
        out += "property list uchar int vertex_indices\nend_header\n";
        for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
            const auto& v = mesh.vertices[i];
            if (normals) {
                const auto& n = mesh.vertex_normals[i];
                out += fmt::format("{:.9g} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g}\n", v.x(), v.y(), v.z(), n.x(), n.y(),
                                   n.z());
            } else {
                out += fmt::format("{:.9g} {:.9g} {:.9g}\n", v.x(), v.y(), v.z());
            }
        }
        for (const auto& t : mesh.triangles)
            out += fmt::format("3 {} {} {}\n", t[0], t[1], t[2]);
    } else {
        for (const auto& v : mesh.vertices)
            out += fmt::format("v {:.9g} {:.9g} {:.9g}\n", v.x(), v.y(), v.z());
        if (normals)
            for (const auto& n : mesh.vertex_normals)
                out += fmt::format("vn {:.9g} {:.9g} {:.9g}\n", n.x(), n.y(), n.z());
        for (const auto& t : mesh.triangles) {
            if (normals)
                out += fmt::format("f {0}//{0} {1}//{1} {2}//{2}\n", t[0] + 1, t[1] + 1, t[2] + 1);
            else
                out += fmt::format("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1);
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(out.data(), std::streamsize(out.size())))
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
}

inline void write_mesh(const TriangleMesh& mesh, const std::filesystem::path& path)
{
    write_mesh(mesh, path, mesh_format_from_path(path));
}

/// "x y z [nx ny nz]" per line.
inline void write_xyz(const PointCloud& cloud, const std::filesystem::path& path)
{
    std::string out;
    for (const auto& p : cloud.points()) {
        const auto& v = p.position;
        if (p.normal)
            out += fmt::format("{:.9g} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g}\n", v.x(), v.y(), v.z(), p.normal->x(),
                               p.normal->y(), p.normal->z());
        else
            out += fmt::format("{:.9g} {:.9g} {:.9g}\n", v.x(), v.y(), v.z());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(out.data(), std::streamsize(out.size())))
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
}

} // namespace svrecon

#endif // SVRECON_IO_HPP
