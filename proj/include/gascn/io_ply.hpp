#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gascn/point_cloud.hpp"

namespace gascn::data {

namespace detail {

inline std::string fmt_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
}

inline double parse_double(const std::string& token, const std::string& where) {
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') {
        throw FormatError(where + ": non-numeric token '" + token + "'");
    }
    return v;
}

}  // namespace detail

// ============================================================================
// PLY
// ============================================================================

// ASCII PLY with float vertex properties x,y,z; nx,ny,nz when normals are
// present; "quality" carrying the scalar field. Values printed with 9
// significant digits.
inline void write_ply(const geo::PointCloud& cloud, const std::string& path) {
    cloud.validate("write_ply");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("write_ply: cannot open " + path);
    f << "ply\nformat ascii 1.0\ncomment gascn point cloud\n";
    f << "element vertex " << cloud.size() << "\n";
    f << "property float x\nproperty float y\nproperty float z\n";
    if (cloud.has_normals()) {
        f << "property float nx\nproperty float ny\nproperty float nz\n";
    }
    if (cloud.has_scalar_field()) {
        f << "property float quality\n";
    }
    f << "end_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const geo::Vec3& p = cloud.points[i];
        f << detail::fmt_g9(p.x) << ' ' << detail::fmt_g9(p.y) << ' ' << detail::fmt_g9(p.z);
        if (cloud.has_normals()) {
            const geo::Vec3& n = cloud.normals[i];
            f << ' ' << detail::fmt_g9(n.x) << ' ' << detail::fmt_g9(n.y) << ' '
              << detail::fmt_g9(n.z);
        }
        if (cloud.has_scalar_field()) {
            f << ' ' << detail::fmt_g9(cloud.scalar_field[i]);
        }
        f << '\n';
    }
    if (!f) throw IoError("write_ply: write failed for " + path);
}

namespace detail {

struct PlyProperty {
    std::string name;
    std::string type;
    std::size_t byte_size = 0;
};

inline std::size_t ply_type_size(const std::string& type) {
    if (type == "char" || type == "int8" || type == "uchar" || type == "uint8") return 1;
    if (type == "short" || type == "int16" || type == "ushort" || type == "uint16") return 2;
    if (type == "int" || type == "int32" || type == "uint" || type == "uint32") return 4;
    if (type == "float" || type == "float32") return 4;
    if (type == "double" || type == "float64") return 8;
    return 0;
}

inline bool ply_float_type(const std::string& type) {
    return type == "float" || type == "float32" || type == "double" || type == "float64";
}

}  // namespace detail

// Reads ASCII or binary_little_endian PLY with vertex properties x,y,z and
// optionally nx,ny,nz and quality. Other fixed-size scalar properties are
// skipped; anything after the vertex element is ignored.
inline geo::PointCloud read_ply(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_ply: cannot open " + path);

    std::string line;
    if (!std::getline(f, line) || line.rfind("ply", 0) != 0) {
        throw FormatError("read_ply: missing 'ply' magic line in " + path);
    }
    bool binary = false;
    bool format_seen = false;
    std::size_t vertex_count = 0;
    bool vertex_seen = false;
    bool in_vertex_element = false;
    std::vector<detail::PlyProperty> props;

    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "comment" || word.empty()) continue;
        if (word == "format") {
            std::string kind;
            ss >> kind;
            if (kind == "ascii") {
                binary = false;
            } else if (kind == "binary_little_endian") {
                binary = true;
            } else {
                throw FormatError("read_ply: unsupported format '" + kind + "'");
            }
            format_seen = true;
        } else if (word == "element") {
            std::string name;
            std::size_t count = 0;
            ss >> name >> count;
            if (name == "vertex") {
                vertex_seen = true;
                in_vertex_element = true;
                vertex_count = count;
            } else {
                in_vertex_element = false;
            }
        } else if (word == "property") {
            if (!in_vertex_element) continue;
            std::string type, name;
            ss >> type;
            if (type == "list") {
                throw FormatError("read_ply: list properties in the vertex element are "
                                  "unsupported");
            }
            ss >> name;
            const std::size_t sz = detail::ply_type_size(type);
            if (sz == 0) throw FormatError("read_ply: unknown property type '" + type + "'");
            props.push_back({name, type, sz});
        } else if (word == "end_header") {
            break;
        } else {
            throw FormatError("read_ply: unexpected header line '" + line + "'");
        }
    }
    if (!format_seen) throw FormatError("read_ply: header lacks a format line");
    if (!vertex_seen) throw FormatError("read_ply: header lacks 'element vertex'");

    int col_x = -1, col_y = -1, col_z = -1, col_nx = -1, col_ny = -1, col_nz = -1,
        col_q = -1;
    for (std::size_t i = 0; i < props.size(); ++i) {
        const auto& p = props[i];
        int* slot = nullptr;
        if (p.name == "x") slot = &col_x;
        if (p.name == "y") slot = &col_y;
        if (p.name == "z") slot = &col_z;
        if (p.name == "nx") slot = &col_nx;
        if (p.name == "ny") slot = &col_ny;
        if (p.name == "nz") slot = &col_nz;
        if (p.name == "quality") slot = &col_q;
        if (slot != nullptr) {
            if (!detail::ply_float_type(p.type)) {
                throw FormatError("read_ply: property '" + p.name + "' has non-float type '" +
                                  p.type + "'");
            }
            *slot = int(i);
        }
    }
    if (col_x < 0 || col_y < 0 || col_z < 0) {
        throw FormatError("read_ply: vertex element lacks x/y/z properties");
    }
    const bool with_normals = col_nx >= 0 && col_ny >= 0 && col_nz >= 0;

    geo::PointCloud cloud;
    cloud.points.reserve(vertex_count);
    if (with_normals) cloud.normals.reserve(vertex_count);
    if (col_q >= 0) cloud.scalar_field.reserve(vertex_count);

    if (!binary) {
        std::vector<double> row(props.size());
        for (std::size_t v = 0; v < vertex_count; ++v) {
            std::string body;
            do {
                if (!std::getline(f, body)) {
                    throw FormatError("read_ply: truncated body (expected " +
                                      std::to_string(vertex_count) + " vertices, got " +
                                      std::to_string(v) + ")");
                }
            } while (body.find_first_not_of(" \t\r") == std::string::npos);
            std::istringstream ss(body);
            std::string token;
            for (std::size_t c = 0; c < props.size(); ++c) {
                if (!(ss >> token)) {
                    throw FormatError("read_ply: vertex row " + std::to_string(v) +
                                      " has too few columns");
                }
                row[c] = detail::parse_double(token, "read_ply vertex row " + std::to_string(v));
            }
            cloud.points.push_back({row[col_x], row[col_y], row[col_z]});
            if (with_normals) cloud.normals.push_back({row[col_nx], row[col_ny], row[col_nz]});
            if (col_q >= 0) cloud.scalar_field.push_back(row[col_q]);
        }
    } else {
        std::size_t stride = 0;
        for (const auto& p : props) stride += p.byte_size;
        std::vector<char> buf(stride);
        auto read_value = [&](const detail::PlyProperty& p, const char* at) {
            if (p.byte_size == 4) {
                float v;
                std::memcpy(&v, at, 4);
                return double(v);
            }
            double v;
            std::memcpy(&v, at, 8);
            return v;
        };
        for (std::size_t v = 0; v < vertex_count; ++v) {
            f.read(buf.data(), std::streamsize(stride));
            if (std::size_t(f.gcount()) != stride) {
                throw FormatError("read_ply: truncated body (expected " +
                                  std::to_string(vertex_count) + " vertices, got " +
                                  std::to_string(v) + ")");
            }
            std::size_t off = 0;
            std::vector<double> row(props.size(), 0.0);
            for (std::size_t c = 0; c < props.size(); ++c) {
                if (int(c) == col_x || int(c) == col_y || int(c) == col_z || int(c) == col_nx ||
                    int(c) == col_ny || int(c) == col_nz || int(c) == col_q) {
                    row[c] = read_value(props[c], buf.data() + off);
                }
                off += props[c].byte_size;
            }
            cloud.points.push_back({row[col_x], row[col_y], row[col_z]});
            if (with_normals) cloud.normals.push_back({row[col_nx], row[col_ny], row[col_nz]});
            if (col_q >= 0) cloud.scalar_field.push_back(row[col_q]);
        }
    }
    return cloud;
}

// ============================================================================
// XYZ
// ============================================================================

inline void write_xyz(const geo::PointCloud& cloud, const std::string& path) {
    cloud.validate("write_xyz");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("write_xyz: cannot open " + path);
    for (const geo::Vec3& p : cloud.points) {
        f << detail::fmt_g9(p.x) << ' ' << detail::fmt_g9(p.y) << ' ' << detail::fmt_g9(p.z)
          << '\n';
    }
    if (!f) throw IoError("write_xyz: write failed for " + path);
}

inline geo::PointCloud read_xyz(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("read_xyz: cannot open " + path);
    geo::PointCloud cloud;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        std::string a, b, c;
        if (!(ss >> a >> b >> c)) {
            throw FormatError("read_xyz: line " + std::to_string(line_no) +
                              ": expected three coordinates");
        }
        const std::string where = "read_xyz: line " + std::to_string(line_no);
        cloud.points.push_back({detail::parse_double(a, where), detail::parse_double(b, where),
                                detail::parse_double(c, where)});
    }
    return cloud;
}

}  // namespace gascn::data
