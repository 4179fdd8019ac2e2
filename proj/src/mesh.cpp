#include "meshdiff/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "meshdiff/errors.hpp"

namespace meshdiff {

namespace {

constexpr double kDegenerateEps = 1e-12;

double wrap_uv(double t) {
    if (t >= 0.0 && t <= 1.0) return t;
    return t - std::floor(t);
}

// Resolves a 1-based (or negative, relative) OBJ index.
int resolve_index(long idx, std::size_t count, std::size_t line) {
    long resolved = idx > 0 ? idx - 1 : static_cast<long>(count) + idx;
    if (idx == 0 || resolved < 0 || resolved >= static_cast<long>(count))
        throw ParseError(line, "index " + std::to_string(idx) + " out of range");
    return static_cast<int>(resolved);
}

long parse_long(const std::string& s, std::size_t line) {
    try {
        std::size_t used = 0;
        long v = std::stol(s, &used);
        if (used != s.size()) throw ParseError(line, "bad index '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw ParseError(line, "bad index '" + s + "'");
    }
}

struct Corner {
    long v = 0;
    long vt = 0;
    bool has_vt = false;
};

Corner parse_corner(const std::string& tok, std::size_t line) {
    Corner c;
    auto first = tok.find('/');
    c.v = parse_long(tok.substr(0, first), line);
    if (first == std::string::npos) return c;
    auto second = tok.find('/', first + 1);
    std::string vt = tok.substr(first + 1, second == std::string::npos ? std::string::npos
                                                                        : second - first - 1);
    if (!vt.empty()) {
        c.vt = parse_long(vt, line);
        c.has_vt = true;
    }
    return c;
}

} // namespace

double Mesh::bounding_radius() const {
    double r = 0.0;
    for (const auto& v : vertices) r = std::max(r, v.norm());
    return r;
}

Vec3 compute_face_normal(const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 e1 = b - a;
    Vec3 e2 = c - a;
    Vec3 n = e1.cross(e2);
    double scale = std::max({e1.squaredNorm(), e2.squaredNorm(), (c - b).squaredNorm()});
    double len = n.norm();
    if (scale == 0.0 || len <= kDegenerateEps * scale) throw DegenerateFace();
    return n / len;
}

void update_normals(Mesh& mesh) {
    mesh.face_normals.assign(mesh.faces.size(), Vec3::Zero());
    mesh.degenerate.assign(mesh.faces.size(), false);
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& t = mesh.faces[f];
        try {
            mesh.face_normals[f] =
                compute_face_normal(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        } catch (const DegenerateFace&) {
            mesh.degenerate[f] = true;
        }
    }
}

Mesh parse_obj(std::istream& in) {
    Mesh mesh;
    std::vector<Vec2> uvs;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        auto hash = raw.find('#');
        if (hash != std::string::npos) raw.resize(hash);
        std::istringstream ls(raw);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ls >> p.x() >> p.y() >> p.z())) throw ParseError(line_no, "malformed vertex");
            if (!p.allFinite()) throw ParseError(line_no, "non-finite vertex");
            mesh.vertices.push_back(p);
        } else if (tag == "vt") {
            Vec2 t;
            if (!(ls >> t.x() >> t.y())) throw ParseError(line_no, "malformed texture coordinate");
            if (!t.allFinite()) throw ParseError(line_no, "non-finite texture coordinate");
            uvs.emplace_back(wrap_uv(t.x()), wrap_uv(t.y()));
        } else if (tag == "f") {
            std::vector<Corner> corners;
            std::string tok;
            while (ls >> tok) corners.push_back(parse_corner(tok, line_no));
            if (corners.size() < 3) throw ParseError(line_no, "face with fewer than 3 corners");
            std::vector<int> vi;
            std::vector<Vec2> ti;
            for (const auto& c : corners) {
                if (!c.has_vt) throw MissingUV(line_no);
                vi.push_back(resolve_index(c.v, mesh.vertices.size(), line_no));
                ti.push_back(uvs[resolve_index(c.vt, uvs.size(), line_no)]);
            }
            for (std::size_t k = 1; k + 1 < vi.size(); ++k) {
                mesh.faces.push_back({vi[0], vi[k], vi[k + 1]});
                mesh.face_uvs.push_back({ti[0], ti[k], ti[k + 1]});
            }
        }
        // vn, o, g, s, usemtl, mtllib and friends carry nothing we use.
    }
    if (in.bad()) throw IoError("read failure while parsing OBJ");
    update_normals(mesh);
    return mesh;
}

Mesh load_mesh(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open mesh '" + path.string() + "'");
    Mesh mesh = parse_obj(in);
    normalize(mesh);
    return mesh;
}

namespace {

void bounds(const Mesh& mesh, Vec3& lo, Vec3& hi) {
    lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    hi = -lo;
    for (const auto& v : mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
}

} // namespace

bool is_normalized(const Mesh& mesh) {
    if (mesh.vertices.empty()) return true;
    Vec3 lo, hi;
    bounds(mesh, lo, hi);
    Vec3 center = 0.5 * (lo + hi);
    double extent = (hi - lo).maxCoeff();
    return center.cwiseAbs().maxCoeff() <= 1e-12 && std::abs(extent - 2.0) <= 1e-12;
}

void normalize(Mesh& mesh) {
    if (mesh.vertices.empty() || is_normalized(mesh)) return;
    Vec3 lo, hi;
    bounds(mesh, lo, hi);
    Vec3 center = 0.5 * (lo + hi);
    double extent = (hi - lo).maxCoeff();
    double scale = extent > 0.0 ? 2.0 / extent : 1.0;
    for (auto& v : mesh.vertices) v = (v - center) * scale;
    update_normals(mesh);
}

void write_obj(const Mesh& mesh, std::ostream& out, const std::string& mtllib,
               const std::string& material) {
    out << std::setprecision(9);
    if (!mtllib.empty()) out << "mtllib " << mtllib << '\n';
    for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& uv : mesh.face_uvs)
        for (const auto& t : uv) out << "vt " << t.x() << ' ' << t.y() << '\n';
    if (!material.empty()) out << "usemtl " << material << '\n';
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        out << 'f';
        for (int k = 0; k < 3; ++k)
            out << ' ' << mesh.faces[f][k] + 1 << '/' << 3 * f + k + 1;
        out << '\n';
    }
}

void save_obj(const Mesh& mesh, const std::filesystem::path& path, const std::string& mtllib,
              const std::string& material) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    write_obj(mesh, out, mtllib, material);
    if (!out) throw IoError("write failure on '" + path.string() + "'");
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    return 0.5 * (b - a).cross(c - a).norm();
}

double surface_area(const Mesh& mesh) {
    double area = 0.0;
    for (const auto& f : mesh.faces)
        area += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
    return area;
}

Mesh make_uv_sphere(int segments, int rings) {
    Mesh mesh;
    const double pi = std::numbers::pi;
    // Ring r at polar angle pi * r / rings, measured from +Y.
    auto pos = [&](int seg, int ring) {
        double theta = pi * ring / rings;
        double phi = 2.0 * pi * seg / segments;
        return Vec3(std::sin(theta) * std::cos(phi), std::cos(theta), -std::sin(theta) * std::sin(phi));
    };
    std::vector<std::vector<int>> index(rings + 1, std::vector<int>(segments, -1));
    for (int r = 0; r <= rings; ++r) {
        for (int s = 0; s < segments; ++s) {
            if ((r == 0 || r == rings) && s > 0) {
                index[r][s] = index[r][0];
                continue;
            }
            index[r][s] = static_cast<int>(mesh.vertices.size());
            mesh.vertices.push_back(pos(s, r));
        }
    }
    auto uv = [&](int s, int r) {
        return Vec2(static_cast<double>(s) / segments, 1.0 - static_cast<double>(r) / rings);
    };
    for (int r = 0; r < rings; ++r) {
        for (int s = 0; s < segments; ++s) {
            int s1 = (s + 1) % segments;
            int a = index[r][s], b = index[r + 1][s], c = index[r + 1][s1], d = index[r][s1];
            Vec2 ua = uv(s, r), ub = uv(s, r + 1), uc = uv(s + 1, r + 1), ud = uv(s + 1, r);
            // The pole rows collapse one triangle of each quad.
            if (r != 0) {
                mesh.faces.push_back({a, b, d});
                mesh.face_uvs.push_back({ua, ub, ud});
            }
            if (r != rings - 1) {
                mesh.faces.push_back({d, b, c});
                mesh.face_uvs.push_back({ud, ub, uc});
            }
        }
    }
    update_normals(mesh);
    normalize(mesh);
    return mesh;
}

Mesh make_cube() {
    Mesh mesh;
    for (int i = 0; i < 8; ++i)
        mesh.vertices.emplace_back(i & 1 ? 1.0 : -1.0, i & 2 ? 1.0 : -1.0, i & 4 ? 1.0 : -1.0);
    // Each face listed counter-clockwise seen from outside, with its atlas cell.
    struct Quad {
        std::array<int, 4> v;
        int cell;
    };
    const std::array<Quad, 6> quads = {{
        {{1, 3, 7, 5}, 0}, // +X
        {{4, 6, 2, 0}, 1}, // -X
        {{2, 6, 7, 3}, 2}, // +Y
        {{0, 1, 5, 4}, 3}, // -Y
        {{4, 5, 7, 6}, 4}, // +Z
        {{0, 2, 3, 1}, 5}, // -Z
    }};
    const double third = 1.0 / 3.0;
    for (const auto& q : quads) {
        double u0 = (q.cell % 3) * third;
        double v0 = (q.cell / 3) * third;
        std::array<Vec2, 4> t = {Vec2(u0, v0), Vec2(u0 + third, v0), Vec2(u0 + third, v0 + third),
                                 Vec2(u0, v0 + third)};
        mesh.faces.push_back({q.v[0], q.v[1], q.v[2]});
        mesh.face_uvs.push_back({t[0], t[1], t[2]});
        mesh.faces.push_back({q.v[0], q.v[2], q.v[3]});
        mesh.face_uvs.push_back({t[0], t[2], t[3]});
    }
    update_normals(mesh);
    normalize(mesh);
    return mesh;
}

} // namespace meshdiff
