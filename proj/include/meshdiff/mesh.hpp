#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace meshdiff {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

// Triangle mesh with one UV per face corner. Immutable once loaded.
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<std::array<Vec2, 3>> face_uvs;
    // Unit normals; zero vector for degenerate faces.
    std::vector<Vec3> face_normals;
    std::vector<bool> degenerate;

    std::size_t face_count() const { return faces.size(); }
    double bounding_radius() const;
};

// normalize((b - a) x (c - a)); throws DegenerateFace for (near) zero area.
Vec3 compute_face_normal(const Vec3& a, const Vec3& b, const Vec3& c);

// Parses an OBJ stream. Polygons are fan triangulated, UVs outside [0,1] are
// wrapped, normals are computed. Does not normalize positions.
Mesh parse_obj(std::istream& in);

// parse_obj + normalize.
Mesh load_mesh(const std::filesystem::path& path);

// Recenters the bounding box on the origin and scales the longest axis to
// extent 2. A mesh that is already normalized is returned unchanged.
void normalize(Mesh& mesh);
bool is_normalized(const Mesh& mesh);

// Recomputes face_normals/degenerate from the current positions.
void update_normals(Mesh& mesh);

// Writes `v`, `vt` (one per face corner) and `f v/vt` records.
void write_obj(const Mesh& mesh, std::ostream& out, const std::string& mtllib = {},
               const std::string& material = {});
void save_obj(const Mesh& mesh, const std::filesystem::path& path,
              const std::string& mtllib = {}, const std::string& material = {});

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);
double surface_area(const Mesh& mesh);

// Test and demo geometry.
// Latitude/longitude sphere with an equirectangular UV layout.
Mesh make_uv_sphere(int segments, int rings);
// Cube whose six faces occupy six cells of a 3x3 UV atlas.
Mesh make_cube();

} // namespace meshdiff
