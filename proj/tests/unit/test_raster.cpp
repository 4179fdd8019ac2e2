#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "meshdiff/errors.hpp"
#include "meshdiff/raster.hpp"
#include "meshdiff/rng.hpp"
#include "scene.hpp"

using namespace meshdiff;

namespace {

void add_quad(Mesh& m, const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d, double u0, double u1) {
    int base = static_cast<int>(m.vertices.size());
    m.vertices.insert(m.vertices.end(), {a, b, c, d});
    m.faces.push_back({base, base + 1, base + 2});
    m.faces.push_back({base, base + 2, base + 3});
    m.face_uvs.push_back({Vec2(u0, 0), Vec2(u1, 0), Vec2(u1, 1)});
    m.face_uvs.push_back({Vec2(u0, 0), Vec2(u1, 1), Vec2(u0, 1)});
}

// Square of half-size s in the plane through the origin with normal
// (sin a, 0, cos a).
Mesh rotated_quad(double s, double a) {
    Mesh m;
    Vec3 r(std::cos(a), 0, -std::sin(a)), u(0, 1, 0);
    add_quad(m, -s * r - s * u, s * r - s * u, s * r + s * u, -s * r + s * u, 0.0, 1.0);
    update_normals(m);
    return m;
}

CameraView front_camera(int res, double importance = 1.0) {
    CameraView v = look_at_origin(Vec3(0, 0, 3), 1.0, res);
    v.importance = importance;
    return v;
}

} // namespace

TEST_CASE("screen-aligned quad fills the frame at full weight") {
    Mesh quad = rotated_quad(1.5, 0.0);
    RenderMaps maps = rasterize(quad, front_camera(32, 2.0), 16);
    CHECK(maps.foreground_count() == 32 * 32);
    for (std::size_t p = 0; p < maps.pixel_count(); ++p) {
        CHECK(maps.weight[p] == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(maps.texel[p] >= 0);
    }
    CHECK(maps.view_dir.isApprox(Vec3(0, 0, 1)));
}

TEST_CASE("weight follows the cosine between normal and view direction") {
    Mesh quad = rotated_quad(0.8, std::numbers::pi / 3.0);
    RenderMaps maps = rasterize(quad, front_camera(48), 16);
    REQUIRE(maps.foreground_count() > 0);
    for (std::size_t p = 0; p < maps.pixel_count(); ++p) {
        if (!maps.mask[p]) {
            CHECK(maps.weight[p] == 0.0);
            CHECK(maps.texel[p] == -1);
            CHECK(maps.depth[p] == 0.0);
            continue;
        }
        CHECK(maps.weight[p] == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("back-facing surfaces get zero weight") {
    Mesh quad = rotated_quad(0.8, std::numbers::pi);
    RenderMaps maps = rasterize(quad, front_camera(16), 8);
    CHECK(maps.foreground_count() > 0);
    for (double w : maps.weight) CHECK(w == 0.0);
}

TEST_CASE("nearer triangle wins contested pixels and has greater depth") {
    Mesh m;
    add_quad(m, {-1, -1, 0}, {1, -1, 0}, {1, 1, 0}, {-1, 1, 0}, 0.0, 0.5);
    add_quad(m, {-0.5, -0.5, 0.5}, {0.5, -0.5, 0.5}, {0.5, 0.5, 0.5}, {-0.5, 0.5, 0.5}, 0.5, 1.0);
    update_normals(m);
    const int T = 8;
    RenderMaps maps = rasterize(m, front_camera(40), T);
    std::size_t contested = 0;
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x) {
            std::size_t p = static_cast<std::size_t>(y) * 40 + x;
            double sx = (x + 0.5) / 20.0 - 1.0, sy = 1.0 - (y + 0.5) / 20.0;
            if (std::abs(sx) < 0.49 && std::abs(sy) < 0.49) {
                ++contested;
                CHECK(maps.face[p] >= 2);
                CHECK(maps.texel_at(p).x >= T / 2);
                CHECK(maps.depth[p] == doctest::Approx(1.0));
            } else if (std::abs(sx) < 0.99 && std::abs(sy) < 0.99 && (std::abs(sx) > 0.51 || std::abs(sy) > 0.51)) {
                CHECK(maps.face[p] < 2);
                CHECK(maps.texel_at(p).x < T / 2);
                CHECK(maps.depth[p] == doctest::Approx(kDepthFloor));
            }
        }
    CHECK(contested > 0);
}

TEST_CASE("equal depth goes to the lower face index") {
    Mesh m;
    add_quad(m, {-1, -1, 0}, {1, -1, 0}, {1, 1, 0}, {-1, 1, 0}, 0.0, 0.5);
    add_quad(m, {-1, -1, 0}, {1, -1, 0}, {1, 1, 0}, {-1, 1, 0}, 0.5, 1.0);
    update_normals(m);
    RenderMaps maps = rasterize(m, front_camera(16), 8);
    for (std::size_t p = 0; p < maps.pixel_count(); ++p)
        if (maps.mask[p]) CHECK(maps.face[p] < 2);
}

TEST_CASE("sphere rasterization invariants") {
    Mesh s = make_uv_sphere(32, 16);
    normalize(s);
    ViewConfig cfg;
    cfg.resolution = 64;
    for (const auto& view : make_views(s, cfg)) {
        RenderMaps maps = rasterize(s, view, 32);
        for (std::size_t p = 0; p < maps.pixel_count(); ++p) {
            CHECK(maps.weight[p] >= 0.0);
            CHECK(maps.weight[p] <= view.importance);
            if (maps.mask[p]) {
                CHECK((maps.depth[p] >= kDepthFloor && maps.depth[p] <= 1.0));
                CHECK((maps.texel[p] >= 0 && maps.texel[p] < 32 * 32));
            }
        }
    }
}

TEST_CASE("constant order-0 texture renders its coefficient") {
    Mesh s = make_uv_sphere(32, 16);
    normalize(s);
    ShTexture tex(0, 16, 4);
    for (std::size_t t = 0; t < tex.texel_count(); ++t)
        for (int c = 0; c < 4; ++c) tex.coeff(static_cast<int>(t), c, 0) = 0.25 * (c + 1);
    RenderMaps maps = rasterize(s, look_at_origin(Vec3(1, 2, 2), 1.1, 32), 16);
    Image bg = gaussian_image(32, 32, 4, 1);
    Image out = render_latent(maps, tex, &bg);
    for (std::size_t p = 0; p < maps.pixel_count(); ++p)
        for (int c = 0; c < 4; ++c)
            CHECK(out.data[p * 4 + c] == (maps.mask[p] ? 0.25 * (c + 1) : bg.data[p * 4 + c]));
    Image zero_bg = render_latent(maps, tex);
    for (std::size_t p = 0; p < maps.pixel_count(); ++p)
        if (!maps.mask[p]) CHECK(zero_bg.data[p * 4] == 0.0);
}

TEST_CASE("antipodal views differ by twice the degree-1 term") {
    Mesh s = make_uv_sphere(32, 16);
    normalize(s);
    ShTexture tex(1, 16, 1);
    const double c0 = 0.3, cy = -0.2, cz = 0.7, cx = 0.1;
    for (std::size_t t = 0; t < tex.texel_count(); ++t) {
        int i = static_cast<int>(t);
        tex.coeff(i, 0, 0) = c0;
        tex.coeff(i, 0, 1) = cy;
        tex.coeff(i, 0, 2) = cz;
        tex.coeff(i, 0, 3) = cx;
    }
    Image a = render_latent(rasterize(s, look_at_origin(Vec3(0, 0, 3), 1.1, 16), 16), tex);
    Image b = render_latent(rasterize(s, look_at_origin(Vec3(0, 0, -3), 1.1, 16), 16), tex);
    const double k = kShDegree1Scale;
    CHECK(a.data[8 * 16 + 8] == doctest::Approx(c0 + k * cz));
    CHECK(b.data[8 * 16 + 8] == doctest::Approx(c0 - k * cz));
    CHECK(a.data[8 * 16 + 8] - b.data[8 * 16 + 8] == doctest::Approx(2.0 * k * cz));
}

TEST_CASE("render_latent rejects mismatched textures") {
    Mesh s = make_uv_sphere(8, 4);
    RenderMaps maps = rasterize(s, front_camera(8), 16);
    CHECK_THROWS_AS(render_latent(maps, ShTexture(0, 8, 4)), ShapeMismatch);
    Image bg(4, 4, 4);
    CHECK_THROWS_AS(render_latent(maps, ShTexture(0, 16, 4), &bg), ShapeMismatch);
}

TEST_CASE("accumulator keeps weighted means") {
    Accumulator acc(2, 1);
    const double one = 1.0, three = 3.0;
    acc.add(0, 1.0, &one);
    acc.add(0, 3.0, &three);
    CHECK(acc.mean(0)[0] == doctest::Approx(2.5));
    CHECK(acc.weight_sum(0) == 4.0);
    CHECK(acc.sum(0, 0) == doctest::Approx(10.0));
    acc.add(1, 0.0, &three);
    CHECK_FALSE(acc.covered(1));
    CHECK(acc.covered_count() == 1);
    Image r = acc.resolve(0.5);
    CHECK(r.data[1] == 0.5);

    // Repeating one value keeps it exactly.
    Accumulator rep(1, 1);
    const double v = 0.1;
    for (int i = 0; i < 7; ++i) rep.add(0, 0.3 + i, &v);
    CHECK(rep.mean(0)[0] == v);

    Accumulator other(2, 1);
    other.add(1, 2.0, &three);
    acc.merge(other);
    CHECK(acc.mean(1)[0] == 3.0);
    CHECK_THROWS_AS(acc.merge(Accumulator(3, 1)), ShapeMismatch);
}

TEST_CASE("backproject skips zero-weight pixels") {
    Mesh quad = rotated_quad(0.8, std::numbers::pi);
    RenderMaps maps = rasterize(quad, front_camera(16), 8);
    Accumulator acc(8, 3);
    backproject(maps, Image(16, 16, 3, 1.0), acc);
    CHECK(acc.covered_count() == 0);
    CHECK_THROWS_AS(backproject(maps, Image(8, 8, 3), acc), ShapeMismatch);
}

TEST_CASE("single view round trip with unit weights") {
    Mesh quad = rotated_quad(1.5, 0.0);
    // Texture finer than the image: every pixel owns its texel.
    const int T = 64;
    RenderMaps maps = rasterize(quad, front_camera(32), T);
    Image tex = gaussian_image(T, T, 3, 5);
    Image img = render_texture(maps, tex);
    Accumulator acc(T, 3);
    backproject(maps, img, acc);
    CHECK(acc.covered_count() == 32 * 32);
    for (std::size_t p = 0; p < maps.pixel_count(); ++p)
        for (int c = 0; c < 3; ++c) CHECK(acc.mean(maps.texel[p])[c] == img.data[p * 3 + c]);
}

TEST_CASE("UV rasterization locates surface points") {
    Mesh quad = rotated_quad(1.0, 0.0);
    UvCoverage uv = rasterize_uv(quad, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            int t = y * 16 + x;
            REQUIRE(uv.face[t] >= 0);
            // u runs along +x, v along +y; row 0 is v = 1.
            CHECK(uv.position[t].x() == doctest::Approx(-1.0 + 2.0 * (x + 0.5) / 16));
            CHECK(uv.position[t].y() == doctest::Approx(1.0 - 2.0 * (y + 0.5) / 16));
        }
}

TEST_CASE("debug maps are written as PNGs") {
    Mesh s = make_uv_sphere(16, 8);
    RenderMaps maps = rasterize(s, front_camera(16), 8);
    auto dir = testing::scratch_dir("raster_debug");
    write_debug_maps(maps, dir, "v0");
    for (const char* suffix : {"_depth.png", "_mask.png", "_weight.png"})
        CHECK(std::filesystem::exists(std::filesystem::path(dir) / (std::string("v0") + suffix)));
}
