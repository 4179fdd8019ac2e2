#include "meshdiff/raster.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "meshdiff/errors.hpp"
#include "meshdiff/png_io.hpp"

namespace meshdiff {

namespace {

double edge(const Vec2& a, const Vec2& b, const Vec2& p) {
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

// With both neighbours oriented to positive area, a shared edge is walked in
// opposite directions, so exactly one of them owns it.
bool owns_edge(const Vec2& a, const Vec2& b) {
    Vec2 d = b - a;
    return d.y() > 0.0 || (d.y() == 0.0 && d.x() < 0.0);
}

bool inside(double w, const Vec2& a, const Vec2& b) { return w > 0.0 || (w == 0.0 && owns_edge(a, b)); }

// Calls fn(px, py, barycentric) for every pixel center covered by the 2D
// triangle (p0, p1, p2), given in continuous pixel coordinates.
template <class Fn>
void scan_triangle(Vec2 p0, Vec2 p1, Vec2 p2, int width, int height, Fn&& fn) {
    double area = edge(p0, p1, p2);
    if (area == 0.0 || !std::isfinite(area)) return;
    std::array<int, 3> idx = {0, 1, 2};
    if (area < 0.0) {
        std::swap(p1, p2);
        std::swap(idx[1], idx[2]);
        area = -area;
    }
    int x0 = std::max(0, static_cast<int>(std::floor(std::min({p0.x(), p1.x(), p2.x()}) - 0.5)));
    int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({p0.x(), p1.x(), p2.x()}) - 0.5)));
    int y0 = std::max(0, static_cast<int>(std::floor(std::min({p0.y(), p1.y(), p2.y()}) - 0.5)));
    int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({p0.y(), p1.y(), p2.y()}) - 0.5)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            Vec2 p(x + 0.5, y + 0.5);
            double w0 = edge(p1, p2, p);
            double w1 = edge(p2, p0, p);
            double w2 = edge(p0, p1, p);
            if (!inside(w0, p1, p2) || !inside(w1, p2, p0) || !inside(w2, p0, p1)) continue;
            std::array<double, 3> bary{};
            bary[idx[0]] = w0 / area;
            bary[idx[1]] = w1 / area;
            bary[idx[2]] = w2 / area;
            fn(x, y, bary);
        }
    }
}

int texel_of(const Vec2& uv, int size) {
    int tx = std::clamp(static_cast<int>(std::floor(uv.x() * size)), 0, size - 1);
    int ty = std::clamp(static_cast<int>(std::floor((1.0 - uv.y()) * size)), 0, size - 1);
    return ty * size + tx;
}

} // namespace

std::size_t RenderMaps::foreground_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

Image RenderMaps::depth_image() const {
    Image img(resolution, resolution, 1);
    img.data = depth;
    return img;
}

RenderMaps rasterize(const Mesh& mesh, const CameraView& view, int texture_size) {
    if (texture_size < 1) throw ConfigError("texture size must be >= 1");
    if (view.resolution < 1 || view.ortho_half_extent <= 0.0) throw ConfigError("invalid camera view");
    const int res = view.resolution;
    const std::size_t n = static_cast<std::size_t>(res) * res;
    RenderMaps maps;
    maps.resolution = res;
    maps.texture_size = texture_size;
    maps.texel.assign(n, -1);
    maps.face.assign(n, -1);
    maps.depth.assign(n, 0.0);
    maps.mask.assign(n, 0);
    maps.weight.assign(n, 0.0);
    maps.view_dir = view.view_direction();

    std::vector<Vec2> screen(mesh.vertices.size());
    std::vector<double> z(mesh.vertices.size());
    double zmin = std::numeric_limits<double>::infinity();
    double zmax = -zmin;
    const double to_pixels = 0.5 * res / view.ortho_half_extent;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& v = mesh.vertices[i];
        screen[i] = Vec2((v.dot(view.right) + view.ortho_half_extent) * to_pixels,
                         (view.ortho_half_extent - v.dot(view.up)) * to_pixels);
        z[i] = (v - view.position).dot(view.forward);
        zmin = std::min(zmin, z[i]);
        zmax = std::max(zmax, z[i]);
    }

    std::vector<double> zbuf(n, std::numeric_limits<double>::infinity());
    std::vector<std::array<double, 3>> bary(n);
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        if (mesh.degenerate[f]) continue;
        const auto& tri = mesh.faces[f];
        scan_triangle(screen[tri[0]], screen[tri[1]], screen[tri[2]], res, res,
                      [&](int x, int y, const std::array<double, 3>& b) {
                          double fz = b[0] * z[tri[0]] + b[1] * z[tri[1]] + b[2] * z[tri[2]];
                          std::size_t p = static_cast<std::size_t>(y) * res + x;
                          if (!(fz < zbuf[p] - kDepthTieEps)) return;
                          zbuf[p] = fz;
                          maps.face[p] = static_cast<int>(f);
                          bary[p] = b;
                      });
    }

    const double zrange = zmax - zmin;
    for (std::size_t p = 0; p < n; ++p) {
        int f = maps.face[p];
        if (f < 0) continue;
        const auto& b = bary[p];
        const auto& uv = mesh.face_uvs[f];
        Vec2 t = b[0] * uv[0] + b[1] * uv[1] + b[2] * uv[2];
        maps.texel[p] = texel_of(t, texture_size);
        maps.mask[p] = 1;
        double nearness = zrange > 0.0 ? (zmax - zbuf[p]) / zrange : 1.0;
        maps.depth[p] = kDepthFloor + (1.0 - kDepthFloor) * std::clamp(nearness, 0.0, 1.0);
        double cosine = mesh.face_normals[f].dot(maps.view_dir);
        maps.weight[p] = std::clamp(view.importance * std::max(0.0, cosine), 0.0, view.importance);
    }
    return maps;
}

Accumulator::Accumulator(int size, int channels)
    : size_(size), channels_(channels),
      mean_(static_cast<std::size_t>(size) * size * channels, 0.0),
      weight_sum_(static_cast<std::size_t>(size) * size, 0.0) {}

void Accumulator::add(int texel, double weight, const double* value) {
    if (!(weight > 0.0)) return;
    double total = weight_sum_[texel] + weight;
    double share = weight / total;
    double* m = mean_.data() + static_cast<std::size_t>(texel) * channels_;
    // Incremental form keeps repeated identical values exact.
    for (int c = 0; c < channels_; ++c) m[c] += share * (value[c] - m[c]);
    weight_sum_[texel] = total;
}

void Accumulator::clear(int texel) {
    weight_sum_[texel] = 0.0;
    std::fill_n(mean_.data() + static_cast<std::size_t>(texel) * channels_, channels_, 0.0);
}

void Accumulator::merge(const Accumulator& other) {
    if (other.size_ != size_ || other.channels_ != channels_)
        throw ShapeMismatch("accumulator shapes differ");
    for (std::size_t t = 0; t < weight_sum_.size(); ++t)
        add(static_cast<int>(t), other.weight_sum_[t], other.mean(static_cast<int>(t)));
}

std::size_t Accumulator::covered_count() const {
    return static_cast<std::size_t>(
        std::count_if(weight_sum_.begin(), weight_sum_.end(), [](double w) { return w > 0.0; }));
}

Image Accumulator::resolve(double fill) const {
    Image out(size_, size_, channels_, fill);
    for (std::size_t t = 0; t < weight_sum_.size(); ++t) {
        if (!(weight_sum_[t] > 0.0)) continue;
        std::copy_n(mean(static_cast<int>(t)), channels_, out.data.data() + t * channels_);
    }
    return out;
}

void backproject(const RenderMaps& maps, const Image& image, Accumulator& acc) {
    if (image.height != maps.resolution || image.width != maps.resolution)
        throw ShapeMismatch("backproject: image does not match render maps");
    if (image.channels != acc.channels() || acc.size() != maps.texture_size)
        throw ShapeMismatch("backproject: accumulator does not match");
    for (std::size_t p = 0; p < maps.pixel_count(); ++p) {
        if (!maps.mask[p] || !(maps.weight[p] > 0.0)) continue;
        acc.add(maps.texel[p], maps.weight[p], image.data.data() + p * image.channels);
    }
}

Image render_latent(const RenderMaps& maps, const ShTexture& texture, const Image* background) {
    if (maps.texture_size != texture.size())
        throw ShapeMismatch("render_latent: texture size differs from render maps");
    Image out(maps.resolution, maps.resolution, texture.channels());
    if (background) {
        require_same_shape(out, *background, "render_latent background");
        out.data = background->data;
    }
    std::array<double, sh_coeff_count(kMaxShOrder)> basis{};
    sh_basis(maps.view_dir, texture.order(), basis.data());
    for (std::size_t p = 0; p < maps.pixel_count(); ++p) {
        if (!maps.mask[p]) continue;
        evaluate_into(texture, maps.texel[p], basis.data(), out.data.data() + p * out.channels);
    }
    return out;
}

Image render_texture(const RenderMaps& maps, const Image& texture, double background) {
    if (texture.height != maps.texture_size || texture.width != maps.texture_size)
        throw ShapeMismatch("render_texture: texture size differs from render maps");
    Image out(maps.resolution, maps.resolution, texture.channels, background);
    for (std::size_t p = 0; p < maps.pixel_count(); ++p) {
        if (!maps.mask[p]) continue;
        std::copy_n(texture.data.data() + static_cast<std::size_t>(maps.texel[p]) * texture.channels,
                    texture.channels, out.data.data() + p * out.channels);
    }
    return out;
}

UvCoverage rasterize_uv(const Mesh& mesh, int texture_size) {
    UvCoverage cov;
    cov.size = texture_size;
    const std::size_t n = static_cast<std::size_t>(texture_size) * texture_size;
    cov.face.assign(n, -1);
    cov.position.assign(n, Vec3::Zero());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& uv = mesh.face_uvs[f];
        auto px = [&](const Vec2& t) { return Vec2(t.x() * texture_size, (1.0 - t.y()) * texture_size); };
        const auto& tri = mesh.faces[f];
        scan_triangle(px(uv[0]), px(uv[1]), px(uv[2]), texture_size, texture_size,
                      [&](int x, int y, const std::array<double, 3>& b) {
                          std::size_t t = static_cast<std::size_t>(y) * texture_size + x;
                          if (cov.face[t] >= 0) return;
                          cov.face[t] = static_cast<int>(f);
                          cov.position[t] = b[0] * mesh.vertices[tri[0]] + b[1] * mesh.vertices[tri[1]] +
                                            b[2] * mesh.vertices[tri[2]];
                      });
    }
    return cov;
}

void write_debug_maps(const RenderMaps& maps, const std::filesystem::path& dir, const std::string& prefix) {
    Image depth = maps.depth_image();
    Image mask(maps.resolution, maps.resolution, 1);
    Image weight(maps.resolution, maps.resolution, 1);
    double wmax = 0.0;
    for (double w : maps.weight) wmax = std::max(wmax, w);
    for (std::size_t p = 0; p < maps.pixel_count(); ++p) {
        mask.data[p] = maps.mask[p] ? 1.0 : 0.0;
        weight.data[p] = wmax > 0.0 ? maps.weight[p] / wmax : 0.0;
    }
    write_png(dir / (prefix + "_depth.png"), to_png8(depth));
    write_png(dir / (prefix + "_mask.png"), to_png8(mask));
    write_png(dir / (prefix + "_weight.png"), to_png8(weight));
}

} // namespace meshdiff
