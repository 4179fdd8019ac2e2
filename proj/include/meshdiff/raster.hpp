#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "meshdiff/camera.hpp"
#include "meshdiff/image.hpp"
#include "meshdiff/mesh.hpp"
#include "meshdiff/sh_latent.hpp"

namespace meshdiff {

// Depth assigned to the farthest point of the mesh; background is 0.
constexpr double kDepthFloor = 0.05;
// Fragments closer than this in view depth count as a tie.
constexpr double kDepthTieEps = 1e-7;

// Per-pixel rasterization result for one view, row-major, row 0 at the top.
struct RenderMaps {
    int resolution = 0;
    int texture_size = 0;
    std::vector<int> texel;       // flat texel index, -1 for background
    std::vector<int> face;        // visible face, -1 for background
    std::vector<double> depth;    // 1 nearest .. kDepthFloor farthest, 0 background
    std::vector<std::uint8_t> mask;
    std::vector<double> weight;   // importance * max(0, cos)
    Vec3 view_dir = Vec3::UnitZ(); // toward the camera, constant under orthographic projection

    std::size_t pixel_count() const { return texel.size(); }
    bool covered(std::size_t p) const { return mask[p] != 0; }
    Texel texel_at(std::size_t p) const { return {texel[p] % texture_size, texel[p] / texture_size}; }
    std::size_t foreground_count() const;
    // Depth as a single-channel image.
    Image depth_image() const;

    friend bool operator==(const RenderMaps&, const RenderMaps&) = default;
};

// Z-buffered orthographic rasterization with nearest-texel UV lookup. Pixel
// centers inside a triangle are covered (shared edges belong to exactly one
// side); depth ties go to the lower face index.
RenderMaps rasterize(const Mesh& mesh, const CameraView& view, int texture_size);

// Weighted running mean per texel. mean is zero wherever weight_sum is zero.
class Accumulator {
public:
    Accumulator(int size, int channels);

    int size() const { return size_; }
    int channels() const { return channels_; }

    void add(int texel, double weight, const double* value);
    void clear(int texel);
    // Folds another accumulator of the same shape into this one.
    void merge(const Accumulator& other);

    double weight_sum(int texel) const { return weight_sum_[texel]; }
    bool covered(int texel) const { return weight_sum_[texel] > 0.0; }
    const double* mean(int texel) const { return mean_.data() + static_cast<std::size_t>(texel) * channels_; }
    // sum = mean * weight_sum
    double sum(int texel, int channel) const { return mean(texel)[channel] * weight_sum_[texel]; }
    std::size_t covered_count() const;

    // T x T x C weighted means, `fill` on uncovered texels.
    Image resolve(double fill = 0.0) const;

private:
    int size_;
    int channels_;
    std::vector<double> mean_;
    std::vector<double> weight_sum_;
};

// Scatters every foreground pixel with positive weight into its texel.
void backproject(const RenderMaps& maps, const Image& image, Accumulator& acc);

// Latent view of an SH texture: foreground pixels evaluate the texel's SH
// expansion toward the camera, background pixels copy `background` (zero
// when null).
Image render_latent(const RenderMaps& maps, const ShTexture& texture, const Image* background = nullptr);

// Plain texture lookup (nearest texel) of a T x T x C image.
Image render_texture(const RenderMaps& maps, const Image& texture, double background = 0.0);

// For each texel, the face whose UV triangle contains the texel center and
// the matching surface point. face = -1 where no triangle covers it.
struct UvCoverage {
    int size = 0;
    std::vector<int> face;
    std::vector<Vec3> position;
};
UvCoverage rasterize_uv(const Mesh& mesh, int texture_size);

// Grayscale PNG dumps of depth, mask and weight.
void write_debug_maps(const RenderMaps& maps, const std::filesystem::path& dir, const std::string& prefix);

} // namespace meshdiff
