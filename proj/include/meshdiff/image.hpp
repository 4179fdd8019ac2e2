#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "meshdiff/errors.hpp"

namespace meshdiff {

// Dense row-major height x width x channels grid of doubles. Used for latent
// images, decoded RGB images, depth maps and RGB textures alike.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    std::size_t offset(int y, int x) const {
        return (static_cast<std::size_t>(y) * width + x) * channels;
    }
    double& at(int y, int x, int c) { return data[offset(y, x) + c]; }
    double at(int y, int x, int c) const { return data[offset(y, x) + c]; }
    double* pixel(int y, int x) { return data.data() + offset(y, x); }
    const double* pixel(int y, int x) const { return data.data() + offset(y, x); }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    friend bool operator==(const Image&, const Image&) = default;
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeMismatch(std::string(what) + ": image shapes differ");
}

// Latent-space mask, one flag per latent pixel.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int h, int w, bool fill = false)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {}

    bool at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int y, int x, bool v) { data[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }

    // Rectangle [y0, y1) x [x0, x1) set, the rest clear.
    static Mask rect(int h, int w, int y0, int y1, int x0, int x1) {
        Mask m(h, w);
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) m.set(y, x, true);
        return m;
    }
};

} // namespace meshdiff
