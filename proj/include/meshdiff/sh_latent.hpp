#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "meshdiff/mesh.hpp"

namespace meshdiff {

// Integer texel coordinate: x is the column, y the row (row 0 = top, v = 1).
struct Texel {
    int x = 0;
    int y = 0;
    friend bool operator==(const Texel&, const Texel&) = default;
};

constexpr int kMaxShOrder = 1;
constexpr int sh_coeff_count(int order) { return (order + 1) * (order + 1); }

// Scale of the degree-1 basis relative to the (unit) degree-0 basis:
// Y_1^m / Y_0^0 = sqrt(3/(4 pi)) / (1/(2 sqrt(pi))) = sqrt(3).
inline const double kShDegree1Scale = 1.7320508075688772;

// Unit direction from polar angle theta (from +Z) and azimuth phi.
Vec3 direction_from_angles(double theta, double phi);

// Real SH basis in (l, m) order: [1, k y, k z, k x] for order 1, [1] for 0.
// The basis is scaled so the l = 0 entry is exactly 1.
std::vector<double> sh_basis(const Vec3& direction, int order);
void sh_basis(const Vec3& direction, int order, double* out);

// T x T texels, each holding C channels of (N+1)^2 SH coefficients.
class ShTexture {
public:
    ShTexture() = default;
    ShTexture(int order, int size, int channels);

    int order() const { return order_; }
    int size() const { return size_; }
    int channels() const { return channels_; }
    int coeffs_per_channel() const { return sh_coeff_count(order_); }
    std::size_t texel_count() const { return static_cast<std::size_t>(size_) * size_; }
    int texel_index(Texel t) const { return t.y * size_ + t.x; }

    // Coefficients of one texel: channels x coeffs_per_channel, channel major.
    double* texel(int index) { return coeffs_.data() + stride() * index; }
    const double* texel(int index) const { return coeffs_.data() + stride() * index; }
    double& coeff(int texel_idx, int channel, int k) {
        return coeffs_[stride() * texel_idx + channel * coeffs_per_channel() + k];
    }
    double coeff(int texel_idx, int channel, int k) const {
        return coeffs_[stride() * texel_idx + channel * coeffs_per_channel() + k];
    }

    const std::vector<double>& coeffs() const { return coeffs_; }
    std::vector<double>& coeffs() { return coeffs_; }

    // Same texture re-expressed at another order (higher terms zero, or
    // truncated).
    ShTexture with_order(int order) const;

    // Largest |coefficient| over the degree >= 1 terms.
    double max_abs_higher_order() const;

    friend bool operator==(const ShTexture&, const ShTexture&) = default;

private:
    std::size_t stride() const { return static_cast<std::size_t>(channels_) * coeffs_per_channel(); }

    int order_ = 0;
    int size_ = 0;
    int channels_ = 0;
    std::vector<double> coeffs_;
};

// Evaluates the SH expansion at `direction` for every channel.
std::vector<double> evaluate(const ShTexture& texture, Texel texel, const Vec3& direction);
void evaluate_into(const ShTexture& texture, int texel_index, const double* basis, double* out);

// Flat list of (texel, direction, weight, value) observations.
class TexelSamples {
public:
    struct Sample {
        int texel;
        Vec3 direction;
        double weight;
    };

    TexelSamples(int size, int channels) : size_(size), channels_(channels) {}

    int size() const { return size_; }
    int channels() const { return channels_; }
    std::size_t count() const { return samples_.size(); }
    const Sample& sample(std::size_t i) const { return samples_[i]; }
    const double* value(std::size_t i) const { return values_.data() + i * channels_; }

    void add(Texel t, const Vec3& direction, double weight, const double* value);
    void add(int texel_index, const Vec3& direction, double weight, const double* value);

    // Per-texel: true when the texel has positive total weight.
    std::vector<bool> observed() const;

private:
    int size_;
    int channels_;
    std::vector<Sample> samples_;
    std::vector<double> values_;
};

// Per texel and channel: argmin_c sum_i w_i (basis(d_i).c - v_i)^2 + ridge |c_{l>=1}|^2.
// The ridge leaves the l = 0 term free, so an order-0 fit is the exact
// weighted mean. Unobserved texels copy `prior` (re-expressed at `order`)
// or stay zero.
ShTexture fit_weighted(const TexelSamples& samples, int order, double ridge,
                       const ShTexture* prior = nullptr);

// (1 - alpha) * fit_weighted(order) + alpha * fit_weighted(0), with the
// order-0 fit embedded at `order`. Unobserved texels copy `prior`.
ShTexture blended_fit(const TexelSamples& samples, int order, double alpha, double ridge,
                      const ShTexture* prior = nullptr);

// Coefficient planes as raw little-endian float32: a header of four uint32
// (width, height, channels, order) followed by one height x width x channels
// plane per coefficient.
void write_coefficient_planes(const ShTexture& texture, const std::filesystem::path& path);
ShTexture read_coefficient_planes(const std::filesystem::path& path);

} // namespace meshdiff
