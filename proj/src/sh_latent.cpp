#include "meshdiff/sh_latent.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <Eigen/Dense>

#include "meshdiff/errors.hpp"

namespace meshdiff {

Vec3 direction_from_angles(double theta, double phi) {
    return Vec3(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
}

void sh_basis(const Vec3& d, int order, double* out) {
    if (order < 0 || order > kMaxShOrder) throw UnsupportedOrder(order);
    out[0] = 1.0;
    if (order >= 1) {
        out[1] = kShDegree1Scale * d.y();
        out[2] = kShDegree1Scale * d.z();
        out[3] = kShDegree1Scale * d.x();
    }
}

std::vector<double> sh_basis(const Vec3& direction, int order) {
    if (order < 0 || order > kMaxShOrder) throw UnsupportedOrder(order);
    std::vector<double> b(sh_coeff_count(order));
    sh_basis(direction, order, b.data());
    return b;
}

ShTexture::ShTexture(int order, int size, int channels)
    : order_(order), size_(size), channels_(channels) {
    if (order < 0 || order > kMaxShOrder) throw UnsupportedOrder(order);
    if (size < 1 || channels < 1) throw ShapeMismatch("texture size and channels must be >= 1");
    coeffs_.assign(texel_count() * stride(), 0.0);
}

ShTexture ShTexture::with_order(int order) const {
    ShTexture out(order, size_, channels_);
    int keep = std::min(coeffs_per_channel(), out.coeffs_per_channel());
    for (std::size_t t = 0; t < texel_count(); ++t)
        for (int c = 0; c < channels_; ++c)
            for (int k = 0; k < keep; ++k)
                out.coeff(static_cast<int>(t), c, k) = coeff(static_cast<int>(t), c, k);
    return out;
}

double ShTexture::max_abs_higher_order() const {
    double m = 0.0;
    const int K = coeffs_per_channel();
    for (std::size_t i = 0; i < coeffs_.size(); ++i)
        if (i % K != 0) m = std::max(m, std::abs(coeffs_[i]));
    return m;
}

void evaluate_into(const ShTexture& texture, int texel_index, const double* basis, double* out) {
    const int K = texture.coeffs_per_channel();
    const double* c = texture.texel(texel_index);
    for (int ch = 0; ch < texture.channels(); ++ch) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k) acc += c[ch * K + k] * basis[k];
        out[ch] = acc;
    }
}

std::vector<double> evaluate(const ShTexture& texture, Texel texel, const Vec3& direction) {
    if (texel.x < 0 || texel.y < 0 || texel.x >= texture.size() || texel.y >= texture.size())
        throw OutOfRange("texel (" + std::to_string(texel.x) + ", " + std::to_string(texel.y) +
                         ") outside " + std::to_string(texture.size()) + "^2 texture");
    std::array<double, sh_coeff_count(kMaxShOrder)> basis{};
    sh_basis(direction, texture.order(), basis.data());
    std::vector<double> out(texture.channels());
    evaluate_into(texture, texture.texel_index(texel), basis.data(), out.data());
    return out;
}

void TexelSamples::add(Texel t, const Vec3& direction, double weight, const double* value) {
    if (t.x < 0 || t.y < 0 || t.x >= size_ || t.y >= size_) throw OutOfRange("sample texel out of range");
    add(t.y * size_ + t.x, direction, weight, value);
}

void TexelSamples::add(int texel_index, const Vec3& direction, double weight, const double* value) {
    samples_.push_back({texel_index, direction, weight});
    values_.insert(values_.end(), value, value + channels_);
}

std::vector<bool> TexelSamples::observed() const {
    std::vector<double> total(static_cast<std::size_t>(size_) * size_, 0.0);
    for (const auto& s : samples_) total[s.texel] += s.weight;
    std::vector<bool> seen(total.size());
    for (std::size_t i = 0; i < total.size(); ++i) seen[i] = total[i] > 0.0;
    return seen;
}

namespace {

// Samples grouped by texel (counting sort).
struct TexelBuckets {
    std::vector<std::size_t> start;
    std::vector<std::size_t> order;
};

TexelBuckets bucket(const TexelSamples& samples) {
    std::size_t texels = static_cast<std::size_t>(samples.size()) * samples.size();
    TexelBuckets b;
    b.start.assign(texels + 1, 0);
    for (std::size_t i = 0; i < samples.count(); ++i) ++b.start[samples.sample(i).texel + 1];
    for (std::size_t t = 0; t < texels; ++t) b.start[t + 1] += b.start[t];
    b.order.resize(samples.count());
    std::vector<std::size_t> cursor(b.start.begin(), b.start.end() - 1);
    for (std::size_t i = 0; i < samples.count(); ++i) b.order[cursor[samples.sample(i).texel]++] = i;
    return b;
}

template <int K>
void solve_texel(const TexelSamples& samples, const TexelBuckets& b, std::size_t t, double ridge,
                 double* out) {
    using Mat = Eigen::Matrix<double, K, K>;
    using Vec = Eigen::Matrix<double, K, 1>;
    const int C = samples.channels();
    Mat A = Mat::Zero();
    Eigen::Matrix<double, K, Eigen::Dynamic> rhs = Eigen::Matrix<double, K, Eigen::Dynamic>::Zero(K, C);
    std::array<double, K> basis{};
    for (std::size_t j = b.start[t]; j < b.start[t + 1]; ++j) {
        std::size_t i = b.order[j];
        const auto& s = samples.sample(i);
        if (s.weight <= 0.0) continue;
        sh_basis(s.direction, K == 1 ? 0 : 1, basis.data());
        Eigen::Map<const Vec> bv(basis.data());
        A.noalias() += s.weight * bv * bv.transpose();
        const double* v = samples.value(i);
        for (int c = 0; c < C; ++c) rhs.col(c) += (s.weight * v[c]) * bv;
    }
    Eigen::Matrix<double, K, Eigen::Dynamic> sol(K, C);
    if constexpr (K == 1) {
        for (int c = 0; c < C; ++c) sol(0, c) = rhs(0, c) / A(0, 0);
    } else {
        for (int k = 1; k < K; ++k) A(k, k) += ridge;
        Eigen::LDLT<Mat> ldlt(A);
        auto d = ldlt.vectorD().cwiseAbs();
        bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive() &&
                  d.minCoeff() > 1e-13 * d.maxCoeff();
        if (ok) {
            sol = ldlt.solve(rhs);
        } else {
            // Rank deficient (ridge = 0 with too few directions): minimum norm.
            Eigen::CompleteOrthogonalDecomposition<Mat> cod(A);
            sol = cod.solve(rhs);
        }
    }
    for (int c = 0; c < C; ++c)
        for (int k = 0; k < K; ++k) out[c * K + k] = sol(k, c);
}

} // namespace

ShTexture fit_weighted(const TexelSamples& samples, int order, double ridge, const ShTexture* prior) {
    if (ridge < 0.0) throw ConfigError("ridge must be >= 0");
    ShTexture out(order, samples.size(), samples.channels());
    if (prior) {
        if (prior->size() != samples.size() || prior->channels() != samples.channels())
            throw ShapeMismatch("prior texture does not match the sample grid");
        out = prior->with_order(order);
    }
    TexelBuckets b = bucket(samples);
    auto seen = samples.observed();
    for (std::size_t t = 0; t < out.texel_count(); ++t) {
        if (!seen[t]) continue;
        double* dst = out.texel(static_cast<int>(t));
        if (order == 0)
            solve_texel<1>(samples, b, t, ridge, dst);
        else
            solve_texel<4>(samples, b, t, ridge, dst);
    }
    return out;
}

ShTexture blended_fit(const TexelSamples& samples, int order, double alpha, double ridge,
                      const ShTexture* prior) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
    ShTexture full = fit_weighted(samples, order, ridge, prior);
    ShTexture flat = fit_weighted(samples, 0, ridge);
    auto seen = samples.observed();
    const int K = full.coeffs_per_channel();
    for (std::size_t t = 0; t < full.texel_count(); ++t) {
        if (!seen[t]) continue;
        int ti = static_cast<int>(t);
        for (int c = 0; c < full.channels(); ++c) {
            full.coeff(ti, c, 0) = (1.0 - alpha) * full.coeff(ti, c, 0) + alpha * flat.coeff(ti, c, 0);
            for (int k = 1; k < K; ++k) full.coeff(ti, c, k) = (1.0 - alpha) * full.coeff(ti, c, k);
        }
    }
    return full;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated coefficient file");
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void write_coefficient_planes(const ShTexture& texture, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    put_u32(out, texture.size());
    put_u32(out, texture.size());
    put_u32(out, texture.channels());
    put_u32(out, texture.order());
    for (int k = 0; k < texture.coeffs_per_channel(); ++k)
        for (std::size_t t = 0; t < texture.texel_count(); ++t)
            for (int c = 0; c < texture.channels(); ++c)
                put_u32(out, std::bit_cast<std::uint32_t>(
                                 static_cast<float>(texture.coeff(static_cast<int>(t), c, k))));
    if (!out) throw IoError("write failure on '" + path.string() + "'");
}

ShTexture read_coefficient_planes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::uint32_t w = get_u32(in), h = get_u32(in), c = get_u32(in), order = get_u32(in);
    if (w != h || w == 0 || c == 0) throw IoError("unsupported coefficient file geometry");
    ShTexture tex(static_cast<int>(order), static_cast<int>(w), static_cast<int>(c));
    for (int k = 0; k < tex.coeffs_per_channel(); ++k)
        for (std::size_t t = 0; t < tex.texel_count(); ++t)
            for (std::uint32_t ch = 0; ch < c; ++ch)
                tex.coeff(static_cast<int>(t), static_cast<int>(ch), k) =
                    std::bit_cast<float>(get_u32(in));
    return tex;
}

} // namespace meshdiff
