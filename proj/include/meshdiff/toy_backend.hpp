#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "meshdiff/backend.hpp"

namespace meshdiff {

// Linear stand-in for a VAE decoder: 4 -> 3 channel mix, 8x nearest
// upsampling, +0.5 bias. No clamping, so the pullback is exact.
class ToyDecoder {
public:
    // Mixing weights, rows = latent channel, columns = RGB.
    static const std::array<std::array<double, 3>, 4> kMix;
    static constexpr double kBias = 0.5;

    static Image decode(const Image& latent);
    static Image pullback(const Image& cotangent);
    // Least-squares left inverse: block-average, remove bias, apply pinv(mix).
    static Image encode(const Image& rgb);
};

// Supplies the clean latent x0 a toy denoiser steers toward.
// depth may be null when the request carried no depth maps.
using TargetProvider =
    std::function<Image(const std::string& prompt, const Image* depth, int height, int width, int channels)>;

// Deterministic N(0, 1) latent seeded by a hash of the prompt (and `seed`).
TargetProvider prompt_hash_targets(std::uint64_t seed = 0);

// Looks the prompt up in a fixed table; unknown prompts are an error.
TargetProvider explicit_targets(std::map<std::string, Image> table);

// Picks the target whose registered depth map is closest (L2) to the
// request's depth map. Lets tests tie targets to camera views.
TargetProvider depth_matched_targets(std::vector<Image> depth_maps, std::vector<Image> targets);

// Denoiser whose noise estimate is exact for a hidden clean latent:
// eps = (x_t - sqrt(abar) * target) / sqrt(1 - abar), and 0 at abar = 1.
// Decoding uses ToyDecoder.
class ToyTargetBackend : public Backend {
public:
    explicit ToyTargetBackend(TargetProvider targets = prompt_hash_targets());

    std::vector<Image> predict_noise(const DenoiseRequest& request) override;
    std::vector<Image> decode(const DecodeRequest& request) override;
    std::vector<Image> decode_pullback(const PullbackRequest& request) override;
    std::string name() const override { return "toy"; }

private:
    TargetProvider targets_;
};

// Builds a backend from a spec string: "toy" or "remote:<host:port>".
std::unique_ptr<Backend> make_backend(const std::string& spec);

} // namespace meshdiff
