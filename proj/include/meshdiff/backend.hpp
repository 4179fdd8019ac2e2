#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "meshdiff/image.hpp"

namespace meshdiff {

// Latent images are h x w x C; decoded images are 8h x 8w x 3.
constexpr int kLatentScale = 8;
constexpr int kLatentChannels = 4;

struct DenoiseRequest {
    std::vector<Image> latents;
    int timestep_index = 0; // position in the sampling schedule
    int timestep = 0;       // training timestep the model is conditioned on
    double alpha_bar_t = 1.0;
    std::vector<std::string> prompts;
    std::optional<std::vector<Image>> depth_maps; // decoded resolution, 1 channel, [0, 1]
    double guidance_scale = 7.5;
    std::uint64_t request_id = 0;
};

struct DecodeRequest {
    std::vector<Image> latents;
    std::uint64_t request_id = 0;
};

struct PullbackRequest {
    std::vector<Image> latents;
    std::vector<Image> cotangents; // decoded shape
    std::uint64_t request_id = 0;
};

// Denoiser/decoder pair. predict_noise returns the guided noise estimate;
// the DDIM update itself stays in the caller.
class Backend {
public:
    virtual ~Backend() = default;

    virtual std::vector<Image> predict_noise(const DenoiseRequest& request) = 0;
    virtual std::vector<Image> decode(const DecodeRequest& request) = 0;
    // J^T * cotangent of decode at `latents`. Throws PullbackUnsupported when
    // the backend cannot differentiate.
    virtual std::vector<Image> decode_pullback(const PullbackRequest& request) = 0;

    virtual std::string name() const = 0;
};

// Checks every batch entry is finite and shares one shape; throws
// BackendShapeError otherwise.
void validate_batch(const std::vector<Image>& batch, const char* what);
void validate(const DenoiseRequest& request);
void validate(const DecodeRequest& request);
void validate(const PullbackRequest& request);

} // namespace meshdiff
