#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "meshdiff/backend.hpp"
#include "meshdiff/image.hpp"

namespace meshdiff {

constexpr int kTrainTimesteps = 1000;
constexpr double kBetaStart = 0.00085;
constexpr double kBetaEnd = 0.012;

// Strided DDIM schedule. Index 0 is the least noisy timestep; sampling walks
// from the last index down to 0 and finishes at alpha_bar = 1.
struct DiffusionSchedule {
    int num_steps = 0;
    std::vector<int> timesteps;      // training timestep per index, increasing
    std::vector<double> alpha_bar;   // strictly decreasing, in (0, 1]
    double guidance_scale = 7.5;

    // alpha_bar the step at `index` moves to.
    double alpha_bar_prev(int index) const { return index > 0 ? alpha_bar[index - 1] : 1.0; }
};

// Cumulative products of (1 - beta) for the scaled-linear beta schedule over
// kTrainTimesteps.
std::vector<double> training_alpha_bar();

// num_steps evenly strided timesteps t_k = k * (1000 / num_steps) + 1.
DiffusionSchedule make_schedule(int num_steps, double guidance_scale = 7.5);

// Deterministic (eta = 0) DDIM update from alpha_bar_t to alpha_bar_prev.
Image ddim_step(const Image& x_t, const Image& eps, double alpha_bar_t, double alpha_bar_prev);

struct NoiseBundle {
    Image shared;
    std::vector<Image> independent;
    Mask mask;
    std::uint64_t seed = 0;
};

NoiseBundle make_noise_bundle(int count, int height, int width, int channels, const Mask& mask,
                              std::uint64_t seed);

// where(mask, shared, independent_i) per image.
std::vector<Image> initial_latents(const NoiseBundle& bundle);

// Inside the mask: alpha * stepped_i + (1 - alpha) * mean(stepped); outside:
// stepped_i unchanged.
std::vector<Image> consistent_step(const std::vector<Image>& stepped, const Mask& mask, double alpha);

struct Consistent2dResult {
    std::vector<Image> latents; // final latents
    std::vector<Image> images;  // decoded
};

// Consistent latent diffusion from explicit initial latents.
Consistent2dResult run_consistent_2d(std::vector<Image> latents, const std::vector<std::string>& prompts,
                                     const Mask& mask, double alpha, const DiffusionSchedule& schedule,
                                     Backend& backend);

// Same, seeding the initial latents from a NoiseBundle at latent size
// image_size / 8.
Consistent2dResult run_consistent_2d(const std::vector<std::string>& prompts, const Mask& mask, double alpha,
                                     const DiffusionSchedule& schedule, Backend& backend, std::uint64_t seed,
                                     int image_size = 512);

// Mask specs for latent grids: "full", "none", "center" (the middle half) or
// "center:<lo>:<hi>" in image pixels.
Mask parse_mask(const std::string& spec, int latent_size);

} // namespace meshdiff
