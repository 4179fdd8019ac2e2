#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "meshdiff/backend.hpp"
#include "meshdiff/raster.hpp"

namespace meshdiff {

// Smoothing of |x|: sqrt(x^2 + eps^2) - eps.
constexpr double kL1Smoothing = 1e-6;

struct InversionSettings {
    int steps = 200;
    double lr = 0.05;
};

struct InversionState {
    std::vector<Image> latents;
    int step = 0;
    double lr = 0.05;
    int max_steps = 200;
};

// Static scatter structure of a set of views. Every foreground pixel with
// positive weight contributes share * value to a texel mean, once across all
// views (global) and once within its own view.
struct InversionPlan {
    struct View {
        std::vector<std::uint32_t> pixel;
        std::vector<std::uint32_t> slot;       // into texels
        std::vector<std::uint32_t> local;      // into local_texels
        std::vector<double> global_share;      // w / sum of w over all views
        std::vector<double> view_share;        // w / sum of w within the view
        std::vector<std::uint32_t> local_slot; // local texel -> slot
    };
    int texture_size = 0;
    int resolution = 0;
    std::vector<int> texels; // covered texels, ascending
    std::vector<View> views;
};

InversionPlan make_inversion_plan(const std::vector<RenderMaps>& maps);

// Weighted mean RGB texture over all views.
struct AverageTexture {
    Image texture;                // T x T x 3, zero where uncovered
    std::vector<bool> covered;
    std::vector<Image> decoded;   // decode(latents[i]) used to build it
};

// maps must be rasterized at the decoded resolution against the RGB
// texture size.
AverageTexture average_texture(const std::vector<Image>& latents, const std::vector<RenderMaps>& maps,
                               Backend& backend);

// Objective and gradient for fixed target: sum over views of the mean
// smoothed l1 distance between the view's own backprojection and `target`
// over the texels that view covers.
struct InversionEval {
    double loss = 0.0;
    std::vector<double> view_loss;
    std::vector<Image> gradient;
};
InversionEval evaluate_inversion(const std::vector<Image>& latents, const Image& target,
                                 const std::vector<RenderMaps>& maps, Backend& backend,
                                 const std::vector<Image>* decoded = nullptr);

// One descent step latents -= lr * grad against a fixed target. Throws
// NumericalError on a non-finite gradient.
InversionState inversion_step(const InversionState& state, const Image& target,
                              const std::vector<RenderMaps>& maps, Backend& backend,
                              double* loss_out = nullptr, const std::vector<Image>* decoded = nullptr);

struct InversionResult {
    std::vector<Image> latents;
    // Objective at the start of each step, plus the final value.
    std::vector<double> losses;
};

// Alternates the average texture and a descent step for a fixed number of
// steps.
InversionResult run_inversion(std::vector<Image> latents, const std::vector<RenderMaps>& maps,
                              Backend& backend, int steps, double lr,
                              const std::function<void(int, double)>& on_step = {});

} // namespace meshdiff
