#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshdiff/backend.hpp"
#include "meshdiff/camera.hpp"
#include "meshdiff/inversion.hpp"
#include "meshdiff/mesh.hpp"
#include "meshdiff/raster.hpp"
#include "meshdiff/scheduler.hpp"
#include "meshdiff/sh_latent.hpp"

namespace meshdiff {

enum class TextureInit {
    per_view, // i.i.d. noise per view, least-squares fitted into the texture
    texture,  // i.i.d. noise directly in the order-0 coefficients
};

struct PipelineConfig {
    std::string prompt;
    int latent_texture_size = 128;
    int rgb_texture_size = 1024;
    int sh_order = 1;
    double alpha = 0.9;  // order-0 share of each per-step fit
    double ridge = 1e-4;
    double fill = 0.5;   // value of RGB texels no view covers
    TextureInit init = TextureInit::per_view;
    ViewConfig views;    // views.resolution is the decoded image size
    int steps = 50;
    double guidance_scale = 7.5;
    double consistent_alpha = 0.97; // image-coupling lerp of consistent 2D diffusion
    std::uint64_t seed = 0;
    InversionSettings inversion;
    bool skip_inversion = false;

    void validate() const;
};

struct PipelineHooks {
    // Called with the fitted latent texture after the initial fit (step -1)
    // and after every diffusion step.
    std::function<void(int step, const ShTexture&)> on_fit;
    std::function<void(int step, double loss)> on_inversion_step;
};

struct PipelineResult {
    Image texture;               // rgb_texture_size^2 x 3
    std::vector<bool> covered;   // per RGB texel
    ShTexture latent_texture;    // final SH latent texture
    std::vector<CameraView> views;
    std::vector<double> residuals; // weighted render residual per diffusion step
    std::vector<double> inversion_losses;
    nlohmann::json report;
};

// Prompt sent for one view: "<prompt>, <modifier> view".
std::string view_prompt(const std::string& prompt, PromptModifier modifier);

PipelineResult texture_mesh(const Mesh& mesh, const PipelineConfig& config, Backend& backend,
                            const PipelineHooks& hooks = {});

// Writes texture.png plus mesh_out.obj / mesh_out.mtl referencing it.
void export_texture(const Image& texture, const Mesh& mesh, const std::filesystem::path& out_dir);

} // namespace meshdiff
