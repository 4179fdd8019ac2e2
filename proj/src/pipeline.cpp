#include "meshdiff/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "meshdiff/errors.hpp"
#include "meshdiff/png_io.hpp"
#include "meshdiff/rng.hpp"

namespace meshdiff {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void add_samples(const RenderMaps& maps, const Image& latent, TexelSamples& samples) {
    for (std::size_t p = 0; p < maps.pixel_count(); ++p) {
        if (!maps.mask[p] || !(maps.weight[p] > 0.0)) continue;
        samples.add(maps.texel[p], maps.view_dir, maps.weight[p], latent.data.data() + p * latent.channels);
    }
}

// sum over views of || W_v * (render(U) - stepped_v) ||_2 on the foreground.
double render_residual(const std::vector<RenderMaps>& maps, const ShTexture& texture,
                       const std::vector<Image>& stepped) {
    double total = 0.0;
    for (std::size_t v = 0; v < maps.size(); ++v) {
        Image r = render_latent(maps[v], texture, &stepped[v]);
        double sq = 0.0;
        for (std::size_t p = 0; p < maps[v].pixel_count(); ++p) {
            if (!maps[v].mask[p]) continue;
            const double w = maps[v].weight[p];
            for (int c = 0; c < r.channels; ++c) {
                double d = w * (r.data[p * r.channels + c] - stepped[v].data[p * r.channels + c]);
                sq += d * d;
            }
        }
        total += std::sqrt(sq);
    }
    return total;
}

std::uint64_t stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a, std::uint64_t b = 0) {
    return derive_seed(seed, tag * 0x100000001ULL + a, b);
}

} // namespace

void PipelineConfig::validate() const {
    if (latent_texture_size < 1 || rgb_texture_size < 1) throw ConfigError("texture sizes must be >= 1");
    if (sh_order < 0 || sh_order > kMaxShOrder) throw UnsupportedOrder(sh_order);
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("texture alpha must lie in [0, 1]");
    if (consistent_alpha < 0.0 || consistent_alpha > 1.0) throw ConfigError("diffusion alpha must lie in [0, 1]");
    if (ridge < 0.0) throw ConfigError("ridge must be >= 0");
    if (views.count < 1) throw ConfigError("views.count must be >= 1");
    if (views.resolution < kLatentScale || views.resolution % kLatentScale != 0)
        throw ConfigError("views.resolution must be a positive multiple of 8");
    if (views.front_importance < 0.0) throw ConfigError("views.front_importance must be >= 0");
    if (steps < 1) throw ConfigError("diffusion.steps must be >= 1");
    if (inversion.steps < 0) throw ConfigError("inversion.steps must be >= 0");
    if (!(inversion.lr >= 0.0)) throw ConfigError("inversion.lr must be >= 0");
}

std::string view_prompt(const std::string& prompt, PromptModifier modifier) {
    if (modifier == PromptModifier::none) return prompt;
    return prompt + ", " + std::string(to_string(modifier)) + " view";
}

PipelineResult texture_mesh(const Mesh& mesh, const PipelineConfig& config, Backend& backend,
                            const PipelineHooks& hooks) {
    config.validate();
    const auto t_start = Clock::now();
    PipelineResult result;
    nlohmann::json timings;

    // Cameras are static, so every map is rasterized once.
    auto t0 = Clock::now();
    result.views = make_views(mesh, config.views);
    const int latent_res = config.views.resolution / kLatentScale;
    const int C = kLatentChannels;
    const std::size_t V = result.views.size();
    std::vector<RenderMaps> latent_maps, rgb_maps;
    std::vector<Image> depth_maps;
    std::vector<std::string> prompts;
    for (const auto& view : result.views) {
        latent_maps.push_back(rasterize(mesh, view.with_resolution(latent_res), config.latent_texture_size));
        rgb_maps.push_back(rasterize(mesh, view, config.rgb_texture_size));
        depth_maps.push_back(rgb_maps.back().depth_image());
        prompts.push_back(view_prompt(config.prompt, view.prompt_modifier));
    }
    timings["rasterize"] = ms_since(t0);

    // Initial latent texture.
    t0 = Clock::now();
    const int T = config.latent_texture_size;
    ShTexture texture(config.sh_order, T, C);
    {
        TexelSamples samples(T, C);
        for (std::size_t v = 0; v < V; ++v) {
            Image noise = gaussian_image(latent_res, latent_res, C, stream(config.seed, 1, v));
            add_samples(latent_maps[v], noise, samples);
        }
        if (samples.count() == 0) throw NoCoverage();
        if (config.init == TextureInit::per_view) {
            texture = blended_fit(samples, config.sh_order, config.alpha, config.ridge);
        } else {
            Image noise = gaussian_image(T, T, C, stream(config.seed, 2, 0));
            for (std::size_t t = 0; t < texture.texel_count(); ++t)
                for (int c = 0; c < C; ++c) texture.coeff(static_cast<int>(t), c, 0) = noise.data[t * C + c];
        }
    }
    if (hooks.on_fit) hooks.on_fit(-1, texture);

    const DiffusionSchedule schedule = make_schedule(config.steps, config.guidance_scale);
    std::vector<Image> stepped(V);
    for (int k = schedule.num_steps - 1; k >= 0; --k) {
        DenoiseRequest req;
        req.prompts = prompts;
        req.depth_maps = depth_maps;
        req.timestep_index = k;
        req.timestep = schedule.timesteps[k];
        req.alpha_bar_t = schedule.alpha_bar[k];
        req.guidance_scale = schedule.guidance_scale;
        for (std::size_t v = 0; v < V; ++v) {
            Image background = gaussian_image(latent_res, latent_res, C, stream(config.seed, 3, k, v));
            req.latents.push_back(render_latent(latent_maps[v], texture, &background));
        }
        auto eps = backend.predict_noise(req);
        if (eps.size() != V) throw BackendShapeError("noise batch size differs from view count");
        TexelSamples samples(T, C);
        for (std::size_t v = 0; v < V; ++v) {
            stepped[v] = ddim_step(req.latents[v], eps[v], schedule.alpha_bar[k], schedule.alpha_bar_prev(k));
            add_samples(latent_maps[v], stepped[v], samples);
        }
        texture = blended_fit(samples, config.sh_order, config.alpha, config.ridge, &texture);
        result.residuals.push_back(render_residual(latent_maps, texture, stepped));
        if (hooks.on_fit) hooks.on_fit(k, texture);
    }
    timings["diffusion"] = ms_since(t0);

    // Per-view latents of the final texture; the background keeps the last
    // denoised value.
    std::vector<Image> latents;
    for (std::size_t v = 0; v < V; ++v) latents.push_back(render_latent(latent_maps[v], texture, &stepped[v]));

    t0 = Clock::now();
    if (!config.skip_inversion && config.inversion.steps > 0) {
        auto inv = run_inversion(std::move(latents), rgb_maps, backend, config.inversion.steps,
                                 config.inversion.lr, hooks.on_inversion_step);
        latents = std::move(inv.latents);
        result.inversion_losses = std::move(inv.losses);
    }
    timings["inversion"] = ms_since(t0);

    t0 = Clock::now();
    auto decoded = backend.decode(DecodeRequest{latents, 0});
    Accumulator acc(config.rgb_texture_size, 3);
    for (std::size_t v = 0; v < V; ++v) backproject(rgb_maps[v], decoded[v], acc);
    if (acc.covered_count() == 0) throw NoCoverage();
    result.texture = acc.resolve(config.fill);
    result.covered.resize(static_cast<std::size_t>(config.rgb_texture_size) * config.rgb_texture_size);
    for (std::size_t t = 0; t < result.covered.size(); ++t) result.covered[t] = acc.covered(static_cast<int>(t));
    timings["backproject"] = ms_since(t0);
    timings["total"] = ms_since(t_start);

    std::size_t latent_covered = 0;
    {
        auto seen = std::vector<bool>(static_cast<std::size_t>(T) * T, false);
        for (const auto& m : latent_maps)
            for (std::size_t p = 0; p < m.pixel_count(); ++p)
                if (m.mask[p] && m.weight[p] > 0.0) seen[m.texel[p]] = true;
        for (bool s : seen) latent_covered += s;
    }
    const std::size_t rgb_total = result.covered.size();
    const std::size_t rgb_covered = acc.covered_count();

    nlohmann::json views = nlohmann::json::array();
    for (std::size_t v = 0; v < V; ++v) {
        const auto& cam = result.views[v];
        views.push_back({{"position", {cam.position.x(), cam.position.y(), cam.position.z()}},
                         {"modifier", std::string(to_string(cam.prompt_modifier))},
                         {"importance", cam.importance},
                         {"prompt", prompts[v]}});
    }
    result.report = {
        {"prompt", config.prompt},
        {"backend", backend.name()},
        {"seed", config.seed},
        {"sh_order", config.sh_order},
        {"alpha", config.alpha},
        {"latent_texture_size", T},
        {"rgb_texture_size", config.rgb_texture_size},
        {"steps", config.steps},
        {"guidance_scale", config.guidance_scale},
        {"views", views},
        {"residuals", result.residuals},
        {"inversion", {{"skipped", config.skip_inversion || config.inversion.steps == 0},
                       {"steps", config.inversion.steps},
                       {"lr", config.inversion.lr},
                       {"losses", result.inversion_losses}}},
        {"coverage", {{"latent_fraction", static_cast<double>(latent_covered) / (static_cast<double>(T) * T)},
                      {"rgb_fraction", static_cast<double>(rgb_covered) / static_cast<double>(rgb_total)},
                      {"uncovered_rgb_texels", rgb_total - rgb_covered},
                      {"fill_value", config.fill}}},
        {"timings_ms", timings},
    };
    result.latent_texture = std::move(texture);
    return result;
}

void export_texture(const Image& texture, const Mesh& mesh, const std::filesystem::path& out_dir) {
    // Quantize first so a NaN aborts before anything is written.
    Png8 png = to_png8(texture);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
    write_png(out_dir / "texture.png", png);
    {
        std::ofstream mtl(out_dir / "mesh_out.mtl", std::ios::binary);
        if (!mtl) throw IoError("cannot write mesh_out.mtl");
        mtl << "newmtl textured\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nmap_Kd texture.png\n";
    }
    save_obj(mesh, out_dir / "mesh_out.obj", "mesh_out.mtl", "textured");
}

} // namespace meshdiff
