#include "meshdiff/scheduler.hpp"

#include <cmath>

#include "meshdiff/errors.hpp"
#include "meshdiff/rng.hpp"

namespace meshdiff {

std::vector<double> training_alpha_bar() {
    std::vector<double> out(kTrainTimesteps);
    const double s0 = std::sqrt(kBetaStart);
    const double s1 = std::sqrt(kBetaEnd);
    double prod = 1.0;
    for (int i = 0; i < kTrainTimesteps; ++i) {
        double s = s0 + (s1 - s0) * i / (kTrainTimesteps - 1);
        prod *= 1.0 - s * s;
        out[i] = prod;
    }
    return out;
}

DiffusionSchedule make_schedule(int num_steps, double guidance_scale) {
    if (num_steps < 1 || num_steps > kTrainTimesteps) throw ConfigError("diffusion steps must lie in [1, 1000]");
    if (guidance_scale < 1.0) throw ConfigError("guidance scale must be >= 1");
    static const std::vector<double> train = training_alpha_bar();
    DiffusionSchedule s;
    s.num_steps = num_steps;
    s.guidance_scale = guidance_scale;
    const int stride = kTrainTimesteps / num_steps;
    for (int k = 0; k < num_steps; ++k) {
        int t = k * stride + 1;
        s.timesteps.push_back(t);
        s.alpha_bar.push_back(train[t]);
    }
    return s;
}

Image ddim_step(const Image& x_t, const Image& eps, double alpha_bar_t, double alpha_bar_prev) {
    require_same_shape(x_t, eps, "ddim_step");
    Image out(x_t.height, x_t.width, x_t.channels);
    const double sa = std::sqrt(alpha_bar_t);
    const double sn = std::sqrt(1.0 - alpha_bar_t);
    const double sa_prev = std::sqrt(alpha_bar_prev);
    const double sn_prev = std::sqrt(1.0 - alpha_bar_prev);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x0 = (x_t.data[i] - sn * eps.data[i]) / sa;
        out.data[i] = sa_prev * x0 + sn_prev * eps.data[i];
    }
    return out;
}

NoiseBundle make_noise_bundle(int count, int height, int width, int channels, const Mask& mask,
                              std::uint64_t seed) {
    if (count < 1) throw ConfigError("need at least one image");
    if (mask.height != height || mask.width != width) throw ShapeMismatch("mask does not match latent size");
    NoiseBundle b;
    b.seed = seed;
    b.mask = mask;
    b.shared = gaussian_image(height, width, channels, derive_seed(seed, 0x5eed));
    for (int i = 0; i < count; ++i)
        b.independent.push_back(gaussian_image(height, width, channels, derive_seed(seed, 0x1d, i)));
    return b;
}

std::vector<Image> initial_latents(const NoiseBundle& bundle) {
    const Image& s = bundle.shared;
    if (bundle.mask.height != s.height || bundle.mask.width != s.width)
        throw ShapeMismatch("noise mask does not match latent size");
    std::vector<Image> out;
    for (const auto& ind : bundle.independent) {
        require_same_shape(s, ind, "initial_latents");
        Image l = ind;
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x)
                if (bundle.mask.at(y, x))
                    for (int c = 0; c < s.channels; ++c) l.at(y, x, c) = s.at(y, x, c);
        out.push_back(std::move(l));
    }
    return out;
}

std::vector<Image> consistent_step(const std::vector<Image>& stepped, const Mask& mask, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (stepped.empty()) return {};
    const Image& f = stepped.front();
    if (mask.height != f.height || mask.width != f.width) throw ShapeMismatch("mask does not match latents");
    for (const auto& s : stepped) require_same_shape(f, s, "consistent_step");
    const double n = static_cast<double>(stepped.size());
    std::vector<Image> out = stepped;
    for (int y = 0; y < f.height; ++y) {
        for (int x = 0; x < f.width; ++x) {
            if (!mask.at(y, x)) continue;
            for (int c = 0; c < f.channels; ++c) {
                double sum = 0.0;
                for (const auto& s : stepped) sum += s.at(y, x, c);
                const double mean = sum / n;
                for (std::size_t i = 0; i < stepped.size(); ++i)
                    out[i].at(y, x, c) = alpha * stepped[i].at(y, x, c) + (1.0 - alpha) * mean;
            }
        }
    }
    return out;
}

Consistent2dResult run_consistent_2d(std::vector<Image> latents, const std::vector<std::string>& prompts,
                                     const Mask& mask, double alpha, const DiffusionSchedule& schedule,
                                     Backend& backend) {
    if (latents.empty() || latents.size() != prompts.size())
        throw ConfigError("need one prompt per image and at least one image");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
    for (int k = schedule.num_steps - 1; k >= 0; --k) {
        DenoiseRequest req;
        req.latents = latents;
        req.prompts = prompts;
        req.timestep_index = k;
        req.timestep = schedule.timesteps[k];
        req.alpha_bar_t = schedule.alpha_bar[k];
        req.guidance_scale = schedule.guidance_scale;
        auto eps = backend.predict_noise(req);
        if (eps.size() != latents.size()) throw BackendShapeError("noise batch size differs from request");
        std::vector<Image> stepped;
        stepped.reserve(latents.size());
        for (std::size_t i = 0; i < latents.size(); ++i)
            stepped.push_back(ddim_step(latents[i], eps[i], schedule.alpha_bar[k], schedule.alpha_bar_prev(k)));
        latents = consistent_step(stepped, mask, alpha);
    }
    Consistent2dResult result;
    result.images = backend.decode(DecodeRequest{latents, 0});
    result.latents = std::move(latents);
    return result;
}

Consistent2dResult run_consistent_2d(const std::vector<std::string>& prompts, const Mask& mask, double alpha,
                                     const DiffusionSchedule& schedule, Backend& backend, std::uint64_t seed,
                                     int image_size) {
    const int h = image_size / kLatentScale;
    auto bundle = make_noise_bundle(static_cast<int>(prompts.size()), h, h, kLatentChannels, mask, seed);
    return run_consistent_2d(initial_latents(bundle), prompts, mask, alpha, schedule, backend);
}

Mask parse_mask(const std::string& spec, int latent_size) {
    if (spec == "full") return Mask(latent_size, latent_size, true);
    if (spec == "none") return Mask(latent_size, latent_size, false);
    if (spec == "center") {
        int lo = latent_size / 4, hi = latent_size - latent_size / 4;
        return Mask::rect(latent_size, latent_size, lo, hi, lo, hi);
    }
    const std::string prefix = "center:";
    if (spec.rfind(prefix, 0) == 0) {
        auto rest = spec.substr(prefix.size());
        auto colon = rest.find(':');
        if (colon == std::string::npos) throw ConfigError("mask spec must be center:<lo>:<hi>");
        int lo = std::stoi(rest.substr(0, colon)) / kLatentScale;
        int hi = std::stoi(rest.substr(colon + 1)) / kLatentScale;
        if (lo < 0 || hi > latent_size || lo >= hi) throw ConfigError("mask bounds outside the latent grid");
        return Mask::rect(latent_size, latent_size, lo, hi, lo, hi);
    }
    throw ConfigError("unknown mask spec '" + spec + "'");
}

} // namespace meshdiff
