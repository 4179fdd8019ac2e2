#include "meshdiff/toy_backend.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "meshdiff/errors.hpp"
#include "meshdiff/remote_backend.hpp"
#include "meshdiff/rng.hpp"

namespace meshdiff {

// Commonly used linear approximation of the Stable Diffusion latent -> RGB map.
const std::array<std::array<double, 3>, 4> ToyDecoder::kMix = {{
    {0.298, 0.207, 0.208},
    {0.187, 0.286, 0.173},
    {-0.158, 0.189, 0.264},
    {-0.184, -0.271, -0.473},
}};

Image ToyDecoder::decode(const Image& latent) {
    if (latent.channels != kLatentChannels) throw BackendShapeError("toy decoder expects 4 latent channels");
    Image rgb(latent.height * kLatentScale, latent.width * kLatentScale, 3);
    for (int y = 0; y < latent.height; ++y) {
        for (int x = 0; x < latent.width; ++x) {
            const double* l = latent.pixel(y, x);
            double c[3];
            for (int o = 0; o < 3; ++o) {
                c[o] = kBias;
                for (int k = 0; k < kLatentChannels; ++k) c[o] += kMix[k][o] * l[k];
            }
            for (int dy = 0; dy < kLatentScale; ++dy)
                for (int dx = 0; dx < kLatentScale; ++dx) {
                    double* p = rgb.pixel(y * kLatentScale + dy, x * kLatentScale + dx);
                    p[0] = c[0];
                    p[1] = c[1];
                    p[2] = c[2];
                }
        }
    }
    return rgb;
}

Image ToyDecoder::pullback(const Image& cotangent) {
    if (cotangent.channels != 3 || cotangent.height % kLatentScale || cotangent.width % kLatentScale)
        throw BackendShapeError("toy pullback expects an RGB cotangent with sides divisible by 8");
    Image grad(cotangent.height / kLatentScale, cotangent.width / kLatentScale, kLatentChannels);
    for (int y = 0; y < grad.height; ++y) {
        for (int x = 0; x < grad.width; ++x) {
            double s[3] = {0.0, 0.0, 0.0};
            for (int dy = 0; dy < kLatentScale; ++dy)
                for (int dx = 0; dx < kLatentScale; ++dx) {
                    const double* p = cotangent.pixel(y * kLatentScale + dy, x * kLatentScale + dx);
                    s[0] += p[0];
                    s[1] += p[1];
                    s[2] += p[2];
                }
            double* g = grad.pixel(y, x);
            for (int k = 0; k < kLatentChannels; ++k)
                g[k] = kMix[k][0] * s[0] + kMix[k][1] * s[1] + kMix[k][2] * s[2];
        }
    }
    return grad;
}

Image ToyDecoder::encode(const Image& rgb) {
    if (rgb.channels != 3 || rgb.height % kLatentScale || rgb.width % kLatentScale)
        throw BackendShapeError("toy encoder expects an RGB image with sides divisible by 8");
    Eigen::Matrix<double, 3, 4> mix;
    for (int k = 0; k < 4; ++k)
        for (int o = 0; o < 3; ++o) mix(o, k) = kMix[k][o];
    Eigen::Matrix<double, 4, 3> pinv = mix.completeOrthogonalDecomposition().pseudoInverse();
    Image latent(rgb.height / kLatentScale, rgb.width / kLatentScale, kLatentChannels);
    const double inv_area = 1.0 / (kLatentScale * kLatentScale);
    for (int y = 0; y < latent.height; ++y) {
        for (int x = 0; x < latent.width; ++x) {
            Eigen::Vector3d avg = Eigen::Vector3d::Zero();
            for (int dy = 0; dy < kLatentScale; ++dy)
                for (int dx = 0; dx < kLatentScale; ++dx) {
                    const double* p = rgb.pixel(y * kLatentScale + dy, x * kLatentScale + dx);
                    avg += Eigen::Vector3d(p[0], p[1], p[2]);
                }
            avg = avg * inv_area - Eigen::Vector3d::Constant(kBias);
            Eigen::Vector4d l = pinv * avg;
            for (int k = 0; k < 4; ++k) latent.at(y, x, k) = l[k];
        }
    }
    return latent;
}

TargetProvider prompt_hash_targets(std::uint64_t seed) {
    return [seed](const std::string& prompt, const Image*, int h, int w, int c) {
        return gaussian_image(h, w, c, derive_seed(seed, fnv1a64(prompt)));
    };
}

TargetProvider explicit_targets(std::map<std::string, Image> table) {
    return [table = std::move(table)](const std::string& prompt, const Image*, int h, int w, int c) {
        auto it = table.find(prompt);
        if (it == table.end()) throw BackendError("no toy target registered for prompt '" + prompt + "'");
        if (it->second.height != h || it->second.width != w || it->second.channels != c)
            throw BackendShapeError("toy target shape differs from request latent shape");
        return it->second;
    };
}

TargetProvider depth_matched_targets(std::vector<Image> depth_maps, std::vector<Image> targets) {
    if (depth_maps.size() != targets.size() || depth_maps.empty())
        throw ShapeMismatch("depth_matched_targets: need one target per depth map");
    return [depth_maps = std::move(depth_maps), targets = std::move(targets)](
               const std::string&, const Image* depth, int h, int w, int c) {
        if (!depth) throw BackendError("depth-matched toy targets need depth maps");
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < depth_maps.size(); ++i) {
            if (!depth_maps[i].same_shape(*depth)) continue;
            double d = 0.0;
            for (std::size_t k = 0; k < depth->size(); ++k) {
                double e = depth_maps[i].data[k] - depth->data[k];
                d += e * e;
            }
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        if (!std::isfinite(best_d)) throw BackendShapeError("no registered depth map matches the request");
        const Image& t = targets[best];
        if (t.height != h || t.width != w || t.channels != c)
            throw BackendShapeError("toy target shape differs from request latent shape");
        return t;
    };
}

ToyTargetBackend::ToyTargetBackend(TargetProvider targets) : targets_(std::move(targets)) {}

std::vector<Image> ToyTargetBackend::predict_noise(const DenoiseRequest& request) {
    validate(request);
    std::vector<Image> out;
    out.reserve(request.latents.size());
    const double abar = request.alpha_bar_t;
    for (std::size_t b = 0; b < request.latents.size(); ++b) {
        const Image& x = request.latents[b];
        Image eps(x.height, x.width, x.channels);
        if (abar < 1.0) {
            const Image* depth = request.depth_maps ? &(*request.depth_maps)[b] : nullptr;
            Image target = targets_(request.prompts[b], depth, x.height, x.width, x.channels);
            const double sa = std::sqrt(abar);
            const double sn = std::sqrt(1.0 - abar);
            for (std::size_t i = 0; i < x.size(); ++i) eps.data[i] = (x.data[i] - sa * target.data[i]) / sn;
        }
        out.push_back(std::move(eps));
    }
    return out;
}

std::vector<Image> ToyTargetBackend::decode(const DecodeRequest& request) {
    validate(request);
    std::vector<Image> out;
    out.reserve(request.latents.size());
    for (const auto& l : request.latents) out.push_back(ToyDecoder::decode(l));
    return out;
}

std::vector<Image> ToyTargetBackend::decode_pullback(const PullbackRequest& request) {
    validate(request);
    std::vector<Image> out;
    out.reserve(request.cotangents.size());
    for (const auto& c : request.cotangents) out.push_back(ToyDecoder::pullback(c));
    return out;
}

void validate_batch(const std::vector<Image>& batch, const char* what) {
    if (batch.empty()) throw BackendShapeError(std::string(what) + ": empty batch");
    for (const auto& img : batch) {
        if (!img.same_shape(batch.front()) || img.empty())
            throw BackendShapeError(std::string(what) + ": inconsistent batch shapes");
        for (double v : img.data)
            if (!std::isfinite(v)) throw BackendShapeError(std::string(what) + ": non-finite value");
    }
}

void validate(const DenoiseRequest& r) {
    validate_batch(r.latents, "predict_noise latents");
    if (r.prompts.size() != r.latents.size())
        throw BackendShapeError("predict_noise: one prompt per latent required");
    if (!(r.alpha_bar_t > 0.0 && r.alpha_bar_t <= 1.0))
        throw BackendShapeError("predict_noise: alpha_bar_t must lie in (0, 1]");
    if (r.depth_maps) {
        validate_batch(*r.depth_maps, "predict_noise depth maps");
        if (r.depth_maps->size() != r.latents.size() || r.depth_maps->front().channels != 1)
            throw BackendShapeError("predict_noise: one single-channel depth map per latent required");
    }
}

void validate(const DecodeRequest& r) { validate_batch(r.latents, "decode latents"); }

void validate(const PullbackRequest& r) {
    validate_batch(r.latents, "decode_pullback latents");
    validate_batch(r.cotangents, "decode_pullback cotangents");
    const Image& l = r.latents.front();
    const Image& c = r.cotangents.front();
    if (r.latents.size() != r.cotangents.size() || c.channels != 3 ||
        c.height != l.height * kLatentScale || c.width != l.width * kLatentScale)
        throw BackendShapeError("decode_pullback: cotangent shape does not match decoded latents");
}

std::unique_ptr<Backend> make_backend(const std::string& spec) {
    if (spec == "toy") return std::make_unique<ToyTargetBackend>();
    const std::string prefix = "remote:";
    if (spec.rfind(prefix, 0) == 0) return std::make_unique<RemoteBackend>(parse_endpoint(spec.substr(prefix.size())));
    throw ConfigError("unknown backend '" + spec + "' (expected toy or remote:<host:port>)");
}

} // namespace meshdiff
