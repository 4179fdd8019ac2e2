#include "meshdiff/inversion.hpp"

#include <cmath>
#include <sstream>

#include "meshdiff/errors.hpp"

namespace meshdiff {

namespace {

void check_views(const std::vector<Image>& latents, const std::vector<RenderMaps>& maps) {
    if (latents.size() != maps.size() || latents.empty())
        throw ShapeMismatch("inversion needs one render map per view latent");
}

void check_decoded(const InversionPlan& plan, const std::vector<Image>& decoded) {
    if (decoded.size() != plan.views.size()) throw BackendShapeError("decode returned a wrong batch size");
    for (const auto& img : decoded)
        if (img.height != plan.resolution || img.width != plan.resolution || img.channels != 3)
            throw ShapeMismatch("decoded views do not match the inversion render maps");
}

// Compact mean texture: one RGB triple per plan slot.
std::vector<double> compact_average(const InversionPlan& plan, const std::vector<Image>& decoded) {
    std::vector<double> avg(plan.texels.size() * 3, 0.0);
    for (std::size_t v = 0; v < plan.views.size(); ++v) {
        const auto& pv = plan.views[v];
        const double* img = decoded[v].data.data();
        for (std::size_t i = 0; i < pv.pixel.size(); ++i) {
            const double* x = img + static_cast<std::size_t>(pv.pixel[i]) * 3;
            double* a = avg.data() + static_cast<std::size_t>(pv.slot[i]) * 3;
            const double s = pv.global_share[i];
            a[0] += s * x[0];
            a[1] += s * x[1];
            a[2] += s * x[2];
        }
    }
    return avg;
}

InversionEval compact_evaluate(const InversionPlan& plan, const std::vector<Image>& latents,
                               const std::vector<double>& target, const std::vector<Image>& decoded,
                               Backend& backend) {
    InversionEval ev;
    std::vector<Image> cotangents;
    std::vector<double> mean, grad;
    for (std::size_t v = 0; v < plan.views.size(); ++v) {
        const auto& pv = plan.views[v];
        const double* img = decoded[v].data.data();
        const std::size_t n = pv.local_slot.size();
        mean.assign(n * 3, 0.0);
        for (std::size_t i = 0; i < pv.pixel.size(); ++i) {
            const double* x = img + static_cast<std::size_t>(pv.pixel[i]) * 3;
            double* m = mean.data() + static_cast<std::size_t>(pv.local[i]) * 3;
            const double s = pv.view_share[i];
            m[0] += s * x[0];
            m[1] += s * x[1];
            m[2] += s * x[2];
        }
        const double count = 3.0 * static_cast<double>(n);
        double loss = 0.0;
        grad.assign(n * 3, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const double* tg = target.data() + static_cast<std::size_t>(pv.local_slot[j]) * 3;
            for (int c = 0; c < 3; ++c) {
                double x = mean[j * 3 + c] - tg[c];
                double s = std::sqrt(x * x + kL1Smoothing * kL1Smoothing);
                loss += s - kL1Smoothing;
                grad[j * 3 + c] = x / s / count;
            }
        }
        if (n > 0) loss /= count;
        // Transpose of the scatter: each pixel receives its share of the
        // texel gradient.
        Image cot(plan.resolution, plan.resolution, 3);
        for (std::size_t i = 0; i < pv.pixel.size(); ++i) {
            const double* g = grad.data() + static_cast<std::size_t>(pv.local[i]) * 3;
            double* o = cot.data.data() + static_cast<std::size_t>(pv.pixel[i]) * 3;
            const double s = pv.view_share[i];
            o[0] = s * g[0];
            o[1] = s * g[1];
            o[2] = s * g[2];
        }
        ev.view_loss.push_back(loss);
        ev.loss += loss;
        cotangents.push_back(std::move(cot));
    }
    ev.gradient = backend.decode_pullback(PullbackRequest{latents, std::move(cotangents), 0});
    if (ev.gradient.size() != latents.size()) throw BackendShapeError("pullback returned a wrong batch size");
    return ev;
}

std::vector<double> gather_target(const InversionPlan& plan, const Image& target) {
    const int T = plan.texture_size;
    if (target.height != T || target.width != T || target.channels != 3)
        throw ShapeMismatch("inversion target must be a T x T RGB texture");
    std::vector<double> out(plan.texels.size() * 3);
    for (std::size_t j = 0; j < plan.texels.size(); ++j)
        for (int c = 0; c < 3; ++c) out[j * 3 + c] = target.data[static_cast<std::size_t>(plan.texels[j]) * 3 + c];
    return out;
}

void descend(std::vector<Image>& latents, const std::vector<Image>& gradient, double lr, int step, double loss) {
    for (std::size_t v = 0; v < latents.size(); ++v) {
        const Image& g = gradient[v];
        require_same_shape(latents[v], g, "inversion gradient");
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g.data[i])) {
                std::ostringstream msg;
                msg << "non-finite inversion gradient at step " << step << ", view " << v << ", element " << i
                    << " (loss " << loss << ")";
                throw NumericalError(msg.str());
            }
            latents[v].data[i] -= lr * g.data[i];
        }
    }
}

} // namespace

InversionPlan make_inversion_plan(const std::vector<RenderMaps>& maps) {
    if (maps.empty()) throw ShapeMismatch("inversion needs at least one view");
    InversionPlan plan;
    plan.texture_size = maps.front().texture_size;
    plan.resolution = maps.front().resolution;
    const std::size_t TT = static_cast<std::size_t>(plan.texture_size) * plan.texture_size;
    std::vector<double> total(TT, 0.0);
    for (const auto& m : maps) {
        if (m.texture_size != plan.texture_size || m.resolution != plan.resolution)
            throw ShapeMismatch("inversion render maps differ in size");
        for (std::size_t p = 0; p < m.pixel_count(); ++p)
            if (m.mask[p] && m.weight[p] > 0.0) total[m.texel[p]] += m.weight[p];
    }
    std::vector<std::uint32_t> slot_of(TT, 0);
    for (std::size_t t = 0; t < TT; ++t) {
        if (total[t] > 0.0) {
            slot_of[t] = static_cast<std::uint32_t>(plan.texels.size());
            plan.texels.push_back(static_cast<int>(t));
        }
    }
    std::vector<double> view_total(TT, 0.0);
    std::vector<std::int64_t> local_of(TT, -1);
    for (const auto& m : maps) {
        InversionPlan::View pv;
        for (std::size_t p = 0; p < m.pixel_count(); ++p)
            if (m.mask[p] && m.weight[p] > 0.0) view_total[m.texel[p]] += m.weight[p];
        // Local texels in ascending texel order.
        for (std::size_t p = 0; p < m.pixel_count(); ++p)
            if (m.mask[p] && m.weight[p] > 0.0) local_of[m.texel[p]] = 0;
        for (std::size_t t = 0; t < TT; ++t) {
            if (local_of[t] < 0) continue;
            local_of[t] = static_cast<std::int64_t>(pv.local_slot.size());
            pv.local_slot.push_back(slot_of[t]);
        }
        for (std::size_t p = 0; p < m.pixel_count(); ++p) {
            if (!m.mask[p] || !(m.weight[p] > 0.0)) continue;
            const int t = m.texel[p];
            pv.pixel.push_back(static_cast<std::uint32_t>(p));
            pv.slot.push_back(slot_of[t]);
            pv.local.push_back(static_cast<std::uint32_t>(local_of[t]));
            pv.global_share.push_back(m.weight[p] / total[t]);
            pv.view_share.push_back(m.weight[p] / view_total[t]);
        }
        for (std::uint32_t s : pv.local_slot) {
            const int t = plan.texels[s];
            view_total[t] = 0.0;
            local_of[t] = -1;
        }
        plan.views.push_back(std::move(pv));
    }
    return plan;
}

AverageTexture average_texture(const std::vector<Image>& latents, const std::vector<RenderMaps>& maps,
                               Backend& backend) {
    check_views(latents, maps);
    InversionPlan plan = make_inversion_plan(maps);
    AverageTexture avg;
    avg.decoded = backend.decode(DecodeRequest{latents, 0});
    check_decoded(plan, avg.decoded);
    std::vector<double> compact = compact_average(plan, avg.decoded);
    const int T = plan.texture_size;
    avg.texture = Image(T, T, 3);
    avg.covered.assign(static_cast<std::size_t>(T) * T, false);
    for (std::size_t j = 0; j < plan.texels.size(); ++j) {
        const std::size_t t = static_cast<std::size_t>(plan.texels[j]);
        avg.covered[t] = true;
        for (int c = 0; c < 3; ++c) avg.texture.data[t * 3 + c] = compact[j * 3 + c];
    }
    return avg;
}

InversionEval evaluate_inversion(const std::vector<Image>& latents, const Image& target,
                                 const std::vector<RenderMaps>& maps, Backend& backend,
                                 const std::vector<Image>* decoded) {
    check_views(latents, maps);
    InversionPlan plan = make_inversion_plan(maps);
    std::vector<Image> own;
    if (!decoded) {
        own = backend.decode(DecodeRequest{latents, 0});
        decoded = &own;
    }
    check_decoded(plan, *decoded);
    return compact_evaluate(plan, latents, gather_target(plan, target), *decoded, backend);
}

InversionState inversion_step(const InversionState& state, const Image& target,
                              const std::vector<RenderMaps>& maps, Backend& backend, double* loss_out,
                              const std::vector<Image>* decoded) {
    InversionEval ev = evaluate_inversion(state.latents, target, maps, backend, decoded);
    InversionState next = state;
    descend(next.latents, ev.gradient, state.lr, state.step, ev.loss);
    ++next.step;
    if (loss_out) *loss_out = ev.loss;
    return next;
}

InversionResult run_inversion(std::vector<Image> latents, const std::vector<RenderMaps>& maps,
                              Backend& backend, int steps, double lr,
                              const std::function<void(int, double)>& on_step) {
    if (steps < 0) throw ConfigError("inversion steps must be >= 0");
    check_views(latents, maps);
    InversionResult result;
    if (steps == 0) {
        result.latents = std::move(latents);
        return result;
    }
    // Maps are static, so the scatter structure is built once.
    const InversionPlan plan = make_inversion_plan(maps);
    for (int i = 0; i <= steps; ++i) {
        auto decoded = backend.decode(DecodeRequest{latents, 0});
        check_decoded(plan, decoded);
        const std::vector<double> target = compact_average(plan, decoded);
        InversionEval ev = compact_evaluate(plan, latents, target, decoded, backend);
        result.losses.push_back(ev.loss);
        if (i == steps) break;
        descend(latents, ev.gradient, lr, i, ev.loss);
        if (on_step) on_step(i, ev.loss);
    }
    result.latents = std::move(latents);
    return result;
}

} // namespace meshdiff
