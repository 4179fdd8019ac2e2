#include "meshdiff/camera.hpp"

#include <cmath>
#include <numbers>

#include "meshdiff/errors.hpp"

namespace meshdiff {

std::string_view to_string(PromptModifier m) {
    switch (m) {
    case PromptModifier::front: return "front";
    case PromptModifier::back: return "back";
    case PromptModifier::side: return "side";
    case PromptModifier::none: break;
    }
    return "none";
}

std::string_view to_string(ViewMode m) {
    switch (m) {
    case ViewMode::sphere: return "sphere";
    case ViewMode::hemisphere: return "hemisphere";
    case ViewMode::xz_plane: return "xz_plane";
    }
    return "sphere";
}

ViewMode parse_view_mode(std::string_view s) {
    if (s == "sphere") return ViewMode::sphere;
    if (s == "hemisphere") return ViewMode::hemisphere;
    if (s == "xz_plane" || s == "xz") return ViewMode::xz_plane;
    throw ConfigError("unknown view mode '" + std::string(s) + "'");
}

CameraView look_at_origin(const Vec3& position, double half_extent, int resolution) {
    CameraView v;
    v.position = position;
    v.forward = -position.normalized();
    Vec3 right = v.forward.cross(Vec3::UnitY());
    if (right.norm() < 1e-9) right = v.forward.cross(Vec3::UnitZ());
    v.right = right.normalized();
    v.up = v.right.cross(v.forward).normalized();
    v.ortho_half_extent = half_extent;
    v.resolution = resolution;
    return v;
}

std::vector<CameraView> fibonacci_views(int n, ViewMode mode, double radius, double half_extent,
                                        int resolution) {
    if (n < 1) throw ConfigError("view count must be >= 1");
    const double pi = std::numbers::pi;
    const double golden_angle = pi * (3.0 - std::sqrt(5.0));
    std::vector<CameraView> views;
    views.reserve(n);
    for (int i = 0; i < n; ++i) {
        Vec3 dir;
        if (mode == ViewMode::xz_plane) {
            double az = 2.0 * pi * i / n;
            dir = Vec3(std::cos(az), 0.0, std::sin(az));
        } else {
            double y = 1.0 - 2.0 * (i + 0.5) / n;
            double r = std::sqrt(std::max(0.0, 1.0 - y * y));
            double phi = golden_angle * i;
            dir = Vec3(std::cos(phi) * r, y, std::sin(phi) * r);
            if (mode == ViewMode::hemisphere) dir.y() = std::abs(dir.y());
            dir.normalize();
        }
        views.push_back(look_at_origin(radius * dir, half_extent, resolution));
    }
    return views;
}

PromptModifier assign_prompt_modifier(const CameraView& view, const Vec3& front_axis) {
    const double cone = std::cos(std::numbers::pi / 4.0);
    double d = view.forward.dot(-front_axis);
    if (d > cone) return PromptModifier::front;
    if (d < -cone) return PromptModifier::back;
    return PromptModifier::side;
}

std::vector<CameraView> make_views(const Mesh& mesh, const ViewConfig& cfg) {
    double r = mesh.bounding_radius();
    if (r <= 0.0) r = 1.0;
    auto views = fibonacci_views(cfg.count, cfg.mode, 2.5 * r, 1.1 * r, cfg.resolution);
    Vec3 front = cfg.front_axis.normalized();
    std::size_t best = 0;
    double best_dot = -2.0;
    for (std::size_t i = 0; i < views.size(); ++i) {
        views[i].prompt_modifier =
            cfg.prompt_modifiers ? assign_prompt_modifier(views[i], front) : PromptModifier::none;
        double d = views[i].forward.dot(-front);
        if (d > best_dot) {
            best_dot = d;
            best = i;
        }
    }
    views[best].importance = cfg.front_importance;
    return views;
}

} // namespace meshdiff
