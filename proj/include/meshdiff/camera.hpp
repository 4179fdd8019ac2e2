#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "meshdiff/mesh.hpp"

namespace meshdiff {

enum class PromptModifier { none, front, back, side };
enum class ViewMode { sphere, hemisphere, xz_plane };

std::string_view to_string(PromptModifier m);
std::string_view to_string(ViewMode m);
ViewMode parse_view_mode(std::string_view s);

// Orthographic camera orbiting the origin.
struct CameraView {
    Vec3 position;
    Vec3 forward; // -normalize(position)
    Vec3 up;
    Vec3 right;
    double ortho_half_extent = 1.0;
    int resolution = 64;
    PromptModifier prompt_modifier = PromptModifier::none;
    double importance = 1.0;

    // Unit vector from the surface toward the camera.
    Vec3 view_direction() const { return -forward; }
    // Same camera at another image resolution.
    CameraView with_resolution(int res) const {
        CameraView v = *this;
        v.resolution = res;
        return v;
    }
};

// Camera looking at the origin from `position`, framed with world up +Y
// (falling back to +Z at the poles).
CameraView look_at_origin(const Vec3& position, double half_extent, int resolution);

// Golden-angle spherical fibonacci lattice (sphere), folded onto y >= 0
// (hemisphere), or n equal azimuths on the y = 0 circle (xz_plane).
std::vector<CameraView> fibonacci_views(int n, ViewMode mode, double radius, double half_extent,
                                        int resolution);

// front / back inside a 45 degree cone around the front axis, side otherwise.
PromptModifier assign_prompt_modifier(const CameraView& view, const Vec3& front_axis);

struct ViewConfig {
    int count = 8;
    ViewMode mode = ViewMode::hemisphere;
    Vec3 front_axis = Vec3(0, 0, 1);
    double front_importance = 1.0;
    int resolution = 512;
    bool prompt_modifiers = true;
};

// Full view set for a normalized mesh: framing from the bounding radius,
// modifiers from the front axis, and the most front-facing view boosted by
// front_importance.
std::vector<CameraView> make_views(const Mesh& mesh, const ViewConfig& cfg);

} // namespace meshdiff
