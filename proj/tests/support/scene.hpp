#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshdiff/pipeline.hpp"
#include "meshdiff/toy_backend.hpp"

namespace meshdiff::testing {

// Frozen oracle values (tests/data/oracles.json).
const nlohmann::json& oracles();

// Smooth RGB function of surface position, values within [0.2, 0.8].
Vec3 truth_color(const Vec3& p);

// A mesh painted with truth_color and a toy backend whose per-view target is
// the encoded render of that painting. Running texture_mesh with `config`
// against `backend` should reproduce `truth`.
struct TruthScene {
    Mesh mesh;
    PipelineConfig config;
    Image truth; // rgb_texture_size^2 x 3
    std::unique_ptr<ToyTargetBackend> backend;
};
TruthScene make_truth_scene(Mesh mesh, PipelineConfig config);

// PSNR (peak 1) over the texels flagged in `mask`.
double psnr(const Image& a, const Image& b, const std::vector<bool>& mask);

double max_abs_diff(const Image& a, const Image& b);

// Directory under the build tree for test artifacts; created on demand.
std::string scratch_dir(const std::string& name);

} // namespace meshdiff::testing
