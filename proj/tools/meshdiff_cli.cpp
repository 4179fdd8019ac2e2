#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "meshdiff/config.hpp"
#include "meshdiff/errors.hpp"
#include "meshdiff/png_io.hpp"
#include "meshdiff/remote_backend.hpp"
#include "meshdiff/toy_backend.hpp"

using namespace meshdiff;

namespace {

std::string resolve_backend(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv(kBackendEnvVar)) return env;
    return "toy";
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

int run_texture(const std::string& mesh_path, const std::string& prompt, const std::string& config_path,
                const std::string& backend_flag, const std::string& out, bool skip_inversion, bool debug,
                long long seed) {
    PipelineConfig config;
    if (!config_path.empty()) config = load_config(config_path);
    if (!prompt.empty()) config.prompt = prompt;
    if (skip_inversion) config.skip_inversion = true;
    if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);

    Mesh mesh = load_mesh(mesh_path);
    normalize(mesh);
    auto backend = make_backend(resolve_backend(backend_flag));
    PipelineHooks hooks;
    hooks.on_fit = [&](int step, const ShTexture&) {
        if (step >= 0 && (step % 10 == 0)) std::cerr << "step " << step << "\n";
    };
    PipelineResult result = texture_mesh(mesh, config, *backend, hooks);

    std::filesystem::path dir(out);
    export_texture(result.texture, mesh, dir);
    result.report["config"] = to_json(config);
    {
        std::ofstream report(dir / "report.json");
        report << result.report.dump(2) << "\n";
    }
    if (debug) {
        auto dbg = dir / "debug";
        std::filesystem::create_directories(dbg);
        for (std::size_t v = 0; v < result.views.size(); ++v) {
            auto maps = rasterize(mesh, result.views[v], config.rgb_texture_size);
            write_debug_maps(maps, dbg, "view" + std::to_string(v));
        }
        write_coefficient_planes(result.latent_texture, dbg / "latent_sh.bin");
    }
    std::cout << (dir / "texture.png").string() << "\n";
    return 0;
}

int run_consistent2d(const std::string& prompts_path, const std::string& mask_spec, double alpha,
                     const std::string& backend_flag, const std::string& out, int steps, int size,
                     std::uint64_t seed) {
    auto prompts = read_lines(prompts_path);
    if (prompts.empty()) throw ConfigError("no prompts in '" + prompts_path + "'");
    if (size < kLatentScale || size % kLatentScale) throw ConfigError("--size must be a positive multiple of 8");
    auto backend = make_backend(resolve_backend(backend_flag));
    Mask mask = parse_mask(mask_spec, size / kLatentScale);
    auto result = run_consistent_2d(prompts, mask, alpha, make_schedule(steps), *backend, seed, size);
    std::filesystem::create_directories(out);
    for (std::size_t i = 0; i < result.images.size(); ++i) {
        auto path = std::filesystem::path(out) / ("image_" + std::to_string(i) + ".png");
        write_png(path, to_png8(result.images[i]));
        std::cout << path.string() << "\n";
    }
    return 0;
}

int run_backend_check(const std::string& backend_flag, double timeout_s) {
    auto results = backend_check(resolve_backend(backend_flag),
                                 std::chrono::milliseconds(static_cast<long long>(timeout_s * 1000)));
    bool ok = true;
    for (const auto& r : results) {
        std::cout << (r.ok ? "PASS " : "FAIL ") << r.name;
        if (!r.detail.empty()) std::cout << ": " << r.detail;
        std::cout << "\n";
        ok = ok && r.ok;
    }
    return ok ? 0 : 1;
}

int run_serve_toy(const std::string& listen) {
    ToyTargetBackend backend;
    ProtocolServer server(backend, parse_endpoint(listen));
    std::cout << "listening on " << server.endpoint().host << ":" << server.endpoint().port << std::endl;
    for (;;) std::this_thread::sleep_for(std::chrono::hours(1));
}

int run_make_mesh(const std::string& kind, const std::string& out) {
    Mesh mesh;
    if (kind == "sphere") mesh = make_uv_sphere(64, 32);
    else if (kind == "cube") mesh = make_cube();
    else throw ConfigError("unknown mesh kind '" + kind + "' (sphere, cube)");
    save_obj(mesh, out);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Per-step view buffers are large; keep them on the heap instead of
    // returning them to the kernel every step.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"Mesh texturing with consistent latent diffusion"};
    app.require_subcommand(1);

    std::string backend_flag;
    auto add_backend = [&](CLI::App* cmd) {
        cmd->add_option("--backend", backend_flag, "toy or remote:<host>:<port> (default: $MESHDIFF_BACKEND, then toy)");
    };

    std::string mesh_path, prompt, config_path, out = "out";
    bool skip_inversion = false, debug = false;
    long long seed = -1;
    auto* tex = app.add_subcommand("texture", "Texture a mesh from a prompt");
    tex->add_option("--mesh", mesh_path, "Input OBJ with UVs")->required()->check(CLI::ExistingFile);
    tex->add_option("--prompt", prompt, "Text prompt");
    tex->add_option("--config", config_path, "JSON configuration")->check(CLI::ExistingFile);
    tex->add_option("--out", out, "Output directory");
    tex->add_option("--seed", seed, "Overrides diffusion.seed");
    tex->add_flag("--skip-inversion", skip_inversion, "Skip the inversion stage");
    tex->add_flag("--debug", debug, "Write per-view raster maps and the latent SH planes");
    add_backend(tex);

    std::string prompts_path, mask_spec = "full";
    double alpha = 0.97;
    int steps = 50, size = 512;
    std::uint64_t c2d_seed = 0;
    auto* c2d = app.add_subcommand("consistent2d", "Jointly sample images that share a masked region");
    c2d->add_option("--prompts", prompts_path, "File with one prompt per line")->required()->check(CLI::ExistingFile);
    c2d->add_option("--mask", mask_spec, "full, none, center or center:<lo>:<hi>");
    c2d->add_option("--alpha", alpha, "Per-image share inside the mask")->check(CLI::Range(0.0, 1.0));
    c2d->add_option("--steps", steps, "Sampling steps")->check(CLI::PositiveNumber);
    c2d->add_option("--size", size, "Image size in pixels");
    c2d->add_option("--seed", c2d_seed, "Noise seed");
    c2d->add_option("--out", out, "Output directory");
    add_backend(c2d);

    double timeout_s = 120.0;
    auto* check = app.add_subcommand("backend-check", "Probe a backend for protocol conformance");
    check->add_option("--timeout", timeout_s, "Per-request timeout in seconds");
    add_backend(check);

    std::string listen = "127.0.0.1:0";
    auto* serve = app.add_subcommand("serve-toy", "Serve the toy backend over the wire protocol");
    serve->add_option("--listen", listen, "host:port (port 0 picks a free one)");

    std::string kind;
    auto* mk = app.add_subcommand("make-mesh", "Write a test mesh");
    mk->add_option("kind", kind, "sphere or cube")->required();
    mk->add_option("--out", out, "Output OBJ path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*tex) return run_texture(mesh_path, prompt, config_path, backend_flag, out, skip_inversion, debug, seed);
        if (*c2d) return run_consistent2d(prompts_path, mask_spec, alpha, backend_flag, out, steps, size, c2d_seed);
        if (*check) return run_backend_check(backend_flag, timeout_s);
        if (*serve) return run_serve_toy(listen);
        if (*mk) return run_make_mesh(kind, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
