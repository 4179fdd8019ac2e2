#include "meshdiff/config.hpp"

#include <fstream>
#include <map>

#include "meshdiff/errors.hpp"

namespace meshdiff {

namespace {

using nlohmann::json;

void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object()) flatten(*it, key, out);
        else out[key] = *it;
    }
}

template <typename T>
T get(const std::string& key, const json& v) {
    try {
        return v.get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("bad value for '" + key + "': " + e.what());
    }
}

} // namespace

void apply_config(PipelineConfig& c, const json& j) {
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    std::map<std::string, json> flat;
    flatten(j, "", flat);
    for (const auto& [key, v] : flat) {
        if (key == "prompt") c.prompt = get<std::string>(key, v);
        else if (key == "views.count") c.views.count = get<int>(key, v);
        else if (key == "views.mode") c.views.mode = parse_view_mode(get<std::string>(key, v));
        else if (key == "views.front_axis") {
            auto a = get<std::vector<double>>(key, v);
            if (a.size() != 3) throw ConfigError("views.front_axis needs 3 components");
            c.views.front_axis = Vec3(a[0], a[1], a[2]);
        } else if (key == "views.front_importance") c.views.front_importance = get<double>(key, v);
        else if (key == "views.resolution") c.views.resolution = get<int>(key, v);
        else if (key == "views.prompt_modifiers") c.views.prompt_modifiers = get<bool>(key, v);
        else if (key == "diffusion.steps") c.steps = get<int>(key, v);
        else if (key == "diffusion.guidance_scale") c.guidance_scale = get<double>(key, v);
        else if (key == "diffusion.alpha") c.consistent_alpha = get<double>(key, v);
        else if (key == "diffusion.seed") c.seed = get<std::uint64_t>(key, v);
        else if (key == "inversion.steps") c.inversion.steps = get<int>(key, v);
        else if (key == "inversion.lr") c.inversion.lr = get<double>(key, v);
        else if (key == "inversion.skip") c.skip_inversion = get<bool>(key, v);
        else if (key == "texture.latent_size") c.latent_texture_size = get<int>(key, v);
        else if (key == "texture.rgb_size") c.rgb_texture_size = get<int>(key, v);
        else if (key == "texture.sh_order") c.sh_order = get<int>(key, v);
        else if (key == "texture.alpha") c.alpha = get<double>(key, v);
        else if (key == "texture.ridge") c.ridge = get<double>(key, v);
        else if (key == "texture.fill") c.fill = get<double>(key, v);
        else if (key == "texture.init") {
            auto s = get<std::string>(key, v);
            if (s == "per_view") c.init = TextureInit::per_view;
            else if (s == "texture") c.init = TextureInit::texture;
            else throw ConfigError("texture.init must be 'per_view' or 'texture'");
        } else throw ConfigError("unknown configuration key '" + key + "'");
    }
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path.string() + "': " + e.what());
    }
    PipelineConfig c;
    apply_config(c, j);
    return c;
}

json to_json(const PipelineConfig& c) {
    return {
        {"prompt", c.prompt},
        {"views", {{"count", c.views.count},
                   {"mode", std::string(to_string(c.views.mode))},
                   {"front_axis", {c.views.front_axis.x(), c.views.front_axis.y(), c.views.front_axis.z()}},
                   {"front_importance", c.views.front_importance},
                   {"resolution", c.views.resolution},
                   {"prompt_modifiers", c.views.prompt_modifiers}}},
        {"diffusion", {{"steps", c.steps},
                       {"guidance_scale", c.guidance_scale},
                       {"alpha", c.consistent_alpha},
                       {"seed", c.seed}}},
        {"inversion", {{"steps", c.inversion.steps}, {"lr", c.inversion.lr}, {"skip", c.skip_inversion}}},
        {"texture", {{"latent_size", c.latent_texture_size},
                     {"rgb_size", c.rgb_texture_size},
                     {"sh_order", c.sh_order},
                     {"alpha", c.alpha},
                     {"ridge", c.ridge},
                     {"fill", c.fill},
                     {"init", c.init == TextureInit::per_view ? "per_view" : "texture"}}},
    };
}

} // namespace meshdiff
