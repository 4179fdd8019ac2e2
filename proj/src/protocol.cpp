#include "meshdiff/protocol.hpp"

#include <bit>
#include <cstring>

namespace meshdiff::protocol {

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t v = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

float get_f32(const std::uint8_t* p) {
    std::uint32_t v = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(v);
}

std::size_t shape_elements(const std::vector<std::int64_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ProtocolError("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

} // namespace

std::string result_type(const std::string& request_type) { return request_type + "_result"; }

std::size_t Tensor::element_count() const { return shape_elements(shape); }

const Tensor& Message::tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw ProtocolError("message has no tensor '" + name + "'");
}

bool Message::has_tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

std::vector<std::uint8_t> encode_payload(const Message& msg) {
    json header = msg.header;
    header["tensors"] = json::array();
    std::size_t bytes = 0;
    for (const auto& t : msg.tensors) {
        if (t.element_count() != t.data.size())
            throw ProtocolError("tensor '" + t.name + "' data does not match its shape");
        header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
        bytes += 4 * t.data.size();
    }
    std::string text = header.dump();
    std::vector<std::uint8_t> out;
    out.reserve(text.size() + 1 + bytes);
    out.insert(out.end(), text.begin(), text.end());
    out.push_back(0);
    for (const auto& t : msg.tensors)
        for (float f : t.data) put_f32(out, f);
    return out;
}

std::vector<std::uint8_t> encode_frame(const Message& msg) {
    std::vector<std::uint8_t> payload = encode_payload(msg);
    std::vector<std::uint8_t> frame;
    frame.reserve(8 + payload.size());
    put_u64(frame, payload.size());
    frame.insert(frame.end(), payload.begin(), payload.end());
    return frame;
}

Message decode_payload(const std::uint8_t* data, std::size_t size) {
    if (size == 0) throw ProtocolError("empty payload");
    const void* nul = std::memchr(data, 0, size);
    if (!nul) throw ProtocolError("header is not NUL terminated");
    std::size_t header_len = static_cast<const std::uint8_t*>(nul) - data;
    Message msg;
    try {
        msg.header = json::parse(data, data + header_len);
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed header: ") + e.what());
    }
    if (!msg.header.is_object()) throw ProtocolError("header must be a JSON object");
    std::size_t pos = header_len + 1;
    if (msg.header.contains("tensors")) {
        const json& list = msg.header["tensors"];
        if (!list.is_array()) throw ProtocolError("'tensors' must be an array");
        for (const auto& entry : list) {
            Tensor t;
            try {
                t.name = entry.at("name").get<std::string>();
                t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
            } catch (const json::exception& e) {
                throw ProtocolError(std::string("malformed tensor entry: ") + e.what());
            }
            std::size_t n = t.element_count();
            if (n > (size - pos) / 4) throw ProtocolError("payload shorter than declared tensors");
            t.data.resize(n);
            for (std::size_t i = 0; i < n; ++i) t.data[i] = get_f32(data + pos + 4 * i);
            pos += 4 * n;
            msg.tensors.push_back(std::move(t));
        }
        msg.header.erase("tensors");
    }
    if (pos != size) throw ProtocolError("trailing bytes after declared tensors");
    return msg;
}

Message make_error(std::uint64_t request_id, const std::string& message) {
    Message m;
    m.header = {{"type", type::error}, {"request_id", request_id}, {"message", message}};
    return m;
}

Tensor to_tensor(const std::string& name, const std::vector<Image>& batch, bool squeeze_channel) {
    Tensor t;
    t.name = name;
    if (batch.empty()) throw ProtocolError("cannot encode an empty batch");
    const Image& f = batch.front();
    t.shape = {static_cast<std::int64_t>(batch.size()), f.height, f.width};
    if (!squeeze_channel) t.shape.push_back(f.channels);
    else if (f.channels != 1) throw ProtocolError("squeezed tensor needs single-channel images");
    t.data.reserve(batch.size() * f.size());
    for (const auto& img : batch) {
        if (!img.same_shape(f)) throw ProtocolError("batch entries differ in shape");
        for (double v : img.data) t.data.push_back(static_cast<float>(v));
    }
    return t;
}

std::vector<Image> to_images(const Tensor& t) {
    if (t.shape.size() != 3 && t.shape.size() != 4)
        throw ProtocolError("tensor '" + t.name + "' must have rank 3 or 4");
    int b = static_cast<int>(t.shape[0]), h = static_cast<int>(t.shape[1]), w = static_cast<int>(t.shape[2]);
    int c = t.shape.size() == 4 ? static_cast<int>(t.shape[3]) : 1;
    std::vector<Image> out;
    out.reserve(b);
    std::size_t per = static_cast<std::size_t>(h) * w * c;
    for (int i = 0; i < b; ++i) {
        Image img(h, w, c);
        for (std::size_t k = 0; k < per; ++k) img.data[k] = t.data[i * per + k];
        out.push_back(std::move(img));
    }
    return out;
}

Message to_message(const DenoiseRequest& r) {
    Message m;
    m.header = {{"type", type::predict_noise},   {"request_id", r.request_id},
                {"timestep_index", r.timestep_index}, {"timestep", r.timestep},
                {"alpha_bar_t", r.alpha_bar_t},  {"guidance_scale", r.guidance_scale},
                {"prompts", r.prompts}};
    m.tensors.push_back(to_tensor("latents", r.latents));
    if (r.depth_maps) m.tensors.push_back(to_tensor("depth_maps", *r.depth_maps, true));
    return m;
}

Message to_message(const DecodeRequest& r) {
    Message m;
    m.header = {{"type", type::decode}, {"request_id", r.request_id}};
    m.tensors.push_back(to_tensor("latents", r.latents));
    return m;
}

Message to_message(const PullbackRequest& r) {
    Message m;
    m.header = {{"type", type::decode_pullback}, {"request_id", r.request_id}};
    m.tensors.push_back(to_tensor("latents", r.latents));
    m.tensors.push_back(to_tensor("cotangent", r.cotangents));
    return m;
}

DenoiseRequest denoise_request_from(const Message& m) {
    DenoiseRequest r;
    try {
        r.request_id = m.request_id();
        r.timestep_index = m.header.at("timestep_index").get<int>();
        r.timestep = m.header.value("timestep", r.timestep_index);
        r.alpha_bar_t = m.header.at("alpha_bar_t").get<double>();
        r.guidance_scale = m.header.value("guidance_scale", 7.5);
        r.prompts = m.header.at("prompts").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed predict_noise header: ") + e.what());
    }
    r.latents = to_images(m.tensor("latents"));
    if (m.has_tensor("depth_maps")) r.depth_maps = to_images(m.tensor("depth_maps"));
    return r;
}

DecodeRequest decode_request_from(const Message& m) {
    DecodeRequest r;
    r.request_id = m.request_id();
    r.latents = to_images(m.tensor("latents"));
    return r;
}

PullbackRequest pullback_request_from(const Message& m) {
    PullbackRequest r;
    r.request_id = m.request_id();
    r.latents = to_images(m.tensor("latents"));
    r.cotangents = to_images(m.tensor("cotangent"));
    return r;
}

Message make_result(const std::string& request_type, std::uint64_t request_id, const std::string& name,
                    const std::vector<Image>& batch) {
    Message m;
    m.header = {{"type", result_type(request_type)}, {"request_id", request_id}};
    m.tensors.push_back(to_tensor(name, batch));
    return m;
}

Message dispatch(Backend& backend, const Message& request) {
    const std::uint64_t id = request.request_id();
    const std::string t = request.type();
    try {
        if (t == type::predict_noise)
            return make_result(t, id, "noise", backend.predict_noise(denoise_request_from(request)));
        if (t == type::decode) return make_result(t, id, "images", backend.decode(decode_request_from(request)));
        if (t == type::decode_pullback)
            return make_result(t, id, "gradient", backend.decode_pullback(pullback_request_from(request)));
        return make_error(id, "unknown message type '" + t + "'");
    } catch (const std::exception& e) {
        return make_error(id, e.what());
    }
}

} // namespace meshdiff::protocol
