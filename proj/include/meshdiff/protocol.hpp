#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshdiff/backend.hpp"

// Frame layout (all integers little-endian):
//   u64 payload_length
//   payload = JSON header (UTF-8) | 0x00 | tensor data
// The header's "tensors" array lists {"name", "shape"} in payload order;
// each tensor is row-major float32. payload_length counts everything after
// the length field.
namespace meshdiff::protocol {

using json = nlohmann::json;

inline constexpr std::uint64_t kMaxPayload = std::uint64_t{1} << 34;

namespace type {
inline constexpr const char* predict_noise = "predict_noise";
inline constexpr const char* decode = "decode";
inline constexpr const char* decode_pullback = "decode_pullback";
inline constexpr const char* error = "error";
} // namespace type

// "predict_noise" -> "predict_noise_result"
std::string result_type(const std::string& request_type);

struct Tensor {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    std::size_t element_count() const;
};

struct Message {
    json header = json::object();
    std::vector<Tensor> tensors;

    std::string type() const { return header.value("type", std::string{}); }
    std::uint64_t request_id() const { return header.value("request_id", std::uint64_t{0}); }
    const Tensor& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

// Payload bytes (no length prefix) <-> Message.
std::vector<std::uint8_t> encode_payload(const Message& msg);
Message decode_payload(const std::uint8_t* data, std::size_t size);
// Length prefix + payload.
std::vector<std::uint8_t> encode_frame(const Message& msg);

Message make_error(std::uint64_t request_id, const std::string& message);

// Batches of images <-> [B, h, w, C] (or [B, h, w] when squeeze_channel).
Tensor to_tensor(const std::string& name, const std::vector<Image>& batch, bool squeeze_channel = false);
std::vector<Image> to_images(const Tensor& t);

Message to_message(const DenoiseRequest& r);
Message to_message(const DecodeRequest& r);
Message to_message(const PullbackRequest& r);
DenoiseRequest denoise_request_from(const Message& m);
DecodeRequest decode_request_from(const Message& m);
PullbackRequest pullback_request_from(const Message& m);

// Response carrying one output batch under `name`.
Message make_result(const std::string& request_type, std::uint64_t request_id, const std::string& name,
                    const std::vector<Image>& batch);

// Runs one request against a backend and builds the response (or an error
// frame for any failure).
Message dispatch(Backend& backend, const Message& request);

} // namespace meshdiff::protocol
