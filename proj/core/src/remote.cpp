// HTTP adapters for externally hosted encoder and segmentation models.

#include "region_styler/encoders.hpp"
#include "region_styler/error.hpp"
#include "region_styler/segmentation.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace region_styler {

namespace {

struct Url {
    std::string origin;  // scheme://host[:port]
    std::string base_path;
};

Url split_url(const std::string& url) {
    const auto scheme = url.find("://");
    const auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start == std::string::npos) {
        return {url, ""};
    }
    std::string base = url.substr(path_start);
    while (!base.empty() && base.back() == '/') {
        base.pop_back();
    }
    return {url.substr(0, path_start), base};
}

nlohmann::json image_payload(const ImageTensor& image) {
    return {{"shape", {image.channels(), image.height(), image.width()}},
            {"data", std::vector<double>(image.data().begin(), image.data().end())}};
}

nlohmann::json parse_reply(const httplib::Result& res, const std::string& backend, const std::string& what) {
    if (!res) {
        throw BackendError(backend, what + ": " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw BackendError(backend, what + ": HTTP " + std::to_string(res->status) + " " + res->body);
    }
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(backend, what + ": malformed reply: " + e.what());
    }
}

std::vector<double> read_vector(const nlohmann::json& reply, const char* key, const std::string& backend) {
    try {
        return reply.at(key).get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(backend, std::string("reply lacks numeric array '") + key + "': " + e.what());
    }
}

}  // namespace

struct RemoteEncoder::Connection {
    Connection(const Url& url, int timeout) : client(url.origin), base_path(url.base_path) {
        client.set_read_timeout(timeout, 0);
        client.set_write_timeout(timeout, 0);
    }

    nlohmann::json post(const std::string& path, const nlohmann::json& body, const std::string& backend) {
        std::lock_guard lock(mutex);
        return parse_reply(client.Post(base_path + path, body.dump(), "application/json"), backend, path);
    }

    nlohmann::json get(const std::string& path, const std::string& backend) {
        std::lock_guard lock(mutex);
        return parse_reply(client.Get(base_path + path), backend, path);
    }

    httplib::Client client;
    std::string base_path;
    std::mutex mutex;
};

RemoteEncoder::RemoteEncoder(std::string base_url, int timeout_seconds)
    : connection_(std::make_unique<Connection>(split_url(base_url), timeout_seconds)), base_url_(std::move(base_url)) {
    const auto info = connection_->get("/v1/info", "remote");
    try {
        remote_name_ = info.value("name", std::string("unnamed"));
        dim_ = info.at("dim").get<std::size_t>();
        differentiable_ = info.value("differentiable", false);
    } catch (const nlohmann::json::exception& e) {
        throw BackendError("remote", std::string("malformed /v1/info reply: ") + e.what());
    }
    if (dim_ == 0) {
        throw BackendError("remote", "server reports zero embedding dimension");
    }
}

RemoteEncoder::~RemoteEncoder() = default;

Embedding RemoteEncoder::embed_text(std::string_view prompt) const {
    const auto reply = connection_->post("/v1/embed/text", {{"text", std::string(prompt)}}, name());
    return Embedding(read_vector(reply, "embedding", name()));
}

Embedding RemoteEncoder::embed_image(const ImageTensor& image) const {
    const auto reply = connection_->post("/v1/embed/image", image_payload(image), name());
    return Embedding(read_vector(reply, "embedding", name()));
}

ImageTensor RemoteEncoder::embed_image_vjp(const ImageTensor& image, std::span<const double> grad) const {
    if (!differentiable_) {
        return EncoderBackend::embed_image_vjp(image, grad);
    }
    auto body = image_payload(image);
    body["grad"] = std::vector<double>(grad.begin(), grad.end());
    const auto reply = connection_->post("/v1/embed/image/vjp", body, name());
    auto gradient = read_vector(reply, "gradient", name());
    if (gradient.size() != image.size()) {
        throw BackendError(name(), "vjp gradient has " + std::to_string(gradient.size()) + " values, expected " +
                                       std::to_string(image.size()));
    }
    return ImageTensor(image.channels(), image.height(), image.width(), std::move(gradient));
}

RemoteSegmenter::RemoteSegmenter(std::string base_url, int timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {}

RawSegmentation RemoteSegmenter::run(const ImageTensor& image) const {
    const Url url = split_url(base_url_);
    httplib::Client client(url.origin);
    client.set_read_timeout(timeout_seconds_, 0);
    const auto reply = parse_reply(
        client.Post(url.base_path + "/v1/segment", image_payload(image).dump(), "application/json"), name(),
        "/v1/segment");
    RawSegmentation out;
    try {
        out.height = reply.at("height").get<std::size_t>();
        out.width = reply.at("width").get<std::size_t>();
        out.labels = reply.at("labels").get<std::vector<std::int64_t>>();
        if (reply.contains("names")) {
            for (const auto& item : reply.at("names").items()) {
                out.names[std::stoll(item.key())] = item.value().get<std::string>();
            }
        }
    } catch (const std::exception& e) {
        throw BackendError(name(), std::string("malformed /v1/segment reply: ") + e.what());
    }
    return out;
}

}  // namespace region_styler
