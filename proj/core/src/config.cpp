#include "region_styler/config.hpp"

#include "region_styler/detail/json_fields.hpp"
#include "region_styler/image_io.hpp"
#include "region_styler/util.hpp"

#include <mutex>

namespace region_styler {

nlohmann::json to_json(const PipelineConfig& c) {
    nlohmann::json out = to_json(c.stylization);
    out["encoder"] = {{"backend", c.encoder.backend},
                      {"mock_seed", c.encoder.mock_seed},
                      {"mock_dim", c.encoder.mock_dim},
                      {"url", c.encoder.url},
                      {"timeout", c.encoder.timeout}};
    out["state"] = {{"backend", c.state.backend}, {"checkpoint", c.state.checkpoint}};
    out["segmentation"] = {{"backend", c.segmentation.backend}, {"options", c.segmentation.options}};
    return out;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& json) {
    PipelineConfig c;
    detail::JsonFields f(json, "");
    if (const auto* e = f.child("encoder")) {
        detail::JsonFields ef(*e, "encoder");
        ef.read("backend", c.encoder.backend);
        ef.read("mock_seed", c.encoder.mock_seed);
        ef.read("mock_dim", c.encoder.mock_dim);
        ef.read("url", c.encoder.url);
        ef.read("timeout", c.encoder.timeout);
        ef.finish();
        if (c.encoder.backend != "mock" && c.encoder.backend != "remote") {
            throw ValidationError("encoder.backend", "unknown encoder '" + c.encoder.backend +
                                                         "' (expected mock or remote)");
        }
        if (c.encoder.mock_dim == 0) throw ValidationError("encoder.mock_dim", "must be >= 1");
        if (c.encoder.backend == "remote" && c.encoder.url.empty()) {
            throw ValidationError("encoder.url", "required for the remote encoder");
        }
    }
    if (const auto* s = f.child("state")) {
        detail::JsonFields sf(*s, "state");
        sf.read("backend", c.state.backend);
        sf.read("checkpoint", c.state.checkpoint);
        sf.finish();
        if (c.state.backend != "identity" && c.state.backend != "conv-autoencoder") {
            throw ValidationError("state.backend", "unknown state backend '" + c.state.backend +
                                                       "' (expected identity or conv-autoencoder)");
        }
    }
    if (const auto* s = f.child("segmentation")) {
        detail::JsonFields sf(*s, "segmentation");
        sf.read("backend", c.segmentation.backend);
        if (const auto* options = sf.child("options")) {
            if (!options->is_object()) throw ValidationError("segmentation.options", "expected a JSON object");
            c.segmentation.options = *options;
        }
        sf.finish();
    }
    if (const auto* loss = f.child("loss")) {
        c.stylization.loss = loss_config_from_json(*loss, "loss");
    }
    if (const auto* opt = f.child("optimizer")) {
        read_optimizer_config(*opt, c.stylization, "optimizer");
    }
    f.finish();
    c.stylization.validate();
    return c;
}

nlohmann::json parse_json_document(const std::string& text, const std::string& what) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(what, std::string("malformed JSON: ") + e.what());
    }
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    return pipeline_config_from_json(parse_json_document(read_text_file(path), "config"));
}

std::string config_hash(const nlohmann::json& json) {
    return to_hex(fnv1a64(json.dump()));
}

std::unique_ptr<EncoderBackend> make_encoder(const EncoderConfig& config) {
    if (config.backend == "mock") {
        MockEncoderOptions options;
        options.seed = config.mock_seed;
        options.dim = config.mock_dim;
        return std::make_unique<MockEncoder>(options);
    }
    if (config.backend == "remote") {
        return std::make_unique<RemoteEncoder>(config.url, config.timeout);
    }
    throw ValidationError("encoder.backend", "unknown encoder '" + config.backend + "'");
}

namespace {

const ConvAutoencoderWeights& default_autoencoder() {
    static std::once_flag once;
    static ConvAutoencoderWeights weights;
    std::call_once(once, [] { weights = fit_conv_autoencoder(AutoencoderFitOptions{}); });
    return weights;
}

}  // namespace

std::unique_ptr<StateBackend> make_state_backend(const StateConfig& config) {
    if (config.backend == "identity") {
        return std::make_unique<IdentityStateBackend>();
    }
    if (config.backend == "conv-autoencoder") {
        if (config.checkpoint.empty()) {
            return std::make_unique<ConvAutoencoderBackend>(default_autoencoder());
        }
        return std::make_unique<ConvAutoencoderBackend>(load_autoencoder_checkpoint(config.checkpoint));
    }
    throw ValidationError("state.backend", "unknown state backend '" + config.backend + "'");
}

std::unique_ptr<SegmentationBackend> make_segmentation_backend(const SegmentationConfig& config) {
    return make_segmentation_backend(config.backend, config.options);
}

}  // namespace region_styler
