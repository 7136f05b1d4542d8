#pragma once

#include "region_styler/encoders.hpp"
#include "region_styler/optimizer.hpp"
#include "region_styler/segmentation.hpp"
#include "region_styler/statespace.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

namespace region_styler {

struct EncoderConfig {
    std::string backend = "mock";  // mock | remote
    std::uint64_t mock_seed = 7;
    std::size_t mock_dim = 32;
    std::string url;
    int timeout = 60;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct StateConfig {
    std::string backend = "identity";  // identity | conv-autoencoder
    /// Autoencoder checkpoint; empty fits the default autoencoder on first use.
    std::string checkpoint;

    friend bool operator==(const StateConfig&, const StateConfig&) = default;
};

struct SegmentationConfig {
    std::string backend = "quadrant";
    nlohmann::json options = nlohmann::json::object();

    friend bool operator==(const SegmentationConfig&, const SegmentationConfig&) = default;
};

/// Everything a batch run needs. JSON layout:
///   {"encoder": {"backend", "mock_seed", "mock_dim", "url", "timeout"},
///    "state": {"backend", "checkpoint"},
///    "segmentation": {"backend", "options"},
///    "loss": {...}, "optimizer": {...}}
/// with the loss/optimizer objects as for StylizationConfig. All sections are
/// optional; unknown keys are rejected.
struct PipelineConfig {
    EncoderConfig encoder;
    StateConfig state;
    SegmentationConfig segmentation;
    StylizationConfig stylization;

    friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

nlohmann::json to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const nlohmann::json& json);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the canonical JSON dump.
std::string config_hash(const nlohmann::json& json);

std::unique_ptr<EncoderBackend> make_encoder(const EncoderConfig& config);
std::unique_ptr<StateBackend> make_state_backend(const StateConfig& config);
std::unique_ptr<SegmentationBackend> make_segmentation_backend(const SegmentationConfig& config);

/// Parses a JSON document, converting syntax errors into ValidationError.
nlohmann::json parse_json_document(const std::string& text, const std::string& what);

}  // namespace region_styler
