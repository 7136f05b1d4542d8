#pragma once

#include "region_styler/encoders.hpp"
#include "region_styler/error.hpp"
#include "region_styler/image.hpp"
#include "region_styler/losses.hpp"
#include "region_styler/statespace.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace region_styler {

/// Which variables the optimizer updates: the latent values inside prompted
/// regions, the per-region condition vectors, or both.
enum class OptimizeTarget { Latent, ConditionVectors, Both };
std::string to_string(OptimizeTarget target);
OptimizeTarget parse_optimize_target(const std::string& name);

struct StylizationConfig {
    int steps = 200;
    double learning_rate = 0.05;
    OptimizeTarget optimize_target = OptimizeTarget::Both;
    LossConfig loss;
    bool composite_unprompted = true;
    int early_stop_patience = 25;
    double early_stop_delta = 1e-4;
    /// Seeds the prompt-to-condition map.
    std::uint64_t seed = 0;
    /// Heavy-ball coefficient.
    double momentum = 0.9;
    /// The joint gradient over all variables is rescaled to at most this norm
    /// before the momentum update. 0 disables clipping.
    double max_grad_norm = 1.0;

    void validate() const;
    friend bool operator==(const StylizationConfig&, const StylizationConfig&) = default;
};

/// JSON layout:
///   {"loss": {"lambda_tv", "lambda_content", "eps", "anchor_text",
///             "content_embed_weight", "content_pixel_weight", "area_normalize",
///             "extraction", "mode"},
///    "optimizer": {"steps", "learning_rate", "optimize_target",
///                  "composite_unprompted", "early_stop_patience",
///                  "early_stop_delta", "seed", "momentum", "max_grad_norm"}}
/// Every key is optional on input; unknown keys are rejected.
nlohmann::json loss_config_to_json(const LossConfig& config);
LossConfig loss_config_from_json(const nlohmann::json& json, const std::string& path = "loss");
nlohmann::json optimizer_config_to_json(const StylizationConfig& config);
/// Reads the "optimizer" object into `config`, leaving absent keys untouched.
void read_optimizer_config(const nlohmann::json& json, StylizationConfig& config,
                           const std::string& path = "optimizer");

nlohmann::json to_json(const StylizationConfig& config);
StylizationConfig stylization_config_from_json(const nlohmann::json& json);

struct StylizationResult {
    ImageTensor output;
    std::vector<LossBreakdown> trace;
    int steps_run = 0;
    StylizationConfig config;
    /// Weighted directional term per prompted label at the final step.
    std::map<std::int32_t, double> final_region_dir;
    /// cos(dT_r, dI_r) per prompted label at the final step.
    std::map<std::int32_t, double> final_region_cosine;
    std::map<std::int32_t, double> initial_region_cosine;
};

/// Raised when the objective stops being finite. Carries the steps evaluated so
/// far, the offending one last.
class NonFiniteLossError : public Error {
public:
    NonFiniteLossError(const std::string& message, std::vector<LossBreakdown> trace)
        : Error(message), trace_(std::move(trace)) {}
    const std::vector<LossBreakdown>& trace() const noexcept { return trace_; }

private:
    std::vector<LossBreakdown> trace_;
};

struct StylizeHooks {
    /// Called after each evaluated step with (steps completed, configured steps).
    std::function<void(int, int)> progress;
    /// Polled once per step; when set, stylize throws CancelledError.
    const std::atomic<bool>* cancel = nullptr;
};

/// Region-wise stylization. The latent starts at E(X), inverse-modulated inside
/// prompted regions so that the first assembled state reproduces E(X), and the
/// condition vectors start at the prompt conditions. Each step assembles z*,
/// generates and clamps Y, composites unprompted pixels from X (when enabled),
/// evaluates the total loss and takes a momentum step. The returned output is
/// the image of the last evaluated step.
StylizationResult stylize(const ImageTensor& x, const LabelMask& mask, const std::vector<RegionSpec>& regions,
                          const EncoderBackend& encoder, const StateBackend& state,
                          const StylizationConfig& config, const StylizeHooks& hooks = {});

/// Pixels whose label is not in `prompted` are copied from X, the rest from Y.
ImageTensor composite_unedited(const ImageTensor& y, const ImageTensor& x, const LabelMask& mask,
                               const std::set<std::int32_t>& prompted);

struct LossTraceSummary {
    double initial_total = 0.0;
    double final_total = 0.0;
    double min_total = 0.0;
    int min_step = 0;
    int steps_run = 0;
    double final_dir = 0.0;
    double final_tv = 0.0;
    double final_content = 0.0;
    std::map<std::int32_t, double> final_region_dir;
};

LossTraceSummary loss_trace_summary(const std::vector<LossBreakdown>& trace);
LossTraceSummary loss_trace_summary(const StylizationResult& result);
nlohmann::json to_json(const LossTraceSummary& summary);

/// Header `step,dir,tv,content,total,region_<label>...`, one row per step.
std::string trace_to_csv(const std::vector<LossBreakdown>& trace);
nlohmann::json trace_to_json(const std::vector<LossBreakdown>& trace);

}  // namespace region_styler
