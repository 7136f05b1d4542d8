#include "region_styler/optimizer.hpp"

#include "region_styler/detail/json_fields.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace region_styler {

std::string to_string(OptimizeTarget target) {
    switch (target) {
        case OptimizeTarget::Latent:
            return "latent";
        case OptimizeTarget::ConditionVectors:
            return "condition-vectors";
        case OptimizeTarget::Both:
            break;
    }
    return "both";
}

OptimizeTarget parse_optimize_target(const std::string& name) {
    if (name == "latent") return OptimizeTarget::Latent;
    if (name == "condition-vectors") return OptimizeTarget::ConditionVectors;
    if (name == "both") return OptimizeTarget::Both;
    throw ValidationError("optimizer.optimize_target",
                          "unknown target '" + name + "' (expected latent, condition-vectors or both)");
}

void StylizationConfig::validate() const {
    if (steps < 1) throw ValidationError("optimizer.steps", "must be >= 1");
    if (!std::isfinite(learning_rate) || learning_rate <= 0.0) {
        throw ValidationError("optimizer.learning_rate", "must be > 0");
    }
    if (early_stop_patience < 1) throw ValidationError("optimizer.early_stop_patience", "must be >= 1");
    if (!std::isfinite(early_stop_delta) || early_stop_delta < 0.0) {
        throw ValidationError("optimizer.early_stop_delta", "must be >= 0");
    }
    if (!std::isfinite(momentum) || momentum < 0.0 || momentum >= 1.0) {
        throw ValidationError("optimizer.momentum", "must be in [0, 1)");
    }
    if (!std::isfinite(max_grad_norm) || max_grad_norm < 0.0) {
        throw ValidationError("optimizer.max_grad_norm", "must be >= 0");
    }
    loss.validate();
}

// --- JSON -----------------------------------------------------------------

nlohmann::json loss_config_to_json(const LossConfig& c) {
    return {{"lambda_tv", c.lambda_tv},
            {"lambda_content", c.lambda_content},
            {"eps", c.eps},
            {"anchor_text", c.anchor_text},
            {"content_embed_weight", c.content_embed_weight},
            {"content_pixel_weight", c.content_pixel_weight},
            {"area_normalize", c.area_normalize},
            {"extraction", to_string(c.extraction)},
            {"mode", to_string(c.mode)}};
}

LossConfig loss_config_from_json(const nlohmann::json& json, const std::string& path) {
    LossConfig c;
    detail::JsonFields f(json, path);
    f.read("lambda_tv", c.lambda_tv);
    f.read("lambda_content", c.lambda_content);
    f.read("eps", c.eps);
    f.read("anchor_text", c.anchor_text);
    f.read("content_embed_weight", c.content_embed_weight);
    f.read("content_pixel_weight", c.content_pixel_weight);
    f.read("area_normalize", c.area_normalize);
    std::string text;
    if (f.read("extraction", text)) {
        try {
            c.extraction = parse_extraction_policy(text);
        } catch (const ValidationError& e) {
            throw ValidationError(f.field_path("extraction"), e.message());
        }
    }
    if (f.read("mode", text)) {
        try {
            c.mode = parse_directional_mode(text);
        } catch (const ValidationError& e) {
            throw ValidationError(f.field_path("mode"), e.message());
        }
    }
    f.finish();
    return c;
}

nlohmann::json optimizer_config_to_json(const StylizationConfig& c) {
    return {{"steps", c.steps},
            {"learning_rate", c.learning_rate},
            {"optimize_target", to_string(c.optimize_target)},
            {"composite_unprompted", c.composite_unprompted},
            {"early_stop_patience", c.early_stop_patience},
            {"early_stop_delta", c.early_stop_delta},
            {"seed", c.seed},
            {"momentum", c.momentum},
            {"max_grad_norm", c.max_grad_norm}};
}

void read_optimizer_config(const nlohmann::json& json, StylizationConfig& c, const std::string& path) {
    detail::JsonFields f(json, path);
    f.read("steps", c.steps);
    f.read("learning_rate", c.learning_rate);
    std::string target;
    if (f.read("optimize_target", target)) {
        try {
            c.optimize_target = parse_optimize_target(target);
        } catch (const ValidationError& e) {
            throw ValidationError(f.field_path("optimize_target"), e.message());
        }
    }
    f.read("composite_unprompted", c.composite_unprompted);
    f.read("early_stop_patience", c.early_stop_patience);
    f.read("early_stop_delta", c.early_stop_delta);
    f.read("seed", c.seed);
    f.read("momentum", c.momentum);
    f.read("max_grad_norm", c.max_grad_norm);
    f.finish();
}

nlohmann::json to_json(const StylizationConfig& config) {
    return {{"loss", loss_config_to_json(config.loss)}, {"optimizer", optimizer_config_to_json(config)}};
}

StylizationConfig stylization_config_from_json(const nlohmann::json& json) {
    StylizationConfig config;
    detail::JsonFields f(json, "");
    if (const auto* loss = f.child("loss")) {
        config.loss = loss_config_from_json(*loss, "loss");
    }
    if (const auto* opt = f.child("optimizer")) {
        read_optimizer_config(*opt, config, "optimizer");
    }
    f.finish();
    config.validate();
    return config;
}

// --- compositing ----------------------------------------------------------

ImageTensor composite_unedited(const ImageTensor& y, const ImageTensor& x, const LabelMask& mask,
                               const std::set<std::int32_t>& prompted) {
    require_same_shape(x, y, "composite_unedited");
    if (mask.height() != x.height() || mask.width() != x.width()) {
        throw ShapeError("label mask does not match image " + x.shape_string());
    }
    ImageTensor out = y;
    const std::size_t plane = x.plane_size();
    for (std::size_t i = 0; i < plane; ++i) {
        if (prompted.contains(mask[i])) continue;
        for (std::size_t c = 0; c < x.channels(); ++c) {
            out.data()[c * plane + i] = x.data()[c * plane + i];
        }
    }
    return out;
}

// --- optimization loop ----------------------------------------------------

namespace {

bool finite(const LossBreakdown& b) {
    return std::isfinite(b.dir) && std::isfinite(b.tv) && std::isfinite(b.content) && std::isfinite(b.total);
}

/// Optimization state: latent values, raw condition vectors per prompted
/// label and their momentum buffers.
struct Variables {
    LatentState z;
    std::map<std::int32_t, ConditionVector> alpha;
};

class Stylizer {
public:
    Stylizer(const ImageTensor& x, const LabelMask& mask, const std::vector<RegionSpec>& regions,
             const EncoderBackend& encoder, const StateBackend& state, const StylizationConfig& config)
        : x_(x), mask_(mask), encoder_(encoder), state_(state), config_(config),
          objective_(encoder, x, mask, regions, config.loss) {
        for (const auto label : objective_.prompted_labels()) prompted_.insert(label);
        // Per-pixel index of the condition vector (or -1 for unprompted).
        slot_.assign(mask.size(), -1);
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (prompted_.contains(mask[i])) slot_[i] = mask[i];
        }

        const LatentState z0 = encode_state(state_, x_);
        if (z0.height() != x.height() || z0.width() != x.width()) {
            throw BackendError(state_.name(), "state grid does not match the image grid");
        }
        const ConditionMap map(encoder.dim(), z0.channels(), config.seed);
        for (const auto& r : regions) {
            if (r.prompted()) vars_.alpha.emplace(r.label, prompt_condition(encoder, r.prompt, map));
        }

        // Inverse modulation: z* = E(X) at initialization.
        vars_.z = z0;
        const std::size_t plane = z0.plane_size();
        for (std::size_t i = 0; i < plane; ++i) {
            if (slot_[i] < 0) continue;
            const auto& a = vars_.alpha.at(slot_[i]);
            for (std::size_t c = 0; c < z0.channels(); ++c) {
                auto& v = vars_.z.data()[c * plane + i];
                v = (v - a.shift(c)) / a.scale(c);
            }
        }
        velocity_.z = LatentState(z0.channels(), z0.height(), z0.width());
        for (const auto& [label, a] : vars_.alpha) {
            velocity_.alpha.emplace(label, ConditionVector::zero(a.state_channels()));
        }
    }

    StylizationResult run(const StylizeHooks& hooks) {
        StylizationResult result;
        result.config = config_;
        result.initial_region_cosine = objective_.region_cosines(composited(clamp_to_unit(state_.generate(assemble()))));

        double best = std::numeric_limits<double>::infinity();
        int stall = 0;
        ImageTensor y;
        for (int step = 0; step < config_.steps; ++step) {
            if (hooks.cancel != nullptr && hooks.cancel->load()) {
                throw CancelledError("stylization cancelled at step " + std::to_string(step));
            }
            const LatentState zs = assemble();
            const ImageTensor raw = state_.generate(zs);
            y = composited(clamp_to_unit(raw));
            ImageTensor grad_y;
            const LossBreakdown loss = objective_.evaluate(y, &grad_y);
            result.trace.push_back(loss);
            if (!finite(loss)) {
                throw NonFiniteLossError("non-finite loss at step " + std::to_string(step), result.trace);
            }
            if (hooks.progress) hooks.progress(step + 1, config_.steps);

            if (best - loss.total < config_.early_stop_delta) {
                ++stall;
            } else {
                stall = 0;
            }
            best = std::min(best, loss.total);
            if (stall >= config_.early_stop_patience || step + 1 == config_.steps) {
                break;
            }
            update(zs, raw, grad_y);
        }

        result.output = std::move(y);
        result.steps_run = static_cast<int>(result.trace.size());
        result.final_region_dir = result.trace.back().per_region_dir;
        result.final_region_cosine = objective_.region_cosines(result.output);
        return result;
    }

private:
    ImageTensor composited(ImageTensor y) const {
        if (!config_.composite_unprompted) return y;
        return composite_unedited(y, x_, mask_, prompted_);
    }

    LatentState assemble() const {
        LatentState zs = vars_.z;
        const std::size_t plane = zs.plane_size();
        for (std::size_t i = 0; i < plane; ++i) {
            if (slot_[i] < 0) continue;
            const auto& a = vars_.alpha.at(slot_[i]);
            for (std::size_t c = 0; c < zs.channels(); ++c) {
                auto& v = zs.data()[c * plane + i];
                v = a.scale(c) * v + a.shift(c);
            }
        }
        return zs;
    }

    void update(const LatentState& zs, const ImageTensor& raw, ImageTensor grad_y) {
        const std::size_t plane = x_.plane_size();
        for (std::size_t i = 0; i < grad_y.size(); ++i) {
            if (config_.composite_unprompted && slot_[i % plane] < 0) {
                grad_y.data()[i] = 0.0;
                continue;
            }
            // The clamp passes gradients through unless the step would push a
            // saturated pixel further out of range.
            const double r = raw.data()[i];
            const double g = grad_y.data()[i];
            if ((r < 0.0 && g > 0.0) || (r > 1.0 && g < 0.0)) grad_y.data()[i] = 0.0;
        }
        const LatentState grad_zs = state_.generate_vjp(zs, grad_y);

        const bool latent = config_.optimize_target != OptimizeTarget::ConditionVectors;
        const bool condition = config_.optimize_target != OptimizeTarget::Latent;
        const std::size_t channels = zs.channels();

        Variables grad;
        grad.z = LatentState(channels, zs.height(), zs.width());
        for (const auto& [label, a] : vars_.alpha) {
            grad.alpha.emplace(label, ConditionVector::zero(a.state_channels()));
        }
        for (std::size_t i = 0; i < plane; ++i) {
            if (slot_[i] < 0) continue;
            const auto& a = vars_.alpha.at(slot_[i]);
            auto ga = grad.alpha.at(slot_[i]).values();
            for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t k = c * plane + i;
                const double g = grad_zs.data()[k];
                if (latent) grad.z.data()[k] = a.scale(c) * g;
                if (condition) {
                    ga[c] += g * vars_.z.data()[k];
                    ga[channels + c] += g;
                }
            }
        }
        if (condition) {
            for (auto& [label, ga] : grad.alpha) {
                const auto& a = vars_.alpha.at(label);
                for (std::size_t c = 0; c < channels; ++c) {
                    const double t = std::tanh(a.values()[c]);
                    ga.values()[c] *= 1.0 - t * t;
                }
            }
        }

        double sq = 0.0;
        for (const double v : grad.z.data()) sq += v * v;
        for (const auto& [label, ga] : grad.alpha) {
            for (const double v : ga.values()) sq += v * v;
        }
        const double norm = std::sqrt(sq);
        const double factor =
            (config_.max_grad_norm > 0.0 && norm > config_.max_grad_norm) ? config_.max_grad_norm / norm : 1.0;

        const double mu = config_.momentum;
        const double lr = config_.learning_rate;
        auto step = [&](std::span<double> value, std::span<double> velocity, std::span<const double> g) {
            for (std::size_t i = 0; i < value.size(); ++i) {
                velocity[i] = mu * velocity[i] + factor * g[i];
                value[i] -= lr * velocity[i];
            }
        };
        if (latent) step(vars_.z.data(), velocity_.z.data(), grad.z.data());
        if (condition) {
            for (auto& [label, a] : vars_.alpha) {
                step(a.values(), velocity_.alpha.at(label).values(), grad.alpha.at(label).values());
            }
        }
    }

    const ImageTensor& x_;
    const LabelMask& mask_;
    const EncoderBackend& encoder_;
    const StateBackend& state_;
    const StylizationConfig& config_;
    StyleObjective objective_;
    std::set<std::int32_t> prompted_;
    std::vector<std::int32_t> slot_;
    Variables vars_;
    Variables velocity_;
};

}  // namespace

StylizationResult stylize(const ImageTensor& x, const LabelMask& mask, const std::vector<RegionSpec>& regions,
                          const EncoderBackend& encoder, const StateBackend& state, const StylizationConfig& config,
                          const StylizeHooks& hooks) {
    config.validate();
    x.check_pixel_range();
    if (mask.height() != x.height() || mask.width() != x.width()) {
        throw ValidationError("mask", "mask is " + std::to_string(mask.height()) + "x" +
                                          std::to_string(mask.width()) + " but the image is " + x.shape_string());
    }
    validate_regions(regions, mask);
    if (std::none_of(regions.begin(), regions.end(), [](const RegionSpec& r) { return r.prompted(); })) {
        throw ValidationError("regions", "at least one region needs a prompt");
    }
    if (!encoder.differentiable()) {
        throw ValidationError("encoder", "backend '" + encoder.name() +
                                             "' is not differentiable; stylization needs pixel gradients");
    }
    Stylizer stylizer(x, mask, regions, encoder, state, config);
    return stylizer.run(hooks);
}

// --- summaries --------------------------------------------------------------

LossTraceSummary loss_trace_summary(const std::vector<LossBreakdown>& trace) {
    if (trace.empty()) {
        throw ValidationError("trace", "loss trace is empty");
    }
    LossTraceSummary s;
    s.initial_total = trace.front().total;
    s.final_total = trace.back().total;
    s.min_total = trace.front().total;
    for (std::size_t i = 1; i < trace.size(); ++i) {
        if (trace[i].total < s.min_total) {
            s.min_total = trace[i].total;
            s.min_step = static_cast<int>(i);
        }
    }
    s.steps_run = static_cast<int>(trace.size());
    s.final_dir = trace.back().dir;
    s.final_tv = trace.back().tv;
    s.final_content = trace.back().content;
    s.final_region_dir = trace.back().per_region_dir;
    return s;
}

LossTraceSummary loss_trace_summary(const StylizationResult& result) {
    return loss_trace_summary(result.trace);
}

nlohmann::json to_json(const LossTraceSummary& s) {
    nlohmann::json regions = nlohmann::json::object();
    for (const auto& [label, v] : s.final_region_dir) regions[std::to_string(label)] = v;
    return {{"initial_total", s.initial_total},
            {"final_total", s.final_total},
            {"min_total", s.min_total},
            {"min_step", s.min_step},
            {"steps_run", s.steps_run},
            {"final_dir", s.final_dir},
            {"final_tv", s.final_tv},
            {"final_content", s.final_content},
            {"final_region_dir", regions}};
}

namespace {

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string trace_to_csv(const std::vector<LossBreakdown>& trace) {
    std::set<std::int32_t> labels;
    for (const auto& b : trace) {
        for (const auto& [label, v] : b.per_region_dir) labels.insert(label);
    }
    std::string out = "step,dir,tv,content,total";
    for (const auto label : labels) out += ",region_" + std::to_string(label);
    out += '\n';
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const auto& b = trace[i];
        out += std::to_string(i) + ',' + format_number(b.dir) + ',' + format_number(b.tv) + ',' +
               format_number(b.content) + ',' + format_number(b.total);
        for (const auto label : labels) {
            const auto it = b.per_region_dir.find(label);
            out += ',';
            if (it != b.per_region_dir.end()) out += format_number(it->second);
        }
        out += '\n';
    }
    return out;
}

nlohmann::json trace_to_json(const std::vector<LossBreakdown>& trace) {
    auto out = nlohmann::json::array();
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const auto& b = trace[i];
        nlohmann::json regions = nlohmann::json::object();
        for (const auto& [label, v] : b.per_region_dir) regions[std::to_string(label)] = v;
        out.push_back({{"step", i},
                       {"dir", b.dir},
                       {"tv", b.tv},
                       {"content", b.content},
                       {"total", b.total},
                       {"per_region_dir", regions}});
    }
    return out;
}

}  // namespace region_styler
