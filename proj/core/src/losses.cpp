#include "region_styler/losses.hpp"

#include "region_styler/error.hpp"

#include <cmath>
#include <numeric>
#include <set>

namespace region_styler {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double norm(std::span<const double> a) {
    return std::sqrt(dot(a, a));
}

std::vector<double> difference(const Embedding& a, const Embedding& b) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] - b[i];
    return d;
}

/// d/db of a.b / (|a||b| + eps).
std::vector<double> cosine_gradient_b(std::span<const double> a, std::span<const double> b, double eps) {
    const double na = norm(a);
    const double nb = norm(b);
    const double den = na * nb + eps;
    const double ab = dot(a, b);
    std::vector<double> g(b.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = a[i] / den;
        if (nb > 0.0) {
            g[i] -= ab * na * b[i] / (nb * den * den);
        }
    }
    return g;
}

void add_scaled(ImageTensor& dst, const ImageTensor& src, double scale) {
    auto d = dst.data();
    const auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

double content_value(const Embedding& ey, const Embedding& ex, const ImageTensor& y, const ImageTensor& x,
                     double embed_weight, double pixel_weight) {
    double embed = 0.0;
    for (std::size_t i = 0; i < ey.size(); ++i) {
        const double d = ey[i] - ex[i];
        embed += d * d;
    }
    embed /= static_cast<double>(ey.size());
    double pixel = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y.data()[i] - x.data()[i];
        pixel += d * d;
    }
    pixel /= static_cast<double>(y.size());
    return embed_weight * embed + pixel_weight * pixel;
}

}  // namespace

void validate_regions(std::span<const RegionSpec> regions, const LabelMask& mask) {
    const auto counts = mask.pixel_counts();
    std::set<std::int32_t> seen;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        const auto& r = regions[i];
        const std::string field = "regions[" + std::to_string(i) + "]";
        if (!mask.contains(r.label)) {
            throw UnknownLabelError(r.label, field + ".label");
        }
        if (!seen.insert(r.label).second) {
            throw ValidationError(field + ".label", "label " + std::to_string(r.label) + " listed twice");
        }
        if (!std::isfinite(r.weight) || r.weight < 0.0) {
            throw ValidationError(field + ".weight", "weight must be a finite number >= 0");
        }
        if (r.prompted() && counts[static_cast<std::size_t>(r.label - 1)] < kMinPromptedRegionPixels) {
            throw ValidationError(field + ".label",
                                  "region " + std::to_string(r.label) + " has " +
                                      std::to_string(counts[static_cast<std::size_t>(r.label - 1)]) +
                                      " pixels; prompted regions need at least " +
                                      std::to_string(kMinPromptedRegionPixels));
        }
    }
}

std::string to_string(DirectionalMode mode) {
    return mode == DirectionalMode::Region ? "region" : "global";
}

DirectionalMode parse_directional_mode(const std::string& name) {
    if (name == "region") return DirectionalMode::Region;
    if (name == "global") return DirectionalMode::Global;
    throw ValidationError("mode", "unknown directional mode '" + name + "' (expected region or global)");
}

void LossConfig::validate() const {
    const auto non_negative = [](double v, const char* field) {
        if (!std::isfinite(v) || v < 0.0) throw ValidationError(field, "must be a finite number >= 0");
    };
    non_negative(lambda_tv, "loss.lambda_tv");
    non_negative(lambda_content, "loss.lambda_content");
    non_negative(eps, "loss.eps");
    non_negative(content_embed_weight, "loss.content_embed_weight");
    non_negative(content_pixel_weight, "loss.content_pixel_weight");
    if (anchor_text.empty()) {
        throw ValidationError("loss.anchor_text", "must not be empty");
    }
}

double stabilized_cosine(std::span<const double> a, std::span<const double> b, double eps) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine of vectors with different dimensions");
    }
    return dot(a, b) / (norm(a) * norm(b) + eps);
}

double directional_loss(const EncoderBackend& encoder, std::string_view prompt, const ImageTensor& x,
                        const ImageTensor& y, const AnchorText& anchor, double eps) {
    require_same_shape(x, y, "directional_loss");
    const auto dt = text_direction(encoder, prompt, anchor);
    const auto di = difference(encode_image(encoder, y), encode_image(encoder, x));
    return 1.0 - stabilized_cosine(dt, di, eps);
}

RegionDirectionalLoss region_directional_loss(const EncoderBackend& encoder, std::span<const RegionSpec> regions,
                                              const LabelMask& mask, const ImageTensor& x, const ImageTensor& y,
                                              const AnchorText& anchor, double eps, ExtractionPolicy policy,
                                              bool area_normalize) {
    if (regions.empty()) {
        throw ValidationError("regions", "region list is empty");
    }
    LossConfig config;
    config.lambda_tv = 0.0;
    config.lambda_content = 0.0;
    config.eps = eps;
    config.anchor_text = anchor.text;
    config.extraction = policy;
    config.area_normalize = area_normalize;
    const StyleObjective objective(encoder, x, mask, std::vector<RegionSpec>(regions.begin(), regions.end()), config);
    const auto breakdown = objective.evaluate(y);
    return {breakdown.dir, breakdown.per_region_dir};
}

double tv_loss(const ImageTensor& y) {
    const std::size_t h = y.height(), w = y.width();
    const std::size_t pairs = y.channels() * (h * (w - 1) + (h - 1) * w);
    if (pairs == 0) {
        return 0.0;
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < y.channels(); ++c) {
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t q = 0; q < w; ++q) {
                if (q + 1 < w) sum += std::abs(y.at(c, r, q + 1) - y.at(c, r, q));
                if (r + 1 < h) sum += std::abs(y.at(c, r + 1, q) - y.at(c, r, q));
            }
        }
    }
    return sum / static_cast<double>(pairs);
}

ImageTensor tv_loss_gradient(const ImageTensor& y) {
    ImageTensor g(y.channels(), y.height(), y.width());
    const std::size_t h = y.height(), w = y.width();
    const std::size_t pairs = y.channels() * (h * (w - 1) + (h - 1) * w);
    if (pairs == 0) {
        return g;
    }
    const double inv = 1.0 / static_cast<double>(pairs);
    const auto sign = [](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); };
    for (std::size_t c = 0; c < y.channels(); ++c) {
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t q = 0; q < w; ++q) {
                if (q + 1 < w) {
                    const double s = sign(y.at(c, r, q + 1) - y.at(c, r, q)) * inv;
                    g.at(c, r, q + 1) += s;
                    g.at(c, r, q) -= s;
                }
                if (r + 1 < h) {
                    const double s = sign(y.at(c, r + 1, q) - y.at(c, r, q)) * inv;
                    g.at(c, r + 1, q) += s;
                    g.at(c, r, q) -= s;
                }
            }
        }
    }
    return g;
}

double content_loss(const EncoderBackend& encoder, const ImageTensor& y, const ImageTensor& x, double embed_weight,
                    double pixel_weight) {
    require_same_shape(x, y, "content_loss");
    return content_value(encode_image(encoder, y), encode_image(encoder, x), y, x, embed_weight, pixel_weight);
}

LossBreakdown total_loss(const EncoderBackend& encoder, std::span<const RegionSpec> regions, const LabelMask& mask,
                         const ImageTensor& x, const ImageTensor& y, const LossConfig& config) {
    const StyleObjective objective(encoder, x, mask, std::vector<RegionSpec>(regions.begin(), regions.end()), config);
    return objective.evaluate(y);
}

// ---------------------------------------------------------------------------

StyleObjective::StyleObjective(const EncoderBackend& encoder, ImageTensor x, LabelMask mask,
                               std::vector<RegionSpec> regions, LossConfig config)
    : encoder_(encoder), x_(std::move(x)), mask_(std::move(mask)), regions_(std::move(regions)),
      config_(std::move(config)) {
    config_.validate();
    if (mask_.height() != x_.height() || mask_.width() != x_.width()) {
        throw ShapeError("label mask " + std::to_string(mask_.height()) + "x" + std::to_string(mask_.width()) +
                         " does not match image " + x_.shape_string());
    }
    if (regions_.empty()) {
        throw ValidationError("regions", "region list is empty");
    }
    fill_ = channel_means(x_);
    x_embedding_ = encode_image(encoder_, x_);
    const AnchorText anchor{config_.anchor_text};
    const auto counts = mask_.pixel_counts();

    for (std::size_t i = 0; i < regions_.size(); ++i) {
        const auto& r = regions_[i];
        if (!mask_.contains(r.label)) {
            throw UnknownLabelError(r.label, "regions[" + std::to_string(i) + "].label");
        }
        if (!r.prompted()) {
            continue;
        }
        prompted_.push_back(r.label);
        double weight = r.weight;
        if (config_.area_normalize) {
            weight *= static_cast<double>(counts[static_cast<std::size_t>(r.label - 1)]) /
                      static_cast<double>(mask_.size());
        }
        if (config_.mode == DirectionalMode::Global) {
            terms_.push_back({r.label, weight, BinaryMask(mask_.height(), mask_.width(), true),
                              text_direction(encoder_, r.prompt, anchor), x_embedding_});
        } else {
            Term term{r.label, weight, binary_mask(mask_, r.label), text_direction(encoder_, r.prompt, anchor), {}};
            term.x_embedding = encode_image(encoder_, extract(x_, term));
            terms_.push_back(std::move(term));
        }
    }
    if (config_.mode == DirectionalMode::Global && terms_.size() != 1) {
        throw ValidationError("regions", "global directional mode needs exactly one prompted region, got " +
                                             std::to_string(terms_.size()));
    }
}

ImageTensor StyleObjective::extract(const ImageTensor& image, const Term& term) const {
    if (config_.mode == DirectionalMode::Global) {
        return image;
    }
    return extract_region(image, term.mask, config_.extraction, fill_);
}

LossBreakdown StyleObjective::evaluate(const ImageTensor& y, ImageTensor* gradient) const {
    require_same_shape(x_, y, "objective");
    if (gradient != nullptr) {
        if (!encoder_.differentiable()) {
            throw BackendError(encoder_.name(), "encoder is not differentiable; cannot compute pixel gradients");
        }
        *gradient = ImageTensor(y.channels(), y.height(), y.width());
    }

    LossBreakdown out;
    for (const auto& term : terms_) {
        const ImageTensor y_region = extract(y, term);
        const Embedding y_embedding = encode_image(encoder_, y_region);
        const auto di = difference(y_embedding, term.x_embedding);
        const double value = term.weight * (1.0 - stabilized_cosine(term.text_direction, di, config_.eps));
        out.per_region_dir[term.label] = value;
        out.dir += value;
        if (gradient != nullptr && term.weight != 0.0) {
            auto g = cosine_gradient_b(term.text_direction, di, config_.eps);
            for (auto& v : g) v *= -term.weight;
            const ImageTensor region_grad = encoder_.embed_image_vjp(y_region, g);
            if (config_.mode == DirectionalMode::Global) {
                add_scaled(*gradient, region_grad, 1.0);
            } else {
                add_scaled(*gradient, extract_region_adjoint(region_grad, term.mask, config_.extraction, y.channels()),
                           1.0);
            }
        }
    }

    out.tv = tv_loss(y);
    const Embedding y_embedding = encode_image(encoder_, y);
    out.content = content_value(y_embedding, x_embedding_, y, x_, config_.content_embed_weight,
                                config_.content_pixel_weight);
    out.total = out.dir + config_.lambda_tv * out.tv + config_.lambda_content * out.content;

    if (gradient != nullptr) {
        if (config_.lambda_tv != 0.0) {
            add_scaled(*gradient, tv_loss_gradient(y), config_.lambda_tv);
        }
        if (config_.lambda_content != 0.0) {
            const double embed_scale =
                config_.lambda_content * config_.content_embed_weight * 2.0 / static_cast<double>(y_embedding.size());
            std::vector<double> ge(y_embedding.size());
            for (std::size_t i = 0; i < ge.size(); ++i) ge[i] = embed_scale * (y_embedding[i] - x_embedding_[i]);
            add_scaled(*gradient, encoder_.embed_image_vjp(y, ge), 1.0);
            const double pixel_scale =
                config_.lambda_content * config_.content_pixel_weight * 2.0 / static_cast<double>(y.size());
            auto gd = gradient->data();
            for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += pixel_scale * (y.data()[i] - x_.data()[i]);
        }
    }
    return out;
}

std::map<std::int32_t, double> StyleObjective::region_cosines(const ImageTensor& y) const {
    std::map<std::int32_t, double> out;
    for (const auto& term : terms_) {
        const auto di = difference(encode_image(encoder_, extract(y, term)), term.x_embedding);
        out[term.label] = stabilized_cosine(term.text_direction, di, config_.eps);
    }
    return out;
}

}  // namespace region_styler
