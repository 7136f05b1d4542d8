#pragma once

#include "region_styler/encoders.hpp"
#include "region_styler/image.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace region_styler {

/// Per-region editing directive (t_r, w_r). An entry with an empty prompt marks
/// the region as unprompted: it takes no part in the directional loss and is
/// preserved by compositing.
struct RegionSpec {
    std::int32_t label = 0;
    std::string prompt;
    double weight = 1.0;

    bool prompted() const noexcept { return !prompt.empty(); }
    friend bool operator==(const RegionSpec&, const RegionSpec&) = default;
};

/// Regions below this pixel count cannot be prompted.
inline constexpr std::size_t kMinPromptedRegionPixels = 16;

/// Checks labels exist and are unique, weights are finite and >= 0, and every
/// prompted region has at least kMinPromptedRegionPixels pixels. Throws
/// ValidationError (UnknownLabelError for labels) with field `regions[i].<name>`.
void validate_regions(std::span<const RegionSpec> regions, const LabelMask& mask);

/// Which directional term enters the total objective: the region-wise sum or
/// the whole-image directional loss (requires exactly one prompted region).
enum class DirectionalMode { Region, Global };
std::string to_string(DirectionalMode mode);
DirectionalMode parse_directional_mode(const std::string& name);

struct LossConfig {
    double lambda_tv = 1e-4;
    double lambda_content = 1.0;
    double eps = 1e-8;
    std::string anchor_text = "plain photo";
    /// Content loss = embed_weight * MSE(F_I(Y), F_I(X)) + pixel_weight * MSE(Y, X).
    double content_embed_weight = 1.0;
    double content_pixel_weight = 0.1;
    /// Multiply w_r by the region's area fraction.
    bool area_normalize = false;
    ExtractionPolicy extraction = ExtractionPolicy::MaskedFill;
    DirectionalMode mode = DirectionalMode::Region;

    void validate() const;
    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

struct LossBreakdown {
    double dir = 0.0;
    double tv = 0.0;
    double content = 0.0;
    double total = 0.0;
    std::map<std::int32_t, double> per_region_dir;
};

/// a.b / (|a||b| + eps). A zero vector therefore has cosine 0 with anything.
double stabilized_cosine(std::span<const double> a, std::span<const double> b, double eps);

/// 1 - cos(F_T(t) - F_T(anchor), F_I(Y) - F_I(X)).
double directional_loss(const EncoderBackend& encoder, std::string_view prompt, const ImageTensor& x,
                        const ImageTensor& y, const AnchorText& anchor = {}, double eps = 1e-8);

struct RegionDirectionalLoss {
    double total = 0.0;
    std::map<std::int32_t, double> per_region;  // weighted terms
};

/// sum_r w_r * [1 - cos(dT_r, F_I(Y_r) - F_I(X_r))] over prompted regions,
/// with X_r, Y_r extracted using the per-channel mean of X as fill.
RegionDirectionalLoss region_directional_loss(const EncoderBackend& encoder, std::span<const RegionSpec> regions,
                                              const LabelMask& mask, const ImageTensor& x, const ImageTensor& y,
                                              const AnchorText& anchor = {}, double eps = 1e-8,
                                              ExtractionPolicy policy = ExtractionPolicy::MaskedFill,
                                              bool area_normalize = false);

/// Anisotropic TV: mean of |difference| over all horizontal and vertical
/// neighbor pairs of every channel. Zero for images without neighbor pairs.
double tv_loss(const ImageTensor& y);
ImageTensor tv_loss_gradient(const ImageTensor& y);

double content_loss(const EncoderBackend& encoder, const ImageTensor& y, const ImageTensor& x,
                    double embed_weight = 1.0, double pixel_weight = 0.1);

/// L_dir + lambda_tv * L_TV(Y) + lambda_content * L_content(Y, X).
LossBreakdown total_loss(const EncoderBackend& encoder, std::span<const RegionSpec> regions, const LabelMask& mask,
                         const ImageTensor& x, const ImageTensor& y, const LossConfig& config = {});

/// The total objective with everything that depends only on X precomputed, and
/// an analytic gradient w.r.t. Y. Requires a differentiable encoder when a
/// gradient is requested.
class StyleObjective {
public:
    StyleObjective(const EncoderBackend& encoder, ImageTensor x, LabelMask mask, std::vector<RegionSpec> regions,
                   LossConfig config);

    LossBreakdown evaluate(const ImageTensor& y, ImageTensor* gradient = nullptr) const;

    /// cos(dT_r, dI_r) per prompted region.
    std::map<std::int32_t, double> region_cosines(const ImageTensor& y) const;

    const std::vector<std::int32_t>& prompted_labels() const noexcept { return prompted_; }
    const LossConfig& config() const noexcept { return config_; }

private:
    struct Term {
        std::int32_t label;
        double weight;
        BinaryMask mask;  // all-true in global mode
        std::vector<double> text_direction;
        Embedding x_embedding;
    };

    ImageTensor extract(const ImageTensor& image, const Term& term) const;

    const EncoderBackend& encoder_;
    ImageTensor x_;
    LabelMask mask_;
    std::vector<RegionSpec> regions_;
    LossConfig config_;
    std::vector<double> fill_;
    Embedding x_embedding_;
    std::vector<Term> terms_;
    std::vector<std::int32_t> prompted_;
};

}  // namespace region_styler
