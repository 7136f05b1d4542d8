#pragma once

#include "region_styler/encoders.hpp"
#include "region_styler/image.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace region_styler {

/// Latent state z / z* over which stylization optimizes. Layout [C',H',W'].
/// Both shipped backends keep the image's spatial grid (H'=H, W'=W), so a
/// pixel mask gates the state directly.
class LatentState {
public:
    LatentState() = default;
    LatentState(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);
    LatentState(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data);

    std::size_t channels() const noexcept { return channels_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t plane_size() const noexcept { return height_ * width_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * height_ + y) * width_ + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return data_[(c * height_ + y) * width_ + x]; }
    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool same_shape(const LatentState& o) const noexcept {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }

    friend bool operator==(const LatentState&, const LatentState&) = default;

private:
    std::size_t channels_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

/// alpha_r: K = 2*C' values, the first C' are raw scales (applied as
/// 1 + tanh(raw)), the last C' are shifts.
class ConditionVector {
public:
    ConditionVector() = default;
    explicit ConditionVector(std::vector<double> values);
    static ConditionVector zero(std::size_t state_channels) {
        return ConditionVector(std::vector<double>(2 * state_channels, 0.0));
    }

    std::size_t size() const noexcept { return values_.size(); }
    std::size_t state_channels() const noexcept { return values_.size() / 2; }
    double scale(std::size_t c) const;
    double shift(std::size_t c) const { return values_[state_channels() + c]; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    bool is_zero() const noexcept;

    friend bool operator==(const ConditionVector&, const ConditionVector&) = default;

private:
    std::vector<double> values_;
};

/// Encoder/generator pair (E, G). Read-only after construction.
class StateBackend {
public:
    virtual ~StateBackend() = default;

    virtual std::string name() const = 0;
    virtual std::size_t state_channels(std::size_t image_channels) const = 0;
    virtual LatentState encode(const ImageTensor& image) const = 0;
    /// G(z). Not clamped; the optimizer clamps.
    virtual ImageTensor generate(const LatentState& state) const = 0;
    /// (dG/dz)^T * grad.
    virtual LatentState generate_vjp(const LatentState& state, const ImageTensor& grad) const = 0;
    /// FiLM modulation gated by the mask; see region_modulate.
    virtual LatentState modulate(const LatentState& state, const BinaryMask& mask,
                                 const ConditionVector& alpha) const;

    /// Declared bound on max |G(E(X)) - X|.
    virtual double reconstruction_tolerance() const { return 0.0; }
    /// Pixels beyond a changed state location that G may affect.
    virtual std::size_t halo() const { return 0; }
};

/// z is the pixel array and G is the identity.
class IdentityStateBackend final : public StateBackend {
public:
    std::string name() const override { return "identity"; }
    std::size_t state_channels(std::size_t image_channels) const override { return image_channels; }
    LatentState encode(const ImageTensor& image) const override;
    ImageTensor generate(const LatentState& state) const override;
    LatentState generate_vjp(const LatentState& state, const ImageTensor& grad) const override;
};

/// Weights of the convolutional autoencoder. Convolutions are 'same'-size with
/// zero padding; weight layout [out][in][ky][kx].
struct ConvAutoencoderWeights {
    std::size_t image_channels = 3;
    std::size_t state_channels = 8;
    std::size_t kernel = 3;
    double tolerance = 0.0;
    std::vector<double> encoder_weights;
    std::vector<double> encoder_bias;
    std::vector<double> decoder_weights;
    std::vector<double> decoder_bias;

    std::size_t halo() const noexcept { return kernel / 2; }
    void validate() const;
};

/// Binary checkpoint, little-endian:
///   "RSAE" | u32 version=1 | u32 image_channels | u32 state_channels | u32 kernel
///   | f64 tolerance | f64[] encoder_weights | f64[] encoder_bias
///   | f64[] decoder_weights | f64[] decoder_bias
void save_autoencoder_checkpoint(const std::filesystem::path& path, const ConvAutoencoderWeights& weights);
ConvAutoencoderWeights load_autoencoder_checkpoint(const std::filesystem::path& path);

struct AutoencoderFitOptions {
    std::size_t image_channels = 3;
    std::size_t state_channels = 8;
    std::uint64_t seed = 5;
    std::size_t training_images = 6;
    std::size_t training_size = 32;
    double ridge = 1e-9;
};

/// Deterministic 32x32 test pattern used to measure the declared tolerance.
ImageTensor autoencoder_reference_image(std::size_t channels);

/// Builds an autoencoder: a seeded 3x3 encoder with a dominant center tap, and a
/// decoder fitted by ridge least squares to reconstruct seeded synthetic
/// images (plus `extra_images`). The declared tolerance is the largest
/// reconstruction error seen on the training set and the reference image,
/// rounded up to two significant digits.
ConvAutoencoderWeights fit_conv_autoencoder(const AutoencoderFitOptions& options,
                                            std::span<const ImageTensor> extra_images = {});

class ConvAutoencoderBackend final : public StateBackend {
public:
    explicit ConvAutoencoderBackend(ConvAutoencoderWeights weights);

    std::string name() const override { return "conv-autoencoder"; }
    std::size_t state_channels(std::size_t image_channels) const override;
    LatentState encode(const ImageTensor& image) const override;
    ImageTensor generate(const LatentState& state) const override;
    LatentState generate_vjp(const LatentState& state, const ImageTensor& grad) const override;
    double reconstruction_tolerance() const override { return weights_.tolerance; }
    std::size_t halo() const override { return weights_.halo(); }

    const ConvAutoencoderWeights& weights() const noexcept { return weights_; }

private:
    ConvAutoencoderWeights weights_;
};

/// Seeded affine map from a text embedding [D] to a condition vector [2*C'].
class ConditionMap {
public:
    ConditionMap(std::size_t embedding_dim, std::size_t state_channels, std::uint64_t seed, double gain = 0.5);

    ConditionVector operator()(const Embedding& embedding) const;
    std::size_t state_channels() const noexcept { return state_channels_; }

private:
    std::size_t embedding_dim_;
    std::size_t state_channels_;
    std::vector<double> weights_;
    std::vector<double> bias_;
};

LatentState encode_state(const StateBackend& backend, const ImageTensor& image);

/// alpha_r for prompt t_r: text embedding passed through the condition map.
ConditionVector prompt_condition(const EncoderBackend& encoder, std::string_view prompt, const ConditionMap& map);

/// Inside the mask: scale_c * z + shift_c with scale_c = 1 + tanh(alpha_c);
/// outside: z unchanged.
LatentState region_modulate(const LatentState& state, const BinaryMask& mask, const ConditionVector& alpha);

struct RegionCondition {
    BinaryMask mask;
    ConditionVector alpha;
};

/// z*: every location takes the modulation of the region that contains it.
/// The masks must partition the state grid.
LatentState assemble_state(const LatentState& state, std::span<const RegionCondition> regions);

}  // namespace region_styler
