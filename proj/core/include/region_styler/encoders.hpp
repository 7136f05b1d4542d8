#pragma once

#include "region_styler/image.hpp"

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace region_styler {

/// Output of a text or image encoder. Not normalized; cosine normalization
/// happens inside the losses.
class Embedding {
public:
    Embedding() = default;
    explicit Embedding(std::vector<double> values) : values_(std::move(values)) {}

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const double> values() const noexcept { return values_; }
    std::vector<double>& mutable_values() noexcept { return values_; }

    friend bool operator==(const Embedding&, const Embedding&) = default;

private:
    std::vector<double> values_;
};

/// The neutral prompt whose embedding is the origin of text directions.
struct AnchorText {
    std::string text = "plain photo";
};

/// Joint text/image embedding model (F_T, F_I). Implementations are read-only
/// after construction.
class EncoderBackend {
public:
    virtual ~EncoderBackend() = default;

    virtual std::string name() const = 0;
    virtual std::size_t dim() const = 0;
    virtual Embedding embed_text(std::string_view prompt) const = 0;
    virtual Embedding embed_image(const ImageTensor& image) const = 0;

    /// True when embed_image_vjp is available.
    virtual bool differentiable() const { return false; }

    /// Vector-Jacobian product of embed_image at `image`: returns
    /// (d embed_image / d pixels)^T * grad, shaped like `image`.
    virtual ImageTensor embed_image_vjp(const ImageTensor& image, std::span<const double> grad) const;
};

struct MockEncoderOptions {
    std::uint64_t seed = 7;
    std::size_t dim = 32;
    /// Multiplier on the image projection matrix (0 gives the zero map).
    double projection_scale = 1.0;
    /// Scale of the seeded image bias; 0 gives a purely linear image encoder.
    double bias_scale = 0.0;
    /// Multiplier on every text embedding.
    double text_scale = 1.0;
};

/// Deterministic stand-in for a CLIP-like model.
///
/// Text: the prompt is lowercased and split into alphanumeric tokens; each
/// token hashes (FNV-1a, mixed with the seed) to a pseudorandom vector with unit
/// expected norm, and the prompt embedding is their sum divided by
/// sqrt(token count). Prompts without alphanumeric characters hash as a single
/// token. Prompts built from disjoint vocabularies are near-orthogonal, and a
/// concatenated prompt shares direction with each of its parts.
///
/// Image: bilinear resampling of each channel to 8x8 (half-pixel centers),
/// flattened channel-major and multiplied by a seeded D x (64*C) matrix, plus an
/// optional seeded bias. Linear in the pixels, so the VJP is exact.
class MockEncoder final : public EncoderBackend {
public:
    static constexpr std::size_t kGrid = 8;

    explicit MockEncoder(MockEncoderOptions options = {});

    std::string name() const override { return "mock"; }
    std::size_t dim() const override { return options_.dim; }
    Embedding embed_text(std::string_view prompt) const override;
    Embedding embed_image(const ImageTensor& image) const override;
    bool differentiable() const override { return true; }
    ImageTensor embed_image_vjp(const ImageTensor& image, std::span<const double> grad) const override;

    const MockEncoderOptions& options() const noexcept { return options_; }

    /// 8x8 bilinear resample, layout [C*64] channel-major.
    std::vector<double> downsample(const ImageTensor& image) const;
    /// Projection matrix for `channels` input channels, row-major D x (64*channels).
    const std::vector<double>& projection(std::size_t channels) const;
    const std::vector<double>& bias() const noexcept { return bias_; }

    static std::vector<std::string> tokenize(std::string_view prompt);

private:
    MockEncoderOptions options_;
    std::vector<double> projection_gray_;
    std::vector<double> projection_rgb_;
    std::vector<double> bias_;
};

/// F_T(prompt). Throws ValidationError on an empty prompt and BackendError on a
/// dimension mismatch.
Embedding encode_text(const EncoderBackend& backend, std::string_view prompt);
/// F_I(image). Throws BackendError when the result dimension differs from the
/// backend's declared text dimension.
Embedding encode_image(const EncoderBackend& backend, const ImageTensor& image);

/// F_T(prompt) - F_T(anchor). Throws DegenerateDirectionError when the
/// difference is the zero vector.
std::vector<double> text_direction(const EncoderBackend& backend, std::string_view prompt,
                                   const AnchorText& anchor = {});

/// Adapter for an external embedding server (e.g. a CLIP model behind HTTP).
///
/// Protocol (JSON over HTTP):
///   GET  {base}/v1/info              -> {"name": str, "dim": int, "differentiable": bool}
///   POST {base}/v1/embed/text        {"text": str}                  -> {"embedding": [float]}
///   POST {base}/v1/embed/image       {"shape": [C,H,W], "data": [float]} -> {"embedding": [float]}
///   POST {base}/v1/embed/image/vjp   {"shape", "data", "grad": [float]}  -> {"gradient": [float]}
/// Calls are serialized through one connection.
class RemoteEncoder final : public EncoderBackend {
public:
    explicit RemoteEncoder(std::string base_url, int timeout_seconds = 60);
    ~RemoteEncoder() override;

    std::string name() const override { return "remote:" + remote_name_; }
    std::size_t dim() const override { return dim_; }
    Embedding embed_text(std::string_view prompt) const override;
    Embedding embed_image(const ImageTensor& image) const override;
    bool differentiable() const override { return differentiable_; }
    ImageTensor embed_image_vjp(const ImageTensor& image, std::span<const double> grad) const override;

private:
    struct Connection;
    std::unique_ptr<Connection> connection_;
    std::string base_url_;
    std::string remote_name_;
    std::size_t dim_ = 0;
    bool differentiable_ = false;
};

}  // namespace region_styler
