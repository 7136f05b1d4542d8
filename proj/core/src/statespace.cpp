#include "region_styler/statespace.hpp"

#include "region_styler/error.hpp"
#include "region_styler/image_io.hpp"
#include "region_styler/util.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>

namespace region_styler {

namespace {

void require_grid(const LatentState& state, const BinaryMask& mask) {
    if (mask.height() != state.height() || mask.width() != state.width()) {
        throw ShapeError("mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                         " does not map onto state grid " + std::to_string(state.height()) + "x" +
                         std::to_string(state.width()));
    }
}

/// 'same' convolution with zero padding. weights [out][in][k][k].
std::vector<double> conv2d(std::span<const double> input, std::size_t in_channels, std::size_t height,
                           std::size_t width, std::span<const double> weights, std::span<const double> bias,
                           std::size_t out_channels, std::size_t kernel) {
    const auto r = static_cast<std::ptrdiff_t>(kernel / 2);
    const auto h = static_cast<std::ptrdiff_t>(height);
    const auto w = static_cast<std::ptrdiff_t>(width);
    std::vector<double> out(out_channels * height * width);
    for (std::size_t o = 0; o < out_channels; ++o) {
        double* dst = out.data() + o * height * width;
        std::fill(dst, dst + height * width, bias[o]);
        for (std::size_t i = 0; i < in_channels; ++i) {
            const double* src = input.data() + i * height * width;
            for (std::size_t ky = 0; ky < kernel; ++ky) {
                for (std::size_t kx = 0; kx < kernel; ++kx) {
                    const double k = weights[((o * in_channels + i) * kernel + ky) * kernel + kx];
                    if (k == 0.0) continue;
                    const auto dy = static_cast<std::ptrdiff_t>(ky) - r;
                    const auto dx = static_cast<std::ptrdiff_t>(kx) - r;
                    for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, -dy); y < std::min(h, h - dy); ++y) {
                        for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, -dx); x < std::min(w, w - dx); ++x) {
                            dst[y * w + x] += k * src[(y + dy) * w + (x + dx)];
                        }
                    }
                }
            }
        }
    }
    return out;
}

/// Adjoint of conv2d w.r.t. its input.
std::vector<double> conv2d_adjoint(std::span<const double> grad, std::size_t out_channels, std::size_t height,
                                   std::size_t width, std::span<const double> weights, std::size_t in_channels,
                                   std::size_t kernel) {
    const auto r = static_cast<std::ptrdiff_t>(kernel / 2);
    const auto h = static_cast<std::ptrdiff_t>(height);
    const auto w = static_cast<std::ptrdiff_t>(width);
    std::vector<double> out(in_channels * height * width, 0.0);
    for (std::size_t o = 0; o < out_channels; ++o) {
        const double* g = grad.data() + o * height * width;
        for (std::size_t i = 0; i < in_channels; ++i) {
            double* dst = out.data() + i * height * width;
            for (std::size_t ky = 0; ky < kernel; ++ky) {
                for (std::size_t kx = 0; kx < kernel; ++kx) {
                    const double k = weights[((o * in_channels + i) * kernel + ky) * kernel + kx];
                    if (k == 0.0) continue;
                    const auto dy = static_cast<std::ptrdiff_t>(ky) - r;
                    const auto dx = static_cast<std::ptrdiff_t>(kx) - r;
                    for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, -dy); y < std::min(h, h - dy); ++y) {
                        for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, -dx); x < std::min(w, w - dx); ++x) {
                            dst[(y + dy) * w + (x + dx)] += k * g[y * w + x];
                        }
                    }
                }
            }
        }
    }
    return out;
}

ImageTensor synthetic_training_image(std::size_t channels, std::size_t size, std::uint64_t seed, bool noise) {
    SeededRng rng(seed);
    ImageTensor image(channels, size, size);
    if (noise) {
        for (double& v : image.data()) v = rng.uniform();
        return image;
    }
    for (std::size_t c = 0; c < channels; ++c) {
        const double fy = rng.uniform(0.5, 4.0), fx = rng.uniform(0.5, 4.0);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double edge = rng.uniform(0.2, 0.8);
        const double step = rng.uniform(-0.3, 0.3);
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                const double u = static_cast<double>(x) / static_cast<double>(size);
                const double v = static_cast<double>(y) / static_cast<double>(size);
                double value = 0.5 + 0.3 * std::sin(2.0 * std::numbers::pi * (fx * u + fy * v) + phase);
                if (u > edge) value += step;
                image.at(c, y, x) = std::clamp(value, 0.0, 1.0);
            }
        }
    }
    return image;
}

double round_up_2sig(double v) {
    if (v <= 0.0) return 0.0;
    const double e = std::pow(10.0, std::floor(std::log10(v)) - 1.0);
    return std::ceil(v / e) * e;
}

void put_u32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(Bytes& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
public:
    explicit Reader(const Bytes& bytes) : bytes_(bytes) {}
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
        return std::bit_cast<double>(v);
    }
    std::vector<double> f64s(std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = f64();
        return v;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw DecodeError("autoencoder checkpoint is truncated");
    }
    const Bytes& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------

LatentState::LatentState(std::size_t channels, std::size_t height, std::size_t width, double fill)
    : LatentState(channels, height, width, std::vector<double>(channels * height * width, fill)) {}

LatentState::LatentState(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data)
    : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
    if (channels == 0 || height == 0 || width == 0) {
        throw ValidationError("state", "state dimensions must be positive");
    }
    if (data_.size() != channels * height * width) {
        throw ShapeError("state data size does not match its shape");
    }
}

ConditionVector::ConditionVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty() || values_.size() % 2 != 0) {
        throw ShapeError("condition vector must have 2*C' entries, got " + std::to_string(values_.size()));
    }
    for (const double v : values_) {
        if (!std::isfinite(v)) throw ValidationError("alpha", "condition vector entries must be finite");
    }
}

double ConditionVector::scale(std::size_t c) const {
    return 1.0 + std::tanh(values_[c]);
}

bool ConditionVector::is_zero() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

LatentState StateBackend::modulate(const LatentState& state, const BinaryMask& mask,
                                   const ConditionVector& alpha) const {
    return region_modulate(state, mask, alpha);
}

LatentState IdentityStateBackend::encode(const ImageTensor& image) const {
    return LatentState(image.channels(), image.height(), image.width(),
                       std::vector<double>(image.data().begin(), image.data().end()));
}

ImageTensor IdentityStateBackend::generate(const LatentState& state) const {
    return ImageTensor(state.channels(), state.height(), state.width(),
                       std::vector<double>(state.data().begin(), state.data().end()));
}

LatentState IdentityStateBackend::generate_vjp(const LatentState& state, const ImageTensor& grad) const {
    if (grad.channels() != state.channels() || grad.height() != state.height() || grad.width() != state.width()) {
        throw ShapeError("identity vjp: gradient shape does not match state");
    }
    return LatentState(state.channels(), state.height(), state.width(),
                       std::vector<double>(grad.data().begin(), grad.data().end()));
}

// ---------------------------------------------------------------------------
// Convolutional autoencoder

void ConvAutoencoderWeights::validate() const {
    if ((image_channels != 1 && image_channels != 3) || state_channels == 0 || kernel % 2 == 0) {
        throw ValidationError("checkpoint", "invalid autoencoder geometry");
    }
    const std::size_t taps = kernel * kernel;
    if (encoder_weights.size() != state_channels * image_channels * taps || encoder_bias.size() != state_channels ||
        decoder_weights.size() != image_channels * state_channels * taps || decoder_bias.size() != image_channels) {
        throw ValidationError("checkpoint", "autoencoder weight sizes do not match geometry");
    }
    if (!(tolerance >= 0.0) || !std::isfinite(tolerance)) {
        throw ValidationError("checkpoint", "tolerance must be finite and non-negative");
    }
}

void save_autoencoder_checkpoint(const std::filesystem::path& path, const ConvAutoencoderWeights& weights) {
    weights.validate();
    Bytes out = {'R', 'S', 'A', 'E'};
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(weights.image_channels));
    put_u32(out, static_cast<std::uint32_t>(weights.state_channels));
    put_u32(out, static_cast<std::uint32_t>(weights.kernel));
    put_f64(out, weights.tolerance);
    for (const auto* block : {&weights.encoder_weights, &weights.encoder_bias, &weights.decoder_weights,
                              &weights.decoder_bias}) {
        for (const double v : *block) put_f64(out, v);
    }
    write_file(path, out);
}

ConvAutoencoderWeights load_autoencoder_checkpoint(const std::filesystem::path& path) {
    const Bytes bytes = read_file(path);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "RSAE", 4) != 0) {
        throw DecodeError("not an autoencoder checkpoint: " + path.string());
    }
    Reader in(bytes);
    in.u32();  // magic
    if (const auto version = in.u32(); version != 1) {
        throw DecodeError("unsupported checkpoint version " + std::to_string(version));
    }
    ConvAutoencoderWeights w;
    w.image_channels = in.u32();
    w.state_channels = in.u32();
    w.kernel = in.u32();
    w.tolerance = in.f64();
    if (w.image_channels > 3 || w.state_channels > 4096 || w.kernel > 15) {
        throw DecodeError("checkpoint geometry out of range");
    }
    const std::size_t taps = w.kernel * w.kernel;
    w.encoder_weights = in.f64s(w.state_channels * w.image_channels * taps);
    w.encoder_bias = in.f64s(w.state_channels);
    w.decoder_weights = in.f64s(w.image_channels * w.state_channels * taps);
    w.decoder_bias = in.f64s(w.image_channels);
    if (!in.at_end()) {
        throw DecodeError("trailing bytes in autoencoder checkpoint");
    }
    w.validate();
    return w;
}

ImageTensor autoencoder_reference_image(std::size_t channels) {
    constexpr std::size_t kSize = 32;
    ImageTensor image(channels, kSize, kSize);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t y = 0; y < kSize; ++y) {
            for (std::size_t x = 0; x < kSize; ++x) {
                const double checker = ((x / 8 + y / 8) % 2 == 0) ? 0.15 : 0.0;
                const double ramp = static_cast<double>(x + 2 * y + 7 * c) / (3.0 * kSize + 21.0);
                image.at(c, y, x) = std::clamp(0.2 + 0.6 * ramp + checker, 0.0, 1.0);
            }
        }
    }
    return image;
}

ConvAutoencoderWeights fit_conv_autoencoder(const AutoencoderFitOptions& options,
                                            std::span<const ImageTensor> extra_images) {
    if (options.state_channels < options.image_channels) {
        throw ValidationError("state_channels", "state must have at least as many channels as the image");
    }
    ConvAutoencoderWeights w;
    w.image_channels = options.image_channels;
    w.state_channels = options.state_channels;
    w.kernel = 3;
    const std::size_t taps = 9;
    const std::size_t center = 4;
    const std::size_t cin = w.image_channels;
    const std::size_t cs = w.state_channels;

    SeededRng rng(options.seed);
    w.encoder_weights.resize(cs * cin * taps);
    for (std::size_t o = 0; o < cs; ++o) {
        for (std::size_t i = 0; i < cin; ++i) {
            for (std::size_t t = 0; t < taps; ++t) {
                const double v = t == center ? rng.uniform(-1.0, 1.0) + (o % cin == i ? 1.0 : 0.0)
                                             : rng.uniform(-0.1, 0.1);
                w.encoder_weights[(o * cin + i) * taps + t] = v;
            }
        }
    }
    w.encoder_bias.resize(cs);
    for (auto& b : w.encoder_bias) b = rng.uniform(-0.1, 0.1);

    std::vector<ImageTensor> training;
    for (std::size_t k = 0; k < options.training_images; ++k) {
        training.push_back(synthetic_training_image(cin, options.training_size, options.seed * 1000 + k, k % 3 == 2));
    }
    training.insert(training.end(), extra_images.begin(), extra_images.end());
    training.push_back(autoencoder_reference_image(cin));

    // Decoder: each output channel is a linear function of the 3x3 state
    // neighborhood (zero padded) plus a bias.
    const std::size_t features = cs * taps + 1;
    Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(features),
                                                   static_cast<Eigen::Index>(features));
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(features), static_cast<Eigen::Index>(cin));
    Eigen::VectorXd f(static_cast<Eigen::Index>(features));
    for (const auto& image : training) {
        if (image.channels() != cin) {
            throw ShapeError("autoencoder training image has " + std::to_string(image.channels()) + " channels");
        }
        const std::size_t h = image.height(), wd = image.width();
        const auto state = conv2d(image.data(), cin, h, wd, w.encoder_weights, w.encoder_bias, cs, 3);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < wd; ++x) {
                for (std::size_t s = 0; s < cs; ++s) {
                    for (std::size_t t = 0; t < taps; ++t) {
                        const auto yy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(t / 3) - 1;
                        const auto xx = static_cast<std::ptrdiff_t>(x) + static_cast<std::ptrdiff_t>(t % 3) - 1;
                        const bool inside = yy >= 0 && xx >= 0 && yy < static_cast<std::ptrdiff_t>(h) &&
                                            xx < static_cast<std::ptrdiff_t>(wd);
                        f(static_cast<Eigen::Index>(s * taps + t)) =
                            inside ? state[(s * h + static_cast<std::size_t>(yy)) * wd + static_cast<std::size_t>(xx)]
                                   : 0.0;
                    }
                }
                f(static_cast<Eigen::Index>(features - 1)) = 1.0;
                normal.noalias() += f * f.transpose();
                for (std::size_t c = 0; c < cin; ++c) {
                    rhs.col(static_cast<Eigen::Index>(c)) += f * image.at(c, y, x);
                }
            }
        }
    }
    normal.diagonal().array() += options.ridge * std::max(1.0, normal.diagonal().maxCoeff());
    const Eigen::MatrixXd solution = normal.ldlt().solve(rhs);

    w.decoder_weights.resize(cin * cs * taps);
    w.decoder_bias.resize(cin);
    for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t s = 0; s < cs; ++s) {
            for (std::size_t t = 0; t < taps; ++t) {
                w.decoder_weights[(c * cs + s) * taps + t] =
                    solution(static_cast<Eigen::Index>(s * taps + t), static_cast<Eigen::Index>(c));
            }
        }
        w.decoder_bias[c] = solution(static_cast<Eigen::Index>(features - 1), static_cast<Eigen::Index>(c));
    }

    const ConvAutoencoderBackend probe([&] {
        auto copy = w;
        copy.tolerance = 0.0;
        return copy;
    }());
    double worst = 0.0;
    for (const auto& image : training) {
        const auto recon = probe.generate(probe.encode(image));
        for (std::size_t i = 0; i < image.size(); ++i) {
            worst = std::max(worst, std::abs(recon.data()[i] - image.data()[i]));
        }
    }
    w.tolerance = round_up_2sig(worst);
    return w;
}

ConvAutoencoderBackend::ConvAutoencoderBackend(ConvAutoencoderWeights weights) : weights_(std::move(weights)) {
    weights_.validate();
}

std::size_t ConvAutoencoderBackend::state_channels(std::size_t image_channels) const {
    if (image_channels != weights_.image_channels) {
        throw ShapeError("autoencoder expects " + std::to_string(weights_.image_channels) + "-channel images, got " +
                         std::to_string(image_channels));
    }
    return weights_.state_channels;
}

LatentState ConvAutoencoderBackend::encode(const ImageTensor& image) const {
    state_channels(image.channels());
    auto data = conv2d(image.data(), weights_.image_channels, image.height(), image.width(), weights_.encoder_weights,
                       weights_.encoder_bias, weights_.state_channels, weights_.kernel);
    return LatentState(weights_.state_channels, image.height(), image.width(), std::move(data));
}

ImageTensor ConvAutoencoderBackend::generate(const LatentState& state) const {
    if (state.channels() != weights_.state_channels) {
        throw ShapeError("autoencoder state must have " + std::to_string(weights_.state_channels) + " channels");
    }
    auto data = conv2d(state.data(), weights_.state_channels, state.height(), state.width(), weights_.decoder_weights,
                       weights_.decoder_bias, weights_.image_channels, weights_.kernel);
    return ImageTensor(weights_.image_channels, state.height(), state.width(), std::move(data));
}

LatentState ConvAutoencoderBackend::generate_vjp(const LatentState& state, const ImageTensor& grad) const {
    if (grad.channels() != weights_.image_channels || grad.height() != state.height() ||
        grad.width() != state.width()) {
        throw ShapeError("autoencoder vjp: gradient shape does not match state");
    }
    auto data = conv2d_adjoint(grad.data(), weights_.image_channels, state.height(), state.width(),
                               weights_.decoder_weights, weights_.state_channels, weights_.kernel);
    return LatentState(weights_.state_channels, state.height(), state.width(), std::move(data));
}

// ---------------------------------------------------------------------------
// Conditioning

ConditionMap::ConditionMap(std::size_t embedding_dim, std::size_t state_channels, std::uint64_t seed, double gain)
    : embedding_dim_(embedding_dim), state_channels_(state_channels) {
    if (embedding_dim == 0 || state_channels == 0) {
        throw ValidationError("condition_map", "dimensions must be positive");
    }
    SeededRng rng(seed ^ 0xC0D1C0D1C0D1ULL);
    const std::size_t k = 2 * state_channels;
    const double amplitude = std::sqrt(3.0 / static_cast<double>(embedding_dim)) * gain;
    weights_.resize(k * embedding_dim);
    for (auto& v : weights_) v = rng.uniform(-1.0, 1.0) * amplitude;
    bias_.resize(k);
    for (auto& v : bias_) v = rng.uniform(-1.0, 1.0) * 0.1 * gain;
}

ConditionVector ConditionMap::operator()(const Embedding& embedding) const {
    if (embedding.size() != embedding_dim_) {
        throw ShapeError("condition map expects embeddings of dimension " + std::to_string(embedding_dim_));
    }
    std::vector<double> out(bias_);
    for (std::size_t r = 0; r < out.size(); ++r) {
        const double* row = weights_.data() + r * embedding_dim_;
        for (std::size_t d = 0; d < embedding_dim_; ++d) {
            out[r] += row[d] * embedding[d];
        }
    }
    return ConditionVector(std::move(out));
}

LatentState encode_state(const StateBackend& backend, const ImageTensor& image) {
    return backend.encode(image);
}

ConditionVector prompt_condition(const EncoderBackend& encoder, std::string_view prompt, const ConditionMap& map) {
    return map(encode_text(encoder, prompt));
}

LatentState region_modulate(const LatentState& state, const BinaryMask& mask, const ConditionVector& alpha) {
    require_grid(state, mask);
    if (alpha.state_channels() != state.channels()) {
        throw ShapeError("condition vector has " + std::to_string(alpha.size()) + " entries, state needs " +
                         std::to_string(2 * state.channels()));
    }
    LatentState out = state;
    for (std::size_t c = 0; c < state.channels(); ++c) {
        const double scale = alpha.scale(c);
        const double shift = alpha.shift(c);
        for (std::size_t i = 0; i < state.plane_size(); ++i) {
            if (mask[i]) {
                out.data()[c * state.plane_size() + i] = scale * state.data()[c * state.plane_size() + i] + shift;
            }
        }
    }
    return out;
}

LatentState assemble_state(const LatentState& state, std::span<const RegionCondition> regions) {
    if (regions.empty()) {
        throw ValidationError("regions", "at least one region is required");
    }
    std::vector<int> owner(state.plane_size(), -1);
    for (std::size_t r = 0; r < regions.size(); ++r) {
        require_grid(state, regions[r].mask);
        if (regions[r].alpha.state_channels() != state.channels()) {
            throw ShapeError("condition vector size does not match state channels");
        }
        for (std::size_t i = 0; i < owner.size(); ++i) {
            if (!regions[r].mask[i]) continue;
            if (owner[i] >= 0) {
                throw ValidationError("regions", "region masks overlap; they must partition the image");
            }
            owner[i] = static_cast<int>(r);
        }
    }
    if (std::find(owner.begin(), owner.end(), -1) != owner.end()) {
        throw ValidationError("regions", "region masks do not cover the image; they must partition it");
    }
    LatentState out = state;
    for (std::size_t c = 0; c < state.channels(); ++c) {
        for (std::size_t i = 0; i < owner.size(); ++i) {
            const auto& alpha = regions[static_cast<std::size_t>(owner[i])].alpha;
            double& v = out.data()[c * state.plane_size() + i];
            v = alpha.scale(c) * v + alpha.shift(c);
        }
    }
    return out;
}

}  // namespace region_styler
