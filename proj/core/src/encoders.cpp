#include "region_styler/encoders.hpp"

#include "region_styler/error.hpp"
#include "region_styler/util.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace region_styler {

namespace {

struct Tap {
    std::size_t i0, i1;
    double w0, w1;
};

/// Bilinear taps for resampling `n` source samples onto `out` half-pixel centers.
std::vector<Tap> bilinear_taps(std::size_t n, std::size_t out) {
    std::vector<Tap> taps(out);
    const double ratio = static_cast<double>(n) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        const double src = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(n - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(src));
        const std::size_t i1 = std::min(i0 + 1, n - 1);
        const double w1 = src - static_cast<double>(i0);
        taps[i] = {i0, i1, 1.0 - w1, w1};
    }
    return taps;
}

std::vector<double> seeded_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols, double scale) {
    SeededRng rng(seed);
    std::vector<double> m(rows * cols);
    const double amplitude = std::sqrt(3.0 / static_cast<double>(cols)) * scale;
    for (auto& v : m) {
        v = rng.uniform(-1.0, 1.0) * amplitude;
    }
    return m;
}

}  // namespace

ImageTensor EncoderBackend::embed_image_vjp(const ImageTensor&, std::span<const double>) const {
    throw BackendError(name(), "encoder is not differentiable");
}

MockEncoder::MockEncoder(MockEncoderOptions options) : options_(options) {
    if (options_.dim == 0) {
        throw ValidationError("encoder.mock_dim", "embedding dimension must be positive");
    }
    const std::size_t cells = kGrid * kGrid;
    projection_gray_ = seeded_matrix(options_.seed * 0x9E3779B97F4A7C15ULL + 1, options_.dim, cells,
                                      options_.projection_scale);
    projection_rgb_ = seeded_matrix(options_.seed * 0x9E3779B97F4A7C15ULL + 3, options_.dim, 3 * cells,
                                    options_.projection_scale);
    bias_.assign(options_.dim, 0.0);
    if (options_.bias_scale != 0.0) {
        SeededRng rng(options_.seed ^ 0xB1A5B1A5B1A5ULL);
        for (auto& b : bias_) {
            b = rng.uniform(-1.0, 1.0) * options_.bias_scale;
        }
    }
}

std::vector<std::string> MockEncoder::tokenize(std::string_view prompt) {
    std::vector<std::string> tokens;
    std::string current;
    for (const char ch : prompt) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isalnum(uc)) {
            current += static_cast<char>(std::tolower(uc));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    if (tokens.empty() && !prompt.empty()) {
        tokens.emplace_back(prompt);
    }
    return tokens;
}

Embedding MockEncoder::embed_text(std::string_view prompt) const {
    const auto tokens = tokenize(prompt);
    std::vector<double> out(options_.dim, 0.0);
    const double amplitude = std::sqrt(3.0 / static_cast<double>(options_.dim));
    for (const auto& token : tokens) {
        SeededRng rng(fnv1a64(token) ^ (options_.seed * 0xD1B54A32D192ED03ULL));
        for (auto& v : out) {
            v += rng.uniform(-1.0, 1.0) * amplitude;
        }
    }
    const double norm = tokens.empty() ? 1.0 : std::sqrt(static_cast<double>(tokens.size()));
    for (auto& v : out) {
        v = v / norm * options_.text_scale;
    }
    return Embedding(std::move(out));
}

const std::vector<double>& MockEncoder::projection(std::size_t channels) const {
    if (channels == 1) return projection_gray_;
    if (channels == 3) return projection_rgb_;
    throw ShapeError("mock encoder supports 1 or 3 channels");
}

std::vector<double> MockEncoder::downsample(const ImageTensor& image) const {
    const auto ty = bilinear_taps(image.height(), kGrid);
    const auto tx = bilinear_taps(image.width(), kGrid);
    std::vector<double> out(image.channels() * kGrid * kGrid);
    for (std::size_t c = 0; c < image.channels(); ++c) {
        for (std::size_t i = 0; i < kGrid; ++i) {
            for (std::size_t j = 0; j < kGrid; ++j) {
                const auto& a = ty[i];
                const auto& b = tx[j];
                out[(c * kGrid + i) * kGrid + j] =
                    a.w0 * (b.w0 * image.at(c, a.i0, b.i0) + b.w1 * image.at(c, a.i0, b.i1)) +
                    a.w1 * (b.w0 * image.at(c, a.i1, b.i0) + b.w1 * image.at(c, a.i1, b.i1));
            }
        }
    }
    return out;
}

Embedding MockEncoder::embed_image(const ImageTensor& image) const {
    const auto cells = downsample(image);
    const auto& a = projection(image.channels());
    std::vector<double> out(bias_);
    for (std::size_t d = 0; d < options_.dim; ++d) {
        const double* row = a.data() + d * cells.size();
        double acc = 0.0;
        for (std::size_t k = 0; k < cells.size(); ++k) {
            acc += row[k] * cells[k];
        }
        out[d] += acc;
    }
    return Embedding(std::move(out));
}

ImageTensor MockEncoder::embed_image_vjp(const ImageTensor& image, std::span<const double> grad) const {
    if (grad.size() != options_.dim) {
        throw ShapeError("mock encoder vjp: gradient has dimension " + std::to_string(grad.size()));
    }
    const std::size_t cells = image.channels() * kGrid * kGrid;
    const auto& a = projection(image.channels());
    std::vector<double> cell_grad(cells, 0.0);
    for (std::size_t d = 0; d < options_.dim; ++d) {
        const double* row = a.data() + d * cells;
        for (std::size_t k = 0; k < cells; ++k) {
            cell_grad[k] += row[k] * grad[d];
        }
    }
    const auto ty = bilinear_taps(image.height(), kGrid);
    const auto tx = bilinear_taps(image.width(), kGrid);
    ImageTensor out(image.channels(), image.height(), image.width());
    for (std::size_t c = 0; c < image.channels(); ++c) {
        for (std::size_t i = 0; i < kGrid; ++i) {
            for (std::size_t j = 0; j < kGrid; ++j) {
                const double g = cell_grad[(c * kGrid + i) * kGrid + j];
                const auto& ay = ty[i];
                const auto& bx = tx[j];
                out.at(c, ay.i0, bx.i0) += g * ay.w0 * bx.w0;
                out.at(c, ay.i0, bx.i1) += g * ay.w0 * bx.w1;
                out.at(c, ay.i1, bx.i0) += g * ay.w1 * bx.w0;
                out.at(c, ay.i1, bx.i1) += g * ay.w1 * bx.w1;
            }
        }
    }
    return out;
}

Embedding encode_text(const EncoderBackend& backend, std::string_view prompt) {
    if (prompt.empty()) {
        throw ValidationError("prompt", "prompt must not be empty");
    }
    Embedding e = backend.embed_text(prompt);
    if (e.size() != backend.dim()) {
        throw BackendError(backend.name(), "text embedding has dimension " + std::to_string(e.size()) +
                                               ", expected " + std::to_string(backend.dim()));
    }
    return e;
}

Embedding encode_image(const EncoderBackend& backend, const ImageTensor& image) {
    Embedding e = backend.embed_image(image);
    if (e.size() != backend.dim()) {
        throw BackendError(backend.name(), "image embedding has dimension " + std::to_string(e.size()) +
                                               ", text side has " + std::to_string(backend.dim()));
    }
    return e;
}

std::vector<double> text_direction(const EncoderBackend& backend, std::string_view prompt, const AnchorText& anchor) {
    if (anchor.text.empty()) {
        throw ValidationError("anchor_text", "anchor text must not be empty");
    }
    const Embedding t = encode_text(backend, prompt);
    const Embedding a = encode_text(backend, anchor.text);
    std::vector<double> direction(t.size());
    bool nonzero = false;
    for (std::size_t i = 0; i < t.size(); ++i) {
        direction[i] = t[i] - a[i];
        nonzero = nonzero || direction[i] != 0.0;
    }
    if (!nonzero) {
        throw DegenerateDirectionError("prompt '" + std::string(prompt) + "' has the same embedding as anchor '" +
                                       anchor.text + "'");
    }
    return direction;
}

}  // namespace region_styler
