#include "region_styler/image.hpp"

#include "region_styler/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

namespace region_styler {

namespace {

void check_dims(std::size_t height, std::size_t width, const char* what) {
    if (height == 0 || width == 0) {
        throw ValidationError(what, "height and width must be at least 1");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// ImageTensor

ImageTensor::ImageTensor(std::size_t channels, std::size_t height, std::size_t width, double fill)
    : ImageTensor(channels, height, width, std::vector<double>(channels * height * width, fill)) {}

ImageTensor::ImageTensor(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data)
    : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
    if (channels != 1 && channels != 3) {
        throw UnsupportedFormatError("image must have 1 or 3 channels, got " + std::to_string(channels));
    }
    check_dims(height, width, "image");
    if (data_.size() != channels * height * width) {
        throw ShapeError("image data size " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string());
    }
}

std::string ImageTensor::shape_string() const {
    std::ostringstream os;
    os << '[' << channels_ << ',' << height_ << ',' << width_ << ']';
    return os.str();
}

void ImageTensor::check_pixel_range() const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        const double v = data_[i];
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw ValidationError("image", "pixel value " + std::to_string(v) + " at index " + std::to_string(i) +
                                               " outside [0,1]");
        }
    }
}

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
}

std::vector<double> channel_means(const ImageTensor& image) {
    std::vector<double> means(image.channels(), 0.0);
    for (std::size_t c = 0; c < image.channels(); ++c) {
        const auto plane = image.plane(c);
        means[c] = std::accumulate(plane.begin(), plane.end(), 0.0) / static_cast<double>(plane.size());
    }
    return means;
}

ImageTensor clamp_to_unit(const ImageTensor& image) {
    ImageTensor out = image;
    for (double& v : out.data()) {
        v = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// BinaryMask

BinaryMask::BinaryMask(std::size_t height, std::size_t width, bool value)
    : height_(height), width_(width), bits_(height * width, value ? 1 : 0) {
    check_dims(height, width, "mask");
}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
    check_dims(height, width, "mask");
    if (bits_.size() != height * width) {
        throw ShapeError("binary mask data size does not match " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    for (auto& b : bits_) {
        b = b != 0 ? 1 : 0;
    }
}

std::size_t BinaryMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

BoundingBox bounding_box(const BinaryMask& mask) {
    BoundingBox box{mask.height(), mask.width(), 0, 0};
    bool found = false;
    for (std::size_t y = 0; y < mask.height(); ++y) {
        for (std::size_t x = 0; x < mask.width(); ++x) {
            if (!mask.at(y, x)) {
                continue;
            }
            found = true;
            box.y0 = std::min(box.y0, y);
            box.x0 = std::min(box.x0, x);
            box.y1 = std::max(box.y1, y + 1);
            box.x1 = std::max(box.x1, x + 1);
        }
    }
    if (!found) {
        throw ValidationError("mask", "region mask is empty");
    }
    return box;
}

// ---------------------------------------------------------------------------
// LabelMask

LabelMask::LabelMask(std::size_t height, std::size_t width, std::vector<std::int32_t> labels,
                     std::vector<std::string> names)
    : height_(height), width_(width), labels_(std::move(labels)) {
    check_dims(height, width, "mask");
    if (labels_.size() != height * width) {
        throw ShapeError("label data size does not match " + std::to_string(height) + "x" + std::to_string(width));
    }
    std::int32_t max_label = 0;
    for (const auto l : labels_) {
        if (l < 1) {
            throw ValidationError("labels", "label values must be >= 1, got " + std::to_string(l));
        }
        max_label = std::max(max_label, l);
    }
    std::vector<bool> seen(static_cast<std::size_t>(max_label) + 1, false);
    for (const auto l : labels_) {
        seen[static_cast<std::size_t>(l)] = true;
    }
    for (std::int32_t l = 1; l <= max_label; ++l) {
        if (!seen[static_cast<std::size_t>(l)]) {
            throw ValidationError("labels", "label set has a gap at " + std::to_string(l));
        }
    }
    if (names.empty()) {
        names.reserve(static_cast<std::size_t>(max_label));
        for (std::int32_t l = 1; l <= max_label; ++l) {
            names.push_back("region-" + std::to_string(l));
        }
    }
    if (names.size() != static_cast<std::size_t>(max_label)) {
        throw ValidationError("names", "expected " + std::to_string(max_label) + " label names, got " +
                                           std::to_string(names.size()));
    }
    names_ = std::move(names);
}

LabelMask LabelMask::from_raw(std::size_t height, std::size_t width, std::span<const std::int64_t> raw,
                              const std::map<std::int64_t, std::string>& names) {
    std::vector<std::int64_t> keys(raw.begin(), raw.end());
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

    std::map<std::int64_t, std::int32_t> dense;
    std::vector<std::string> dense_names;
    for (const auto key : keys) {
        const auto label = static_cast<std::int32_t>(dense.size() + 1);
        dense.emplace(key, label);
        const auto it = names.find(key);
        dense_names.push_back(it != names.end() ? it->second : "region-" + std::to_string(label));
    }
    std::vector<std::int32_t> labels(raw.size());
    std::transform(raw.begin(), raw.end(), labels.begin(), [&](std::int64_t v) { return dense.at(v); });
    return LabelMask(height, width, std::move(labels), std::move(dense_names));
}

const std::string& LabelMask::name(std::int32_t label) const {
    if (!contains(label)) {
        throw UnknownLabelError(label);
    }
    return names_[static_cast<std::size_t>(label - 1)];
}

std::int32_t LabelMask::find_name(const std::string& name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    return it == names_.end() ? 0 : static_cast<std::int32_t>(it - names_.begin() + 1);
}

std::vector<std::size_t> LabelMask::pixel_counts() const {
    std::vector<std::size_t> counts(region_count(), 0);
    for (const auto l : labels_) {
        ++counts[static_cast<std::size_t>(l - 1)];
    }
    return counts;
}

BinaryMask binary_mask(const LabelMask& mask, std::int32_t label) {
    if (!mask.contains(label)) {
        throw UnknownLabelError(label);
    }
    std::vector<std::uint8_t> bits(mask.size());
    const auto labels = mask.labels();
    for (std::size_t i = 0; i < bits.size(); ++i) {
        bits[i] = labels[i] == label ? 1 : 0;
    }
    return BinaryMask(mask.height(), mask.width(), std::move(bits));
}

LabelMask merge_labels(const LabelMask& mask, const std::set<std::int32_t>& ids, std::int32_t target) {
    if (ids.empty()) {
        throw ValidationError("ids", "merge requires at least one label");
    }
    for (const auto id : ids) {
        if (!mask.contains(id)) {
            throw UnknownLabelError(id, "ids");
        }
    }
    if (!ids.contains(target)) {
        throw ValidationError("target", "merge target " + std::to_string(target) + " is not among the merged ids");
    }
    std::vector<std::int64_t> raw(mask.size());
    const auto labels = mask.labels();
    for (std::size_t i = 0; i < raw.size(); ++i) {
        raw[i] = ids.contains(labels[i]) ? target : labels[i];
    }
    std::map<std::int64_t, std::string> names;
    for (std::int32_t l = 1; l <= static_cast<std::int32_t>(mask.region_count()); ++l) {
        if (!ids.contains(l) || l == target) {
            names[l] = mask.name(l);
        }
    }
    return LabelMask::from_raw(mask.height(), mask.width(), raw, names);
}

LabelMask split_label(const LabelMask& mask, std::int32_t label) {
    if (!mask.contains(label)) {
        throw UnknownLabelError(label);
    }
    const std::size_t h = mask.height();
    const std::size_t w = mask.width();
    const auto labels = mask.labels();

    // Component index per pixel of `label`, assigned in raster order of first pixel.
    std::vector<std::int64_t> component(mask.size(), -1);
    std::int64_t components = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (labels[start] != label || component[start] >= 0) {
            continue;
        }
        component[start] = components;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            const std::size_t y = i / w;
            const std::size_t x = i % w;
            const auto visit = [&](std::size_t j) {
                if (labels[j] == label && component[j] < 0) {
                    component[j] = components;
                    stack.push_back(j);
                }
            };
            if (x > 0) visit(i - 1);
            if (x + 1 < w) visit(i + 1);
            if (y > 0) visit(i - w);
            if (y + 1 < h) visit(i + w);
        }
        ++components;
    }

    // Keys (label, component) flattened so that sorting preserves label order.
    const std::int64_t stride = static_cast<std::int64_t>(mask.size()) + 1;
    std::vector<std::int64_t> raw(mask.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        raw[i] = static_cast<std::int64_t>(labels[i]) * stride + (labels[i] == label ? component[i] : 0);
    }
    std::map<std::int64_t, std::string> names;
    for (std::int32_t l = 1; l <= static_cast<std::int32_t>(mask.region_count()); ++l) {
        if (l != label) {
            names[static_cast<std::int64_t>(l) * stride] = mask.name(l);
        }
    }
    for (std::int64_t k = 0; k < components; ++k) {
        names[static_cast<std::int64_t>(label) * stride + k] =
            k == 0 ? mask.name(label) : mask.name(label) + "#" + std::to_string(k + 1);
    }
    return LabelMask::from_raw(h, w, raw, names);
}

// ---------------------------------------------------------------------------
// Region extraction

std::string to_string(ExtractionPolicy policy) {
    return policy == ExtractionPolicy::MaskedFill ? "masked-fill" : "bbox-crop";
}

ExtractionPolicy parse_extraction_policy(const std::string& name) {
    if (name == "masked-fill") return ExtractionPolicy::MaskedFill;
    if (name == "bbox-crop") return ExtractionPolicy::BBoxCrop;
    throw ValidationError("extraction", "unknown extraction policy '" + name + "' (expected masked-fill or bbox-crop)");
}

ImageTensor extract_region(const ImageTensor& image, const BinaryMask& mask, ExtractionPolicy policy,
                           std::span<const double> fill) {
    if (mask.height() != image.height() || mask.width() != image.width()) {
        throw ShapeError("extract_region: mask dims do not match image " + image.shape_string());
    }
    if (fill.size() != 1 && fill.size() != image.channels()) {
        throw ValidationError("fill", "expected 1 or " + std::to_string(image.channels()) + " fill values");
    }
    const BoundingBox box = policy == ExtractionPolicy::BBoxCrop
                                ? bounding_box(mask)
                                : (mask.any() ? BoundingBox{0, 0, image.height(), image.width()} : bounding_box(mask));
    ImageTensor out(image.channels(), box.height(), box.width());
    for (std::size_t c = 0; c < image.channels(); ++c) {
        const double f = fill.size() == 1 ? fill[0] : fill[c];
        for (std::size_t y = 0; y < box.height(); ++y) {
            for (std::size_t x = 0; x < box.width(); ++x) {
                const std::size_t sy = y + box.y0;
                const std::size_t sx = x + box.x0;
                out.at(c, y, x) = mask.at(sy, sx) ? image.at(c, sy, sx) : f;
            }
        }
    }
    return out;
}

ImageTensor extract_region(const ImageTensor& image, const BinaryMask& mask, ExtractionPolicy policy, double fill) {
    const double values[1] = {fill};
    return extract_region(image, mask, policy, values);
}

ImageTensor extract_region_adjoint(const ImageTensor& region_grad, const BinaryMask& mask, ExtractionPolicy policy,
                                   std::size_t channels) {
    const BoundingBox box =
        policy == ExtractionPolicy::BBoxCrop ? bounding_box(mask) : BoundingBox{0, 0, mask.height(), mask.width()};
    if (region_grad.channels() != channels || region_grad.height() != box.height() ||
        region_grad.width() != box.width()) {
        throw ShapeError("extract_region_adjoint: gradient shape " + region_grad.shape_string() +
                         " does not match region geometry");
    }
    ImageTensor out(channels, mask.height(), mask.width());
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t y = 0; y < box.height(); ++y) {
            for (std::size_t x = 0; x < box.width(); ++x) {
                const std::size_t sy = y + box.y0;
                const std::size_t sx = x + box.x0;
                if (mask.at(sy, sx)) {
                    out.at(c, sy, sx) = region_grad.at(c, y, x);
                }
            }
        }
    }
    return out;
}

}  // namespace region_styler
