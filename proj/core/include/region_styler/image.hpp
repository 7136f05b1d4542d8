#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace region_styler {

/// Planar float image, layout [C,H,W] with channel order R,G,B (or a single
/// gray plane). Pixel values of images (as opposed to gradients stored in the
/// same container) live in [0,1]; `check_pixel_range` enforces that.
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);
    ImageTensor(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data);

    std::size_t channels() const noexcept { return channels_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t plane_size() const noexcept { return height_ * width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * height_ + y) * width_ + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return data_[(c * height_ + y) * width_ + x]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> plane(std::size_t c) { return std::span<double>(data_).subspan(c * plane_size(), plane_size()); }
    std::span<const double> plane(std::size_t c) const {
        return std::span<const double>(data_).subspan(c * plane_size(), plane_size());
    }

    bool same_shape(const ImageTensor& other) const noexcept {
        return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
    }
    std::string shape_string() const;

    /// Throws ValidationError unless every value is finite and within [0,1].
    void check_pixel_range() const;

    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

private:
    std::size_t channels_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

/// Throws ShapeError when the two images differ in shape.
void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what);

std::vector<double> channel_means(const ImageTensor& image);
ImageTensor clamp_to_unit(const ImageTensor& image);

/// Boolean per-pixel mask M_r.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(std::size_t height, std::size_t width, bool value = false);
    BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return bits_.size(); }

    bool at(std::size_t y, std::size_t x) const { return bits_[y * width_ + x] != 0; }
    bool operator[](std::size_t i) const { return bits_[i] != 0; }
    void set(std::size_t y, std::size_t x, bool v) { bits_[y * width_ + x] = v ? 1 : 0; }
    void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }

    std::size_t count() const noexcept;
    bool any() const noexcept { return count() > 0; }
    std::span<const std::uint8_t> bits() const noexcept { return bits_; }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<std::uint8_t> bits_;
};

struct BoundingBox {
    std::size_t y0 = 0, x0 = 0;  // inclusive
    std::size_t y1 = 0, x1 = 0;  // exclusive
    std::size_t height() const noexcept { return y1 - y0; }
    std::size_t width() const noexcept { return x1 - x0; }
};

/// Throws ValidationError on an empty mask.
BoundingBox bounding_box(const BinaryMask& mask);

/// Dense per-pixel labeling with labels exactly {1..R}. Every pixel carries
/// exactly one label, so the region masks partition the image. Each label has a
/// display name (index r-1 in `names()`).
class LabelMask {
public:
    LabelMask() = default;
    /// `labels` must already be dense {1..R}; throws ValidationError otherwise.
    LabelMask(std::size_t height, std::size_t width, std::vector<std::int32_t> labels,
              std::vector<std::string> names = {});

    /// Renormalizes arbitrary integer labels to {1..R}, preserving ascending
    /// order. `names` is keyed by the raw label value.
    static LabelMask from_raw(std::size_t height, std::size_t width, std::span<const std::int64_t> raw,
                              const std::map<std::int64_t, std::string>& names = {});

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return labels_.size(); }
    std::size_t region_count() const noexcept { return names_.size(); }

    std::int32_t at(std::size_t y, std::size_t x) const { return labels_[y * width_ + x]; }
    std::int32_t operator[](std::size_t i) const { return labels_[i]; }
    std::span<const std::int32_t> labels() const noexcept { return labels_; }

    bool contains(std::int64_t label) const noexcept {
        return label >= 1 && label <= static_cast<std::int64_t>(region_count());
    }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::string& name(std::int32_t label) const;
    /// Label whose name equals `name`, or 0.
    std::int32_t find_name(const std::string& name) const;

    /// Pixel count per label (index r-1).
    std::vector<std::size_t> pixel_counts() const;

    friend bool operator==(const LabelMask&, const LabelMask&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<std::int32_t> labels_;
    std::vector<std::string> names_;
};

/// Mask of pixels whose label equals `label`. Throws UnknownLabelError.
BinaryMask binary_mask(const LabelMask& mask, std::int32_t label);

/// Relabels every pixel carrying one of `ids` to `target` and renormalizes. The
/// merged region keeps `target`'s name.
LabelMask merge_labels(const LabelMask& mask, const std::set<std::int32_t>& ids, std::int32_t target);

/// Splits `label` into its maximal 4-connected components. Components are
/// ordered by the raster position of their first pixel and inserted in place of
/// the original label, so all other labels keep their relative order.
LabelMask split_label(const LabelMask& mask, std::int32_t label);

enum class ExtractionPolicy { MaskedFill, BBoxCrop };

std::string to_string(ExtractionPolicy policy);
ExtractionPolicy parse_extraction_policy(const std::string& name);

/// Subimage for region extraction. Out-of-region pixels are set to the fill
/// value of their channel. `fill` holds one value per channel, or a single value
/// used for all channels.
ImageTensor extract_region(const ImageTensor& image, const BinaryMask& mask, ExtractionPolicy policy,
                           std::span<const double> fill);
ImageTensor extract_region(const ImageTensor& image, const BinaryMask& mask, ExtractionPolicy policy,
                           double fill);

/// Adjoint of extract_region w.r.t. the image: maps a gradient on the extracted
/// subimage back to a full-size gradient (zero outside the mask).
ImageTensor extract_region_adjoint(const ImageTensor& region_grad, const BinaryMask& mask, ExtractionPolicy policy,
                                   std::size_t channels);

}  // namespace region_styler
