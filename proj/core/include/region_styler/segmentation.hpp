#pragma once

#include "region_styler/image.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace region_styler {

/// Backend output before normalization: arbitrary integer labels, optionally
/// named.
struct RawSegmentation {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::int64_t> labels;
    std::map<std::int64_t, std::string> names;
};

/// Semantic segmentation network S. A backend instance is used by one caller
/// at a time.
class SegmentationBackend {
public:
    virtual ~SegmentationBackend() = default;
    virtual std::string name() const = 0;
    virtual RawSegmentation run(const ImageTensor& image) const = 0;
};

/// M = S(X): runs the backend, checks the output geometry and renormalizes the
/// labels to {1..R}. Backend failures are rethrown as BackendError carrying the
/// backend name.
LabelMask segment(const ImageTensor& image, const SegmentationBackend& backend);

/// Four quadrants labeled top-left=1, top-right=2, bottom-left=3,
/// bottom-right=4; the split row/column is floor(dim/2).
class QuadrantSegmenter final : public SegmentationBackend {
public:
    std::string name() const override { return "quadrant"; }
    RawSegmentation run(const ImageTensor& image) const override;
};

/// Two classes by luminance (mean over channels): dark (< threshold) and
/// bright. A constant image yields a single region.
class ThresholdSegmenter final : public SegmentationBackend {
public:
    explicit ThresholdSegmenter(double threshold = 0.5) : threshold_(threshold) {}
    std::string name() const override { return "threshold"; }
    RawSegmentation run(const ImageTensor& image) const override;

private:
    double threshold_;
};

/// Horizontal bands. Either explicit row counts (which must sum to the image
/// height) or a band count, in which case rows are split as evenly as possible
/// with the remainder going to the topmost bands (16 rows, 3 bands -> 6/5/5).
class BandSegmenter final : public SegmentationBackend {
public:
    explicit BandSegmenter(std::size_t bands = 3, std::vector<std::string> names = {});
    explicit BandSegmenter(std::vector<std::size_t> rows, std::vector<std::string> names = {});

    std::string name() const override { return "bands"; }
    RawSegmentation run(const ImageTensor& image) const override;

    static std::vector<std::size_t> even_rows(std::size_t height, std::size_t bands);

private:
    std::size_t bands_ = 0;
    std::vector<std::size_t> rows_;
    std::vector<std::string> names_;
};

/// Color k-means (Lloyd iterations from seeded k-means++ initialization) followed by
/// labeling each pixel with its cluster.
class KMeansSegmenter final : public SegmentationBackend {
public:
    KMeansSegmenter(std::size_t clusters = 4, std::uint64_t seed = 1, std::size_t iterations = 20);
    std::string name() const override { return "kmeans"; }
    RawSegmentation run(const ImageTensor& image) const override;

private:
    std::size_t clusters_;
    std::uint64_t seed_;
    std::size_t iterations_;
};

/// Adapter for an external segmentation model.
///   POST {base}/v1/segment {"shape": [C,H,W], "data": [float]}
///     -> {"height": int, "width": int, "labels": [int], "names": {"<label>": str}}
class RemoteSegmenter final : public SegmentationBackend {
public:
    explicit RemoteSegmenter(std::string base_url, int timeout_seconds = 120);
    std::string name() const override { return "remote"; }
    RawSegmentation run(const ImageTensor& image) const override;

private:
    std::string base_url_;
    int timeout_seconds_;
};

std::vector<std::string> segmentation_backend_names();

/// Backend registry. `options` is a JSON object with backend-specific keys:
/// threshold {"threshold"}, bands {"bands" | "rows", "names"},
/// kmeans {"clusters", "seed", "iterations"}, remote {"url", "timeout"}.
/// Unknown names or option keys raise ValidationError.
std::unique_ptr<SegmentationBackend> make_segmentation_backend(const std::string& name,
                                                               const nlohmann::json& options);

}  // namespace region_styler
