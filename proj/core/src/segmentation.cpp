#include "region_styler/segmentation.hpp"

#include "region_styler/detail/json_fields.hpp"
#include "region_styler/error.hpp"
#include "region_styler/util.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace region_styler {

LabelMask segment(const ImageTensor& image, const SegmentationBackend& backend) {
    RawSegmentation raw;
    try {
        raw = backend.run(image);
    } catch (const BackendError&) {
        throw;
    } catch (const std::exception& e) {
        throw BackendError(backend.name(), e.what());
    }
    if (raw.height != image.height() || raw.width != image.width() ||
        raw.labels.size() != image.height() * image.width()) {
        throw BackendError(backend.name(), "segmentation is " + std::to_string(raw.height) + "x" +
                                               std::to_string(raw.width) + " but image is " + image.shape_string());
    }
    return LabelMask::from_raw(raw.height, raw.width, raw.labels, raw.names);
}

RawSegmentation QuadrantSegmenter::run(const ImageTensor& image) const {
    RawSegmentation out{image.height(), image.width(), {}, {}};
    out.labels.resize(image.plane_size());
    const std::size_t mid_y = image.height() / 2;
    const std::size_t mid_x = image.width() / 2;
    for (std::size_t y = 0; y < image.height(); ++y) {
        for (std::size_t x = 0; x < image.width(); ++x) {
            out.labels[y * image.width() + x] = 1 + (y >= mid_y ? 2 : 0) + (x >= mid_x ? 1 : 0);
        }
    }
    out.names = {{1, "top-left"}, {2, "top-right"}, {3, "bottom-left"}, {4, "bottom-right"}};
    return out;
}

RawSegmentation ThresholdSegmenter::run(const ImageTensor& image) const {
    RawSegmentation out{image.height(), image.width(), {}, {{1, "dark"}, {2, "bright"}}};
    out.labels.resize(image.plane_size());
    for (std::size_t i = 0; i < image.plane_size(); ++i) {
        double lum = 0.0;
        for (std::size_t c = 0; c < image.channels(); ++c) {
            lum += image.plane(c)[i];
        }
        lum /= static_cast<double>(image.channels());
        out.labels[i] = lum < threshold_ ? 1 : 2;
    }
    return out;
}

BandSegmenter::BandSegmenter(std::size_t bands, std::vector<std::string> names)
    : bands_(bands), names_(std::move(names)) {
    if (bands_ == 0) {
        throw ValidationError("bands", "band count must be positive");
    }
}

BandSegmenter::BandSegmenter(std::vector<std::size_t> rows, std::vector<std::string> names)
    : bands_(rows.size()), rows_(std::move(rows)), names_(std::move(names)) {
    if (rows_.empty() || std::find(rows_.begin(), rows_.end(), 0) != rows_.end()) {
        throw ValidationError("rows", "band rows must be a nonempty list of positive counts");
    }
}

std::vector<std::size_t> BandSegmenter::even_rows(std::size_t height, std::size_t bands) {
    std::vector<std::size_t> rows(bands, height / bands);
    for (std::size_t i = 0; i < height % bands; ++i) {
        ++rows[i];
    }
    return rows;
}

RawSegmentation BandSegmenter::run(const ImageTensor& image) const {
    const auto rows = rows_.empty() ? even_rows(image.height(), bands_) : rows_;
    if (std::accumulate(rows.begin(), rows.end(), std::size_t{0}) != image.height()) {
        throw ValidationError("rows", "band rows do not sum to the image height " + std::to_string(image.height()));
    }
    if (!names_.empty() && names_.size() != rows.size()) {
        throw ValidationError("names", "expected one name per band");
    }
    RawSegmentation out{image.height(), image.width(), {}, {}};
    out.labels.reserve(image.plane_size());
    for (std::size_t band = 0; band < rows.size(); ++band) {
        out.labels.insert(out.labels.end(), rows[band] * image.width(), static_cast<std::int64_t>(band + 1));
        out.names[static_cast<std::int64_t>(band + 1)] =
            names_.empty() ? "band-" + std::to_string(band + 1) : names_[band];
    }
    return out;
}

KMeansSegmenter::KMeansSegmenter(std::size_t clusters, std::uint64_t seed, std::size_t iterations)
    : clusters_(clusters), seed_(seed), iterations_(iterations) {
    if (clusters_ == 0) {
        throw ValidationError("clusters", "cluster count must be positive");
    }
}

RawSegmentation KMeansSegmenter::run(const ImageTensor& image) const {
    const std::size_t n = image.plane_size();
    const std::size_t c = image.channels();
    const std::size_t k = std::min(clusters_, n);
    const auto pixel = [&](std::size_t i, std::size_t ch) { return image.plane(ch)[i]; };
    const auto dist2 = [&](std::size_t i, const std::vector<double>& center) {
        double d = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double diff = pixel(i, ch) - center[ch];
            d += diff * diff;
        }
        return d;
    };

    // k-means++ seeding
    SeededRng rng(seed_);
    std::vector<std::vector<double>> centers;
    const auto take = [&](std::size_t i) {
        std::vector<double> center(c);
        for (std::size_t ch = 0; ch < c; ++ch) center[ch] = pixel(i, ch);
        centers.push_back(std::move(center));
    };
    take(rng.index(n));
    std::vector<double> nearest(n, std::numeric_limits<double>::max());
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], dist2(i, centers.back()));
            total += nearest[i];
        }
        if (total <= 0.0) {
            break;  // fewer distinct colors than clusters
        }
        double target = rng.uniform() * total;
        std::size_t pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            target -= nearest[i];
            if (target <= 0.0) {
                pick = i;
                break;
            }
        }
        take(pick);
    }

    std::vector<std::int64_t> assignment(n, 0);
    for (std::size_t iter = 0; iter < std::max<std::size_t>(iterations_, 1); ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::int64_t best = 0;
            double best_d = dist2(i, centers[0]);
            for (std::size_t j = 1; j < centers.size(); ++j) {
                const double d = dist2(i, centers[j]);
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<std::int64_t>(j);
                }
            }
            changed = changed || assignment[i] != best;
            assignment[i] = best;
        }
        if (!changed && iter > 0) {
            break;
        }
        std::vector<std::vector<double>> sums(centers.size(), std::vector<double>(c, 0.0));
        std::vector<std::size_t> counts(centers.size(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto j = static_cast<std::size_t>(assignment[i]);
            ++counts[j];
            for (std::size_t ch = 0; ch < c; ++ch) sums[j][ch] += pixel(i, ch);
        }
        for (std::size_t j = 0; j < centers.size(); ++j) {
            if (counts[j] == 0) continue;
            for (std::size_t ch = 0; ch < c; ++ch) centers[j][ch] = sums[j][ch] / static_cast<double>(counts[j]);
        }
    }

    RawSegmentation out{image.height(), image.width(), {}, {}};
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.labels[i] = assignment[i] + 1;
    }
    for (std::size_t j = 0; j < centers.size(); ++j) {
        out.names[static_cast<std::int64_t>(j + 1)] = "cluster-" + std::to_string(j + 1);
    }
    return out;
}

std::vector<std::string> segmentation_backend_names() {
    return {"quadrant", "threshold", "bands", "kmeans", "remote"};
}

std::unique_ptr<SegmentationBackend> make_segmentation_backend(const std::string& name,
                                                               const nlohmann::json& options) {
    const nlohmann::json empty = nlohmann::json::object();
    detail::JsonFields fields(options.is_null() ? empty : options, "segmentation.options");
    std::unique_ptr<SegmentationBackend> backend;
    if (name == "quadrant") {
        backend = std::make_unique<QuadrantSegmenter>();
    } else if (name == "threshold") {
        double threshold = 0.5;
        fields.read("threshold", threshold);
        backend = std::make_unique<ThresholdSegmenter>(threshold);
    } else if (name == "bands") {
        std::size_t bands = 3;
        std::vector<std::size_t> rows;
        std::vector<std::string> names;
        fields.read("bands", bands);
        if (const auto* r = fields.child("rows")) {
            rows = r->get<std::vector<std::size_t>>();
        }
        if (const auto* nm = fields.child("names")) {
            names = nm->get<std::vector<std::string>>();
        }
        backend = rows.empty() ? std::make_unique<BandSegmenter>(bands, names)
                               : std::make_unique<BandSegmenter>(rows, names);
    } else if (name == "kmeans") {
        std::size_t clusters = 4;
        std::uint64_t seed = 1;
        std::size_t iterations = 20;
        fields.read("clusters", clusters);
        fields.read("seed", seed);
        fields.read("iterations", iterations);
        backend = std::make_unique<KMeansSegmenter>(clusters, seed, iterations);
    } else if (name == "remote") {
        const auto url = fields.required<std::string>("url");
        int timeout = 120;
        fields.read("timeout", timeout);
        backend = std::make_unique<RemoteSegmenter>(url, timeout);
    } else {
        std::string valid;
        for (const auto& n : segmentation_backend_names()) valid += (valid.empty() ? "" : ", ") + n;
        throw ValidationError("segmentation.backend", "unknown backend '" + name + "' (valid: " + valid + ")");
    }
    fields.finish();
    return backend;
}

}  // namespace region_styler
