#include "oracles.hpp"

#include "region_styler/error.hpp"
#include "region_styler/segmentation.hpp"

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

using namespace region_styler;

TEST(Segmentation, QuadrantsSplitAtFloorHalf) {
    const auto mask = segment(ImageTensor(3, 5, 7, 0.5), QuadrantSegmenter{});
    ASSERT_EQ(mask.region_count(), 4u);
    EXPECT_EQ(mask.at(1, 2), 1);
    EXPECT_EQ(mask.at(1, 3), 2);
    EXPECT_EQ(mask.at(2, 2), 3);
    EXPECT_EQ(mask.at(4, 6), 4);
    EXPECT_EQ(mask.name(2), "top-right");
    EXPECT_EQ(mask.pixel_counts(), (std::vector<std::size_t>{6, 8, 9, 12}));
}

TEST(Segmentation, QuadrantsOnSingleRowCollapse) {
    const auto mask = segment(ImageTensor(1, 1, 4, 0.5), QuadrantSegmenter{});
    // Only the bottom row exists, so the labels renormalize to two regions.
    EXPECT_EQ(mask.region_count(), 2u);
    EXPECT_EQ(mask.name(1), "bottom-left");
}

TEST(Segmentation, ThresholdByLuminance) {
    ImageTensor img(3, 2, 2, 0.2);
    for (std::size_t c = 0; c < 3; ++c) img.at(c, 1, 1) = 0.9;
    const auto mask = segment(img, ThresholdSegmenter(0.5));
    EXPECT_EQ(mask.region_count(), 2u);
    EXPECT_EQ(mask.name(mask.at(1, 1)), "bright");
    EXPECT_EQ(segment(ImageTensor(1, 3, 3, 0.1), ThresholdSegmenter(0.5)).region_count(), 1u);
}

TEST(Segmentation, EvenBandsGiveRemainderToTop) {
    EXPECT_EQ(BandSegmenter::even_rows(16, 3), (std::vector<std::size_t>{6, 5, 5}));
    const auto mask = segment(ImageTensor(1, 16, 2, 0.0), BandSegmenter(3, {"sky", "building", "object"}));
    EXPECT_EQ(mask.pixel_counts(), (std::vector<std::size_t>{12, 10, 10}));
    EXPECT_EQ(mask.name(3), "object");
}

TEST(Segmentation, ExplicitRowsMustCoverImage) {
    EXPECT_THROW(segment(ImageTensor(1, 4, 2, 0.0), BandSegmenter(std::vector<std::size_t>{1, 2})), Error);
    EXPECT_EQ(segment(ImageTensor(1, 4, 2, 0.0), BandSegmenter(std::vector<std::size_t>{1, 3})).pixel_counts(),
              (std::vector<std::size_t>{2, 6}));
}

TEST(Segmentation, KMeansIsDeterministicAndSeparatesColors) {
    ImageTensor img(3, 6, 6, 0.1);
    for (std::size_t y = 0; y < 6; ++y) {
        for (std::size_t x = 3; x < 6; ++x) img.at(0, y, x) = 0.9;
    }
    const KMeansSegmenter km(2, 3);
    const auto a = segment(img, km);
    EXPECT_EQ(a, segment(img, km));
    EXPECT_EQ(a.region_count(), 2u);
    EXPECT_NE(a.at(0, 0), a.at(0, 5));
    EXPECT_EQ(a.at(0, 0), a.at(5, 2));
}

TEST(Segmentation, RegistryValidatesNamesAndOptions) {
    using nlohmann::json;
    for (const auto& name : segmentation_backend_names()) {
        if (name == "remote") continue;
        EXPECT_NO_THROW(make_segmentation_backend(name, json::object())) << name;
    }
    EXPECT_EQ(make_segmentation_backend("bands", json{{"bands", 2}})->name(), "bands");
    EXPECT_THROW(make_segmentation_backend("sam", json::object()), ValidationError);
    EXPECT_THROW(make_segmentation_backend("threshold", json{{"level", 0.3}}), ValidationError);
}

namespace {
class BrokenSegmenter final : public SegmentationBackend {
public:
    std::string name() const override { return "broken"; }
    RawSegmentation run(const ImageTensor&) const override { return {2, 2, {1, 1, 1, 1}, {}}; }
};
}  // namespace

TEST(Segmentation, GeometryMismatchIsBackendError) {
    try {
        segment(ImageTensor(1, 3, 3, 0.0), BrokenSegmenter{});
        FAIL() << "expected BackendError";
    } catch (const BackendError& e) {
        EXPECT_EQ(e.backend(), "broken");
    }
}
