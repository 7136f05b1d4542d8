#include "oracles.hpp"

#include "region_styler/error.hpp"
#include "region_styler/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace region_styler;

namespace {

LabelMask halves(std::size_t h, std::size_t w) {
    std::vector<std::int64_t> raw(h * w);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = (i % w) < w / 2 ? 1 : 2;
    return LabelMask::from_raw(h, w, raw);
}

}  // namespace

TEST(Cosine, StabilizedDefinition) {
    const std::vector<double> a{1.0, 0.0}, b{2.0, 0.0}, z{0.0, 0.0};
    EXPECT_NEAR(stabilized_cosine(a, b, 0.0), 1.0, 1e-15);
    EXPECT_EQ(stabilized_cosine(a, z, 1e-8), 0.0);
    EXPECT_NEAR(stabilized_cosine(a, b, 1.0), 2.0 / 3.0, 1e-15);
}

TEST(DirectionalLoss, IdenticalImagesGiveOne) {
    const MockEncoder enc;
    SeededRng rng(1);
    const auto x = oracle::random_image(rng, 3, 8, 8);
    EXPECT_DOUBLE_EQ(directional_loss(enc, "fire", x, x), 1.0);
}

TEST(DirectionalLoss, RangeAndAnchor) {
    const MockEncoder enc;
    SeededRng rng(2);
    for (int i = 0; i < 20; ++i) {
        const auto x = oracle::random_image(rng, 3, 8, 8), y = oracle::random_image(rng, 3, 8, 8);
        const double v = directional_loss(enc, "oil painting", x, y, AnchorText{"a photo"});
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 2.0);
        EXPECT_NEAR(v, oracle::directional(enc, "oil painting", x, y, "a photo"), 1e-12);
    }
}

TEST(RegionLoss, UnpromptedRegionsContributeNothing) {
    const MockEncoder enc;
    SeededRng rng(3);
    const auto mask = halves(12, 12);
    const auto x = oracle::random_image(rng, 3, 12, 12), y = oracle::random_image(rng, 3, 12, 12);
    const std::vector<RegionSpec> one{{1, "fire", 2.0}};
    const std::vector<RegionSpec> two{{1, "fire", 2.0}, {2, "", 1.0}};
    const auto a = region_directional_loss(enc, one, mask, x, y);
    const auto b = region_directional_loss(enc, two, mask, x, y);
    EXPECT_EQ(a.total, b.total);
    EXPECT_EQ(b.per_region.count(2), 0u);
    EXPECT_NEAR(a.total, oracle::region_directional(enc, one, mask, x, y), 1e-12);
}

TEST(RegionLoss, AreaNormalizationScalesWeights) {
    const MockEncoder enc;
    SeededRng rng(4);
    const auto mask = halves(8, 8);
    const auto x = oracle::random_image(rng, 3, 8, 8), y = oracle::random_image(rng, 3, 8, 8);
    const std::vector<RegionSpec> regions{{1, "fire", 1.0}, {2, "snow", 1.0}};
    const auto plain = region_directional_loss(enc, regions, mask, x, y);
    const auto scaled = region_directional_loss(enc, regions, mask, x, y, {}, 1e-8, ExtractionPolicy::MaskedFill, true);
    EXPECT_NEAR(scaled.total, 0.5 * plain.total, 1e-12);
}

TEST(RegionValidation, Errors) {
    const auto mask = halves(8, 8);
    auto check_field = [&](std::vector<RegionSpec> regions, const std::string& field) {
        try {
            validate_regions(regions, mask);
            ADD_FAILURE() << "expected ValidationError for " << field;
        } catch (const ValidationError& e) {
            EXPECT_EQ(e.field(), field);
        }
    };
    check_field({{3, "fire", 1.0}}, "regions[0].label");
    check_field({{1, "fire", 1.0}, {1, "snow", 1.0}}, "regions[1].label");
    check_field({{1, "fire", -0.5}}, "regions[0].weight");
    check_field({{2, "fire", std::numeric_limits<double>::infinity()}}, "regions[0].weight");
    EXPECT_THROW(validate_regions(std::vector<RegionSpec>{{3, "x", 1.0}}, mask), UnknownLabelError);

    // Prompted regions need at least 16 pixels; unprompted ones may be tiny.
    const auto tiny = LabelMask::from_raw(4, 4, std::vector<std::int64_t>{1, 1, 1, 1, 1, 1, 1, 1,
                                                                          1, 1, 1, 1, 1, 1, 1, 2});
    try {
        validate_regions(std::vector<RegionSpec>{{2, "fire", 1.0}}, tiny);
        ADD_FAILURE() << "expected ValidationError for a one-pixel prompted region";
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.field(), "regions[0].label");
    }
    EXPECT_NO_THROW(validate_regions(std::vector<RegionSpec>{{2, "", 1.0}}, tiny));
}

TEST(Tv, MatchesEnumerationOracle) {
    SeededRng rng(5);
    for (int i = 0; i < 10; ++i) {
        const auto y = oracle::random_image(rng, 1 + 2 * (i % 2), 1 + rng.index(9), 1 + rng.index(9));
        EXPECT_NEAR(tv_loss(y), oracle::tv(y), 1e-14);
    }
    EXPECT_EQ(tv_loss(ImageTensor(3, 1, 1, 0.7)), 0.0);
}

TEST(Tv, GradientMatchesFiniteDifferences) {
    SeededRng rng(6);
    const auto y = oracle::random_image(rng, 3, 5, 6);
    const auto g = tv_loss_gradient(y);
    for (std::size_t i = 0; i < y.size(); i += 3) {
        EXPECT_NEAR(g.data()[i], oracle::central_difference(tv_loss, y, i, 1e-7), 1e-6);
    }
}

TEST(ContentLoss, ZeroAtXAndWeighted) {
    const MockEncoder enc;
    SeededRng rng(7);
    const auto x = oracle::random_image(rng, 3, 8, 8);
    EXPECT_EQ(content_loss(enc, x, x), 0.0);
    const ImageTensor y(3, 8, 8, 0.5);
    const double pixel = content_loss(enc, y, x, 0.0, 1.0);
    double mse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) mse += (y.data()[i] - x.data()[i]) * (y.data()[i] - x.data()[i]);
    EXPECT_NEAR(pixel, mse / static_cast<double>(x.size()), 1e-14);
    EXPECT_NEAR(content_loss(enc, y, x, 2.0, 3.0),
                2.0 * content_loss(enc, y, x, 1.0, 0.0) + 3.0 * pixel, 1e-12);
}

TEST(TotalLoss, CombinesTerms) {
    const MockEncoder enc;
    SeededRng rng(8);
    const auto mask = halves(8, 8);
    const auto x = oracle::random_image(rng, 3, 8, 8), y = oracle::random_image(rng, 3, 8, 8);
    const std::vector<RegionSpec> regions{{1, "fire", 1.0}, {2, "snow", 0.5}};
    LossConfig config;
    config.lambda_tv = 0.3;
    config.lambda_content = 0.7;
    const auto b = total_loss(enc, regions, mask, x, y, config);
    EXPECT_NEAR(b.total, b.dir + 0.3 * b.tv + 0.7 * b.content, 1e-14);
    EXPECT_NEAR(b.tv, tv_loss(y), 1e-15);
    EXPECT_NEAR(b.dir, oracle::region_directional(enc, regions, mask, x, y), 1e-12);
    const StyleObjective objective(enc, x, mask, regions, config);
    EXPECT_NEAR(objective.evaluate(y).total, b.total, 1e-12);
}

TEST(StyleObjective, GradientMatchesFiniteDifferencesForAllPolicies) {
    const MockEncoder enc;
    SeededRng rng(9);
    const auto x = oracle::random_image(rng, 3, 10, 10, 0.2, 0.8);
    auto y = x;
    for (auto& v : y.data()) v += rng.uniform(-0.1, 0.1);
    const auto mask = oracle::random_partition(rng, 10, 10, 3);
    std::vector<RegionSpec> regions;
    const auto counts = mask.pixel_counts();
    for (std::int32_t l = 1; l <= 3; ++l) {
        if (counts[l - 1] >= kMinPromptedRegionPixels) regions.push_back({l, l == 1 ? "fire" : "ocean waves", 1.0});
    }
    ASSERT_FALSE(regions.empty());
    for (const auto policy : {ExtractionPolicy::MaskedFill, ExtractionPolicy::BBoxCrop}) {
        for (const bool area : {false, true}) {
            LossConfig config;
            config.lambda_tv = 0.0;  // TV is not differentiable at ties
            config.extraction = policy;
            config.area_normalize = area;
            const StyleObjective objective(enc, x, mask, regions, config);
            ImageTensor g;
            objective.evaluate(y, &g);
            const auto f = [&](const ImageTensor& img) { return objective.evaluate(img).total; };
            for (std::size_t i = 0; i < y.size(); i += 7) {
                const double n = oracle::central_difference(f, y, i, 1e-5);
                EXPECT_NEAR(g.data()[i], n, 1e-6 + 1e-4 * std::fabs(n));
            }
        }
    }
}

TEST(StyleObjective, GlobalModeUsesWholeImage) {
    const MockEncoder enc;
    SeededRng rng(10);
    const auto x = oracle::random_image(rng, 3, 8, 8), y = oracle::random_image(rng, 3, 8, 8);
    const auto mask = halves(8, 8);
    LossConfig config;
    config.mode = DirectionalMode::Global;
    const StyleObjective objective(enc, x, mask, {{1, "fire", 1.0}}, config);
    EXPECT_NEAR(objective.evaluate(y).dir, directional_loss(enc, "fire", x, y), 1e-12);
    EXPECT_THROW(StyleObjective(enc, x, mask, {{1, "fire", 1.0}, {2, "snow", 1.0}}, config), ValidationError);
}

TEST(LossConfig, Validation) {
    LossConfig c;
    EXPECT_NO_THROW(c.validate());
    c.lambda_tv = -1.0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.eps = -1e-8;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.anchor_text = "";
    EXPECT_THROW(c.validate(), ValidationError);
    EXPECT_EQ(parse_directional_mode(to_string(DirectionalMode::Global)), DirectionalMode::Global);
    EXPECT_THROW(parse_directional_mode("local"), ValidationError);
}
