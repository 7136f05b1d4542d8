#include "oracles.hpp"
#include "temp_dir.hpp"

#include "region_styler/error.hpp"
#include "region_styler/evaluation.hpp"
#include "region_styler/image_io.hpp"

#include <gtest/gtest.h>

using namespace region_styler;
using nlohmann::json;
using testing_support::TempDir;

namespace {

StylizationConfig quick() {
    StylizationConfig c;
    c.steps = 15;
    return c;
}

}  // namespace

TEST(RegionSimilarity, MatchesDirectComputation) {
    const MockEncoder enc;
    SeededRng rng(1);
    const auto y = oracle::random_image(rng, 3, 12, 12);
    const auto mask = oracle::random_partition(rng, 12, 12, 2);
    const std::vector<RegionSpec> regions{{1, "fire", 1.0}, {2, "", 1.0}};
    const auto scores = region_similarity(enc, y, mask, regions);
    ASSERT_EQ(scores.size(), 1u);
    EXPECT_EQ(scores[0].label, 1);
    const auto fill = oracle::channel_mean(y);
    const auto want = oracle::cosine(oracle::to_vec(enc.embed_image(oracle::masked_fill(y, mask, 1, fill))),
                                     oracle::to_vec(enc.embed_text("fire")), 1e-8);
    EXPECT_NEAR(scores[0].similarity, want, 1e-12);
    EXPECT_THROW(region_similarity(enc, y, mask, {{2, "", 1.0}}), ValidationError);
}

TEST(PromptTable, ParseAndResolve) {
    const auto table = parse_prompt_table(json::parse(R"({"regions": [
        {"label": "sky", "prompt": "stormy sky"},
        {"label": 2, "prompt": "gothic cathedral", "weight": 0.5}]})"));
    ASSERT_EQ(table.size(), 2u);
    EXPECT_EQ(table[1].label, "2");
    const auto mask = LabelMask::from_raw(2, 2, std::vector<std::int64_t>{1, 1, 2, 2}, {{1, "sky"}, {2, "2x"}});
    const auto regions = resolve_prompts(table, mask);
    EXPECT_EQ(regions[0].label, 1);
    EXPECT_EQ(regions[1].label, 2);
    EXPECT_EQ(regions[1].weight, 0.5);
    EXPECT_EQ(parse_prompt_table(prompt_table_to_json(table)).size(), 2u);

    EXPECT_THROW(resolve_prompts(parse_prompt_table(json::parse(R"({"regions":[{"label":"sea","prompt":"x"}]})")), mask),
                 ValidationError);
    EXPECT_THROW(resolve_prompts(parse_prompt_table(json::parse(R"({"regions":[{"label":7,"prompt":"x"}]})")), mask),
                 UnknownLabelError);
    EXPECT_THROW(parse_prompt_table(json::parse(R"({"regions":[{"label":1,"prompt":"x","weight":-2}]})")),
                 ValidationError);
    EXPECT_THROW(parse_prompt_table(json::parse(R"({"items":[]})")), ValidationError);
}

TEST(Dataset, SyntheticIsDeterministic) {
    const auto a = synthetic_dataset(3, 16, 4), b = synthetic_dataset(3, 16, 4);
    ASSERT_EQ(a.items.size(), 3u);
    EXPECT_EQ(a.items[0].name, "scene-000");
    EXPECT_EQ(a.items[1].image, b.items[1].image);
    ASSERT_TRUE(a.items[0].mask.has_value());
    EXPECT_EQ(a.items[0].mask->names(), (std::vector<std::string>{"sky", "building", "object"}));
    EXPECT_NE(a.items[0].image, synthetic_dataset(3, 16, 5).items[0].image);
}

TEST(Dataset, WriteIngestRoundTripWithWarnings) {
    TempDir tmp("rs-dataset");
    const auto data = synthetic_dataset(3);
    write_dataset(data, tmp.path());
    std::filesystem::remove(tmp / "scene-001" / "prompts.json");
    // Mask of the wrong size for scene-002.
    save_mask(tmp / "scene-002" / "mask.png", LabelMask(4, 4, std::vector<std::int32_t>(16, 1)));
    const auto back = ingest_dataset(tmp.path());
    ASSERT_EQ(back.items.size(), 1u);
    EXPECT_EQ(back.items[0].image, decode_image(encode_png(data.items[0].image)));
    EXPECT_EQ(*back.items[0].mask, *data.items[0].mask);
    EXPECT_EQ(back.warnings.size(), 2u);

    write_text_file(tmp / "scene-000" / "prompts.json", "{broken");
    EXPECT_THROW(ingest_dataset(tmp.path()), ValidationError);
    EXPECT_THROW(ingest_dataset(tmp / "missing"), FileNotFoundError);
    TempDir empty("rs-empty");
    EXPECT_THROW(ingest_dataset(empty.path()), ValidationError);
}

TEST(Ablation, VariantNames) {
    EXPECT_EQ(parse_ablation_variant("seg-single"), AblationVariant::SegmentationSinglePrompt);
    EXPECT_EQ(parse_ablation_variants("global,full").size(), 2u);
    try {
        parse_ablation_variants("global,local");
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("full"), std::string::npos);
    }
    EXPECT_EQ(concatenated_prompt({{1, "a", 1.0}, {2, "", 1.0}, {3, "b", 1.0}}), "a, b");
}

TEST(Ablation, RowsMetaAndDeterminism) {
    const MockEncoder enc;
    const IdentityStateBackend state;
    const auto data = synthetic_dataset(2);
    const auto a = run_ablation(data, all_ablation_variants(), {enc, state, nullptr}, quick());
    EXPECT_EQ(a.rows.size(), 2u * 3u * 3u);
    EXPECT_EQ(a.meta.at("items"), json({"scene-000", "scene-001"}));
    EXPECT_EQ(a.meta.at("encoder"), "mock");
    const auto b = run_ablation(data, all_ablation_variants(), {enc, state, nullptr}, quick());
    EXPECT_EQ(render_report(a, ReportFormat::Csv), render_report(b, ReportFormat::Csv));
    EXPECT_EQ(default_run_id(a), default_run_id(b));
    EXPECT_EQ(default_run_id(a).size(), 16u);
    EXPECT_THROW(a.aggregate("nonexistent"), ValidationError);
}

TEST(Ablation, ItemsWithoutMasksUseSegmentation) {
    const MockEncoder enc;
    const IdentityStateBackend state;
    auto data = synthetic_dataset(1);
    data.items[0].mask.reset();
    data.items[0].prompts = {{"1", "fire", 1.0}, {"4", "snow", 1.0}};
    EXPECT_THROW(run_ablation(data, {AblationVariant::Full}, {enc, state, nullptr}, quick()), ValidationError);
    const QuadrantSegmenter quadrants;
    const auto report = run_ablation(data, {AblationVariant::Full}, {enc, state, &quadrants}, quick());
    EXPECT_EQ(report.rows.size(), 2u);
    EXPECT_EQ(report.rows[1].region, "bottom-right");
}

TEST(Report, MarkdownAndCsvLayout) {
    EvalReport report;
    report.rows = {{"full", "a", "sky", 1, "storm, rain", 0.5},
                   {"full", "b", "sky", 1, "storm", 0.25},
                   {"global", "a", "sky", 1, "x|y", -0.001}};
    const auto md = render_report(report, "markdown");
    EXPECT_NE(md.find("| Method | Sky Region |\n|---|---|\n| full | 0.38 |\n| global | 0.00 |"), std::string::npos) << md;
    EXPECT_NE(md.find("| Method Variant | Region Similarity | User Pref (%) |"), std::string::npos);
    EXPECT_NE(md.find("x\\|y"), std::string::npos);
    const auto csv = render_report(report, "csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "section,method,image,region,prompt,value");
    EXPECT_NE(csv.find("score,full,a,sky,\"storm, rain\",0.50\n"), std::string::npos) << csv;
    EXPECT_NE(csv.find("ablation,global,,,,0.00\n"), std::string::npos);
    EXPECT_THROW(render_report(report, "html"), ValidationError);
}

TEST(Report, WriteReportFiles) {
    TempDir tmp("rs-report");
    EvalReport report;
    report.rows = {{"full", "a", "sky", 1, "storm", 0.5}};
    report.meta = {{"seed", 0}};
    const auto dir = write_report(report, tmp.path(), "r1");
    EXPECT_EQ(dir, tmp / "reports" / "r1");
    const auto meta = json::parse(read_text_file(dir / "meta.json"));
    EXPECT_EQ(meta.at("run_id"), "r1");
    EXPECT_DOUBLE_EQ(meta.at("aggregates").at("full").get<double>(), 0.5);
    EXPECT_EQ(read_text_file(dir / "report.csv"), render_report(report, ReportFormat::Csv));
    EXPECT_THROW(write_report(report, tmp.path(), "../x"), ValidationError);
}
