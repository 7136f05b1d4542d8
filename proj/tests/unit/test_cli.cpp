#include "temp_dir.hpp"

#include "region_styler/cli.hpp"
#include "region_styler/evaluation.hpp"
#include "region_styler/image_io.hpp"
#include "region_styler/statespace.hpp"

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <sstream>

using namespace region_styler;
using nlohmann::json;
using testing_support::TempDir;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "region-styler");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        ASSERT_EQ(cli({"make-dataset", "--out", (tmp / "data").string(), "--count", "2"}).code, 0);
        image = (tmp / "data" / "scene-000" / "image.png").string();
        mask = (tmp / "data" / "scene-000" / "mask.png").string();
        prompts = (tmp / "data" / "scene-000" / "prompts.json").string();
        write_text_file(tmp / "fast.json", R"({"optimizer": {"steps": 10}})");
    }

    TempDir tmp{"rs-cli"};
    std::string image, mask, prompts;
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitOne) {
    EXPECT_EQ(cli({}).code, 1);
    EXPECT_EQ(cli({"paint"}).code, 1);
    EXPECT_EQ(cli({"stylize", "--image", image}).code, 1);
    EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(CliTest, SegmentWritesMaskAndTable) {
    const auto out = (tmp / "m.png").string();
    const auto r = cli({"segment", "--image", image, "--backend", "bands", "--backend-options", R"({"bands": 3})",
                        "--out", out, "--merge", "1,2->1", "--split", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("band-1"), std::string::npos) << r.out;
    EXPECT_EQ(load_mask(out).region_count(), 2u);
    EXPECT_EQ(cli({"segment", "--image", image, "--out", out, "--merge", "1,2"}).code, 1);
    EXPECT_EQ(cli({"segment", "--image", image, "--out", out, "--backend", "sam"}).code, 1);
    EXPECT_EQ(cli({"segment", "--image", (tmp / "none.png").string(), "--out", out}).code, 1);
}

TEST_F(CliTest, StylizeWritesOutputs) {
    const auto out = tmp / "styled";
    const auto r = cli({"stylize", "--image", image, "--mask", mask, "--prompts", prompts, "--config",
                        (tmp / "fast.json").string(), "--out", out.string(), "--trace"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(load_image(out / "output.png").width(), 16u);
    const auto summary = json::parse(read_text_file(out / "summary.json"));
    EXPECT_EQ(summary.at("regions").size(), 3u);
    EXPECT_EQ(summary.at("config").at("optimizer").at("steps"), 10);
    const auto csv = read_text_file(out / "trace.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,dir,tv,content,total,region_1,region_2,region_3");
}

TEST_F(CliTest, StylizeValidationErrors) {
    write_text_file(tmp / "bad.json", R"({"regions": [{"label": 9, "prompt": "fire"}]})");
    auto r = cli({"stylize", "--image", image, "--mask", mask, "--prompts", (tmp / "bad.json").string(), "--out",
                  (tmp / "o").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("regions[0].label"), std::string::npos) << r.err;

    write_text_file(tmp / "cfg.json", R"({"optimizer": {"learning_rate": -1}})");
    r = cli({"stylize", "--image", image, "--mask", mask, "--prompts", prompts, "--config",
             (tmp / "cfg.json").string(), "--out", (tmp / "o").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("optimizer.learning_rate"), std::string::npos) << r.err;

    save_mask(tmp / "small.png", LabelMask(4, 4, std::vector<std::int32_t>(16, 1)));
    r = cli({"stylize", "--image", image, "--mask", (tmp / "small.png").string(), "--prompts", prompts, "--out",
             (tmp / "o").string()});
    EXPECT_EQ(r.code, 1);
}

TEST_F(CliTest, EvalWritesReport) {
    const auto r = cli({"eval", "--dataset", (tmp / "data").string(), "--variants", "global,full", "--config",
                        (tmp / "fast.json").string(), "--out", (tmp / "ev").string(), "--run-id", "t"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto md = read_text_file(tmp / "ev" / "reports" / "t" / "report.md");
    EXPECT_NE(md.find("| global |"), std::string::npos);
    EXPECT_NE(md.find("| full |"), std::string::npos);
    const auto bad = cli({"eval", "--dataset", (tmp / "data").string(), "--variants", "local", "--out",
                          (tmp / "ev").string()});
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.err.find("seg-single"), std::string::npos) << bad.err;
}

TEST_F(CliTest, FitAutoencoderWritesCheckpoint) {
    const auto out = tmp / "ae.bin";
    const auto r = cli({"fit-autoencoder", "--out", out.string(), "--training-images", "2", "--reference", image});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_GT(load_autoencoder_checkpoint(out).tolerance, 0.0);
    write_text_file(tmp / "ae.json", json{{"state", {{"backend", "conv-autoencoder"}, {"checkpoint", out.string()}}},
                                          {"optimizer", {{"steps", 3}}}}
                                         .dump());
    EXPECT_EQ(cli({"stylize", "--image", image, "--mask", mask, "--prompts", prompts, "--config",
                   (tmp / "ae.json").string(), "--out", (tmp / "ae-out").string()})
                  .code,
              0);
}
