#include "temp_dir.hpp"

#include "region_styler/evaluation.hpp"
#include "region_styler/image_io.hpp"
#include "region_styler/service.hpp"
#include "region_styler/util.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <thread>

using namespace region_styler;
using nlohmann::json;
using testing_support::TempDir;

namespace {

struct Reply {
    int status;
    json body;
};

Reply call(Service& s, const std::string& method, const std::string& target, const std::string& body = "") {
    const auto r = s.handle(method, target, body);
    return {r.status, json::parse(r.body)};
}

Reply post(Service& s, const std::string& target, const json& body) { return call(s, "POST", target, body.dump()); }

ServiceConfig config_for(const std::filesystem::path& root, std::size_t workers = 1, std::size_t queued = 4) {
    ServiceConfig c;
    c.storage_root = root;
    c.max_concurrent_jobs = workers;
    c.max_queued_jobs = queued;
    return c;
}

std::string upload(Service& s) {
    const auto png = encode_png(synthetic_dataset(1).items[0].image);
    const auto r = call(s, "POST", "/v1/images", std::string(png.begin(), png.end()));
    EXPECT_EQ(r.status, 201);
    return r.body.at("image_id");
}

json wait_terminal(Service& s, const std::string& job) {
    for (int i = 0; i < 20000; ++i) {
        const auto r = call(s, "GET", "/v1/jobs/" + job);
        const auto state = r.body.at("state").get<std::string>();
        if (state == "done" || state == "failed") return r.body;
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    ADD_FAILURE() << "job did not finish";
    return {};
}

const json kRegions = json::array({{{"label", 1}, {"prompt", "fire"}}, {{"label", 4}, {"prompt", "snow"}}});

}  // namespace

TEST(Service, HealthAndUnknownRoutes) {
    TempDir tmp("rs-svc");
    Service s(config_for(tmp.path()));
    EXPECT_EQ(call(s, "GET", "/v1/healthz").status, 200);
    EXPECT_EQ(call(s, "GET", "/v2/healthz").status, 404);
    EXPECT_EQ(call(s, "DELETE", "/v1/jobs").status, 404);
}

TEST(Service, ImagesAndMasks) {
    TempDir tmp("rs-svc");
    Service s(config_for(tmp.path()));
    const auto image_id = upload(s);
    const auto image = call(s, "GET", "/v1/images/" + image_id);
    EXPECT_EQ(image.body.at("width"), 16);
    EXPECT_EQ(image.body.at("channels"), 3);
    EXPECT_EQ(call(s, "POST", "/v1/images", "garbage").status, 400);

    const auto seg = post(s, "/v1/images/" + image_id + "/segment", {{"backend", "bands"}, {"options", {{"bands", 2}}}});
    ASSERT_EQ(seg.status, 201);
    EXPECT_EQ(seg.body.at("region_count"), 2);
    EXPECT_EQ(seg.body.at("labels").at(0).at("pixels"), 128);
    const auto mask_id = seg.body.at("mask_id").get<std::string>();
    const auto mask = call(s, "GET", "/v1/masks/" + mask_id);
    EXPECT_EQ(decode_mask_png(base64_decode(mask.body.at("mask_png_base64").get<std::string>())).region_count(), 2u);

    EXPECT_EQ(post(s, "/v1/images/" + image_id + "/segment", {{"backend", "nope"}}).status, 400);
    EXPECT_EQ(post(s, "/v1/masks/" + mask_id + "/merge", {{"ids", {1, 2}}, {"target", 1}}).body.at("region_count"), 1);
    EXPECT_EQ(post(s, "/v1/masks/" + mask_id + "/merge", {{"ids", {1, 9}}, {"target", 1}}).status, 400);
    EXPECT_EQ(post(s, "/v1/masks/" + mask_id + "/split", {{"label", 1}}).status, 201);
    EXPECT_EQ(post(s, "/v1/masks/" + mask_id + "/split", {{"label", "one"}}).status, 400);
}

TEST(Service, JobLifecycleAndErrors) {
    TempDir tmp("rs-svc");
    Service s(config_for(tmp.path()));
    const auto image_id = upload(s);
    const auto mask_id =
        post(s, "/v1/images/" + image_id + "/segment", json::object()).body.at("mask_id").get<std::string>();

    const auto bad_label = post(s, "/v1/jobs", {{"image_id", image_id}, {"mask_id", mask_id},
                                                {"regions", {{{"label", 9}, {"prompt", "fire"}}}}});
    EXPECT_EQ(bad_label.status, 400);
    EXPECT_EQ(bad_label.body.at("fields").at(0).at("field"), "regions[0].label");
    const auto bad_config = post(s, "/v1/jobs", {{"image_id", image_id}, {"mask_id", mask_id}, {"regions", kRegions},
                                                 {"config", {{"optimizer", {{"steps", 0}}}}}});
    EXPECT_EQ(bad_config.status, 400);
    EXPECT_EQ(bad_config.body.at("fields").at(0).at("field"), "config.optimizer.steps");
    EXPECT_EQ(post(s, "/v1/jobs", {{"image_id", "img-x"}, {"mask_id", mask_id}, {"regions", kRegions}}).status, 404);
    EXPECT_EQ(post(s, "/v1/jobs", {{"mask_id", mask_id}, {"regions", kRegions}}).status, 400);

    const auto submitted = post(s, "/v1/jobs", {{"image_id", image_id}, {"mask_id", mask_id}, {"regions", kRegions},
                                                {"config", {{"optimizer", {{"steps", 20}}}}}});
    ASSERT_EQ(submitted.status, 202);
    const auto job = submitted.body.at("job_id").get<std::string>();
    EXPECT_EQ(job, "job-000001");
    const auto status = wait_terminal(s, job);
    EXPECT_EQ(status.at("state"), "done");
    EXPECT_EQ(status.at("progress").at("total"), 20);
    EXPECT_FALSE(status.at("finished_at").get<std::string>().empty());

    const auto result = call(s, "GET", "/v1/jobs/" + job + "/result");
    ASSERT_EQ(result.status, 200);
    const auto png = base64_decode(result.body.at("output_png_base64").get<std::string>());
    EXPECT_EQ(decode_image(png).width(), 16u);
    EXPECT_EQ(result.body.at("summary").at("regions").size(), 2u);
    EXPECT_TRUE(std::filesystem::exists(tmp / "results" / (result.body.at("output_sha").get<std::string>() + ".png")));
}

TEST(Service, FailedJobReportsError) {
    TempDir tmp("rs-svc");
    Service s(config_for(tmp.path()));
    const auto image_id = upload(s);
    const auto mask_id =
        post(s, "/v1/images/" + image_id + "/segment", json::object()).body.at("mask_id").get<std::string>();
    // Global mode with two prompted regions is rejected when the job runs.
    const auto submitted = post(s, "/v1/jobs", {{"image_id", image_id}, {"mask_id", mask_id}, {"regions", kRegions},
                                                {"config", {{"loss", {{"mode", "global"}}}}}});
    ASSERT_EQ(submitted.status, 202);
    const auto status = wait_terminal(s, submitted.body.at("job_id"));
    EXPECT_EQ(status.at("state"), "failed");
    EXPECT_FALSE(status.at("error").get<std::string>().empty());
    const auto result = call(s, "GET", "/v1/jobs/" + status.at("job_id").get<std::string>() + "/result");
    EXPECT_EQ(result.status, 409);
    EXPECT_EQ(result.body.at("state"), "failed");
}

TEST(Service, RestartKeepsDataAndFailsInterruptedJobs) {
    TempDir tmp("rs-svc");
    std::string image_id, mask_id, queued_job;
    {
        Service s(config_for(tmp.path(), 1, 4));
        image_id = upload(s);
        mask_id = post(s, "/v1/images/" + image_id + "/segment", json::object()).body.at("mask_id");
        const json long_job = {{"image_id", image_id}, {"mask_id", mask_id}, {"regions", kRegions},
                               {"config", {{"optimizer", {{"steps", 100000}, {"early_stop_patience", 100000}}}}}};
        ASSERT_EQ(post(s, "/v1/jobs", long_job).status, 202);
        queued_job = post(s, "/v1/jobs", long_job).body.at("job_id");
        EXPECT_EQ(call(s, "GET", "/v1/jobs/" + queued_job).body.at("state"), "queued");
    }
    Service s(config_for(tmp.path()));
    EXPECT_EQ(call(s, "GET", "/v1/images/" + image_id).status, 200);
    EXPECT_EQ(call(s, "GET", "/v1/masks/" + mask_id).status, 200);
    const auto status = call(s, "GET", "/v1/jobs/" + queued_job).body;
    EXPECT_EQ(status.at("state"), "failed");
    EXPECT_NE(status.at("error").get<std::string>().find("restart"), std::string::npos);
    // Job ids continue after a restart.
    const auto next = post(s, "/v1/jobs", {{"image_id", image_id}, {"mask_id", mask_id}, {"regions", kRegions},
                                           {"config", {{"optimizer", {{"steps", 2}}}}}});
    EXPECT_EQ(next.body.at("job_id"), "job-000003");
    wait_terminal(s, next.body.at("job_id"));
}

TEST(Service, EvaluationEndpoint) {
    TempDir tmp("rs-svc");
    write_dataset(synthetic_dataset(1), tmp / "datasets" / "tiny");
    Service s(config_for(tmp.path()));
    const auto r = post(s, "/v1/evaluations", {{"dataset", "tiny"}, {"variants", "full"},
                                               {"config", {{"optimizer", {{"steps", 5}}}}}});
    ASSERT_EQ(r.status, 200) << r.body.dump();
    EXPECT_TRUE(r.body.at("aggregates").contains("full"));
    EXPECT_TRUE(std::filesystem::exists(tmp / "reports" / r.body.at("run_id").get<std::string>() / "report.csv"));
    EXPECT_EQ(post(s, "/v1/evaluations", {{"dataset", "../etc"}}).status, 400);
    EXPECT_EQ(post(s, "/v1/evaluations", {{"dataset", "absent"}}).status, 404);
}

TEST(ServiceConfig, Validation) {
    ServiceConfig c;
    c.storage_root = "x";
    EXPECT_NO_THROW(c.validate());
    c.max_concurrent_jobs = 0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.port = 70000;
    EXPECT_THROW(c.validate(), ValidationError);
}
