#pragma once

#include "region_styler/config.hpp"

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace region_styler {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t max_concurrent_jobs = 2;
    /// POST /v1/jobs answers 503 while this many jobs are waiting.
    std::size_t max_queued_jobs = 16;
    std::filesystem::path storage_root;
    /// Backends shared by all jobs, the default segmentation backend, and the
    /// stylization defaults that a job's `config` overrides.
    PipelineConfig pipeline;

    void validate() const;
};

/// REGION_STYLER_HOME when set, otherwise `./region-styler-home`.
std::filesystem::path default_storage_root();

/// HTTP job service.
///
/// Endpoints (JSON unless noted):
///   GET  /v1/healthz
///   POST /v1/images                  raw PNG/JPEG body -> 201 {image_id, ...}
///   GET  /v1/images/{id}             -> {image_id, width, height, channels, png_base64}
///   POST /v1/images/{id}/segment     {backend?, options?} -> 201 {mask_id, labels}
///   GET  /v1/masks/{id}              -> {mask_id, image_id, labels, mask_png_base64}
///   POST /v1/masks/{id}/merge        {ids: [int], target: int} -> 201 {mask_id, labels}
///   POST /v1/masks/{id}/split        {label: int} -> 201 {mask_id, labels}
///   POST /v1/jobs                    {image_id, mask_id, regions, config?} -> 202 {job_id}
///   GET  /v1/jobs/{id}               -> {job_id, state, progress: {step, total}, error, timestamps}
///   GET  /v1/jobs/{id}/result        -> {job_id, output_png_base64, summary, trace}; 409 until done
///   POST /v1/evaluations             {dataset, variants?, config?} -> {run_id, aggregates, report_md, report_csv}
///
/// Errors: 400 {"error", "fields": [{"field", "message"}]}, 404 unknown ids,
/// 409 result not available, 503 job queue full.
///
/// Files live under the storage root: content-addressed images, masks and
/// results plus one `index.json` with all metadata. Jobs left queued or running
/// by a previous process are marked failed on startup.
class Service {
public:
    struct Response {
        int status = 200;
        std::string content_type = "application/json";
        std::string body;
    };

    explicit Service(ServiceConfig config);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Transport-independent request handling; the HTTP server routes every
    /// request through here.
    Response handle(std::string_view method, std::string_view target, std::string_view body);

    /// Binds (port 0 picks a free port), starts serving on a background thread
    /// and returns the bound port.
    int start();
    /// Serves on the calling thread until stop().
    void serve();
    /// Stops the HTTP server and the workers; running jobs are cancelled.
    void stop();

    const ServiceConfig& config() const noexcept;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace region_styler
