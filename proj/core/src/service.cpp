#include "region_styler/service.hpp"

#include "region_styler/detail/json_fields.hpp"
#include "region_styler/error.hpp"
#include "region_styler/evaluation.hpp"
#include "region_styler/image_io.hpp"
#include "region_styler/optimizer.hpp"
#include "region_styler/util.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

namespace region_styler {

namespace fs = std::filesystem;
using nlohmann::json;

void ServiceConfig::validate() const {
    if (max_concurrent_jobs < 1) throw ValidationError("max_concurrent_jobs", "must be >= 1");
    if (max_queued_jobs < 1) throw ValidationError("max_queued_jobs", "must be >= 1");
    if (port < 0 || port > 65535) throw ValidationError("port", "must be in [0, 65535]");
    if (storage_root.empty()) throw ValidationError("storage_root", "must not be empty");
    pipeline.stylization.validate();
}

fs::path default_storage_root() {
    if (const char* home = std::getenv("REGION_STYLER_HOME"); home != nullptr && *home != '\0') {
        return home;
    }
    return "region-styler-home";
}

namespace {

struct NotFound : Error {
    using Error::Error;
};

struct Conflict : Error {
    Conflict(const std::string& message, json detail) : Error(message), detail(std::move(detail)) {}
    json detail;
};

struct QueueFull : Error {
    using Error::Error;
};

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const auto seconds = std::chrono::system_clock::to_time_t(now);
    const auto millis =
        std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&seconds, &tm);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(millis));
    return buf;
}

json label_table(const LabelMask& mask) {
    const auto counts = mask.pixel_counts();
    auto out = json::array();
    for (std::size_t i = 0; i < mask.region_count(); ++i) {
        out.push_back({{"id", i + 1}, {"name", mask.names()[i]}, {"pixels", counts[i]}});
    }
    return out;
}

Service::Response json_response(int status, const json& body) {
    return {status, "application/json", body.dump()};
}

Service::Response error_response(int status, const std::string& message, json fields = json::array()) {
    return json_response(status, {{"error", message}, {"fields", std::move(fields)}});
}

json parse_body(std::string_view body) {
    if (body.empty()) return json::object();
    try {
        return json::parse(body);
    } catch (const json::parse_error& e) {
        throw ValidationError("body", std::string("malformed JSON: ") + e.what());
    }
}

bool safe_name(const std::string& name) {
    if (name.empty() || name == "." || name == "..") return false;
    for (const unsigned char c : name) {
        if (!(std::isalnum(c) || c == '-' || c == '_' || c == '.')) return false;
    }
    return true;
}

struct Job {
    std::string id;
    std::string state = "queued";
    std::string image_id;
    std::string mask_id;
    json regions;
    json config;
    std::atomic<int> step{0};
    int total = 0;
    std::string error;
    std::string created_at;
    std::string started_at;
    std::string finished_at;
    std::string result_file;
    std::atomic<bool> cancel{false};

    json status() const {
        json out = {{"job_id", id},
                    {"state", state},
                    {"image_id", image_id},
                    {"mask_id", mask_id},
                    {"progress", {{"step", step.load()}, {"total", total}}},
                    {"created_at", created_at},
                    {"started_at", started_at.empty() ? json(nullptr) : json(started_at)},
                    {"finished_at", finished_at.empty() ? json(nullptr) : json(finished_at)},
                    {"error", error.empty() ? json(nullptr) : json(error)}};
        return out;
    }

    json record() const {
        auto out = status();
        out["regions"] = regions;
        out["config"] = config;
        out["result_file"] = result_file;
        return out;
    }

    static std::shared_ptr<Job> from_record(const json& j) {
        auto job = std::make_shared<Job>();
        job->id = j.at("job_id").get<std::string>();
        job->state = j.at("state").get<std::string>();
        job->image_id = j.at("image_id").get<std::string>();
        job->mask_id = j.at("mask_id").get<std::string>();
        job->regions = j.at("regions");
        job->config = j.at("config");
        job->step = j.at("progress").at("step").get<int>();
        job->total = j.at("progress").at("total").get<int>();
        job->created_at = j.at("created_at").get<std::string>();
        if (j.at("started_at").is_string()) job->started_at = j.at("started_at").get<std::string>();
        if (j.at("finished_at").is_string()) job->finished_at = j.at("finished_at").get<std::string>();
        if (j.at("error").is_string()) job->error = j.at("error").get<std::string>();
        job->result_file = j.value("result_file", std::string());
        return job;
    }
};

}  // namespace

struct Service::Impl {
    explicit Impl(ServiceConfig cfg) : config(std::move(cfg)) {
        config.validate();
        encoder = make_encoder(config.pipeline.encoder);
        state_backend = make_state_backend(config.pipeline.state);
        fs::create_directories(config.storage_root);
        load_index();
        for (std::size_t i = 0; i < config.max_concurrent_jobs; ++i) {
            workers.emplace_back([this] { worker_loop(); });
        }
    }

    ~Impl() { stop(); }

    // --- persistence --------------------------------------------------------

    fs::path index_path() const { return config.storage_root / "index.json"; }

    void load_index() {
        if (!fs::exists(index_path())) {
            save_index_locked();
            return;
        }
        const json index = parse_json_document(read_text_file(index_path()), "index");
        images = index.value("images", json::object());
        masks = index.value("masks", json::object());
        next_job = index.value("next_job", std::uint64_t{1});
        const json job_records = index.value("jobs", json::object());
        for (const auto& [id, record] : job_records.items()) {
            auto job = Job::from_record(record);
            if (job->state == "queued" || job->state == "running") {
                job->state = "failed";
                job->error = "interrupted by a service restart";
                job->finished_at = now_iso8601();
            }
            jobs[id] = job;
        }
        save_index_locked();
    }

    /// Caller holds `mutex` (or is the constructor).
    void save_index_locked() {
        json job_records = json::object();
        for (const auto& [id, job] : jobs) job_records[id] = job->record();
        const json index = {{"version", 1},
                            {"next_job", next_job},
                            {"images", images},
                            {"masks", masks},
                            {"jobs", job_records}};
        const auto tmp = config.storage_root / "index.json.tmp";
        write_text_file(tmp, index.dump(2) + "\n");
        fs::rename(tmp, index_path());
    }

    // --- objects --------------------------------------------------------------

    ImageTensor load_stored_image(const std::string& id) {
        std::string file;
        {
            std::lock_guard lock(mutex);
            if (!images.contains(id)) throw NotFound("unknown image id '" + id + "'");
            file = images[id].at("file").get<std::string>();
        }
        return decode_image(read_file(config.storage_root / file));
    }

    std::pair<LabelMask, std::string> load_stored_mask(const std::string& id) {
        std::string file, image_id;
        {
            std::lock_guard lock(mutex);
            if (!masks.contains(id)) throw NotFound("unknown mask id '" + id + "'");
            file = masks[id].at("file").get<std::string>();
            image_id = masks[id].at("image_id").get<std::string>();
        }
        return {load_mask(config.storage_root / file), image_id};
    }

    json store_mask(const LabelMask& mask, const std::string& image_id) {
        const Bytes png = encode_mask_png(mask);
        const std::string sidecar = mask_sidecar_json(mask);
        const std::string id = "mask-" + to_hex(fnv1a64(sidecar, fnv1a64(png)));
        const std::string file = "masks/" + id + ".png";
        {
            std::lock_guard lock(mutex);
            if (!masks.contains(id)) {
                write_file(config.storage_root / file, png);
                write_text_file(mask_sidecar_path(config.storage_root / file), sidecar);
                masks[id] = {{"file", file},
                             {"image_id", image_id},
                             {"region_count", mask.region_count()},
                             {"created_at", now_iso8601()}};
                save_index_locked();
            }
        }
        return {{"mask_id", id},
                {"image_id", image_id},
                {"region_count", mask.region_count()},
                {"labels", label_table(mask)}};
    }

    // --- handlers -------------------------------------------------------------

    Response healthz() {
        std::lock_guard lock(mutex);
        std::size_t queued = 0, running = 0;
        for (const auto& [id, job] : jobs) {
            queued += job->state == "queued";
            running += job->state == "running";
        }
        return json_response(200, {{"status", "ok"},
                                   {"encoder", encoder->name()},
                                   {"state_backend", state_backend->name()},
                                   {"max_concurrent_jobs", config.max_concurrent_jobs},
                                   {"jobs", {{"queued", queued}, {"running", running}}}});
    }

    Response upload_image(std::string_view body) {
        if (body.empty()) throw ValidationError("body", "expected PNG or JPEG bytes");
        const Bytes bytes(body.begin(), body.end());
        ImageTensor image;
        try {
            image = decode_image(bytes);
        } catch (const Error& e) {
            throw ValidationError("body", e.what());
        }
        const std::string id = "img-" + to_hex(fnv1a64(bytes));
        const std::string file = "images/" + id + ".bin";
        {
            std::lock_guard lock(mutex);
            if (!images.contains(id)) {
                write_file(config.storage_root / file, bytes);
                images[id] = {{"file", file},
                              {"width", image.width()},
                              {"height", image.height()},
                              {"channels", image.channels()},
                              {"created_at", now_iso8601()}};
                save_index_locked();
            }
        }
        return json_response(201, {{"image_id", id},
                                   {"width", image.width()},
                                   {"height", image.height()},
                                   {"channels", image.channels()}});
    }

    Response get_image(const std::string& id) {
        const ImageTensor image = load_stored_image(id);
        return json_response(200, {{"image_id", id},
                                   {"width", image.width()},
                                   {"height", image.height()},
                                   {"channels", image.channels()},
                                   {"png_base64", base64_encode(encode_png(image))}});
    }

    Response segment_image(const std::string& id, std::string_view body) {
        const ImageTensor image = load_stored_image(id);
        const json request = parse_body(body);
        detail::JsonFields f(request, "");
        SegmentationConfig seg = config.pipeline.segmentation;
        if (f.read("backend", seg.backend) && !f.has("options")) seg.options = json::object();
        if (const auto* options = f.child("options")) {
            if (!options->is_object()) throw ValidationError("options", "expected a JSON object");
            seg.options = *options;
        }
        f.finish();
        const auto backend = make_segmentation_backend(seg);
        const LabelMask mask = segment(image, *backend);
        auto reply = store_mask(mask, id);
        reply["backend"] = backend->name();
        return json_response(201, reply);
    }

    Response get_mask(const std::string& id) {
        const auto [mask, image_id] = load_stored_mask(id);
        return json_response(200, {{"mask_id", id},
                                   {"image_id", image_id},
                                   {"region_count", mask.region_count()},
                                   {"labels", label_table(mask)},
                                   {"mask_png_base64", base64_encode(encode_mask_png(mask))}});
    }

    Response merge_mask(const std::string& id, std::string_view body) {
        const auto [mask, image_id] = load_stored_mask(id);
        const json request = parse_body(body);
        detail::JsonFields f(request, "");
        const auto ids = f.required<std::vector<std::int32_t>>("ids");
        const auto target = f.required<std::int32_t>("target");
        f.finish();
        const LabelMask merged = merge_labels(mask, std::set<std::int32_t>(ids.begin(), ids.end()), target);
        return json_response(201, store_mask(merged, image_id));
    }

    Response split_mask(const std::string& id, std::string_view body) {
        const auto [mask, image_id] = load_stored_mask(id);
        const json request = parse_body(body);
        detail::JsonFields f(request, "");
        const auto label = f.required<std::int32_t>("label");
        f.finish();
        return json_response(201, store_mask(split_label(mask, label), image_id));
    }

    StylizationConfig job_config(const json* overrides, const std::string& field) {
        json merged = to_json(config.pipeline.stylization);
        if (overrides != nullptr) {
            if (!overrides->is_object()) throw ValidationError(field, "expected a JSON object");
            merged.merge_patch(*overrides);
        }
        try {
            return stylization_config_from_json(merged);
        } catch (const ValidationError& e) {
            throw ValidationError(field + "." + e.field(), e.message());
        }
    }

    Response submit_job(std::string_view body) {
        const json request = parse_body(body);
        detail::JsonFields f(request, "");
        const auto image_id = f.required<std::string>("image_id");
        const auto mask_id = f.required<std::string>("mask_id");
        const auto* regions_json = f.child("regions");
        const auto* config_json = f.child("config");
        f.finish();
        if (regions_json == nullptr) throw ValidationError("regions", "missing required field");

        const auto prompts = parse_prompt_table({{"regions", *regions_json}});
        const StylizationConfig stylization = job_config(config_json, "config");

        const ImageTensor image = load_stored_image(image_id);
        const auto [mask, mask_image] = load_stored_mask(mask_id);
        if (mask.height() != image.height() || mask.width() != image.width()) {
            throw ValidationError("mask_id", "mask dimensions do not match the image");
        }
        const auto regions = resolve_prompts(prompts, mask);
        validate_regions(regions, mask);
        if (std::none_of(regions.begin(), regions.end(), [](const RegionSpec& r) { return r.prompted(); })) {
            throw ValidationError("regions", "at least one region needs a prompt");
        }

        std::lock_guard lock(mutex);
        std::size_t queued = 0;
        for (const auto& [id, job] : jobs) queued += job->state == "queued";
        if (queued >= config.max_queued_jobs) {
            throw QueueFull("job queue is full (" + std::to_string(queued) + " queued)");
        }
        auto job = std::make_shared<Job>();
        char id[32];
        std::snprintf(id, sizeof id, "job-%06llu", static_cast<unsigned long long>(next_job++));
        job->id = id;
        job->image_id = image_id;
        job->mask_id = mask_id;
        job->regions = *regions_json;
        job->config = to_json(stylization);
        job->total = stylization.steps;
        job->created_at = now_iso8601();
        jobs[job->id] = job;
        queue.push_back(job->id);
        save_index_locked();
        work_ready.notify_one();
        return json_response(202, {{"job_id", job->id}, {"state", job->state}});
    }

    std::shared_ptr<Job> find_job(const std::string& id) {
        const auto it = jobs.find(id);
        if (it == jobs.end()) throw NotFound("unknown job id '" + id + "'");
        return it->second;
    }

    Response job_status(const std::string& id) {
        std::lock_guard lock(mutex);
        return json_response(200, find_job(id)->status());
    }

    Response job_result(const std::string& id) {
        std::string file;
        {
            std::lock_guard lock(mutex);
            const auto job = find_job(id);
            if (job->state != "done") {
                throw Conflict("job " + id + " is " + job->state + "; no result available",
                               {{"state", job->state}, {"error", job->error}});
            }
            file = job->result_file;
        }
        return {200, "application/json", read_text_file(config.storage_root / file)};
    }

    Response evaluate(std::string_view body) {
        const json request = parse_body(body);
        detail::JsonFields f(request, "");
        const auto dataset_name = f.required<std::string>("dataset");
        std::vector<AblationVariant> variants = all_ablation_variants();
        if (const auto* v = f.child("variants")) {
            std::string list;
            if (v->is_string()) {
                list = v->get<std::string>();
            } else if (v->is_array()) {
                for (const auto& item : *v) {
                    if (!item.is_string()) throw ValidationError("variants", "expected variant names");
                    list += (list.empty() ? "" : ",") + item.get<std::string>();
                }
            } else {
                throw ValidationError("variants", "expected a list of variant names");
            }
            variants = parse_ablation_variants(list);
        }
        const StylizationConfig stylization = job_config(f.child("config"), "config");
        f.finish();
        if (!safe_name(dataset_name)) throw ValidationError("dataset", "invalid dataset name");
        const auto root = config.storage_root / "datasets" / dataset_name;
        if (!fs::is_directory(root)) throw NotFound("unknown dataset '" + dataset_name + "'");

        const Dataset dataset = ingest_dataset(root);
        if (dataset.items.empty()) throw ValidationError("dataset", "dataset has no valid items");
        const auto segmenter = make_segmentation_backend(config.pipeline.segmentation);
        const EvalReport report =
            run_ablation(dataset, variants, {*encoder, *state_backend, segmenter.get()}, stylization);
        const std::string run_id = default_run_id(report);
        write_report(report, config.storage_root, run_id);
        json aggregates = json::object();
        for (const auto& a : report.aggregates()) aggregates[a.method] = a.mean;
        return json_response(200, {{"run_id", run_id},
                                   {"aggregates", aggregates},
                                   {"warnings", dataset.warnings},
                                   {"report_md", render_report(report, ReportFormat::Markdown)},
                                   {"report_csv", render_report(report, ReportFormat::Csv)}});
    }

    Response route(std::string_view method, std::string_view target, std::string_view body) {
        std::string path(target.substr(0, target.find('?')));
        std::vector<std::string> parts;
        for (std::size_t start = 0; start < path.size();) {
            auto end = path.find('/', start);
            if (end == std::string::npos) end = path.size();
            if (end > start) parts.push_back(path.substr(start, end - start));
            start = end + 1;
        }
        const bool get = method == "GET";
        const bool post = method == "POST";
        const auto n = parts.size();
        if (n >= 2 && parts[0] == "v1") {
            const auto& area = parts[1];
            if (area == "healthz" && n == 2 && get) return healthz();
            if (area == "images") {
                if (n == 2 && post) return upload_image(body);
                if (n == 3 && get) return get_image(parts[2]);
                if (n == 4 && post && parts[3] == "segment") return segment_image(parts[2], body);
            }
            if (area == "masks") {
                if (n == 3 && get) return get_mask(parts[2]);
                if (n == 4 && post && parts[3] == "merge") return merge_mask(parts[2], body);
                if (n == 4 && post && parts[3] == "split") return split_mask(parts[2], body);
            }
            if (area == "jobs") {
                if (n == 2 && post) return submit_job(body);
                if (n == 3 && get) return job_status(parts[2]);
                if (n == 4 && get && parts[3] == "result") return job_result(parts[2]);
            }
            if (area == "evaluations" && n == 2 && post) return evaluate(body);
        }
        return error_response(404, "no route for " + std::string(method) + " " + path);
    }

    Response handle(std::string_view method, std::string_view target, std::string_view body) {
        try {
            return route(method, target, body);
        } catch (const ValidationError& e) {
            return error_response(400, e.what(), json::array({{{"field", e.field()}, {"message", e.message()}}}));
        } catch (const NotFound& e) {
            return error_response(404, e.what());
        } catch (const Conflict& e) {
            auto reply = json{{"error", e.what()}, {"fields", json::array()}};
            reply.update(e.detail);
            return json_response(409, reply);
        } catch (const QueueFull& e) {
            return error_response(503, e.what());
        } catch (const BackendError& e) {
            return error_response(502, e.what());
        } catch (const std::exception& e) {
            return error_response(500, e.what());
        }
    }

    // --- workers --------------------------------------------------------------

    void worker_loop() {
        while (true) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock lock(mutex);
                work_ready.wait(lock, [this] { return stopping || !queue.empty(); });
                if (stopping) return;
                job = jobs.at(queue.front());
                queue.pop_front();
                job->state = "running";
                job->started_at = now_iso8601();
                save_index_locked();
            }
            std::string error;
            std::string result_file;
            try {
                result_file = execute(*job);
            } catch (const std::exception& e) {
                error = e.what();
            }
            std::lock_guard lock(mutex);
            job->finished_at = now_iso8601();
            if (error.empty()) {
                job->state = "done";
                job->result_file = result_file;
            } else {
                job->state = "failed";
                job->error = error;
            }
            save_index_locked();
        }
    }

    std::string execute(Job& job) {
        const ImageTensor image = load_stored_image(job.image_id);
        const auto [mask, mask_image] = load_stored_mask(job.mask_id);
        const auto regions = resolve_prompts(parse_prompt_table({{"regions", job.regions}}), mask);
        const StylizationConfig stylization = stylization_config_from_json(job.config);

        StylizeHooks hooks;
        hooks.progress = [&job](int step, int) { job.step = step; };
        hooks.cancel = &job.cancel;
        const auto result = stylize(image, mask, regions, *encoder, *state_backend, stylization, hooks);

        const Bytes png = encode_png(result.output);
        const json document = {{"job_id", job.id},
                               {"image_id", job.image_id},
                               {"mask_id", job.mask_id},
                               {"output_png_base64", base64_encode(png)},
                               {"output_sha", to_hex(fnv1a64(png))},
                               {"summary", stylization_summary(result, mask, regions, *encoder)},
                               {"trace", trace_to_json(result.trace)}};
        const std::string file = "results/" + job.id + ".json";
        write_file(config.storage_root / "results" / (to_hex(fnv1a64(png)) + ".png"), png);
        write_text_file(config.storage_root / file, document.dump());
        return file;
    }

    // --- lifecycle ------------------------------------------------------------

    void stop() {
        {
            std::lock_guard lock(mutex);
            if (stopped) return;
            stopped = true;
            stopping = true;
            for (auto& [id, job] : jobs) job->cancel = true;
        }
        work_ready.notify_all();
        server.stop();
        if (listener.joinable()) listener.join();
        for (auto& w : workers) {
            if (w.joinable()) w.join();
        }
    }

    void install_routes() {
        const auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
            const auto reply = handle(req.method, req.target, req.body);
            res.status = reply.status;
            res.set_content(reply.body, reply.content_type);
        };
        server.set_payload_max_length(std::size_t{64} << 20);
        server.Get(".*", dispatch);
        server.Post(".*", dispatch);
        server.Put(".*", dispatch);
        server.Delete(".*", dispatch);
        server.Patch(".*", dispatch);
    }

    int bind() {
        install_routes();
        const int port = config.port == 0 ? server.bind_to_any_port(config.host)
                                          : (server.bind_to_port(config.host, config.port) ? config.port : -1);
        if (port < 0) {
            throw Error("cannot listen on " + config.host + ":" + std::to_string(config.port));
        }
        return port;
    }

    ServiceConfig config;
    std::unique_ptr<EncoderBackend> encoder;
    std::unique_ptr<StateBackend> state_backend;

    std::mutex mutex;
    std::condition_variable work_ready;
    json images = json::object();
    json masks = json::object();
    std::map<std::string, std::shared_ptr<Job>> jobs;
    std::deque<std::string> queue;
    std::uint64_t next_job = 1;
    bool stopping = false;
    bool stopped = false;

    std::vector<std::thread> workers;
    httplib::Server server;
    std::thread listener;
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() = default;

Service::Response Service::handle(std::string_view method, std::string_view target, std::string_view body) {
    return impl_->handle(method, target, body);
}

int Service::start() {
    const int port = impl_->bind();
    impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port;
}

void Service::serve() {
    impl_->bind();
    impl_->server.listen_after_bind();
}

void Service::stop() {
    impl_->stop();
}

const ServiceConfig& Service::config() const noexcept {
    return impl_->config;
}

}  // namespace region_styler
