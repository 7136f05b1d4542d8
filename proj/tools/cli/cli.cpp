#include "region_styler/cli.hpp"

#include "region_styler/config.hpp"
#include "region_styler/error.hpp"
#include "region_styler/evaluation.hpp"
#include "region_styler/image_io.hpp"
#include "region_styler/optimizer.hpp"
#include "region_styler/segmentation.hpp"
#include "region_styler/service.hpp"
#include "region_styler/statespace.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace region_styler {

namespace {

namespace fs = std::filesystem;

PipelineConfig read_config(const std::string& path) {
    return path.empty() ? PipelineConfig{} : load_pipeline_config(path);
}

std::int32_t resolve_label(const LabelMask& mask, std::string token, const std::string& field) {
    token.erase(0, token.find_first_not_of(' '));
    token.erase(token.find_last_not_of(' ') + 1);
    if (const auto named = mask.find_name(token); named != 0) return named;
    if (token.empty() || token.size() > 9 ||
        !std::all_of(token.begin(), token.end(), [](unsigned char c) { return std::isdigit(c) != 0; })) {
        throw ValidationError(field, "unknown label '" + token + "'");
    }
    const auto id = std::stoll(token);
    if (!mask.contains(id)) throw UnknownLabelError(id, field);
    return static_cast<std::int32_t>(id);
}

/// "a,b->t" with labels given by id or name.
LabelMask apply_merge(const LabelMask& mask, const std::string& directive) {
    const auto arrow = directive.find("->");
    if (arrow == std::string::npos) {
        throw ValidationError("--merge", "expected 'a,b->target', got '" + directive + "'");
    }
    std::set<std::int32_t> ids;
    const std::string list = directive.substr(0, arrow);
    for (std::size_t start = 0; start <= list.size();) {
        auto end = list.find(',', start);
        if (end == std::string::npos) end = list.size();
        ids.insert(resolve_label(mask, list.substr(start, end - start), "--merge"));
        start = end + 1;
    }
    return merge_labels(mask, ids, resolve_label(mask, directive.substr(arrow + 2), "--merge"));
}

void print_labels(std::ostream& out, const LabelMask& mask) {
    const auto counts = mask.pixel_counts();
    out << "id\tname\tpixels\n";
    for (std::size_t i = 0; i < mask.region_count(); ++i) {
        out << i + 1 << '\t' << mask.names()[i] << '\t' << counts[i] << '\n';
    }
}

struct SegmentArgs {
    std::string image, backend, options, out;
    std::vector<std::string> merges, splits;
    std::string config;
};

int cmd_segment(const SegmentArgs& a, std::ostream& out) {
    SegmentationConfig seg = read_config(a.config).segmentation;
    if (!a.backend.empty()) {
        if (a.backend != seg.backend) seg.options = nlohmann::json::object();
        seg.backend = a.backend;
    }
    if (!a.options.empty()) seg.options = parse_json_document(a.options, "--backend-options");
    const ImageTensor image = load_image(a.image);
    const auto backend = make_segmentation_backend(seg);
    LabelMask mask = segment(image, *backend);
    for (const auto& m : a.merges) mask = apply_merge(mask, m);
    for (const auto& s : a.splits) mask = split_label(mask, resolve_label(mask, s, "--split"));
    save_mask(a.out, mask);
    out << "wrote " << a.out << " (" << mask.region_count() << " regions, backend " << backend->name() << ")\n";
    print_labels(out, mask);
    return 0;
}

struct StylizeArgs {
    std::string image, mask, prompts, config, out;
    bool trace = false;
};

int cmd_stylize(const StylizeArgs& a, std::ostream& out) {
    const PipelineConfig config = read_config(a.config);
    const ImageTensor image = load_image(a.image);
    const LabelMask mask = load_mask(a.mask);
    if (mask.height() != image.height() || mask.width() != image.width()) {
        throw ValidationError("--mask", "mask is " + std::to_string(mask.height()) + "x" +
                                            std::to_string(mask.width()) + " but the image is " +
                                            image.shape_string());
    }
    const auto regions = resolve_prompts(
        parse_prompt_table(parse_json_document(read_text_file(a.prompts), "prompts")), mask);
    const auto encoder = make_encoder(config.encoder);
    const auto state = make_state_backend(config.state);

    const fs::path dir = a.out;
    StylizationResult result;
    try {
        result = stylize(image, mask, regions, *encoder, *state, config.stylization);
    } catch (const NonFiniteLossError& e) {
        if (a.trace) write_text_file(dir / "trace.csv", trace_to_csv(e.trace()));
        throw;
    }
    save_png(dir / "output.png", result.output);
    write_text_file(dir / "summary.json", stylization_summary(result, mask, regions, *encoder).dump(2) + "\n");
    if (a.trace) write_text_file(dir / "trace.csv", trace_to_csv(result.trace));

    const auto s = loss_trace_summary(result);
    out << "steps " << result.steps_run << ", total loss " << s.initial_total << " -> " << s.final_total << '\n';
    out << "wrote " << (dir / "output.png").string() << '\n';
    return 0;
}

struct EvalArgs {
    std::string dataset, variants = "global,seg-single,full", out, config, run_id;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    const auto variants = parse_ablation_variants(a.variants);
    const PipelineConfig config = read_config(a.config);
    const Dataset dataset = ingest_dataset(a.dataset);
    for (const auto& w : dataset.warnings) err << "warning: " << w << '\n';
    if (dataset.items.empty()) {
        throw ValidationError("--dataset", "no valid items in " + a.dataset);
    }
    const auto encoder = make_encoder(config.encoder);
    const auto state = make_state_backend(config.state);
    const auto segmenter = make_segmentation_backend(config.segmentation);
    const EvalReport report = run_ablation(dataset, variants, {*encoder, *state, segmenter.get()}, config.stylization);
    const std::string run_id = a.run_id.empty() ? default_run_id(report) : a.run_id;
    const auto dir = write_report(report, a.out, run_id);
    for (const auto& agg : report.aggregates()) {
        out << agg.method << '\t' << agg.mean << '\t' << agg.count << " regions\n";
    }
    out << "wrote " << dir.string() << '\n';
    return 0;
}

struct ServeArgs {
    std::string host = "127.0.0.1", root, config;
    int port = 8080;
    std::size_t max_jobs = 2, max_queued = 16;
};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
    ServiceConfig config;
    config.host = a.host;
    config.port = a.port;
    config.max_concurrent_jobs = a.max_jobs;
    config.max_queued_jobs = a.max_queued;
    config.storage_root = a.root.empty() ? default_storage_root() : fs::path(a.root);
    config.pipeline = read_config(a.config);
    Service service(config);
    out << "serving on http://" << a.host << ':' << a.port << " (storage " << config.storage_root.string() << ")"
        << std::endl;
    service.serve();
    return 0;
}

struct DatasetArgs {
    std::string out;
    std::size_t count = 5, size = 16;
    std::uint64_t seed = 1;
};

int cmd_make_dataset(const DatasetArgs& a, std::ostream& out) {
    const Dataset dataset = synthetic_dataset(a.count, a.size, a.seed);
    write_dataset(dataset, a.out);
    out << "wrote " << dataset.items.size() << " items to " << a.out << '\n';
    return 0;
}

struct FitArgs {
    std::string out;
    std::vector<std::string> references;
    AutoencoderFitOptions options;
};

int cmd_fit_autoencoder(const FitArgs& a, std::ostream& out) {
    std::vector<ImageTensor> extra;
    for (const auto& path : a.references) extra.push_back(load_image(path));
    const auto weights = fit_conv_autoencoder(a.options, extra);
    save_autoencoder_checkpoint(a.out, weights);
    out << "wrote " << a.out << " (state channels " << weights.state_channels << ", tolerance " << weights.tolerance
        << ", halo " << weights.halo() << ")\n";
    return 0;
}

int report_error(std::ostream& err, const char* kind, const std::exception& e, int code) {
    err << "error: " << kind << e.what() << '\n';
    return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Region-wise text-guided image stylization", "region-styler"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "region-styler 0.1.0");

    SegmentArgs seg;
    auto* segment_cmd = app.add_subcommand("segment", "Segment an image and write a label mask");
    segment_cmd->add_option("--image", seg.image, "Input PNG/JPEG")->required();
    segment_cmd->add_option("--backend", seg.backend, "Segmentation backend (quadrant, threshold, bands, kmeans, remote)");
    segment_cmd->add_option("--backend-options", seg.options, "Backend options as a JSON object");
    segment_cmd->add_option("--out", seg.out, "Output mask PNG (sidecar JSON is written next to it)")->required();
    segment_cmd->add_option("--merge", seg.merges, "Merge labels, e.g. \"2,3->2\" (repeatable)");
    segment_cmd->add_option("--split", seg.splits, "Split a label into connected components (repeatable)");
    segment_cmd->add_option("--config", seg.config, "Pipeline config JSON");

    StylizeArgs sty;
    auto* stylize_cmd = app.add_subcommand("stylize", "Stylize prompted regions of an image");
    stylize_cmd->add_option("--image", sty.image, "Input PNG/JPEG")->required();
    stylize_cmd->add_option("--mask", sty.mask, "Label mask PNG")->required();
    stylize_cmd->add_option("--prompts", sty.prompts, "prompts.json")->required();
    stylize_cmd->add_option("--config", sty.config, "Pipeline config JSON");
    stylize_cmd->add_option("--out", sty.out, "Output directory")->required();
    stylize_cmd->add_flag("--trace", sty.trace, "Also write trace.csv");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Run the ablation variants over a dataset");
    eval_cmd->add_option("--dataset", ev.dataset, "Dataset directory")->required();
    eval_cmd->add_option("--variants", ev.variants, "Comma-separated: global, seg-single, full")->capture_default_str();
    eval_cmd->add_option("--out", ev.out, "Output directory (reports/<run-id>/ is created inside)")->required();
    eval_cmd->add_option("--config", ev.config, "Pipeline config JSON");
    eval_cmd->add_option("--run-id", ev.run_id, "Report directory name (default: hash of the run)");

    ServeArgs sv;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP job service");
    serve_cmd->add_option("--host", sv.host)->capture_default_str();
    serve_cmd->add_option("--port", sv.port)->capture_default_str();
    serve_cmd->add_option("--root", sv.root, "Storage root (default: $REGION_STYLER_HOME or ./region-styler-home)");
    serve_cmd->add_option("--max-jobs", sv.max_jobs, "Concurrent jobs")->capture_default_str();
    serve_cmd->add_option("--max-queued", sv.max_queued, "Queued jobs before 503")->capture_default_str();
    serve_cmd->add_option("--config", sv.config, "Pipeline config JSON (backends and stylization defaults)");

    DatasetArgs ds;
    auto* dataset_cmd = app.add_subcommand("make-dataset", "Write a seeded synthetic dataset");
    dataset_cmd->add_option("--out", ds.out, "Dataset directory")->required();
    dataset_cmd->add_option("--count", ds.count)->capture_default_str();
    dataset_cmd->add_option("--size", ds.size, "Image side length")->capture_default_str();
    dataset_cmd->add_option("--seed", ds.seed)->capture_default_str();

    FitArgs fit;
    auto* fit_cmd = app.add_subcommand("fit-autoencoder", "Fit the convolutional autoencoder state backend");
    fit_cmd->add_option("--out", fit.out, "Checkpoint path")->required();
    fit_cmd->add_option("--reference", fit.references, "Extra training images (repeatable)");
    fit_cmd->add_option("--seed", fit.options.seed)->capture_default_str();
    fit_cmd->add_option("--state-channels", fit.options.state_channels)->capture_default_str();
    fit_cmd->add_option("--training-images", fit.options.training_images)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*segment_cmd) return cmd_segment(seg, out);
        if (*stylize_cmd) return cmd_stylize(sty, out);
        if (*eval_cmd) return cmd_eval(ev, out, err);
        if (*serve_cmd) return cmd_serve(sv, out);
        if (*dataset_cmd) return cmd_make_dataset(ds, out);
        if (*fit_cmd) return cmd_fit_autoencoder(fit, out);
    } catch (const NonFiniteLossError& e) {
        return report_error(err, "non-finite loss, optimization aborted: ", e, 2);
    } catch (const ValidationError& e) {
        return report_error(err, "", e, 1);
    } catch (const FileNotFoundError& e) {
        return report_error(err, "", e, 1);
    } catch (const DecodeError& e) {
        return report_error(err, "", e, 1);
    } catch (const UnsupportedFormatError& e) {
        return report_error(err, "", e, 1);
    } catch (const DegenerateDirectionError& e) {
        return report_error(err, "", e, 1);
    } catch (const ShapeError& e) {
        return report_error(err, "", e, 1);
    } catch (const std::exception& e) {
        return report_error(err, "internal: ", e, 2);
    }
    return 1;
}

}  // namespace region_styler
