#include "region_styler/evaluation.hpp"

#include "region_styler/detail/json_fields.hpp"
#include "region_styler/error.hpp"
#include "region_styler/image_io.hpp"
#include "region_styler/util.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

namespace region_styler {

std::vector<RegionScore> region_similarity(const EncoderBackend& encoder, const ImageTensor& y, const LabelMask& mask,
                                           const std::vector<RegionSpec>& regions, ExtractionPolicy policy,
                                           double eps) {
    if (mask.height() != y.height() || mask.width() != y.width()) {
        throw ShapeError("label mask does not match image " + y.shape_string());
    }
    const auto fill = channel_means(y);
    std::vector<RegionScore> out;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        const auto& r = regions[i];
        if (!mask.contains(r.label)) {
            throw UnknownLabelError(r.label, "regions[" + std::to_string(i) + "].label");
        }
        if (!r.prompted()) continue;
        const auto image_embedding = encode_image(encoder, extract_region(y, binary_mask(mask, r.label), policy, fill));
        const auto text_embedding = encode_text(encoder, r.prompt);
        out.push_back({r.label, mask.name(r.label), r.prompt,
                       stabilized_cosine(image_embedding.values(), text_embedding.values(), eps)});
    }
    if (out.empty()) {
        throw ValidationError("regions", "no prompted region to score");
    }
    return out;
}

nlohmann::json stylization_summary(const StylizationResult& result, const LabelMask& mask,
                                   const std::vector<RegionSpec>& regions, const EncoderBackend& encoder) {
    auto summary = to_json(loss_trace_summary(result));
    auto scores = nlohmann::json::array();
    for (const auto& s : region_similarity(encoder, result.output, mask, regions, result.config.loss.extraction,
                                           result.config.loss.eps)) {
        const auto initial = result.initial_region_cosine.find(s.label);
        const auto final = result.final_region_cosine.find(s.label);
        scores.push_back({{"label", s.label},
                          {"name", s.name},
                          {"prompt", s.prompt},
                          {"similarity", s.similarity},
                          {"initial_direction_cosine",
                           initial == result.initial_region_cosine.end() ? 0.0 : initial->second},
                          {"final_direction_cosine", final == result.final_region_cosine.end() ? 0.0 : final->second}});
    }
    summary["regions"] = scores;
    summary["config"] = to_json(result.config);
    return summary;
}

// --- dataset ----------------------------------------------------------------

std::vector<PromptEntry> parse_prompt_table(const nlohmann::json& json) {
    detail::JsonFields root(json, "");
    const auto* regions = root.child("regions");
    root.finish();
    if (regions == nullptr) throw ValidationError("regions", "missing required field");
    if (!regions->is_array()) throw ValidationError("regions", "expected an array");
    std::vector<PromptEntry> out;
    for (std::size_t i = 0; i < regions->size(); ++i) {
        const std::string path = "regions[" + std::to_string(i) + "]";
        detail::JsonFields f((*regions)[i], path);
        PromptEntry entry;
        const auto* label = f.child("label");
        if (label == nullptr) throw ValidationError(path + ".label", "missing required field");
        if (label->is_string()) {
            entry.label = label->get<std::string>();
        } else if (label->is_number_integer()) {
            entry.label = std::to_string(label->get<long long>());
        } else {
            throw ValidationError(path + ".label", "expected a region name or label id");
        }
        entry.prompt = f.required<std::string>("prompt");
        f.read("weight", entry.weight);
        f.finish();
        if (!std::isfinite(entry.weight) || entry.weight < 0.0) {
            throw ValidationError(path + ".weight", "weight must be a finite number >= 0");
        }
        out.push_back(std::move(entry));
    }
    return out;
}

nlohmann::json prompt_table_to_json(const std::vector<PromptEntry>& prompts) {
    auto regions = nlohmann::json::array();
    for (const auto& p : prompts) {
        regions.push_back({{"label", p.label}, {"prompt", p.prompt}, {"weight", p.weight}});
    }
    return {{"regions", regions}};
}

std::vector<RegionSpec> resolve_prompts(const std::vector<PromptEntry>& prompts, const LabelMask& mask) {
    std::vector<RegionSpec> out;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto& p = prompts[i];
        std::int32_t label = mask.find_name(p.label);
        if (label == 0 && !p.label.empty() &&
            std::all_of(p.label.begin(), p.label.end(), [](unsigned char c) { return std::isdigit(c) != 0; })) {
            const long long id = p.label.size() > 9 ? -1 : std::stoll(p.label);
            if (!mask.contains(id)) throw UnknownLabelError(id, "regions[" + std::to_string(i) + "].label");
            label = static_cast<std::int32_t>(id);
        }
        if (label == 0) {
            throw ValidationError("regions[" + std::to_string(i) + "].label", "unknown label '" + p.label + "'");
        }
        out.push_back({label, p.prompt, p.weight});
    }
    return out;
}

Dataset ingest_dataset(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) {
        throw FileNotFoundError("dataset directory not found: " + root.string());
    }
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) {
        throw ValidationError("dataset", "no items in " + root.string());
    }

    Dataset out;
    for (const auto& dir : dirs) {
        const std::string name = dir.filename().string();
        const auto prompts_path = dir / "prompts.json";
        if (!fs::exists(prompts_path)) {
            out.warnings.push_back(name + ": skipped, prompts.json missing");
            continue;
        }
        DatasetItem item;
        item.name = name;
        try {
            item.prompts = parse_prompt_table(parse_json_document(read_text_file(prompts_path), "prompts"));
        } catch (const ValidationError& e) {
            throw ValidationError("dataset." + name + ".prompts", e.what());
        }
        try {
            item.image = load_image(dir / "image.png");
            if (fs::exists(dir / "mask.png")) {
                item.mask = load_mask(dir / "mask.png");
                if (item.mask->height() != item.image.height() || item.mask->width() != item.image.width()) {
                    out.warnings.push_back(name + ": rejected, mask dimensions do not match the image");
                    continue;
                }
                resolve_prompts(item.prompts, *item.mask);
            }
        } catch (const Error& e) {
            out.warnings.push_back(name + ": skipped, " + e.what());
            continue;
        }
        out.items.push_back(std::move(item));
    }
    return out;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& root) {
    for (const auto& item : dataset.items) {
        const auto dir = root / item.name;
        save_png(dir / "image.png", item.image);
        if (item.mask) save_mask(dir / "mask.png", *item.mask);
        write_text_file(dir / "prompts.json", prompt_table_to_json(item.prompts).dump(2) + "\n");
    }
}

Dataset synthetic_dataset(std::size_t count, std::size_t size, std::uint64_t seed) {
    static const char* const kSky[] = {"stormy sunset", "starry night", "pastel dawn", "thunder clouds",
                                       "aurora borealis"};
    static const char* const kBuilding[] = {"gothic cathedral", "glass skyscraper", "brick warehouse",
                                            "marble temple", "wooden cabin"};
    static const char* const kObject[] = {"autumn leaves", "frozen lake", "neon signs", "mossy rocks",
                                          "golden wheat"};
    if (size < 12) throw ValidationError("size", "synthetic scenes need at least 12 rows");

    const auto rows = BandSegmenter::even_rows(size, 3);
    std::vector<std::int32_t> labels(size * size);
    for (std::size_t y = 0, band = 0, left = rows[0]; y < size; ++y) {
        if (left == 0) left = rows[++band];
        --left;
        for (std::size_t x = 0; x < size; ++x) labels[y * size + x] = static_cast<std::int32_t>(band + 1);
    }
    const LabelMask mask(size, size, labels, {"sky", "building", "object"});

    Dataset out;
    for (std::size_t n = 0; n < count; ++n) {
        SeededRng rng(seed * 1000003ULL + n);
        ImageTensor image(3, size, size);
        // Per-band base color with a gentle gradient and texture noise.
        double base[3][3];
        for (auto& band : base) {
            for (auto& c : band) c = rng.uniform(0.25, 0.75);
        }
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                const auto band = static_cast<std::size_t>(labels[y * size + x] - 1);
                const double ramp = 0.1 * (static_cast<double>(x) / static_cast<double>(size) - 0.5);
                for (std::size_t c = 0; c < 3; ++c) {
                    image.at(c, y, x) = std::clamp(base[band][c] + ramp + rng.uniform(-0.05, 0.05), 0.0, 1.0);
                }
            }
        }
        DatasetItem item;
        char name[32];
        std::snprintf(name, sizeof name, "scene-%03zu", n);
        item.name = name;
        item.image = std::move(image);
        item.mask = mask;
        item.prompts = {{"sky", kSky[(n + seed) % 5], 1.0},
                        {"building", kBuilding[(n + 2 * seed) % 5], 1.0},
                        {"object", kObject[(n + 3 * seed) % 5], 1.0}};
        out.items.push_back(std::move(item));
    }
    return out;
}

// --- ablation -------------------------------------------------------------

std::string to_string(AblationVariant variant) {
    switch (variant) {
        case AblationVariant::Global:
            return "global";
        case AblationVariant::SegmentationSinglePrompt:
            return "segmentation-single-prompt";
        case AblationVariant::Full:
            break;
    }
    return "full";
}

AblationVariant parse_ablation_variant(const std::string& name) {
    if (name == "global") return AblationVariant::Global;
    if (name == "segmentation-single-prompt" || name == "seg-single") return AblationVariant::SegmentationSinglePrompt;
    if (name == "full") return AblationVariant::Full;
    throw ValidationError("variants", "unknown variant '" + name +
                                          "'; valid names: global, segmentation-single-prompt (seg-single), full");
}

std::vector<AblationVariant> parse_ablation_variants(const std::string& list) {
    std::vector<AblationVariant> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        auto end = list.find(',', start);
        if (end == std::string::npos) end = list.size();
        std::string token = list.substr(start, end - start);
        token.erase(0, token.find_first_not_of(' '));
        token.erase(token.find_last_not_of(' ') + 1);
        const auto variant = parse_ablation_variant(token);
        if (std::find(out.begin(), out.end(), variant) == out.end()) out.push_back(variant);
        start = end + 1;
    }
    return out;
}

std::vector<AblationVariant> all_ablation_variants() {
    return {AblationVariant::Global, AblationVariant::SegmentationSinglePrompt, AblationVariant::Full};
}

std::string concatenated_prompt(const std::vector<RegionSpec>& regions) {
    std::string out;
    for (const auto& r : regions) {
        if (!r.prompted()) continue;
        if (!out.empty()) out += ", ";
        out += r.prompt;
    }
    return out;
}

std::vector<MethodAggregate> EvalReport::aggregates() const {
    std::vector<MethodAggregate> out;
    for (const auto& row : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& a) { return a.method == row.method; });
        if (it == out.end()) {
            out.push_back({row.method, 0.0, 0});
            it = std::prev(out.end());
        }
        it->mean += row.similarity;
        ++it->count;
    }
    for (auto& a : out) a.mean /= static_cast<double>(a.count);
    return out;
}

double EvalReport::aggregate(const std::string& method) const {
    for (const auto& a : aggregates()) {
        if (a.method == method) return a.mean;
    }
    throw ValidationError("method", "no rows for method '" + method + "'");
}

EvalReport run_ablation(const Dataset& dataset, const std::vector<AblationVariant>& variants,
                        const AblationBackends& backends, const StylizationConfig& config) {
    if (dataset.items.empty()) throw ValidationError("dataset", "dataset is empty");
    if (variants.empty()) throw ValidationError("variants", "no variants requested");

    EvalReport report;
    for (const auto variant : variants) {
        for (const auto& item : dataset.items) {
            LabelMask mask;
            if (item.mask) {
                mask = *item.mask;
            } else if (backends.segmentation != nullptr) {
                mask = segment(item.image, *backends.segmentation);
            } else {
                throw ValidationError("dataset." + item.name + ".mask",
                                      "item has no mask and no segmentation backend is configured");
            }
            if (item.prompts.empty()) {
                throw ValidationError("dataset." + item.name + ".prompts", "item has no prompts");
            }
            const auto regions = resolve_prompts(item.prompts, mask);

            StylizationConfig run = config;
            ImageTensor y;
            if (variant == AblationVariant::Full) {
                run.loss.mode = DirectionalMode::Region;
                y = stylize(item.image, mask, regions, backends.encoder, backends.state, run).output;
            } else if (variant == AblationVariant::SegmentationSinglePrompt) {
                run.loss.mode = DirectionalMode::Region;
                const std::string shared = concatenated_prompt(regions);
                auto shared_regions = regions;
                for (auto& r : shared_regions) {
                    if (r.prompted()) r.prompt = shared;
                }
                y = stylize(item.image, mask, shared_regions, backends.encoder, backends.state, run).output;
            } else {
                run.loss.mode = DirectionalMode::Global;
                const LabelMask whole(mask.height(), mask.width(), std::vector<std::int32_t>(mask.size(), 1), {"image"});
                const std::vector<RegionSpec> single{{1, concatenated_prompt(regions), 1.0}};
                y = stylize(item.image, whole, single, backends.encoder, backends.state, run).output;
            }

            for (const auto& score :
                 region_similarity(backends.encoder, y, mask, regions, config.loss.extraction, config.loss.eps)) {
                report.rows.push_back({to_string(variant), item.name, score.name, score.label, score.prompt,
                                       score.similarity});
            }
        }
    }

    std::vector<std::string> item_names;
    for (const auto& item : dataset.items) item_names.push_back(item.name);
    std::vector<std::string> names;
    for (const auto v : variants) names.push_back(to_string(v));
    report.meta = {{"encoder", backends.encoder.name()},
                   {"state", backends.state.name()},
                   {"segmentation", backends.segmentation ? backends.segmentation->name() : "precomputed"},
                   {"config", to_json(config)},
                   {"config_hash", config_hash(to_json(config))},
                   {"seed", config.seed},
                   {"extraction", to_string(config.loss.extraction)},
                   {"variants", names},
                   {"items", item_names}};
    return report;
}

// --- rendering --------------------------------------------------------------

ReportFormat parse_report_format(const std::string& name) {
    if (name == "markdown" || name == "md") return ReportFormat::Markdown;
    if (name == "csv") return ReportFormat::Csv;
    throw ValidationError("format", "unknown report format '" + name + "' (expected markdown or csv)");
}

namespace {

std::string two_decimals(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    std::string s = buf;
    if (s == "-0.00") s = "0.00";
    return s;
}

std::string region_heading(const std::string& name) {
    std::string out = name;
    if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return out + " Region";
}

std::string csv_field(const std::string& text) {
    if (text.find_first_of(",\"\n\r") == std::string::npos) return text;
    std::string out = "\"";
    for (const char c : text) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::string md_cell(const std::string& text) {
    std::string out;
    for (const char c : text) {
        if (c == '|') out += '\\';
        out += c;
    }
    return out;
}

/// Per-method, per-region-name means in order of first appearance.
struct RegionTable {
    std::vector<std::string> methods;
    std::vector<std::string> regions;
    std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> cells;
};

RegionTable region_table(const EvalReport& report) {
    RegionTable t;
    for (const auto& row : report.rows) {
        if (std::find(t.methods.begin(), t.methods.end(), row.method) == t.methods.end()) t.methods.push_back(row.method);
        if (std::find(t.regions.begin(), t.regions.end(), row.region) == t.regions.end()) t.regions.push_back(row.region);
        auto& cell = t.cells[{row.method, row.region}];
        cell.first += row.similarity;
        ++cell.second;
    }
    return t;
}

std::string render_markdown(const EvalReport& report) {
    const auto table = region_table(report);
    std::string out = "## Region similarity\n\n| Method |";
    std::string rule = "|---|";
    for (const auto& r : table.regions) {
        out += " " + md_cell(region_heading(r)) + " |";
        rule += "---|";
    }
    out += "\n" + rule + "\n";
    for (const auto& m : table.methods) {
        out += "| " + md_cell(m) + " |";
        for (const auto& r : table.regions) {
            const auto it = table.cells.find({m, r});
            out += " " + (it == table.cells.end() ? std::string("-")
                                                  : two_decimals(it->second.first / static_cast<double>(it->second.second))) +
                   " |";
        }
        out += "\n";
    }

    out += "\n## Ablation\n\n| Method Variant | Region Similarity | User Pref (%) |\n|---|---|---|\n";
    for (const auto& a : report.aggregates()) {
        out += "| " + md_cell(a.method) + " | " + two_decimals(a.mean) + " | n/a |\n";
    }

    out += "\n## Per-image scores\n\n| Method | Image | Region | Prompt | Similarity |\n|---|---|---|---|---|\n";
    for (const auto& row : report.rows) {
        out += "| " + md_cell(row.method) + " | " + md_cell(row.image) + " | " + md_cell(row.region) + " | " +
               md_cell(row.prompt) + " | " + two_decimals(row.similarity) + " |\n";
    }
    return out;
}

std::string render_csv(const EvalReport& report) {
    std::string out = "section,method,image,region,prompt,value\n";
    const auto table = region_table(report);
    for (const auto& m : table.methods) {
        for (const auto& r : table.regions) {
            const auto it = table.cells.find({m, r});
            if (it == table.cells.end()) continue;
            out += "region_mean," + csv_field(m) + ",," + csv_field(r) + ",," +
                   two_decimals(it->second.first / static_cast<double>(it->second.second)) + "\n";
        }
    }
    for (const auto& a : report.aggregates()) {
        out += "ablation," + csv_field(a.method) + ",,,," + two_decimals(a.mean) + "\n";
    }
    for (const auto& row : report.rows) {
        out += "score," + csv_field(row.method) + "," + csv_field(row.image) + "," + csv_field(row.region) + "," +
               csv_field(row.prompt) + "," + two_decimals(row.similarity) + "\n";
    }
    return out;
}

}  // namespace

std::string render_report(const EvalReport& report, ReportFormat format) {
    return format == ReportFormat::Markdown ? render_markdown(report) : render_csv(report);
}

std::string render_report(const EvalReport& report, const std::string& format) {
    return render_report(report, parse_report_format(format));
}

std::string default_run_id(const EvalReport& report) {
    return "run-" + to_hex(fnv1a64(report.meta.dump())).substr(0, 12);
}

std::filesystem::path write_report(const EvalReport& report, const std::filesystem::path& out,
                                   const std::string& run_id) {
    if (run_id.empty() || run_id.find_first_of("/\\") != std::string::npos || run_id == "." || run_id == "..") {
        throw ValidationError("run_id", "invalid run id '" + run_id + "'");
    }
    const auto dir = out / "reports" / run_id;
    write_text_file(dir / "report.md", render_report(report, ReportFormat::Markdown));
    write_text_file(dir / "report.csv", render_report(report, ReportFormat::Csv));
    auto meta = report.meta;
    meta["run_id"] = run_id;
    auto aggregates = nlohmann::json::object();
    for (const auto& a : report.aggregates()) aggregates[a.method] = a.mean;
    meta["aggregates"] = aggregates;
    write_text_file(dir / "meta.json", meta.dump(2) + "\n");
    return dir;
}

}  // namespace region_styler
