#pragma once

#include "region_styler/config.hpp"
#include "region_styler/encoders.hpp"
#include "region_styler/image.hpp"
#include "region_styler/losses.hpp"
#include "region_styler/optimizer.hpp"
#include "region_styler/segmentation.hpp"
#include "region_styler/statespace.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace region_styler {

struct RegionScore {
    std::int32_t label = 0;
    std::string name;
    std::string prompt;
    double similarity = 0.0;
};

/// cos(F_I(Y_r), F_T(t_r)) for every prompted region, with Y_r extracted under
/// `policy` using Y's per-channel mean as fill. Throws ValidationError when no
/// region is prompted.
std::vector<RegionScore> region_similarity(const EncoderBackend& encoder, const ImageTensor& y, const LabelMask& mask,
                                           const std::vector<RegionSpec>& regions,
                                           ExtractionPolicy policy = ExtractionPolicy::MaskedFill, double eps = 1e-8);

/// Summary record of one stylization run: trace summary, final per-region
/// direction cosines and region similarities, and the config echo.
nlohmann::json stylization_summary(const StylizationResult& result, const LabelMask& mask,
                                   const std::vector<RegionSpec>& regions, const EncoderBackend& encoder);

// --- dataset ----------------------------------------------------------------

/// One row of prompts.json. `label` is a region name or a numeric label id.
struct PromptEntry {
    std::string label;
    std::string prompt;
    double weight = 1.0;
};

struct DatasetItem {
    std::string name;
    ImageTensor image;
    std::optional<LabelMask> mask;
    std::vector<PromptEntry> prompts;
};

struct Dataset {
    std::vector<DatasetItem> items;
    /// One message per skipped item.
    std::vector<std::string> warnings;
};

/// Parses `{"regions": [{"label": str, "prompt": str, "weight": float}]}`.
/// Throws ValidationError on malformed documents.
std::vector<PromptEntry> parse_prompt_table(const nlohmann::json& json);
nlohmann::json prompt_table_to_json(const std::vector<PromptEntry>& prompts);

/// Resolves each entry's label (name first, then numeric id) against `mask`.
std::vector<RegionSpec> resolve_prompts(const std::vector<PromptEntry>& prompts, const LabelMask& mask);

/// Layout: one subdirectory per item (sorted by name) with `image.png`,
/// optional `mask.png` plus sidecar, and `prompts.json`. Items without a prompt
/// table, with unreadable images or masks, or with mismatched mask dimensions
/// are skipped with a warning. A malformed prompt table is an error, as is a
/// directory without any item.
Dataset ingest_dataset(const std::filesystem::path& root);
void write_dataset(const Dataset& dataset, const std::filesystem::path& root);

/// Seeded scenes with three horizontal bands named sky, building and object,
/// each prompted from a fixed vocabulary.
Dataset synthetic_dataset(std::size_t count, std::size_t size = 16, std::uint64_t seed = 1);

// --- ablation -------------------------------------------------------------

enum class AblationVariant { Global, SegmentationSinglePrompt, Full };

std::string to_string(AblationVariant variant);
/// Accepts the canonical names plus the short alias `seg-single`.
AblationVariant parse_ablation_variant(const std::string& name);
/// Comma-separated list; throws ValidationError listing the valid names.
std::vector<AblationVariant> parse_ablation_variants(const std::string& list);
std::vector<AblationVariant> all_ablation_variants();

/// Prompts of the prompted regions joined with ", ".
std::string concatenated_prompt(const std::vector<RegionSpec>& regions);

struct EvalRow {
    std::string method;
    std::string image;
    std::string region;
    std::int32_t label = 0;
    std::string prompt;
    double similarity = 0.0;
};

struct MethodAggregate {
    std::string method;
    double mean = 0.0;
    std::size_t count = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    nlohmann::json meta = nlohmann::json::object();

    /// Mean similarity per method, methods in order of first appearance.
    std::vector<MethodAggregate> aggregates() const;
    double aggregate(const std::string& method) const;
};

struct AblationBackends {
    const EncoderBackend& encoder;
    const StateBackend& state;
    /// Used for items without a precomputed mask; may be null.
    const SegmentationBackend* segmentation = nullptr;
};

/// Runs every variant on every item and scores each prompted region against
/// its own prompt:
///   full: the item's regions and prompts, region-wise loss;
///   segmentation-single-prompt: the concatenated prompt on every prompted
///     region, region-wise loss;
///   global: one region covering the image with the concatenated prompt,
///     whole-image loss.
EvalReport run_ablation(const Dataset& dataset, const std::vector<AblationVariant>& variants,
                        const AblationBackends& backends, const StylizationConfig& config);

enum class ReportFormat { Markdown, Csv };
ReportFormat parse_report_format(const std::string& name);

/// Byte-deterministic rendering with every value to two decimals. Markdown has
/// three tables: per-method region means ("| Method | <Name> Region | ..."),
/// the ablation summary with an n/a user-preference column, and per-image
/// scores. CSV rows are `section,method,image,region,prompt,value` carrying the
/// same numbers.
std::string render_report(const EvalReport& report, ReportFormat format);
std::string render_report(const EvalReport& report, const std::string& format);

/// "run-" plus a hash of the report metadata (config, backends, variants and
/// item names), so reruns of the same evaluation share a run id.
std::string default_run_id(const EvalReport& report);

/// Writes report.md, report.csv and meta.json to `<out>/reports/<run_id>/` and
/// returns that directory.
std::filesystem::path write_report(const EvalReport& report, const std::filesystem::path& out,
                                   const std::string& run_id);

}  // namespace region_styler
