#pragma once

#include "region_styler/image.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace region_styler {

using Bytes = std::vector<std::uint8_t>;

/// Reads a PNG or JPEG file. Gray images give one channel, color images three
/// (R,G,B); an alpha channel is dropped. Values are scaled to [0,1] by the
/// format's bit depth.
///
/// Errors: FileNotFoundError, DecodeError (not a PNG/JPEG or corrupt),
/// UnsupportedFormatError (e.g. CMYK JPEG).
ImageTensor load_image(const std::filesystem::path& path);
ImageTensor decode_image(std::span<const std::uint8_t> bytes);

/// 8-bit PNG; values are clamped to [0,1] and rounded to the nearest level.
Bytes encode_png(const ImageTensor& image);
void save_png(const std::filesystem::path& path, const ImageTensor& image);

/// Label masks are stored as a single-channel 16-bit PNG holding the label
/// values plus a JSON sidecar `{"labels": [{"id": int, "name": string}]}` next to
/// it (same stem, `.json` extension).
Bytes encode_mask_png(const LabelMask& mask);
/// Pixel value 0 is rejected (every pixel must be labeled); label values are
/// renormalized to {1..R}. `names` is keyed by the stored label value.
LabelMask decode_mask_png(std::span<const std::uint8_t> bytes, const std::map<std::int64_t, std::string>& names = {});
std::string mask_sidecar_json(const LabelMask& mask);
std::map<std::int64_t, std::string> parse_mask_sidecar(const std::string& json_text);

std::filesystem::path mask_sidecar_path(const std::filesystem::path& mask_path);
void save_mask(const std::filesystem::path& path, const LabelMask& mask);
/// Loads mask PNG and, when present, its sidecar. Without a sidecar the labels
/// are named `region-<id>`.
LabelMask load_mask(const std::filesystem::path& path);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace region_styler
