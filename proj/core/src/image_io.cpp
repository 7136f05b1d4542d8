#include "region_styler/image_io.hpp"

#include "region_styler/error.hpp"

#include <nlohmann/json.hpp>

#include <png.h>
// jpeglib.h needs size_t/FILE declared first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

namespace region_styler {

namespace {

/// Decoded samples before conversion to floats.
struct RawRaster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    int bit_depth = 8;
    std::vector<std::uint16_t> samples;  // interleaved
};

// ---------------------------------------------------------------------------
// PNG

struct PngIo {
    std::span<const std::uint8_t> input;
    std::size_t pos = 0;
    Bytes* output = nullptr;
    char message[256] = {};
};

void png_error_cb(png_structp png, png_const_charp msg) {
    auto* io = static_cast<PngIo*>(png_get_error_ptr(png));
    std::snprintf(io->message, sizeof(io->message), "%s", msg);
    png_longjmp(png, 1);
}

void png_warning_cb(png_structp, png_const_charp) {}

void png_read_cb(png_structp png, png_bytep out, png_size_t n) {
    auto* io = static_cast<PngIo*>(png_get_io_ptr(png));
    if (io->pos + n > io->input.size()) {
        png_error(png, "truncated PNG stream");
    }
    std::memcpy(out, io->input.data() + io->pos, n);
    io->pos += n;
}

void png_write_cb(png_structp png, png_bytep data, png_size_t n) {
    auto* io = static_cast<PngIo*>(png_get_io_ptr(png));
    io->output->insert(io->output->end(), data, data + n);
}

void png_flush_cb(png_structp) {}

// All state touched after setjmp lives behind pointers owned by the caller.
bool png_decode_into(png_structp png, png_infop info, RawRaster* raster, std::vector<png_byte>* buffer,
                     std::vector<png_bytep>* rows) {
    if (setjmp(png_jmpbuf(png))) {
        return false;
    }
    png_read_info(png, info);
    const int color_type = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    png_read_update_info(png, info);

    raster->width = png_get_image_width(png, info);
    raster->height = png_get_image_height(png, info);
    raster->channels = png_get_channels(png, info);
    raster->bit_depth = png_get_bit_depth(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    buffer->resize(row_bytes * raster->height);
    rows->resize(raster->height);
    for (std::size_t y = 0; y < raster->height; ++y) {
        (*rows)[y] = buffer->data() + y * row_bytes;
    }
    png_read_image(png, rows->data());
    png_read_end(png, nullptr);
    return true;
}

RawRaster decode_png(std::span<const std::uint8_t> bytes) {
    PngIo io;
    io.input = bytes;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &io, png_error_cb, png_warning_cb);
    if (png == nullptr) {
        throw DecodeError("PNG: cannot allocate decoder");
    }
    png_infop info = png_create_info_struct(png);
    png_set_read_fn(png, &io, png_read_cb);

    RawRaster raster;
    std::vector<png_byte> buffer;
    std::vector<png_bytep> rows;
    const bool ok = info != nullptr && png_decode_into(png, info, &raster, &buffer, &rows);
    png_destroy_read_struct(&png, info != nullptr ? &info : nullptr, nullptr);
    if (!ok) {
        throw DecodeError(std::string("PNG: ") + (io.message[0] != '\0' ? io.message : "decode failed"));
    }

    const std::size_t n = raster.width * raster.height * raster.channels;
    raster.samples.resize(n);
    if (raster.bit_depth == 16) {
        for (std::size_t i = 0; i < n; ++i) {
            raster.samples[i] = static_cast<std::uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]);
        }
    } else {
        std::copy_n(buffer.begin(), n, raster.samples.begin());
    }
    return raster;
}

bool png_encode_into(png_structp png, png_infop info, std::size_t width, std::size_t height, int color_type,
                     int depth, std::vector<png_bytep>* rows) {
    if (setjmp(png_jmpbuf(png))) {
        return false;
    }
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows->data());
    png_write_end(png, nullptr);
    return true;
}

Bytes encode_png_raw(std::vector<png_byte>& buffer, std::size_t width, std::size_t height, std::size_t channels,
                     int depth) {
    Bytes out;
    PngIo io;
    io.output = &out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &io, png_error_cb, png_warning_cb);
    if (png == nullptr) {
        throw Error("PNG: cannot allocate encoder");
    }
    png_infop info = png_create_info_struct(png);
    png_set_write_fn(png, &io, png_write_cb, png_flush_cb);

    const std::size_t row_bytes = width * channels * static_cast<std::size_t>(depth / 8);
    std::vector<png_bytep> rows(height);
    for (std::size_t y = 0; y < height; ++y) {
        rows[y] = buffer.data() + y * row_bytes;
    }
    const int color_type = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    const bool ok = info != nullptr && png_encode_into(png, info, width, height, color_type, depth, &rows);
    png_destroy_write_struct(&png, info != nullptr ? &info : nullptr);
    if (!ok) {
        throw Error(std::string("PNG: ") + (io.message[0] != '\0' ? io.message : "encode failed"));
    }
    return out;
}

// ---------------------------------------------------------------------------
// JPEG

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX] = {};
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

void jpeg_silent(j_common_ptr, int) {}

enum class JpegStatus { Ok, Failed, Cmyk };

JpegStatus jpeg_decode_into(jpeg_decompress_struct* cinfo, JpegError* err, std::span<const std::uint8_t> bytes,
                            RawRaster* raster, std::vector<JSAMPLE>* buffer) {
    if (setjmp(err->jump)) {
        return JpegStatus::Failed;
    }
    jpeg_mem_src(cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(cinfo, TRUE);
    if (cinfo->jpeg_color_space == JCS_CMYK || cinfo->jpeg_color_space == JCS_YCCK) {
        return JpegStatus::Cmyk;
    }
    cinfo->out_color_space = cinfo->num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(cinfo);
    raster->width = cinfo->output_width;
    raster->height = cinfo->output_height;
    raster->channels = static_cast<std::size_t>(cinfo->output_components);
    raster->bit_depth = 8;
    const std::size_t stride = raster->width * raster->channels;
    buffer->resize(stride * raster->height);
    while (cinfo->output_scanline < cinfo->output_height) {
        JSAMPROW row = buffer->data() + cinfo->output_scanline * stride;
        jpeg_read_scanlines(cinfo, &row, 1);
    }
    jpeg_finish_decompress(cinfo);
    return JpegStatus::Ok;
}

RawRaster decode_jpeg(std::span<const std::uint8_t> bytes) {
    jpeg_decompress_struct cinfo{};
    JpegError err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    err.mgr.emit_message = jpeg_silent;
    jpeg_create_decompress(&cinfo);

    RawRaster raster;
    std::vector<JSAMPLE> buffer;
    const JpegStatus status = jpeg_decode_into(&cinfo, &err, bytes, &raster, &buffer);
    jpeg_destroy_decompress(&cinfo);
    if (status == JpegStatus::Cmyk) {
        throw UnsupportedFormatError("JPEG: CMYK/YCCK color space is not supported");
    }
    if (status == JpegStatus::Failed) {
        throw DecodeError(std::string("JPEG: ") + err.message);
    }
    raster.samples.assign(buffer.begin(), buffer.end());
    return raster;
}

bool is_png(std::span<const std::uint8_t> bytes) {
    return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

bool is_jpeg(std::span<const std::uint8_t> bytes) {
    return bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF;
}

RawRaster decode_raw(std::span<const std::uint8_t> bytes) {
    if (is_png(bytes)) {
        return decode_png(bytes);
    }
    if (is_jpeg(bytes)) {
        return decode_jpeg(bytes);
    }
    throw DecodeError("unrecognized image format (expected PNG or JPEG)");
}

}  // namespace

// ---------------------------------------------------------------------------

Bytes read_file(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        throw FileNotFoundError("file not found: " + path.string());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FileNotFoundError("cannot open file: " + path.string());
    }
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write file: " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error("write failed: " + path.string());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
    const Bytes bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

ImageTensor decode_image(std::span<const std::uint8_t> bytes) {
    const RawRaster raster = decode_raw(bytes);
    std::size_t out_channels = 0;
    switch (raster.channels) {
        case 1:
        case 2:  // gray + alpha
            out_channels = 1;
            break;
        case 3:
        case 4:  // RGB + alpha
            out_channels = 3;
            break;
        default:
            throw UnsupportedFormatError("unsupported channel count " + std::to_string(raster.channels));
    }
    const double scale = raster.bit_depth == 16 ? 65535.0 : 255.0;
    ImageTensor image(out_channels, raster.height, raster.width);
    for (std::size_t y = 0; y < raster.height; ++y) {
        for (std::size_t x = 0; x < raster.width; ++x) {
            const std::size_t base = (y * raster.width + x) * raster.channels;
            for (std::size_t c = 0; c < out_channels; ++c) {
                image.at(c, y, x) = raster.samples[base + c] / scale;
            }
        }
    }
    return image;
}

ImageTensor load_image(const std::filesystem::path& path) {
    return decode_image(read_file(path));
}

Bytes encode_png(const ImageTensor& image) {
    const std::size_t c = image.channels();
    std::vector<png_byte> buffer(image.size());
    for (std::size_t y = 0; y < image.height(); ++y) {
        for (std::size_t x = 0; x < image.width(); ++x) {
            for (std::size_t k = 0; k < c; ++k) {
                const double v = std::clamp(image.at(k, y, x), 0.0, 1.0);
                buffer[(y * image.width() + x) * c + k] = static_cast<png_byte>(std::lround(v * 255.0));
            }
        }
    }
    return encode_png_raw(buffer, image.width(), image.height(), c, 8);
}

void save_png(const std::filesystem::path& path, const ImageTensor& image) {
    write_file(path, encode_png(image));
}

Bytes encode_mask_png(const LabelMask& mask) {
    if (mask.region_count() > 65535) {
        throw ValidationError("labels", "a 16-bit mask holds at most 65535 labels");
    }
    std::vector<png_byte> buffer(mask.size() * 2);
    const auto labels = mask.labels();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto v = static_cast<std::uint16_t>(labels[i]);
        buffer[2 * i] = static_cast<png_byte>(v >> 8);
        buffer[2 * i + 1] = static_cast<png_byte>(v & 0xFF);
    }
    return encode_png_raw(buffer, mask.width(), mask.height(), 1, 16);
}

LabelMask decode_mask_png(std::span<const std::uint8_t> bytes, const std::map<std::int64_t, std::string>& names) {
    if (!is_png(bytes)) {
        throw DecodeError("label mask must be a PNG file");
    }
    const RawRaster raster = decode_png(bytes);
    if (raster.channels != 1) {
        throw UnsupportedFormatError("label mask must be single-channel, got " + std::to_string(raster.channels) +
                                     " channels");
    }
    std::vector<std::int64_t> raw(raster.samples.begin(), raster.samples.end());
    if (std::find(raw.begin(), raw.end(), 0) != raw.end()) {
        throw ValidationError("labels", "mask contains unlabeled pixels (value 0)");
    }
    return LabelMask::from_raw(raster.height, raster.width, raw, names);
}

std::string mask_sidecar_json(const LabelMask& mask) {
    nlohmann::json labels = nlohmann::json::array();
    for (std::size_t i = 0; i < mask.region_count(); ++i) {
        labels.push_back({{"id", i + 1}, {"name", mask.names()[i]}});
    }
    return nlohmann::json{{"labels", labels}}.dump(2) + "\n";
}

std::map<std::int64_t, std::string> parse_mask_sidecar(const std::string& json_text) {
    std::map<std::int64_t, std::string> names;
    try {
        const auto doc = nlohmann::json::parse(json_text);
        for (const auto& entry : doc.at("labels")) {
            names[entry.at("id").get<std::int64_t>()] = entry.at("name").get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("sidecar", std::string("malformed label sidecar: ") + e.what());
    }
    return names;
}

std::filesystem::path mask_sidecar_path(const std::filesystem::path& mask_path) {
    auto sidecar = mask_path;
    sidecar.replace_extension(".json");
    return sidecar;
}

void save_mask(const std::filesystem::path& path, const LabelMask& mask) {
    write_file(path, encode_mask_png(mask));
    write_text_file(mask_sidecar_path(path), mask_sidecar_json(mask));
}

LabelMask load_mask(const std::filesystem::path& path) {
    const Bytes bytes = read_file(path);
    std::map<std::int64_t, std::string> names;
    const auto sidecar = mask_sidecar_path(path);
    if (std::filesystem::is_regular_file(sidecar)) {
        names = parse_mask_sidecar(read_text_file(sidecar));
    }
    return decode_mask_png(bytes, names);
}

}  // namespace region_styler
