#include "msd/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

namespace msd {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double intensity(double v) { return std::clamp((v + 3.0) / 6.0, 0.0, 1.0); }

}  // namespace

void write_file_atomic(const std::string& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
}

std::string encode_raw(const LatentImage& z) {
    std::string out = "MSD1";
    put_u32(out, static_cast<std::uint32_t>(z.channels()));
    put_u32(out, static_cast<std::uint32_t>(z.height()));
    put_u32(out, static_cast<std::uint32_t>(z.width()));
    out.reserve(out.size() + 8 * z.size());
    for (double v : z.data()) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    return out;
}

LatentImage decode_raw(const std::string& bytes) {
    if (bytes.size() < 16 || bytes.compare(0, 4, "MSD1") != 0) throw std::runtime_error("not an MSD1 raw dump");
    const std::size_t c = get_u32(bytes, 4);
    const std::size_t h = get_u32(bytes, 8);
    const std::size_t w = get_u32(bytes, 12);
    if (bytes.size() != 16 + 8 * c * h * w) throw std::runtime_error("raw dump length does not match header");
    std::vector<double> data(c * h * w);
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[16 + 8 * i + b])) << (8 * b);
        }
        data[i] = std::bit_cast<double>(bits);
    }
    return LatentImage(c, h, w, std::move(data));
}

void write_raw(const std::string& path, const LatentImage& z) { write_file_atomic(path, encode_raw(z)); }

LatentImage read_raw(const std::string& path) { return decode_raw(read_file(path)); }

std::string encode_png(const LatentImage& z) {
    const bool rgb = z.channels() == 3;
    const std::size_t H = z.height();
    const std::size_t W = z.width();
    const std::size_t row_bytes = rgb ? 3 * W : 2 * W;
    std::vector<unsigned char> pixels(H * row_bytes);
    for (std::size_t r = 0; r < H; ++r) {
        unsigned char* row = pixels.data() + r * row_bytes;
        for (std::size_t col = 0; col < W; ++col) {
            if (rgb) {
                for (std::size_t c = 0; c < 3; ++c) {
                    row[3 * col + c] = static_cast<unsigned char>(std::lround(intensity(z.at(c, r, col)) * 255.0));
                }
            } else {
                const auto v = static_cast<std::uint16_t>(std::lround(intensity(z.at(0, r, col)) * 65535.0));
                row[2 * col] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
                row[2 * col + 1] = static_cast<unsigned char>(v & 0xff);
            }
        }
    }

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    std::string out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("PNG encoding failed");
    }
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t len) {
            static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), len);
        },
        nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), rgb ? 8 : 16,
                 rgb ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t r = 0; r < H; ++r) png_write_row(png, pixels.data() + r * row_bytes);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_png(const std::string& path, const LatentImage& z) { write_file_atomic(path, encode_png(z)); }

nlohmann::json to_json(const StepTrace& trace) {
    return {{"t", trace.t},
            {"md_loss", trace.md_loss},
            {"ms_loss", trace.ms_loss},
            {"guidance_invocations", trace.guidance_invocations},
            {"duration_ms", trace.duration_ms}};
}

std::string trace_line(const StepTrace& trace) { return to_json(trace).dump() + "\n"; }

}  // namespace msd
