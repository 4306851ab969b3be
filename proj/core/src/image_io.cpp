#include "motionflow/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace motionflow {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

struct FileCloser {
    FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

Image8 read_png_file(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) fail("cannot open " + path);
    FileCloser closer{f};

    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("corrupt PNG: " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("unsupported PNG channel count in " + path);
    }
    Image8 img(static_cast<int>(h), static_cast<int>(w), channels);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 i = 0; i < h; ++i)
        rows[i] = img.data.data() + static_cast<size_t>(i) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

Image8 read_pgm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P2") fail("not a PGM file: " + path);
    auto next_int = [&]() {
        int v;
        while (in >> std::ws) {
            if (in.peek() == '#') {
                std::string line;
                std::getline(in, line);
                continue;
            }
            break;
        }
        if (!(in >> v)) fail("truncated PGM header: " + path);
        return v;
    };
    const int w = next_int(), h = next_int(), maxval = next_int();
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        fail("unsupported PGM header in " + path);
    Image8 img(h, w, 1);
    if (magic == "P5") {
        in.get();  // single whitespace after maxval
        in.read(reinterpret_cast<char*>(img.data.data()),
                static_cast<std::streamsize>(img.data.size()));
        if (in.gcount() != static_cast<std::streamsize>(img.data.size()))
            fail("truncated PGM payload: " + path);
    } else {
        for (auto& px : img.data) {
            int v = next_int();
            px = static_cast<uint8_t>(v);
        }
    }
    return img;
}

}  // namespace

Image8 read_image(const std::string& path) {
    const auto dot = path.find_last_of('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "pgm" || ext == "PGM") return read_pgm_file(path);
    return read_png_file(path);
}

void write_png(const std::string& path, const Image8& image) {
    require(image.channels == 1 || image.channels == 3,
            "write_png: 1 or 3 channels");
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) fail("cannot write " + path);
    FileCloser closer{f};

    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("PNG write failed: " + path);
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, image.width, image.height, 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(image.height);
    for (int i = 0; i < image.height; ++i)
        rows[i] = const_cast<png_bytep>(
            image.data.data() + static_cast<size_t>(i) * image.width * image.channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_pgm(const std::string& path, const Image8& image) {
    require(image.channels == 1, "write_pgm: single channel only");
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot write " + path);
    out << "P5\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.data.data()),
              static_cast<std::streamsize>(image.data.size()));
}

Tensor3 to_grayscale(const Image8& image) {
    Tensor3 out(image.height, image.width, 1);
    const size_t n = static_cast<size_t>(image.height) * image.width;
    if (image.channels == 1) {
        for (size_t p = 0; p < n; ++p)
            out.data[p] = static_cast<Scalar>(image.data[p]) / 255;
    } else {
        for (size_t p = 0; p < n; ++p) {
            const Scalar r = image.data[3 * p + 0];
            const Scalar g = image.data[3 * p + 1];
            const Scalar b = image.data[3 * p + 2];
            out.data[p] = (0.299 * r + 0.587 * g + 0.114 * b) / 255;
        }
    }
    return out;
}

Image8 from_grayscale(const Tensor3& plane) {
    require(plane.channels == 1, "from_grayscale: single channel only");
    Image8 img(plane.height, plane.width, 1);
    for (size_t p = 0; p < plane.data.size(); ++p) {
        const Scalar v = std::min(Scalar(1), std::max(Scalar(0), plane.data[p]));
        img.data[p] = static_cast<uint8_t>(std::lround(v * 255));
    }
    return img;
}

}  // namespace motionflow
