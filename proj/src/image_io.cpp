#include "uvcgan/data/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <memory>

namespace uvcgan {

namespace {

std::string lower_ext(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    return ext;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image8 load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failed");
    }

    std::vector<png_bytep> rows;
    Image8 img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    // Normalize every variant to 8-bit RGB.
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    img.width = Index(png_get_image_width(png, info));
    img.height = Index(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != std::size_t(img.width) * 3u) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unexpected row layout in " + path);
    }

    img.pixels.resize(img.expected_bytes());
    rows.resize(std::size_t(img.height));
    for (Index y = 0; y < img.height; ++y)
        rows[std::size_t(y)] = img.pixels.data() + std::size_t(y) * std::size_t(img.width) * 3u;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void save_png(const std::string& path, const Image8& img) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot create " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (Index y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() +
                                                 std::size_t(y) * std::size_t(img.width) * 3u));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

int ppm_next_token(std::FILE* f) {
    // Skips whitespace and '#' comments, returns the first token character.
    int c = std::fgetc(f);
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = std::fgetc(f);
        } else if (std::isspace(c)) {
            c = std::fgetc(f);
        } else {
            break;
        }
    }
    return c;
}

long ppm_read_number(std::FILE* f, const std::string& path) {
    int c = ppm_next_token(f);
    if (c == EOF || !std::isdigit(c)) throw IoError("malformed PPM header in " + path);
    long v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        if (v > 1'000'000'000L) throw IoError("absurd PPM dimension in " + path);
        c = std::fgetc(f);
    }
    if (c != EOF) std::ungetc(c, f);
    return v;
}

Image8 load_ppm(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path);
    std::FILE* f = fp.get();

    if (std::fgetc(f) != 'P' || std::fgetc(f) != '6')
        throw IoError("not a binary PPM: " + path);
    const long w = ppm_read_number(f, path);
    const long h = ppm_read_number(f, path);
    const long maxval = ppm_read_number(f, path);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw IoError("unsupported PPM geometry or depth in " + path);
    const int sep = std::fgetc(f);
    if (sep == EOF || !std::isspace(sep)) throw IoError("malformed PPM header in " + path);

    Image8 img;
    img.width = Index(w);
    img.height = Index(h);
    img.pixels.resize(img.expected_bytes());
    if (std::fread(img.pixels.data(), 1, img.pixels.size(), f) != img.pixels.size())
        throw IoError("truncated PPM payload in " + path);
    return img;
}

void save_ppm(const std::string& path, const Image8& img) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot create " + path);
    const std::string header =
        "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    if (std::fwrite(header.data(), 1, header.size(), fp.get()) != header.size() ||
        std::fwrite(img.pixels.data(), 1, img.pixels.size(), fp.get()) != img.pixels.size())
        throw IoError("failed to write " + path);
}

}  // namespace

Image8 load_image(const std::string& path) {
    const std::string ext = lower_ext(path);
    Image8 img;
    if (ext == "png")
        img = load_png(path);
    else if (ext == "ppm")
        img = load_ppm(path);
    else
        throw IoError("unsupported image format: " + path);
    if (img.width <= 0 || img.height <= 0 || img.pixels.size() != img.expected_bytes())
        throw IoError("decoded image is malformed: " + path);
    return img;
}

void save_image(const std::string& path, const Image8& img) {
    if (img.width <= 0 || img.height <= 0 || img.pixels.size() != img.expected_bytes())
        throw ValueError("save_image: malformed image");
    const std::string ext = lower_ext(path);
    if (ext == "png")
        save_png(path, img);
    else if (ext == "ppm")
        save_ppm(path, img);
    else
        throw IoError("unsupported image format: " + path);
}

}  // namespace uvcgan
