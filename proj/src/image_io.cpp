#include "leansplat/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <vector>

namespace leansplat {

namespace {
struct FileCloser {
    FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};
}  // namespace

void save_png(const std::string& path, const Array& rgb) {
    LS_CHECK(rgb.ndim() == 3 && rgb.dim(0) == 3, "save_png expects [3,H,W], got ", rgb.shape_str());
    const int H = static_cast<int>(rgb.dim(1));
    const int W = static_cast<int>(rgb.dim(2));

    FILE* f = std::fopen(path.c_str(), "wb");
    LS_CHECK_DATA(f != nullptr, "cannot open '", path, "' for writing");
    FileCloser closer{f};

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng failed while writing '" + path + "'");
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(W) * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = rgb.value_at((static_cast<int64_t>(c) * H + y) * W + x);
                v = std::min(1.0, std::max(0.0, v));
                row[static_cast<size_t>(x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Array load_png(const std::string& path, DType dtype) {
    FILE* f = std::fopen(path.c_str(), "rb");
    LS_CHECK_DATA(f != nullptr, "cannot open image '", path, "'");
    FileCloser closer{f};

    png_byte header[8];
    LS_CHECK_DATA(std::fread(header, 1, 8, f) == 8 && !png_sig_cmp(header, 0, 8), "'", path,
                  "' is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng failed while reading '" + path + "'");
    }
    png_init_io(png, f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int W = static_cast<int>(png_get_image_width(png, info));
    const int H = static_cast<int>(png_get_image_height(png, info));
    // Normalize exotic inputs to 8-bit RGB.
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    LS_CHECK_DATA(png_get_channels(png, info) == 3, "'", path, "': expected 3 channels after decode");

    std::vector<png_byte> data(static_cast<size_t>(H) * W * 3);
    std::vector<png_bytep> rows(static_cast<size_t>(H));
    for (int y = 0; y < H; ++y) rows[static_cast<size_t>(y)] = data.data() + static_cast<size_t>(y) * W * 3;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Array out({3, H, W}, dtype);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.set_value((static_cast<int64_t>(c) * H + y) * W + x,
                              data[(static_cast<size_t>(y) * W + x) * 3 + c] / 255.0);
            }
        }
    }
    return out;
}

}  // namespace leansplat
