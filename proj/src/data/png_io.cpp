#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include "segvae/data/dataset.hpp"

namespace segvae::data {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void on_png_error(png_structp png, png_const_charp message) {
    auto* text = static_cast<std::string*>(png_get_error_ptr(png));
    if (text) *text = message;
    std::longjmp(png_jmpbuf(png), 1);
}

void on_png_warning(png_structp, png_const_charp) {}

struct ReadState {
    core::IndexMap out;
    std::vector<png_bytep> rows;
};

// Kept out of line so no container code is inlined between setjmp and longjmp.
[[gnu::noinline]] void allocate_rows(ReadState& st, int height, int width) {
    st.out.width = width;
    st.out.height = height;
    st.out.pixels.assign(static_cast<std::size_t>(width) * height, 0);
    st.rows.resize(height);
    for (int y = 0; y < height; ++y) st.rows[y] = st.out.pixels.data() + static_cast<std::size_t>(y) * width;
}

// Plain-C body: the setjmp frame holds no C++ objects with nontrivial state.
bool write_png_body(std::FILE* file, int height, int width, const png_color* colors, int n_colors, png_bytep* rows,
                    std::string& error) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, on_png_error, on_png_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        error = "libpng initialisation failed";
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_init_io(png, file);
    png_set_compression_level(png, 9);
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_PLTE(png, info, colors, n_colors);
    png_write_info(png, info);
    png_write_image(png, rows);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

}  // namespace

void write_index_png(const std::string& path, const core::IndexMap& index, const std::vector<core::Rgb>& palette) {
    if (index.pixels.size() != static_cast<std::size_t>(index.height) * index.width || index.height <= 0) {
        throw std::invalid_argument("write_index_png: malformed index map for " + path);
    }
    if (palette.size() > 255) throw std::invalid_argument("write_index_png: palette too large");
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw std::runtime_error("cannot open " + path + " for writing");

    std::vector<png_color> colors(palette.size() + 1);
    colors[0] = {0, 0, 0};
    for (std::size_t i = 0; i < palette.size(); ++i) colors[i + 1] = {palette[i].r, palette[i].g, palette[i].b};
    std::vector<png_bytep> rows(index.height);
    for (int y = 0; y < index.height; ++y) {
        rows[y] = const_cast<png_bytep>(index.pixels.data() + static_cast<std::size_t>(y) * index.width);
    }
    std::string error;
    if (!write_png_body(file.get(), index.height, index.width, colors.data(), static_cast<int>(colors.size()),
                        rows.data(), error)) {
        throw std::runtime_error("PNG write failed for " + path + ": " + error);
    }
}

core::IndexMap read_index_png(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw std::runtime_error("cannot open " + path);
    png_byte signature[8];
    if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
        throw std::runtime_error(path + " is not a PNG file");
    }

    std::string error;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, on_png_error, on_png_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng initialisation failed");
    }
    auto holder = std::make_unique<ReadState>();
    ReadState& st = *holder;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("PNG read failed for " + path + ": " + error);
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    // Label maps are stored as palette indices; 8-bit grayscale holds the same
    // values and is accepted too.
    const bool ok = (color == PNG_COLOR_TYPE_PALETTE && depth <= 8) || (color == PNG_COLOR_TYPE_GRAY && depth == 8);
    if (!ok) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error(path + ": expected an 8-bit paletted or grayscale label map");
    }
    if (depth < 8) png_set_packing(png);
    png_read_update_info(png, info);
    allocate_rows(st, static_cast<int>(png_get_image_height(png, info)),
                  static_cast<int>(png_get_image_width(png, info)));
    png_read_image(png, st.rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return std::move(st.out);
}

}  // namespace segvae::data
