#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "amfusion/gray_image.hpp"
#include "amfusion/tensor.hpp"

namespace amfusion {

namespace detail {

inline int pnm_token(std::istream& in) {
    // skip whitespace and '#' comments, then read one unsigned integer
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {}
        } else if (!std::isspace(ch)) {
            in.unget();
            break;
        }
    }
    int value;
    if (!(in >> value)) throw IoError("pgm: malformed header token");
    return value;
}

inline GrayImageU8 load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5')
        throw IoError(path + ": not a binary PGM (P5) file");
    const int w = pnm_token(in);
    const int h = pnm_token(in);
    const int maxval = pnm_token(in);
    if (maxval != 255)
        throw IoError(path + ": unsupported PGM maxval " + std::to_string(maxval));
    in.get();  // single whitespace byte before the raster
    GrayImageU8 img(w, h);
    in.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.size()))
        throw IoError(path + ": truncated PGM raster");
    return img;
}

inline GrayImageU8 load_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError(path + ": libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError(path + ": PNG decode error");
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    const png_byte color = png_get_color_type(png, info);
    if (depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError(path + ": unsupported 16-bit PNG");
    }
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(w) * channels);
    GrayImageU8 img(w, h);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            if (channels == 1) {
                img.at(y, x) = row[x];
            } else if (channels == 3) {
                const double lum = 0.299 * row[3 * x] + 0.587 * row[3 * x + 1] +
                                   0.114 * row[3 * x + 2];
                img.at(y, x) = static_cast<std::uint8_t>(std::lround(lum));
            } else {
                png_destroy_read_struct(&png, &info, nullptr);
                std::fclose(fp);
                throw IoError(path + ": unsupported PNG channel count " +
                              std::to_string(channels));
            }
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

inline void save_png(const GrayImageU8& img, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError(path + ": PNG encode error");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(&img.px[static_cast<std::size_t>(y) * img.width]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace detail

inline GrayImageU8 load_gray(const std::string& path) {
    if (detail::ends_with(path, ".pgm")) return detail::load_pgm(path);
    if (detail::ends_with(path, ".png")) return detail::load_png(path);
    // sniff by magic for extensionless files
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] == 'P' && magic[1] == '5') return detail::load_pgm(path);
    throw IoError(path + ": unsupported image format (expected PGM P5 or PNG)");
}

inline void save_gray_image(const GrayImageU8& img, const std::string& path) {
    if (detail::ends_with(path, ".png")) {
        detail::save_png(img, path);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.px.data()),
              static_cast<std::streamsize>(img.size()));
    if (!out) throw IoError("write failed for " + path);
}

// center-crop to side x side (floor-biased offsets), then map to [-1,1]
inline Tensor preprocess(const GrayImageU8& img, int side) {
    if (img.width < side || img.height < side)
        throw IoError("image " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + " smaller than crop side " +
                      std::to_string(side));
    const int ox = (img.width - side) / 2;
    const int oy = (img.height - side) / 2;
    Tensor t = Tensor::zeros({1, 1, side, side});
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            t.at4(0, 0, y, x) = static_cast<float>(img.at(oy + y, ox + x)) / 127.5f - 1.0f;
    return t;
}

// inverse mapping round((v+1)*127.5) clamped to [0,255]
inline GrayImageU8 tensor_to_gray(const Tensor& t) {
    if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 1)
        throw ShapeError("tensor_to_gray: expected [1,1,H,W]");
    GrayImageU8 img(t.dim(3), t.dim(2));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const long v = std::lround((t.at4(0, 0, y, x) + 1.0f) * 127.5f);
            img.at(y, x) = static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
        }
    return img;
}

inline void save_gray(const Tensor& t, const std::string& path) {
    save_gray_image(tensor_to_gray(t), path);
}

struct PairEntry {
    std::string id;       // shared filename stem
    std::string ir_path;
    std::string vis_path;
};

struct PairListing {
    std::vector<PairEntry> pairs;       // lexicographic by id
    std::vector<std::string> unmatched; // files without a partner
};

// matched by identical filename stem, case-sensitive
inline PairListing discover_pairs(const std::string& ir_dir, const std::string& vis_dir) {
    namespace fs = std::filesystem;
    auto collect = [](const std::string& dir) {
        std::map<std::string, std::string> stems;  // stem -> path
        if (!fs::is_directory(dir)) throw IoError(dir + " is not a directory");
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            const std::string ext = e.path().extension().string();
            if (ext != ".pgm" && ext != ".png") continue;
            stems[e.path().stem().string()] = e.path().string();
        }
        return stems;
    };
    const auto ir = collect(ir_dir);
    const auto vis = collect(vis_dir);
    PairListing out;
    for (const auto& [stem, path] : ir) {
        auto it = vis.find(stem);
        if (it != vis.end())
            out.pairs.push_back({stem, path, it->second});
        else
            out.unmatched.push_back(path);
    }
    for (const auto& [stem, path] : vis)
        if (!ir.count(stem)) out.unmatched.push_back(path);
    return out;
}

} // namespace amfusion
