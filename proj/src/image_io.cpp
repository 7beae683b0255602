#include "mlcrnn/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include "mlcrnn/error.hpp"

namespace mlcrnn {

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp, png_const_charp message) { throw IoError(message); }
void png_warning_handler(png_structp, png_const_charp) {}

Image8 read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError("cannot open image '" + path.string() + "'");
  png_byte signature[8];
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  if (png == nullptr) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_read_struct(png, info, nullptr); }
  } guard{&png, &info};
  if (info == nullptr) throw IoError("libpng initialization failed");

  try {
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    Image8 img(png_get_image_height(png, info), png_get_image_width(png, info), png_get_channels(png, info));
    if (img.channels != 1 && img.channels != 3) {
      throw IoError("'" + path.string() + "' has an unsupported channel layout");
    }
    std::vector<png_bytep> rows(img.height);
    for (std::size_t r = 0; r < img.height; ++r) rows[r] = img.data.data() + r * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    return img;
  } catch (const IoError& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Image8& img) {
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError("cannot write image '" + path.string() + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  if (png == nullptr) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_write_struct(png, info); }
  } guard{&png, &info};
  if (info == nullptr) throw IoError("libpng initialization failed");

  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed settings and no timestamp keep the bytes reproducible.
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.height);
  for (std::size_t r = 0; r < img.height; ++r) {
    rows[r] = const_cast<png_bytep>(img.data.data() + r * img.width * img.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
}

/// Reads the next header token, skipping whitespace and comments.
std::string netpbm_token(std::istream& in) {
  std::string token;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  while (c != EOF && !std::isspace(c)) {
    token.push_back(static_cast<char>(c));
    c = in.get();
  }
  return token;
}

Image8 read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path.string() + "'");
  const std::string magic = netpbm_token(in);
  if (magic != "P5" && magic != "P6") throw IoError("'" + path.string() + "' is not a binary PGM/PPM file");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(netpbm_token(in));
    h = std::stoul(netpbm_token(in));
    maxval = std::stoul(netpbm_token(in));
  } catch (const std::exception&) {
    throw IoError("'" + path.string() + "' has a malformed header");
  }
  if (maxval != 255 || w == 0 || h == 0) {
    throw IoError("'" + path.string() + "' must be an 8-bit image with positive size");
  }
  Image8 img(h, w, magic == "P5" ? 1 : 3);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.data.size())) {
    throw IoError("'" + path.string() + "' is truncated");
  }
  return img;
}

void write_netpbm(const std::filesystem::path& path, const Image8& img, bool color) {
  if ((img.channels == 3) != color) {
    throw DimensionError("'" + path.string() + "': " + (color ? "PPM needs 3 channels" : "PGM needs 1 channel"));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image '" + path.string() + "'");
  out << (color ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

Image8 read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("image file not found: '" + path.string() + "'");
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm" || ext == ".ppm") return read_netpbm(path);
  throw IoError("unsupported image format '" + path.string() + "' (use .png, .pgm or .ppm)");
}

void write_image(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw DimensionError("write_image: only 1- or 3-channel images can be written");
  }
  if (image.data.size() != image.height * image.width * image.channels || image.data.empty()) {
    throw DimensionError("write_image: raster size does not match its dimensions");
  }
  const std::string ext = lower_extension(path);
  if (ext == ".png") return write_png(path, image);
  if (ext == ".pgm") return write_netpbm(path, image, false);
  if (ext == ".ppm") return write_netpbm(path, image, true);
  throw IoError("unsupported image format '" + path.string() + "' (use .png, .pgm or .ppm)");
}

template <typename T>
FeatureMap<T> image_to_map(const Image8& image) {
  FeatureMap<T> map(image.height, image.width, image.channels);
  auto dst = map.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(image.data[i]) / T(255);
  return map;
}

template <typename T>
Image8 map_to_image(const FeatureMap<T>& map) {
  Image8 img(map.height(), map.width(), map.channels());
  const auto src = map.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double v = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
    img.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

template FeatureMap<float> image_to_map<float>(const Image8&);
template FeatureMap<double> image_to_map<double>(const Image8&);
template Image8 map_to_image<float>(const FeatureMap<float>&);
template Image8 map_to_image<double>(const FeatureMap<double>&);

}  // namespace mlcrnn
