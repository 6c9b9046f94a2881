#include "spmim/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "spmim/errors.hpp"

namespace spmim {
namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensor from_interleaved(const unsigned char* data, int channels, int height, int width) {
  Tensor out({3, height, width});
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const int src = channels == 1 ? 0 : c;
      out[static_cast<std::size_t>(c) * plane + i] = data[i * channels + src] / 255.0;
    }
  }
  return out;
}

ImageRecord decode_png(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw FormatError("unsupported PNG (only 8-bit images are accepted): " + path.string());
  }
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int channels = gray ? 1 : 3;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  ImageRecord rec;
  rec.pixels = from_interleaved(buffer.data(), channels, static_cast<int>(image.height),
                                static_cast<int>(image.width));
  return rec;
}

// Netpbm header token, skipping whitespace and comments.
bool next_token(const std::vector<unsigned char>& b, std::size_t& pos, std::string& tok) {
  tok.clear();
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#') tok.push_back(static_cast<char>(b[pos++]));
  return !tok.empty();
}

ImageRecord decode_pnm(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  std::size_t pos = 0;
  std::string magic, ws, hs, ms;
  if (!next_token(bytes, pos, magic) || !next_token(bytes, pos, ws) || !next_token(bytes, pos, hs) ||
      !next_token(bytes, pos, ms)) {
    throw DataError("truncated PNM header in " + path.string());
  }
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(ws);
    height = std::stoi(hs);
    maxval = std::stoi(ms);
  } catch (const std::exception&) {
    throw DataError("malformed PNM header in " + path.string());
  }
  if (width <= 0 || height <= 0) throw DataError("invalid PNM extent in " + path.string());
  if (maxval != 255) throw FormatError("only 8-bit (maxval 255) PNM is supported: " + path.string());
  const int channels = (magic == "P6" || magic == "P3") ? 3 : 1;
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  std::vector<unsigned char> data(count);
  if (magic == "P6" || magic == "P5") {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + count) throw DataError("truncated PNM payload in " + path.string());
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), count, data.begin());
  } else {
    std::string tok;
    for (std::size_t i = 0; i < count; ++i) {
      if (!next_token(bytes, pos, tok)) throw DataError("truncated PNM payload in " + path.string());
      const int v = std::stoi(tok);
      if (v < 0 || v > 255) throw DataError("PNM sample out of range in " + path.string());
      data[i] = static_cast<unsigned char>(v);
    }
  }
  ImageRecord rec;
  rec.pixels = from_interleaved(data.data(), channels, height, width);
  return rec;
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Interleaved 8-bit samples plus channel count for a [C,H,W] or [H,W] tensor.
std::vector<unsigned char> to_interleaved(const Tensor& image, int& channels, int& height, int& width) {
  if (image.rank() == 2) {
    channels = 1;
    height = image.dim(0);
    width = image.dim(1);
  } else if (image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3)) {
    channels = image.dim(0);
    height = image.dim(1);
    width = image.dim(2);
  } else {
    throw DimensionError("image must be [H,W], [1,H,W] or [3,H,W]; got " + shape_to_string(image.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  std::vector<unsigned char> out(plane * channels);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < channels; ++c) out[i * channels + c] = to_byte(image[static_cast<std::size_t>(c) * plane + i]);
  return out;
}

}  // namespace

ImageRecord load_image(const std::filesystem::path& path) {
  std::vector<unsigned char> bytes = read_file(path);
  static const unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  ImageRecord rec;
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) {
    rec = decode_png(bytes, path);
  } else if (bytes.size() >= 2 && bytes[0] == 'P' && std::strchr("2356", bytes[1]) && bytes[1] != 0) {
    rec = decode_pnm(bytes, path);
  } else {
    throw FormatError("unsupported image format (expected PNG or PPM/PGM): " + path.string());
  }
  rec.id = path.stem().string();
  rec.source = path.string();
  return rec;
}

void save_png(const std::filesystem::path& path, const Tensor& image) {
  int channels, height, width;
  std::vector<unsigned char> data = to_interleaved(image, channels, height, width);
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, data.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

void save_ppm(const std::filesystem::path& path, const Tensor& image) {
  int channels, height, width;
  std::vector<unsigned char> data = to_interleaved(image, channels, height, width);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << (channels == 3 ? "P6" : "P5") << '\n' << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

Tensor resize_bilinear(const Tensor& image, int height, int width) {
  if (image.rank() != 3) throw DimensionError("resize_bilinear expects [C,H,W]");
  if (height <= 0 || width <= 0) throw ArgumentError("resize_bilinear: non-positive target size");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image;
  Tensor out({c, height, width});
  const double sy = static_cast<double>(h) / height, sx = static_cast<double>(w) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = static_cast<std::size_t>(ch) * h * w;
        const double top = image[base + y0 * w + x0] * (1 - tx) + image[base + y0 * w + x1] * tx;
        const double bot = image[base + y1 * w + x0] * (1 - tx) + image[base + y1 * w + x1] * tx;
        out[(static_cast<std::size_t>(ch) * height + y) * width + x] = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

Tensor luminance(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("luminance expects [3,H,W]");
  const int h = image.dim(1), w = image.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({h, w});
  for (std::size_t i = 0; i < plane; ++i) {
    out[i] = 0.299 * image[i] + 0.587 * image[plane + i] + 0.114 * image[2 * plane + i];
  }
  return out;
}

}  // namespace spmim
