#include "fga/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

namespace fga {

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void write_fgat(const std::string& path, const Tensor& t) {
  if (t.rank() < 1) throw IoError("write_fgat: cannot serialize an empty tensor");
  std::vector<unsigned char> buf;
  buf.reserve(16 + static_cast<std::size_t>(t.numel()) * 4);
  buf.push_back('F');
  buf.push_back('G');
  buf.push_back('A');
  buf.push_back('T');
  put_u32(buf, 1u);
  buf.push_back(0);  // dtype: f32
  buf.push_back(static_cast<unsigned char>(t.rank()));
  for (std::int64_t d = 0; d < t.rank(); ++d) put_u64(buf, static_cast<std::uint64_t>(t.extent(d)));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_fgat: cannot open " + path);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write_fgat: short write to " + path);
}

Tensor read_fgat(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_fgat: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 10 || buf[0] != 'F' || buf[1] != 'G' || buf[2] != 'A' || buf[3] != 'T') {
    throw IoError("read_fgat: " + path + " is not an FGAT file");
  }
  const std::uint32_t version = get_u32(buf.data() + 4);
  if (version != 1) throw IoError("read_fgat: unsupported version " + std::to_string(version));
  if (buf[8] != 0) throw IoError("read_fgat: unsupported dtype " + std::to_string(buf[8]));
  const std::size_t ndim = buf[9];
  if (ndim == 0 || buf.size() < 10 + ndim * 8) throw IoError("read_fgat: truncated header in " + path);
  std::vector<std::int64_t> shape(ndim);
  std::size_t off = 10;
  for (std::size_t d = 0; d < ndim; ++d, off += 8) {
    const std::uint64_t e = get_u64(buf.data() + off);
    if (e == 0 || e > (1ull << 32)) throw IoError("read_fgat: bad extent in " + path);
    shape[d] = static_cast<std::int64_t>(e);
  }
  const std::int64_t n = shape_numel(shape);
  if (buf.size() != off + static_cast<std::size_t>(n) * 4) {
    throw IoError("read_fgat: payload size mismatch in " + path);
  }
  std::vector<double> values(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i, off += 4) {
    values[static_cast<std::size_t>(i)] =
        static_cast<double>(std::bit_cast<float>(get_u32(buf.data() + off)));
  }
  return Tensor(std::move(shape), std::move(values));
}

Tensor read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int channels = 0;
  volatile bool ok = false;
  if (png && info && !setjmp(png_jmpbuf(png))) {
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    channels = static_cast<int>(png_get_channels(png, info));
    if ((channels == 1 || channels == 3) && width > 0 && height > 0) {
      const std::size_t rowbytes = png_get_rowbytes(png, info);
      pixels.resize(rowbytes * height);
      rows.resize(height);
      for (png_uint_32 i = 0; i < height; ++i) rows[i] = pixels.data() + i * rowbytes;
      png_read_image(png, rows.data());
      png_read_end(png, nullptr);
      ok = true;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  if (!ok) throw IoError("read_png: failed to decode " + path);

  const std::int64_t h = height, w = width, c = channels;
  Tensor out({c, h, w});
  for (std::int64_t i = 0; i < h; ++i) {
    const unsigned char* row = pixels.data() + static_cast<std::size_t>(i) * w * c;
    for (std::int64_t j = 0; j < w; ++j) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        out.at(ch, i, j) = static_cast<double>(row[j * c + ch]) / 255.0;
      }
    }
  }
  return out;
}

void write_png(const std::string& path, const Tensor& img) {
  Tensor src = img;
  if (src.rank() == 2) src = Tensor({1, src.extent(0), src.extent(1)}, std::vector<double>(src.values()));
  if (src.rank() != 3 || (src.extent(0) != 1 && src.extent(0) != 3)) {
    throw ShapeError("write_png: expected [H, W] or C x H x W with C = 1 or 3, got " + img.shape_str());
  }
  const std::int64_t c = src.extent(0), h = src.extent(1), w = src.extent(2);

  std::vector<unsigned char> pixels(static_cast<std::size_t>(h * w * c));
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (std::int64_t i = 0; i < h; ++i) {
    unsigned char* row = pixels.data() + static_cast<std::size_t>(i) * w * c;
    rows[static_cast<std::size_t>(i)] = row;
    for (std::int64_t j = 0; j < w; ++j) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double v = src.at(ch, i, j);
        if (!(v >= 0.0)) v = 0.0;  // also maps NaN to 0
        if (v > 1.0) v = 1.0;
        row[j * c + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }

  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  volatile bool ok = false;
  if (png && info && !setjmp(png_jmpbuf(png))) {
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    ok = true;
  }
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  if (!ok) throw IoError("write_png: failed to encode " + path);
}

Tensor luminance(const Tensor& img) {
  if (img.rank() == 2) return img;
  if (img.rank() == 3 && img.extent(0) == 1) {
    return Tensor({img.extent(1), img.extent(2)}, std::vector<double>(img.values()));
  }
  if (img.rank() != 3 || img.extent(0) != 3) {
    throw ShapeError("luminance: expected 3 x H x W, got " + img.shape_str());
  }
  const std::int64_t h = img.extent(1), w = img.extent(2);
  Tensor out({h, w});
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      out.at(i, j) = 0.299 * img.at(0, i, j) + 0.587 * img.at(1, i, j) + 0.114 * img.at(2, i, j);
    }
  }
  return out;
}

std::string fnv1a64_file_hex(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("fnv1a64: cannot open " + path);
  std::uint64_t hash = 0xcbf29ce484222325ull;
  char chunk[4096];
  while (f.read(chunk, sizeof(chunk)) || f.gcount() > 0) {
    const std::streamsize n = f.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      hash ^= static_cast<unsigned char>(chunk[i]);
      hash *= 0x100000001b3ull;
    }
    if (!f) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
  return std::string(hex);
}

}  // namespace fga
