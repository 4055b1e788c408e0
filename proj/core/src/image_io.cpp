#include "istr/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "istr/errors.hpp"

namespace istr {

namespace {

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::string& path, const void* data, size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) throw IoError("short write to " + path);
}

void check_dims(const ImageU8& img, const char* what) {
  if (img.height < 1 || img.width < 1 || (img.channels != 1 && img.channels != 3)) {
    throw ArgumentError(std::string(what) + ": bad image geometry");
  }
  if (img.pixels.size() != img.expected_size()) {
    throw DimensionError(std::string(what) + ": pixel buffer size mismatch");
  }
}

uint32_t be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void png_chunk(std::vector<uint8_t>& out, const char type[5],
               const std::vector<uint8_t>& body) {
  put_be32(out, static_cast<uint32_t>(body.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), body.begin(), body.end());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + start, static_cast<uInt>(out.size() - start));
  put_be32(out, static_cast<uint32_t>(crc));
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

ImageU8 read_pgm(const std::string& path) {
  std::vector<uint8_t> bytes = read_file_bytes(path);
  size_t pos = 0;
  auto next_token = [&]() -> std::string {
    // skip whitespace and '#' comment lines
    while (pos < bytes.size()) {
      uint8_t c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(c)) {
        ++pos;
      } else {
        break;
      }
    }
    size_t start = pos;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
    if (start == pos) throw FormatError(path + ": truncated PGM header");
    return std::string(bytes.begin() + static_cast<long>(start),
                       bytes.begin() + static_cast<long>(pos));
  };
  if (next_token() != "P5") throw FormatError(path + ": not a binary PGM (want P5)");
  int w, h, maxval;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw FormatError(path + ": malformed PGM header");
  }
  if (w < 1 || h < 1) throw FormatError(path + ": bad PGM dimensions");
  if (maxval != 255) throw FormatError(path + ": only maxval 255 is supported");
  ++pos;  // single whitespace after maxval
  const size_t need = static_cast<size_t>(w) * static_cast<size_t>(h);
  if (bytes.size() - pos < need) throw FormatError(path + ": truncated PGM payload");
  ImageU8 img;
  img.channels = 1;
  img.height = h;
  img.width = w;
  img.pixels.assign(bytes.begin() + static_cast<long>(pos),
                    bytes.begin() + static_cast<long>(pos + need));
  return img;
}

void write_pgm(const std::string& path, const ImageU8& img) {
  check_dims(img, "write_pgm");
  if (img.channels != 1) throw ArgumentError("write_pgm: grayscale only");
  std::string header = "P5\n" + std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  write_file_bytes(path, out.data(), out.size());
}

static const uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

ImageU8 read_png(const std::string& path) {
  std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngMagic, 8) != 0) {
    throw FormatError(path + ": not a PNG file");
  }
  size_t pos = 8;
  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<uint8_t> idat;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= bytes.size() && !saw_iend) {
    uint32_t len = be32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw FormatError(path + ": truncated chunk");
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const uint8_t* body = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw FormatError(path + ": bad IHDR length");
      width = static_cast<int>(be32(body));
      height = static_cast<int>(be32(body + 4));
      bit_depth = body[8];
      color_type = body[9];
      if (body[12] != 0) throw FormatError(path + ": interlaced PNG not supported");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), body, body + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || idat.empty()) throw FormatError(path + ": incomplete PNG");
  if (width < 1 || height < 1) throw FormatError(path + ": bad PNG dimensions");
  if (bit_depth != 8) throw FormatError(path + ": only 8-bit PNG supported");
  int src_channels;
  switch (color_type) {
    case 0: src_channels = 1; break;
    case 2: src_channels = 3; break;
    case 4: src_channels = 2; break;
    case 6: src_channels = 4; break;
    default: throw FormatError(path + ": unsupported PNG color type");
  }

  const size_t stride = static_cast<size_t>(width) * src_channels;
  std::vector<uint8_t> raw(static_cast<size_t>(height) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  int zret = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zret != Z_OK || raw_len != raw.size()) {
    throw FormatError(path + ": PNG inflate failed");
  }

  // undo per-row filters in place into `flat`
  std::vector<uint8_t> flat(static_cast<size_t>(height) * stride);
  const int bpp = src_channels;
  for (int y = 0; y < height; ++y) {
    const uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
    const uint8_t* src = &raw[static_cast<size_t>(y) * (stride + 1) + 1];
    uint8_t* dst = &flat[static_cast<size_t>(y) * stride];
    const uint8_t* up = y > 0 ? &flat[static_cast<size_t>(y - 1) * stride] : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      const int a = x >= static_cast<size_t>(bpp) ? dst[x - bpp] : 0;
      const int b = up ? up[x] : 0;
      const int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - bpp] : 0;
      int v;
      switch (filter) {
        case 0: v = src[x]; break;
        case 1: v = src[x] + a; break;
        case 2: v = src[x] + b; break;
        case 3: v = src[x] + (a + b) / 2; break;
        case 4: v = src[x] + paeth(a, b, c); break;
        default: throw FormatError(path + ": unknown PNG row filter");
      }
      dst[x] = static_cast<uint8_t>(v & 0xff);
    }
  }

  ImageU8 img;
  img.height = height;
  img.width = width;
  img.channels = src_channels >= 3 ? 3 : 1;
  img.pixels.resize(img.expected_size());
  const size_t n = static_cast<size_t>(width) * height;
  for (size_t i = 0; i < n; ++i) {
    const uint8_t* s = &flat[i * src_channels];
    uint8_t* d = &img.pixels[i * img.channels];
    for (int c = 0; c < img.channels; ++c) d[c] = s[c];  // alpha dropped
  }
  return img;
}

void write_png(const std::string& path, const ImageU8& img) {
  check_dims(img, "write_png");
  const int channels = img.channels;
  const size_t stride = static_cast<size_t>(img.width) * channels;
  std::vector<uint8_t> raw(static_cast<size_t>(img.height) * (stride + 1));
  for (int y = 0; y < img.height; ++y) {
    raw[static_cast<size_t>(y) * (stride + 1)] = 0;  // filter: none
    std::memcpy(&raw[static_cast<size_t>(y) * (stride + 1) + 1],
                &img.pixels[static_cast<size_t>(y) * stride], stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> packed(bound);
  if (compress2(packed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) !=
      Z_OK) {
    throw IoError("PNG deflate failed for " + path);
  }
  packed.resize(bound);

  std::vector<uint8_t> out(kPngMagic, kPngMagic + 8);
  std::vector<uint8_t> ihdr;
  put_be32(ihdr, static_cast<uint32_t>(img.width));
  put_be32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(channels == 1 ? 0 : 2);               // gray / rgb
  ihdr.push_back(0);                                   // compression
  ihdr.push_back(0);                                   // filter method
  ihdr.push_back(0);                                   // no interlace
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", packed);
  png_chunk(out, "IEND", {});
  write_file_bytes(path, out.data(), out.size());
}

ImageU8 read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  uint8_t sig[8] = {0};
  in.read(reinterpret_cast<char*>(sig), 8);
  in.close();
  if (std::memcmp(sig, kPngMagic, 8) == 0) return read_png(path);
  return read_pgm(path);
}

Tensor image_to_chw(const ImageU8& img) {
  check_dims(img, "image_to_chw");
  Tensor t({img.channels, img.height, img.width});
  const size_t n = static_cast<size_t>(img.height) * img.width;
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < img.channels; ++c) {
      t[static_cast<int64_t>(c) * static_cast<int64_t>(n) + static_cast<int64_t>(i)] =
          static_cast<float>(img.pixels[i * img.channels + c]) / 255.0f;
    }
  }
  return t;
}

static uint8_t quantize01(float v) {
  if (v < 0.0f) v = 0.0f;
  if (v > 1.0f) v = 1.0f;
  return static_cast<uint8_t>(std::lround(v * 255.0f));
}

ImageU8 chw_to_image(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw DimensionError("chw_to_image expects [1|3,H,W], got " + shape_str(t.shape()));
  }
  ImageU8 img;
  img.channels = t.dim(0);
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.pixels.resize(img.expected_size());
  const size_t n = static_cast<size_t>(img.height) * img.width;
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < img.channels; ++c) {
      img.pixels[i * img.channels + c] =
          quantize01(t[static_cast<int64_t>(c) * static_cast<int64_t>(n) +
                       static_cast<int64_t>(i)]);
    }
  }
  return img;
}

ImageU8 chw_to_image_signed(const Tensor& t) {
  Tensor shifted(t.shape());
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) shifted[i] = 0.5f * (t[i] + 1.0f);
  return chw_to_image(shifted);
}

void write_tensor(const std::string& path, const Tensor& t) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'I', 'T', 'S', 'R'});
  auto put_le32 = [&](uint32_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 24));
  };
  put_le32(static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put_le32(static_cast<uint32_t>(t.dim(i)));
  size_t payload = out.size();
  out.resize(out.size() + sizeof(float) * static_cast<size_t>(t.numel()));
  std::memcpy(out.data() + payload, t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
  write_file_bytes(path, out.data(), out.size());
}

Tensor read_tensor(const std::string& path) {
  std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "ITSR", 4) != 0) {
    throw FormatError(path + ": not a tensor dump");
  }
  size_t pos = 4;
  auto get_le32 = [&]() -> uint32_t {
    if (pos + 4 > bytes.size()) throw FormatError(path + ": truncated tensor dump");
    uint32_t v = bytes[pos] | (bytes[pos + 1] << 8) | (bytes[pos + 2] << 16) |
                 (static_cast<uint32_t>(bytes[pos + 3]) << 24);
    pos += 4;
    return v;
  };
  uint32_t rank = get_le32();
  if (rank > 8) throw FormatError(path + ": implausible tensor rank");
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(get_le32());
  int64_t n = shape_numel(shape);
  if (bytes.size() - pos != sizeof(float) * static_cast<size_t>(n)) {
    throw FormatError(path + ": tensor payload size mismatch");
  }
  std::vector<float> data(static_cast<size_t>(n));
  std::memcpy(data.data(), bytes.data() + pos, sizeof(float) * data.size());
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace istr
