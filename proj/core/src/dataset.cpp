#include "istr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "istr/errors.hpp"
#include "istr/image_io.hpp"
#include "istr/rng.hpp"

namespace fs = std::filesystem;

namespace istr {

Shape Dataset::image_shape() const {
  if (images.rank() != 4) throw StateError("dataset images are not [N,C,H,W]");
  return {images.dim(1), images.dim(2), images.dim(3)};
}

Tensor Dataset::image(int i) const {
  if (i < 0 || i >= size()) throw ArgumentError("dataset image index out of range");
  Shape s = image_shape();
  const int64_t stride = shape_numel(s);
  Tensor out(s);
  std::memcpy(out.data(), images.data() + static_cast<int64_t>(i) * stride,
              sizeof(float) * static_cast<size_t>(stride));
  return out;
}

void Dataset::set_image(int i, const Tensor& img) {
  if (i < 0 || i >= size()) throw ArgumentError("dataset image index out of range");
  Shape s = image_shape();
  if (img.shape() != s) {
    throw DimensionError("set_image: sample shape " + shape_str(img.shape()) +
                         " does not match dataset " + shape_str(s));
  }
  const int64_t stride = shape_numel(s);
  std::memcpy(images.data() + static_cast<int64_t>(i) * stride, img.data(),
              sizeof(float) * static_cast<size_t>(stride));
}

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Shape s = image_shape();
  const int64_t stride = shape_numel(s);
  Dataset out;
  out.class_count = class_count;
  out.provenance = provenance;
  out.images = Tensor({static_cast<int>(indices.size()), s[0], s[1], s[2]});
  out.labels.resize(indices.size());
  for (size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    if (i < 0 || i >= size()) throw ArgumentError("subset index out of range");
    std::memcpy(out.images.data() + static_cast<int64_t>(k) * stride,
                images.data() + static_cast<int64_t>(i) * stride,
                sizeof(float) * static_cast<size_t>(stride));
    out.labels[k] = labels[static_cast<size_t>(i)];
  }
  return out;
}

void Dataset::validate() const {
  if (images.rank() != 4) throw DimensionError("dataset images must be [N,C,H,W]");
  if (images.dim(0) != static_cast<int>(labels.size())) {
    throw DimensionError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                         std::to_string(labels.size()) + " labels");
  }
  if (class_count < 1) throw ArgumentError("dataset class_count must be >= 1");
  for (int y : labels) {
    if (y < 0 || y >= class_count) {
      throw ArgumentError("label " + std::to_string(y) + " outside [0, " +
                          std::to_string(class_count) + ")");
    }
  }
  const int64_t n = images.numel();
  for (int64_t i = 0; i < n; ++i) {
    const float v = images[i];
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ArgumentError("pixel value " + std::to_string(v) + " outside [0,1]");
    }
  }
}

std::vector<std::vector<int>> indices_by_class(const Dataset& d) {
  std::vector<std::vector<int>> out(static_cast<size_t>(d.class_count));
  for (int i = 0; i < d.size(); ++i) {
    out[static_cast<size_t>(d.labels[static_cast<size_t>(i)])].push_back(i);
  }
  return out;
}

float dataset_mean(const Dataset& d) {
  if (d.images.numel() == 0) throw ArgumentError("dataset_mean of empty dataset");
  double sum = 0.0;
  const int64_t n = d.images.numel();
  for (int64_t i = 0; i < n; ++i) sum += d.images[i];
  return static_cast<float>(sum / static_cast<double>(n));
}

namespace {

struct IdxFile {
  uint8_t type;
  std::vector<uint32_t> dims;
  std::vector<uint8_t> payload;
};

IdxFile read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0) {
    throw FormatError(path + ": bad IDX magic");
  }
  IdxFile f;
  f.type = bytes[2];
  const int rank = bytes[3];
  if (f.type != 0x08) throw FormatError(path + ": only ubyte IDX payloads supported");
  if (rank < 1 || rank > 4) throw FormatError(path + ": implausible IDX rank");
  size_t pos = 4;
  uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    if (pos + 4 > bytes.size()) throw FormatError(path + ": truncated IDX header");
    uint32_t d = (static_cast<uint32_t>(bytes[pos]) << 24) |
                 (static_cast<uint32_t>(bytes[pos + 1]) << 16) |
                 (static_cast<uint32_t>(bytes[pos + 2]) << 8) |
                 static_cast<uint32_t>(bytes[pos + 3]);
    pos += 4;
    f.dims.push_back(d);
    count *= d;
  }
  if (bytes.size() - pos != count) {
    throw FormatError(path + ": IDX payload is " + std::to_string(bytes.size() - pos) +
                      " bytes, header promises " + std::to_string(count));
  }
  f.payload.assign(bytes.begin() + static_cast<long>(pos), bytes.end());
  return f;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  IdxFile imgs = read_idx(images_path);
  IdxFile labs = read_idx(labels_path);
  if (imgs.dims.size() != 3) {
    throw FormatError(images_path + ": expected rank-3 IDX image file");
  }
  if (labs.dims.size() != 1) {
    throw FormatError(labels_path + ": expected rank-1 IDX label file");
  }
  if (imgs.dims[0] != labs.dims[0]) {
    throw FormatError("IDX pair disagrees on sample count: " +
                      std::to_string(imgs.dims[0]) + " images vs " +
                      std::to_string(labs.dims[0]) + " labels");
  }
  const int n = static_cast<int>(imgs.dims[0]);
  const int h = static_cast<int>(imgs.dims[1]);
  const int w = static_cast<int>(imgs.dims[2]);
  Dataset d;
  d.images = Tensor({n, 1, h, w});
  d.labels.resize(static_cast<size_t>(n));
  const int64_t count = d.images.numel();
  for (int64_t i = 0; i < count; ++i) {
    d.images[i] = static_cast<float>(imgs.payload[static_cast<size_t>(i)]) / 255.0f;
  }
  int max_label = 0;
  for (int i = 0; i < n; ++i) {
    d.labels[static_cast<size_t>(i)] = labs.payload[static_cast<size_t>(i)];
    max_label = std::max(max_label, static_cast<int>(labs.payload[static_cast<size_t>(i)]));
  }
  d.class_count = max_label + 1;
  d.validate();
  return d;
}

Dataset load_image_dir(const std::string& root) {
  if (!fs::is_directory(root)) throw IoError(root + " is not a directory");
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path().filename().string());
  }
  if (dirs.empty()) throw FormatError(root + ": no label subdirectories");
  std::sort(dirs.begin(), dirs.end());

  bool numeric = true;
  for (const std::string& name : dirs) {
    if (name.empty() ||
        !std::all_of(name.begin(), name.end(), [](char c) { return std::isdigit(c); })) {
      numeric = false;
      break;
    }
  }

  std::vector<std::pair<std::string, int>> dir_labels;
  int max_label = 0;
  for (size_t i = 0; i < dirs.size(); ++i) {
    int label = numeric ? std::stoi(dirs[i]) : static_cast<int>(i);
    dir_labels.emplace_back(dirs[i], label);
    max_label = std::max(max_label, label);
  }

  std::vector<Tensor> samples;
  std::vector<int> labels;
  Shape shape;
  for (const auto& [dir, label] : dir_labels) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(root) / dir)) {
      if (e.is_regular_file()) files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) {
      Tensor t = image_to_chw(read_image(f));
      if (shape.empty()) {
        shape = t.shape();
      } else if (t.shape() != shape) {
        throw DimensionError(f + ": image shape " + shape_str(t.shape()) +
                             " differs from first sample " + shape_str(shape));
      }
      samples.push_back(std::move(t));
      labels.push_back(label);
    }
  }
  if (samples.empty()) throw FormatError(root + ": no readable images found");

  Dataset d;
  d.class_count = max_label + 1;
  d.labels = std::move(labels);
  d.images = Tensor({static_cast<int>(samples.size()), shape[0], shape[1], shape[2]});
  const int64_t stride = shape_numel(shape);
  for (size_t i = 0; i < samples.size(); ++i) {
    std::memcpy(d.images.data() + static_cast<int64_t>(i) * stride, samples[i].data(),
                sizeof(float) * static_cast<size_t>(stride));
  }
  d.validate();
  return d;
}

namespace {

// Seven-segment glyph geometry inside a 28x28 frame. Box spans rows 4..23
// and cols 9..19, which keeps every corner region empty even after +/-2
// pixel jitter.
struct SegRect {
  int r0, r1, c0, c1;  // inclusive
};
constexpr SegRect kSegments[7] = {
    {4, 6, 10, 18},    // A top bar
    {5, 13, 17, 19},   // B upper right
    {14, 22, 17, 19},  // C lower right
    {21, 23, 10, 18},  // D bottom bar
    {14, 22, 9, 11},   // E lower left
    {5, 13, 9, 11},    // F upper left
    {12, 14, 10, 18},  // G middle bar
};
// Ten codewords of the (7,4) Hamming code, five of weight 3 and five of
// weight 4. Any two classes differ in at least three segments and no glyph
// is a superset of another, so there is no single bright/dark direction an
// input perturbation can ride from one class into the next.
constexpr int kDigitSegs[10] = {
    0b0001011,  // weight 3
    0b0010110,
    0b0101100,
    0b0110001,
    0b1000101,
    0b0011101,  // weight 4
    0b0100111,
    0b0111010,
    0b1001110,
    0b1010011,
};

void clamp_pixels(Tensor& images) {
  const int64_t n = images.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (images[i] < 0.0f) images[i] = 0.0f;
    if (images[i] > 1.0f) images[i] = 1.0f;
  }
}

}  // namespace

Dataset synth_digits(int n, uint64_t seed) {
  if (n < 1) throw ArgumentError("synth_digits: n must be >= 1");
  const int h = 28, w = 28;
  Dataset d;
  d.class_count = 10;
  d.images = Tensor({n, 1, h, w});
  d.labels.resize(static_cast<size_t>(n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int digit = rng.uniform_int(0, 9);
    d.labels[static_cast<size_t>(i)] = digit;
    const int dy = rng.uniform_int(-2, 2);
    const int dx = rng.uniform_int(-2, 2);
    const float intensity = 0.7f + 0.3f * rng.next_float();
    // A faint backdrop keeps every pixel's statistics away from the clamp
    // floor, so no image region is dead to gradients.
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) d.images.at4(i, 0, r, c) = 0.08f;
    const int segs = kDigitSegs[digit];
    for (int s = 0; s < 7; ++s) {
      if (!(segs >> s & 1)) continue;
      const SegRect& sr = kSegments[s];
      for (int r = sr.r0; r <= sr.r1; ++r) {
        for (int c = sr.c0; c <= sr.c1; ++c) {
          d.images.at4(i, 0, r + dy, c + dx) = intensity;
        }
      }
    }
    // No per-pixel noise on purpose: pixels that never vary carry no trained
    // weight, which keeps the class margins wide under small-step input
    // perturbations instead of leaking through hundreds of noise pixels.
  }
  clamp_pixels(d.images);
  d.validate();
  return d;
}

Dataset synth_shapes(int n, uint64_t seed) {
  if (n < 1) throw ArgumentError("synth_shapes: n must be >= 1");
  const int h = 32, w = 32, classes = 43;
  static const float palette[8][3] = {
      {1.0f, 0.15f, 0.15f}, {0.15f, 1.0f, 0.15f}, {0.2f, 0.3f, 1.0f},
      {1.0f, 1.0f, 0.2f},   {1.0f, 0.2f, 1.0f},   {0.2f, 1.0f, 1.0f},
      {1.0f, 0.55f, 0.1f},  {0.95f, 0.95f, 0.95f}};
  Dataset d;
  d.class_count = classes;
  d.images = Tensor({n, 3, h, w});
  d.labels.resize(static_cast<size_t>(n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int cls = rng.uniform_int(0, classes - 1);
    d.labels[static_cast<size_t>(i)] = cls;
    const float* color = palette[cls % 8];
    const int kind = cls / 8;  // 0..5
    const int cy = h / 2 + rng.uniform_int(-2, 2);
    const int cx = w / 2 + rng.uniform_int(-2, 2);
    const int radius = 9 + rng.uniform_int(-1, 1);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const int ry = r - cy, rx = c - cx;
        bool inside = false;
        switch (kind) {
          case 0: inside = ry * ry + rx * rx <= radius * radius; break;
          case 1: inside = std::abs(ry) <= radius - 2 && std::abs(rx) <= radius - 2; break;
          case 2: inside = ry >= -radius / 2 && ry <= radius / 2 &&
                           std::abs(rx) <= (ry + radius / 2) / 2 + 1; break;
          case 3: {
            const int rr = ry * ry + rx * rx;
            inside = rr <= radius * radius && rr >= (radius - 4) * (radius - 4);
            break;
          }
          case 4: inside = std::abs(ry) <= 2 || std::abs(rx) <= 2; break;
          default: inside = std::abs(ry) + std::abs(rx) <= radius; break;
        }
        for (int ch = 0; ch < 3; ++ch) {
          const float base = inside ? color[ch] : 0.12f;
          d.images.at4(i, ch, r, c) = base + rng.normal(0.0f, 0.05f);
        }
      }
    }
  }
  clamp_pixels(d.images);
  d.validate();
  return d;
}

Dataset synth_faces(int n, uint64_t seed) {
  if (n < 1) throw ArgumentError("synth_faces: n must be >= 1");
  const int h = 64, w = 64, classes = 16;
  static const float skins[4][3] = {{0.95f, 0.8f, 0.65f},
                                    {0.75f, 0.55f, 0.4f},
                                    {0.55f, 0.38f, 0.26f},
                                    {0.9f, 0.7f, 0.55f}};
  Dataset d;
  d.class_count = classes;
  d.images = Tensor({n, 3, h, w});
  d.labels.resize(static_cast<size_t>(n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int cls = rng.uniform_int(0, classes - 1);
    d.labels[static_cast<size_t>(i)] = cls;
    const bool oval = cls & 1;
    const float* skin = skins[(cls >> 1) & 3];
    const bool bar_eyes = (cls >> 3) & 1;
    const int cy = 32 + rng.uniform_int(-2, 2);
    const int cx = 32 + rng.uniform_int(-2, 2);
    const int ay = oval ? 24 : 20, ax = oval ? 17 : 20;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const float ry = static_cast<float>(r - cy) / ay;
        const float rx = static_cast<float>(c - cx) / ax;
        const bool inside = ry * ry + rx * rx <= 1.0f;
        for (int ch = 0; ch < 3; ++ch) {
          d.images.at4(i, ch, r, c) =
              (inside ? skin[ch] : 0.15f) + rng.normal(0.0f, 0.04f);
        }
      }
    }
    // eyes and mouth in dark pixels
    for (int side = -1; side <= 1; side += 2) {
      const int ey = cy - 6, ex = cx + side * 7;
      const int ew = bar_eyes ? 4 : 2, eh = bar_eyes ? 1 : 2;
      for (int r = ey - eh; r <= ey + eh; ++r) {
        for (int c = ex - ew; c <= ex + ew; ++c) {
          if (r >= 0 && r < h && c >= 0 && c < w) {
            for (int ch = 0; ch < 3; ++ch) d.images.at4(i, ch, r, c) = 0.1f;
          }
        }
      }
    }
    for (int c = cx - 6; c <= cx + 6; ++c) {
      const int r = cy + 9;
      if (r >= 0 && r < h && c >= 0 && c < w) {
        for (int ch = 0; ch < 3; ++ch) d.images.at4(i, ch, r, c) = 0.2f;
      }
    }
  }
  clamp_pixels(d.images);
  d.validate();
  return d;
}

Dataset synth_dataset(const std::string& name, int n, uint64_t seed) {
  if (name == "digits") return synth_digits(n, seed);
  if (name == "shapes") return synth_shapes(n, seed);
  if (name == "faces") return synth_faces(n, seed);
  throw ArgumentError("unknown synthetic dataset '" + name +
                      "' (expected digits, shapes, or faces)");
}

}  // namespace istr
