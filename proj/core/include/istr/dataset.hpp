#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "istr/tensor.hpp"

namespace istr {

enum class Provenance { Clean, Poisoned, Stamped };

// Labeled image set held fully in memory: images [N,C,H,W] in [0,1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int class_count = 0;
  Provenance provenance = Provenance::Clean;

  int size() const { return labels.empty() ? 0 : images.dim(0); }
  Shape image_shape() const;  // [C,H,W]
  Tensor image(int i) const;  // copy of one sample as [C,H,W]
  void set_image(int i, const Tensor& img);

  Dataset subset(const std::vector<int>& indices) const;
  // Throws unless labels are in range, counts match, and pixels are finite
  // and inside [0,1].
  void validate() const;
};

// Per-class index lists, each ascending.
std::vector<std::vector<int>> indices_by_class(const Dataset& d);

// Mean over every pixel of every image.
float dataset_mean(const Dataset& d);

// IDX (big-endian) image + label pair, pixels scaled to [0,1]. Magic, rank,
// and size agreement are all enforced.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Directory of label-named subdirectories of PGM/PNG files. If every
// directory name is a non-negative integer those are the labels; otherwise
// labels follow lexicographic directory order. Empty root is an error.
Dataset load_image_dir(const std::string& root);

// Procedural stand-in corpora (seeded, deterministic):
//  digits: 28x28 gray, 10 classes of segmented digit glyphs
//  shapes: 32x32 RGB, 43 classes of colored shape/ring combinations
//  faces:  64x64 RGB, 16 classes of cartoon face layouts
Dataset synth_digits(int n, uint64_t seed);
Dataset synth_shapes(int n, uint64_t seed);
Dataset synth_faces(int n, uint64_t seed);

// Named dispatch used by run configs: digits | shapes | faces.
Dataset synth_dataset(const std::string& name, int n, uint64_t seed);

}  // namespace istr
