#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "noisebench/tensor.hpp"

namespace noisebench {

// Images are N x C x H x W in [0,1]; labels are class indices below
// num_classes. Immutable after load.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const {  // C x H x W
    return {images.dim(1), images.dim(2), images.dim(3)};
  }
  Tensor image(std::size_t i) const;
  // Subset with only the given classes, preserving order.
  Dataset filter_classes(const std::vector<int>& keep) const;
  // First n records.
  Dataset head(std::size_t n) const;
  void validate() const;
};

// IDX (big-endian) loader: images magic 0x00000803, labels magic 0x00000801.
// Pixel bytes are divided by 255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t num_classes = 10, const std::string& name = "idx");

// Writes images/labels back to the IDX byte format (round-trip exact for
// datasets whose pixels are multiples of 1/255).
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: records of 1 label byte + 3072 channel-planar
// pixel bytes.
Dataset load_cifar10(const std::vector<std::string>& batch_paths,
                     const std::string& name = "cifar10");

// Two-class synthetic fixture: class 0 carries a vertical bar template,
// class 1 a horizontal bar, plus Gaussian pixel noise clipped to [0,1].
// Labels come out as n_per_class zeros followed by n_per_class ones.
Dataset synth_two_template(std::size_t h, std::size_t w, std::size_t n_per_class,
                           double noise_sd, std::uint64_t seed);

// K-class synthetic glyph dataset used by integration tests: per-class block
// glyph templates at h x w with Gaussian noise and small jitter.
Dataset synth_glyphs(std::size_t num_classes, std::size_t h, std::size_t w,
                     std::size_t n_per_class, double noise_sd, std::uint64_t seed);

// Per-class mean images of a dataset (K x C x H x W).
Tensor class_mean_images(const Dataset& ds);

}  // namespace noisebench
