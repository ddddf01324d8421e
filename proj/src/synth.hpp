#pragma once

#include <cstdint>
#include <vector>

#include "autodiff.hpp"
#include "common.hpp"

namespace s3nas {

// Deterministic synthetic image-classification task. Every class is a
// (pattern shape, spatial scale) pair stamped over a noise background, so
// nets with the right receptive fields have an edge: the pattern scales span
// 3x3 to 7x7.
struct SynthTaskSpec {
  int num_classes = 8;
  int image_size = 32;
  int channels = 3;
  int samples_per_class = 400;
  std::uint64_t seed = 1;
  double noise_std = 0.35;
  double pattern_gain = 1.6;
  int stamps_per_image = 6;
  double val_fraction = 0.1;

  void validate() const;
  int total_samples() const { return num_classes * samples_per_class; }
};

struct Sample {
  Tensor image;  // (channels, image_size, image_size)
  int label = 0;
};

// Pure function of (spec, index); out-of-range indices are an error.
Sample generate(const SynthTaskSpec& spec, int index);

// Disjoint train/validation index sets, fixed by the spec seed: every
// round(1/val_fraction)-th sample lands in the validation split.
struct SplitIndices {
  std::vector<int> train;
  std::vector<int> val;
};
SplitIndices split_indices(const SynthTaskSpec& spec);

// Materialized batch: images packed (B, C, H, W) plus labels.
struct Batch {
  Tensor images;
  std::vector<int> labels;
};
Batch make_batch(const SynthTaskSpec& spec, const std::vector<int>& indices, std::size_t begin,
                 std::size_t count);

}  // namespace s3nas
