#include "synth.hpp"

#include <cmath>

namespace s3nas {

namespace {

// Class = (shape, scale): shapes cycle through plus / box outline / main
// diagonal / checker, scales through 3, 7, 5 pixels.
constexpr int kShapeCount = 4;
constexpr int kScales[3] = {3, 7, 5};

bool pattern_cell(int shape, int scale, int r, int c) {
  const int center = scale / 2;
  switch (shape) {
    case 0: return r == center || c == center;               // plus
    case 1: return r == 0 || c == 0 || r == scale - 1 || c == scale - 1;  // box outline
    case 2: return r == c;                                   // diagonal
    default: return (r + c) % 2 == 0;                        // checker
  }
}

}  // namespace

void SynthTaskSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic task needs at least two classes");
  if (image_size < 8) throw ConfigError("synthetic image size must be at least 8");
  if (channels < 1) throw ConfigError("synthetic task needs at least one channel");
  if (samples_per_class < 2) throw ConfigError("need at least two samples per class");
  if (val_fraction <= 0.0 || val_fraction >= 0.5) {
    throw ConfigError("val_fraction must be in (0, 0.5)");
  }
  if (noise_std < 0.0) throw ConfigError("noise std must be non-negative");
}

Sample generate(const SynthTaskSpec& spec, int index) {
  spec.validate();
  if (index < 0 || index >= spec.total_samples()) {
    throw ConfigError("sample index " + std::to_string(index) + " out of range");
  }
  const int label = index % spec.num_classes;
  const int shape = label % kShapeCount;
  const int scale = kScales[(label / kShapeCount) % 3];

  Rng rng = Rng::derive(spec.seed, static_cast<std::uint64_t>(index));
  Sample sample;
  sample.label = label;
  sample.image = Tensor({spec.channels, spec.image_size, spec.image_size});
  for (auto& x : sample.image.v) x = rng.normal() * spec.noise_std;

  const int limit = spec.image_size - scale;
  for (int s = 0; s < spec.stamps_per_image; ++s) {
    const int top = rng.index(static_cast<std::size_t>(limit + 1));
    const int left = rng.index(static_cast<std::size_t>(limit + 1));
    for (int r = 0; r < scale; ++r) {
      for (int c = 0; c < scale; ++c) {
        if (!pattern_cell(shape, scale, r, c)) continue;
        for (int ch = 0; ch < spec.channels; ++ch) {
          const std::size_t i =
              (static_cast<std::size_t>(ch) * spec.image_size + top + r) * spec.image_size +
              left + c;
          sample.image.v[i] += spec.pattern_gain;
        }
      }
    }
  }
  return sample;
}

SplitIndices split_indices(const SynthTaskSpec& spec) {
  spec.validate();
  const int period = std::max(2, static_cast<int>(std::llround(1.0 / spec.val_fraction)));
  SplitIndices split;
  for (int i = 0; i < spec.total_samples(); ++i) {
    // Select per repetition so the validation split stays class balanced.
    if ((i / spec.num_classes) % period == 0) {
      split.val.push_back(i);
    } else {
      split.train.push_back(i);
    }
  }
  return split;
}

Batch make_batch(const SynthTaskSpec& spec, const std::vector<int>& indices, std::size_t begin,
                 std::size_t count) {
  if (begin + count > indices.size()) {
    throw ConfigError("batch range exceeds index list");
  }
  Batch batch;
  batch.images = Tensor({static_cast<int>(count), spec.channels, spec.image_size, spec.image_size});
  const std::size_t per_image = static_cast<std::size_t>(spec.channels) * spec.image_size *
                                spec.image_size;
  for (std::size_t b = 0; b < count; ++b) {
    const Sample sample = generate(spec, indices[begin + b]);
    std::copy(sample.image.v.begin(), sample.image.v.end(),
              batch.images.v.begin() + static_cast<std::ptrdiff_t>(b * per_image));
    batch.labels.push_back(sample.label);
  }
  return batch;
}

}  // namespace s3nas
