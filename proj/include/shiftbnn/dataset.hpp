#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "shiftbnn/model.hpp"

namespace shiftbnn {

struct Dataset {
  Shape3 shape{};
  std::size_t classes = 0;
  std::vector<float> images;  // count x features, values in [0, 1]
  std::vector<std::uint8_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t features() const noexcept { return shape[0] * shape[1] * shape[2]; }
  const float* image(std::size_t i) const noexcept { return images.data() + i * features(); }
};

/// IDX image/label pair (magic 0x00000803 / 0x00000801). Pixels are scaled
/// by 1/255. Throws BadMagic, TruncatedFile, CountMismatch.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// MNIST split from a directory holding the standard uncompressed files.
Dataset load_mnist(const std::filesystem::path& dir, bool train);

/// CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record).
Dataset load_cifar10(const std::vector<std::filesystem::path>& batches);

struct SyntheticSpec {
  std::uint64_t seed = 1;
  Shape3 shape{1, 12, 12};
  std::size_t classes = 4;
  std::size_t count = 512;
  double noise = 0.15;
};

/// Class prototypes drawn in [0, 1] plus bounded uniform noise, clamped to
/// [0, 1]. Deterministic in `spec`.
Dataset make_synthetic(const SyntheticSpec& spec);

/// A minibatch in the trainer's layout: inputs feature-major, element
/// (f, b) at f * size + b.
struct Batch {
  std::size_t size = 0;
  std::vector<double> inputs;
  std::vector<std::size_t> labels;
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

/// Fisher-Yates permutation of [0, n) keyed by `seed`; identical on every
/// platform.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

}  // namespace shiftbnn
