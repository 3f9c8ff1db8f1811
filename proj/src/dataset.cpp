#include "shiftbnn/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "shiftbnn/binary_io.hpp"
#include "shiftbnn/error.hpp"

namespace shiftbnn {

namespace {

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return is;
}

// Unbiased draw from [0, bound) by rejection on the raw 64-bit output.
std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do x = gen();
  while (x >= limit);
  return x % bound;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  auto img = open_binary(images);
  auto lab = open_binary(labels);

  if (io::get_be32(img, "IDX image magic") != 0x00000803u)
    throw Error(ErrorCode::BadMagic, images.string() + " is not an IDX image file");
  if (io::get_be32(lab, "IDX label magic") != 0x00000801u)
    throw Error(ErrorCode::BadMagic, labels.string() + " is not an IDX label file");

  const std::uint32_t n_img = io::get_be32(img, "IDX image count");
  const std::uint32_t rows = io::get_be32(img, "IDX rows");
  const std::uint32_t cols = io::get_be32(img, "IDX cols");
  const std::uint32_t n_lab = io::get_be32(lab, "IDX label count");
  if (n_img != n_lab)
    throw Error(ErrorCode::CountMismatch, std::to_string(n_img) + " images but " +
                                              std::to_string(n_lab) + " labels");

  Dataset d;
  d.shape = {1, rows, cols};
  const std::size_t feat = d.features();
  std::vector<unsigned char> raw(static_cast<std::size_t>(n_img) * feat);
  if (!img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw Error(ErrorCode::TruncatedFile, images.string());
  d.images.resize(raw.size());
  std::transform(raw.begin(), raw.end(), d.images.begin(),
                 [](unsigned char p) { return static_cast<float>(p) / 255.0f; });

  d.labels.resize(n_lab);
  if (!lab.read(reinterpret_cast<char*>(d.labels.data()), static_cast<std::streamsize>(n_lab)))
    throw Error(ErrorCode::TruncatedFile, labels.string());
  std::uint8_t max_label = 0;
  for (auto l : d.labels) max_label = std::max(max_label, l);
  d.classes = std::max<std::size_t>(10, std::size_t{max_label} + 1);
  return d;
}

Dataset load_mnist(const std::filesystem::path& dir, bool train) {
  const std::string prefix = train ? "train" : "t10k";
  return load_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"));
}

Dataset load_cifar10(const std::vector<std::filesystem::path>& batches) {
  constexpr std::size_t kRecord = 1 + 3072;
  Dataset d;
  d.shape = {3, 32, 32};
  d.classes = 10;
  for (const auto& path : batches) {
    auto is = open_binary(path);
    std::vector<unsigned char> rec(kRecord);
    while (is.read(reinterpret_cast<char*>(rec.data()), kRecord)) {
      if (rec[0] >= 10) throw Error(ErrorCode::BadMagic, path.string() + ": label out of range");
      d.labels.push_back(rec[0]);
      for (std::size_t i = 1; i < kRecord; ++i)
        d.images.push_back(static_cast<float>(rec[i]) / 255.0f);
    }
    if (is.gcount() != 0) throw Error(ErrorCode::TruncatedFile, path.string());
  }
  return d;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes == 0 || spec.count == 0)
    throw Error(ErrorCode::ConfigError, "synthetic dataset needs classes and count");
  std::mt19937_64 gen(spec.seed);
  const auto unit = [&gen] { return static_cast<double>(gen() >> 11) * 0x1.0p-53; };

  Dataset d;
  d.shape = spec.shape;
  d.classes = spec.classes;
  const std::size_t feat = d.features();
  std::vector<double> prototypes(spec.classes * feat);
  for (auto& p : prototypes) p = unit();

  d.images.resize(spec.count * feat);
  d.labels.resize(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const auto label = static_cast<std::size_t>(uniform_below(gen, spec.classes));
    d.labels[i] = static_cast<std::uint8_t>(label);
    for (std::size_t f = 0; f < feat; ++f) {
      const double v = prototypes[label * feat + f] + spec.noise * (2.0 * unit() - 1.0);
      d.images[i * feat + f] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return d;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  Batch b;
  b.size = indices.size();
  const std::size_t feat = data.features();
  b.inputs.resize(feat * b.size);
  b.labels.resize(b.size);
  for (std::size_t j = 0; j < b.size; ++j) {
    const float* img = data.image(indices[j]);
    for (std::size_t f = 0; f < feat; ++f) b.inputs[f * b.size + j] = img[f];
    b.labels[j] = data.labels[indices[j]];
  }
  return b;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 gen(seed);
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(uniform_below(gen, i))]);
  return idx;
}

}  // namespace shiftbnn
