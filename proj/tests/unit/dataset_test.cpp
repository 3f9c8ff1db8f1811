#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <vector>

#include "shiftbnn/dataset.hpp"
#include "shiftbnn/error.hpp"

using namespace shiftbnn;

namespace {

void put_be32(std::ofstream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  os.write(b, 4);
}

struct IdxFiles {
  std::filesystem::path dir;
  std::filesystem::path images, labels;

  IdxFiles(std::uint32_t image_magic, std::uint32_t n_images, std::uint32_t label_magic,
           std::uint32_t n_labels, std::size_t pixels_written) {
    dir = std::filesystem::temp_directory_path() / "shiftbnn_idx_test";
    std::filesystem::create_directories(dir);
    images = dir / "train-images-idx3-ubyte";
    labels = dir / "train-labels-idx1-ubyte";
    std::ofstream img(images, std::ios::binary);
    put_be32(img, image_magic);
    put_be32(img, n_images);
    put_be32(img, 2);
    put_be32(img, 3);
    for (std::size_t i = 0; i < pixels_written; ++i) img.put(static_cast<char>(i * 51 % 256));
    std::ofstream lab(labels, std::ios::binary);
    put_be32(lab, label_magic);
    put_be32(lab, n_labels);
    for (std::uint32_t i = 0; i < n_labels; ++i) lab.put(static_cast<char>(i % 10));
  }
  ~IdxFiles() { std::filesystem::remove_all(dir); }
};

ErrorCode load_error(const IdxFiles& f) {
  try {
    load_idx(f.images, f.labels);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("IDX parsing") {
  const IdxFiles f(0x803, 2, 0x801, 2, 12);
  const Dataset d = load_idx(f.images, f.labels);
  CHECK(d.size() == 2);
  CHECK(d.shape == Shape3{1, 2, 3});
  CHECK(d.classes == 10);
  CHECK(d.images[1] == 51.0f / 255.0f);
  CHECK(d.image(1)[0] == static_cast<float>(6 * 51 % 256) / 255.0f);
  CHECK(d.labels[1] == 1);
  const Dataset via_dir = load_mnist(f.dir, true);
  CHECK(via_dir.images == d.images);
}

TEST_CASE("IDX validation errors") {
  CHECK(load_error(IdxFiles(0x804, 2, 0x801, 2, 12)) == ErrorCode::BadMagic);
  CHECK(load_error(IdxFiles(0x803, 2, 0x802, 2, 12)) == ErrorCode::BadMagic);
  CHECK(load_error(IdxFiles(0x803, 2, 0x801, 3, 12)) == ErrorCode::CountMismatch);
  CHECK(load_error(IdxFiles(0x803, 2, 0x801, 2, 7)) == ErrorCode::TruncatedFile);
  try {
    load_mnist("/nonexistent/shiftbnn", false);
    FAIL("missing directory accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoError);
  }
}

TEST_CASE("CIFAR-10 records") {
  const auto path = std::filesystem::temp_directory_path() / "shiftbnn_cifar_test.bin";
  {
    std::ofstream os(path, std::ios::binary);
    for (int r = 0; r < 2; ++r) {
      os.put(static_cast<char>(r + 3));
      for (int i = 0; i < 3072; ++i) os.put(static_cast<char>(r * 255));
    }
  }
  const Dataset d = load_cifar10({path});
  CHECK(d.size() == 2);
  CHECK(d.labels[1] == 4);
  CHECK(d.image(1)[3071] == 1.0f);
  {
    std::ofstream os(path, std::ios::binary | std::ios::app);
    os.put(1);
  }
  CHECK_THROWS_AS(load_cifar10({path}), Error);
  std::filesystem::remove(path);
}

TEST_CASE("synthetic data is deterministic and bounded") {
  SyntheticSpec spec;
  const Dataset a = make_synthetic(spec);
  const Dataset b = make_synthetic(spec);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(a.size() == 512);
  CHECK(std::all_of(a.images.begin(), a.images.end(), [](float v) { return v >= 0 && v <= 1; }));
  CHECK(std::all_of(a.labels.begin(), a.labels.end(), [](auto l) { return l < 4; }));
  spec.count = 0;
  CHECK_THROWS_AS(make_synthetic(spec), Error);
}

TEST_CASE("batches are feature-major") {
  SyntheticSpec spec;
  spec.count = 8;
  const Dataset d = make_synthetic(spec);
  const std::vector<std::size_t> idx = {5, 2, 7};
  const Batch batch = make_batch(d, idx);
  CHECK(batch.size == 3);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(batch.labels[j] == d.labels[idx[j]]);
    for (std::size_t f = 0; f < d.features(); ++f)
      REQUIRE(batch.inputs[f * 3 + j] == static_cast<double>(d.image(idx[j])[f]));
  }
}

TEST_CASE("shuffles are seeded permutations") {
  const auto a = shuffled_indices(100, 1);
  CHECK(a == shuffled_indices(100, 1));
  CHECK(a != shuffled_indices(100, 2));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 100; ++i) CHECK(sorted[i] == i);
}
