#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <vector>

namespace shiftbnn {

/// Dense row-major tensor of up to four extents, e.g. [channel][row][col]
/// for feature maps and [M][N][K][K] for conv kernels. Values are stored in
/// double; 32-bit storage is emulated by rounding at store points.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0)
      : dims_(std::move(dims)), data_(count(dims_), fill) {}
  Tensor(std::initializer_list<std::size_t> dims, double fill = 0.0)
      : Tensor(std::vector<std::size_t>(dims), fill) {}
  Tensor(std::vector<std::size_t> dims, std::vector<double> data);

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t i) const noexcept { return dims_[i]; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t a, std::size_t b, std::size_t c) noexcept {
    return data_[(a * dims_[1] + b) * dims_[2] + c];
  }
  double at(std::size_t a, std::size_t b, std::size_t c) const noexcept {
    return data_[(a * dims_[1] + b) * dims_[2] + c];
  }
  double& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) noexcept {
    return data_[((a * dims_[1] + b) * dims_[2] + c) * dims_[3] + d];
  }
  double at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const noexcept {
    return data_[((a * dims_[1] + b) * dims_[2] + c) * dims_[3] + d];
  }

  bool operator==(const Tensor&) const = default;

  static std::size_t count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> data_;
};

}  // namespace shiftbnn
