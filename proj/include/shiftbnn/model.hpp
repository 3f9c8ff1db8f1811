#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shiftbnn/ledger.hpp"
#include "shiftbnn/nn.hpp"

namespace shiftbnn {

using Shape3 = std::array<std::size_t, 3>;  // [channels][rows][cols]

struct LayerSpec {
  LayerKind kind = LayerKind::FC;
  std::size_t out_channels = 0;  // conv M, fc out
  std::size_t kernel = 0;        // conv K, pool window
  std::size_t stride = 1;        // conv and pool
  std::size_t pad = 0;           // conv
  bool relu = false;

  // Filled in by Network.
  Shape3 in_shape{};
  Shape3 out_shape{};

  static LayerSpec conv(std::size_t m, std::size_t k, std::size_t stride = 1, std::size_t pad = 0,
                        bool relu = true);
  static LayerSpec fc(std::size_t out, bool relu = true);
  static LayerSpec pool(std::size_t size, std::size_t stride);

  std::size_t in_size() const noexcept { return in_shape[0] * in_shape[1] * in_shape[2]; }
  std::size_t out_size() const noexcept { return out_shape[0] * out_shape[1] * out_shape[2]; }
  bool has_weights() const noexcept { return kind != LayerKind::Pool; }
  std::size_t weight_count() const noexcept;
  /// Weight tensor extents as stored in checkpoints: conv (M, N, K, K),
  /// fc (out, in, 1, 1).
  std::array<std::uint32_t, 4> weight_dims() const noexcept;
  SegmentGeometry geometry() const noexcept;
  ConvGeometry conv_geometry() const noexcept { return {kernel, stride, pad}; }
};

/// Layer stack with shapes propagated from the input. FC layers flatten
/// whatever precedes them.
class Network {
 public:
  Network(std::string name, Shape3 input, std::vector<LayerSpec> layers);

  /// "b-mlp" (784-400-400-10), "toy-conv" (2 conv + 1 fc on 1x12x12,
  /// 4 classes), "b-lenet" (3x32x32, 10 classes). Throws ConfigError.
  static Network preset(const std::string& name);

  const std::string& name() const noexcept { return name_; }
  const Shape3& input_shape() const noexcept { return input_; }
  std::size_t input_size() const noexcept { return input_[0] * input_[1] * input_[2]; }
  std::size_t classes() const noexcept { return layers_.back().out_size(); }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::size_t total_weights() const noexcept;

 private:
  std::string name_;
  Shape3 input_;
  std::vector<LayerSpec> layers_;
};

/// Per-layer variational parameters; empty for layers without weights.
struct WeightParams {
  std::vector<double> mu;
  std::vector<double> sigma;
};

struct BayesNet {
  Network network;
  std::vector<WeightParams> params;  // one entry per layer

  /// mu ~ U(-a, a) with a = sqrt(6 / fan_in), sigma = sigma_init, from a
  /// generator keyed by `init_seed`.
  static BayesNet initialize(Network network, std::uint64_t init_seed, double sigma_init);
};

/// "SBNN" checkpoint: magic, u32 version = 1, u32 layer count, then for
/// each weighted layer: u8 kind, u32 dims[4], mu values, sigma values, all
/// little-endian with 32-bit reals.
void save_checkpoint(const BayesNet& net, const std::filesystem::path& path);
std::vector<char> checkpoint_bytes(const BayesNet& net);
/// Loads parameters into `net`, whose architecture must match the file.
void load_checkpoint(BayesNet& net, const std::filesystem::path& path);

}  // namespace shiftbnn
