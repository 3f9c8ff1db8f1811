#include "shiftbnn/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "shiftbnn/binary_io.hpp"
#include "shiftbnn/error.hpp"

namespace shiftbnn {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

double unit_uniform(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

}  // namespace

LayerSpec LayerSpec::conv(std::size_t m, std::size_t k, std::size_t stride, std::size_t pad,
                          bool relu) {
  LayerSpec s;
  s.kind = LayerKind::Conv;
  s.out_channels = m;
  s.kernel = k;
  s.stride = stride;
  s.pad = pad;
  s.relu = relu;
  return s;
}

LayerSpec LayerSpec::fc(std::size_t out, bool relu) {
  LayerSpec s;
  s.kind = LayerKind::FC;
  s.out_channels = out;
  s.relu = relu;
  return s;
}

LayerSpec LayerSpec::pool(std::size_t size, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::Pool;
  s.kernel = size;
  s.stride = stride;
  return s;
}

std::size_t LayerSpec::weight_count() const noexcept {
  switch (kind) {
    case LayerKind::Conv: return out_channels * in_shape[0] * kernel * kernel;
    case LayerKind::FC: return out_channels * in_size();
    case LayerKind::Pool: return 0;
  }
  return 0;
}

std::array<std::uint32_t, 4> LayerSpec::weight_dims() const noexcept {
  const auto u = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
  switch (kind) {
    case LayerKind::Conv: return {u(out_channels), u(in_shape[0]), u(kernel), u(kernel)};
    case LayerKind::FC: return {u(out_channels), u(in_size()), 1, 1};
    case LayerKind::Pool: return {0, 0, 0, 0};
  }
  return {0, 0, 0, 0};
}

SegmentGeometry LayerSpec::geometry() const noexcept {
  if (kind == LayerKind::Conv) return {LayerKind::Conv, kernel, out_channels, in_shape[0]};
  return {kind, 0, out_channels, in_size()};
}

Network::Network(std::string name, Shape3 input, std::vector<LayerSpec> layers)
    : name_(std::move(name)), input_(input), layers_(std::move(layers)) {
  if (layers_.empty()) throw Error(ErrorCode::ConfigError, "network has no layers");
  Shape3 shape = input_;
  for (auto& l : layers_) {
    l.in_shape = shape;
    switch (l.kind) {
      case LayerKind::Conv: {
        const auto g = l.conv_geometry();
        l.out_shape = {l.out_channels, conv_output_extent(shape[1], g),
                       conv_output_extent(shape[2], g)};
        break;
      }
      case LayerKind::FC:
        l.out_shape = {l.out_channels, 1, 1};
        break;
      case LayerKind::Pool:
        if (shape[1] < l.kernel || shape[2] < l.kernel)
          throw Error(ErrorCode::ShapeMismatch, "pool window larger than input");
        l.out_shape = {shape[0], (shape[1] - l.kernel) / l.stride + 1,
                       (shape[2] - l.kernel) / l.stride + 1};
        break;
    }
    shape = l.out_shape;
  }
  if (layers_.back().kind != LayerKind::FC)
    throw Error(ErrorCode::ConfigError, "last layer must be fully connected");
}

Network Network::preset(const std::string& name) {
  using L = LayerSpec;
  if (name == "b-mlp")
    return Network(name, {1, 28, 28}, {L::fc(400), L::fc(400), L::fc(10, false)});
  if (name == "toy-conv")
    return Network(name, {1, 12, 12},
                   {L::conv(4, 3), L::conv(8, 3), L::pool(2, 2), L::fc(4, false)});
  if (name == "b-lenet")
    return Network(name, {3, 32, 32},
                   {L::conv(6, 5), L::pool(2, 2), L::conv(16, 5), L::pool(2, 2), L::fc(120),
                    L::fc(84), L::fc(10, false)});
  throw Error(ErrorCode::ConfigError, "unknown trainable model '" + name + "'");
}

std::size_t Network::total_weights() const noexcept {
  std::size_t t = 0;
  for (const auto& l : layers_) t += l.weight_count();
  return t;
}

BayesNet BayesNet::initialize(Network network, std::uint64_t init_seed, double sigma_init) {
  BayesNet net{std::move(network), {}};
  std::mt19937_64 gen(init_seed);
  for (const auto& l : net.network.layers()) {
    WeightParams p;
    if (l.has_weights()) {
      const std::size_t fan_in =
          l.kind == LayerKind::Conv ? l.in_shape[0] * l.kernel * l.kernel : l.in_size();
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
      p.mu.resize(l.weight_count());
      for (auto& m : p.mu) m = static_cast<double>(static_cast<float>((2.0 * unit_uniform(gen) - 1.0) * a));
      p.sigma.assign(l.weight_count(), static_cast<double>(static_cast<float>(sigma_init)));
    }
    net.params.push_back(std::move(p));
  }
  return net;
}

std::vector<char> checkpoint_bytes(const BayesNet& net) {
  std::ostringstream os(std::ios::binary);
  os.write("SBNN", 4);
  io::put_le<std::uint32_t>(os, kCheckpointVersion);
  std::uint32_t weighted = 0;
  for (const auto& l : net.network.layers()) weighted += l.has_weights() ? 1 : 0;
  io::put_le<std::uint32_t>(os, weighted);
  const auto& layers = net.network.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].has_weights()) continue;
    io::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(layers[i].kind));
    for (auto d : layers[i].weight_dims()) io::put_le<std::uint32_t>(os, d);
    for (double v : net.params[i].mu) io::put_le<float>(os, static_cast<float>(v));
    for (double v : net.params[i].sigma) io::put_le<float>(os, static_cast<float>(v));
  }
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

void save_checkpoint(const BayesNet& net, const std::filesystem::path& path) {
  const auto bytes = checkpoint_bytes(net);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

void load_checkpoint(BayesNet& net, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  io::expect_magic(is, "SBNN");
  const auto version = io::get_le<std::uint32_t>(is, "SBNN version");
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::BadMagic, "unsupported SBNN version " + std::to_string(version));
  const auto count = io::get_le<std::uint32_t>(is, "SBNN layer count");
  const auto& layers = net.network.layers();
  std::uint32_t seen = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].has_weights()) continue;
    if (seen++ >= count) throw Error(ErrorCode::CountMismatch, "checkpoint has too few layers");
    const auto kind = io::get_le<std::uint8_t>(is, "SBNN layer kind");
    std::array<std::uint32_t, 4> dims{};
    for (auto& d : dims) d = io::get_le<std::uint32_t>(is, "SBNN dims");
    if (kind != static_cast<std::uint8_t>(layers[i].kind) || dims != layers[i].weight_dims())
      throw Error(ErrorCode::ShapeMismatch, "checkpoint layer " + std::to_string(i) +
                                                " does not match the network");
    auto& p = net.params[i];
    p.mu.resize(layers[i].weight_count());
    p.sigma.resize(layers[i].weight_count());
    for (auto& v : p.mu) v = io::get_le<float>(is, "SBNN mu");
    for (auto& v : p.sigma) v = io::get_le<float>(is, "SBNN sigma");
  }
  if (seen != count) throw Error(ErrorCode::CountMismatch, "checkpoint has extra layers");
}

}  // namespace shiftbnn
