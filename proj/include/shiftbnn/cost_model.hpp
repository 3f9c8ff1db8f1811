#pragma once

// Analytical off-chip traffic, footprint, latency and energy estimates for
// one training iteration (one example, S weight samples), plus structural
// overhead counts for the candidate PE-array mappings.
//
// Accounting per weighted layer, with W weights, a_in input activations and
// a_out output activations, every value `bytes_per_value` wide:
//
//   stage  eps (STORE)          params       feature maps
//   FW     write S*W            read 2W      S*a_in  (D written)
//   BW     read S*W             read 2W      2*S*a_out (E written and read)
//   GC     read S*W if double   write 2W     S*a_in  (D read)
//
// SHIFT drops every eps term. The DNN reference uses one sample, W instead
// of 2W parameters and no eps. MACs per stage are S*W*R*C (R = C = 1 for
// fully-connected layers). Pooling layers are assumed to stay on chip.
// Buffers are assumed large enough that no tensor crosses the chip
// boundary more often than listed.

#include <cstdint>
#include <string>
#include <vector>

namespace shiftbnn::cost {

enum class Strategy { Store, Shift, Dnn };
enum class Stage { FW, BW, GC };

std::string_view to_string(Strategy s);
std::string_view to_string(Stage s);
Strategy parse_strategy(std::string_view s);
Stage parse_stage(std::string_view s);

struct CostParams {
  std::uint64_t bytes_per_value = 2;
  double e_dram_pj_per_byte = 160.0;
  double e_mac_pj = 1.0;
  /// Calibrated so the first FC layer of a B-MLP at S = 8 spends about 8x
  /// longer moving eps than computing.
  double bw_dram_bytes_per_cycle = 42.0;
  double macs_per_cycle = 256.0;
  double frequency_hz = 200e6;
  /// Count the eps read twice (BW and GC) instead of once.
  bool eps_double_read = false;

  void validate() const;  // throws ConfigError
};

struct CostLayer {
  std::string name;
  bool conv = true;
  std::uint64_t kernel = 1;  // K
  std::uint64_t out = 0;     // M
  std::uint64_t in = 0;      // N
  std::uint64_t in_h = 1, in_w = 1;
  std::uint64_t stride = 1, pad = 0;

  std::uint64_t out_h() const noexcept;
  std::uint64_t out_w() const noexcept;
  std::uint64_t weights() const noexcept { return kernel * kernel * out * in; }
  std::uint64_t input_activations() const noexcept { return in * in_h * in_w; }
  std::uint64_t output_activations() const noexcept { return out * out_h() * out_w(); }
  /// MACs of one stage for one sample.
  std::uint64_t macs() const noexcept { return weights() * out_h() * out_w(); }
};

struct ModelSpec {
  std::string name;
  std::vector<CostLayer> layers;

  std::uint64_t total_weights() const noexcept;

  /// "b-mlp", "b-lenet", "b-alexnet", "b-vgg", "b-resnet". Throws ConfigError.
  static ModelSpec preset(const std::string& name);
  static const std::vector<std::string>& preset_names();
};

struct TrafficRow {
  std::string layer;
  Stage stage = Stage::FW;
  std::uint64_t eps_bytes = 0;
  std::uint64_t param_bytes = 0;
  std::uint64_t fmap_bytes = 0;
  std::uint64_t macs = 0;
  double cycles = 0.0;
  double energy_pj = 0.0;

  std::uint64_t bytes() const noexcept { return eps_bytes + param_bytes + fmap_bytes; }
  bool operator==(const TrafficRow&) const = default;
};

struct TrafficReport {
  std::string model;
  Strategy strategy = Strategy::Store;
  std::uint64_t samples = 1;
  std::vector<TrafficRow> rows;
  TrafficRow totals;  // layer "TOTAL"

  std::uint64_t total_bytes() const noexcept { return totals.bytes(); }
  double eps_share() const noexcept;
  bool operator==(const TrafficReport&) const = default;
};

TrafficReport traffic_per_iteration(const ModelSpec& model, std::uint64_t samples,
                                    Strategy strategy, const CostParams& params);

struct Footprint {
  std::uint64_t eps_bytes = 0;
  std::uint64_t param_bytes = 0;
  std::uint64_t activation_bytes = 0;
  std::uint64_t total() const noexcept { return eps_bytes + param_bytes + activation_bytes; }
};

Footprint footprint(const ModelSpec& model, std::uint64_t samples, Strategy strategy,
                    const CostParams& params);

struct LatencyEnergy {
  double cycles = 0.0;
  double seconds = 0.0;
  double energy_pj = 0.0;
};

LatencyEnergy latency_energy(const TrafficReport& report, const CostParams& params);

/// Time spent moving eps over time spent computing, for one layer of a
/// STORE report, all stages combined.
double eps_memory_to_compute_ratio(const ModelSpec& model, std::size_t layer,
                                   std::uint64_t samples, const CostParams& params);

/// CSV with header
/// model,layer,stage,strategy,eps_bytes,param_bytes,fmap_bytes,macs,cycles,energy
/// and one TOTAL row per report (stage "all"). Energy is in picojoules.
std::string to_csv(const std::vector<TrafficReport>& reports);
/// Inverse of to_csv; the sample count is not part of the CSV and comes
/// back as 0. Throws ConfigError on malformed input.
std::vector<TrafficReport> parse_csv(const std::string& text);

enum class Mapping { MN_V1, MN_V2, RC, K_V1, BM_V1 };

std::string_view to_string(Mapping m);
const std::vector<Mapping>& all_mappings();

struct OverheadReport {
  Mapping mapping = Mapping::RC;
  std::uint64_t array_n = 0;
  std::uint64_t swap_wires = 0;
  std::uint64_t extra_adder_trees = 0;
  std::uint64_t control_modes = 1;
  bool square_array_required = false;
  bool dual_input_buffers = false;

  /// wires + adder_trees * (n - 1) + (control_modes - 1)
  ///   + n * [square array] + n * [dual buffers]
  /// Adder trees are weighted by their n - 1 two-input adders; each
  /// structural constraint costs as much as one extra row of PEs.
  std::uint64_t rank() const noexcept;
};

OverheadReport mapping_overhead(Mapping mapping, std::uint64_t array_n);

}  // namespace shiftbnn::cost
