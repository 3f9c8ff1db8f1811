#include "shiftbnn/cost_model.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

#include "shiftbnn/error.hpp"

namespace shiftbnn::cost {

namespace {

[[noreturn]] void config_error(const std::string& what) {
  throw Error(ErrorCode::ConfigError, what);
}

CostLayer conv(std::string name, std::uint64_t k, std::uint64_t m, std::uint64_t n,
               std::uint64_t in_hw, std::uint64_t stride = 1, std::uint64_t pad = 0) {
  return {std::move(name), true, k, m, n, in_hw, in_hw, stride, pad};
}

CostLayer fc(std::string name, std::uint64_t out, std::uint64_t in) {
  return {std::move(name), false, 1, out, in, 1, 1, 1, 0};
}

ModelSpec make_vgg16() {
  ModelSpec s{"b-vgg", {}};
  const std::uint64_t widths[5] = {64, 128, 256, 512, 512};
  const int repeats[5] = {2, 2, 3, 3, 3};
  std::uint64_t channels = 3, extent = 224;
  int index = 1;
  for (int block = 0; block < 5; ++block) {
    for (int r = 0; r < repeats[block]; ++r) {
      s.layers.push_back(conv("conv" + std::to_string(index++), 3, widths[block], channels,
                              extent, 1, 1));
      channels = widths[block];
    }
    extent /= 2;
  }
  s.layers.push_back(fc("fc1", 4096, 512 * 7 * 7));
  s.layers.push_back(fc("fc2", 4096, 4096));
  s.layers.push_back(fc("fc3", 1000, 4096));
  return s;
}

ModelSpec make_resnet18() {
  ModelSpec s{"b-resnet", {}};
  s.layers.push_back(conv("conv1", 7, 64, 3, 224, 2, 3));
  std::uint64_t channels = 64, extent = 56;  // after the stem max pool
  const std::uint64_t widths[4] = {64, 128, 256, 512};
  for (int stage = 0; stage < 4; ++stage) {
    const std::uint64_t w = widths[stage];
    const std::string p = "res" + std::to_string(stage + 2);
    for (int block = 0; block < 2; ++block) {
      const bool down = stage > 0 && block == 0;
      const std::uint64_t stride = down ? 2 : 1;
      const std::string b = p + (block == 0 ? "a" : "b");
      s.layers.push_back(conv(b + "_1", 3, w, channels, extent, stride, 1));
      const std::uint64_t next = down ? extent / 2 : extent;
      s.layers.push_back(conv(b + "_2", 3, w, w, next, 1, 1));
      if (down) s.layers.push_back(conv(b + "_proj", 1, w, channels, extent, 2, 0));
      channels = w;
      extent = next;
    }
  }
  s.layers.push_back(fc("fc", 1000, 512));
  return s;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    config_error("bad number in CSV: '" + s + "'");
  return v;
}

void add_into(TrafficRow& total, const TrafficRow& row) {
  total.eps_bytes += row.eps_bytes;
  total.param_bytes += row.param_bytes;
  total.fmap_bytes += row.fmap_bytes;
  total.macs += row.macs;
  total.cycles += row.cycles;
  total.energy_pj += row.energy_pj;
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Store: return "store";
    case Strategy::Shift: return "shift";
    case Strategy::Dnn: return "dnn";
  }
  return "?";
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::FW: return "FW";
    case Stage::BW: return "BW";
    case Stage::GC: return "GC";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "store") return Strategy::Store;
  if (s == "shift") return Strategy::Shift;
  if (s == "dnn") return Strategy::Dnn;
  config_error("unknown strategy '" + std::string(s) + "'");
}

Stage parse_stage(std::string_view s) {
  if (s == "FW") return Stage::FW;
  if (s == "BW") return Stage::BW;
  if (s == "GC") return Stage::GC;
  config_error("unknown stage '" + std::string(s) + "'");
}

void CostParams::validate() const {
  if (bytes_per_value == 0 || !(e_dram_pj_per_byte > 0) || !(e_mac_pj > 0) ||
      !(bw_dram_bytes_per_cycle > 0) || !(macs_per_cycle > 0) || !(frequency_hz > 0))
    config_error("cost parameters must all be positive");
}

std::uint64_t CostLayer::out_h() const noexcept {
  return conv ? (in_h + 2 * pad - kernel) / stride + 1 : 1;
}

std::uint64_t CostLayer::out_w() const noexcept {
  return conv ? (in_w + 2 * pad - kernel) / stride + 1 : 1;
}

std::uint64_t ModelSpec::total_weights() const noexcept {
  std::uint64_t t = 0;
  for (const auto& l : layers) t += l.weights();
  return t;
}

const std::vector<std::string>& ModelSpec::preset_names() {
  static const std::vector<std::string> names = {"b-mlp", "b-lenet", "b-alexnet", "b-vgg",
                                                 "b-resnet"};
  return names;
}

ModelSpec ModelSpec::preset(const std::string& name) {
  if (name == "b-mlp")
    return {name, {fc("fc1", 400, 784), fc("fc2", 400, 400), fc("fc3", 10, 400)}};
  if (name == "b-lenet")
    return {name,
            {conv("conv1", 5, 6, 3, 32), conv("conv2", 5, 16, 6, 14), fc("fc1", 120, 400),
             fc("fc2", 84, 120), fc("fc3", 10, 84)}};
  if (name == "b-alexnet")
    return {name,
            {conv("conv1", 11, 96, 3, 227, 4), conv("conv2", 5, 256, 96, 27, 1, 2),
             conv("conv3", 3, 384, 256, 13, 1, 1), conv("conv4", 3, 384, 384, 13, 1, 1),
             conv("conv5", 3, 256, 384, 13, 1, 1), fc("fc1", 4096, 9216),
             fc("fc2", 4096, 4096), fc("fc3", 1000, 4096)}};
  if (name == "b-vgg") return make_vgg16();
  if (name == "b-resnet") return make_resnet18();
  config_error("unknown cost-model preset '" + name + "'");
}

double TrafficReport::eps_share() const noexcept {
  const auto total = total_bytes();
  return total == 0 ? 0.0 : static_cast<double>(totals.eps_bytes) / static_cast<double>(total);
}

TrafficReport traffic_per_iteration(const ModelSpec& model, std::uint64_t samples,
                                    Strategy strategy, const CostParams& params) {
  if (samples == 0) config_error("samples must be >= 1");
  params.validate();
  const bool dnn = strategy == Strategy::Dnn;
  const std::uint64_t s = dnn ? 1 : samples;
  const std::uint64_t bpv = params.bytes_per_value;
  const std::uint64_t param_copies = dnn ? 1 : 2;

  TrafficReport rep;
  rep.model = model.name;
  rep.strategy = strategy;
  rep.samples = s;
  rep.totals.layer = "TOTAL";

  for (const auto& layer : model.layers) {
    const std::uint64_t w = layer.weights();
    const std::uint64_t eps = strategy == Strategy::Store ? s * w * bpv : 0;
    const std::uint64_t par = param_copies * w * bpv;
    const std::uint64_t macs = s * layer.macs();
    const std::uint64_t d_in = s * layer.input_activations() * bpv;
    const std::uint64_t e_out = 2 * s * layer.output_activations() * bpv;

    const TrafficRow stages[3] = {
        {layer.name, Stage::FW, eps, par, d_in, macs},
        {layer.name, Stage::BW, eps, par, e_out, macs},
        {layer.name, Stage::GC, params.eps_double_read ? eps : 0, par, d_in, macs},
    };
    for (TrafficRow row : stages) {
      const double bytes = static_cast<double>(row.bytes());
      const double compute = static_cast<double>(row.macs) / params.macs_per_cycle;
      row.cycles = std::max(compute, bytes / params.bw_dram_bytes_per_cycle);
      row.energy_pj = params.e_dram_pj_per_byte * bytes +
                      params.e_mac_pj * static_cast<double>(row.macs);
      add_into(rep.totals, row);
      rep.rows.push_back(std::move(row));
    }
  }
  return rep;
}

Footprint footprint(const ModelSpec& model, std::uint64_t samples, Strategy strategy,
                    const CostParams& params) {
  const bool dnn = strategy == Strategy::Dnn;
  const std::uint64_t s = dnn ? 1 : samples;
  const std::uint64_t bpv = params.bytes_per_value;
  Footprint f;
  std::uint64_t activations = 0;
  for (const auto& l : model.layers) activations += l.input_activations();
  const std::uint64_t w = model.total_weights();
  f.eps_bytes = strategy == Strategy::Store ? s * w * bpv : 0;
  f.param_bytes = (dnn ? 1 : 2) * w * bpv;
  f.activation_bytes = s * activations * bpv;
  return f;
}

LatencyEnergy latency_energy(const TrafficReport& report, const CostParams& params) {
  LatencyEnergy out;
  for (const auto& row : report.rows) {
    out.cycles += row.cycles;
    out.energy_pj += row.energy_pj;
  }
  out.seconds = out.cycles / params.frequency_hz;
  return out;
}

double eps_memory_to_compute_ratio(const ModelSpec& model, std::size_t layer,
                                   std::uint64_t samples, const CostParams& params) {
  const auto rep = traffic_per_iteration(model, samples, Strategy::Store, params);
  double eps_bytes = 0.0, macs = 0.0;
  for (const auto& row : rep.rows) {
    if (row.layer != model.layers.at(layer).name) continue;
    eps_bytes += static_cast<double>(row.eps_bytes);
    macs += static_cast<double>(row.macs);
  }
  return (eps_bytes / params.bw_dram_bytes_per_cycle) / (macs / params.macs_per_cycle);
}

std::string to_csv(const std::vector<TrafficReport>& reports) {
  std::ostringstream os;
  os << "model,layer,stage,strategy,eps_bytes,param_bytes,fmap_bytes,macs,cycles,energy\n";
  const auto line = [&](const TrafficReport& r, const TrafficRow& row, std::string_view stage) {
    os << r.model << ',' << row.layer << ',' << stage << ',' << to_string(r.strategy) << ','
       << row.eps_bytes << ',' << row.param_bytes << ',' << row.fmap_bytes << ',' << row.macs
       << ',' << format_double(row.cycles) << ',' << format_double(row.energy_pj) << '\n';
  };
  for (const auto& r : reports) {
    for (const auto& row : r.rows) line(r, row, to_string(row.stage));
    line(r, r.totals, "all");
  }
  return os.str();
}

std::vector<TrafficReport> parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string header;
  if (!std::getline(is, header) ||
      header != "model,layer,stage,strategy,eps_bytes,param_bytes,fmap_bytes,macs,cycles,energy")
    config_error("unexpected CSV header");
  std::vector<TrafficReport> out;
  bool open = false;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 10) config_error("CSV row needs 10 fields: " + line);
    if (!open) {
      out.emplace_back();
      out.back().model = f[0];
      out.back().strategy = parse_strategy(f[3]);
      out.back().samples = 0;
      open = true;
    }
    TrafficReport& r = out.back();
    if (f[0] != r.model || parse_strategy(f[3]) != r.strategy)
      config_error("CSV row outside its report block: " + line);
    TrafficRow row;
    row.layer = f[1];
    row.eps_bytes = parse_number<std::uint64_t>(f[4]);
    row.param_bytes = parse_number<std::uint64_t>(f[5]);
    row.fmap_bytes = parse_number<std::uint64_t>(f[6]);
    row.macs = parse_number<std::uint64_t>(f[7]);
    row.cycles = parse_number<double>(f[8]);
    row.energy_pj = parse_number<double>(f[9]);
    if (f[2] == "all") {
      r.totals = row;
      open = false;
    } else {
      row.stage = parse_stage(f[2]);
      r.rows.push_back(std::move(row));
    }
  }
  if (open) config_error("CSV ends without a TOTAL row");
  return out;
}

std::string_view to_string(Mapping m) {
  switch (m) {
    case Mapping::MN_V1: return "MN_V1";
    case Mapping::MN_V2: return "MN_V2";
    case Mapping::RC: return "RC";
    case Mapping::K_V1: return "K_V1";
    case Mapping::BM_V1: return "BM_V1";
  }
  return "?";
}

const std::vector<Mapping>& all_mappings() {
  static const std::vector<Mapping> m = {Mapping::MN_V1, Mapping::MN_V2, Mapping::RC,
                                         Mapping::K_V1, Mapping::BM_V1};
  return m;
}

std::uint64_t OverheadReport::rank() const noexcept {
  const std::uint64_t n = array_n;
  return swap_wires + extra_adder_trees * (n > 0 ? n - 1 : 0) + (control_modes - 1) +
         (square_array_required ? n : 0) + (dual_input_buffers ? n : 0);
}

OverheadReport mapping_overhead(Mapping mapping, std::uint64_t array_n) {
  if (array_n < 1) config_error("array size must be >= 1");
  const std::uint64_t n = array_n;
  OverheadReport r;
  r.mapping = mapping;
  r.array_n = n;
  switch (mapping) {
    case Mapping::MN_V1:
      // PE (m, n) trades its eps with PE (n, m): one path each way per pair.
      r.swap_wires = n * (n - 1);
      r.square_array_required = true;
      break;
    case Mapping::MN_V2:
      r.extra_adder_trees = n;
      break;
    case Mapping::RC:
      r.control_modes = 2;
      break;
    case Mapping::K_V1:
      // Rotation pairs slot k with slot n^2 - 1 - k; an odd array keeps its
      // centre slot in place.
      r.swap_wires = n * n - (n % 2);
      r.control_modes = 2;
      break;
    case Mapping::BM_V1:
      r.extra_adder_trees = n;
      r.dual_input_buffers = true;
      break;
  }
  return r;
}

}  // namespace shiftbnn::cost
