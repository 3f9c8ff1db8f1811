#include <doctest.h>

#include <algorithm>

#include "shiftbnn/cost_model.hpp"
#include "shiftbnn/error.hpp"

using namespace shiftbnn::cost;

namespace {

ModelSpec tiny_model() {
  ModelSpec m;
  m.name = "tiny";
  CostLayer conv;
  conv.name = "conv";
  conv.kernel = 3;
  conv.out = 2;
  conv.in = 1;
  conv.in_h = conv.in_w = 5;
  CostLayer fc;
  fc.name = "fc";
  fc.conv = false;
  fc.out = 3;
  fc.in = 18;
  m.layers = {conv, fc};
  return m;
}

}  // namespace

TEST_CASE("layer shape arithmetic") {
  const ModelSpec m = tiny_model();
  CHECK(m.layers[0].out_h() == 3);
  CHECK(m.layers[0].weights() == 18);
  CHECK(m.layers[0].macs() == 18 * 9);
  CHECK(m.layers[0].output_activations() == 18);
  CHECK(m.layers[1].weights() == 54);
  CHECK(m.layers[1].macs() == 54);
  CHECK(m.total_weights() == 72);
}

TEST_CASE("traffic of a two-layer model by hand") {
  const ModelSpec m = tiny_model();
  CostParams p;
  const auto rep = traffic_per_iteration(m, 2, Strategy::Store, p);
  REQUIRE(rep.rows.size() == 6);
  // conv: W = 18, a_in = 25, a_out = 18, S = 2, 2 bytes per value.
  CHECK(rep.rows[0].eps_bytes == 72);
  CHECK(rep.rows[0].param_bytes == 72);
  CHECK(rep.rows[0].fmap_bytes == 100);
  CHECK(rep.rows[0].macs == 324);
  CHECK(rep.rows[1].eps_bytes == 72);
  CHECK(rep.rows[1].fmap_bytes == 144);
  CHECK(rep.rows[2].eps_bytes == 0);
  CHECK(rep.rows[2].fmap_bytes == 100);
  // fc: W = 54, a_in = 18, a_out = 3.
  CHECK(rep.rows[3].eps_bytes == 216);
  CHECK(rep.rows[3].param_bytes == 216);
  CHECK(rep.rows[3].fmap_bytes == 72);
  CHECK(rep.rows[4].fmap_bytes == 24);
  CHECK(rep.rows[5].macs == 108);

  std::uint64_t eps = 0, par = 0, fm = 0, macs = 0;
  double cycles = 0.0, energy = 0.0;
  for (const auto& r : rep.rows) {
    eps += r.eps_bytes;
    par += r.param_bytes;
    fm += r.fmap_bytes;
    macs += r.macs;
    cycles += r.cycles;
    energy += r.energy_pj;
    CHECK(r.cycles == std::max(static_cast<double>(r.macs) / 256.0,
                               static_cast<double>(r.bytes()) / 42.0));
    CHECK(r.energy_pj == 160.0 * static_cast<double>(r.bytes()) + static_cast<double>(r.macs));
  }
  CHECK(rep.totals.eps_bytes == eps);
  CHECK(rep.totals.param_bytes == par);
  CHECK(rep.totals.fmap_bytes == fm);
  CHECK(rep.totals.macs == macs);
  CHECK(rep.totals.cycles == doctest::Approx(cycles).epsilon(1e-12));
  CHECK(rep.totals.energy_pj == doctest::Approx(energy).epsilon(1e-12));
  CHECK(eps == 576);
  CHECK(rep.eps_share() == doctest::Approx(576.0 / static_cast<double>(rep.total_bytes())));

  p.eps_double_read = true;
  const auto twice = traffic_per_iteration(m, 2, Strategy::Store, p);
  CHECK(twice.totals.eps_bytes == 864);
}

TEST_CASE("shift and dnn accounting") {
  const ModelSpec m = tiny_model();
  const CostParams p;
  const auto shift = traffic_per_iteration(m, 4, Strategy::Shift, p);
  for (const auto& r : shift.rows) CHECK(r.eps_bytes == 0);
  const auto store = traffic_per_iteration(m, 4, Strategy::Store, p);
  CHECK(store.totals.param_bytes == shift.totals.param_bytes);
  CHECK(store.totals.fmap_bytes == shift.totals.fmap_bytes);

  const auto dnn = traffic_per_iteration(m, 4, Strategy::Dnn, p);
  CHECK(dnn.samples == 1);
  CHECK(dnn.totals.eps_bytes == 0);
  CHECK(dnn.totals.param_bytes == 3 * 72 * 2);
  CHECK(dnn.totals.macs == 3 * (324 / 2 + 54));
}

TEST_CASE("eps traffic is linear in samples") {
  const CostParams p;
  for (const auto& name : ModelSpec::preset_names()) {
    const ModelSpec m = ModelSpec::preset(name);
    const auto one = traffic_per_iteration(m, 1, Strategy::Store, p).totals.eps_bytes;
    CHECK(one == 2 * m.total_weights() * p.bytes_per_value);
    for (std::uint64_t s : {2u, 8u, 16u, 64u})
      CHECK(traffic_per_iteration(m, s, Strategy::Store, p).totals.eps_bytes == s * one);
  }
}

TEST_CASE("bnn over dnn traffic grows with samples") {
  const CostParams p;
  for (const auto& name : ModelSpec::preset_names()) {
    const ModelSpec m = ModelSpec::preset(name);
    const double dnn = static_cast<double>(traffic_per_iteration(m, 1, Strategy::Dnn, p).total_bytes());
    double last = 0.0;
    for (std::uint64_t s : {1u, 2u, 4u, 8u, 16u, 32u, 64u, 128u}) {
      const double ratio =
          static_cast<double>(traffic_per_iteration(m, s, Strategy::Store, p).total_bytes()) / dnn;
      CHECK(ratio > last);
      last = ratio;
    }
  }
}

TEST_CASE("preset layer counts") {
  CHECK(ModelSpec::preset("b-mlp").total_weights() == 784 * 400 + 400 * 400 + 4000);
  CHECK(ModelSpec::preset("b-lenet").total_weights() ==
        6 * 3 * 25 + 16 * 6 * 25 + 400 * 120 + 120 * 84 + 840);
  CHECK(ModelSpec::preset("b-vgg").total_weights() == 138344128);
  CHECK(ModelSpec::preset("b-alexnet").total_weights() > 60000000);
  CHECK(ModelSpec::preset("b-resnet").total_weights() > 11000000);
  CHECK(ModelSpec::preset_names().size() == 5);
  CHECK_THROWS_AS(ModelSpec::preset("b-bert"), shiftbnn::Error);
}

TEST_CASE("footprint formulas") {
  const ModelSpec m = ModelSpec::preset("b-lenet");
  const CostParams p;
  const auto store = footprint(m, 16, Strategy::Store, p);
  const auto shift = footprint(m, 16, Strategy::Shift, p);
  CHECK(store.eps_bytes == 16 * m.total_weights() * 2);
  CHECK(shift.eps_bytes == 0);
  CHECK(store.param_bytes == shift.param_bytes);
  const double reduction = 1.0 - static_cast<double>(shift.total()) / static_cast<double>(store.total());
  CHECK(reduction >= 0.60);
}

TEST_CASE("latency and energy respond to traffic") {
  const ModelSpec m = ModelSpec::preset("b-mlp");
  const CostParams p;
  const auto store = latency_energy(traffic_per_iteration(m, 8, Strategy::Store, p), p);
  const auto shift = latency_energy(traffic_per_iteration(m, 8, Strategy::Shift, p), p);
  CHECK(shift.cycles <= store.cycles);
  CHECK(shift.energy_pj < store.energy_pj);
  CHECK(store.seconds == doctest::Approx(store.cycles / 200e6));

  // A layer whose traffic does not change contributes no speedup.
  CostParams compute_bound = p;
  compute_bound.bw_dram_bytes_per_cycle = 1e12;
  const auto a = latency_energy(traffic_per_iteration(m, 8, Strategy::Store, compute_bound), compute_bound);
  const auto b = latency_energy(traffic_per_iteration(m, 8, Strategy::Shift, compute_bound), compute_bound);
  CHECK(a.cycles == b.cycles);
}

TEST_CASE("csv round trip") {
  const CostParams p;
  std::vector<TrafficReport> reps = {
      traffic_per_iteration(tiny_model(), 3, Strategy::Store, p),
      traffic_per_iteration(ModelSpec::preset("b-mlp"), 8, Strategy::Shift, p),
      traffic_per_iteration(tiny_model(), 1, Strategy::Dnn, p)};
  const std::string csv = to_csv(reps);
  CHECK(csv.rfind("model,layer,stage,strategy,eps_bytes,param_bytes,fmap_bytes,macs,cycles,energy\n", 0) == 0);
  auto back = parse_csv(csv);
  for (auto& r : reps) r.samples = 0;
  CHECK(back == reps);
  CHECK(to_csv(back) == csv);
  CHECK_THROWS_AS(parse_csv("bad header\n"), shiftbnn::Error);
  CHECK_THROWS_AS(parse_csv(csv.substr(0, csv.size() / 2)), shiftbnn::Error);
}

TEST_CASE("mapping overheads") {
  const auto rc = mapping_overhead(Mapping::RC, 7);
  CHECK(rc.swap_wires == 0);
  CHECK(rc.extra_adder_trees == 0);
  CHECK(rc.control_modes == 2);
  const auto mn = mapping_overhead(Mapping::MN_V1, 4);
  CHECK(mn.swap_wires == 12);
  CHECK(mn.square_array_required);
  CHECK(mapping_overhead(Mapping::MN_V2, 5).extra_adder_trees == 5);
  CHECK(mapping_overhead(Mapping::K_V1, 3).swap_wires == 8);
  CHECK(mapping_overhead(Mapping::K_V1, 4).swap_wires == 16);
  CHECK(mapping_overhead(Mapping::BM_V1, 4).dual_input_buffers);
  CHECK(mn.rank() == 12 + 4);
  CHECK_THROWS_AS(mapping_overhead(Mapping::RC, 0), shiftbnn::Error);
}

TEST_CASE("parameter validation") {
  CostParams p;
  p.bw_dram_bytes_per_cycle = 0;
  CHECK_THROWS_AS(p.validate(), shiftbnn::Error);
  CHECK_THROWS_AS(traffic_per_iteration(tiny_model(), 0, Strategy::Store, CostParams{}),
                  shiftbnn::Error);
  CHECK(parse_strategy("store") == Strategy::Store);
  CHECK(parse_stage("GC") == Stage::GC);
}
