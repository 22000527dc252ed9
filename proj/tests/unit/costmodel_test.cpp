#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "lightnn/costmodel.hpp"
#include "lightnn/network.hpp"
#include "lightnn/variant.hpp"

using namespace lightnn;

namespace {

constexpr ModelVariant kAllVariants[] = {
    ModelVariant::conventional, ModelVariant::lightnn2,     ModelVariant::lightnn1,
    ModelVariant::binaryconnect, ModelVariant::lightnn2_bin, ModelVariant::lightnn1_bin,
    ModelVariant::binarynet};

NetworkSpec single_dense() {
  NetworkSpec net;
  net.preset_name = "dense-only";
  net.input_shape = {784};
  net.num_classes = 100;
  net.layers = {LayerSpec::dense(784, 100)};
  return net;
}

int64_t weight_only_bits(const NetworkSpec& net, ModelVariant v) {
  return storage_bits(net, v) - bias_count(net) * 32;
}

}  // namespace

TEST_CASE("storage_bits: pinned 1-hidden values") {
  const NetworkSpec net = make_preset("mnist-1hidden", ModelVariant::conventional);
  CHECK(parameter_count(net) == 79510);
  CHECK(storage_bits(net, ModelVariant::conventional) == 79400 * 32 + 110 * 32);
  CHECK(storage_bits(net, ModelVariant::lightnn2) == 79400 * 8 + 110 * 32);
  CHECK(storage_bits(net, ModelVariant::lightnn1) == 321120);
  CHECK(storage_bits(net, ModelVariant::binaryconnect) == 79400 + 110 * 32);
  CHECK(storage_bits(net, ModelVariant::lightnn2_bin) ==
        storage_bits(net, ModelVariant::lightnn2));
  CHECK(storage_bits(net, ModelVariant::lightnn1_bin) ==
        storage_bits(net, ModelVariant::lightnn1));
  CHECK(storage_bits(net, ModelVariant::binarynet) ==
        storage_bits(net, ModelVariant::binaryconnect));
}

TEST_CASE("weight storage ratios are exactly 32:8:4:1 on every preset") {
  for (const std::string& name : preset_names()) {
    CAPTURE(name);
    const NetworkSpec net = make_preset(name, ModelVariant::conventional);
    const int64_t conv = weight_only_bits(net, ModelVariant::conventional);
    REQUIRE(conv % 32 == 0);
    const int64_t unit = conv / 32;
    CHECK(weight_only_bits(net, ModelVariant::lightnn2) == unit * 8);
    CHECK(weight_only_bits(net, ModelVariant::lightnn2_bin) == unit * 8);
    CHECK(weight_only_bits(net, ModelVariant::lightnn1) == unit * 4);
    CHECK(weight_only_bits(net, ModelVariant::lightnn1_bin) == unit * 4);
    CHECK(weight_only_bits(net, ModelVariant::binaryconnect) == unit);
    CHECK(weight_only_bits(net, ModelVariant::binarynet) == unit);
  }
}

TEST_CASE("count_ops: pinned Dense(784,100) per-variant kernels") {
  const NetworkSpec net = single_dense();

  const OpCounts conv = count_ops(net, ModelVariant::conventional);
  CHECK(conv.total.float_mult == 78400);
  CHECK(conv.total.float_add == 78500);  // one bias add per output
  CHECK(conv.total.shift == 0);

  const OpCounts ln2 = count_ops(net, ModelVariant::lightnn2);
  CHECK(ln2.total.shift == 156800);
  CHECK(ln2.total.float_add == 156900);  // two adds per MAC plus the bias adds
  CHECK(ln2.total.float_mult == 0);

  const OpCounts ln1 = count_ops(net, ModelVariant::lightnn1);
  CHECK(ln1.total.shift == 78400);
  CHECK(ln1.total.float_add == 78500);

  const OpCounts bc = count_ops(net, ModelVariant::binaryconnect);
  CHECK(bc.total.shift == 0);
  CHECK(bc.total.float_add == 78500);
  CHECK(bc.total.xnor == 0);

  const OpCounts l2b = count_ops(net, ModelVariant::lightnn2_bin);
  CHECK(l2b.total.shift == 156800);
  CHECK(l2b.total.int_add == 156900);
  CHECK(l2b.total.float_add == 0);

  const OpCounts l1b = count_ops(net, ModelVariant::lightnn1_bin);
  CHECK(l1b.total.shift == 78400);
  CHECK(l1b.total.int_add == 78500);

  const OpCounts bn = count_ops(net, ModelVariant::binarynet);
  CHECK(bn.total.xnor == 78400);  // equal to the MAC count
  CHECK(bn.total.int_add == 78500);
  CHECK(bn.total.shift == 0);
  CHECK(bn.total.float_mult == 0);

  // Activation traffic: the dense layer reads its input and writes its
  // output at 32 bits apiece; weight traffic equals the storage footprint.
  CHECK(conv.total.act_bits_read == 784 * 32);
  CHECK(conv.total.act_bits_written == 100 * 32);
  CHECK(conv.total.weight_bits_read == storage_bits(net, ModelVariant::conventional));
  CHECK(bn.total.weight_bits_read == storage_bits(net, ModelVariant::binarynet));
}

TEST_CASE("count_ops: layer naming, per-layer split, and the totals sum") {
  const NetworkSpec net = make_preset("mnist-1hidden", ModelVariant::lightnn2);
  const OpCounts counts = count_ops(net, ModelVariant::lightnn2);
  CHECK(counts.model == "mnist-1hidden:lightnn2");
  REQUIRE(counts.layer_names.size() == 4);
  CHECK(counts.layer_names[0] == "dense0");
  CHECK(counts.layer_names[1] == "batchnorm1");
  CHECK(counts.layer_names[2] == "activation2");
  CHECK(counts.layer_names[3] == "dense3");

  OpTally sum;
  for (const OpTally& t : counts.per_layer) sum += t;
  CHECK(sum == counts.total);

  // Batch norm costs one multiply and one add per element on float variants;
  // the activation is one compare per element.
  CHECK(counts.per_layer[1].float_mult == 100);
  CHECK(counts.per_layer[1].float_add == 100);
  CHECK(counts.per_layer[2].compare == 100);

  // Batch norm and activation are fused into the producing layer's
  // register traffic, so they carry no memory movement of their own.
  CHECK(counts.per_layer[1].act_bits_read == 0);
  CHECK(counts.per_layer[2].act_bits_written == 0);
}

TEST_CASE("count_ops: binarized batch norm folds into the threshold compare") {
  const NetworkSpec net = make_preset("mnist-1hidden", ModelVariant::binarynet);
  const OpCounts counts = count_ops(net, ModelVariant::binarynet);
  CHECK(counts.per_layer[1].float_mult == 0);
  CHECK(counts.per_layer[1].float_add == 0);
  CHECK(counts.per_layer[2].compare == 100);
}

TEST_CASE("count_ops: pooling costs window-sized compare reductions") {
  NetworkSpec net;
  net.preset_name = "pool-toy";
  net.input_shape = {2, 4, 4};
  net.num_classes = 8;
  net.layers = {LayerSpec::pool(2, 2), LayerSpec::flatten()};
  const OpCounts counts = count_ops(net, ModelVariant::conventional);
  // 2x2 windows over [2,4,4] give 8 outputs, 3 compares each.
  CHECK(counts.per_layer[0].compare == 24);
  CHECK(counts.per_layer[0].act_bits_read == 2 * 4 * 4 * 32);
  CHECK(counts.per_layer[0].act_bits_written == 8 * 32);
}

TEST_CASE("count_ops is a pure function of the architecture") {
  const NetworkSpec net = make_preset("mnist-2conv", ModelVariant::lightnn1);
  const OpCounts a = count_ops(net, ModelVariant::lightnn1);
  const OpCounts b = count_ops(net, ModelVariant::lightnn1);
  CHECK(a.total == b.total);
  REQUIRE(a.per_layer.size() == b.per_layer.size());
  for (size_t i = 0; i < a.per_layer.size(); ++i) CHECK(a.per_layer[i] == b.per_layer[i]);
}

TEST_CASE("estimate: zero table, linearity, split consistency") {
  const NetworkSpec net = make_preset("mnist-1hidden", ModelVariant::lightnn1);
  const OpCounts counts = count_ops(net, ModelVariant::lightnn1);

  CostTable zero;
  zero.float_mult = zero.float_add = zero.int_add = zero.shift = 0.0;
  zero.xnor = zero.compare = 0.0;
  zero.memory_read_per_bit = zero.memory_write_per_bit = 0.0;
  zero.leakage_per_cycle = zero.register_access_per_bit = 0.0;
  const CostReport zero_report = estimate(counts, zero);
  CHECK(zero_report.total == 0.0);
  CHECK(zero_report.memory == 0.0);
  CHECK(zero_report.logic == 0.0);

  CostTable table = default_cost_table();
  table.leakage_per_cycle = 0.002;
  table.register_access_per_bit = 0.01;
  const CostReport base = estimate(counts, table);

  CostTable doubled = table;
  doubled.float_mult *= 2;
  doubled.float_add *= 2;
  doubled.int_add *= 2;
  doubled.shift *= 2;
  doubled.xnor *= 2;
  doubled.compare *= 2;
  doubled.memory_read_per_bit *= 2;
  doubled.memory_write_per_bit *= 2;
  doubled.leakage_per_cycle *= 2;
  doubled.register_access_per_bit *= 2;
  const CostReport twice = estimate(counts, doubled);
  CHECK(twice.total == 2.0 * base.total);
  CHECK(twice.memory == 2.0 * base.memory);
  CHECK(twice.logic == 2.0 * base.logic);

  CHECK(base.logic == base.switch_proxy + base.leakage + base.internal_proxy);
  CHECK(base.total == base.memory + base.logic);
  CHECK(base.storage_bits_total >= storage_bits(net, ModelVariant::lightnn1));

  // Independent recomputation of the total from the raw counts.
  double expect_logic = 0.0, expect_memory = 0.0;
  for (const OpTally& t : counts.per_layer) {
    expect_logic += static_cast<double>(t.float_mult) * table.float_mult +
                    static_cast<double>(t.float_add) * table.float_add +
                    static_cast<double>(t.int_add) * table.int_add +
                    static_cast<double>(t.shift) * table.shift +
                    static_cast<double>(t.xnor) * table.xnor +
                    static_cast<double>(t.compare) * table.compare +
                    table.leakage_per_cycle * static_cast<double>(t.logic_ops()) +
                    table.register_access_per_bit *
                        static_cast<double>(t.act_bits_read + t.act_bits_written);
    expect_memory += static_cast<double>(t.weight_bits_read + t.act_bits_read) *
                         table.memory_read_per_bit +
                     static_cast<double>(t.act_bits_written) * table.memory_write_per_bit;
  }
  CHECK(base.total == doctest::Approx(expect_logic + expect_memory).epsilon(1e-12));
}

TEST_CASE("estimate: default table orders the seven variants as expected") {
  const CostTable table = default_cost_table();
  double totals[7];
  for (int i = 0; i < 7; ++i) {
    const ModelVariant v = kAllVariants[i];
    const NetworkSpec net = make_preset("mnist-1hidden", v);
    totals[i] = estimate(count_ops(net, v), table).total;
  }
  const double conv = totals[0], ln2 = totals[1], ln1 = totals[2], bc = totals[3];
  const double l2b = totals[4], l1b = totals[5], bnet = totals[6];
  CHECK(conv > ln2);
  CHECK(ln2 > ln1);
  CHECK(ln1 >= l2b);
  CHECK(l2b > l1b);
  CHECK(l1b > bnet);
  CHECK(bc > bnet);
  CHECK(bc < ln2);
}

TEST_CASE("cost table json: round trip and strict validation") {
  CostTable table = default_cost_table();
  table.shift = 0.07;
  table.leakage_per_cycle = 0.001;
  const std::string text = cost_table_to_json(table);
  const CostTable parsed = cost_table_from_json(text);
  CHECK(parsed == table);

  CHECK_THROWS(cost_table_from_json("not json at all"));
  CHECK_THROWS(cost_table_from_json("{\"float_mult\": 4.0}"));  // missing fields
  CHECK_THROWS(cost_table_from_json(R"({"float_mult": "four", "float_add": 1,
    "int_add": 0.1, "shift": 0.05, "xnor": 0.01, "compare": 0.01,
    "memory_read_per_bit": 0.15, "memory_write_per_bit": 0.15,
    "leakage_per_cycle": 0, "register_access_per_bit": 0})"));
  // Unknown field.
  std::string extra = text;
  extra.insert(extra.rfind('}'), ",\"bogus_field\": 1.0");
  CHECK_THROWS(cost_table_from_json(extra));
  // Negative coefficient.
  CostTable bad = default_cost_table();
  bad.shift = -0.01;
  CHECK_THROWS(validate_cost_table(bad));
  CHECK_THROWS(cost_table_from_json(cost_table_to_json(bad)));
}

TEST_CASE("emit_report json round-trips the full report") {
  const NetworkSpec net = make_preset("mnist-1hidden", ModelVariant::lightnn2_bin);
  CostTable table = default_cost_table();
  table.leakage_per_cycle = 0.0007;
  table.register_access_per_bit = 0.013;
  const CostReport report = estimate(count_ops(net, ModelVariant::lightnn2_bin), table);
  const CostReport parsed = parse_report_json(emit_report(report, "json"));
  CHECK(parsed == report);
}

TEST_CASE("emit_report csv: header and row count") {
  const NetworkSpec net = make_preset("mnist-1hidden", ModelVariant::lightnn1);
  const CostReport report =
      estimate(count_ops(net, ModelVariant::lightnn1), default_cost_table());
  const std::string csv = emit_report(report, "csv");
  CHECK(csv.rfind("model,layer,metric,value", 0) == 0);
  // One header, three metrics per layer, seven total rows.
  const auto lines = std::count(csv.begin(), csv.end(), '\n');
  CHECK(lines == 1 + static_cast<int64_t>(report.layers.size()) * 3 + 7);

  CHECK_THROWS(emit_report(report, "xml"));
}

TEST_CASE("default cost table satisfies its own constraints") {
  const CostTable t = default_cost_table();
  CHECK(t.float_mult > t.shift);
  CHECK(t.shift > t.xnor);
  CHECK(t.memory_read_per_bit > 0.0);
  CHECK_NOTHROW(validate_cost_table(t));
}
