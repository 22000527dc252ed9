#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lightnn/network.hpp"
#include "lightnn/variant.hpp"

namespace lightnn {

// Per-operation energy coefficients in arbitrary units. The defaults express
// relative costs (a float multiply dwarfs a shift), not silicon measurements.
struct CostTable {
  double float_mult = 4.0;
  double float_add = 1.0;
  double int_add = 0.1;
  double shift = 0.05;
  double xnor = 0.01;
  double compare = 0.01;
  double memory_read_per_bit = 0.15;
  double memory_write_per_bit = 0.15;
  double leakage_per_cycle = 0.0;
  double register_access_per_bit = 0.0;

  bool operator==(const CostTable&) const = default;
};

CostTable default_cost_table();

// Throws std::invalid_argument when any coefficient is negative or non-finite.
void validate_cost_table(const CostTable& table);

// Strict JSON ingestion: all ten fields required, unknown fields rejected.
CostTable cost_table_from_json(const std::string& text);
std::string cost_table_to_json(const CostTable& table);

// Exact operation and memory-traffic counts for one inference of one item.
struct OpTally {
  int64_t float_mult = 0;
  int64_t float_add = 0;
  int64_t int_add = 0;
  int64_t shift = 0;
  int64_t xnor = 0;
  int64_t compare = 0;
  int64_t weight_bits_read = 0;  // parameter storage, fetched once per inference
  int64_t act_bits_read = 0;
  int64_t act_bits_written = 0;

  OpTally& operator+=(const OpTally& other);
  int64_t logic_ops() const;

  bool operator==(const OpTally&) const = default;
};

struct OpCounts {
  std::string model;  // "<preset>:<variant>"
  std::vector<std::string> layer_names;
  std::vector<OpTally> per_layer;
  OpTally total;
};

// Weight storage per the 32/8/4/1 bits-per-weight rule; biases always 32-bit.
int64_t storage_bits(const NetworkSpec& net, ModelVariant variant);

// Data-independent counts for a single-item inference. Dense/conv kernels
// follow the per-variant arithmetic (multiply, shift-add, sign-select add,
// XNOR); batch-norm is a folded multiply-add except on binarized variants,
// where it merges into the sign compare. Dense/conv/pool layers read their
// input and write their output once at 32 bits per element; the other layer
// kinds are treated as fused.
OpCounts count_ops(const NetworkSpec& net, ModelVariant variant);

struct LayerCost {
  std::string name;
  int64_t storage_bits = 0;
  double memory = 0.0;
  double logic = 0.0;

  bool operator==(const LayerCost&) const = default;
};

// Energy estimate in the table's units. memory + logic = total and
// switch_proxy + leakage + internal_proxy = logic, exactly.
struct CostReport {
  std::string model;
  int64_t storage_bits_total = 0;
  double memory = 0.0;
  double logic = 0.0;
  double switch_proxy = 0.0;
  double leakage = 0.0;
  double internal_proxy = 0.0;
  double total = 0.0;
  std::vector<LayerCost> layers;

  bool operator==(const CostReport&) const = default;
};

CostReport estimate(const OpCounts& counts, const CostTable& table);

// format is "json" or "csv"; CSV columns are model,layer,metric,value.
std::string emit_report(const CostReport& report, const std::string& format);

// Inverse of emit_report(report, "json").
CostReport parse_report_json(const std::string& text);

}  // namespace lightnn
