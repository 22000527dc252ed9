#include "lightnn/costmodel.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <utility>

#include <json.hpp>

namespace lightnn {

namespace {

struct TableField {
  const char* name;
  double CostTable::*member;
};

constexpr TableField kTableFields[] = {
    {"float_mult", &CostTable::float_mult},
    {"float_add", &CostTable::float_add},
    {"int_add", &CostTable::int_add},
    {"shift", &CostTable::shift},
    {"xnor", &CostTable::xnor},
    {"compare", &CostTable::compare},
    {"memory_read_per_bit", &CostTable::memory_read_per_bit},
    {"memory_write_per_bit", &CostTable::memory_write_per_bit},
    {"leakage_per_cycle", &CostTable::leakage_per_cycle},
    {"register_access_per_bit", &CostTable::register_access_per_bit},
};

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::activation: return "activation";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

int64_t shape_elems(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

// Number of in-bounds kernel taps along one axis, summed over output positions.
int64_t valid_taps_1d(int out_size, int stride, int pad, int k, int in_size) {
  int64_t total = 0;
  for (int o = 0; o < out_size; ++o) {
    for (int d = 0; d < k; ++d) {
      const int p = o * stride + d - pad;
      if (p >= 0 && p < in_size) ++total;
    }
  }
  return total;
}

struct MacRule {
  int64_t float_mult = 0, float_add = 0, int_add = 0, shift = 0, xnor = 0;
};

MacRule mac_rule(ModelVariant v) {
  switch (v) {
    case ModelVariant::conventional: return {1, 1, 0, 0, 0};
    case ModelVariant::lightnn2: return {0, 2, 0, 2, 0};
    case ModelVariant::lightnn1: return {0, 1, 0, 1, 0};
    case ModelVariant::binaryconnect: return {0, 1, 0, 0, 0};
    case ModelVariant::lightnn2_bin: return {0, 0, 2, 2, 0};
    case ModelVariant::lightnn1_bin: return {0, 0, 1, 1, 0};
    case ModelVariant::binarynet: return {0, 0, 1, 0, 1};
  }
  throw std::invalid_argument("unknown variant");
}

int64_t layer_weight_bits(const LayerSpec& l, ModelVariant variant) {
  const int64_t wbits = variant_weight_bits(variant);
  if (l.kind == LayerKind::dense)
    return static_cast<int64_t>(l.in) * l.out * wbits + static_cast<int64_t>(l.out) * 32;
  if (l.kind == LayerKind::conv2d)
    return static_cast<int64_t>(l.out_ch) * l.in_ch * l.kh * l.kw * wbits +
           static_cast<int64_t>(l.out_ch) * 32;
  return 0;
}

void fmt_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace

CostTable default_cost_table() { return CostTable{}; }

void validate_cost_table(const CostTable& table) {
  for (const TableField& f : kTableFields) {
    const double v = table.*(f.member);
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument(std::string("cost table: ") + f.name +
                                  " must be finite and >= 0");
  }
}

CostTable cost_table_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("cost table: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("cost table: expected a JSON object");
  CostTable table;
  for (const TableField& f : kTableFields) {
    auto it = j.find(f.name);
    if (it == j.end())
      throw std::invalid_argument(std::string("cost table: missing field ") + f.name);
    if (!it->is_number())
      throw std::invalid_argument(std::string("cost table: field ") + f.name +
                                  " must be a number");
    table.*(f.member) = it->get<double>();
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const TableField& f : kTableFields)
      if (it.key() == f.name) known = true;
    if (!known)
      throw std::invalid_argument("cost table: unknown field " + it.key());
  }
  validate_cost_table(table);
  return table;
}

std::string cost_table_to_json(const CostTable& table) {
  nlohmann::ordered_json j;
  for (const TableField& f : kTableFields) j[f.name] = table.*(f.member);
  return j.dump(2) + "\n";
}

OpTally& OpTally::operator+=(const OpTally& other) {
  float_mult += other.float_mult;
  float_add += other.float_add;
  int_add += other.int_add;
  shift += other.shift;
  xnor += other.xnor;
  compare += other.compare;
  weight_bits_read += other.weight_bits_read;
  act_bits_read += other.act_bits_read;
  act_bits_written += other.act_bits_written;
  return *this;
}

int64_t OpTally::logic_ops() const {
  return float_mult + float_add + int_add + shift + xnor + compare;
}

int64_t storage_bits(const NetworkSpec& net, ModelVariant variant) {
  int64_t bits = 0;
  for (const LayerSpec& l : net.layers) bits += layer_weight_bits(l, variant);
  return bits;
}

OpCounts count_ops(const NetworkSpec& net, ModelVariant variant) {
  const std::vector<std::vector<int>> shapes = layer_shapes(net);
  const MacRule rule = mac_rule(variant);
  const bool bin = variant_binarizes_activations(variant);

  OpCounts counts;
  counts.model = (net.preset_name.empty() ? std::string("custom") : net.preset_name) +
                 ":" + variant_name(variant);

  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    const std::vector<int>& in_shape = i == 0 ? net.input_shape : shapes[i - 1];
    const std::vector<int>& out_shape = shapes[i];
    const int64_t in_elems = shape_elems(in_shape);
    const int64_t out_elems = shape_elems(out_shape);

    OpTally t;
    switch (l.kind) {
      case LayerKind::dense: {
        const int64_t macs = static_cast<int64_t>(l.in) * l.out;
        t.float_mult = macs * rule.float_mult;
        t.float_add = macs * rule.float_add;
        t.int_add = macs * rule.int_add;
        t.shift = macs * rule.shift;
        t.xnor = macs * rule.xnor;
        // one bias add per output
        if (bin) t.int_add += l.out;
        else t.float_add += l.out;
        t.weight_bits_read = layer_weight_bits(l, variant);
        t.act_bits_read = in_elems * 32;
        t.act_bits_written = out_elems * 32;
        break;
      }
      case LayerKind::conv2d: {
        const int oh = out_shape[1], ow = out_shape[2];
        const int64_t taps_y = valid_taps_1d(oh, l.stride, l.pad, l.kh, in_shape[1]);
        const int64_t taps_x = valid_taps_1d(ow, l.stride, l.pad, l.kw, in_shape[2]);
        const int64_t macs = static_cast<int64_t>(l.out_ch) * l.in_ch * taps_y * taps_x;
        t.float_mult = macs * rule.float_mult;
        t.float_add = macs * rule.float_add;
        t.int_add = macs * rule.int_add;
        t.shift = macs * rule.shift;
        t.xnor = macs * rule.xnor;
        if (bin) t.int_add += out_elems;
        else t.float_add += out_elems;
        t.weight_bits_read = layer_weight_bits(l, variant);
        t.act_bits_read = in_elems * 32;
        t.act_bits_written = out_elems * 32;
        break;
      }
      case LayerKind::maxpool:
        t.compare = out_elems * (static_cast<int64_t>(l.window) * l.window - 1);
        t.act_bits_read = in_elems * 32;
        t.act_bits_written = out_elems * 32;
        break;
      case LayerKind::batchnorm:
        // binarized variants fuse batch-norm into the following sign threshold
        if (!bin) {
          t.float_mult = out_elems;
          t.float_add = out_elems;
        }
        break;
      case LayerKind::activation:
        t.compare = out_elems;
        break;
      case LayerKind::dropout:
      case LayerKind::flatten:
        break;
    }
    counts.layer_names.push_back(kind_name(l.kind) + std::to_string(i));
    counts.total += t;
    counts.per_layer.push_back(std::move(t));
  }
  return counts;
}

CostReport estimate(const OpCounts& counts, const CostTable& table) {
  validate_cost_table(table);
  CostReport r;
  r.model = counts.model;
  for (size_t i = 0; i < counts.per_layer.size(); ++i) {
    const OpTally& t = counts.per_layer[i];
    LayerCost lc;
    lc.name = counts.layer_names[i];
    lc.storage_bits = t.weight_bits_read;
    const double sw = static_cast<double>(t.float_mult) * table.float_mult +
                      static_cast<double>(t.float_add) * table.float_add +
                      static_cast<double>(t.int_add) * table.int_add +
                      static_cast<double>(t.shift) * table.shift +
                      static_cast<double>(t.xnor) * table.xnor +
                      static_cast<double>(t.compare) * table.compare;
    const double lk = table.leakage_per_cycle * static_cast<double>(t.logic_ops());
    const double internal = table.register_access_per_bit *
                            static_cast<double>(t.act_bits_read + t.act_bits_written);
    lc.memory = static_cast<double>(t.weight_bits_read + t.act_bits_read) *
                    table.memory_read_per_bit +
                static_cast<double>(t.act_bits_written) * table.memory_write_per_bit;
    lc.logic = sw + lk + internal;
    r.switch_proxy += sw;
    r.leakage += lk;
    r.internal_proxy += internal;
    r.memory += lc.memory;
    r.storage_bits_total += lc.storage_bits;
    r.layers.push_back(std::move(lc));
  }
  r.logic = r.switch_proxy + r.leakage + r.internal_proxy;
  r.total = r.memory + r.logic;
  return r;
}

std::string emit_report(const CostReport& report, const std::string& format) {
  if (format == "json") {
    nlohmann::ordered_json j;
    j["model"] = report.model;
    j["storage_bits"] = report.storage_bits_total;
    j["memory"] = report.memory;
    j["logic"] = report.logic;
    j["switch_proxy"] = report.switch_proxy;
    j["leakage"] = report.leakage;
    j["internal_proxy"] = report.internal_proxy;
    j["total"] = report.total;
    auto layers = nlohmann::ordered_json::array();
    for (const LayerCost& lc : report.layers)
      layers.push_back({{"name", lc.name},
                        {"storage_bits", lc.storage_bits},
                        {"memory", lc.memory},
                        {"logic", lc.logic}});
    j["layers"] = std::move(layers);
    return j.dump(2) + "\n";
  }
  if (format == "csv") {
    std::string out = "model,layer,metric,value\n";
    auto int_row = [&](const std::string& layer, const char* metric, int64_t v) {
      out += report.model + "," + layer + "," + metric + "," + std::to_string(v) + "\n";
    };
    auto num_row = [&](const std::string& layer, const char* metric, double v) {
      out += report.model + "," + layer + "," + metric + ",";
      fmt_double(out, v);
      out += "\n";
    };
    for (const LayerCost& lc : report.layers) {
      int_row(lc.name, "storage_bits", lc.storage_bits);
      num_row(lc.name, "memory", lc.memory);
      num_row(lc.name, "logic", lc.logic);
    }
    int_row("total", "storage_bits", report.storage_bits_total);
    num_row("total", "memory", report.memory);
    num_row("total", "logic", report.logic);
    num_row("total", "switch_proxy", report.switch_proxy);
    num_row("total", "leakage", report.leakage);
    num_row("total", "internal_proxy", report.internal_proxy);
    num_row("total", "total", report.total);
    return out;
  }
  throw std::invalid_argument("unknown report format: " + format +
                              " (expected json or csv)");
}

CostReport parse_report_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("cost report: invalid JSON: ") + e.what());
  }
  try {
    CostReport r;
    r.model = j.at("model").get<std::string>();
    r.storage_bits_total = j.at("storage_bits").get<int64_t>();
    r.memory = j.at("memory").get<double>();
    r.logic = j.at("logic").get<double>();
    r.switch_proxy = j.at("switch_proxy").get<double>();
    r.leakage = j.at("leakage").get<double>();
    r.internal_proxy = j.at("internal_proxy").get<double>();
    r.total = j.at("total").get<double>();
    for (const auto& lj : j.at("layers")) {
      LayerCost lc;
      lc.name = lj.at("name").get<std::string>();
      lc.storage_bits = lj.at("storage_bits").get<int64_t>();
      lc.memory = lj.at("memory").get<double>();
      lc.logic = lj.at("logic").get<double>();
      r.layers.push_back(std::move(lc));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("cost report: bad structure: ") + e.what());
  }
}

}  // namespace lightnn
