#include "lightnn/model_io.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "lightnn/codebook.hpp"

namespace lightnn {

namespace {

constexpr char kModelMagic[4] = {'L', 'N', 'N', '1'};
constexpr char kCheckpointMagic[4] = {'L', 'N', 'N', 'C'};
constexpr uint8_t kFormatVersion = 1;

void put_u8(std::vector<uint8_t>& b, uint8_t v) { b.push_back(v); }

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v));
  b.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<uint8_t>& b, float v) {
  put_u32(b, std::bit_cast<uint32_t>(v));
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > bytes.size())
      throw std::runtime_error("model file truncated at byte offset " +
                               std::to_string(pos));
  }
  uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
};

uint8_t kind_tag(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return 0;
    case LayerKind::conv2d: return 1;
    case LayerKind::maxpool: return 2;
    case LayerKind::batchnorm: return 3;
    case LayerKind::activation: return 4;
    case LayerKind::dropout: return 5;
    case LayerKind::flatten: return 6;
  }
  throw std::invalid_argument("unknown layer kind");
}

void write_record(std::vector<uint8_t>& out, const LayerSpec& l) {
  put_u8(out, kind_tag(l.kind));
  switch (l.kind) {
    case LayerKind::dense:
      put_u32(out, static_cast<uint32_t>(l.in));
      put_u32(out, static_cast<uint32_t>(l.out));
      break;
    case LayerKind::conv2d:
      put_u32(out, static_cast<uint32_t>(l.in_ch));
      put_u32(out, static_cast<uint32_t>(l.out_ch));
      put_u32(out, static_cast<uint32_t>(l.kh));
      put_u32(out, static_cast<uint32_t>(l.kw));
      put_u32(out, static_cast<uint32_t>(l.stride));
      put_u32(out, static_cast<uint32_t>(l.pad));
      break;
    case LayerKind::maxpool:
      put_u32(out, static_cast<uint32_t>(l.window));
      put_u32(out, static_cast<uint32_t>(l.stride));
      break;
    case LayerKind::batchnorm:
      put_u32(out, static_cast<uint32_t>(l.features));
      break;
    case LayerKind::activation:
      put_u32(out, l.act == ActivationKind::htanh_sign ? 1u : 0u);
      break;
    case LayerKind::dropout:
      put_f32(out, l.rate);
      break;
    case LayerKind::flatten:
      break;
  }
}

LayerSpec read_record(Reader& r) {
  const uint8_t tag = r.u8();
  switch (tag) {
    case 0: {
      const int in = static_cast<int>(r.u32());
      const int out = static_cast<int>(r.u32());
      return LayerSpec::dense(in, out);
    }
    case 1: {
      const int in_ch = static_cast<int>(r.u32());
      const int out_ch = static_cast<int>(r.u32());
      const int kh = static_cast<int>(r.u32());
      const int kw = static_cast<int>(r.u32());
      const int stride = static_cast<int>(r.u32());
      const int pad = static_cast<int>(r.u32());
      return LayerSpec::conv(in_ch, out_ch, kh, kw, stride, pad);
    }
    case 2: {
      const int window = static_cast<int>(r.u32());
      const int stride = static_cast<int>(r.u32());
      return LayerSpec::pool(window, stride);
    }
    case 3:
      return LayerSpec::batchnorm(static_cast<int>(r.u32()));
    case 4: {
      const uint32_t act = r.u32();
      if (act > 1)
        throw std::runtime_error("model file: unknown activation tag " +
                                 std::to_string(act));
      return LayerSpec::activation(act ? ActivationKind::htanh_sign
                                       : ActivationKind::relu);
    }
    case 5:
      return LayerSpec::dropout(r.f32());
    case 6:
      return LayerSpec::flatten();
    default:
      throw std::runtime_error("model file: unknown layer kind tag " +
                               std::to_string(tag));
  }
}

int64_t layer_weight_count(const LayerSpec& l) {
  if (l.kind == LayerKind::dense) return static_cast<int64_t>(l.in) * l.out;
  return static_cast<int64_t>(l.out_ch) * l.in_ch * l.kh * l.kw;
}

int layer_bias_count(const LayerSpec& l) {
  return l.kind == LayerKind::dense ? l.out : l.out_ch;
}

void put_tensor(std::vector<uint8_t>& out, const Tensor& t) {
  for (float v : t.data) put_f32(out, v);
}

Tensor read_tensor(Reader& r, const std::vector<int>& shape) {
  Tensor t(shape);
  for (float& v : t.data) v = r.f32();
  return t;
}

void put_codes(std::vector<uint8_t>& out, const std::vector<WeightCode>& codes,
               const CodebookSpec& spec) {
  const int bits = bits_per_weight(spec);
  if (bits == 8) {
    for (const WeightCode& c : codes) put_u8(out, encode(c, spec));
  } else if (bits == 4) {
    for (size_t i = 0; i < codes.size(); i += 2) {
      uint8_t byte = encode(codes[i], spec);
      if (i + 1 < codes.size())
        byte = static_cast<uint8_t>(byte | (encode(codes[i + 1], spec) << 4));
      put_u8(out, byte);
    }
  } else {
    uint8_t byte = 0;
    int filled = 0;
    for (const WeightCode& c : codes) {
      byte = static_cast<uint8_t>(byte | (encode(c, spec) << filled));
      if (++filled == 8) {
        put_u8(out, byte);
        byte = 0;
        filled = 0;
      }
    }
    if (filled > 0) put_u8(out, byte);
  }
}

std::vector<WeightCode> read_codes(Reader& r, int64_t count,
                                   const CodebookSpec& spec) {
  const int bits = bits_per_weight(spec);
  const size_t payload = static_cast<size_t>((count * bits + 7) / 8);
  r.need(payload);
  std::vector<WeightCode> codes;
  codes.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    uint8_t raw;
    if (bits == 8) {
      raw = r.bytes[r.pos + static_cast<size_t>(i)];
    } else if (bits == 4) {
      const uint8_t byte = r.bytes[r.pos + static_cast<size_t>(i / 2)];
      raw = (i % 2 == 0) ? (byte & 0xF) : (byte >> 4);
    } else {
      const uint8_t byte = r.bytes[r.pos + static_cast<size_t>(i / 8)];
      raw = (byte >> (i % 8)) & 1;
    }
    codes.push_back(decode(raw, spec));
  }
  r.pos += payload;
  return codes;
}

// Reconstructs the per-item input shape from the layer chain alone: dense
// first layer pins a flat width; a conv head is inverted backward from the
// flatten->dense width assuming square spatial dims. Returns empty when the
// chain does not determine the shape.
std::vector<int> infer_input_shape(const std::vector<LayerSpec>& layers) {
  if (layers.empty()) return {};
  if (layers.front().kind == LayerKind::dense) return {layers.front().in};
  if (layers.front().kind != LayerKind::conv2d) return {};

  // find the flatten -> dense transition and the channel count entering it
  int channels = layers.front().in_ch;
  size_t flat_at = layers.size();
  int flat_width = 0;
  int chan_at_flat = 0;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.kind == LayerKind::conv2d) channels = l.out_ch;
    if (l.kind == LayerKind::flatten) {
      for (size_t j = i + 1; j < layers.size(); ++j) {
        if (layers[j].kind == LayerKind::dense) {
          flat_at = i;
          flat_width = layers[j].in;
          chan_at_flat = channels;
          break;
        }
        if (layers[j].kind != LayerKind::dropout &&
            layers[j].kind != LayerKind::batchnorm &&
            layers[j].kind != LayerKind::activation)
          break;
      }
      break;
    }
  }
  if (flat_at == layers.size() || chan_at_flat <= 0 || flat_width <= 0) return {};
  if (flat_width % chan_at_flat != 0) return {};
  const int area = flat_width / chan_at_flat;
  int s = 0;
  while ((s + 1) * (s + 1) <= area) ++s;
  if (s * s != area) return {};

  // invert the spatial chain back to the input
  for (size_t i = flat_at; i-- > 0;) {
    const LayerSpec& l = layers[i];
    if (l.kind == LayerKind::conv2d)
      s = (s - 1) * l.stride + l.kh - 2 * l.pad;
    else if (l.kind == LayerKind::maxpool)
      s = (s - 1) * l.stride + l.window;
    if (s <= 0) return {};
  }
  return {layers.front().in_ch, s, s};
}

int derive_num_classes(const std::vector<LayerSpec>& layers) {
  for (size_t i = layers.size(); i-- > 0;) {
    if (layers[i].kind == LayerKind::dense) return layers[i].out;
    if (layers[i].kind == LayerKind::conv2d) return layers[i].out_ch;
  }
  throw std::runtime_error("model file: no trainable layer present");
}

void write_file_atomic(const std::string& path, const std::vector<uint8_t>& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec)
    throw std::runtime_error("cannot move " + tmp.string() + " to " + path + ": " +
                             ec.message());
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

void check_magic(Reader& r, const char magic[4], const char* what) {
  r.need(4);
  for (int i = 0; i < 4; ++i) {
    if (static_cast<char>(r.bytes[r.pos + i]) != magic[i])
      throw std::runtime_error(std::string(what) + ": bad magic at byte offset " +
                               std::to_string(r.pos + i));
  }
  r.pos += 4;
}

ModelVariant variant_from_id(uint8_t id) {
  if (id >= kNumVariants)
    throw std::runtime_error("model file: unknown variant id " + std::to_string(id));
  return static_cast<ModelVariant>(id);
}

}  // namespace

std::vector<uint8_t> pack_model(const QuantizedModel& model) {
  if (model.folded)
    throw std::invalid_argument("pack_model: pack the unfolded model; fold at load time");
  if (model.net.layers.size() > 0xFFFF)
    throw std::invalid_argument("pack_model: too many layers");

  const auto spec = variant_codebook(model.net.variant);
  const LayerSlots slots = layer_slots(model.net);

  std::vector<uint8_t> out;
  out.insert(out.end(), kModelMagic, kModelMagic + 4);
  put_u8(out, kFormatVersion);
  put_u8(out, static_cast<uint8_t>(model.net.variant));
  put_u16(out, static_cast<uint16_t>(model.net.layers.size()));

  for (size_t i = 0; i < model.net.layers.size(); ++i) {
    const LayerSpec& l = model.net.layers[i];
    write_record(out, l);
    if (slots.linear[i] >= 0) {
      const QuantizedLinear& ql = model.linear[static_cast<size_t>(slots.linear[i])];
      const int64_t wcount = layer_weight_count(l);
      if (!spec) {
        if (ql.raw_weights.numel() != wcount)
          throw std::invalid_argument("pack_model: weight count mismatch");
        put_tensor(out, ql.raw_weights);
      } else {
        if (static_cast<int64_t>(ql.codes.size()) != wcount)
          throw std::invalid_argument("pack_model: code count mismatch");
        put_codes(out, ql.codes, *spec);
      }
      if (ql.biases.numel() != layer_bias_count(l))
        throw std::invalid_argument("pack_model: bias count mismatch");
      put_tensor(out, ql.biases);
    } else if (l.kind == LayerKind::batchnorm) {
      const BatchNormState& bn = model.batchnorm[static_cast<size_t>(slots.bn[i])];
      if (bn.gamma.numel() != l.features || bn.beta.numel() != l.features ||
          bn.running_mean.numel() != l.features || bn.running_var.numel() != l.features)
        throw std::invalid_argument("pack_model: batch-norm size mismatch");
      put_tensor(out, bn.gamma);
      put_tensor(out, bn.beta);
      put_tensor(out, bn.running_mean);
      put_tensor(out, bn.running_var);
      put_f32(out, bn.momentum);
      put_f32(out, bn.epsilon);
    }
  }
  return out;
}

QuantizedModel unpack_model(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  check_magic(r, kModelMagic, "model file");
  const uint8_t version = r.u8();
  if (version != kFormatVersion)
    throw std::runtime_error("model file: unsupported version " +
                             std::to_string(version));
  QuantizedModel model;
  model.net.variant = variant_from_id(r.u8());
  const uint16_t layer_count = r.u16();
  const auto spec = variant_codebook(model.net.variant);

  for (uint16_t i = 0; i < layer_count; ++i) {
    LayerSpec l = read_record(r);
    if (l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) {
      QuantizedLinear ql;
      const int64_t wcount = layer_weight_count(l);
      const std::vector<int> wshape =
          l.kind == LayerKind::dense
              ? std::vector<int>{l.in, l.out}
              : std::vector<int>{l.out_ch, l.in_ch, l.kh, l.kw};
      if (!spec)
        ql.raw_weights = read_tensor(r, wshape);
      else
        ql.codes = read_codes(r, wcount, *spec);
      ql.biases = read_tensor(r, {layer_bias_count(l)});
      model.linear.push_back(std::move(ql));
    } else if (l.kind == LayerKind::batchnorm) {
      BatchNormState bn;
      bn.gamma = read_tensor(r, {l.features});
      bn.beta = read_tensor(r, {l.features});
      bn.running_mean = read_tensor(r, {l.features});
      bn.running_var = read_tensor(r, {l.features});
      bn.momentum = r.f32();
      bn.epsilon = r.f32();
      model.batchnorm.push_back(std::move(bn));
    }
    model.net.layers.push_back(std::move(l));
  }
  if (r.pos != bytes.size())
    throw std::runtime_error("model file: " +
                             std::to_string(bytes.size() - r.pos) +
                             " trailing bytes after byte offset " +
                             std::to_string(r.pos));

  model.net.num_classes = derive_num_classes(model.net.layers);
  model.net.input_shape = infer_input_shape(model.net.layers);
  if (!model.net.input_shape.empty()) layer_shapes(model.net);
  return model;
}

void save_model(const QuantizedModel& model, const std::string& path) {
  write_file_atomic(path, pack_model(model));
}

QuantizedModel load_model(const std::string& path) {
  return unpack_model(read_file(path));
}

void save_checkpoint(const TrainState& state, const NetworkSpec& net,
                     const std::string& config_digest, const std::string& path) {
  if (config_digest.size() != 16)
    throw std::invalid_argument("save_checkpoint: digest must be 16 hex chars");

  std::vector<uint8_t> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  put_u8(out, kFormatVersion);
  put_u8(out, static_cast<uint8_t>(net.variant));
  if (net.preset_name.size() > 0xFFFF)
    throw std::invalid_argument("save_checkpoint: preset name too long");
  put_u16(out, static_cast<uint16_t>(net.preset_name.size()));
  out.insert(out.end(), net.preset_name.begin(), net.preset_name.end());
  put_u8(out, static_cast<uint8_t>(net.input_shape.size()));
  for (int d : net.input_shape) put_u32(out, static_cast<uint32_t>(d));
  put_u32(out, static_cast<uint32_t>(net.num_classes));
  put_u16(out, static_cast<uint16_t>(net.layers.size()));
  for (const LayerSpec& l : net.layers) write_record(out, l);

  // Tensors are interleaved in layer order, mirroring load_checkpoint and the
  // packed-model layout.
  size_t li = 0, bi = 0;
  for (const LayerSpec& l : net.layers) {
    if (l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) {
      const LayerParams& lp = state.real.linear.at(li++);
      put_tensor(out, lp.weights);
      put_tensor(out, lp.biases);
    } else if (l.kind == LayerKind::batchnorm) {
      const BatchNormState& bn = state.real.batchnorm.at(bi++);
      put_tensor(out, bn.gamma);
      put_tensor(out, bn.beta);
      put_tensor(out, bn.running_mean);
      put_tensor(out, bn.running_var);
      put_f32(out, bn.momentum);
      put_f32(out, bn.epsilon);
    }
  }
  if (li != state.real.linear.size() || bi != state.real.batchnorm.size())
    throw std::invalid_argument("save_checkpoint: state does not match the network");
  for (const Gradients* g : {&state.adam_m, &state.adam_v}) {
    li = bi = 0;
    for (const LayerSpec& l : net.layers) {
      if (l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) {
        const LayerParams& lp = g->linear.at(li++);
        put_tensor(out, lp.weights);
        put_tensor(out, lp.biases);
      } else if (l.kind == LayerKind::batchnorm) {
        const Gradients::BnGrads& bg = g->batchnorm.at(bi++);
        put_tensor(out, bg.dgamma);
        put_tensor(out, bg.dbeta);
      }
    }
  }
  put_u64(out, static_cast<uint64_t>(state.step));
  put_u64(out, state.seed);
  put_f32(out, state.eta);
  uint64_t rng_state[4];
  state.rng.save_state(rng_state);
  for (uint64_t word : rng_state) put_u64(out, word);
  out.insert(out.end(), config_digest.begin(), config_digest.end());

  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  Reader r{bytes};
  check_magic(r, kCheckpointMagic, "checkpoint file");
  const uint8_t version = r.u8();
  if (version != kFormatVersion)
    throw std::runtime_error("checkpoint file: unsupported version " +
                             std::to_string(version));

  Checkpoint ck;
  ck.net.variant = variant_from_id(r.u8());
  const uint16_t name_len = r.u16();
  r.need(name_len);
  ck.net.preset_name.assign(reinterpret_cast<const char*>(&bytes[r.pos]), name_len);
  r.pos += name_len;
  const uint8_t rank = r.u8();
  for (int i = 0; i < rank; ++i)
    ck.net.input_shape.push_back(static_cast<int>(r.u32()));
  ck.net.num_classes = static_cast<int>(r.u32());
  const uint16_t layer_count = r.u16();
  for (uint16_t i = 0; i < layer_count; ++i)
    ck.net.layers.push_back(read_record(r));

  for (const LayerSpec& l : ck.net.layers) {
    if (l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) {
      LayerParams lp;
      const std::vector<int> wshape =
          l.kind == LayerKind::dense
              ? std::vector<int>{l.in, l.out}
              : std::vector<int>{l.out_ch, l.in_ch, l.kh, l.kw};
      lp.weights = read_tensor(r, wshape);
      lp.biases = read_tensor(r, {layer_bias_count(l)});
      ck.state.real.linear.push_back(std::move(lp));
    } else if (l.kind == LayerKind::batchnorm) {
      BatchNormState bn;
      bn.gamma = read_tensor(r, {l.features});
      bn.beta = read_tensor(r, {l.features});
      bn.running_mean = read_tensor(r, {l.features});
      bn.running_var = read_tensor(r, {l.features});
      bn.momentum = r.f32();
      bn.epsilon = r.f32();
      ck.state.real.batchnorm.push_back(std::move(bn));
    }
  }
  for (Gradients* g : {&ck.state.adam_m, &ck.state.adam_v}) {
    for (const LayerSpec& l : ck.net.layers) {
      if (l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) {
        LayerParams lp;
        const std::vector<int> wshape =
            l.kind == LayerKind::dense
                ? std::vector<int>{l.in, l.out}
                : std::vector<int>{l.out_ch, l.in_ch, l.kh, l.kw};
        lp.weights = read_tensor(r, wshape);
        lp.biases = read_tensor(r, {layer_bias_count(l)});
        g->linear.push_back(std::move(lp));
      } else if (l.kind == LayerKind::batchnorm) {
        Gradients::BnGrads bg;
        bg.dgamma = read_tensor(r, {l.features});
        bg.dbeta = read_tensor(r, {l.features});
        g->batchnorm.push_back(std::move(bg));
      }
    }
  }
  ck.state.step = static_cast<int64_t>(r.u64());
  ck.state.seed = r.u64();
  ck.state.eta = r.f32();
  uint64_t rng_state[4];
  for (uint64_t& word : rng_state) word = r.u64();
  ck.state.rng.restore_state(rng_state);
  r.need(16);
  ck.config_digest.assign(reinterpret_cast<const char*>(&bytes[r.pos]), 16);
  r.pos += 16;
  if (r.pos != bytes.size())
    throw std::runtime_error("checkpoint file: trailing bytes after byte offset " +
                             std::to_string(r.pos));
  return ck;
}

}  // namespace lightnn
