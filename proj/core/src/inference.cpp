#include "lightnn/inference.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lightnn {

void validate_format(const FixedPointFormat& fmt) {
  // 40-bit cap keeps the 64-bit accumulators overflow-free for any layer
  // below 2^22 inputs per output
  if (fmt.total_bits < 3 || fmt.total_bits > 40)
    throw std::invalid_argument("fixed format: total_bits must lie in [3, 40]");
  if (fmt.frac_bits <= 0 || fmt.frac_bits >= fmt.total_bits)
    throw std::invalid_argument("fixed format: need 0 < frac_bits < total_bits");
  if (fmt.total_bits - fmt.frac_bits < 2)
    throw std::invalid_argument("fixed format: integer part too narrow for the +-2 range");
}

QuantizedModel quantize_model(const Parameters& params, const NetworkSpec& net) {
  QuantizedModel model;
  model.net = net;
  model.batchnorm = params.batchnorm;
  const auto spec = variant_codebook(net.variant);
  for (const LayerParams& lp : params.linear) {
    QuantizedLinear ql;
    ql.biases = lp.biases;
    if (!spec) {
      ql.raw_weights = lp.weights;
    } else if (spec->kind == CodebookKind::binary) {
      ql.codes.reserve(lp.weights.data.size());
      for (float w : lp.weights.data) ql.codes.push_back(binarize(w));
    } else {
      const CodebookIndex index(*spec);
      ql.codes.reserve(lp.weights.data.size());
      for (float w : lp.weights.data)
        ql.codes.push_back(code_for_value(index.nearest_value(w), *spec));
    }
    model.linear.push_back(std::move(ql));
  }
  return model;
}

Parameters decode_parameters(const QuantizedModel& model) {
  Parameters params;
  params.batchnorm = model.batchnorm;
  for (const QuantizedLinear& ql : model.linear) {
    LayerParams lp;
    lp.biases = ql.biases;
    if (ql.codes.empty()) {
      lp.weights = ql.raw_weights;
    } else {
      lp.weights = Tensor({static_cast<int>(ql.codes.size())});
      for (size_t i = 0; i < ql.codes.size(); ++i)
        lp.weights.data[i] = ql.codes[i].value();
    }
    params.linear.push_back(std::move(lp));
  }
  // restore weight tensor shapes from the layer specs
  const LayerSlots slots = layer_slots(model.net);
  for (size_t i = 0; i < model.net.layers.size(); ++i) {
    const LayerSpec& l = model.net.layers[i];
    if (slots.linear[i] < 0) continue;
    Tensor& w = params.linear[static_cast<size_t>(slots.linear[i])].weights;
    if (l.kind == LayerKind::dense)
      w.shape = {l.in, l.out};
    else
      w.shape = {l.out_ch, l.in_ch, l.kh, l.kw};
    if (shape_numel(w.shape) != w.numel())
      throw std::runtime_error("decode: weight count does not match layer shape");
  }
  return params;
}

float shift_add_dot(const WeightCode* codes, const float* x, int64_t n) {
  if (n < 0) throw std::invalid_argument("shift_add_dot: negative length");
  float acc = 0.f;
  for (int64_t i = 0; i < n; ++i) acc += shift_add_term(x[i], codes[i]);
  return acc;
}

namespace {

// Matches the test-mode expression in the network forward pass bit for bit.
inline float bn_inv_std(float running_var, float epsilon) {
  return static_cast<float>(1.0 / std::sqrt(static_cast<double>(running_var) + epsilon));
}

struct FoldedAffine {
  Tensor scale, shift;
};

FoldedAffine fold_params(const BatchNormState& bn) {
  const int features = static_cast<int>(bn.gamma.data.size());
  FoldedAffine fold{Tensor({features}), Tensor({features})};
  for (int f = 0; f < features; ++f) {
    const double rv = bn.running_var.data[static_cast<size_t>(f)];
    if (rv <= 0.0)
      throw std::runtime_error("fold_batchnorm: running variance <= 0 at feature " +
                               std::to_string(f));
    const double scale = bn.gamma.data[static_cast<size_t>(f)] /
                         std::sqrt(rv + bn.epsilon);
    fold.scale.data[static_cast<size_t>(f)] = static_cast<float>(scale);
    fold.shift.data[static_cast<size_t>(f)] = static_cast<float>(
        bn.beta.data[static_cast<size_t>(f)] -
        scale * bn.running_mean.data[static_cast<size_t>(f)]);
  }
  return fold;
}

// y[b][j] = sum_k term(x[b][k], codes[k*out+j]) + bias[j], accumulating over
// k in ascending order exactly like the matmul kernel.
Tensor dense_codes_forward(const Tensor& x, const std::vector<WeightCode>& codes,
                           const Tensor& biases, int in, int out) {
  const int b_count = x.dim(0);
  Tensor y({b_count, out});
  for (int b = 0; b < b_count; ++b) {
    const float* xrow = &x.data[static_cast<size_t>(b) * in];
    float* yrow = &y.data[static_cast<size_t>(b) * out];
    for (int k = 0; k < in; ++k) {
      const float xv = xrow[k];
      const WeightCode* crow = &codes[static_cast<size_t>(k) * out];
      for (int j = 0; j < out; ++j) yrow[j] += shift_add_term(xv, crow[j]);
    }
    for (int j = 0; j < out; ++j) yrow[j] += biases.data[static_cast<size_t>(j)];
  }
  return y;
}

Tensor dense_raw_forward(const Tensor& x, const Tensor& weights,
                         const Tensor& biases, int out) {
  Tensor y = matmul(x, weights);
  for (int b = 0; b < y.dim(0); ++b)
    for (int j = 0; j < out; ++j) y.at2(b, j) += biases.data[static_cast<size_t>(j)];
  return y;
}

// Per-item convolution via shift-add, tap order identical to conv2d.
Tensor conv_codes_forward(const Tensor& batch, const std::vector<WeightCode>& codes,
                          const Tensor& biases, const LayerSpec& l) {
  const int b_count = batch.dim(0);
  const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const int oh = (h + 2 * l.pad - l.kh) / l.stride + 1;
  const int ow = (w + 2 * l.pad - l.kw) / l.stride + 1;
  Tensor y({b_count, l.out_ch, oh, ow});
  for (int b = 0; b < b_count; ++b) {
    const float* img = &batch.data[static_cast<size_t>(b) * c * h * w];
    for (int f = 0; f < l.out_ch; ++f) {
      for (int yo = 0; yo < oh; ++yo) {
        for (int xo = 0; xo < ow; ++xo) {
          float acc = 0.f;
          for (int ci = 0; ci < c; ++ci) {
            for (int dy = 0; dy < l.kh; ++dy) {
              const int iy = yo * l.stride + dy - l.pad;
              if (iy < 0 || iy >= h) continue;
              for (int dx = 0; dx < l.kw; ++dx) {
                const int ix = xo * l.stride + dx - l.pad;
                if (ix < 0 || ix >= w) continue;
                const float iv = img[(static_cast<size_t>(ci) * h + iy) * w + ix];
                const WeightCode& code =
                    codes[((static_cast<size_t>(f) * c + ci) * l.kh + dy) * l.kw + dx];
                acc += shift_add_term(iv, code);
              }
            }
          }
          acc += biases.data[static_cast<size_t>(f)];
          y.data[((static_cast<size_t>(b) * l.out_ch + f) * oh + yo) * ow + xo] = acc;
        }
      }
    }
  }
  return y;
}

Tensor conv_raw_forward(const Tensor& batch, const Tensor& weights,
                        const Tensor& biases, const LayerSpec& l) {
  const int b_count = batch.dim(0);
  std::vector<int> item_shape{batch.dim(1), batch.dim(2), batch.dim(3)};
  Tensor item(item_shape);
  Tensor y;
  for (int b = 0; b < b_count; ++b) {
    std::copy(batch.data.begin() + static_cast<size_t>(b) * item.numel(),
              batch.data.begin() + static_cast<size_t>(b + 1) * item.numel(),
              item.data.begin());
    Tensor out = conv2d(item, weights, l.stride, l.pad);
    const int64_t spatial = out.numel() / l.out_ch;
    for (int f = 0; f < l.out_ch; ++f)
      for (int64_t s = 0; s < spatial; ++s)
        out.data[static_cast<size_t>(f * spatial + s)] += biases.data[static_cast<size_t>(f)];
    if (b == 0) {
      std::vector<int> shape = out.shape;
      shape.insert(shape.begin(), b_count);
      y = Tensor(shape);
    }
    std::copy(out.data.begin(), out.data.end(),
              y.data.begin() + static_cast<size_t>(b) * out.numel());
  }
  return y;
}

Tensor bn_test_forward(const Tensor& x, const BatchNormState& bn, int features) {
  Tensor y(x.shape);
  int spatial = 1;
  for (int i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
  const int b_count = x.dim(0);
  for (int f = 0; f < features; ++f) {
    const float mean = bn.running_mean.data[static_cast<size_t>(f)];
    const float inv_std = bn_inv_std(bn.running_var.data[static_cast<size_t>(f)], bn.epsilon);
    const float gamma = bn.gamma.data[static_cast<size_t>(f)];
    const float beta = bn.beta.data[static_cast<size_t>(f)];
    for (int b = 0; b < b_count; ++b) {
      for (int s = 0; s < spatial; ++s) {
        const size_t i = (static_cast<size_t>(b) * features + f) * spatial + s;
        const float xh = (x.data[i] - mean) * inv_std;
        y.data[i] = gamma * xh + beta;
      }
    }
  }
  return y;
}

Tensor bn_folded_forward(const Tensor& x, const Tensor& scale, const Tensor& shift,
                         int features) {
  Tensor y(x.shape);
  int spatial = 1;
  for (int i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
  const int b_count = x.dim(0);
  for (int f = 0; f < features; ++f) {
    const float sc = scale.data[static_cast<size_t>(f)];
    const float sh = shift.data[static_cast<size_t>(f)];
    for (int b = 0; b < b_count; ++b) {
      for (int s = 0; s < spatial; ++s) {
        const size_t i = (static_cast<size_t>(b) * features + f) * spatial + s;
        y.data[i] = sc * x.data[i] + sh;
      }
    }
  }
  return y;
}

Tensor act_test_forward(const Tensor& x, ActivationKind kind) {
  Tensor y(x.shape);
  if (kind == ActivationKind::relu) {
    for (size_t i = 0; i < x.data.size(); ++i)
      y.data[i] = x.data[i] > 0.f ? x.data[i] : 0.f;
  } else {
    for (size_t i = 0; i < x.data.size(); ++i)
      y.data[i] = x.data[i] < 0.f ? -1.f : 1.f;
  }
  return y;
}

Tensor pool_forward(const Tensor& batch, const LayerSpec& l) {
  const int b_count = batch.dim(0);
  std::vector<int> item_shape{batch.dim(1), batch.dim(2), batch.dim(3)};
  Tensor item(item_shape);
  Tensor y;
  for (int b = 0; b < b_count; ++b) {
    std::copy(batch.data.begin() + static_cast<size_t>(b) * item.numel(),
              batch.data.begin() + static_cast<size_t>(b + 1) * item.numel(),
              item.data.begin());
    PoolResult r = maxpool(item, l.window, l.stride);
    if (b == 0) {
      std::vector<int> shape = r.values.shape;
      shape.insert(shape.begin(), b_count);
      y = Tensor(shape);
    }
    std::copy(r.values.data.begin(), r.values.data.end(),
              y.data.begin() + static_cast<size_t>(b) * r.values.numel());
  }
  return y;
}

void check_batch(const QuantizedModel& model, const Tensor& batch) {
  if (batch.rank() < 2 || batch.dim(0) < 1)
    throw std::invalid_argument("inference: batch must have a leading batch axis");
  if (!model.net.input_shape.empty()) {
    std::vector<int> item_shape(batch.shape.begin() + 1, batch.shape.end());
    if (item_shape != model.net.input_shape)
      throw std::invalid_argument("inference: batch item shape does not match the net input");
  }
}

}  // namespace

Tensor infer_float(const QuantizedModel& model, const Tensor& batch) {
  check_batch(model, batch);
  const LayerSlots slots = layer_slots(model.net);
  Tensor cur = batch;
  for (size_t i = 0; i < model.net.layers.size(); ++i) {
    const LayerSpec& l = model.net.layers[i];
    switch (l.kind) {
      case LayerKind::dense: {
        const QuantizedLinear& ql = model.linear[static_cast<size_t>(slots.linear[i])];
        cur = ql.codes.empty()
                  ? dense_raw_forward(cur, ql.raw_weights, ql.biases, l.out)
                  : dense_codes_forward(cur, ql.codes, ql.biases, l.in, l.out);
        break;
      }
      case LayerKind::conv2d: {
        const QuantizedLinear& ql = model.linear[static_cast<size_t>(slots.linear[i])];
        cur = ql.codes.empty()
                  ? conv_raw_forward(cur, ql.raw_weights, ql.biases, l)
                  : conv_codes_forward(cur, ql.codes, ql.biases, l);
        break;
      }
      case LayerKind::maxpool:
        cur = pool_forward(cur, l);
        break;
      case LayerKind::batchnorm: {
        const int slot = slots.bn[i];
        cur = model.folded
                  ? bn_folded_forward(cur, model.bn_scale[static_cast<size_t>(slot)],
                                      model.bn_shift[static_cast<size_t>(slot)], l.features)
                  : bn_test_forward(cur, model.batchnorm[static_cast<size_t>(slot)],
                                    l.features);
        break;
      }
      case LayerKind::activation:
        cur = act_test_forward(cur, l.act);
        break;
      case LayerKind::dropout:
        break;
      case LayerKind::flatten:
        cur = cur.reshaped({cur.dim(0), static_cast<int>(cur.numel() / cur.dim(0))});
        break;
    }
  }
  return cur;
}

QuantizedModel fold_batchnorm(const QuantizedModel& model) {
  QuantizedModel folded = model;
  folded.folded = true;
  folded.bn_scale.clear();
  folded.bn_shift.clear();
  for (const BatchNormState& bn : model.batchnorm) {
    FoldedAffine fold = fold_params(bn);
    folded.bn_scale.push_back(std::move(fold.scale));
    folded.bn_shift.push_back(std::move(fold.shift));
  }
  return folded;
}

// ============================================================================
// fixed-point engine
// ============================================================================

namespace {

struct FixedBuffer {
  std::vector<int64_t> q;
  std::vector<int> shape;  // [B, ...]

  int64_t numel() const { return static_cast<int64_t>(q.size()); }
};

int64_t quantize_to(double x, int frac, int64_t qmin, int64_t qmax) {
  const double scaled = std::floor(std::ldexp(x, frac));
  if (scaled < static_cast<double>(qmin)) return qmin;
  if (scaled > static_cast<double>(qmax)) return qmax;
  return static_cast<int64_t>(scaled);
}

}  // namespace

Tensor infer_fixed(const QuantizedModel& model, const Tensor& batch,
                   const FixedPointFormat& fmt, bool quantize_conventional,
                   FixedTrace* trace) {
  validate_format(fmt);
  check_batch(model, batch);
  const bool conventional = model.net.variant == ModelVariant::conventional;
  if (conventional && !quantize_conventional)
    throw std::invalid_argument(
        "fixed-point evaluation of a float-weight model requires quantizing the weights first");

  const int frac = fmt.frac_bits;
  const int64_t qmax = (int64_t{1} << (fmt.total_bits - 1)) - 1;
  const int64_t qmin = -(int64_t{1} << (fmt.total_bits - 1));
  const int64_t one = int64_t{1} << frac;
  const bool bin_variant = variant_binarizes_activations(model.net.variant);
  const LayerSlots slots = layer_slots(model.net);

  FixedBuffer cur;
  cur.shape = batch.shape;
  cur.q.resize(static_cast<size_t>(batch.numel()));
  for (size_t i = 0; i < batch.data.size(); ++i)
    cur.q[i] = quantize_to(batch.data[i], frac, qmin, qmax);
  if (trace) trace->post_compare += batch.numel();  // input saturation

  const size_t layer_count = model.net.layers.size();
  for (size_t i = 0; i < layer_count; ++i) {
    const LayerSpec& l = model.net.layers[i];
    const bool last_layer = i + 1 == layer_count;
    switch (l.kind) {
      case LayerKind::dense: {
        const QuantizedLinear& ql = model.linear[static_cast<size_t>(slots.linear[i])];
        const int b_count = cur.shape[0];
        const int in = l.in, out = l.out;
        FixedBuffer y;
        y.shape = {b_count, out};
        y.q.assign(static_cast<size_t>(b_count) * out, 0);
        std::vector<int64_t> wq;
        if (ql.codes.empty()) {
          wq.resize(ql.raw_weights.data.size());
          for (size_t k = 0; k < wq.size(); ++k)
            wq[k] = quantize_to(ql.raw_weights.data[k], frac, qmin, qmax);
        }
        for (int b = 0; b < b_count; ++b) {
          const int64_t* xrow = &cur.q[static_cast<size_t>(b) * in];
          int64_t* yrow = &y.q[static_cast<size_t>(b) * out];
          if (ql.codes.empty()) {
            for (int j = 0; j < out; ++j) {
              __int128 acc = 0;
              for (int k = 0; k < in; ++k)
                acc += static_cast<__int128>(xrow[k]) * wq[static_cast<size_t>(k) * out + j];
              if (trace) {
                trace->kernel_mult += in;
                trace->kernel_add += in;
                trace->kernel_shift += 1;
              }
              yrow[j] = static_cast<int64_t>(acc >> frac);
            }
          } else {
            for (int k = 0; k < in; ++k) {
              const int64_t xv = xrow[k];
              const WeightCode* crow = &ql.codes[static_cast<size_t>(k) * out];
              for (int j = 0; j < out; ++j) {
                const WeightCode& c = crow[j];
                if (c.num_exponents == 0) {
                  yrow[j] += c.sign < 0 ? -xv : xv;
                  if (trace) trace->kernel_add += 1;
                } else {
                  int64_t term = xv >> c.exponents[0];
                  for (int e = 1; e < c.num_exponents; ++e)
                    term += xv >> c.exponents[e];
                  yrow[j] += c.sign < 0 ? -term : term;
                  if (trace) {
                    trace->kernel_shift += c.num_exponents;
                    trace->kernel_add += c.num_exponents;
                  }
                }
              }
            }
          }
          for (int j = 0; j < out; ++j) {
            yrow[j] += quantize_to(ql.biases.data[static_cast<size_t>(j)], frac, qmin, qmax);
            if (trace) trace->kernel_add += 1;
          }
        }
        cur = std::move(y);
        break;
      }
      case LayerKind::conv2d: {
        const QuantizedLinear& ql = model.linear[static_cast<size_t>(slots.linear[i])];
        const int b_count = cur.shape[0];
        const int c = cur.shape[1], h = cur.shape[2], w = cur.shape[3];
        const int oh = (h + 2 * l.pad - l.kh) / l.stride + 1;
        const int ow = (w + 2 * l.pad - l.kw) / l.stride + 1;
        FixedBuffer y;
        y.shape = {b_count, l.out_ch, oh, ow};
        y.q.assign(static_cast<size_t>(b_count) * l.out_ch * oh * ow, 0);
        std::vector<int64_t> wq;
        if (ql.codes.empty()) {
          wq.resize(ql.raw_weights.data.size());
          for (size_t k = 0; k < wq.size(); ++k)
            wq[k] = quantize_to(ql.raw_weights.data[k], frac, qmin, qmax);
        }
        for (int b = 0; b < b_count; ++b) {
          const int64_t* img = &cur.q[static_cast<size_t>(b) * c * h * w];
          for (int f = 0; f < l.out_ch; ++f) {
            const int64_t bias_q =
                quantize_to(ql.biases.data[static_cast<size_t>(f)], frac, qmin, qmax);
            for (int yo = 0; yo < oh; ++yo) {
              for (int xo = 0; xo < ow; ++xo) {
                __int128 acc = 0;
                bool raw_taps = ql.codes.empty();
                for (int ci = 0; ci < c; ++ci) {
                  for (int dy = 0; dy < l.kh; ++dy) {
                    const int iy = yo * l.stride + dy - l.pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int dx = 0; dx < l.kw; ++dx) {
                      const int ix = xo * l.stride + dx - l.pad;
                      if (ix < 0 || ix >= w) continue;
                      const int64_t iv = img[(static_cast<size_t>(ci) * h + iy) * w + ix];
                      const size_t ki =
                          ((static_cast<size_t>(f) * c + ci) * l.kh + dy) * l.kw + dx;
                      if (raw_taps) {
                        acc += static_cast<__int128>(iv) * wq[ki];
                        if (trace) {
                          trace->kernel_mult += 1;
                          trace->kernel_add += 1;
                        }
                      } else {
                        const WeightCode& code = ql.codes[ki];
                        if (code.num_exponents == 0) {
                          acc += code.sign < 0 ? -iv : iv;
                          if (trace) trace->kernel_add += 1;
                        } else {
                          int64_t term = iv >> code.exponents[0];
                          for (int e = 1; e < code.num_exponents; ++e)
                            term += iv >> code.exponents[e];
                          acc += code.sign < 0 ? -term : term;
                          if (trace) {
                            trace->kernel_shift += code.num_exponents;
                            trace->kernel_add += code.num_exponents;
                          }
                        }
                      }
                    }
                  }
                }
                if (raw_taps) {
                  acc >>= frac;
                  if (trace) trace->kernel_shift += 1;
                }
                acc += bias_q;
                if (trace) trace->kernel_add += 1;
                y.q[((static_cast<size_t>(b) * l.out_ch + f) * oh + yo) * ow + xo] =
                    static_cast<int64_t>(acc);
              }
            }
          }
        }
        cur = std::move(y);
        break;
      }
      case LayerKind::maxpool: {
        const int b_count = cur.shape[0];
        const int c = cur.shape[1], h = cur.shape[2], w = cur.shape[3];
        const int oh = (h - l.window) / l.stride + 1;
        const int ow = (w - l.window) / l.stride + 1;
        FixedBuffer y;
        y.shape = {b_count, c, oh, ow};
        y.q.assign(static_cast<size_t>(b_count) * c * oh * ow, 0);
        for (int b = 0; b < b_count; ++b) {
          for (int ci = 0; ci < c; ++ci) {
            for (int yo = 0; yo < oh; ++yo) {
              for (int xo = 0; xo < ow; ++xo) {
                int64_t best = 0;
                bool first = true;
                for (int dy = 0; dy < l.window; ++dy) {
                  for (int dx = 0; dx < l.window; ++dx) {
                    const int64_t v =
                        cur.q[((static_cast<size_t>(b) * c + ci) * h + yo * l.stride + dy) * w +
                              xo * l.stride + dx];
                    if (first || v > best) {
                      best = v;
                      first = false;
                    }
                  }
                }
                if (trace) trace->post_compare += l.window * l.window - 1;
                y.q[((static_cast<size_t>(b) * c + ci) * oh + yo) * ow + xo] = best;
              }
            }
          }
        }
        cur = std::move(y);
        break;
      }
      case LayerKind::batchnorm: {
        const int slot = slots.bn[i];
        const FoldedAffine fold =
            model.folded
                ? FoldedAffine{model.bn_scale[static_cast<size_t>(slot)],
                               model.bn_shift[static_cast<size_t>(slot)]}
                : fold_params(model.batchnorm[static_cast<size_t>(slot)]);
        const int features = l.features;
        int64_t spatial = 1;
        for (size_t d = 2; d < cur.shape.size(); ++d) spatial *= cur.shape[d];
        const int b_count = cur.shape[0];

        const bool next_is_sign =
            bin_variant && i + 1 < layer_count &&
            model.net.layers[i + 1].kind == LayerKind::activation &&
            model.net.layers[i + 1].act == ActivationKind::htanh_sign;

        if (next_is_sign) {
          // batch-norm followed by sign collapses to one threshold compare
          for (int f = 0; f < features; ++f) {
            const double scale = fold.scale.data[static_cast<size_t>(f)];
            const double shift = fold.shift.data[static_cast<size_t>(f)];
            int64_t threshold = 0;
            int dir = 0;  // +1: x >= threshold, -1: x <= threshold, 0: constant
            if (scale > 0.0) {
              threshold = static_cast<int64_t>(
                  std::ceil(std::ldexp(-shift / scale, frac)));
              dir = 1;
            } else if (scale < 0.0) {
              threshold = static_cast<int64_t>(
                  std::floor(std::ldexp(-shift / scale, frac)));
              dir = -1;
            }
            for (int b = 0; b < b_count; ++b) {
              for (int64_t s = 0; s < spatial; ++s) {
                int64_t& v =
                    cur.q[(static_cast<size_t>(b) * features + f) * spatial + s];
                bool positive;
                if (dir > 0) positive = v >= threshold;
                else if (dir < 0) positive = v <= threshold;
                else positive = shift >= 0.0;
                v = positive ? one : -one;
              }
            }
            if (trace) trace->post_compare += static_cast<int64_t>(b_count) * spatial;
          }
          ++i;  // the activation layer is consumed by the threshold
        } else {
          for (int f = 0; f < features; ++f) {
            const int64_t scale_q = static_cast<int64_t>(
                std::llround(std::ldexp(static_cast<double>(fold.scale.data[static_cast<size_t>(f)]), frac)));
            const int64_t shift_q = static_cast<int64_t>(
                std::llround(std::ldexp(static_cast<double>(fold.shift.data[static_cast<size_t>(f)]), frac)));
            for (int b = 0; b < b_count; ++b) {
              for (int64_t s = 0; s < spatial; ++s) {
                int64_t& v =
                    cur.q[(static_cast<size_t>(b) * features + f) * spatial + s];
                v = static_cast<int64_t>((static_cast<__int128>(v) * scale_q) >> frac) +
                    shift_q;
              }
            }
            if (trace) {
              const int64_t n = static_cast<int64_t>(b_count) * spatial;
              trace->post_mult += n;
              trace->post_shift += n;
              trace->post_add += n;
            }
          }
        }
        break;
      }
      case LayerKind::activation: {
        if (l.act == ActivationKind::relu) {
          for (int64_t& v : cur.q) v = v > 0 ? v : 0;
        } else {
          for (int64_t& v : cur.q) v = v < 0 ? -one : one;
        }
        if (trace) trace->post_compare += cur.numel();
        // saturating narrowing back to the storage format
        if (!last_layer) {
          for (int64_t& v : cur.q) v = std::clamp(v, qmin, qmax);
          if (trace) trace->post_compare += cur.numel();
        }
        break;
      }
      case LayerKind::dropout:
        break;
      case LayerKind::flatten: {
        const int b_count = cur.shape[0];
        int64_t rest = 1;
        for (size_t d = 1; d < cur.shape.size(); ++d) rest *= cur.shape[d];
        cur.shape = {b_count, static_cast<int>(rest)};
        break;
      }
    }
  }

  Tensor scores(cur.shape);
  for (size_t i = 0; i < cur.q.size(); ++i)
    scores.data[i] = static_cast<float>(std::ldexp(static_cast<double>(cur.q[i]), -frac));
  return scores;
}

// ============================================================================
// binarized fast path
// ============================================================================

namespace {

// Sign-agreement convolution over exactly +-1 inputs: every in-bounds tap
// contributes +-2^-m per exponent, accumulated in integer counters. The
// scaled integer total stays far below 2^24, so the float result is exact.
Tensor conv_counter_forward(const Tensor& batch, const std::vector<WeightCode>& codes,
                            const Tensor& biases, const LayerSpec& l) {
  const int b_count = batch.dim(0);
  const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const int oh = (h + 2 * l.pad - l.kh) / l.stride + 1;
  const int ow = (w + 2 * l.pad - l.kw) / l.stride + 1;
  Tensor y({b_count, l.out_ch, oh, ow});
  for (int b = 0; b < b_count; ++b) {
    const float* img = &batch.data[static_cast<size_t>(b) * c * h * w];
    for (int f = 0; f < l.out_ch; ++f) {
      for (int yo = 0; yo < oh; ++yo) {
        for (int xo = 0; xo < ow; ++xo) {
          int32_t counters[8] = {0, 0, 0, 0, 0, 0, 0, 0};
          for (int ci = 0; ci < c; ++ci) {
            for (int dy = 0; dy < l.kh; ++dy) {
              const int iy = yo * l.stride + dy - l.pad;
              if (iy < 0 || iy >= h) continue;
              for (int dx = 0; dx < l.kw; ++dx) {
                const int ix = xo * l.stride + dx - l.pad;
                if (ix < 0 || ix >= w) continue;
                const float iv = img[(static_cast<size_t>(ci) * h + iy) * w + ix];
                const WeightCode& code =
                    codes[((static_cast<size_t>(f) * c + ci) * l.kh + dy) * l.kw + dx];
                const int s = (iv > 0.f) == (code.sign > 0) ? 1 : -1;
                if (code.num_exponents == 0) {
                  counters[0] += s;  // binary weight, magnitude 2^0
                } else {
                  counters[code.exponents[0]] += s;
                  if (code.num_exponents == 2) counters[code.exponents[1]] += s;
                }
              }
            }
          }
          int64_t scaled = 0;
          for (int m = 0; m < 8; ++m)
            scaled += static_cast<int64_t>(counters[m]) << (7 - m);
          y.data[((static_cast<size_t>(b) * l.out_ch + f) * oh + yo) * ow + xo] =
              static_cast<float>(scaled) * 0x1p-7f + biases.data[static_cast<size_t>(f)];
        }
      }
    }
  }
  return y;
}

}  // namespace

Tensor infer_binary_fast(const QuantizedModel& model, const Tensor& batch) {
  if (!variant_binarizes_activations(model.net.variant))
    throw std::invalid_argument(
        "binary fast path requires a binarized-activation variant");
  check_batch(model, batch);
  const LayerSlots slots = layer_slots(model.net);
  const auto spec = variant_codebook(model.net.variant);
  const bool binary_weights = spec->kind == CodebookKind::binary;

  Tensor cur = batch;
  bool pm1 = false;  // true once every activation is exactly +-1
  for (size_t i = 0; i < model.net.layers.size(); ++i) {
    const LayerSpec& l = model.net.layers[i];
    switch (l.kind) {
      case LayerKind::dense: {
        const QuantizedLinear& ql = model.linear[static_cast<size_t>(slots.linear[i])];
        if (!pm1) {
          cur = dense_codes_forward(cur, ql.codes, ql.biases, l.in, l.out);
          break;
        }
        const int b_count = cur.dim(0);
        const int in = l.in, out = l.out;
        Tensor y({b_count, out});
        if (binary_weights) {
          // XNOR/popcount: dot = in - 2 * mismatches
          const int words = (in + 63) / 64;
          std::vector<uint64_t> wbits(static_cast<size_t>(out) * words, 0);
          for (int k = 0; k < in; ++k)
            for (int j = 0; j < out; ++j)
              if (ql.codes[static_cast<size_t>(k) * out + j].sign > 0)
                wbits[static_cast<size_t>(j) * words + k / 64] |= uint64_t{1} << (k % 64);
          std::vector<uint64_t> xbits(static_cast<size_t>(words));
          for (int b = 0; b < b_count; ++b) {
            std::fill(xbits.begin(), xbits.end(), 0);
            const float* xrow = &cur.data[static_cast<size_t>(b) * in];
            for (int k = 0; k < in; ++k)
              if (xrow[k] > 0.f) xbits[static_cast<size_t>(k / 64)] |= uint64_t{1} << (k % 64);
            for (int j = 0; j < out; ++j) {
              int mismatches = 0;
              const uint64_t* wrow = &wbits[static_cast<size_t>(j) * words];
              for (int t = 0; t < words; ++t) {
                uint64_t diff = xbits[static_cast<size_t>(t)] ^ wrow[t];
                if (t == words - 1 && in % 64 != 0)
                  diff &= (uint64_t{1} << (in % 64)) - 1;
                mismatches += std::popcount(diff);
              }
              const int dot = in - 2 * mismatches;
              y.at2(b, j) = static_cast<float>(dot) +
                            ql.biases.data[static_cast<size_t>(j)];
            }
          }
        } else {
          // signed counters per exponent; the scaled integer total is exact
          for (int b = 0; b < b_count; ++b) {
            const float* xrow = &cur.data[static_cast<size_t>(b) * in];
            for (int j = 0; j < out; ++j) {
              int32_t counters[8] = {0, 0, 0, 0, 0, 0, 0, 0};
              for (int k = 0; k < in; ++k) {
                const WeightCode& c = ql.codes[static_cast<size_t>(k) * out + j];
                const int s = (xrow[k] > 0.f) == (c.sign > 0) ? 1 : -1;
                counters[c.exponents[0]] += s;
                if (c.num_exponents == 2) counters[c.exponents[1]] += s;
              }
              int64_t scaled = 0;
              for (int m = 0; m < 8; ++m)
                scaled += static_cast<int64_t>(counters[m]) << (7 - m);
              y.at2(b, j) = static_cast<float>(scaled) * 0x1p-7f +
                            ql.biases.data[static_cast<size_t>(j)];
            }
          }
        }
        cur = std::move(y);
        pm1 = false;
        break;
      }
      case LayerKind::conv2d: {
        const QuantizedLinear& ql = model.linear[static_cast<size_t>(slots.linear[i])];
        cur = pm1 ? conv_counter_forward(cur, ql.codes, ql.biases, l)
                  : conv_codes_forward(cur, ql.codes, ql.biases, l);
        pm1 = false;
        break;
      }
      case LayerKind::maxpool:
        cur = pool_forward(cur, l);
        break;
      case LayerKind::batchnorm: {
        const int slot = slots.bn[i];
        cur = model.folded
                  ? bn_folded_forward(cur, model.bn_scale[static_cast<size_t>(slot)],
                                      model.bn_shift[static_cast<size_t>(slot)], l.features)
                  : bn_test_forward(cur, model.batchnorm[static_cast<size_t>(slot)],
                                    l.features);
        pm1 = false;
        break;
      }
      case LayerKind::activation:
        cur = act_test_forward(cur, l.act);
        if (l.act == ActivationKind::htanh_sign) pm1 = true;
        break;
      case LayerKind::dropout:
        break;
      case LayerKind::flatten:
        cur = cur.reshaped({cur.dim(0), static_cast<int>(cur.numel() / cur.dim(0))});
        break;
    }
  }
  return cur;
}

}  // namespace lightnn
