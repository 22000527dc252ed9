#pragma once

#include <cstdint>
#include <vector>

#include "lightnn/codebook.hpp"
#include "lightnn/network.hpp"

namespace lightnn {

// Two's-complement fixed point with frac_bits fractional bits. The integer
// part must cover [-2, 2) so codebook values and +-1 activations fit.
struct FixedPointFormat {
  int total_bits = 12;
  int frac_bits = 8;
};

void validate_format(const FixedPointFormat& fmt);

struct QuantizedLinear {
  std::vector<WeightCode> codes;  // empty for conventional layers
  Tensor raw_weights;             // conventional layers only
  Tensor biases;
};

// A finalized model: codebook weights (or raw floats for conventional) plus
// full-precision biases and batch-norm state.
struct QuantizedModel {
  NetworkSpec net;
  std::vector<QuantizedLinear> linear;    // per dense/conv layer
  std::vector<BatchNormState> batchnorm;  // per batch-norm layer
  bool folded = false;
  std::vector<Tensor> bn_scale, bn_shift;  // filled by fold_batchnorm
};

// Nearest-projects real weights onto the variant codebook and encodes them.
QuantizedModel quantize_model(const Parameters& params, const NetworkSpec& net);

// Decodes a model back to float parameters (weights from codes, biases and
// batch-norm copied).
Parameters decode_parameters(const QuantizedModel& model);

// x scaled by each code's powers of two and accumulated left to right.
// Bit-identical to the dot product with decoded float weights.
float shift_add_dot(const WeightCode* codes, const float* x, int64_t n);

// One weight application: sign * (x * 2^-m1 + x * 2^-m2 + ...). Exact
// exponent adjustment, no information loss per term.
inline float shift_add_term(float x, const WeightCode& code) {
  // exact powers of two for m = 0..7
  static constexpr float kPow2[8] = {0x1p0f,  0x1p-1f, 0x1p-2f, 0x1p-3f,
                                     0x1p-4f, 0x1p-5f, 0x1p-6f, 0x1p-7f};
  if (code.num_exponents == 0) return code.sign < 0 ? -x : x;
  float t = x * kPow2[code.exponents[0]];
  for (int i = 1; i < code.num_exponents; ++i) t += x * kPow2[code.exponents[i]];
  return code.sign < 0 ? -t : t;
}

// Float inference over a batch [B, ...input_shape]. Bit-identical to running
// the network forward pass in test mode with decoded weights.
Tensor infer_float(const QuantizedModel& model, const Tensor& batch);

// Folds batch-norm into per-channel scale/shift applied after accumulation.
// Weight codes are untouched. Throws if any running variance is <= 0.
QuantizedModel fold_batchnorm(const QuantizedModel& model);

// Operation counts recorded by the fixed-point engine. Kernel counters cover
// the weight-application dot products; post counters cover batch-norm,
// activations, pooling, and narrowing.
struct FixedTrace {
  int64_t kernel_shift = 0, kernel_add = 0, kernel_mult = 0, kernel_compare = 0;
  int64_t post_shift = 0, post_add = 0, post_mult = 0, post_compare = 0;
};

// Integer inference: inputs quantized to fmt, power-of-two weights applied
// with arithmetic shifts, 64-bit accumulation, saturating narrowing after
// every activation (final scores stay wide). Binarized variants realize
// batch-norm plus sign as one threshold compare. Conventional models need
// quantize_conventional, which rounds raw weights to fmt and multiplies.
Tensor infer_fixed(const QuantizedModel& model, const Tensor& batch,
                   const FixedPointFormat& fmt,
                   bool quantize_conventional = false,
                   FixedTrace* trace = nullptr);

// Binarized-variant fast path: the first layer consumes float inputs via
// shift-add; every later dense layer sees +-1 activations and runs on
// XNOR/popcount (binary weights) or per-exponent integer counters (power-of-
// two weights). Bit-identical to infer_float.
Tensor infer_binary_fast(const QuantizedModel& model, const Tensor& batch);

}  // namespace lightnn
