#pragma once

#include <optional>
#include <string>

#include "lightnn/codebook.hpp"

namespace lightnn {

// Model families, ordered from full precision down to fully binarized.
enum class ModelVariant {
  conventional = 0,  // float weights, float activations
  lightnn2,          // weights = sign * (2^-m1 + 2^-m2), float activations
  lightnn1,          // weights = sign * 2^-m, float activations
  binaryconnect,     // weights in {-1, +1}, float activations
  lightnn2_bin,      // two-power weights, binarized activations
  lightnn1_bin,      // one-power weights, binarized activations
  binarynet,         // weights and activations in {-1, +1}
};

inline constexpr int kNumVariants = 7;

const char* variant_name(ModelVariant v);
std::optional<ModelVariant> variant_from_name(const std::string& name);

// Weight constraint applied during training and inference; empty for the
// unconstrained conventional model.
std::optional<CodebookSpec> variant_codebook(ModelVariant v);

// Binarized-activation families train with hard tanh and run inference with
// sign; the rest use ReLU throughout.
bool variant_binarizes_activations(ModelVariant v);

// Stored bits per weight: 32 float, 8 two-power (byte padded), 4 one-power,
// 1 binary.
int variant_weight_bits(ModelVariant v);

}  // namespace lightnn
