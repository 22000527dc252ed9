#include "lightnn/variant.hpp"

namespace lightnn {

const char* variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::conventional: return "conventional";
    case ModelVariant::lightnn2: return "lightnn2";
    case ModelVariant::lightnn1: return "lightnn1";
    case ModelVariant::binaryconnect: return "binaryconnect";
    case ModelVariant::lightnn2_bin: return "lightnn2_bin";
    case ModelVariant::lightnn1_bin: return "lightnn1_bin";
    case ModelVariant::binarynet: return "binarynet";
  }
  return "unknown";
}

std::optional<ModelVariant> variant_from_name(const std::string& name) {
  for (int i = 0; i < kNumVariants; ++i) {
    const auto v = static_cast<ModelVariant>(i);
    if (name == variant_name(v)) return v;
  }
  return std::nullopt;
}

std::optional<CodebookSpec> variant_codebook(ModelVariant v) {
  switch (v) {
    case ModelVariant::conventional:
      return std::nullopt;
    case ModelVariant::lightnn2:
    case ModelVariant::lightnn2_bin:
      return CodebookSpec::k_ones(2);
    case ModelVariant::lightnn1:
    case ModelVariant::lightnn1_bin:
      return CodebookSpec::k_ones(1);
    case ModelVariant::binaryconnect:
    case ModelVariant::binarynet:
      return CodebookSpec::binary();
  }
  return std::nullopt;
}

bool variant_binarizes_activations(ModelVariant v) {
  switch (v) {
    case ModelVariant::lightnn2_bin:
    case ModelVariant::lightnn1_bin:
    case ModelVariant::binarynet:
      return true;
    default:
      return false;
  }
}

int variant_weight_bits(ModelVariant v) {
  if (v == ModelVariant::conventional) return 32;
  return bits_per_weight(*variant_codebook(v));
}

}  // namespace lightnn
