#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lightnn/inference.hpp"
#include "lightnn/trainer.hpp"

namespace lightnn {

// Packed deployable model, magic "LNN1". Weights are bit-packed at the
// variant's code width (1/4/8 bits, LSB-first within bytes, low nibble
// first), padded to a byte boundary per layer; conventional weights are raw
// 32-bit floats. Biases and batch-norm stay 32-bit. The layout is
// header + per-layer records, with every payload length derivable from the
// record's kind and shape fields.
std::vector<uint8_t> pack_model(const QuantizedModel& model);
QuantizedModel unpack_model(const std::vector<uint8_t>& bytes);

// File wrappers; writes go to a temp file in the same directory, then rename.
void save_model(const QuantizedModel& model, const std::string& path);
QuantizedModel load_model(const std::string& path);

// Training checkpoint, magic "LNNC": network spec, full-precision state,
// optimizer moments, step/seed/eta, the rng stream, and the config digest.
struct Checkpoint {
  NetworkSpec net;
  TrainState state;
  std::string config_digest;  // 16 hex chars, matches trainer config_digest()
};

void save_checkpoint(const TrainState& state, const NetworkSpec& net,
                     const std::string& config_digest, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lightnn
