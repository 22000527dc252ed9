#pragma once

#include <cstdint>
#include <vector>

#include "lightnn/rng.hpp"

namespace lightnn {

// Weight codebooks for multiplication-free inference.
//
// A k-ones codebook contains every value of the form
//   sign * (2^-m1 + ... + 2^-mk),  m_i in [m_min, m_max],
// so a weight application costs at most k exponent shifts plus adds. The
// binary codebook is {-1, +1}. All values are exact binary fractions
// (integer multiples of 2^-m_max), so comparisons below are exact.

enum class CodebookKind : uint8_t { binary = 0, k_ones = 1 };

struct CodebookSpec {
  CodebookKind kind = CodebookKind::k_ones;
  int k = 1;       // number of power-of-two terms (1 or 2)
  int m_min = 0;   // exponent index range: magnitudes 2^-m, m in [m_min, m_max]
  int m_max = 7;

  static CodebookSpec binary() { return {CodebookKind::binary, 0, 0, 0}; }
  static CodebookSpec k_ones(int k) { return {CodebookKind::k_ones, k, 0, 7}; }

  bool operator==(const CodebookSpec&) const = default;
};

// One quantized weight: sign and the exponent list (non-decreasing, length in
// [1, k]; repeated exponents are allowed, e.g. 2^0 + 2^0 = 2). For the binary
// codebook the exponent list is empty and the value is just the sign.
struct WeightCode {
  int8_t sign = 1;  // +1 or -1
  uint8_t num_exponents = 0;
  uint8_t exponents[2] = {0, 0};

  float value() const;
  bool operator==(const WeightCode&) const = default;
};

// Nearest codebook values bracketing a clamped query, with the probability of
// rounding up: p = (w - w_l) / (w_h - w_l), 0 when the bracket is degenerate.
struct RoundingNeighbors {
  float w_l = 0.f;
  float w_h = 0.f;
  double p = 0.0;
};

// Every representable value, deduplicated, ascending. Binary returns {-1, +1}.
std::vector<float> codebook_values(const CodebookSpec& spec);

// Nearest codebook value to w. Ties break toward larger magnitude (and toward
// positive at w == 0). Out-of-range w clamps to the extreme of matching sign.
// Throws std::invalid_argument for non-finite w.
WeightCode approx_nearest(float w, const CodebookSpec& spec);

// Bracketing neighbors of w after clamping into the codebook range.
RoundingNeighbors neighbors(float w, const CodebookSpec& spec);

// Stochastic rounding: w_h with probability p, else w_l. Unbiased in
// expectation. Deterministic given the RNG state.
WeightCode approx_stochastic(float w, const CodebookSpec& spec, Rng& rng);

// Sign quantization onto {-1, +1}; sign(0) = +1.
WeightCode binarize(float w);

// Code for an exact codebook member value (canonical exponent form).
// Precondition: v is a member of the codebook.
WeightCode code_for_value(float v, const CodebookSpec& spec);

// Bit-level packing.
//   k=1 codes use a nibble: bit3 = sign (0 positive, 1 negative), bits2..0 = m.
//   k=2 codes use a byte: bit7 = 0, bit6 = sign, bits5..3 = m1, bits2..0 = m2,
//       with m1 <= m2.
//   binary codes use one bit: 1 = +1, 0 = -1.
// decode(encode(x)) == x. Exponents outside [0, 7] or malformed bit patterns
// throw std::invalid_argument.
uint8_t encode(const WeightCode& code, const CodebookSpec& spec);
WeightCode decode(uint8_t bits, const CodebookSpec& spec);

// Bits occupied by one encoded weight: 1 (binary), 4 (k=1), 8 (k=2,
// byte-padded), 32 (no codebook / raw float).
int bits_per_weight(const CodebookSpec& spec);

// Precomputed projection tables for quantizing whole weight tensors. The
// codebook lattice lives on multiples of 2^-m_max, so a uniform grid indexed
// at that pitch resolves neighbors with one lookup.
class CodebookIndex {
public:
  explicit CodebookIndex(const CodebookSpec& spec);

  const CodebookSpec& spec() const { return spec_; }
  const std::vector<float>& values() const { return values_; }
  float min_value() const { return values_.front(); }
  float max_value() const { return values_.back(); }

  RoundingNeighbors neighbors(float w) const;
  float nearest_value(float w) const;
  float stochastic_value(float w, Rng& rng) const;

private:
  CodebookSpec spec_;
  std::vector<float> values_;
  std::vector<float> cell_lo_;  // largest value <= cell start
  std::vector<float> cell_hi_;  // smallest value >= anything past cell start
  double scale_ = 0.0;          // cells per unit
  double offset_ = 0.0;         // -min_value
  int num_cells_ = 0;
};

}  // namespace lightnn
