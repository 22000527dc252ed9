#include "lightnn/codebook.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lightnn {

namespace {

void check_spec(const CodebookSpec& spec) {
  if (spec.kind == CodebookKind::binary) return;
  if (spec.k < 1 || spec.k > 2)
    throw std::invalid_argument("codebook: k must be 1 or 2, got " +
                                std::to_string(spec.k));
  if (spec.m_min > spec.m_max || spec.m_min < 0 || spec.m_max > 7)
    throw std::invalid_argument("codebook: exponent range must satisfy 0 <= m_min <= m_max <= 7");
}

void check_finite(float w) {
  if (!std::isfinite(w))
    throw std::invalid_argument("codebook: weight must be finite");
}

}  // namespace

float WeightCode::value() const {
  if (num_exponents == 0) return static_cast<float>(sign);
  double v = 0.0;
  for (int i = 0; i < num_exponents; ++i) v += std::ldexp(1.0, -exponents[i]);
  return static_cast<float>(sign * v);
}

std::vector<float> codebook_values(const CodebookSpec& spec) {
  check_spec(spec);
  if (spec.kind == CodebookKind::binary) return {-1.f, 1.f};

  std::vector<float> positive;
  if (spec.k == 1) {
    for (int m = spec.m_min; m <= spec.m_max; ++m)
      positive.push_back(std::ldexp(1.f, -m));
  } else {
    for (int m1 = spec.m_min; m1 <= spec.m_max; ++m1)
      for (int m2 = m1; m2 <= spec.m_max; ++m2)
        positive.push_back(std::ldexp(1.f, -m1) + std::ldexp(1.f, -m2));
  }
  std::sort(positive.begin(), positive.end());
  positive.erase(std::unique(positive.begin(), positive.end()), positive.end());

  std::vector<float> values;
  values.reserve(positive.size() * 2);
  for (auto it = positive.rbegin(); it != positive.rend(); ++it)
    values.push_back(-*it);
  values.insert(values.end(), positive.begin(), positive.end());
  return values;
}

WeightCode code_for_value(float v, const CodebookSpec& spec) {
  check_spec(spec);
  WeightCode code;
  code.sign = v < 0.f ? -1 : 1;
  if (spec.kind == CodebookKind::binary) return code;

  // Codebook members are exact multiples of 2^-m_max; scale to an integer and
  // read the set bits.
  const double scaled = std::ldexp(std::fabs(static_cast<double>(v)), spec.m_max);
  const auto mag = static_cast<uint64_t>(std::llround(scaled));
  if (mag == 0 || scaled != static_cast<double>(mag))
    throw std::invalid_argument("codebook: value is not a codebook member");

  const int ones = std::popcount(mag);
  if (ones == 1) {
    const int bit = std::countr_zero(mag);
    if (spec.k == 1) {
      code.num_exponents = 1;
      code.exponents[0] = static_cast<uint8_t>(spec.m_max - bit);
    } else {
      // A lone power of two is the doubled pair 2^-m + 2^-m.
      const int m = spec.m_max - bit + 1;
      if (m < spec.m_min || m > spec.m_max)
        throw std::invalid_argument("codebook: value is not a codebook member");
      code.num_exponents = 2;
      code.exponents[0] = code.exponents[1] = static_cast<uint8_t>(m);
    }
  } else if (ones == 2 && spec.k == 2) {
    const int lo_bit = std::countr_zero(mag);
    const int hi_bit = 63 - std::countl_zero(mag);
    code.num_exponents = 2;
    code.exponents[0] = static_cast<uint8_t>(spec.m_max - hi_bit);
    code.exponents[1] = static_cast<uint8_t>(spec.m_max - lo_bit);
  } else {
    throw std::invalid_argument("codebook: value is not a codebook member");
  }
  for (int i = 0; i < code.num_exponents; ++i) {
    const int m = code.exponents[i];
    if (m < spec.m_min || m > spec.m_max)
      throw std::invalid_argument("codebook: value is not a codebook member");
  }
  return code;
}

CodebookIndex::CodebookIndex(const CodebookSpec& spec)
    : spec_(spec), values_(codebook_values(spec)) {
  const double pitch = std::ldexp(1.0, -spec.m_max);  // lattice spacing
  scale_ = std::ldexp(1.0, spec.m_max);
  offset_ = -static_cast<double>(values_.front());
  num_cells_ = static_cast<int>(std::llround(
      (static_cast<double>(values_.back()) - values_.front()) * scale_));
  cell_lo_.resize(num_cells_);
  cell_hi_.resize(num_cells_);
  for (int i = 0; i < num_cells_; ++i) {
    const double start = values_.front() + i * pitch;
    const double next = values_.front() + (i + 1) * pitch;
    // largest member <= cell start
    auto hi_it = std::upper_bound(values_.begin(), values_.end(),
                                  static_cast<float>(start));
    cell_lo_[i] = *(hi_it - 1);
    // smallest member >= the next boundary (serves any w inside the open cell)
    auto lo_it = std::lower_bound(values_.begin(), values_.end(),
                                  static_cast<float>(next));
    cell_hi_[i] = *lo_it;
  }
}

RoundingNeighbors CodebookIndex::neighbors(float w) const {
  const float lo_bound = values_.front();
  const float hi_bound = values_.back();
  if (w <= lo_bound) return {lo_bound, lo_bound, 0.0};
  if (w >= hi_bound) return {hi_bound, hi_bound, 0.0};
  const double pos = (static_cast<double>(w) + offset_) * scale_;
  const int idx = static_cast<int>(pos);
  const float lo = cell_lo_[idx];
  if (w == lo) return {lo, lo, 0.0};
  const float hi = cell_hi_[idx];
  const double p = (static_cast<double>(w) - lo) /
                   (static_cast<double>(hi) - static_cast<double>(lo));
  return {lo, hi, p};
}

float CodebookIndex::nearest_value(float w) const {
  const RoundingNeighbors nb = neighbors(w);
  if (nb.w_l == nb.w_h) return nb.w_l;
  const double dl = static_cast<double>(w) - nb.w_l;
  const double dh = static_cast<double>(nb.w_h) - w;
  if (dl < dh) return nb.w_l;
  if (dh < dl) return nb.w_h;
  // Midpoint: round away from zero; the symmetric pair around 0 resolves
  // toward the positive member.
  return std::fabs(nb.w_h) >= std::fabs(nb.w_l) ? nb.w_h : nb.w_l;
}

float CodebookIndex::stochastic_value(float w, Rng& rng) const {
  const RoundingNeighbors nb = neighbors(w);
  if (nb.w_l == nb.w_h) return nb.w_l;
  return rng.uniform() < nb.p ? nb.w_h : nb.w_l;
}

namespace {

const CodebookIndex& cached_index(const CodebookSpec& spec) {
  static const CodebookIndex k1_index(CodebookSpec::k_ones(1));
  static const CodebookIndex k2_index(CodebookSpec::k_ones(2));
  static const CodebookIndex binary_index(CodebookSpec::binary());
  if (spec == k1_index.spec()) return k1_index;
  if (spec == k2_index.spec()) return k2_index;
  if (spec.kind == CodebookKind::binary) return binary_index;
  thread_local CodebookIndex custom(spec);
  if (!(custom.spec() == spec)) custom = CodebookIndex(spec);
  return custom;
}

}  // namespace

WeightCode approx_nearest(float w, const CodebookSpec& spec) {
  check_finite(w);
  const CodebookIndex& index = cached_index(spec);
  return code_for_value(index.nearest_value(w), spec);
}

RoundingNeighbors neighbors(float w, const CodebookSpec& spec) {
  check_finite(w);
  return cached_index(spec).neighbors(w);
}

WeightCode approx_stochastic(float w, const CodebookSpec& spec, Rng& rng) {
  check_finite(w);
  const CodebookIndex& index = cached_index(spec);
  return code_for_value(index.stochastic_value(w, rng), spec);
}

WeightCode binarize(float w) {
  check_finite(w);
  WeightCode code;
  code.sign = w < 0.f ? -1 : 1;  // sign(0) = +1
  return code;
}

uint8_t encode(const WeightCode& code, const CodebookSpec& spec) {
  check_spec(spec);
  if (spec.kind == CodebookKind::binary) return code.sign > 0 ? 1 : 0;

  auto check_m = [&](int m) {
    if (m < 0 || m > 7)
      throw std::invalid_argument("codebook: exponent outside [0, 7]");
  };
  if (spec.k == 1) {
    if (code.num_exponents != 1)
      throw std::invalid_argument("codebook: k=1 code needs one exponent");
    check_m(code.exponents[0]);
    return static_cast<uint8_t>((code.sign < 0 ? 0x8 : 0x0) | code.exponents[0]);
  }

  int m1, m2;
  if (code.num_exponents == 2) {
    m1 = code.exponents[0];
    m2 = code.exponents[1];
    if (m1 > m2) std::swap(m1, m2);
  } else if (code.num_exponents == 1) {
    // Canonicalize 2^-m to the doubled pair 2^-(m+1) + 2^-(m+1).
    m1 = m2 = code.exponents[0] + 1;
  } else {
    throw std::invalid_argument("codebook: k=2 code needs one or two exponents");
  }
  check_m(m1);
  check_m(m2);
  return static_cast<uint8_t>((code.sign < 0 ? 0x40 : 0x00) | (m1 << 3) | m2);
}

WeightCode decode(uint8_t bits, const CodebookSpec& spec) {
  check_spec(spec);
  WeightCode code;
  if (spec.kind == CodebookKind::binary) {
    if (bits > 1) throw std::invalid_argument("codebook: binary code is one bit");
    code.sign = bits ? 1 : -1;
    return code;
  }
  if (spec.k == 1) {
    if (bits > 0xF)
      throw std::invalid_argument("codebook: k=1 code is one nibble");
    code.sign = (bits & 0x8) ? -1 : 1;
    code.num_exponents = 1;
    code.exponents[0] = bits & 0x7;
    return code;
  }
  if (bits & 0x80)
    throw std::invalid_argument("codebook: k=2 code has bit 7 clear");
  const uint8_t m1 = (bits >> 3) & 0x7;
  const uint8_t m2 = bits & 0x7;
  if (m1 > m2)
    throw std::invalid_argument("codebook: k=2 code requires m1 <= m2");
  code.sign = (bits & 0x40) ? -1 : 1;
  code.num_exponents = 2;
  code.exponents[0] = m1;
  code.exponents[1] = m2;
  return code;
}

int bits_per_weight(const CodebookSpec& spec) {
  if (spec.kind == CodebookKind::binary) return 1;
  return spec.k == 1 ? 4 : 8;  // k=2 codes are byte-padded
}

}  // namespace lightnn
