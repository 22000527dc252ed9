#pragma once

#include <cstdint>
#include <vector>

namespace lightnn {

// Dense row-major array of 32-bit floats. Rank and sizes live in shape;
// data holds product(shape) values.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  Tensor(std::vector<int> s, std::vector<float> d);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  float at2(int r, int c) const { return data[static_cast<size_t>(r) * dim(1) + c]; }
  float& at2(int r, int c) { return data[static_cast<size_t>(r) * dim(1) + c]; }

  Tensor reshaped(std::vector<int> new_shape) const;
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

int64_t shape_numel(const std::vector<int>& shape);

// C = A * B with A [M x K], B [K x N]. Accumulation over K runs in ascending
// order per output element, so results are reproducible bit for bit.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transposed(const Tensor& a);

// Cross-correlation of one image [C x H x W] with kernels [F x C x kh x kw],
// zero padding. Output [F x H' x W'] with H' = (H + 2 pad - kh) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int pad);

struct PoolResult {
  Tensor values;
  std::vector<int> argmax;  // flat input index of each window maximum
};

// Max pooling over [C x H x W]; window positions must tile exactly.
PoolResult maxpool(const Tensor& input, int window, int stride);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

bool all_finite(const Tensor& t);

}  // namespace lightnn
