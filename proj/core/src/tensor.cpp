#include "lightnn/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lightnn {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: dimensions must be positive");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(shape_numel(shape)), 0.f);
}

Tensor::Tensor(std::vector<int> s, std::vector<float> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("tensor: shape does not match data length");
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
  if (shape_numel(new_shape) != numel())
    throw std::invalid_argument("tensor: reshape changes element count");
  return Tensor(std::move(new_shape), data);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: operands must be rank 2");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                std::to_string(k) + " vs " +
                                std::to_string(b.dim(0)) + ")");
  Tensor c({m, n});
  // i-k-j order: each c[i][j] still accumulates over k ascending, identical
  // to the naive i-j-k loop, but walks b row-major.
  for (int i = 0; i < m; ++i) {
    const float* arow = &a.data[static_cast<size_t>(i) * k];
    float* crow = &c.data[static_cast<size_t>(i) * n];
    for (int kk = 0; kk < k; ++kk) {
      const float av = arow[kk];
      const float* brow = &b.data[static_cast<size_t>(kk) * n];
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor transposed(const Tensor& a) {
  if (a.rank() != 2)
    throw std::invalid_argument("transpose: operand must be rank 2");
  const int m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) t.at2(j, i) = a.at2(i, j);
  return t;
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int pad) {
  if (input.rank() != 3 || kernels.rank() != 4)
    throw std::invalid_argument("conv2d: expected input [C,H,W] and kernels [F,C,kh,kw]");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int f = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != c)
    throw std::invalid_argument("conv2d: kernel channel count mismatch");
  if (stride < 1 || pad < 0)
    throw std::invalid_argument("conv2d: invalid stride or pad");
  if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0)
    throw std::invalid_argument("conv2d: output size is not integral");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0)
    throw std::invalid_argument("conv2d: kernel larger than padded input");

  Tensor out({f, oh, ow});
  for (int fo = 0; fo < f; ++fo) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        float acc = 0.f;
        for (int ci = 0; ci < c; ++ci) {
          for (int dy = 0; dy < kh; ++dy) {
            const int iy = y * stride + dy - pad;
            if (iy < 0 || iy >= h) continue;
            for (int dx = 0; dx < kw; ++dx) {
              const int ix = x * stride + dx - pad;
              if (ix < 0 || ix >= w) continue;
              const float iv = input.data[(static_cast<size_t>(ci) * h + iy) * w + ix];
              const float kv = kernels.data[((static_cast<size_t>(fo) * c + ci) * kh + dy) * kw + dx];
              acc += iv * kv;
            }
          }
        }
        out.data[(static_cast<size_t>(fo) * oh + y) * ow + x] = acc;
      }
    }
  }
  return out;
}

PoolResult maxpool(const Tensor& input, int window, int stride) {
  if (input.rank() != 3)
    throw std::invalid_argument("maxpool: expected input [C,H,W]");
  if (window < 1 || stride < 1)
    throw std::invalid_argument("maxpool: invalid window or stride");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if ((h - window) % stride != 0 || (w - window) % stride != 0)
    throw std::invalid_argument("maxpool: output size is not integral");
  const int oh = (h - window) / stride + 1;
  const int ow = (w - window) / stride + 1;
  if (oh <= 0 || ow <= 0)
    throw std::invalid_argument("maxpool: window larger than input");

  PoolResult result{Tensor({c, oh, ow}), {}};
  result.argmax.resize(static_cast<size_t>(c) * oh * ow);
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        float best = 0.f;
        int best_idx = -1;
        for (int dy = 0; dy < window; ++dy) {
          for (int dx = 0; dx < window; ++dx) {
            const int iy = y * stride + dy;
            const int ix = x * stride + dx;
            const int idx = (ci * h + iy) * w + ix;
            const float v = input.data[static_cast<size_t>(idx)];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = idx;
            }
          }
        }
        const size_t out_idx = (static_cast<size_t>(ci) * oh + y) * ow + x;
        result.values.data[out_idx] = best;
        result.argmax[out_idx] = best_idx;
      }
    }
  }
  return result;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] - b.data[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * s;
  return out;
}

bool all_finite(const Tensor& t) {
  for (float v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace lightnn
