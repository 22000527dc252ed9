#include "lightnn/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lightnn {

LayerSpec LayerSpec::dense(int in, int out) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.in = in;
  l.out = out;
  return l;
}

LayerSpec LayerSpec::conv(int in_ch, int out_ch, int kh, int kw, int stride, int pad) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.in_ch = in_ch;
  l.out_ch = out_ch;
  l.kh = kh;
  l.kw = kw;
  l.stride = stride;
  l.pad = pad;
  return l;
}

LayerSpec LayerSpec::pool(int window, int stride) {
  LayerSpec l;
  l.kind = LayerKind::maxpool;
  l.window = window;
  l.stride = stride;
  return l;
}

LayerSpec LayerSpec::batchnorm(int features) {
  LayerSpec l;
  l.kind = LayerKind::batchnorm;
  l.features = features;
  return l;
}

LayerSpec LayerSpec::activation(ActivationKind kind) {
  LayerSpec l;
  l.kind = LayerKind::activation;
  l.act = kind;
  return l;
}

LayerSpec LayerSpec::dropout(float rate) {
  if (rate < 0.f || rate >= 1.f)
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  LayerSpec l;
  l.kind = LayerKind::dropout;
  l.rate = rate;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  return l;
}

namespace {

ActivationKind activation_for(ModelVariant variant) {
  return variant_binarizes_activations(variant) ? ActivationKind::htanh_sign
                                                : ActivationKind::relu;
}

}  // namespace

NetworkSpec make_preset(const std::string& name, ModelVariant variant) {
  const ActivationKind act = activation_for(variant);
  NetworkSpec net;
  net.preset_name = name;
  net.variant = variant;
  net.num_classes = 10;

  if (name == "mnist-1hidden") {
    net.input_shape = {784};
    net.layers = {
        LayerSpec::dense(784, 100),
        LayerSpec::batchnorm(100),
        LayerSpec::activation(act),
        LayerSpec::dense(100, 10),
    };
  } else if (name == "mnist-3hidden") {
    net.input_shape = {784};
    net.layers = {
        LayerSpec::dense(784, 4096),  LayerSpec::batchnorm(4096),
        LayerSpec::activation(act),   LayerSpec::dropout(0.2f),
        LayerSpec::dense(4096, 4096), LayerSpec::batchnorm(4096),
        LayerSpec::activation(act),   LayerSpec::dropout(0.2f),
        LayerSpec::dense(4096, 4096), LayerSpec::batchnorm(4096),
        LayerSpec::activation(act),   LayerSpec::dropout(0.2f),
        LayerSpec::dense(4096, 10),
    };
  } else if (name == "mnist-2conv") {
    net.input_shape = {1, 28, 28};
    net.layers = {
        LayerSpec::conv(1, 20, 5, 5, 1, 0), LayerSpec::batchnorm(20),
        LayerSpec::activation(act),         LayerSpec::pool(2, 2),
        LayerSpec::conv(20, 50, 5, 5, 1, 0), LayerSpec::batchnorm(50),
        LayerSpec::activation(act),          LayerSpec::pool(2, 2),
        LayerSpec::flatten(),
        LayerSpec::dense(800, 500), LayerSpec::batchnorm(500),
        LayerSpec::activation(act),
        LayerSpec::dense(500, 10),
    };
  } else if (name == "cifar-3conv") {
    net.input_shape = {3, 32, 32};
    net.layers = {
        LayerSpec::conv(3, 32, 5, 5, 1, 2),  LayerSpec::batchnorm(32),
        LayerSpec::activation(act),          LayerSpec::pool(2, 2),
        LayerSpec::conv(32, 32, 5, 5, 1, 2), LayerSpec::batchnorm(32),
        LayerSpec::activation(act),          LayerSpec::pool(2, 2),
        LayerSpec::conv(32, 64, 5, 5, 1, 2), LayerSpec::batchnorm(64),
        LayerSpec::activation(act),          LayerSpec::pool(2, 2),
        LayerSpec::flatten(),
        LayerSpec::dense(1024, 64), LayerSpec::batchnorm(64),
        LayerSpec::activation(act),
        LayerSpec::dense(64, 10),
    };
  } else if (name == "cifar-6conv") {
    net.input_shape = {3, 32, 32};
    net.layers = {
        LayerSpec::conv(3, 128, 3, 3, 1, 1),   LayerSpec::batchnorm(128),
        LayerSpec::activation(act),
        LayerSpec::conv(128, 128, 3, 3, 1, 1), LayerSpec::batchnorm(128),
        LayerSpec::activation(act),            LayerSpec::pool(2, 2),
        LayerSpec::conv(128, 256, 3, 3, 1, 1), LayerSpec::batchnorm(256),
        LayerSpec::activation(act),
        LayerSpec::conv(256, 256, 3, 3, 1, 1), LayerSpec::batchnorm(256),
        LayerSpec::activation(act),            LayerSpec::pool(2, 2),
        LayerSpec::conv(256, 512, 3, 3, 1, 1), LayerSpec::batchnorm(512),
        LayerSpec::activation(act),
        LayerSpec::conv(512, 512, 3, 3, 1, 1), LayerSpec::batchnorm(512),
        LayerSpec::activation(act),            LayerSpec::pool(2, 2),
        LayerSpec::flatten(),
        LayerSpec::dense(8192, 1024), LayerSpec::batchnorm(1024),
        LayerSpec::activation(act),
        LayerSpec::dense(1024, 1024), LayerSpec::batchnorm(1024),
        LayerSpec::activation(act),
        LayerSpec::dense(1024, 10),
    };
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  layer_shapes(net);  // validate composition
  return net;
}

std::vector<std::string> preset_names() {
  return {"mnist-1hidden", "mnist-2conv", "mnist-3hidden", "cifar-3conv",
          "cifar-6conv"};
}

std::vector<std::vector<int>> layer_shapes(const NetworkSpec& net) {
  std::vector<std::vector<int>> shapes;
  std::vector<int> cur = net.input_shape;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    switch (l.kind) {
      case LayerKind::dense:
        if (cur.size() != 1 || cur[0] != l.in)
          throw std::invalid_argument("layer " + std::to_string(i) +
                                      ": dense input width mismatch");
        cur = {l.out};
        break;
      case LayerKind::conv2d: {
        if (cur.size() != 3 || cur[0] != l.in_ch)
          throw std::invalid_argument("layer " + std::to_string(i) +
                                      ": conv input shape mismatch");
        const int h = cur[1], w = cur[2];
        if ((h + 2 * l.pad - l.kh) % l.stride != 0 ||
            (w + 2 * l.pad - l.kw) % l.stride != 0)
          throw std::invalid_argument("layer " + std::to_string(i) +
                                      ": conv output size is not integral");
        cur = {l.out_ch, (h + 2 * l.pad - l.kh) / l.stride + 1,
               (w + 2 * l.pad - l.kw) / l.stride + 1};
        break;
      }
      case LayerKind::maxpool: {
        if (cur.size() != 3)
          throw std::invalid_argument("layer " + std::to_string(i) +
                                      ": maxpool needs a [C,H,W] input");
        const int h = cur[1], w = cur[2];
        if ((h - l.window) % l.stride != 0 || (w - l.window) % l.stride != 0)
          throw std::invalid_argument("layer " + std::to_string(i) +
                                      ": maxpool output size is not integral");
        cur = {cur[0], (h - l.window) / l.stride + 1,
               (w - l.window) / l.stride + 1};
        break;
      }
      case LayerKind::batchnorm:
        if (cur[0] != l.features)
          throw std::invalid_argument("layer " + std::to_string(i) +
                                      ": batchnorm feature count mismatch");
        break;
      case LayerKind::activation:
      case LayerKind::dropout:
        break;
      case LayerKind::flatten: {
        int64_t n = shape_numel(cur);
        cur = {static_cast<int>(n)};
        break;
      }
    }
    shapes.push_back(cur);
  }
  if (shapes.empty() || shapes.back() != std::vector<int>{net.num_classes})
    throw std::invalid_argument("network output width must equal num_classes");
  return shapes;
}

int64_t weight_count(const NetworkSpec& net) {
  int64_t n = 0;
  for (const LayerSpec& l : net.layers) {
    if (l.kind == LayerKind::dense)
      n += static_cast<int64_t>(l.in) * l.out;
    else if (l.kind == LayerKind::conv2d)
      n += static_cast<int64_t>(l.out_ch) * l.in_ch * l.kh * l.kw;
  }
  return n;
}

int64_t bias_count(const NetworkSpec& net) {
  int64_t n = 0;
  for (const LayerSpec& l : net.layers) {
    if (l.kind == LayerKind::dense) n += l.out;
    else if (l.kind == LayerKind::conv2d) n += l.out_ch;
  }
  return n;
}

int64_t parameter_count(const NetworkSpec& net) {
  return weight_count(net) + bias_count(net);
}

Parameters init_parameters(const NetworkSpec& net, Rng& rng) {
  Parameters params;
  for (const LayerSpec& l : net.layers) {
    if (l.kind == LayerKind::dense) {
      const float limit = std::sqrt(6.f / (l.in + l.out));
      LayerParams p{Tensor({l.in, l.out}), Tensor({l.out})};
      for (float& w : p.weights.data) w = rng.uniform(-limit, limit);
      params.linear.push_back(std::move(p));
    } else if (l.kind == LayerKind::conv2d) {
      const int fan_in = l.in_ch * l.kh * l.kw;
      const int fan_out = l.out_ch * l.kh * l.kw;
      const float limit = std::sqrt(6.f / (fan_in + fan_out));
      LayerParams p{Tensor({l.out_ch, l.in_ch, l.kh, l.kw}), Tensor({l.out_ch})};
      for (float& w : p.weights.data) w = rng.uniform(-limit, limit);
      params.linear.push_back(std::move(p));
    } else if (l.kind == LayerKind::batchnorm) {
      BatchNormState bn;
      bn.gamma = Tensor({l.features});
      bn.beta = Tensor({l.features});
      bn.running_mean = Tensor({l.features});
      bn.running_var = Tensor({l.features});
      std::fill(bn.gamma.data.begin(), bn.gamma.data.end(), 1.f);
      std::fill(bn.running_var.data.begin(), bn.running_var.data.end(), 1.f);
      params.batchnorm.push_back(std::move(bn));
    }
  }
  return params;
}

namespace {

// Views a batch tensor [B, d0, d1, ...] as item b with shape [d0, d1, ...].
Tensor slice_item(const Tensor& batch, int b) {
  std::vector<int> item_shape(batch.shape.begin() + 1, batch.shape.end());
  const int64_t n = shape_numel(item_shape);
  Tensor item(item_shape);
  std::copy(batch.data.begin() + b * n, batch.data.begin() + (b + 1) * n,
            item.data.begin());
  return item;
}

void store_item(Tensor& batch, int b, const Tensor& item) {
  const int64_t n = item.numel();
  std::copy(item.data.begin(), item.data.end(), batch.data.begin() + b * n);
}

// Decomposes a batch activation as [B, F, S]: per-item feature count F and
// trailing spatial size S (1 for dense activations).
struct FeatureLayout {
  int batch, features, spatial;
};

FeatureLayout feature_layout(const Tensor& t, int features) {
  if (t.rank() < 2 || t.dim(1) != features)
    throw std::invalid_argument("batchnorm: feature axis mismatch");
  int spatial = 1;
  for (int i = 2; i < t.rank(); ++i) spatial *= t.dim(i);
  return {t.dim(0), features, spatial};
}

Tensor batchnorm_forward(const Tensor& x, BatchNormState& bn, Mode mode,
                         BatchNormCache& cache, int features) {
  const FeatureLayout fl = feature_layout(x, features);
  if (fl.batch < 1) throw std::invalid_argument("batchnorm: empty batch");
  const int64_t n_per_feature = static_cast<int64_t>(fl.batch) * fl.spatial;

  Tensor y(x.shape);
  cache.x_hat = Tensor(x.shape);
  cache.inv_std = Tensor({features});

  auto at = [&](const Tensor& t, int b, int f, int s) -> float {
    return t.data[(static_cast<size_t>(b) * fl.features + f) * fl.spatial + s];
  };
  auto put = [&](Tensor& t, int b, int f, int s, float v) {
    t.data[(static_cast<size_t>(b) * fl.features + f) * fl.spatial + s] = v;
  };

  for (int f = 0; f < features; ++f) {
    float mean_f, inv_std_f;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (int b = 0; b < fl.batch; ++b)
        for (int s = 0; s < fl.spatial; ++s) sum += at(x, b, f, s);
      const double mean = sum / static_cast<double>(n_per_feature);
      double sq = 0.0;
      for (int b = 0; b < fl.batch; ++b)
        for (int s = 0; s < fl.spatial; ++s) {
          const double d = at(x, b, f, s) - mean;
          sq += d * d;
        }
      const double var = sq / static_cast<double>(n_per_feature);
      mean_f = static_cast<float>(mean);
      inv_std_f = static_cast<float>(1.0 / std::sqrt(var + bn.epsilon));

      const double unbiased =
          n_per_feature > 1
              ? var * static_cast<double>(n_per_feature) / (n_per_feature - 1)
              : var;
      bn.running_mean.data[f] = bn.momentum * bn.running_mean.data[f] +
                                (1.f - bn.momentum) * static_cast<float>(mean);
      bn.running_var.data[f] = bn.momentum * bn.running_var.data[f] +
                               (1.f - bn.momentum) * static_cast<float>(unbiased);
    } else {
      mean_f = bn.running_mean.data[f];
      inv_std_f = static_cast<float>(
          1.0 / std::sqrt(static_cast<double>(bn.running_var.data[f]) + bn.epsilon));
    }
    cache.inv_std.data[f] = inv_std_f;
    const float gamma = bn.gamma.data[f];
    const float beta = bn.beta.data[f];
    for (int b = 0; b < fl.batch; ++b) {
      for (int s = 0; s < fl.spatial; ++s) {
        const float xh = (at(x, b, f, s) - mean_f) * inv_std_f;
        put(cache.x_hat, b, f, s, xh);
        put(y, b, f, s, gamma * xh + beta);
      }
    }
  }
  return y;
}

Tensor batchnorm_backward(const Tensor& dy, const BatchNormState& bn,
                          const BatchNormCache& cache, int features,
                          Tensor& dgamma, Tensor& dbeta) {
  const FeatureLayout fl = feature_layout(dy, features);
  const int64_t n = static_cast<int64_t>(fl.batch) * fl.spatial;
  dgamma = Tensor({features});
  dbeta = Tensor({features});
  Tensor dx(dy.shape);

  auto at = [&](const Tensor& t, int b, int f, int s) -> float {
    return t.data[(static_cast<size_t>(b) * fl.features + f) * fl.spatial + s];
  };
  auto put = [&](Tensor& t, int b, int f, int s, float v) {
    t.data[(static_cast<size_t>(b) * fl.features + f) * fl.spatial + s] = v;
  };

  for (int f = 0; f < features; ++f) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < fl.batch; ++b) {
      for (int s = 0; s < fl.spatial; ++s) {
        const double g = at(dy, b, f, s);
        sum_dy += g;
        sum_dy_xhat += g * at(cache.x_hat, b, f, s);
      }
    }
    dbeta.data[f] = static_cast<float>(sum_dy);
    dgamma.data[f] = static_cast<float>(sum_dy_xhat);
    const float coeff = bn.gamma.data[f] * cache.inv_std.data[f] / static_cast<float>(n);
    for (int b = 0; b < fl.batch; ++b) {
      for (int s = 0; s < fl.spatial; ++s) {
        const float term = static_cast<float>(n) * at(dy, b, f, s) -
                           static_cast<float>(sum_dy) -
                           at(cache.x_hat, b, f, s) * static_cast<float>(sum_dy_xhat);
        put(dx, b, f, s, coeff * term);
      }
    }
  }
  return dx;
}

}  // namespace

LayerSlots layer_slots(const NetworkSpec& net) {
  LayerSlots slots;
  int linear = 0, bn = 0, pool = 0, drop = 0;
  for (const LayerSpec& l : net.layers) {
    slots.linear.push_back(l.kind == LayerKind::dense || l.kind == LayerKind::conv2d
                               ? linear++ : -1);
    slots.bn.push_back(l.kind == LayerKind::batchnorm ? bn++ : -1);
    slots.pool.push_back(l.kind == LayerKind::maxpool ? pool++ : -1);
    slots.drop.push_back(l.kind == LayerKind::dropout ? drop++ : -1);
  }
  return slots;
}

ForwardResult forward(const NetworkSpec& net, Parameters& params,
                      const Tensor& batch, Mode mode, Rng* rng) {
  if (batch.rank() < 2 || batch.dim(0) < 1)
    throw std::invalid_argument("forward: batch must have a leading batch axis");
  std::vector<int> item_shape(batch.shape.begin() + 1, batch.shape.end());
  if (item_shape != net.input_shape)
    throw std::invalid_argument("forward: batch item shape does not match the net input");

  const LayerSlots slots = layer_slots(net);
  const int b_count = batch.dim(0);

  ForwardResult fwd;
  fwd.bn_cache.resize(params.batchnorm.size());
  Tensor cur = batch;

  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    fwd.layer_inputs.push_back(cur);
    switch (l.kind) {
      case LayerKind::dense: {
        const LayerParams& p = params.linear[slots.linear[i]];
        Tensor y = matmul(cur, p.weights);
        for (int b = 0; b < b_count; ++b)
          for (int j = 0; j < l.out; ++j) y.at2(b, j) += p.biases.data[j];
        cur = std::move(y);
        break;
      }
      case LayerKind::conv2d: {
        const LayerParams& p = params.linear[slots.linear[i]];
        Tensor first = conv2d(slice_item(cur, 0), p.weights, l.stride, l.pad);
        std::vector<int> out_shape = first.shape;
        out_shape.insert(out_shape.begin(), b_count);
        Tensor y(out_shape);
        const int64_t spatial = first.numel() / l.out_ch;
        auto add_bias = [&](Tensor& item) {
          for (int f = 0; f < l.out_ch; ++f)
            for (int64_t s = 0; s < spatial; ++s)
              item.data[f * spatial + s] += p.biases.data[f];
        };
        add_bias(first);
        store_item(y, 0, first);
        for (int b = 1; b < b_count; ++b) {
          Tensor item = conv2d(slice_item(cur, b), p.weights, l.stride, l.pad);
          add_bias(item);
          store_item(y, b, item);
        }
        cur = std::move(y);
        break;
      }
      case LayerKind::maxpool: {
        PoolResult first = maxpool(slice_item(cur, 0), l.window, l.stride);
        std::vector<int> out_shape = first.values.shape;
        out_shape.insert(out_shape.begin(), b_count);
        Tensor y(out_shape);
        std::vector<int> argmax;
        argmax.reserve(static_cast<size_t>(first.values.numel()) * b_count);
        store_item(y, 0, first.values);
        argmax.insert(argmax.end(), first.argmax.begin(), first.argmax.end());
        for (int b = 1; b < b_count; ++b) {
          PoolResult r = maxpool(slice_item(cur, b), l.window, l.stride);
          store_item(y, b, r.values);
          argmax.insert(argmax.end(), r.argmax.begin(), r.argmax.end());
        }
        fwd.pool_argmax.push_back(std::move(argmax));
        cur = std::move(y);
        break;
      }
      case LayerKind::batchnorm: {
        BatchNormState& bn = params.batchnorm[slots.bn[i]];
        cur = batchnorm_forward(cur, bn, mode, fwd.bn_cache[slots.bn[i]], l.features);
        break;
      }
      case LayerKind::activation: {
        Tensor y(cur.shape);
        if (l.act == ActivationKind::relu) {
          for (size_t j = 0; j < cur.data.size(); ++j)
            y.data[j] = cur.data[j] > 0.f ? cur.data[j] : 0.f;
        } else if (mode == Mode::train) {
          for (size_t j = 0; j < cur.data.size(); ++j)
            y.data[j] = std::clamp(cur.data[j], -1.f, 1.f);
        } else {
          for (size_t j = 0; j < cur.data.size(); ++j)
            y.data[j] = cur.data[j] < 0.f ? -1.f : 1.f;
        }
        cur = std::move(y);
        break;
      }
      case LayerKind::dropout: {
        if (mode == Mode::train) {
          if (rng == nullptr)
            throw std::invalid_argument("forward: dropout in train mode needs an rng");
          Tensor mask(cur.shape);
          const float keep_scale = 1.f / (1.f - l.rate);
          for (size_t j = 0; j < cur.data.size(); ++j)
            mask.data[j] = rng->uniform() < l.rate ? 0.f : keep_scale;
          cur = mul(cur, mask);
          fwd.dropout_mask.push_back(std::move(mask));
        } else {
          fwd.dropout_mask.emplace_back();
        }
        break;
      }
      case LayerKind::flatten: {
        cur = cur.reshaped({b_count, static_cast<int>(cur.numel() / b_count)});
        break;
      }
    }
  }
  fwd.scores = std::move(cur);
  return fwd;
}

HingeResult hinge_loss(const Tensor& scores, const std::vector<int>& labels) {
  const int b_count = scores.dim(0);
  const int classes = scores.dim(1);
  if (static_cast<int>(labels.size()) != b_count)
    throw std::invalid_argument("hinge_loss: one label per batch row required");
  HingeResult result;
  result.dscores = Tensor(scores.shape);
  double total = 0.0;
  for (int b = 0; b < b_count; ++b) {
    const int label = labels[static_cast<size_t>(b)];
    if (label < 0 || label >= classes)
      throw std::invalid_argument("hinge_loss: label out of range");
    for (int j = 0; j < classes; ++j) {
      const float y = j == label ? 1.f : -1.f;
      const float margin = 1.f - y * scores.at2(b, j);
      if (margin > 0.f) {
        total += static_cast<double>(margin) * margin;
        result.dscores.at2(b, j) = -2.f * y * margin / static_cast<float>(b_count);
      }
    }
  }
  result.loss = total / b_count;
  return result;
}

Gradients backward(const NetworkSpec& net, const Parameters& params,
                   const ForwardResult& fwd, const Tensor& dscores) {
  const LayerSlots slots = layer_slots(net);
  Gradients grads;
  grads.linear.resize(params.linear.size());
  grads.batchnorm.resize(params.batchnorm.size());

  Tensor g = dscores;
  for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
    const LayerSpec& l = net.layers[static_cast<size_t>(i)];
    const Tensor& x = fwd.layer_inputs[static_cast<size_t>(i)];
    switch (l.kind) {
      case LayerKind::dense: {
        const LayerParams& p = params.linear[slots.linear[i]];
        LayerParams& gp = grads.linear[slots.linear[i]];
        gp.weights = matmul(transposed(x), g);
        gp.biases = Tensor({l.out});
        for (int j = 0; j < l.out; ++j) {
          double s = 0.0;
          for (int b = 0; b < g.dim(0); ++b) s += g.at2(b, j);
          gp.biases.data[j] = static_cast<float>(s);
        }
        g = matmul(g, transposed(p.weights));
        break;
      }
      case LayerKind::conv2d: {
        const LayerParams& p = params.linear[slots.linear[i]];
        LayerParams& gp = grads.linear[slots.linear[i]];
        gp.weights = Tensor(p.weights.shape);
        gp.biases = Tensor({l.out_ch});
        Tensor dx(x.shape);
        const int b_count = x.dim(0);
        const int c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const int oh = g.dim(2), ow = g.dim(3);
        for (int b = 0; b < b_count; ++b) {
          for (int f = 0; f < l.out_ch; ++f) {
            double bias_sum = 0.0;
            for (int y = 0; y < oh; ++y) {
              for (int xo = 0; xo < ow; ++xo) {
                const float gv =
                    g.data[((static_cast<size_t>(b) * l.out_ch + f) * oh + y) * ow + xo];
                bias_sum += gv;
                if (gv == 0.f) continue;
                for (int ci = 0; ci < c; ++ci) {
                  for (int dy = 0; dy < l.kh; ++dy) {
                    const int iy = y * l.stride + dy - l.pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int dx2 = 0; dx2 < l.kw; ++dx2) {
                      const int ix = xo * l.stride + dx2 - l.pad;
                      if (ix < 0 || ix >= w) continue;
                      const size_t xi =
                          ((static_cast<size_t>(b) * c + ci) * h + iy) * w + ix;
                      const size_t ki =
                          ((static_cast<size_t>(f) * c + ci) * l.kh + dy) * l.kw + dx2;
                      gp.weights.data[ki] += gv * x.data[xi];
                      dx.data[xi] += gv * p.weights.data[ki];
                    }
                  }
                }
              }
            }
            gp.biases.data[f] += static_cast<float>(bias_sum);
          }
        }
        g = std::move(dx);
        break;
      }
      case LayerKind::maxpool: {
        const std::vector<int>& argmax = fwd.pool_argmax[slots.pool[i]];
        Tensor dx(x.shape);
        const int64_t item_in = shape_numel({x.dim(1), x.dim(2), x.dim(3)});
        const int64_t item_out = g.numel() / g.dim(0);
        for (int b = 0; b < g.dim(0); ++b) {
          for (int64_t o = 0; o < item_out; ++o) {
            const size_t src = static_cast<size_t>(b) * item_out + o;
            dx.data[static_cast<size_t>(b) * item_in + argmax[src]] += g.data[src];
          }
        }
        g = std::move(dx);
        break;
      }
      case LayerKind::batchnorm: {
        const int slot = slots.bn[i];
        g = batchnorm_backward(g, params.batchnorm[slot], fwd.bn_cache[slot],
                               l.features, grads.batchnorm[slot].dgamma,
                               grads.batchnorm[slot].dbeta);
        break;
      }
      case LayerKind::activation: {
        Tensor dx(g.shape);
        if (l.act == ActivationKind::relu) {
          for (size_t j = 0; j < g.data.size(); ++j)
            dx.data[j] = x.data[j] > 0.f ? g.data[j] : 0.f;
        } else {
          // straight-through: pass where |x| <= 1, cut elsewhere
          for (size_t j = 0; j < g.data.size(); ++j)
            dx.data[j] = std::fabs(x.data[j]) <= 1.f ? g.data[j] : 0.f;
        }
        g = std::move(dx);
        break;
      }
      case LayerKind::dropout: {
        const Tensor& mask = fwd.dropout_mask[slots.drop[i]];
        if (mask.numel() > 0) g = mul(g, mask);
        break;
      }
      case LayerKind::flatten: {
        g = g.reshaped(x.shape);
        break;
      }
    }
  }
  return grads;
}

int argmax_row(const Tensor& scores, int row) {
  const int classes = scores.dim(1);
  int best = 0;
  for (int j = 1; j < classes; ++j)
    if (scores.at2(row, j) > scores.at2(row, best)) best = j;
  return best;
}

int error_count(const Tensor& scores, const std::vector<int>& batch_labels) {
  if (static_cast<int>(batch_labels.size()) != scores.dim(0))
    throw std::invalid_argument("error_count: one label per score row required");
  int errors = 0;
  for (int b = 0; b < scores.dim(0); ++b)
    if (argmax_row(scores, b) != batch_labels[static_cast<size_t>(b)]) ++errors;
  return errors;
}

}  // namespace lightnn
