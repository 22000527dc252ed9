#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lightnn/rng.hpp"
#include "lightnn/tensor.hpp"
#include "lightnn/variant.hpp"

namespace lightnn {

enum class LayerKind { dense, conv2d, maxpool, batchnorm, activation, dropout, flatten };

enum class ActivationKind {
  relu,
  htanh_sign,  // hard tanh while training, sign at test time
};

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  int in = 0, out = 0;                            // dense
  int in_ch = 0, out_ch = 0, kh = 0, kw = 0;      // conv2d
  int stride = 1, pad = 0;                        // conv2d / maxpool
  int window = 0;                                 // maxpool
  int features = 0;                               // batchnorm
  ActivationKind act = ActivationKind::relu;      // activation
  float rate = 0.f;                               // dropout

  static LayerSpec dense(int in, int out);
  static LayerSpec conv(int in_ch, int out_ch, int kh, int kw, int stride, int pad);
  static LayerSpec pool(int window, int stride);
  static LayerSpec batchnorm(int features);
  static LayerSpec activation(ActivationKind kind);
  static LayerSpec dropout(float rate);
  static LayerSpec flatten();
};

struct NetworkSpec {
  std::string preset_name;
  ModelVariant variant = ModelVariant::conventional;
  std::vector<int> input_shape;  // per-item shape, batch dimension excluded
  int num_classes = 0;
  std::vector<LayerSpec> layers;
};

// Presets: "mnist-1hidden", "mnist-2conv", "mnist-3hidden", "cifar-3conv",
// "cifar-6conv". The variant picks the activation kind (relu for the float
// families, htanh_sign for the binarized ones). Only mnist-1hidden carries
// verified dimensions; the conv presets are best-effort reconstructions.
NetworkSpec make_preset(const std::string& name, ModelVariant variant);
std::vector<std::string> preset_names();

// Per-item output shapes of every layer; throws if shapes do not compose.
std::vector<std::vector<int>> layer_shapes(const NetworkSpec& net);

// Position of each layer inside the per-kind parameter and cache arrays;
// -1 where the layer is not of that kind.
struct LayerSlots {
  std::vector<int> linear, bn, pool, drop;
};
LayerSlots layer_slots(const NetworkSpec& net);

// Trainable weights and biases only (batch-norm scale/shift excluded).
int64_t parameter_count(const NetworkSpec& net);
int64_t weight_count(const NetworkSpec& net);
int64_t bias_count(const NetworkSpec& net);

struct LayerParams {
  Tensor weights;  // dense: [in, out]; conv: [F, C, kh, kw]
  Tensor biases;   // [out] / [F]
};

struct BatchNormState {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  float momentum = 0.9f;
  float epsilon = 1e-5f;
};

struct Parameters {
  std::vector<LayerParams> linear;        // one entry per dense/conv layer
  std::vector<BatchNormState> batchnorm;  // one entry per batch-norm layer
};

Parameters init_parameters(const NetworkSpec& net, Rng& rng);

enum class Mode { train, test };

struct BatchNormCache {
  Tensor x_hat;     // normalized input, same shape as the layer input
  Tensor inv_std;   // [features]
};

struct ForwardResult {
  std::vector<Tensor> layer_inputs;       // input seen by each layer
  std::vector<BatchNormCache> bn_cache;   // per batch-norm layer
  std::vector<std::vector<int>> pool_argmax;
  std::vector<Tensor> dropout_mask;       // scaled keep masks
  Tensor scores;                          // [B, num_classes]
};

// Runs the net on a batch [B, ...input_shape]. Weights must already be
// constrained; this function never quantizes. Train mode uses batch
// statistics, hard tanh, and live dropout (rng required when the net has
// dropout layers); test mode uses running statistics, sign, and no dropout.
ForwardResult forward(const NetworkSpec& net, Parameters& params,
                      const Tensor& batch, Mode mode, Rng* rng = nullptr);

// Squared hinge with one-vs-rest +-1 targets, averaged over the batch.
struct HingeResult {
  double loss = 0.0;
  Tensor dscores;
};
HingeResult hinge_loss(const Tensor& scores, const std::vector<int>& labels);

struct Gradients {
  std::vector<LayerParams> linear;  // same shapes as Parameters::linear
  struct BnGrads {
    Tensor dgamma, dbeta;
  };
  std::vector<BnGrads> batchnorm;
};

// Gradients with respect to the constrained weights that produced fwd.
// Binarized activations use the straight-through rule: gradient passes
// where |preactivation| <= 1 and is cut elsewhere.
Gradients backward(const NetworkSpec& net, const Parameters& params,
                   const ForwardResult& fwd, const Tensor& dscores);

int argmax_row(const Tensor& scores, int row);

// Rows whose argmax disagrees with the label; batch_labels has one entry
// per score row.
int error_count(const Tensor& scores, const std::vector<int>& batch_labels);

}  // namespace lightnn
