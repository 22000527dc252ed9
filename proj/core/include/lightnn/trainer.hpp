#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lightnn/dataset.hpp"
#include "lightnn/inference.hpp"
#include "lightnn/network.hpp"

namespace lightnn {

enum class RoundingMode { stochastic, nearest };
enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  int epochs = 50;
  int batch_size = 100;
  float eta = 1e-3f;
  int eta_decay_epoch = 40;  // 1-based epoch where eta is scaled; 0 disables
  float eta_decay_factor = 0.1f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_epsilon = 1e-8f;
  RoundingMode rounding = RoundingMode::stochastic;
  OptimizerKind optimizer = OptimizerKind::adam;
  float validation_fraction = 1.f / 6.f;
};

// Stable fingerprint of every config field, stored in checkpoints.
std::string config_digest(const TrainConfig& cfg);

const char* rounding_name(RoundingMode m);
const char* optimizer_name(OptimizerKind o);

struct TrainState {
  Parameters real;  // full-precision weights, biases, batch-norm state
  Gradients adam_m, adam_v;
  int64_t step = 0;
  uint64_t seed = 0;
  Rng rng;  // stream for stochastic rounding and dropout
  float eta = 1e-3f;
};

TrainState init_train_state(const NetworkSpec& net, const TrainConfig& cfg,
                            uint64_t seed);

// Projects real weights onto the variant's codebook: identity for
// conventional, sign for the binary families, nearest or stochastic rounding
// for the power-of-two families. Biases and batch-norm state pass through.
Parameters constrain_weights(const Parameters& real, const NetworkSpec& net,
                             RoundingMode mode, Rng* rng);

// Nearest-rounding projection used for validation, test, and finalization.
Parameters project_nearest(const Parameters& real, const NetworkSpec& net);

// Bias-corrected moment update; m and v are modified in place and the
// returned delta is added to the parameter.
float adam_update(float& m, float& v, float g, int64_t t, float beta1,
                  float beta2, float epsilon, float eta);

// One training step: constrain, forward, backward, then update the real
// weights with the gradients taken at the constrained weights. Returns the
// batch loss. Throws if the loss goes non-finite.
double train_minibatch(TrainState& state, const NetworkSpec& net,
                       const Tensor& batch, const std::vector<int>& labels,
                       const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_err = 0.0;  // error fractions in [0, 1]
  double test_err = 0.0;
};

struct TrainResult {
  TrainState best_state;  // state at the epoch with the lowest val error
  int best_epoch = 0;
  std::vector<EpochMetrics> metrics;
};

// Epoch loop: shuffles the train range, runs minibatches, then scores the
// nearest-projected weights on the validation and test ranges. The earliest
// epoch with the minimum validation error wins.
TrainResult run_training(const DatasetHandle& data, const NetworkSpec& net,
                         const TrainConfig& cfg, uint64_t seed,
                         std::ostream* progress = nullptr);

// Test-mode error fraction over data rows [begin, end).
double evaluate_error(const NetworkSpec& net, Parameters& params,
                      const DatasetHandle& data, int64_t begin, int64_t end,
                      int batch_size);

// Deterministic nearest projection of the real weights followed by encoding:
// the deployable model. Idempotent; biases and batch-norm stay full precision.
QuantizedModel finalize(const TrainState& state, const NetworkSpec& net);

// "epoch,train_loss,val_err,test_err" header plus one row per epoch.
std::string metrics_csv(const std::vector<EpochMetrics>& metrics);

}  // namespace lightnn
