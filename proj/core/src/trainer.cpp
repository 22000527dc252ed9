#include "lightnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "lightnn/codebook.hpp"

namespace lightnn {

const char* rounding_name(RoundingMode m) {
  return m == RoundingMode::stochastic ? "stochastic" : "nearest";
}

const char* optimizer_name(OptimizerKind o) {
  return o == OptimizerKind::adam ? "adam" : "sgd";
}

std::string config_digest(const TrainConfig& cfg) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "e%d;b%d;lr%.9g;de%d;df%.9g;b1%.9g;b2%.9g;eps%.9g;%s;%s;vf%.9g",
                cfg.epochs, cfg.batch_size, cfg.eta, cfg.eta_decay_epoch,
                cfg.eta_decay_factor, cfg.beta1, cfg.beta2, cfg.adam_epsilon,
                rounding_name(cfg.rounding), optimizer_name(cfg.optimizer),
                cfg.validation_fraction);
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const char* p = buf; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 1099511628211ull;
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

TrainState init_train_state(const NetworkSpec& net, const TrainConfig& cfg,
                            uint64_t seed) {
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  TrainState state;
  state.seed = seed;
  Rng root(seed);
  Rng init_rng = root.fork("init");
  state.real = init_parameters(net, init_rng);
  state.rng = root.fork("train");
  state.eta = cfg.eta;

  auto zero_like = [](const Parameters& p) {
    Gradients g;
    for (const LayerParams& lp : p.linear)
      g.linear.push_back({Tensor(lp.weights.shape), Tensor(lp.biases.shape)});
    for (const BatchNormState& bn : p.batchnorm)
      g.batchnorm.push_back({Tensor(bn.gamma.shape), Tensor(bn.beta.shape)});
    return g;
  };
  state.adam_m = zero_like(state.real);
  state.adam_v = zero_like(state.real);
  return state;
}

namespace {

const CodebookIndex* index_for(const NetworkSpec& net) {
  static const CodebookIndex k1_index(CodebookSpec::k_ones(1));
  static const CodebookIndex k2_index(CodebookSpec::k_ones(2));
  const auto spec = variant_codebook(net.variant);
  if (!spec) return nullptr;
  if (spec->kind == CodebookKind::binary) return nullptr;  // handled by sign
  return spec->k == 1 ? &k1_index : &k2_index;
}

}  // namespace

Parameters constrain_weights(const Parameters& real, const NetworkSpec& net,
                             RoundingMode mode, Rng* rng) {
  if (net.variant == ModelVariant::conventional) return real;
  Parameters constrained = real;
  const auto spec = variant_codebook(net.variant);
  if (spec->kind == CodebookKind::binary) {
    for (LayerParams& lp : constrained.linear)
      for (float& w : lp.weights.data) w = w < 0.f ? -1.f : 1.f;
    return constrained;
  }
  const CodebookIndex* index = index_for(net);
  if (mode == RoundingMode::stochastic) {
    if (rng == nullptr)
      throw std::invalid_argument("stochastic rounding needs an rng");
    for (LayerParams& lp : constrained.linear)
      for (float& w : lp.weights.data) w = index->stochastic_value(w, *rng);
  } else {
    for (LayerParams& lp : constrained.linear)
      for (float& w : lp.weights.data) w = index->nearest_value(w);
  }
  return constrained;
}

Parameters project_nearest(const Parameters& real, const NetworkSpec& net) {
  return constrain_weights(real, net, RoundingMode::nearest, nullptr);
}

float adam_update(float& m, float& v, float g, int64_t t, float beta1,
                  float beta2, float epsilon, float eta) {
  m = beta1 * m + (1.f - beta1) * g;
  v = beta2 * v + (1.f - beta2) * g * g;
  const double m_hat = m / (1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(t)));
  const double v_hat = v / (1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(t)));
  return static_cast<float>(-static_cast<double>(eta) * m_hat /
                            (std::sqrt(v_hat) + epsilon));
}

double train_minibatch(TrainState& state, const NetworkSpec& net,
                       const Tensor& batch, const std::vector<int>& labels,
                       const TrainConfig& cfg) {
  Parameters constrained =
      constrain_weights(state.real, net, cfg.rounding, &state.rng);

  // batch-norm running statistics live on the real parameters; hand the
  // constrained copy's updates back after the forward pass
  ForwardResult fwd = forward(net, constrained, batch, Mode::train, &state.rng);
  for (size_t i = 0; i < constrained.batchnorm.size(); ++i) {
    state.real.batchnorm[i].running_mean = constrained.batchnorm[i].running_mean;
    state.real.batchnorm[i].running_var = constrained.batchnorm[i].running_var;
  }

  HingeResult hinge = hinge_loss(fwd.scores, labels);
  if (!std::isfinite(hinge.loss))
    throw std::runtime_error("training diverged: non-finite loss at step " +
                             std::to_string(state.step + 1));

  Gradients grads = backward(net, constrained, fwd, hinge.dscores);

  state.step += 1;
  const int64_t t = state.step;
  const float clip = [&]() -> float {
    const auto spec = variant_codebook(net.variant);
    if (!spec) return 0.f;  // conventional: no clipping
    return codebook_values(*spec).back();
  }();

  auto apply = [&](float& w, float& m, float& v, float g, bool clip_range) {
    float delta;
    if (cfg.optimizer == OptimizerKind::adam) {
      delta = adam_update(m, v, g, t, cfg.beta1, cfg.beta2, cfg.adam_epsilon,
                          state.eta);
    } else {
      delta = -state.eta * g;
    }
    if (delta != 0.f) {
      w += delta;
      if (clip_range) w = std::clamp(w, -clip, clip);
    }
  };

  for (size_t li = 0; li < state.real.linear.size(); ++li) {
    LayerParams& p = state.real.linear[li];
    LayerParams& gm = state.adam_m.linear[li];
    LayerParams& gv = state.adam_v.linear[li];
    const LayerParams& g = grads.linear[li];
    const bool clip_weights = clip > 0.f;
    for (size_t i = 0; i < p.weights.data.size(); ++i)
      apply(p.weights.data[i], gm.weights.data[i], gv.weights.data[i],
            g.weights.data[i], clip_weights);
    for (size_t i = 0; i < p.biases.data.size(); ++i)
      apply(p.biases.data[i], gm.biases.data[i], gv.biases.data[i],
            g.biases.data[i], false);
  }
  for (size_t bi = 0; bi < state.real.batchnorm.size(); ++bi) {
    BatchNormState& bn = state.real.batchnorm[bi];
    Gradients::BnGrads& gm = state.adam_m.batchnorm[bi];
    Gradients::BnGrads& gv = state.adam_v.batchnorm[bi];
    const Gradients::BnGrads& g = grads.batchnorm[bi];
    for (size_t i = 0; i < bn.gamma.data.size(); ++i)
      apply(bn.gamma.data[i], gm.dgamma.data[i], gv.dgamma.data[i],
            g.dgamma.data[i], false);
    for (size_t i = 0; i < bn.beta.data.size(); ++i)
      apply(bn.beta.data[i], gm.dbeta.data[i], gv.dbeta.data[i],
            g.dbeta.data[i], false);
  }
  return hinge.loss;
}

double evaluate_error(const NetworkSpec& net, Parameters& params,
                      const DatasetHandle& data, int64_t begin, int64_t end,
                      int batch_size) {
  if (begin >= end) throw std::invalid_argument("evaluate_error: empty range");
  int64_t errors = 0;
  std::vector<int64_t> indices;
  for (int64_t at = begin; at < end; at += batch_size) {
    const int count = static_cast<int>(std::min<int64_t>(batch_size, end - at));
    indices.resize(static_cast<size_t>(count));
    std::iota(indices.begin(), indices.end(), at);
    Tensor batch = make_batch(data, indices.data(), count, net.input_shape);
    std::vector<int> labels = gather_labels(data, indices.data(), count);
    ForwardResult fwd = forward(net, params, batch, Mode::test);
    errors += error_count(fwd.scores, labels);
  }
  return static_cast<double>(errors) / static_cast<double>(end - begin);
}

TrainResult run_training(const DatasetHandle& data, const NetworkSpec& net,
                         const TrainConfig& cfg, uint64_t seed,
                         std::ostream* progress) {
  if (data.train_end <= data.train_begin)
    throw std::invalid_argument("run_training: empty train split");
  if (data.val_end <= data.val_begin)
    throw std::invalid_argument("run_training: empty validation split");
  if (data.test_end <= data.test_begin)
    throw std::invalid_argument("run_training: empty test split");

  TrainResult result;
  TrainState state = init_train_state(net, cfg, seed);
  Rng shuffle_rng = Rng(seed).fork("shuffle");

  const int64_t n_train = data.train_end - data.train_begin;
  std::vector<int64_t> order(static_cast<size_t>(n_train));
  std::iota(order.begin(), order.end(), data.train_begin);

  double best_val = 2.0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    state.eta = cfg.eta;
    if (cfg.eta_decay_epoch > 0 && epoch >= cfg.eta_decay_epoch)
      state.eta = cfg.eta * cfg.eta_decay_factor;

    for (int64_t i = n_train - 1; i > 0; --i) {
      const int64_t j = static_cast<int64_t>(shuffle_rng.below(static_cast<uint64_t>(i + 1)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double loss_sum = 0.0;
    int64_t seen = 0;
    for (int64_t at = 0; at < n_train; at += cfg.batch_size) {
      const int count =
          static_cast<int>(std::min<int64_t>(cfg.batch_size, n_train - at));
      Tensor batch = make_batch(data, order.data() + at, count, net.input_shape);
      std::vector<int> labels = gather_labels(data, order.data() + at, count);
      const double loss = train_minibatch(state, net, batch, labels, cfg);
      loss_sum += loss * count;
      seen += count;
    }

    Parameters finalized = project_nearest(state.real, net);
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(seen);
    em.val_err = evaluate_error(net, finalized, data, data.val_begin,
                                data.val_end, 1000);
    em.test_err = evaluate_error(net, finalized, data, data.test_begin,
                                 data.test_end, 1000);
    result.metrics.push_back(em);

    if (em.val_err < best_val) {
      best_val = em.val_err;
      result.best_epoch = epoch;
      result.best_state = state;
    }
    if (progress) {
      char line[160];
      std::snprintf(line, sizeof line,
                    "epoch %3d  loss %.5f  val_err %.4f  test_err %.4f%s\n",
                    epoch, em.train_loss, em.val_err, em.test_err,
                    result.best_epoch == epoch ? "  *" : "");
      (*progress) << line << std::flush;
    }
  }
  return result;
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::string csv = "epoch,train_loss,val_err,test_err\n";
  char row[128];
  for (const EpochMetrics& em : metrics) {
    std::snprintf(row, sizeof row, "%d,%.6f,%.6f,%.6f\n", em.epoch,
                  em.train_loss, em.val_err, em.test_err);
    csv += row;
  }
  return csv;
}

QuantizedModel finalize(const TrainState& state, const NetworkSpec& net) {
  const Parameters projected = project_nearest(state.real, net);
  return quantize_model(projected, net);
}

}  // namespace lightnn
