#pragma once

// Joint detection/anticipation loss with its full backpropagation-through-
// time gradient, Adam with decoupled weight decay, and the training loop.

#include <trn/eval.hpp>
#include <trn/model.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trn {

struct TrainConfig {
  double learning_rate = 5e-4;
  double weight_decay = 5e-4;
  std::size_t batch_size = 2;
  std::size_t seq_len = 64;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  double lambda_encoder = 1.0;
  double lambda_decoder = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
    if (!(lambda_encoder >= 0.0) || !(lambda_decoder >= 0.0)) {
      throw ConfigError("loss weights must be non-negative");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
  }
};

struct LossWeights {
  double encoder = 1.0;
  double decoder = 1.0;
};

/// Number of (chunk t, step i) decoder targets with t + i inside a sequence
/// of `length` chunks.
inline std::size_t decoder_target_count(std::size_t length, std::size_t steps) {
  std::size_t n = 0;
  for (std::size_t t = 0; t < length; ++t) n += std::min(steps, length - 1 - t);
  return n;
}

namespace detail {

inline void check_labels(std::span<const std::size_t> labels, std::size_t length,
                         std::size_t classes) {
  if (labels.size() != length) {
    throw DimensionError("labels: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(length) + " chunks");
  }
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] >= classes) {
      throw std::out_of_range("label " + std::to_string(labels[t]) + " at chunk " +
                              std::to_string(t) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

}  // namespace detail

/// lambda_enc * mean encoder cross-entropy over chunks + lambda_dec * mean
/// decoder cross-entropy over the (t, i) pairs whose target chunk t + i lies
/// inside the sequence. The sequence starts from the zero state.
inline double sequence_loss(const TrnParams<double>& params, const TrnConfig& config,
                            const Sequence<double>& sequence, std::span<const std::size_t> labels,
                            const LossWeights& weights = {}) {
  const std::size_t length = sequence.length();
  detail::check_labels(labels, length, config.classes());
  if (length == 0) return 0.0;
  const auto fwd = trn_forward(params, config, sequence,
                               TrnState<double>::zeros(config.hidden_size));
  const std::size_t targets = decoder_target_count(length, config.decoder_steps);
  double enc = 0.0;
  double dec = 0.0;
  for (std::size_t t = 0; t < length; ++t) {
    const auto& out = fwd.outputs[t];
    enc += cross_entropy<double>(out.present, labels[t]);
    for (std::size_t i = 1; i <= config.decoder_steps && t + i < length; ++i) {
      dec += cross_entropy<double>(out.anticipated[i - 1], labels[t + i]);
    }
  }
  double loss = weights.encoder * enc / static_cast<double>(length);
  if (targets > 0) loss += weights.decoder * dec / static_cast<double>(targets);
  return loss;
}

struct LossAndGradient {
  double loss = 0.0;
  TrnParams<double> gradient;
};

/// sequence_loss and its exact gradient by backpropagation through time.
inline LossAndGradient sequence_loss_and_gradient(const TrnParams<double>& params,
                                                  const TrnConfig& config,
                                                  const Sequence<double>& sequence,
                                                  std::span<const std::size_t> labels,
                                                  const LossWeights& weights = {}) {
  using V = Vector<double>;
  using S = std::span<const double>;
  const std::size_t length = sequence.length();
  detail::check_labels(labels, length, config.classes());
  LossAndGradient result{0.0, TrnParams<double>::zeros(config)};
  if (length == 0) return result;
  auto& grad = result.gradient;

  const std::size_t hidden = config.hidden_size;
  const std::size_t steps = config.decoder_steps;
  const auto fwd = trn_forward_traced(params, config, sequence, TrnState<double>::zeros(hidden));
  const std::size_t targets = decoder_target_count(length, steps);
  const double enc_scale = weights.encoder / static_cast<double>(length);
  const double dec_scale = targets > 0 ? weights.decoder / static_cast<double>(targets) : 0.0;
  const double gate_scale = 1.0 / static_cast<double>(steps);

  V dh_next(hidden, 0.0);
  V dc_next(hidden, 0.0);
  for (std::size_t t = length; t-- > 0;) {
    const auto& tr = fwd.traces[t];

    // Encoder head and cell.
    const V p_enc = softmax<double>(tr.encoder.logits);
    result.loss += enc_scale * cross_entropy<double>(p_enc, labels[t]);
    const V dlog_enc = softmax_cross_entropy_grad<double>(p_enc, labels[t], enc_scale);
    V dh = dh_next;
    linear_backward(params.encoder_cls_weight, S(tr.encoder.lstm.h), S(dlog_enc),
                    grad.encoder_cls_weight, grad.encoder_cls_bias.values(), std::span<double>(dh));
    const auto enc = lstm_backward(params.encoder, tr.encoder.lstm, S(dh), S(dc_next), grad.encoder);
    V dembedded(enc.dx.begin(), enc.dx.begin() + static_cast<std::ptrdiff_t>(hidden));
    V dfuture(enc.dx.begin() + static_cast<std::ptrdiff_t>(hidden), enc.dx.end());

    // Decoder, last step first. dinput carries the gradient of the next
    // step's input, i.e. of this step's predicted feature.
    V dh_carry(hidden, 0.0);
    V dc_carry(hidden, 0.0);
    V dinput(hidden, 0.0);
    for (std::size_t i = steps; i-- > 0;) {
      const auto& st = tr.rollout.steps[i];
      V dh_i = dh_carry;
      for (std::size_t k = 0; k < hidden; ++k) dh_i[k] += dfuture[k] * gate_scale;
      if (t + i + 1 < length) {
        const V p = softmax<double>(tr.rollout.logits[i]);
        result.loss += dec_scale * cross_entropy<double>(p, labels[t + i + 1]);
        const V dlog = softmax_cross_entropy_grad<double>(p, labels[t + i + 1], dec_scale);
        linear_backward(params.decoder_cls_weight, S(st.h), S(dlog), grad.decoder_cls_weight,
                        grad.decoder_cls_bias.values(), std::span<double>(dh_i));
      }
      if (i + 1 < steps) {
        V dfeat = dinput;
        relu_backward(S(tr.rollout.features[i]), std::span<double>(dfeat));
        linear_backward(params.decoder_feat_weight, S(st.h), S(dfeat), grad.decoder_feat_weight,
                        grad.decoder_feat_bias.values(), std::span<double>(dh_i));
      }
      auto g = lstm_backward(params.decoder, st, S(dh_i), S(dc_carry), grad.decoder);
      dh_carry = std::move(g.dh_prev);
      dc_carry = std::move(g.dc_prev);
      dinput = std::move(g.dx);
    }
    for (std::size_t k = 0; k < hidden; ++k) {
      dembedded[k] += dinput[k];
      dh_next[k] = enc.dh_prev[k] + dh_carry[k];
      dc_next[k] = enc.dc_prev[k] + dc_carry[k];
    }

    // Embedding and fusion layers.
    relu_backward(S(tr.embedded), std::span<double>(dembedded));
    if (config.fusion == FusionVariant::one_stream) {
      linear_backward(params.embed_weight, S(tr.fused), S(dembedded), grad.embed_weight,
                      grad.embed_bias.values(), std::span<double>{});
    } else {
      V dfused(tr.fused.size(), 0.0);
      linear_backward(params.embed_weight, S(tr.fused), S(dembedded), grad.embed_weight,
                      grad.embed_bias.values(), std::span<double>(dfused));
      relu_backward(S(tr.fused), std::span<double>(dfused));
      linear_backward(params.fusion_weight, S(tr.concat), S(dfused), grad.fusion_weight,
                      grad.fusion_bias.values(), std::span<double>{});
    }
  }
  return result;
}

struct AdamState {
  TrnParams<double> first_moment;
  TrnParams<double> second_moment;
  std::uint64_t step = 0;

  static AdamState zeros(const TrnConfig& config) {
    return {TrnParams<double>::zeros(config), TrnParams<double>::zeros(config), 0};
  }
};

/// One Adam update with bias correction and decoupled weight decay:
/// theta -= lr * wd * theta + lr * m_hat / (sqrt(v_hat) + eps). Gradients are
/// checked for finiteness before anything is modified.
inline void adam_step(TrnParams<double>& params, const TrnParams<double>& grads, AdamState& state,
                      const TrainConfig& config) {
  grads.for_each([](const char* name, const Matrix<double>& g) {
    for (double v : g.values()) {
      if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite gradient in ") + name);
    }
  });
  std::vector<const Matrix<double>*> g_list;
  grads.for_each([&g_list](const char*, const Matrix<double>& g) { g_list.push_back(&g); });
  std::vector<Matrix<double>*> m_list;
  std::vector<Matrix<double>*> v_list;
  state.first_moment.for_each([&m_list](const char*, Matrix<double>& m) { m_list.push_back(&m); });
  state.second_moment.for_each([&v_list](const char*, Matrix<double>& v) { v_list.push_back(&v); });

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  const double lr = config.learning_rate;
  const double decay = lr * config.weight_decay;

  std::size_t idx = 0;
  params.for_each([&](const char* name, Matrix<double>& theta) {
    const auto& g = *g_list[idx];
    auto& m = *m_list[idx];
    auto& v = *v_list[idx];
    ++idx;
    if (g.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
      throw DimensionError(std::string("adam_step: shape mismatch for ") + name);
    }
    auto th = theta.values();
    auto gv = g.values();
    auto mv = m.values();
    auto vv = v.values();
    for (std::size_t k = 0; k < th.size(); ++k) {
      mv[k] = config.beta1 * mv[k] + (1.0 - config.beta1) * gv[k];
      vv[k] = config.beta2 * vv[k] + (1.0 - config.beta2) * gv[k] * gv[k];
      const double m_hat = mv[k] / correction1;
      const double v_hat = vv[k] / correction2;
      th[k] -= decay * th[k];
      th[k] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  });
}

/// One video's chunk features with a class index per chunk.
struct LabeledSequence {
  std::string id;
  Sequence<double> features;
  std::vector<std::size_t> labels;
};

struct Window {
  std::size_t sequence = 0;
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Non-overlapping windows of seq_len chunks; a shorter final window is kept.
inline std::vector<Window> make_windows(std::span<const LabeledSequence> data, std::size_t seq_len) {
  std::vector<Window> out;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const std::size_t n = data[s].labels.size();
    for (std::size_t start = 0; start < n; start += seq_len) {
      out.push_back({s, start, std::min(seq_len, n - start)});
    }
  }
  return out;
}

struct EvaluationSummary {
  double encoder_map = 0.0;
  std::vector<double> step_maps;
};

/// Runs each sequence from the zero state and scores detection and every
/// anticipation step.
inline PredictionDump predict(const TrnParams<double>& params, const TrnConfig& config,
                              std::span<const LabeledSequence> data) {
  PredictionDump dump;
  dump.chunk_size = config.chunk_size;
  dump.fps = config.fps;
  dump.decoder_steps = config.decoder_steps;
  dump.classes = config.classes();
  for (const auto& seq : data) {
    auto fwd = trn_forward(params, config, seq.features, TrnState<double>::zeros(config.hidden_size));
    dump.videos.push_back(
        to_video_prediction(seq.id, std::span<const DetectionOutput<double>>(fwd.outputs)));
  }
  return dump;
}

inline EvaluationSummary evaluate(const TrnParams<double>& params, const TrnConfig& config,
                                  std::span<const LabeledSequence> data) {
  const PredictionDump dump = predict(params, config, data);
  std::vector<VideoLabels> labels;
  for (const auto& seq : data) labels.push_back({seq.id, seq.labels, {}});
  EvaluationSummary summary;
  summary.encoder_map = per_frame_map(dump, labels).map;
  for (std::size_t i = 1; i <= config.decoder_steps; ++i) {
    summary.step_maps.push_back(anticipation_map(dump, labels, i).map);
  }
  return summary;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  bool evaluated = false;
  EvaluationSummary test;
};

struct TrainResult {
  TrnParams<double> params;
  AdamState adam;
  std::vector<EpochMetrics> log;
};

/// Return false to stop training after the current epoch.
using EpochCallback = std::function<bool(const EpochMetrics&)>;

/// Mean loss and mean gradient over a batch of windows.
inline LossAndGradient batch_loss_and_gradient(const TrnParams<double>& params,
                                               const TrnConfig& config,
                                               std::span<const LabeledSequence> data,
                                               std::span<const Window> batch,
                                               const LossWeights& weights) {
  LossAndGradient total{0.0, TrnParams<double>::zeros(config)};
  std::vector<Matrix<double>*> acc;
  total.gradient.for_each([&acc](const char*, Matrix<double>& m) { acc.push_back(&m); });
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& w : batch) {
    const auto& seq = data[w.sequence];
    const auto window = seq.features.slice(w.start, w.length);
    std::span<const std::size_t> labels(seq.labels.data() + w.start, w.length);
    auto lg = sequence_loss_and_gradient(params, config, window, labels, weights);
    total.loss += scale * lg.loss;
    std::size_t idx = 0;
    lg.gradient.for_each([&](const char*, const Matrix<double>& g) {
      auto dst = acc[idx++]->values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * g.values()[k];
    });
  }
  return total;
}

/// Trains from a seeded initialization. Each epoch shuffles the windows,
/// takes one Adam step per batch and, when a test split is given, evaluates
/// it.
inline TrainResult train(std::span<const LabeledSequence> train_set,
                         std::span<const LabeledSequence> test_set, const TrnConfig& config,
                         const TrainConfig& train_config, const EpochCallback& on_epoch = {}) {
  config.validate();
  train_config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  for (const auto& s : train_set) detail::check_labels(s.labels, s.features.length(), config.classes());

  TrainResult result{TrnParams<double>::init(config, train_config.seed), AdamState::zeros(config), {}};
  std::mt19937_64 shuffle_rng(train_config.seed ^ 0x9e3779b97f4a7c15ULL);
  auto windows = make_windows(train_set, train_config.seq_len);
  const LossWeights weights{train_config.lambda_encoder, train_config.lambda_decoder};

  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    std::shuffle(windows.begin(), windows.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < windows.size(); b += train_config.batch_size) {
      const std::size_t n = std::min(train_config.batch_size, windows.size() - b);
      auto lg = batch_loss_and_gradient(result.params, config, train_set,
                                        std::span<const Window>(windows).subspan(b, n), weights);
      adam_step(result.params, lg.gradient, result.adam, train_config);
      loss_sum += lg.loss;
      ++batches;
    }
    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.train_loss = loss_sum / static_cast<double>(batches);
    if (!test_set.empty()) {
      metrics.test = evaluate(result.params, config, test_set);
      metrics.evaluated = true;
    }
    result.log.push_back(metrics);
    if (on_epoch && !on_epoch(metrics)) break;
  }
  return result;
}

}  // namespace trn
