#pragma once

// Temporal recurrent network: fusion front-end, embedding, autoregressive
// temporal decoder, future gate and spatiotemporal encoder.

#include <trn/numeric.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace trn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A required input stream was not supplied (or an extra one was).
class StreamError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FusionVariant { one_stream, two_stream, fused_two_stream };

inline std::string_view to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::one_stream:
      return "ONE_STREAM";
    case FusionVariant::two_stream:
      return "TWO_STREAM";
    case FusionVariant::fused_two_stream:
      return "FUSED_TWO_STREAM";
  }
  return "?";
}

inline FusionVariant parse_fusion_variant(std::string_view text) {
  std::string upper(text);
  for (auto& ch : upper) {
    ch = ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  }
  if (upper == "ONE_STREAM") return FusionVariant::one_stream;
  if (upper == "TWO_STREAM") return FusionVariant::two_stream;
  if (upper == "FUSED_TWO_STREAM") return FusionVariant::fused_two_stream;
  throw ConfigError("unknown fusion variant '" + std::string(text) + "'");
}

inline constexpr std::size_t kPoseFeatureDim = 134;

/// Architecture hyperparameters. Background is class 0, actions are 1..K.
struct TrnConfig {
  std::size_t appearance_dim = 0;
  std::size_t motion_dim = 0;
  std::size_t pose_dim = kPoseFeatureDim;
  FusionVariant fusion = FusionVariant::two_stream;
  std::size_t hidden_size = 512;
  std::size_t decoder_steps = 8;
  std::size_t num_actions = 20;
  std::size_t seq_len = 64;
  std::size_t chunk_size = 6;
  double fps = 30.0;

  std::size_t classes() const noexcept { return num_actions + 1; }

  bool uses_motion() const noexcept { return fusion != FusionVariant::one_stream; }
  bool uses_pose() const noexcept { return fusion == FusionVariant::fused_two_stream; }

  /// Width of the concatenated streams entering the fusion layer (or the raw
  /// stream for ONE_STREAM).
  std::size_t concat_dim() const noexcept {
    switch (fusion) {
      case FusionVariant::one_stream:
        return appearance_dim;
      case FusionVariant::two_stream:
        return appearance_dim + motion_dim;
      case FusionVariant::fused_two_stream:
        return appearance_dim + pose_dim + motion_dim;
    }
    return 0;
  }

  /// Width of the vector handed to the embedding layer.
  std::size_t fused_dim() const noexcept {
    return fusion == FusionVariant::one_stream ? appearance_dim : hidden_size;
  }

  void validate() const {
    if (hidden_size < 1) throw ConfigError("hidden_size must be >= 1");
    if (decoder_steps < 1) throw ConfigError("decoder_steps must be >= 1");
    if (classes() < 2) throw ConfigError("num_actions must be >= 1");
    if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
    if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
    if (!(fps > 0.0) || !std::isfinite(fps)) throw ConfigError("fps must be positive");
    if (appearance_dim == 0) throw ConfigError("appearance stream dimension must be positive");
    if (uses_motion() && motion_dim == 0) {
      throw ConfigError(std::string(to_string(fusion)) + " requires a motion stream dimension");
    }
    if (uses_pose() && pose_dim == 0) {
      throw ConfigError("FUSED_TWO_STREAM requires a pose stream dimension");
    }
  }
};

/// Streams for one chunk. An empty span means the stream is absent.
template <typename T>
struct ChunkInput {
  std::span<const T> appearance;
  std::span<const T> motion;
  std::span<const T> pose;
};

/// Per-chunk features of one video, one T x D matrix per stream.
template <typename T>
struct Sequence {
  Matrix<T> appearance;
  Matrix<T> motion;
  Matrix<T> pose;

  std::size_t length() const {
    std::size_t n = 0;
    for (const auto* m : {&appearance, &motion, &pose}) {
      if (m->empty()) continue;
      if (n != 0 && m->rows() != n) {
        throw DimensionError("sequence streams disagree on chunk count: " +
                             std::to_string(n) + " vs " + std::to_string(m->rows()));
      }
      n = m->rows();
    }
    return n;
  }

  ChunkInput<T> chunk(std::size_t t) const {
    auto row = [t](const Matrix<T>& m) {
      return m.empty() ? std::span<const T>{} : m.row(t);
    };
    return {row(appearance), row(motion), row(pose)};
  }

  Sequence slice(std::size_t start, std::size_t count) const {
    auto cut = [&](const Matrix<T>& m) {
      if (m.empty()) return Matrix<T>{};
      auto first = m.values().begin() + static_cast<std::ptrdiff_t>(start * m.cols());
      return Matrix<T>(count, m.cols(),
                       std::vector<T>(first, first + static_cast<std::ptrdiff_t>(count * m.cols())));
    };
    return {cut(appearance), cut(motion), cut(pose)};
  }

  template <typename U>
  Sequence<U> cast() const {
    return {appearance.template cast<U>(), motion.template cast<U>(), pose.template cast<U>()};
  }
};

template <typename T>
struct TrnParams {
  Matrix<T> fusion_weight;  // H x concat (empty for ONE_STREAM)
  Matrix<T> fusion_bias;
  Matrix<T> embed_weight;  // H x fused
  Matrix<T> embed_bias;
  LstmParams<T> decoder;  // input H, hidden H
  Matrix<T> decoder_cls_weight;  // classes x H
  Matrix<T> decoder_cls_bias;
  Matrix<T> decoder_feat_weight;  // H x H
  Matrix<T> decoder_feat_bias;
  LstmParams<T> encoder;  // input 2H, hidden H
  Matrix<T> encoder_cls_weight;  // classes x H
  Matrix<T> encoder_cls_bias;

  static TrnParams zeros(const TrnConfig& config) {
    config.validate();
    const std::size_t h = config.hidden_size;
    const std::size_t k = config.classes();
    TrnParams p;
    if (config.fusion != FusionVariant::one_stream) {
      p.fusion_weight = Matrix<T>(h, config.concat_dim());
      p.fusion_bias = Matrix<T>(h, 1);
    }
    p.embed_weight = Matrix<T>(h, config.fused_dim());
    p.embed_bias = Matrix<T>(h, 1);
    p.decoder = LstmParams<T>(h, h);
    p.decoder_cls_weight = Matrix<T>(k, h);
    p.decoder_cls_bias = Matrix<T>(k, 1);
    p.decoder_feat_weight = Matrix<T>(h, h);
    p.decoder_feat_bias = Matrix<T>(h, 1);
    p.encoder = LstmParams<T>(2 * h, h);
    p.encoder_cls_weight = Matrix<T>(k, h);
    p.encoder_cls_bias = Matrix<T>(k, 1);
    return p;
  }

  /// Uniform(+-1/sqrt(fan_in)) for every tensor, then forget-gate biases set
  /// to +1. Deterministic in the seed.
  static TrnParams init(const TrnConfig& config, std::uint64_t seed) {
    TrnParams p = zeros(config);
    std::mt19937_64 rng(seed);
    auto fill = [&rng](Matrix<T>& m, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : m.values()) v = static_cast<T>(dist(rng));
    };
    auto fill_layer = [&](Matrix<T>& w, Matrix<T>& b) {
      fill(w, w.cols());
      fill(b, w.cols());
    };
    if (!p.fusion_weight.empty()) fill_layer(p.fusion_weight, p.fusion_bias);
    fill_layer(p.embed_weight, p.embed_bias);
    fill_layer(p.decoder.weight, p.decoder.bias);
    fill_layer(p.decoder_cls_weight, p.decoder_cls_bias);
    fill_layer(p.decoder_feat_weight, p.decoder_feat_bias);
    fill_layer(p.encoder.weight, p.encoder.bias);
    fill_layer(p.encoder_cls_weight, p.encoder_cls_bias);
    const std::size_t h = config.hidden_size;
    for (std::size_t k = h; k < 2 * h; ++k) {
      p.decoder.bias(k, 0) = T{1};
      p.encoder.bias(k, 0) = T{1};
    }
    return p;
  }

  /// Visits every tensor in a fixed order with a stable name.
  template <typename F>
  void for_each(F&& f) {
    f("fusion.weight", fusion_weight);
    f("fusion.bias", fusion_bias);
    f("embed.weight", embed_weight);
    f("embed.bias", embed_bias);
    f("decoder.lstm.weight", decoder.weight);
    f("decoder.lstm.bias", decoder.bias);
    f("decoder.cls.weight", decoder_cls_weight);
    f("decoder.cls.bias", decoder_cls_bias);
    f("decoder.feat.weight", decoder_feat_weight);
    f("decoder.feat.bias", decoder_feat_bias);
    f("encoder.lstm.weight", encoder.weight);
    f("encoder.lstm.bias", encoder.bias);
    f("encoder.cls.weight", encoder_cls_weight);
    f("encoder.cls.bias", encoder_cls_bias);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<TrnParams*>(this)->for_each(
        [&f](const char* name, Matrix<T>& m) { f(name, static_cast<const Matrix<T>&>(m)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&n](const char*, const Matrix<T>& m) { n += m.size(); });
    return n;
  }

  std::vector<T> flatten() const {
    std::vector<T> flat;
    flat.reserve(parameter_count());
    for_each([&flat](const char*, const Matrix<T>& m) {
      flat.insert(flat.end(), m.values().begin(), m.values().end());
    });
    return flat;
  }

  void assign(std::span<const T> flat) {
    if (flat.size() != parameter_count()) {
      throw DimensionError("TrnParams::assign: expected " + std::to_string(parameter_count()) +
                           " values, got " + std::to_string(flat.size()));
    }
    std::size_t offset = 0;
    for_each([&](const char*, Matrix<T>& m) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), m.size(),
                  m.values().begin());
      offset += m.size();
    });
  }

  template <typename U>
  TrnParams<U> cast() const {
    TrnParams<U> out;
    out.fusion_weight = fusion_weight.template cast<U>();
    out.fusion_bias = fusion_bias.template cast<U>();
    out.embed_weight = embed_weight.template cast<U>();
    out.embed_bias = embed_bias.template cast<U>();
    out.decoder = decoder.template cast<U>();
    out.decoder_cls_weight = decoder_cls_weight.template cast<U>();
    out.decoder_cls_bias = decoder_cls_bias.template cast<U>();
    out.decoder_feat_weight = decoder_feat_weight.template cast<U>();
    out.decoder_feat_bias = decoder_feat_bias.template cast<U>();
    out.encoder = encoder.template cast<U>();
    out.encoder_cls_weight = encoder_cls_weight.template cast<U>();
    out.encoder_cls_bias = encoder_cls_bias.template cast<U>();
    return out;
  }

  /// Throws DimensionError unless every tensor matches the config's shapes.
  void check_shapes(const TrnConfig& config) const {
    const TrnParams expected = zeros(config);
    std::vector<std::pair<std::string, std::string>> mismatches;
    std::vector<std::string> have;
    for_each([&have](const char*, const Matrix<T>& m) { have.push_back(m.shape()); });
    std::size_t idx = 0;
    expected.for_each([&](const char* name, const Matrix<T>& m) {
      if (have[idx++] != m.shape()) mismatches.emplace_back(name, m.shape());
    });
    if (!mismatches.empty()) {
      throw DimensionError("parameter " + mismatches.front().first + " expected shape " +
                           mismatches.front().second);
    }
  }
};

template <typename T>
struct TrnState {
  Vector<T> h;
  Vector<T> c;

  static TrnState zeros(std::size_t hidden) { return {Vector<T>(hidden), Vector<T>(hidden)}; }
  friend bool operator==(const TrnState&, const TrnState&) = default;
};

template <typename T>
struct DetectionOutput {
  Vector<T> present;
  std::vector<Vector<T>> anticipated;
  std::vector<Vector<T>> predicted_features;

  friend bool operator==(const DetectionOutput&, const DetectionOutput&) = default;
};

namespace detail {

template <typename T>
void require_stream(std::span<const T> s, std::size_t dim, const char* name) {
  if (s.empty()) throw StreamError(std::string("missing required ") + name + " stream");
  if (s.size() != dim) {
    shape_mismatch("fuse", std::string(name) + vec_shape(s.size()),
                   "config" + vec_shape(dim));
  }
}

template <typename T>
void reject_stream(std::span<const T> s, const char* name, FusionVariant v) {
  if (!s.empty()) {
    throw StreamError(std::string(to_string(v)) + " does not take a " + name + " stream");
  }
}

}  // namespace detail

/// Validates the streams of one chunk against the fusion variant and returns
/// them concatenated: appearance | pose | motion for FUSED_TWO_STREAM,
/// appearance | motion for TWO_STREAM, appearance alone for ONE_STREAM.
template <typename T>
Vector<T> concat_streams(const TrnConfig& config, const ChunkInput<T>& chunk) {
  detail::require_stream(chunk.appearance, config.appearance_dim, "appearance");
  Vector<T> out(chunk.appearance.begin(), chunk.appearance.end());
  switch (config.fusion) {
    case FusionVariant::one_stream:
      detail::reject_stream(chunk.motion, "motion", config.fusion);
      detail::reject_stream(chunk.pose, "pose", config.fusion);
      break;
    case FusionVariant::two_stream:
      detail::require_stream(chunk.motion, config.motion_dim, "motion");
      detail::reject_stream(chunk.pose, "pose", config.fusion);
      out.insert(out.end(), chunk.motion.begin(), chunk.motion.end());
      break;
    case FusionVariant::fused_two_stream:
      detail::require_stream(chunk.pose, config.pose_dim, "pose");
      detail::require_stream(chunk.motion, config.motion_dim, "motion");
      out.insert(out.end(), chunk.pose.begin(), chunk.pose.end());
      out.insert(out.end(), chunk.motion.begin(), chunk.motion.end());
      break;
  }
  return out;
}

/// Model input for one chunk. ONE_STREAM passes the raw stream through; the
/// two-stream variants apply ReLU(W_f concat + b_f).
template <typename T>
Vector<T> fuse(const TrnConfig& config, const TrnParams<T>& params, const ChunkInput<T>& chunk) {
  Vector<T> concat = concat_streams(config, chunk);
  if (config.fusion == FusionVariant::one_stream) return concat;
  return relu<T>(linear(params.fusion_weight, params.fusion_bias.values(),
                        std::span<const T>(concat)));
}

template <typename T>
Vector<T> embed(const TrnParams<T>& params, std::span<const T> fused) {
  return relu<T>(linear(params.embed_weight, params.embed_bias.values(), fused));
}

template <typename T>
struct DecoderRollout {
  std::vector<LstmStep<T>> steps;
  std::vector<Vector<T>> logits;
  std::vector<Vector<T>> features;

  std::vector<Vector<T>> hiddens() const {
    std::vector<Vector<T>> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.h);
    return out;
  }
};

/// Runs the temporal decoder for `steps` steps from (h0, c0). Step 1 consumes
/// the embedded input; each later step consumes the previous step's predicted
/// feature, ReLU(W_p h + b_p).
template <typename T>
DecoderRollout<T> decoder_rollout(const TrnParams<T>& params, std::span<const T> h0,
                                  std::span<const T> c0, std::span<const T> x_embed,
                                  std::size_t steps) {
  if (steps < 1) throw ConfigError("decoder_rollout: steps must be >= 1");
  DecoderRollout<T> out;
  out.steps.reserve(steps);
  out.logits.reserve(steps);
  out.features.reserve(steps);
  std::span<const T> input = x_embed;
  std::span<const T> h = h0;
  std::span<const T> c = c0;
  for (std::size_t i = 0; i < steps; ++i) {
    out.steps.push_back(lstm_step(params.decoder, input, h, c));
    const auto& step = out.steps.back();
    out.logits.push_back(linear(params.decoder_cls_weight, params.decoder_cls_bias.values(),
                                std::span<const T>(step.h)));
    out.features.push_back(relu<T>(linear(params.decoder_feat_weight,
                                          params.decoder_feat_bias.values(),
                                          std::span<const T>(step.h))));
    input = out.features.back();
    h = step.h;
    c = step.c;
  }
  return out;
}

/// Elementwise mean of the decoder hidden states.
template <typename T>
Vector<T> future_gate(std::span<const Vector<T>> hiddens) {
  if (hiddens.empty()) throw DimensionError("future_gate: no decoder hidden states");
  Vector<T> out(hiddens.front().size(), T{0});
  for (const auto& h : hiddens) {
    if (h.size() != out.size()) {
      detail::shape_mismatch("future_gate", detail::vec_shape(out.size()),
                             detail::vec_shape(h.size()));
    }
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += h[k];
  }
  const T scale = T{1} / static_cast<T>(hiddens.size());
  for (auto& v : out) v *= scale;
  return out;
}

template <typename T>
Vector<T> future_gate(const DecoderRollout<T>& rollout) {
  if (rollout.steps.empty()) throw DimensionError("future_gate: no decoder hidden states");
  const std::size_t hidden = rollout.steps.front().h.size();
  Vector<T> out(hidden, T{0});
  for (const auto& s : rollout.steps) {
    for (std::size_t k = 0; k < hidden; ++k) out[k] += s.h[k];
  }
  const T scale = T{1} / static_cast<T>(rollout.steps.size());
  for (auto& v : out) v *= scale;
  return out;
}

template <typename T>
struct EncoderResult {
  TrnState<T> state;
  Vector<T> logits;
  LstmStep<T> lstm;
};

/// One encoder step on concat(embedded input, future context).
template <typename T>
EncoderResult<T> encoder_step(const TrnParams<T>& params, std::span<const T> fused_embed,
                              std::span<const T> future_ctx, const TrnState<T>& state) {
  const std::size_t hidden = params.encoder.hidden_size();
  if (fused_embed.size() != hidden || future_ctx.size() != hidden) {
    detail::shape_mismatch("encoder_step", "hidden" + detail::vec_shape(hidden),
                           "input" + detail::vec_shape(fused_embed.size()) + " future" +
                               detail::vec_shape(future_ctx.size()));
  }
  Vector<T> x(fused_embed.begin(), fused_embed.end());
  x.insert(x.end(), future_ctx.begin(), future_ctx.end());
  EncoderResult<T> out;
  out.lstm = lstm_step(params.encoder, std::span<const T>(x), std::span<const T>(state.h),
                       std::span<const T>(state.c));
  out.state = {out.lstm.h, out.lstm.c};
  out.logits = linear(params.encoder_cls_weight, params.encoder_cls_bias.values(),
                      std::span<const T>(out.lstm.h));
  return out;
}

/// Everything computed for one chunk, kept for the backward pass.
template <typename T>
struct ChunkTrace {
  Vector<T> concat;
  Vector<T> fused;
  Vector<T> embedded;
  DecoderRollout<T> rollout;
  Vector<T> future;
  EncoderResult<T> encoder;

  DetectionOutput<T> output() const {
    DetectionOutput<T> out;
    out.present = softmax<T>(encoder.logits);
    out.anticipated.reserve(rollout.logits.size());
    for (const auto& z : rollout.logits) out.anticipated.push_back(softmax<T>(z));
    out.predicted_features = rollout.features;
    return out;
  }
};

/// fuse -> embed -> decoder rollout from the current encoder state -> future
/// gate -> encoder step.
template <typename T>
ChunkTrace<T> forward_chunk(const TrnParams<T>& params, const TrnConfig& config,
                            const ChunkInput<T>& chunk, const TrnState<T>& state) {
  ChunkTrace<T> trace;
  trace.concat = concat_streams(config, chunk);
  if (config.fusion == FusionVariant::one_stream) {
    trace.fused = trace.concat;
  } else {
    trace.fused = relu<T>(linear(params.fusion_weight, params.fusion_bias.values(),
                                 std::span<const T>(trace.concat)));
  }
  trace.embedded = embed(params, std::span<const T>(trace.fused));
  trace.rollout = decoder_rollout(params, std::span<const T>(state.h), std::span<const T>(state.c),
                                  std::span<const T>(trace.embedded), config.decoder_steps);
  trace.future = future_gate(trace.rollout);
  trace.encoder = encoder_step(params, std::span<const T>(trace.embedded),
                               std::span<const T>(trace.future), state);
  return trace;
}

template <typename T>
struct ForwardResult {
  std::vector<DetectionOutput<T>> outputs;
  TrnState<T> final_state;
};

template <typename T>
struct TracedForward {
  std::vector<ChunkTrace<T>> traces;
  TrnState<T> final_state;
};

template <typename T>
TracedForward<T> trn_forward_traced(const TrnParams<T>& params, const TrnConfig& config,
                                    const Sequence<T>& sequence, const TrnState<T>& state0) {
  TracedForward<T> out;
  out.final_state = state0;
  const std::size_t length = sequence.length();
  out.traces.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    out.traces.push_back(forward_chunk(params, config, sequence.chunk(t), out.final_state));
    out.final_state = out.traces.back().encoder.state;
  }
  return out;
}

/// Batch forward over a whole sequence; returns one output per chunk and the
/// state to continue from.
template <typename T>
ForwardResult<T> trn_forward(const TrnParams<T>& params, const TrnConfig& config,
                             const Sequence<T>& sequence, const TrnState<T>& state0) {
  ForwardResult<T> out;
  out.final_state = state0;
  const std::size_t length = sequence.length();
  out.outputs.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    auto trace = forward_chunk(params, config, sequence.chunk(t), out.final_state);
    out.outputs.push_back(trace.output());
    out.final_state = std::move(trace.encoder.state);
  }
  return out;
}

}  // namespace trn
