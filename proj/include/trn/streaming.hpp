#pragma once

#include <trn/model.hpp>

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>

namespace trn {

/// Raised by push_chunk on a detector whose previous push failed.
class DetectorPoisoned : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Chunk-at-a-time detector. Holds the recurrent state of one stream; the
/// parameters are shared and never modified.
template <typename T>
class OnlineDetector {
 public:
  OnlineDetector(TrnConfig config, std::shared_ptr<const TrnParams<T>> params)
      : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    if (!params_) throw std::invalid_argument("OnlineDetector: null parameters");
    params_->check_shapes(config_);
    state_ = TrnState<T>::zeros(config_.hidden_size);
  }

  /// Consumes one chunk and returns its present and anticipated
  /// distributions. On failure the detector stays poisoned until reset().
  DetectionOutput<T> push_chunk(const ChunkInput<T>& chunk) {
    if (poisoned_) {
      throw DetectorPoisoned("detector is poisoned by a failed push; call reset()");
    }
    try {
      auto trace = forward_chunk(*params_, config_, chunk, state_);
      state_ = std::move(trace.encoder.state);
      ++chunks_;
      return trace.output();
    } catch (...) {
      poisoned_ = true;
      throw;
    }
  }

  void reset() {
    state_ = TrnState<T>::zeros(config_.hidden_size);
    chunks_ = 0;
    poisoned_ = false;
  }

  /// Seconds into the future covered by decoder step i (1-based).
  double horizon_seconds(std::size_t step) const {
    if (step < 1 || step > config_.decoder_steps) {
      throw std::out_of_range("horizon step " + std::to_string(step) + " outside [1, " +
                              std::to_string(config_.decoder_steps) + "]");
    }
    return static_cast<double>(step * config_.chunk_size) / config_.fps;
  }

  std::size_t chunks_seen() const noexcept { return chunks_; }
  bool poisoned() const noexcept { return poisoned_; }
  const TrnState<T>& state() const noexcept { return state_; }
  const TrnConfig& config() const noexcept { return config_; }

 private:
  TrnConfig config_;
  std::shared_ptr<const TrnParams<T>> params_;
  TrnState<T> state_;
  std::size_t chunks_ = 0;
  bool poisoned_ = false;
};

}  // namespace trn
