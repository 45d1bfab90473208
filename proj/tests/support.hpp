#pragma once

// Shared fixtures: random configs, parameters and sequences, plus a scratch
// directory that cleans up after itself.

#include <trn/trn.hpp>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace trn::testing {

inline TrnConfig tiny_config(FusionVariant fusion, std::size_t hidden = 4, std::size_t steps = 2,
                             std::size_t actions = 2) {
  TrnConfig c;
  c.fusion = fusion;
  c.hidden_size = hidden;
  c.decoder_steps = steps;
  c.num_actions = actions;
  c.appearance_dim = 5;
  c.motion_dim = 3;
  c.pose_dim = 4;
  return c;
}

inline Matrix<double> random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                    double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Matrix<double> m(rows, cols);
  for (auto& v : m.values()) v = g(rng);
  return m;
}

inline Sequence<double> random_sequence(std::mt19937_64& rng, const TrnConfig& c, std::size_t length) {
  Sequence<double> s;
  s.appearance = random_matrix(rng, length, c.appearance_dim);
  if (c.uses_motion()) s.motion = random_matrix(rng, length, c.motion_dim);
  if (c.uses_pose()) s.pose = random_matrix(rng, length, c.pose_dim);
  return s;
}

inline std::vector<std::size_t> random_labels(std::mt19937_64& rng, const TrnConfig& c, std::size_t length) {
  std::uniform_int_distribution<std::size_t> pick(0, c.classes() - 1);
  std::vector<std::size_t> out(length);
  for (auto& l : out) l = pick(rng);
  return out;
}

/// Parameters with a wider spread than the default init so that gates and
/// ReLUs land in varied regimes.
inline TrnParams<double> random_params(std::mt19937_64& rng, const TrnConfig& c, double sd = 0.5) {
  auto p = TrnParams<double>::zeros(c);
  p.for_each([&](const char*, Matrix<double>& m) { m = random_matrix(rng, m.rows(), m.cols(), sd); });
  return p;
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("trn_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace trn::testing
