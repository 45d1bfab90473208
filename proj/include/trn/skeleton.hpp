#pragma once

// 2D pose features: actor selection, pelvis-centred scale normalization and
// the 134-dimensional per-chunk pose vector, plus reading per-frame keypoint
// documents in the OpenPose JSON layout.

#include <trn/numeric.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trn::skeleton {

class PoseFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kBodyKeypoints = 25;
inline constexpr std::size_t kHandKeypoints = 21;
inline constexpr std::size_t kKeypoints = kBodyKeypoints + 2 * kHandKeypoints;  // 67
inline constexpr std::size_t kFeatureDim = 2 * kKeypoints;                       // 134

// BODY_25 indices.
inline constexpr std::size_t kNose = 0;
inline constexpr std::size_t kRShoulder = 2;
inline constexpr std::size_t kLShoulder = 5;
inline constexpr std::size_t kMidHip = 8;

inline constexpr double kMinScale = 1e-6;

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;

  bool detected() const noexcept { return confidence > 0.0; }
};

/// 25 body/foot keypoints, then 21 left-hand and 21 right-hand keypoints.
struct Person {
  std::array<Keypoint, kKeypoints> keypoints{};

  double confidence_sum() const noexcept {
    double s = 0.0;
    for (const auto& k : keypoints) s += k.confidence;
    return s;
  }
};

struct PoseFrame {
  std::vector<Person> people;
};

using PoseFeature = std::array<double, kFeatureDim>;

/// The person with the largest confidence sum; the first listed wins ties.
inline const Person* select_actor(const PoseFrame& frame) {
  const Person* best = nullptr;
  double best_sum = 0.0;
  for (const auto& p : frame.people) {
    const double s = p.confidence_sum();
    if (best == nullptr || s > best_sum) {
      best = &p;
      best_sum = s;
    }
  }
  return best;
}

/// Centres detected keypoints on MidHip and divides by the MidHip to
/// shoulder-midpoint distance. Undetected keypoints map to (0, 0). Returns
/// nullopt for a degenerate pose: MidHip missing, both shoulders missing, or
/// a scale below 1e-6.
inline std::optional<PoseFeature> normalize_pose(const Person& person) {
  const auto& hip = person.keypoints[kMidHip];
  const auto& rs = person.keypoints[kRShoulder];
  const auto& ls = person.keypoints[kLShoulder];
  if (!hip.detected() || (!rs.detected() && !ls.detected())) return std::nullopt;
  double sx = 0.0;
  double sy = 0.0;
  if (rs.detected() && ls.detected()) {
    sx = 0.5 * (rs.x + ls.x);
    sy = 0.5 * (rs.y + ls.y);
  } else {
    const auto& one = rs.detected() ? rs : ls;
    sx = one.x;
    sy = one.y;
  }
  const double scale = std::hypot(sx - hip.x, sy - hip.y);
  if (!(scale >= kMinScale)) return std::nullopt;
  PoseFeature out{};
  for (std::size_t k = 0; k < kKeypoints; ++k) {
    const auto& kp = person.keypoints[k];
    if (!kp.detected()) continue;
    out[2 * k] = (kp.x - hip.x) / scale;
    out[2 * k + 1] = (kp.y - hip.y) / scale;
  }
  return out;
}

/// Normalized pose of the selected actor, or nullopt if there is no actor or
/// the actor's pose is degenerate.
inline std::optional<PoseFeature> frame_feature(const PoseFrame& frame) {
  const Person* actor = select_actor(frame);
  if (actor == nullptr) return std::nullopt;
  return normalize_pose(*actor);
}

/// Feature of the chunk's center frame (index size/2). If that frame has no
/// valid pose, the nearest valid frame is used, the earlier one on equal
/// distance; zeros if the chunk has none.
inline PoseFeature pose_chunk_feature(std::span<const PoseFrame> frames) {
  if (frames.empty()) return PoseFeature{};
  const auto n = static_cast<std::ptrdiff_t>(frames.size());
  const std::ptrdiff_t center = n / 2;
  for (std::ptrdiff_t d = 0; d < n; ++d) {
    for (std::ptrdiff_t idx : {center - d, center + d}) {
      if (idx < 0 || idx >= n) continue;
      if (auto f = frame_feature(frames[static_cast<std::size_t>(idx)])) return *f;
      if (d == 0) break;
    }
  }
  return PoseFeature{};
}

/// One pose feature row per complete chunk of `chunk_size` frames. With
/// carry_forward, a chunk without any valid pose repeats the last valid row
/// instead of zeros.
inline Matrix<double> pose_sequence_features(std::span<const PoseFrame> frames,
                                             std::size_t chunk_size, bool carry_forward = false) {
  if (chunk_size == 0) throw std::invalid_argument("chunk_size must be >= 1");
  const std::size_t chunks = frames.size() / chunk_size;
  Matrix<double> out(chunks, kFeatureDim);
  std::optional<PoseFeature> last_valid;
  for (std::size_t t = 0; t < chunks; ++t) {
    auto chunk = frames.subspan(t * chunk_size, chunk_size);
    PoseFeature f = pose_chunk_feature(chunk);
    const bool valid = std::any_of(chunk.begin(), chunk.end(),
                                   [](const PoseFrame& fr) { return frame_feature(fr).has_value(); });
    if (valid) {
      last_valid = f;
    } else if (carry_forward && last_valid) {
      f = *last_valid;
    }
    std::copy(f.begin(), f.end(), out.row(t).begin());
  }
  return out;
}

namespace detail {

inline void read_keypoint_block(const nlohmann::json& person, const char* key, std::size_t count,
                                Keypoint* dest) {
  auto it = person.find(key);
  if (it == person.end() || it->is_null()) return;
  if (!it->is_array()) throw PoseFormatError(std::string(key) + " is not an array");
  if (it->empty()) return;
  if (it->size() != 3 * count) {
    throw PoseFormatError(std::string(key) + " has " + std::to_string(it->size()) +
                          " numbers, expected " + std::to_string(3 * count));
  }
  for (std::size_t k = 0; k < count; ++k) {
    dest[k].x = (*it)[3 * k].get<double>();
    dest[k].y = (*it)[3 * k + 1].get<double>();
    dest[k].confidence = (*it)[3 * k + 2].get<double>();
    if (!std::isfinite(dest[k].x) || !std::isfinite(dest[k].y) ||
        !std::isfinite(dest[k].confidence)) {
      throw PoseFormatError(std::string(key) + ": non-finite keypoint value");
    }
  }
}

inline nlohmann::json keypoint_block(const Keypoint* src, std::size_t count) {
  auto arr = nlohmann::json::array();
  for (std::size_t k = 0; k < count; ++k) {
    arr.push_back(src[k].x);
    arr.push_back(src[k].y);
    arr.push_back(src[k].confidence);
  }
  return arr;
}

}  // namespace detail

/// Parses one per-frame document: {"people": [{"pose_keypoints_2d": [75],
/// "hand_left_keypoints_2d": [63], "hand_right_keypoints_2d": [63]}, ...]}.
/// Missing hand arrays read as undetected keypoints.
inline PoseFrame parse_openpose_frame(const nlohmann::json& doc) {
  PoseFrame frame;
  try {
    const auto& people = doc.at("people");
    for (const auto& p : people) {
      Person person;
      detail::read_keypoint_block(p, "pose_keypoints_2d", kBodyKeypoints, person.keypoints.data());
      detail::read_keypoint_block(p, "hand_left_keypoints_2d", kHandKeypoints,
                                  person.keypoints.data() + kBodyKeypoints);
      detail::read_keypoint_block(p, "hand_right_keypoints_2d", kHandKeypoints,
                                  person.keypoints.data() + kBodyKeypoints + kHandKeypoints);
      frame.people.push_back(person);
    }
  } catch (const nlohmann::json::exception& e) {
    throw PoseFormatError(std::string("keypoint document: ") + e.what());
  }
  return frame;
}

inline nlohmann::json to_openpose_json(const PoseFrame& frame) {
  nlohmann::json doc = {{"version", 1.3}, {"people", nlohmann::json::array()}};
  for (const auto& p : frame.people) {
    doc["people"].push_back(
        {{"pose_keypoints_2d", detail::keypoint_block(p.keypoints.data(), kBodyKeypoints)},
         {"hand_left_keypoints_2d",
          detail::keypoint_block(p.keypoints.data() + kBodyKeypoints, kHandKeypoints)},
         {"hand_right_keypoints_2d",
          detail::keypoint_block(p.keypoints.data() + kBodyKeypoints + kHandKeypoints,
                                 kHandKeypoints)}});
  }
  return doc;
}

/// `<video_id>_<frame index, 12 digits>_keypoints.json`
inline std::string keypoint_filename(const std::string& video_id, std::size_t frame) {
  char digits[32];
  std::snprintf(digits, sizeof digits, "%012zu", frame);
  return video_id + "_" + digits + "_keypoints.json";
}

inline PoseFrame read_openpose_frame(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open keypoint file '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw PoseFormatError(path.string() + ": " + e.what());
  }
  return parse_openpose_frame(doc);
}

/// All frames of one video found in `dir`, ordered by frame index. Frame
/// indices with no file become frames without people.
inline std::vector<PoseFrame> read_openpose_video(const std::filesystem::path& dir,
                                                  const std::string& video_id) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::ios_base::failure("keypoint directory '" + dir.string() + "' does not exist");
  }
  const std::regex pattern("^(.*)_([0-9]{12})_keypoints\\.json$");
  std::map<std::size_t, std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern) && m[1].str() == video_id) {
      files.emplace(std::stoull(m[2].str()), entry.path());
    }
  }
  std::vector<PoseFrame> frames;
  if (files.empty()) return frames;
  frames.resize(files.rbegin()->first + 1);
  for (const auto& [index, path] : files) frames[index] = read_openpose_frame(path);
  return frames;
}

}  // namespace trn::skeleton
