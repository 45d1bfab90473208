#pragma once

// Binary chunk-feature files, the dataset manifest, and a seeded synthetic
// dataset generator.

#include <trn/labels.hpp>
#include <trn/model.hpp>
#include <trn/numeric.hpp>
#include <trn/skeleton.hpp>
#include <trn/training.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trn {

// ---------------------------------------------------------------------------
// Feature files: "TRNF", u32 version, u32 chunks T, u32 dim D, then T*D
// float32 values, all little-endian, row-major.

class FeatureFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public FeatureFormatError {
 public:
  using FeatureFormatError::FeatureFormatError;
};
class UnsupportedVersionError : public FeatureFormatError {
 public:
  using FeatureFormatError::FeatureFormatError;
};
class InvalidHeaderError : public FeatureFormatError {
 public:
  using FeatureFormatError::FeatureFormatError;
};
class TruncatedPayloadError : public FeatureFormatError {
 public:
  using FeatureFormatError::FeatureFormatError;
};
class TrailingDataError : public FeatureFormatError {
 public:
  using FeatureFormatError::FeatureFormatError;
};
class NonFiniteFeatureError : public FeatureFormatError {
 public:
  using FeatureFormatError::FeatureFormatError;
};

inline constexpr std::array<char, 4> kFeatureMagic{'T', 'R', 'N', 'F'};
inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 16;

struct FeatureHeader {
  std::uint32_t version = kFeatureFormatVersion;
  std::uint32_t chunks = 0;
  std::uint32_t dim = 0;

  std::uint64_t payload_bytes() const noexcept {
    return std::uint64_t{chunks} * std::uint64_t{dim} * 4u;
  }
};

namespace detail {

inline std::uint32_t load_u32(std::span<const std::byte> b, std::size_t at) {
  return std::to_integer<std::uint32_t>(b[at]) | (std::to_integer<std::uint32_t>(b[at + 1]) << 8) |
         (std::to_integer<std::uint32_t>(b[at + 2]) << 16) |
         (std::to_integer<std::uint32_t>(b[at + 3]) << 24);
}

inline void store_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::byte>((v >> s) & 0xffu));
}

inline std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw std::ios_base::failure("cannot read '" + path.string() + "'");
  }
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot create '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::ios_base::failure("cannot write '" + path.string() + "'");
}

}  // namespace detail

/// Validates magic, version and dimensions of a feature header. Checks run
/// in a fixed order: magic (over the bytes present), header length, version,
/// dimension.
inline FeatureHeader parse_feature_header(std::span<const std::byte> bytes) {
  for (std::size_t i = 0; i < std::min(bytes.size(), kFeatureMagic.size()); ++i) {
    if (std::to_integer<char>(bytes[i]) != kFeatureMagic[i]) {
      throw BadMagicError("feature file does not start with TRNF");
    }
  }
  if (bytes.size() < kFeatureHeaderBytes) throw TruncatedPayloadError("feature file header truncated");
  FeatureHeader h{detail::load_u32(bytes, 4), detail::load_u32(bytes, 8), detail::load_u32(bytes, 12)};
  if (h.version != kFeatureFormatVersion) {
    throw UnsupportedVersionError("unsupported feature format version " + std::to_string(h.version));
  }
  if (h.dim == 0) throw InvalidHeaderError("feature dimension must be positive");
  return h;
}

inline Matrix<float> parse_features(std::span<const std::byte> bytes) {
  const FeatureHeader h = parse_feature_header(bytes);
  const std::uint64_t available = bytes.size() - kFeatureHeaderBytes;
  if (available < h.payload_bytes()) {
    throw TruncatedPayloadError("feature payload truncated: header declares " +
                                std::to_string(h.chunks) + "x" + std::to_string(h.dim) +
                                " values, file holds " + std::to_string(available) + " bytes");
  }
  if (available > h.payload_bytes()) {
    throw TrailingDataError("feature file has " + std::to_string(available - h.payload_bytes()) +
                            " bytes beyond the declared payload");
  }
  Matrix<float> out(h.chunks, h.dim);
  auto values = out.values();
  for (std::size_t k = 0; k < values.size(); ++k) {
    const float v = std::bit_cast<float>(detail::load_u32(bytes, kFeatureHeaderBytes + 4 * k));
    if (!std::isfinite(v)) {
      throw NonFiniteFeatureError("non-finite feature at chunk " + std::to_string(k / h.dim) +
                                  ", component " + std::to_string(k % h.dim));
    }
    values[k] = v;
  }
  return out;
}

inline std::vector<std::byte> serialize_features(const Matrix<float>& data) {
  if (data.cols() == 0) throw InvalidHeaderError("feature dimension must be positive");
  if (data.rows() > UINT32_MAX || data.cols() > UINT32_MAX) {
    throw InvalidHeaderError("feature matrix too large for the format");
  }
  check_finite(data.values(), "write_features");
  std::vector<std::byte> out;
  out.reserve(kFeatureHeaderBytes + 4 * data.size());
  for (char c : kFeatureMagic) out.push_back(static_cast<std::byte>(c));
  detail::store_u32(out, kFeatureFormatVersion);
  detail::store_u32(out, static_cast<std::uint32_t>(data.rows()));
  detail::store_u32(out, static_cast<std::uint32_t>(data.cols()));
  for (float v : data.values()) detail::store_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Matrix<float> read_features(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  try {
    return parse_features(bytes);
  } catch (const FeatureFormatError& e) {
    // Re-throw with the path while keeping the concrete error class.
    const std::string msg = path.string() + ": " + e.what();
    if (dynamic_cast<const BadMagicError*>(&e)) throw BadMagicError(msg);
    if (dynamic_cast<const UnsupportedVersionError*>(&e)) throw UnsupportedVersionError(msg);
    if (dynamic_cast<const InvalidHeaderError*>(&e)) throw InvalidHeaderError(msg);
    if (dynamic_cast<const TruncatedPayloadError*>(&e)) throw TruncatedPayloadError(msg);
    if (dynamic_cast<const TrailingDataError*>(&e)) throw TrailingDataError(msg);
    if (dynamic_cast<const NonFiniteFeatureError*>(&e)) throw NonFiniteFeatureError(msg);
    throw;
  }
}

inline FeatureHeader read_feature_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open '" + path.string() + "'");
  std::array<std::byte, kFeatureHeaderBytes> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  return parse_feature_header(std::span<const std::byte>(head.data(), got));
}

inline void write_features(const std::filesystem::path& path, const Matrix<float>& data) {
  detail::write_file_bytes(path, serialize_features(data));
}

// ---------------------------------------------------------------------------
// Manifest

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<const char*, 3> kStreamRoles{"appearance", "motion", "pose"};

struct StreamRef {
  std::filesystem::path path;
  std::size_t dim = 0;
};

struct VideoEntry {
  std::string id;
  double fps = 30.0;
  std::size_t chunk_size = 6;
  std::string split = "train";
  std::filesystem::path annotations;
  std::map<std::string, StreamRef> streams;
};

/// Relative paths inside the manifest are resolved against its directory.
struct Manifest {
  std::filesystem::path classmap;
  std::vector<VideoEntry> videos;

  std::vector<const VideoEntry*> split(const std::string& tag) const {
    std::vector<const VideoEntry*> out;
    for (const auto& v : videos) {
      if (tag.empty() || v.split == tag) out.push_back(&v);
    }
    return out;
  }

  nlohmann::json to_json(const std::filesystem::path& base) const {
    auto rel = [&base](const std::filesystem::path& p) {
      return base.empty() ? p.generic_string() : p.lexically_relative(base).generic_string();
    };
    nlohmann::json doc = {{"version", 1}, {"classmap", rel(classmap)}, {"videos", nlohmann::json::array()}};
    for (const auto& v : videos) {
      nlohmann::json streams = nlohmann::json::object();
      for (const auto& [role, ref] : v.streams) streams[role] = {{"path", rel(ref.path)}, {"dim", ref.dim}};
      doc["videos"].push_back({{"id", v.id},
                               {"fps", v.fps},
                               {"chunk_size", v.chunk_size},
                               {"split", v.split},
                               {"annotations", rel(v.annotations)},
                               {"streams", streams}});
    }
    return doc;
  }

  static Manifest from_json(const nlohmann::json& doc, const std::filesystem::path& base) {
    auto resolve = [&base](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() ? path : base / path;
    };
    Manifest m;
    try {
      m.classmap = resolve(doc.at("classmap").get<std::string>());
      for (const auto& v : doc.at("videos")) {
        VideoEntry e;
        e.id = v.at("id").get<std::string>();
        e.fps = v.value("fps", 30.0);
        e.chunk_size = v.value("chunk_size", std::size_t{6});
        e.split = v.value("split", std::string("train"));
        e.annotations = resolve(v.value("annotations", std::string("annotations.tsv")));
        for (const auto& [role, ref] : v.at("streams").items()) {
          if (std::find_if(kStreamRoles.begin(), kStreamRoles.end(),
                           [&role](const char* r) { return role == r; }) == kStreamRoles.end()) {
            throw ManifestError("video '" + e.id + "': unknown stream role '" + role + "'");
          }
          e.streams[role] = {resolve(ref.at("path").get<std::string>()), ref.at("dim").get<std::size_t>()};
        }
        if (!(e.fps > 0.0) || e.chunk_size == 0) {
          throw ManifestError("video '" + e.id + "': fps and chunk_size must be positive");
        }
        m.videos.push_back(std::move(e));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError(std::string("manifest: ") + e.what());
    }
    return m;
  }

  static Manifest read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure("cannot open manifest '" + path.string() + "'");
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError(path.string() + ": " + e.what());
    }
    return from_json(doc, path.parent_path());
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::ios_base::failure("cannot create manifest '" + path.string() + "'");
    out << to_json(path.parent_path()).dump(2) << '\n';
  }
};

struct VideoCheck {
  std::size_t chunks = 0;
  std::vector<std::string> warnings;
};

/// Checks that every stream file exists, that its header dimension matches
/// the declared one, and that chunk counts agree. A difference of one chunk
/// is tolerated (the longer streams are truncated with a warning); more is an
/// error.
inline VideoCheck check_video(const VideoEntry& video) {
  VideoCheck out;
  std::size_t lo = SIZE_MAX;
  std::size_t hi = 0;
  for (const auto& [role, ref] : video.streams) {
    if (!std::filesystem::exists(ref.path)) {
      throw std::ios_base::failure("video '" + video.id + "': missing " + role + " file '" +
                                   ref.path.string() + "'");
    }
    const auto h = read_feature_header(ref.path);
    if (h.dim != ref.dim) {
      throw ManifestError("video '" + video.id + "': " + role + " file has dimension " +
                          std::to_string(h.dim) + ", manifest declares " + std::to_string(ref.dim));
    }
    lo = std::min<std::size_t>(lo, h.chunks);
    hi = std::max<std::size_t>(hi, h.chunks);
  }
  if (video.streams.empty()) throw ManifestError("video '" + video.id + "' has no streams");
  if (hi - lo > 1) {
    throw ManifestError("video '" + video.id + "': stream chunk counts differ by " +
                        std::to_string(hi - lo));
  }
  if (hi != lo) {
    out.warnings.push_back("video '" + video.id + "': streams differ by one chunk, truncating to " +
                           std::to_string(lo));
  }
  out.chunks = lo;
  return out;
}

/// Loads the streams the fusion variant needs, widened to double and
/// truncated to a common chunk count.
inline Sequence<double> load_video_features(const VideoEntry& video, FusionVariant fusion,
                                            std::vector<std::string>* warnings = nullptr) {
  const VideoCheck check = check_video(video);
  if (warnings) warnings->insert(warnings->end(), check.warnings.begin(), check.warnings.end());
  auto load = [&](const char* role, bool needed) -> Matrix<double> {
    auto it = video.streams.find(role);
    if (!needed) return {};
    if (it == video.streams.end()) {
      throw ManifestError("video '" + video.id + "' lacks the " + role + " stream required by " +
                          std::string(to_string(fusion)));
    }
    Matrix<float> m = read_features(it->second.path);
    if (m.rows() != check.chunks) {
      m = Matrix<float>(check.chunks, m.cols(),
                        std::vector<float>(m.values().begin(),
                                           m.values().begin() + static_cast<std::ptrdiff_t>(check.chunks * m.cols())));
    }
    return m.cast<double>();
  };
  Sequence<double> seq;
  seq.appearance = load("appearance", true);
  seq.motion = load("motion", fusion != FusionVariant::one_stream);
  seq.pose = load("pose", fusion == FusionVariant::fused_two_stream);
  return seq;
}

/// Fills the stream dimensions, chunk size and fps of `config` from the
/// first video of the manifest.
inline void configure_from_manifest(TrnConfig& config, const Manifest& manifest) {
  if (manifest.videos.empty()) throw ManifestError("manifest lists no videos");
  const auto& v = manifest.videos.front();
  auto dim = [&v](const char* role) {
    auto it = v.streams.find(role);
    return it == v.streams.end() ? std::size_t{0} : it->second.dim;
  };
  config.appearance_dim = dim("appearance");
  config.motion_dim = dim("motion");
  if (dim("pose") != 0) config.pose_dim = dim("pose");
  config.chunk_size = v.chunk_size;
  config.fps = v.fps;
}

/// Features and chunk labels of every video with the given split tag.
inline std::vector<LabeledSequence> load_labeled_split(const Manifest& manifest, const std::string& split,
                                                       const ClassMap& classes, FusionVariant fusion,
                                                       std::vector<std::string>* warnings = nullptr) {
  std::map<std::filesystem::path, GroundTruth> annotations;
  std::vector<LabeledSequence> out;
  for (const VideoEntry* v : manifest.split(split)) {
    auto it = annotations.find(v->annotations);
    if (it == annotations.end()) {
      it = annotations.emplace(v->annotations, GroundTruth::read(v->annotations.string(), classes)).first;
    }
    LabeledSequence seq;
    seq.id = v->id;
    seq.features = load_video_features(*v, fusion, warnings);
    const auto own = it->second.for_video(v->id);
    auto labeling = chunk_labels(own, v->fps, v->chunk_size, seq.features.length());
    if (warnings) warnings->insert(warnings->end(), labeling.warnings.begin(), labeling.warnings.end());
    seq.labels = std::move(labeling.labels);
    out.push_back(std::move(seq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  std::size_t num_classes = 3;
  std::size_t appearance_dim = 16;
  std::size_t motion_dim = 16;
  bool pose = true;
  /// Noise standard deviation relative to the spread of the class means.
  double sigma_ratio = 0.5;
  double mean_segment_chunks = 8.0;
  double background_prior = 0.5;
  std::size_t train_videos = 200;
  std::size_t test_videos = 50;
  std::size_t video_chunks = 64;
  std::size_t chunk_size = 6;
  double fps = 30.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 1) throw ConfigError("synthetic: num_classes must be >= 1");
    if (appearance_dim < 1 || motion_dim < 1) throw ConfigError("synthetic: stream dims must be >= 1");
    if (!(sigma_ratio >= 0.0)) throw ConfigError("synthetic: sigma_ratio must be >= 0");
    if (!(mean_segment_chunks >= 1.0)) throw ConfigError("synthetic: mean_segment_chunks must be >= 1");
    if (!(background_prior >= 0.0 && background_prior <= 1.0)) {
      throw ConfigError("synthetic: background_prior must lie in [0, 1]");
    }
    if (train_videos + test_videos < 1) throw ConfigError("synthetic: need at least one video");
    if (video_chunks < 1 || chunk_size < 1 || !(fps > 0.0)) {
      throw ConfigError("synthetic: video_chunks, chunk_size and fps must be positive");
    }
  }
};

struct SyntheticVideo {
  std::string id;
  std::string split;
  std::vector<std::size_t> labels;
  Sequence<float> features;
  std::vector<Annotation> annotations;
};

struct SyntheticDataset {
  ClassMap classes;
  std::vector<SyntheticVideo> videos;
};

namespace detail {

// Canonical upright body in units of the hip-to-shoulder distance, image
// y pointing down. Indices follow BODY_25.
inline constexpr std::array<std::array<double, 2>, skeleton::kBodyKeypoints> kCanonicalBody{{
    {0.0, -1.45},   // nose
    {0.0, -1.0},    // neck
    {-0.45, -1.0},  // right shoulder
    {-0.6, -0.5},   // right elbow
    {-0.65, 0.0},   // right wrist
    {0.45, -1.0},   // left shoulder
    {0.6, -0.5},    // left elbow
    {0.65, 0.0},    // left wrist
    {0.0, 0.0},     // mid hip
    {-0.2, 0.0},    // right hip
    {-0.22, 0.8},   // right knee
    {-0.24, 1.6},   // right ankle
    {0.2, 0.0},     // left hip
    {0.22, 0.8},    // left knee
    {0.24, 1.6},    // left ankle
    {-0.07, -1.52}, // right eye
    {0.07, -1.52},  // left eye
    {-0.15, -1.48}, // right ear
    {0.15, -1.48},  // left ear
    {0.3, 1.7},     // left big toe
    {0.35, 1.68},   // left small toe
    {0.22, 1.65},   // left heel
    {-0.3, 1.7},    // right big toe
    {-0.35, 1.68},  // right small toe
    {-0.22, 1.65},  // right heel
}};

inline std::array<std::array<double, 2>, skeleton::kKeypoints> canonical_pose() {
  std::array<std::array<double, 2>, skeleton::kKeypoints> pose{};
  for (std::size_t k = 0; k < skeleton::kBodyKeypoints; ++k) pose[k] = kCanonicalBody[k];
  // Hands: a small fan of points around each wrist.
  for (int side = 0; side < 2; ++side) {
    const auto& wrist = kCanonicalBody[side == 0 ? 7 : 4];
    const double dir = side == 0 ? 1.0 : -1.0;
    for (std::size_t j = 0; j < skeleton::kHandKeypoints; ++j) {
      const double finger = static_cast<double>(j == 0 ? 0 : (j - 1) / 4);
      const double joint = static_cast<double>(j == 0 ? 0 : (j - 1) % 4 + 1);
      pose[skeleton::kBodyKeypoints + side * skeleton::kHandKeypoints + j] = {
          wrist[0] + dir * (0.02 * finger - 0.04), wrist[1] + 0.03 * joint};
    }
  }
  return pose;
}

}  // namespace detail

/// Segment-structured videos: alternating runs of geometric length, each run
/// background with probability background_prior and otherwise a uniformly
/// drawn action. Every class has a fixed random mean per stream; chunk
/// features are that mean plus Gaussian noise. Pose features come from
/// synthetic skeletons (class-specific templates under random camera
/// placement) passed through the pose normalizer.
inline SyntheticDataset synthesize(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t classes = spec.num_classes + 1;

  auto class_means = [&](std::size_t dim) {
    Matrix<double> means(classes, dim);
    for (auto& v : means.values()) v = gauss(rng);
    return means;
  };
  const Matrix<double> appearance_means = class_means(spec.appearance_dim);
  const Matrix<double> motion_means = class_means(spec.motion_dim);

  constexpr double kTemplateSpread = 0.25;
  const auto canonical = detail::canonical_pose();
  std::vector<std::array<std::array<double, 2>, skeleton::kKeypoints>> templates(classes, canonical);
  for (std::size_t c = 1; c < classes; ++c) {
    for (std::size_t k = 0; k < skeleton::kKeypoints; ++k) {
      if (k == skeleton::kMidHip) continue;
      templates[c][k][0] += kTemplateSpread * gauss(rng);
      templates[c][k][1] += kTemplateSpread * gauss(rng);
    }
  }

  SyntheticDataset out{ClassMap::with_actions(spec.num_classes), {}};
  std::geometric_distribution<std::size_t> run_length(1.0 / spec.mean_segment_chunks);
  std::uniform_int_distribution<std::size_t> pick_action(1, spec.num_classes);
  const std::size_t total = spec.train_videos + spec.test_videos;

  for (std::size_t n = 0; n < total; ++n) {
    SyntheticVideo video;
    char id[32];
    std::snprintf(id, sizeof id, "video_%04zu", n);
    video.id = id;
    video.split = n < spec.train_videos ? "train" : "test";

    // Segment structure.
    video.labels.reserve(spec.video_chunks);
    while (video.labels.size() < spec.video_chunks) {
      const std::size_t len = 1 + run_length(rng);
      const std::size_t label = unit(rng) < spec.background_prior ? 0 : pick_action(rng);
      for (std::size_t i = 0; i < len && video.labels.size() < spec.video_chunks; ++i) {
        video.labels.push_back(label);
      }
    }
    for (std::size_t t = 0; t < spec.video_chunks;) {
      std::size_t end = t;
      while (end < spec.video_chunks && video.labels[end] == video.labels[t]) ++end;
      if (video.labels[t] != 0) {
        video.annotations.push_back({video.id, video.labels[t],
                                     static_cast<double>(t * spec.chunk_size) / spec.fps,
                                     static_cast<double>(end * spec.chunk_size) / spec.fps, false});
      }
      t = end;
    }

    // Appearance and motion streams.
    auto stream = [&](const Matrix<double>& means) {
      Matrix<float> m(spec.video_chunks, means.cols());
      for (std::size_t t = 0; t < spec.video_chunks; ++t) {
        for (std::size_t d = 0; d < means.cols(); ++d) {
          m(t, d) = static_cast<float>(means(video.labels[t], d) + spec.sigma_ratio * gauss(rng));
        }
      }
      return m;
    };
    video.features.appearance = stream(appearance_means);
    video.features.motion = stream(motion_means);

    // Pose stream from per-frame skeletons.
    if (spec.pose) {
      const double scale = 40.0 + 160.0 * unit(rng);
      const double ox = 200.0 + 1500.0 * unit(rng);
      const double oy = 200.0 + 600.0 * unit(rng);
      const double jitter = spec.sigma_ratio * kTemplateSpread;
      std::vector<skeleton::PoseFrame> frames(spec.video_chunks * spec.chunk_size);
      for (std::size_t f = 0; f < frames.size(); ++f) {
        const auto& tmpl = templates[video.labels[f / spec.chunk_size]];
        skeleton::Person actor;
        for (std::size_t k = 0; k < skeleton::kKeypoints; ++k) {
          const bool core = k == skeleton::kMidHip || k == skeleton::kRShoulder || k == skeleton::kLShoulder;
          auto& kp = actor.keypoints[k];
          if (!core && unit(rng) < 0.05) continue;  // undetected
          const double jx = k == skeleton::kMidHip ? 0.0 : jitter * gauss(rng);
          const double jy = k == skeleton::kMidHip ? 0.0 : jitter * gauss(rng);
          kp.x = ox + scale * (tmpl[k][0] + jx);
          kp.y = oy + scale * (tmpl[k][1] + jy);
          kp.confidence = 0.5 + 0.5 * unit(rng);
        }
        if (unit(rng) < 0.02) actor.keypoints[skeleton::kMidHip].confidence = 0.0;  // degenerate frame
        frames[f].people.push_back(actor);
        if (unit(rng) < 0.1) {
          // A faint bystander that actor selection must ignore.
          skeleton::Person other;
          for (std::size_t k = 0; k < skeleton::kKeypoints; ++k) {
            other.keypoints[k] = {ox * 0.5 + scale * canonical[k][0], oy + scale * canonical[k][1], 0.05};
          }
          frames[f].people.insert(frames[f].people.begin(), other);
        }
      }
      video.features.pose = skeleton::pose_sequence_features(frames, spec.chunk_size).cast<float>();
    }
    out.videos.push_back(std::move(video));
  }
  return out;
}

/// Writes classes.tsv, annotations.tsv, features/<id>.<role>.trnf and
/// manifest.json under `dir`; returns the manifest.
inline Manifest write_dataset(const SyntheticDataset& data, const SyntheticSpec& spec,
                              const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  Manifest manifest;
  manifest.classmap = dir / "classes.tsv";
  {
    std::ofstream out(manifest.classmap);
    if (!out) throw std::ios_base::failure("cannot create '" + manifest.classmap.string() + "'");
    data.classes.write(out);
  }
  GroundTruth gt;
  for (const auto& v : data.videos) {
    gt.annotations.insert(gt.annotations.end(), v.annotations.begin(), v.annotations.end());
  }
  const auto annotations_path = dir / "annotations.tsv";
  {
    std::ofstream out(annotations_path);
    if (!out) throw std::ios_base::failure("cannot create '" + annotations_path.string() + "'");
    gt.write(out, data.classes);
  }
  for (const auto& v : data.videos) {
    VideoEntry e{v.id, spec.fps, spec.chunk_size, v.split, annotations_path, {}};
    auto put = [&](const char* role, const Matrix<float>& m) {
      if (m.empty()) return;
      const auto path = dir / "features" / (v.id + "." + role + ".trnf");
      write_features(path, m);
      e.streams[role] = {path, m.cols()};
    };
    put("appearance", v.features.appearance);
    put("motion", v.features.motion);
    put("pose", v.features.pose);
    manifest.videos.push_back(std::move(e));
  }
  manifest.write(dir / "manifest.json");
  return manifest;
}

inline Manifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  return write_dataset(synthesize(spec), spec, dir);
}

/// In-memory labeled sequences of one split of a synthetic dataset.
inline std::vector<LabeledSequence> labeled_split(const SyntheticDataset& data, const std::string& split,
                                                  FusionVariant fusion) {
  std::vector<LabeledSequence> out;
  for (const auto& v : data.videos) {
    if (v.split != split) continue;
    LabeledSequence seq{v.id, {}, v.labels};
    seq.features.appearance = v.features.appearance.cast<double>();
    if (fusion != FusionVariant::one_stream) seq.features.motion = v.features.motion.cast<double>();
    if (fusion == FusionVariant::fused_two_stream) seq.features.pose = v.features.pose.cast<double>();
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace trn
