#pragma once

// Per-frame (per-chunk) mean average precision for detection and for each
// anticipation step, the prediction dump format, and report tables.

#include <trn/labels.hpp>
#include <trn/model.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace trn {

class DumpFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ChunkPrediction {
  std::vector<double> present;
  std::vector<std::vector<double>> anticipated;

  friend bool operator==(const ChunkPrediction&, const ChunkPrediction&) = default;
};

struct VideoPrediction {
  std::string id;
  std::vector<ChunkPrediction> chunks;
};

struct PredictionDump {
  std::size_t chunk_size = 6;
  double fps = 30.0;
  std::size_t decoder_steps = 8;
  std::size_t classes = 21;
  std::vector<VideoPrediction> videos;

  void validate() const {
    for (const auto& v : videos) {
      for (std::size_t t = 0; t < v.chunks.size(); ++t) {
        const auto& c = v.chunks[t];
        const std::string where = "video '" + v.id + "' chunk " + std::to_string(t);
        if (c.present.size() != classes) {
          throw DumpFormatError(where + ": present distribution has " +
                                std::to_string(c.present.size()) + " classes, expected " +
                                std::to_string(classes));
        }
        if (c.anticipated.size() != decoder_steps) {
          throw DumpFormatError(where + ": expected " + std::to_string(decoder_steps) +
                                " anticipated distributions");
        }
        for (const auto& a : c.anticipated) {
          if (a.size() != classes) throw DumpFormatError(where + ": bad anticipated width");
        }
      }
    }
  }

  /// JSON lines: a header record, then one record per chunk.
  void write(std::ostream& out) const {
    nlohmann::json header = {{"type", "header"},        {"version", 1},
                             {"chunk_size", chunk_size}, {"fps", fps},
                             {"decoder_steps", decoder_steps}, {"classes", classes}};
    out << header.dump() << '\n';
    for (const auto& v : videos) {
      for (std::size_t t = 0; t < v.chunks.size(); ++t) {
        nlohmann::json rec = {{"video", v.id},
                              {"chunk", t},
                              {"present", v.chunks[t].present},
                              {"anticipated", v.chunks[t].anticipated}};
        out << rec.dump() << '\n';
      }
    }
  }

  static PredictionDump parse(std::istream& in) {
    PredictionDump dump;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    std::unordered_map<std::string, std::size_t> index;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const std::string where = "dump line " + std::to_string(line_no);
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
        if (!have_header) {
          if (rec.value("type", "") != "header") throw DumpFormatError(where + ": missing header");
          dump.chunk_size = rec.at("chunk_size").get<std::size_t>();
          dump.fps = rec.at("fps").get<double>();
          dump.decoder_steps = rec.at("decoder_steps").get<std::size_t>();
          dump.classes = rec.at("classes").get<std::size_t>();
          have_header = true;
          continue;
        }
        const auto id = rec.at("video").get<std::string>();
        auto [it, inserted] = index.emplace(id, dump.videos.size());
        if (inserted) dump.videos.push_back({id, {}});
        auto& video = dump.videos[it->second];
        const auto chunk = rec.at("chunk").get<std::size_t>();
        if (chunk != video.chunks.size()) {
          throw DumpFormatError(where + ": chunk index " + std::to_string(chunk) +
                                " out of order for video '" + id + "'");
        }
        ChunkPrediction p;
        p.present = rec.at("present").get<std::vector<double>>();
        p.anticipated = rec.at("anticipated").get<std::vector<std::vector<double>>>();
        video.chunks.push_back(std::move(p));
      } catch (const nlohmann::json::exception& e) {
        throw DumpFormatError(where + ": " + e.what());
      }
    }
    if (!have_header) throw DumpFormatError("prediction dump is empty");
    dump.validate();
    return dump;
  }

  static PredictionDump read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure("cannot open prediction dump '" + path + "'");
    return parse(in);
  }
};

/// Converts model outputs for one video into a dump entry.
template <typename T>
VideoPrediction to_video_prediction(std::string id, std::span<const DetectionOutput<T>> outputs) {
  VideoPrediction v{std::move(id), {}};
  v.chunks.reserve(outputs.size());
  for (const auto& o : outputs) {
    ChunkPrediction p;
    p.present.assign(o.present.begin(), o.present.end());
    for (const auto& a : o.anticipated) p.anticipated.emplace_back(a.begin(), a.end());
    v.chunks.push_back(std::move(p));
  }
  return v;
}

/// Per-chunk labels of one video plus a mask of chunks excluded from scoring.
struct VideoLabels {
  std::string id;
  std::vector<std::size_t> labels;
  std::vector<bool> excluded;
};

struct EvalOptions {
  bool exclude_ambiguous = true;
  /// Replicate each chunk sample once per frame before pooling.
  bool expand_to_frames = false;
};

/// Labels every video of the dump from interval annotations. Videos without
/// annotations are all background.
inline std::vector<VideoLabels> label_videos(const PredictionDump& dump, const GroundTruth& gt,
                                             const EvalOptions& options = {},
                                             std::vector<std::string>* warnings = nullptr) {
  std::vector<VideoLabels> out;
  for (const auto& v : dump.videos) {
    const auto annotations = gt.for_video(v.id);
    auto labeling = chunk_labels(annotations, dump.fps, dump.chunk_size, v.chunks.size());
    if (warnings) warnings->insert(warnings->end(), labeling.warnings.begin(), labeling.warnings.end());
    VideoLabels vl{v.id, std::move(labeling.labels), {}};
    vl.excluded = options.exclude_ambiguous ? labeling.ambiguous
                                            : std::vector<bool>(vl.labels.size(), false);
    out.push_back(std::move(vl));
  }
  return out;
}

/// Deterministic pre-shuffle applied before ranking, so that tied scores are
/// not ordered by input position.
inline std::vector<std::size_t> tie_break_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937 rng(0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Non-interpolated AP: the mean, over positives, of precision at the rank of
/// each positive. Returns nullopt when there are no positives.
inline std::optional<double> average_precision(std::span<const double> scores,
                                               const std::vector<bool>& positives) {
  if (scores.size() != positives.size()) {
    throw DimensionError("average_precision: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(positives.size()) + " labels");
  }
  const auto total_pos = static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
  if (total_pos == 0) return std::nullopt;
  std::vector<std::size_t> order = tie_break_order(scores.size());
  std::stable_sort(order.begin(), order.end(),
                   [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positives[order[rank]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(total_pos);
}

struct MapResult {
  /// Mean AP over evaluated action classes; NaN when no class has positives.
  double map = std::numeric_limits<double>::quiet_NaN();
  /// Indexed by class; entry 0 (background) is always empty.
  std::vector<std::optional<double>> per_class;
  std::vector<std::size_t> skipped;
  std::size_t samples = 0;
};

namespace detail {

struct PooledSample {
  const std::vector<double>* scores;
  std::size_t label;
};

inline MapResult pooled_map(const std::vector<PooledSample>& pool, std::size_t classes) {
  MapResult result;
  result.samples = pool.size();
  result.per_class.assign(classes, std::nullopt);
  std::vector<double> scores(pool.size());
  std::vector<bool> positives(pool.size());
  double sum = 0.0;
  std::size_t evaluated = 0;
  for (std::size_t c = 1; c < classes; ++c) {
    for (std::size_t n = 0; n < pool.size(); ++n) {
      scores[n] = (*pool[n].scores)[c];
      positives[n] = pool[n].label == c;
    }
    auto ap = average_precision(scores, positives);
    result.per_class[c] = ap;
    if (ap) {
      sum += *ap;
      ++evaluated;
    } else {
      result.skipped.push_back(c);
    }
  }
  if (evaluated > 0) result.map = sum / static_cast<double>(evaluated);
  return result;
}

inline const VideoLabels& find_labels(std::span<const VideoLabels> labels, const std::string& id) {
  for (const auto& l : labels) {
    if (l.id == id) return l;
  }
  throw DumpFormatError("no ground truth labels for video '" + id + "'");
}

// step 0 scores the present distribution; step i > 0 scores anticipation i.
inline MapResult map_at_step(const PredictionDump& dump, std::span<const VideoLabels> labels,
                             std::size_t step, const EvalOptions& options) {
  std::vector<PooledSample> pool;
  const std::size_t repeat = options.expand_to_frames ? dump.chunk_size : 1;
  for (const auto& video : dump.videos) {
    const auto& vl = find_labels(labels, video.id);
    if (vl.labels.size() != video.chunks.size()) {
      throw DumpFormatError("video '" + video.id + "': " + std::to_string(video.chunks.size()) +
                            " predicted chunks vs " + std::to_string(vl.labels.size()) + " labels");
    }
    for (std::size_t t = 0; t + step < video.chunks.size(); ++t) {
      const std::size_t target = t + step;
      if (!vl.excluded.empty() && vl.excluded[target]) continue;
      const auto& dist = step == 0 ? video.chunks[t].present : video.chunks[t].anticipated.at(step - 1);
      if (vl.labels[target] >= dump.classes) {
        throw DumpFormatError("label out of range for video '" + video.id + "'");
      }
      for (std::size_t r = 0; r < repeat; ++r) pool.push_back({&dist, vl.labels[target]});
    }
  }
  return pooled_map(pool, dump.classes);
}

}  // namespace detail

/// Detection mAP of the present distributions.
inline MapResult per_frame_map(const PredictionDump& dump, std::span<const VideoLabels> labels,
                               const EvalOptions& options = {}) {
  return detail::map_at_step(dump, labels, 0, options);
}

/// mAP of the step-i anticipation: the prediction emitted at chunk t is
/// scored against the label of chunk t + i.
inline MapResult anticipation_map(const PredictionDump& dump, std::span<const VideoLabels> labels,
                                  std::size_t step, const EvalOptions& options = {}) {
  if (step < 1 || step > dump.decoder_steps) {
    throw std::out_of_range("anticipation step " + std::to_string(step) + " outside [1, " +
                            std::to_string(dump.decoder_steps) + "]");
  }
  return detail::map_at_step(dump, labels, step, options);
}

/// One table row; all values in percent.
struct ReportRow {
  std::string method;
  std::string features;
  double encoder = 0.0;
  std::vector<double> steps;

  double average() const {
    if (steps.empty()) return 0.0;
    return std::accumulate(steps.begin(), steps.end(), 0.0) / static_cast<double>(steps.size());
  }
};

struct ReportLayout {
  std::size_t chunk_size = 6;
  double fps = 30.0;
  /// Spacing of the fixed horizon grid printed alongside the chunk horizons.
  double grid_seconds = 0.25;
};

inline std::string format_fixed(double value, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

/// Fixed-width table: Encoder, one column per decoder step and Avg (the mean
/// of the step columns). Two header lines label the steps, once with the
/// chunk-duration horizon i*chunk/fps and once on the fixed grid.
inline std::string render_report(std::span<const ReportRow> rows, const ReportLayout& layout) {
  std::size_t steps = 0;
  std::size_t label_width = 28;
  for (const auto& r : rows) {
    steps = std::max(steps, r.steps.size());
    label_width = std::max(label_width, r.method.size() + r.features.size() + 3);
  }
  std::ostringstream out;
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
  };
  auto left = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  constexpr std::size_t kCol = 8;
  out << left("Method / Features", label_width) << pad("Encoder", kCol) << "  |";
  out << " Decoder - time predicted into the future\n";
  out << left("  horizon (chunk duration)", label_width) << pad("", kCol) << "  |";
  for (std::size_t i = 1; i <= steps; ++i) {
    const double h = static_cast<double>(i * layout.chunk_size) / layout.fps;
    out << pad(format_fixed(h) + "s", kCol);
  }
  out << pad("Avg", kCol) << '\n';
  out << left("  horizon (" + format_fixed(layout.grid_seconds) + "s grid)", label_width)
      << pad("", kCol) << "  |";
  for (std::size_t i = 1; i <= steps; ++i) {
    out << pad(format_fixed(layout.grid_seconds * static_cast<double>(i)) + "s", kCol);
  }
  out << pad("Avg", kCol) << '\n';
  out << std::string(label_width + kCol * (steps + 2) + 3, '-') << '\n';
  for (const auto& r : rows) {
    std::string label = r.features.empty() ? r.method : r.method + " | " + r.features;
    out << left(label, label_width) << pad(format_fixed(r.encoder), kCol) << "  |";
    for (double v : r.steps) out << pad(format_fixed(v), kCol);
    for (std::size_t i = r.steps.size(); i < steps; ++i) out << pad("-", kCol);
    out << pad(format_fixed(r.average()), kCol) << '\n';
  }
  return out.str();
}

struct ReferenceTable {
  std::string title;
  std::size_t chunk_size;
  std::vector<ReportRow> rows;
};

/// Published per-frame mAP numbers (percent) for THUMOS'14, kept for
/// side-by-side comparison with locally produced reports.
inline std::vector<ReferenceTable> reference_results() {
  return {
      {"ResNet-200 / BN-Inception / OpenPose features, chunk size 6",
       6,
       {{"Reported baseline", "RGB -- Flow", 25.93, {26.15, 25.89, 25.79, 25.73, 25.66, 25.68, 25.66, 25.57}},
        {"Reported", "{RGB + OpenPose} -- Flow", 24.25,
         {23.11, 25.63, 26.72, 26.18, 25.57, 24.94, 24.40, 23.94}},
        {"Reported", "RGB -- OpenPose", 37.57, {25.54, 25.93, 26.44, 26.60, 26.28, 25.57, 24.75, 24.00}},
        {"Reported", "OpenPose -- Flow", 36.30, {21.77, 22.59, 23.57, 23.19, 22.28, 21.30, 20.49, 19.83}}}},
      {"C3D / OpenPose features, chunk size 16",
       16,
       {{"Reported", "C3D (One-Stream)", 35.43, {34.34, 31.05, 28.22, 26.46, 25.37, 24.75, 24.39, 24.22}},
        {"Reported", "{C3D (RGB)} -- OpenPose", 36.44,
         {32.98, 30.56, 28.37, 26.61, 25.38, 24.54, 23.78, 23.22}}}},
      {"I3D / OpenPose features, chunk size 16",
       16,
       {{"Reported", "I3D", 55.25, {52.57, 46.69, 41.94, 38.39, 35.90, 34.22, 33.00, 32.08}},
        {"Reported", "{I3D (RGB) + OpenPose} -- {I3D (Flow)}", 49.21,
         {46.65, 40.78, 36.42, 33.19, 30.90, 29.42, 28.43, 27.71}},
        {"Reported", "{I3D (RGB)} -- OpenPose", 47.43,
         {44.59, 40.08, 36.77, 34.24, 32.37, 31.29, 30.56, 30.06}},
        {"Reported", "{I3D (RGB)} -- {I3D (Flow) + OpenPose}", 44.47,
         {29.55, 31.92, 29.62, 27.21, 25.63, 24.78, 24.20, 23.68}}}},
  };
}

/// Encoder mAP and all anticipation mAPs as one report row (percent).
inline ReportRow report_row(std::string method, std::string features, const PredictionDump& dump,
                            std::span<const VideoLabels> labels, const EvalOptions& options = {}) {
  auto pct = [](double v) { return std::isnan(v) ? v : 100.0 * v; };
  ReportRow row{std::move(method), std::move(features), pct(per_frame_map(dump, labels, options).map), {}};
  for (std::size_t i = 1; i <= dump.decoder_steps; ++i) {
    row.steps.push_back(pct(anticipation_map(dump, labels, i, options).map));
  }
  return row;
}

}  // namespace trn
