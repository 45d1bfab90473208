#pragma once

// Class maps, interval annotations and the chunk labeling rule shared by
// training and evaluation.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <iterator>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace trn {

class AnnotationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::string_view kBackgroundName = "Background";
inline constexpr std::string_view kAmbiguousName = "Ambiguous";

/// index -> class name; index 0 is the background class.
class ClassMap {
 public:
  ClassMap() = default;
  explicit ClassMap(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!lookup_.emplace(names_[i], i).second) {
        throw AnnotationError("duplicate class name '" + names_[i] + "'");
      }
    }
  }

  /// Background plus `num_actions` generic action names.
  static ClassMap with_actions(std::size_t num_actions) {
    std::vector<std::string> names{std::string(kBackgroundName)};
    for (std::size_t i = 1; i <= num_actions; ++i) names.push_back("action" + std::to_string(i));
    return ClassMap(std::move(names));
  }

  std::size_t size() const noexcept { return names_.size(); }
  std::size_t num_actions() const noexcept { return names_.empty() ? 0 : names_.size() - 1; }
  const std::string& name(std::size_t index) const { return names_.at(index); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = lookup_.find(std::string(name));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  /// One "index<TAB>name" per line; indices must run 0..n-1.
  static ClassMap parse(std::istream& in) {
    std::vector<std::string> names;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw AnnotationError("class map line " + std::to_string(line_no) + ": expected index<TAB>name");
      }
      std::size_t index = 0;
      try {
        std::size_t used = 0;
        index = std::stoul(line.substr(0, tab), &used);
        if (used != tab) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw AnnotationError("class map line " + std::to_string(line_no) + ": bad index");
      }
      if (index != names.size()) {
        throw AnnotationError("class map line " + std::to_string(line_no) + ": expected index " +
                              std::to_string(names.size()));
      }
      names.push_back(line.substr(tab + 1));
    }
    if (names.size() < 2) throw AnnotationError("class map needs background plus at least one action");
    return ClassMap(std::move(names));
  }

  static ClassMap read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure("cannot open class map '" + path + "'");
    return parse(in);
  }

  void write(std::ostream& out) const {
    for (std::size_t i = 0; i < names_.size(); ++i) out << i << '\t' << names_[i] << '\n';
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

struct Annotation {
  std::string video;
  std::size_t label = 0;  // action index in [1, K]; unused when ambiguous
  double start = 0.0;     // seconds
  double end = 0.0;
  bool ambiguous = false;
};

struct GroundTruth {
  std::vector<Annotation> annotations;

  std::vector<Annotation> for_video(std::string_view id) const {
    std::vector<Annotation> out;
    std::copy_if(annotations.begin(), annotations.end(), std::back_inserter(out),
                 [id](const Annotation& a) { return a.video == id; });
    return out;
  }

  /// One "video<TAB>class<TAB>start<TAB>end" per line. The class name
  /// "Ambiguous" marks an interval to be excluded from scoring.
  static GroundTruth parse(std::istream& in, const ClassMap& classes) {
    GroundTruth gt;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      std::vector<std::string> fields;
      std::stringstream ss(line);
      std::string field;
      while (std::getline(ss, field, '\t')) fields.push_back(field);
      const std::string where = "annotation line " + std::to_string(line_no);
      if (fields.size() != 4) throw AnnotationError(where + ": expected 4 tab-separated fields");
      Annotation a;
      a.video = fields[0];
      if (fields[1] == kAmbiguousName) {
        a.ambiguous = true;
      } else {
        auto idx = classes.find(fields[1]);
        if (!idx) throw AnnotationError(where + ": unknown class '" + fields[1] + "'");
        if (*idx == 0) throw AnnotationError(where + ": background cannot be annotated");
        a.label = *idx;
      }
      try {
        a.start = std::stod(fields[2]);
        a.end = std::stod(fields[3]);
      } catch (const std::exception&) {
        throw AnnotationError(where + ": bad time value");
      }
      if (!std::isfinite(a.start) || !std::isfinite(a.end) || !(a.start < a.end)) {
        throw AnnotationError(where + ": interval start must precede end");
      }
      gt.annotations.push_back(std::move(a));
    }
    return gt;
  }

  static GroundTruth read(const std::string& path, const ClassMap& classes) {
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure("cannot open annotations '" + path + "'");
    return parse(in, classes);
  }

  void write(std::ostream& out, const ClassMap& classes) const {
    auto old = out.precision(17);
    for (const auto& a : annotations) {
      out << a.video << '\t' << (a.ambiguous ? std::string(kAmbiguousName) : classes.name(a.label))
          << '\t' << a.start << '\t' << a.end << '\n';
    }
    out.precision(old);
  }
};

/// Timestamp of a chunk's center frame, frame index t*chunk + chunk/2.
inline double chunk_center_seconds(std::size_t t, std::size_t chunk_size, double fps) {
  return static_cast<double>(t * chunk_size + chunk_size / 2) / fps;
}

struct ChunkLabeling {
  std::vector<std::size_t> labels;
  std::vector<bool> ambiguous;
  std::vector<std::string> warnings;
};

/// Labels each chunk with the action whose interval [start, end) covers the
/// chunk's center timestamp; the earliest-starting interval wins on overlap
/// and uncovered chunks are background (0). Intervals reaching outside the
/// video are clipped with a warning.
inline ChunkLabeling chunk_labels(std::span<const Annotation> annotations, double fps,
                                  std::size_t chunk_size, std::size_t chunks) {
  if (!(fps > 0.0) || chunk_size == 0) throw AnnotationError("chunk_labels: bad fps or chunk size");
  ChunkLabeling out;
  out.labels.assign(chunks, 0);
  out.ambiguous.assign(chunks, false);
  const double duration = static_cast<double>(chunks * chunk_size) / fps;

  std::vector<Annotation> actions;
  for (const auto& a : annotations) {
    if (!(a.start < a.end)) {
      throw AnnotationError("malformed interval for video '" + a.video + "': start " +
                            std::to_string(a.start) + " >= end " + std::to_string(a.end));
    }
    Annotation clipped = a;
    if (a.start < 0.0 || a.end > duration) {
      clipped.start = std::max(a.start, 0.0);
      clipped.end = std::min(a.end, duration);
      out.warnings.push_back("interval [" + std::to_string(a.start) + ", " + std::to_string(a.end) +
                             "] of video '" + a.video + "' clipped to [0, " +
                             std::to_string(duration) + "]");
      if (!(clipped.start < clipped.end)) continue;
    }
    if (clipped.ambiguous) {
      for (std::size_t t = 0; t < chunks; ++t) {
        const double center = chunk_center_seconds(t, chunk_size, fps);
        if (clipped.start <= center && center < clipped.end) out.ambiguous[t] = true;
      }
    } else {
      actions.push_back(std::move(clipped));
    }
  }
  std::stable_sort(actions.begin(), actions.end(),
                   [](const Annotation& a, const Annotation& b) { return a.start < b.start; });
  for (std::size_t t = 0; t < chunks; ++t) {
    const double center = chunk_center_seconds(t, chunk_size, fps);
    for (const auto& a : actions) {
      if (a.start <= center && center < a.end) {
        out.labels[t] = a.label;
        break;
      }
    }
  }
  return out;
}

}  // namespace trn
