#ifndef DVC_DATA_HPP_
#define DVC_DATA_HPP_

// Video records, on-disk formats, the fixed-length temporal resize and the
// synthetic dataset generator.
//
// Annotation files follow the ActivityNet-Captions layout:
//   { "<video_id>": { "duration": 82.7,
//                     "timestamps": [[0.8, 19.9], ...],
//                     "sentences": ["...", ...] }, ... }
//
// Feature files are little-endian: 8-byte magic "DVCFEAT1", uint32 rows
// (F_raw), uint32 cols (D_in), then rows*cols float32 in row-major order.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvc/temporal_geometry.hpp"

namespace dvc::data {

using FeatureMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TimedCaption {
  double start_s = 0.0;
  double end_s = 0.0;
  std::string sentence;
};

struct VideoRecord {
  std::string video_id;
  FeatureMatrix features;  // F_raw x D_in; empty for annotation stubs
  double duration_s = 0.0;
  std::vector<TimedCaption> events;

  // Event segments divided by the true duration, canonicalized.
  std::vector<Segment> normalized_segments() const;
};

struct AnnotationIssue {
  std::string video_id;
  std::string message;
};

struct AnnotationSet {
  std::vector<VideoRecord> records;  // only records that validated
  std::vector<AnnotationIssue> issues;
};

// Schema violations are collected per record rather than thrown; JSON that
// does not parse at all throws DataError.
AnnotationSet parse_annotations(const std::string& json_text);
AnnotationSet load_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path,
                       const std::vector<VideoRecord>& records);

inline constexpr char kFeatureMagic[8] = {'D', 'V', 'C', 'F', 'E', 'A', 'T', '1'};

void write_features(const std::filesystem::path& path,
                    const FeatureMatrix& features);
// Throws DataError on bad magic, truncation, or a width other than
// expected_dim when one is given.
FeatureMatrix load_features(const std::filesystem::path& path,
                            std::optional<int> expected_dim = std::nullopt);

struct FixedLengthFeatures {
  FeatureMatrix features;       // F x D_in; pad rows are zero
  std::vector<std::uint8_t> valid;  // 1 for real frames
  std::vector<int> source_index;    // raw frame of each valid row
  std::vector<double> frame_time;   // normalized center time of valid rows
  int n_valid = 0;
  int pad_count() const { return static_cast<int>(valid.size()) - n_valid; }
};

// Uniform-stride subsample (raw index round(i * F_raw / F)) when F_raw > F,
// zero padding with a mask when F_raw < F, identity otherwise.
FixedLengthFeatures resize_to_fixed_length(const FeatureMatrix& features,
                                           int target_length);

struct SynthParams {
  int n_train = 100;
  int n_val = 20;
  int frames_min = 80;
  int frames_max = 160;
  int events_min = 3;
  int events_max = 5;
  int events_cap = 10;
  int feature_dim = 32;
  int n_classes = 12;
  double event_fraction_min = 0.08;  // of the video length
  double event_fraction_max = 0.20;
  double pattern_strength = 3.0;
  double noise_sigma = 1.0;
  bool overlap_stress = false;  // allow ground-truth events to overlap
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
};

struct EventClass {
  std::string verb;
  std::string noun;
  std::string caption() const { return verb + " the " + noun; }
};

struct Dataset {
  std::vector<VideoRecord> train;
  std::vector<VideoRecord> val;
  // Content lexicon: the verb/noun template slots for synthetic data.
  std::set<std::string> lexicon;
  int feature_dim = 0;
};

struct SyntheticDataset : Dataset {
  std::vector<EventClass> classes;
  std::vector<Eigen::VectorXf> directions;  // unit vector per class
  // Class index of each event, parallel to train/val events.
  std::vector<std::vector<int>> train_labels;
  std::vector<std::vector<int>> val_labels;
};

// Gaussian noise videos with one class direction planted over each event.
// Ground truth is non-overlapping unless overlap_stress is set. Throws
// std::invalid_argument when the events cannot be packed.
SyntheticDataset synth_generate(const SynthParams& params);

// Writes manifest.json, train.json, val.json, lexicon.txt and
// features/<id>.bin. Returns every written path relative to `dir`.
std::vector<std::string> write_dataset(const std::filesystem::path& dir,
                                       const Dataset& dataset);
// Manifest-driven load; every record's features are shape-checked.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace dvc::data

#endif  // DVC_DATA_HPP_
