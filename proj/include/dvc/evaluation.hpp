#ifndef DVC_EVALUATION_HPP_
#define DVC_EVALUATION_HPP_

// Dense-captioning evaluation: threshold-averaged localization
// precision/recall/F1, corpus BLEU-4, CIDEr-D and an order-preserving
// SODA_c variant. METEOR is not computed and is reported as null.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dvc/temporal_geometry.hpp"

namespace dvc::eval {

using Tokens = std::vector<std::string>;

enum class SodaCaptionScore { kNgramF };

struct EvalConfig {
  std::vector<double> tiou_thresholds = {0.3, 0.5, 0.7, 0.9};
  int max_ngram = 4;
  double cider_sigma = 6.0;
  bool bleu_smoothing = false;
  SodaCaptionScore soda_caption = SodaCaptionScore::kNgramF;

  void validate() const;  // thresholds strictly increasing in (0, 1]
};

// Parses "0.3,0.5,0.7,0.9".
std::vector<double> parse_thresholds(const std::string& csv);

struct PredictedEvent {
  Segment segment;  // normalized
  std::string caption;
  double confidence = 0.0;
};

struct GroundTruthEvent {
  Segment segment;  // normalized
  std::string caption;
};

struct VideoEvaluation {
  std::string video_id;
  std::vector<PredictedEvent> preds;
  std::vector<GroundTruthEvent> gts;
};

struct LocalizationScores {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  std::vector<double> recall_at;     // per threshold
  std::vector<double> precision_at;  // per threshold
};

// Per threshold, counts pooled over the corpus: a prediction is matched if
// its best ground-truth tIoU reaches the threshold, and a ground truth is
// recalled if its best prediction tIoU does. f1 is the harmonic mean of the
// threshold-averaged precision and recall.
LocalizationScores localization_prf(std::span<const VideoEvaluation> videos,
                                    const EvalConfig& cfg);

// Corpus BLEU with clipped n-gram counts and the closest-reference brevity
// penalty. references[i] holds every reference of candidates[i].
double bleu(const std::vector<Tokens>& candidates,
            const std::vector<std::vector<Tokens>>& references, int max_n = 4,
            bool smoothing = false);

// CIDEr-D with document frequencies over the reference sets, min-clipped
// TF-IDF vectors and the Gaussian length penalty. Score in [0, 10].
double cider(const std::vector<Tokens>& candidates,
             const std::vector<std::vector<Tokens>>& references,
             int max_n = 4, double sigma = 6.0);

// Smoothed 1..max_n gram F-measure between two sentences, in [0, 1].
double caption_fscore(const Tokens& candidate, const Tokens& reference,
                      int max_n = 4);

// Maximum total score over order-preserving one-to-one alignments of rows
// (predictions) to columns (ground truths).
double monotone_alignment_value(const std::vector<std::vector<double>>& scores);

// Corpus mean of the per-video F-measure of aligned tIoU * caption score
// against prediction and ground-truth counts. Events are ordered by start.
double soda_c(std::span<const VideoEvaluation> videos, const EvalConfig& cfg);

struct EvalReport {
  LocalizationScores localization;
  double bleu4 = 0.0;
  double cider = 0.0;
  double soda_c = 0.0;
  std::optional<double> meteor;  // never computed
  std::vector<double> thresholds;
  std::vector<double> bleu4_at;
  std::vector<double> cider_at;
  int n_videos = 0;

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

// Caption metrics at threshold t pair each prediction with every ground
// truth whose tIoU reaches t; a prediction with none is scored against a
// reference that matches nothing.
EvalReport evaluate(std::span<const VideoEvaluation> videos,
                    const EvalConfig& cfg);

// --- prediction files ---------------------------------------------------------
// { "version": "dvc-predictions-1",
//   "results": { "<video_id>": [ { "timestamp": [s, e], "sentence": "...",
//                                  "confidence": c }, ... ] } }
// Timestamps are in seconds.

struct TimedPrediction {
  double start_s = 0.0;
  double end_s = 0.0;
  std::string sentence;
  double confidence = 0.0;
};

using PredictionFile = std::map<std::string, std::vector<TimedPrediction>>;

void write_predictions(const std::filesystem::path& path,
                       const PredictionFile& preds);
// Throws data::DataError on schema violations.
PredictionFile parse_predictions(const std::string& json_text);
PredictionFile read_predictions(const std::filesystem::path& path);

}  // namespace dvc::eval

#endif  // DVC_EVALUATION_HPP_
