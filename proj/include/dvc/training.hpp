#ifndef DVC_TRAINING_HPP_
#define DVC_TRAINING_HPP_

// Training loop: data preparation, per-video losses over the Hungarian
// matching, clipped AdamW steps, validation and checkpointing.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvc/autodiff.hpp"
#include "dvc/concepts.hpp"
#include "dvc/data.hpp"
#include "dvc/evaluation.hpp"
#include "dvc/losses.hpp"
#include "dvc/matching.hpp"
#include "dvc/model.hpp"
#include "dvc/text.hpp"

namespace dvc::training {

using ad::Matrix;
using ad::Var;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a loss or gradient is not finite. what() carries the
// offending videos and their loss terms.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double grad_clip = 0.1;
  int warmup_steps = 0;  // linear warmup, then constant
  std::uint64_t seed = 0;
  bool deterministic = true;
  int eval_every = 1;  // epochs

  // Component switches.
  bool rsqi = true;
  bool ctca = true;
  bool osl = true;
  bool cg = true;

  losses::LossWeights weights;
  losses::OSLConfig osl_cfg;
  losses::CTCAConfig ctca_cfg;
  losses::FocalConfig focal;
  matching::MatchingCoefficients matching;

  // Architecture. vocab_size and input_dim are taken from the data.
  model::ModelConfig model;

  // Throws ConfigError; CTCA without RSQI is rejected.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Flat INI with sections train, toggles, weights, osl, ctca, focal,
// matching and model. Doubles are written with round-trip precision.
std::string to_ini(const TrainConfig& cfg);
// Missing keys keep their defaults. Unknown keys, bad values and an invalid
// result throw ConfigError.
TrainConfig from_ini(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const TrainConfig& cfg);

struct PreparedVideo {
  std::string video_id;
  double duration_s = 0.0;
  model::VideoInput input;
  std::vector<Segment> gts;                  // normalized, sorted by start
  std::vector<std::string> captions;         // raw sentences
  std::vector<std::vector<int>> targets;     // ids ending with the end token
  std::vector<concepts::ConceptLabel> labels;
};

struct PreparedData {
  text::WordVocabulary words;
  concepts::ConceptVocabulary concepts;
  std::vector<PreparedVideo> train;
  std::vector<PreparedVideo> val;
};

PreparedVideo prepare_video(const data::VideoRecord& record,
                            const text::WordVocabulary& words,
                            const concepts::ConceptVocabulary& concepts,
                            int frames, int max_caption_len);

// Vocabularies come from the training captions; the concept lexicon from
// the dataset (with the default stopwords denied).
PreparedData prepare(const data::Dataset& dataset, const TrainConfig& cfg);

// Model config with the data-dependent fields filled in.
model::ModelConfig resolve_model_config(const TrainConfig& cfg,
                                        const PreparedData& data);

// Differentiable per-video terms plus the matching that produced them.
struct VideoLosses {
  std::array<Var, losses::kTermCount> terms;
  Var total;
  losses::LossReport report;
  matching::MatchResult match;
};

// K x E teacher-forced caption CE of every query against every caption,
// each query reading its own predicted window.
Eigen::MatrixXd caption_cost(const model::Model& model, const model::Encoded& enc,
                             const Var& cap_feats,
                             std::span<const Segment> windows,
                             const std::vector<std::vector<int>>& targets);

class Trainer {
 public:
  // The model's role_specific_queries must agree with cfg.rsqi.
  Trainer(const TrainConfig& cfg, model::Model& model);

  VideoLosses video_losses(const PreparedVideo& video) const;
  // Batch-mean of the per-video totals, backward, clip, one optimizer step.
  losses::LossReport train_step(std::span<const PreparedVideo* const> batch);

  long step() const { return step_; }
  void set_step(long step) { step_ = step; }
  ad::Adam& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return cfg_; }
  model::Model& model() { return model_; }

 private:
  TrainConfig cfg_;
  model::Model& model_;
  ad::Adam optimizer_;
  long step_ = 0;
};

struct OverlapStats {
  double mean_pairwise_tiou = 0.0;  // over unordered pairs, pooled
  long pairs_above_half = 0;        // pairs with tiou > 0.5
  long n_pairs = 0;
};

OverlapStats overlap_statistics(std::span<const std::vector<Segment>> per_video);

// Inference over prepared videos in evaluation form (normalized segments).
std::vector<eval::VideoEvaluation> predict(const model::Model& model,
                                           std::span<const PreparedVideo> videos,
                                           const text::WordVocabulary& words,
                                           int topk = 0);

struct EpochRecord {
  int epoch = 0;  // 1-based
  long step = 0;
  double train_loss = 0.0;
  losses::LossTerms train_terms{};
  eval::EvalReport val;
  double seconds = 0.0;
};

struct FitOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::optional<std::filesystem::path> resume;
  std::ostream* log = nullptr;
  int log_every = 0;  // steps; 0 disables per-step lines
};

struct FitResult {
  std::vector<EpochRecord> history;  // epochs run in this call
  double best_f1 = -1.0;
  int best_epoch = 0;
  std::unique_ptr<model::Model> model;  // final state
  std::vector<Matrix> best_params;      // parallel to model parameters
  PreparedData data;
};

// Writes config.ini, history.csv, train.log, best.ckpt and last.ckpt under
// out_dir when one is given.
FitResult fit(const data::Dataset& dataset, const TrainConfig& cfg,
              const FitOptions& options = {});

// Copies parameter values (e.g. FitResult::best_params) into `model`.
void load_parameters(model::Model& model, const std::vector<Matrix>& values);

std::string history_csv_header();
std::string history_csv_row(const EpochRecord& r);

}  // namespace dvc::training

#endif  // DVC_TRAINING_HPP_
