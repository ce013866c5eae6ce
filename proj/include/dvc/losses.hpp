#ifndef DVC_LOSSES_HPP_
#define DVC_LOSSES_HPP_

// Training objectives. Every loss returns a 1x1 Var so that gradients flow
// back into whatever produced its inputs.

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dvc/autodiff.hpp"
#include "dvc/temporal_geometry.hpp"

namespace dvc::losses {

using ad::Matrix;
using ad::Var;

// Overlap suppression hyperparameters. gamma must lie in [0, 0.5] so that
// better ground-truth alignment always means weaker suppression.
struct OSLConfig {
  double gamma = 0.25;
  double beta = 1.0;
  double epsilon = 1e-6;

  void validate() const;  // throws std::invalid_argument
  bool operator==(const OSLConfig&) const = default;
};

struct CTCAConfig {
  double tau = 0.1;

  void validate() const;
  bool operator==(const CTCAConfig&) const = default;
};

struct FocalConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  bool operator==(const FocalConfig&) const = default;
};

enum class Term { kGiou, kCls, kCap, kEc, kCtca, kOsl, kCg };
inline constexpr std::size_t kTermCount = 7;
inline constexpr std::array<std::string_view, kTermCount> kTermNames = {
    "giou", "cls", "cap", "ec", "ctca", "osl", "cg"};

struct LossWeights {
  double giou = 2.0;
  double cls = 1.0;
  double cap = 1.0;
  double ec = 0.5;
  double ctca = 0.5;
  double osl = 0.5;
  double cg = 0.5;

  std::array<double, kTermCount> as_array() const {
    return {giou, cls, cap, ec, ctca, osl, cg};
  }
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

using LossTerms = std::array<double, kTermCount>;

struct LossReport {
  LossTerms raw{};
  LossTerms weighted{};
  double total = 0.0;
  bool no_matches = false;   // CTCA received an empty match set
  bool empty_caption = false;  // caption CE saw only padding

  double raw_term(Term t) const { return raw[static_cast<std::size_t>(t)]; }
  // "step=12 giou=... cls=... ... w_giou=... total=..."
  std::string to_log_line(long step) const;
};

LossReport total_loss(const LossTerms& raw, const LossWeights& weights);
// Same weighted sum over differentiable terms, summed in Term order so the
// value equals total_loss(...).total bit for bit.
Var weighted_total(const std::array<Var, kTermCount>& terms,
                   const LossWeights& weights);

// Ground-truth-aware suppression weight: gamma * p_g + (1 - gamma) * (1 - p_g).
double osl_alpha(double gamma, double p_g);

// Mean over ordered prediction pairs (i != j) of
//   -alpha_i * log(max(beta - tiou(pred_i, pred_j), epsilon))
// where alpha_i uses the best tiou of prediction i against any ground truth.
// Starts/ends are Kx1 columns of canonical segments. Returns 0 for K < 2.
Var overlap_suppression(const Var& starts, const Var& ends,
                        std::span<const Segment> gts, const OSLConfig& cfg);

// Contrastive alignment of caption query j with localization query j against
// every localization query, averaged over `matched`. Empty matched -> 0 and
// *no_matches set.
Var cross_task_alignment(const Var& cap_feats, const Var& loc_feats,
                         std::span<const int> matched, const CTCAConfig& cfg,
                         bool* no_matches = nullptr);

// Norm floor used by cosine similarity.
inline constexpr double kCosineNormFloor = 1e-8;

// Mean per-element binary cross-entropy between sigmoid(logits) and a 0/1
// target matrix.
Var concept_guider_loss(const Var& logits, const Matrix& labels);

// Binary focal loss over K confidences; matched indices are positives.
// Normalized by max(|matched|, 1).
Var focal_cls_loss(const Var& confidences, std::span<const int> matched,
                   const FocalConfig& cfg);

// Mean over aligned pairs of 1 - giou1d. Empty input -> 0.
Var giou_loss(const Var& pred_starts, const Var& pred_ends,
              std::span<const Segment> gts);

// Mean token cross-entropy of T x V logits against T token ids, skipping
// positions equal to pad_id. All-pad -> 0 and *all_pad set.
Var caption_ce(const Var& token_logits, std::span<const int> tokens,
               int pad_id, bool* all_pad = nullptr);

// Batched form over B sequences: step_logits[t] is B x V and targets[b]
// holds row b's ids (pad_id past its end). Equals the mean of caption_ce
// over rows that have at least one non-pad target.
Var caption_ce_batch(const std::vector<Var>& step_logits,
                     const std::vector<std::vector<int>>& targets, int pad_id);

// Categorical cross-entropy of 1 x (L_max + 1) logits against
// min(gt_count, L_max).
Var event_count_ce(const Var& count_logits, int gt_count);

}  // namespace dvc::losses

#endif  // DVC_LOSSES_HPP_
