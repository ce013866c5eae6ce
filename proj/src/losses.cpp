#include "dvc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvc::losses {

void OSLConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 0.5))
    throw std::invalid_argument("osl gamma must lie in [0, 0.5]");
  if (!(beta > 0.0)) throw std::invalid_argument("osl beta must be positive");
  if (!(epsilon > 0.0 && epsilon < beta))
    throw std::invalid_argument("osl epsilon must lie in (0, beta)");
}

void CTCAConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("ctca tau must be positive");
}

void LossWeights::validate() const {
  for (double w : as_array())
    if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be >= 0");
}

std::string LossReport::to_log_line(long step) const {
  std::string line = "step=" + std::to_string(step);
  char buf[64];
  for (std::size_t k = 0; k < kTermCount; ++k) {
    std::snprintf(buf, sizeof(buf), " %s=%.9g", kTermNames[k].data(), raw[k]);
    line += buf;
  }
  for (std::size_t k = 0; k < kTermCount; ++k) {
    std::snprintf(buf, sizeof(buf), " w_%s=%.9g", kTermNames[k].data(),
                  weighted[k]);
    line += buf;
  }
  std::snprintf(buf, sizeof(buf), " total=%.9g", total);
  line += buf;
  return line;
}

LossReport total_loss(const LossTerms& raw, const LossWeights& weights) {
  LossReport report;
  report.raw = raw;
  const auto w = weights.as_array();
  double total = 0.0;
  for (std::size_t k = 0; k < kTermCount; ++k) {
    report.weighted[k] = w[k] * raw[k];
    total += report.weighted[k];
  }
  report.total = total;
  return report;
}

Var weighted_total(const std::array<Var, kTermCount>& terms,
                   const LossWeights& weights) {
  const auto w = weights.as_array();
  Var total = ad::scale(terms[0], w[0]);
  for (std::size_t k = 1; k < kTermCount; ++k)
    total = total + ad::scale(terms[k], w[k]);
  return total;
}

double osl_alpha(double gamma, double p_g) {
  return gamma * p_g + (1.0 - gamma) * (1.0 - p_g);
}

namespace {

Matrix column_of(std::span<const Segment> segs, bool starts) {
  Matrix m(static_cast<ad::Index>(segs.size()), 1);
  for (std::size_t i = 0; i < segs.size(); ++i)
    m(static_cast<ad::Index>(i), 0) = starts ? segs[i].start : segs[i].end;
  return m;
}

}  // namespace

Var overlap_suppression(const Var& starts, const Var& ends,
                        std::span<const Segment> gts, const OSLConfig& cfg) {
  const ad::Index k = starts.rows();
  if (k < 2 || gts.empty()) return ad::constant(0.0);
  const Var gs = ad::constant(column_of(gts, true));
  const Var ge = ad::constant(column_of(gts, false));

  const Var p_g = ad::max_over_cols(ad::pairwise_tiou(starts, ends, gs, ge));
  // alpha = gamma * p_g + (1 - gamma) * (1 - p_g)
  const Var alpha = ad::scale(p_g, 2.0 * cfg.gamma - 1.0) + (1.0 - cfg.gamma);

  const Var p_o = ad::pairwise_tiou(starts, ends, starts, ends);
  const Var log_term =
      ad::log(ad::clamp_min(cfg.beta - p_o, cfg.epsilon));
  Matrix off_diag = Matrix::Ones(k, k);
  off_diag.diagonal().setZero();
  const Var penalty = -(alpha * log_term) * ad::constant(off_diag);
  return ad::scale(ad::sum(penalty), 1.0 / static_cast<double>(k * (k - 1)));
}

Var cross_task_alignment(const Var& cap_feats, const Var& loc_feats,
                         std::span<const int> matched, const CTCAConfig& cfg,
                         bool* no_matches) {
  if (cap_feats.rows() != loc_feats.rows() ||
      cap_feats.cols() != loc_feats.cols())
    throw std::invalid_argument("ctca feature shapes differ");
  if (no_matches) *no_matches = matched.empty();
  if (matched.empty()) return ad::constant(0.0);
  const Var cap = ad::normalize_rows(ad::gather_rows(cap_feats, matched),
                                     kCosineNormFloor);
  const Var loc = ad::normalize_rows(loc_feats, kCosineNormFloor);
  const Var sims = ad::scale(ad::matmul(cap, ad::transpose(loc)), 1.0 / cfg.tau);
  const Var log_prob = ad::pick_per_row(ad::log_softmax_rows(sims), matched);
  return -ad::mean(log_prob);
}

Var concept_guider_loss(const Var& logits, const Matrix& labels) {
  if (logits.rows() == 0) return ad::constant(0.0);
  return ad::mean(ad::bce_with_logits(logits, labels));
}

Var focal_cls_loss(const Var& confidences, std::span<const int> matched,
                   const FocalConfig& cfg) {
  const ad::Index k = confidences.rows();
  Matrix pos_mask = Matrix::Zero(k, 1);
  for (int i : matched) pos_mask(i, 0) = 1.0;
  const Matrix neg_mask = Matrix::Ones(k, 1) - pos_mask;

  const double eps = 1e-12;
  const Var c = ad::clamp(confidences, eps, 1.0 - eps);
  const Var one_minus = 1.0 - c;
  const Var pos = ad::scale(ad::pow(one_minus, cfg.gamma) * ad::log(c),
                            -cfg.alpha);
  const Var neg = ad::scale(ad::pow(c, cfg.gamma) * ad::log(one_minus),
                            -(1.0 - cfg.alpha));
  const Var per_query =
      pos * ad::constant(pos_mask) + neg * ad::constant(neg_mask);
  const double norm = std::max<double>(1.0, static_cast<double>(matched.size()));
  return ad::scale(ad::sum(per_query), 1.0 / norm);
}

Var giou_loss(const Var& pred_starts, const Var& pred_ends,
              std::span<const Segment> gts) {
  if (gts.empty()) return ad::constant(0.0);
  const Var g = ad::paired_giou(pred_starts, pred_ends,
                                ad::constant(column_of(gts, true)),
                                ad::constant(column_of(gts, false)));
  return ad::mean(1.0 - g);
}

Var caption_ce(const Var& token_logits, std::span<const int> tokens,
               int pad_id, bool* all_pad) {
  if (token_logits.rows() != static_cast<ad::Index>(tokens.size()))
    throw std::invalid_argument("caption_ce length mismatch");
  std::vector<int> rows;
  std::vector<int> targets;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] == pad_id) continue;
    rows.push_back(static_cast<int>(t));
    targets.push_back(tokens[t]);
  }
  if (all_pad) *all_pad = rows.empty();
  if (rows.empty()) return ad::constant(0.0);
  const Var lp = ad::log_softmax_rows(ad::gather_rows(token_logits, rows));
  return -ad::mean(ad::pick_per_row(lp, targets));
}

Var caption_ce_batch(const std::vector<Var>& step_logits,
                     const std::vector<std::vector<int>>& targets, int pad_id) {
  const int batch = static_cast<int>(targets.size());
  const int steps = static_cast<int>(step_logits.size());
  if (steps == 0 || batch == 0) return ad::constant(0.0);
  std::vector<int> counts(batch, 0);
  for (int b = 0; b < batch; ++b) {
    if (static_cast<int>(targets[b].size()) > steps)
      throw std::invalid_argument("caption_ce_batch: targets longer than logits");
    for (int id : targets[b]) counts[b] += id != pad_id;
  }
  const int live = static_cast<int>(
      std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }));
  if (live == 0) return ad::constant(0.0);
  // Row t * B + b of the stacked logits is step t of sequence b.
  std::vector<int> rows, picks;
  std::vector<double> weights;
  for (int t = 0; t < steps; ++t) {
    for (int b = 0; b < batch; ++b) {
      if (t >= static_cast<int>(targets[b].size()) || targets[b][t] == pad_id)
        continue;
      rows.push_back(t * batch + b);
      picks.push_back(targets[b][t]);
      weights.push_back(1.0 / (counts[b] * static_cast<double>(live)));
    }
  }
  const Var stacked = steps == 1 ? step_logits[0] : ad::concat_rows(step_logits);
  const Var lp = ad::log_softmax_rows(ad::gather_rows(stacked, rows));
  const Matrix w = Eigen::Map<const Matrix>(weights.data(),
                                            static_cast<ad::Index>(weights.size()), 1);
  return -ad::sum(ad::pick_per_row(lp, picks) * ad::constant(w));
}

Var event_count_ce(const Var& count_logits, int gt_count) {
  const int max_bin = static_cast<int>(count_logits.cols()) - 1;
  const int target = std::clamp(gt_count, 0, max_bin);
  const Var lp = ad::log_softmax_rows(count_logits);
  return -ad::element(lp, 0, target);
}

}  // namespace dvc::losses
