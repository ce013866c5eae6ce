#ifndef DVC_MATCHING_HPP_
#define DVC_MATCHING_HPP_

// One-to-one assignment between K predictions (rows) and E ground-truth
// events (columns).

#include <Eigen/Dense>

#include <span>
#include <utility>
#include <vector>

#include "dvc/losses.hpp"
#include "dvc/temporal_geometry.hpp"

namespace dvc::matching {

using CostMatrix = Eigen::MatrixXd;

struct MatchResult {
  // Sorted by prediction index; |pairs| == min(K, E).
  std::vector<std::pair<int, int>> pairs;
  double total_cost = 0.0;

  std::vector<int> pred_indices() const;
  std::vector<int> gt_indices() const;
};

struct MatchingCoefficients {
  double giou = 2.0;
  double cap = 1.0;
  bool operator==(const MatchingCoefficients&) const = default;
};

// Focal-style positive cost -alpha (1 - c)^gamma log(c).
double classification_cost(double confidence, const losses::FocalConfig& focal);

// (i,j) = classification_cost(c_i) + coeffs.giou * (1 - giou1d(pred_i, gt_j))
//         + coeffs.cap * caption_ce(i, j).
// caption_ce is K x E: teacher-forced caption CE of query i on caption j.
CostMatrix matching_cost(std::span<const double> confidences,
                         std::span<const Segment> pred,
                         std::span<const Segment> gts,
                         const Eigen::MatrixXd& caption_ce,
                         const MatchingCoefficients& coeffs,
                         const losses::FocalConfig& focal);

// Minimum-cost assignment of size min(K, E). Among equal-cost optima the
// lexicographically smallest pair sequence is returned.
MatchResult hungarian(const CostMatrix& cost);

// Largest min(K, E) accepted by brute_force_match.
inline constexpr int kBruteForceLimit = 8;

// Exact optimum by enumeration; same tie rule as hungarian. Throws
// std::invalid_argument when min(K, E) > kBruteForceLimit.
MatchResult brute_force_match(const CostMatrix& cost);

// Sum of the selected entries in pair order.
double assignment_cost(const CostMatrix& cost,
                       std::span<const std::pair<int, int>> pairs);

}  // namespace dvc::matching

#endif  // DVC_MATCHING_HPP_
