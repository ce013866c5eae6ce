#include "dvc/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dvc::matching {

namespace {

using Pairs = std::vector<std::pair<int, int>>;

double tie_tolerance(double reference) {
  return 1e-10 * (1.0 + std::abs(reference));
}

// Square Hungarian with potentials (shortest augmenting paths), O(n^3).
// Returns col_of_row.
std::vector<int> solve_square(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col_of_row(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

// Optimal rectangular assignment of size min(rows, cols) by padding to a
// square with a sentinel strictly above every real entry.
Pairs solve_rectangular(const Eigen::MatrixXd& cost) {
  const int k = static_cast<int>(cost.rows());
  const int e = static_cast<int>(cost.cols());
  if (k == 0 || e == 0) return {};
  const int n = std::max(k, e);
  const double max_entry = cost.maxCoeff();
  const double range = max_entry - cost.minCoeff();
  const double sentinel = max_entry + 1.0 + range;
  Eigen::MatrixXd square = Eigen::MatrixXd::Constant(n, n, sentinel);
  square.topLeftCorner(k, e) = cost;
  const std::vector<int> col_of_row = solve_square(square);
  Pairs pairs;
  for (int i = 0; i < k; ++i)
    if (col_of_row[i] >= 0 && col_of_row[i] < e)
      pairs.emplace_back(i, col_of_row[i]);
  return pairs;
}

double optimal_value(const Eigen::MatrixXd& cost) {
  double total = 0.0;
  for (const auto& [i, j] : solve_rectangular(cost)) total += cost(i, j);
  return total;
}

}  // namespace

std::vector<int> MatchResult::pred_indices() const {
  std::vector<int> out;
  for (const auto& p : pairs) out.push_back(p.first);
  return out;
}

std::vector<int> MatchResult::gt_indices() const {
  std::vector<int> out;
  for (const auto& p : pairs) out.push_back(p.second);
  return out;
}

double assignment_cost(const CostMatrix& cost,
                       std::span<const std::pair<int, int>> pairs) {
  double total = 0.0;
  for (const auto& [i, j] : pairs) total += cost(i, j);
  return total;
}

double classification_cost(double confidence,
                           const losses::FocalConfig& focal) {
  const double c = std::clamp(confidence, 1e-12, 1.0 - 1e-12);
  return -focal.alpha * std::pow(1.0 - c, focal.gamma) * std::log(c);
}

CostMatrix matching_cost(std::span<const double> confidences,
                         std::span<const Segment> pred,
                         std::span<const Segment> gts,
                         const Eigen::MatrixXd& caption_ce,
                         const MatchingCoefficients& coeffs,
                         const losses::FocalConfig& focal) {
  const auto k = static_cast<Eigen::Index>(pred.size());
  const auto e = static_cast<Eigen::Index>(gts.size());
  if (static_cast<Eigen::Index>(confidences.size()) != k)
    throw std::invalid_argument("matching_cost: confidence count");
  if (coeffs.cap != 0.0 && (caption_ce.rows() != k || caption_ce.cols() != e))
    throw std::invalid_argument("matching_cost: caption cost shape");
  CostMatrix cost(k, e);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double cls = classification_cost(confidences[i], focal);
    for (Eigen::Index j = 0; j < e; ++j) {
      double c = cls + coeffs.giou * (1.0 - giou1d(pred[i], gts[j]));
      if (coeffs.cap != 0.0) c += coeffs.cap * caption_ce(i, j);
      cost(i, j) = c;
    }
  }
  return cost;
}

MatchResult hungarian(const CostMatrix& cost) {
  MatchResult result;
  const int k = static_cast<int>(cost.rows());
  const int e = static_cast<int>(cost.cols());
  const int target = std::min(k, e);
  if (target == 0) return result;
  for (Eigen::Index i = 0; i < cost.size(); ++i)
    if (!std::isfinite(cost(i))) throw std::invalid_argument("non-finite cost");

  const double best = optimal_value(cost);
  const double tol = tie_tolerance(best);

  // Fix pairs one at a time in lexicographic order, keeping only choices
  // that still admit an optimal completion.
  Pairs fixed;
  std::vector<char> col_used(e, 0);
  double fixed_cost = 0.0;
  int next_row = 0;
  while (static_cast<int>(fixed.size()) < target) {
    const int remaining = target - static_cast<int>(fixed.size()) - 1;
    bool placed = false;
    for (int i = next_row; i < k && !placed; ++i) {
      if (k - i - 1 < remaining) break;
      for (int j = 0; j < e && !placed; ++j) {
        if (col_used[j]) continue;
        double sub = 0.0;
        if (remaining > 0) {
          std::vector<int> rows, cols;
          for (int r = i + 1; r < k; ++r) rows.push_back(r);
          for (int c = 0; c < e; ++c)
            if (!col_used[c] && c != j) cols.push_back(c);
          if (std::min(rows.size(), cols.size()) <
              static_cast<std::size_t>(remaining))
            continue;
          Eigen::MatrixXd reduced(rows.size(), cols.size());
          for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < cols.size(); ++c)
              reduced(r, c) = cost(rows[r], cols[c]);
          sub = optimal_value(reduced);
        }
        if (fixed_cost + cost(i, j) + sub <= best + tol) {
          fixed.emplace_back(i, j);
          col_used[j] = 1;
          fixed_cost += cost(i, j);
          next_row = i + 1;
          placed = true;
        }
      }
    }
    if (!placed) {
      // Numerical corner case: fall back to the raw optimum.
      fixed = solve_rectangular(cost);
      break;
    }
  }
  result.pairs = std::move(fixed);
  result.total_cost = assignment_cost(cost, result.pairs);
  return result;
}

MatchResult brute_force_match(const CostMatrix& cost) {
  const int k = static_cast<int>(cost.rows());
  const int e = static_cast<int>(cost.cols());
  const int target = std::min(k, e);
  if (target > kBruteForceLimit)
    throw std::invalid_argument("brute_force_match: instance too large");
  // Number of partial assignments grows like P(max, min); keep it bounded.
  double count = 1.0;
  for (int t = 0; t < target; ++t) count *= static_cast<double>(std::max(k, e) - t);
  if (count > 5e7)
    throw std::invalid_argument("brute_force_match: instance too large");

  MatchResult best;
  best.total_cost = std::numeric_limits<double>::infinity();
  if (target == 0) {
    best.total_cost = 0.0;
    return best;
  }
  Pairs current;
  std::vector<char> col_used(e, 0);
  // Depth-first over pair sequences in lexicographic order.
  auto recurse = [&](auto&& self, int next_row, double partial) -> void {
    const int remaining = target - static_cast<int>(current.size());
    if (remaining == 0) {
      const double total = assignment_cost(cost, current);
      if (best.pairs.empty() ||
          total < best.total_cost - tie_tolerance(best.total_cost)) {
        best.pairs = current;
        best.total_cost = total;
      }
      return;
    }
    for (int i = next_row; i <= k - remaining; ++i) {
      for (int j = 0; j < e; ++j) {
        if (col_used[j]) continue;
        col_used[j] = 1;
        current.emplace_back(i, j);
        self(self, i + 1, partial + cost(i, j));
        current.pop_back();
        col_used[j] = 0;
      }
    }
  };
  recurse(recurse, 0, 0.0);
  return best;
}

}  // namespace dvc::matching
