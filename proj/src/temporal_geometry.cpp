#include "dvc/temporal_geometry.hpp"

#include <algorithm>
#include <utility>

namespace dvc {

Segment canonicalize(Segment s) {
  if (s.start > s.end) std::swap(s.start, s.end);
  s.start = std::clamp(s.start, 0.0, 1.0);
  s.end = std::clamp(s.end, 0.0, 1.0);
  return s;
}

double tiou(const Segment& a, const Segment& b) {
  const double inter =
      std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double giou1d(const Segment& a, const Segment& b) {
  const double hull = std::max(a.end, b.end) - std::min(a.start, b.start);
  if (hull <= 0.0) return 0.0;
  const double inter =
      std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  return tiou(a, b) - (hull - uni) / hull;
}

std::vector<std::vector<double>> pairwise_tiou(std::span<const Segment> xs,
                                               std::span<const Segment> ys) {
  std::vector<std::vector<double>> out(xs.size(),
                                       std::vector<double>(ys.size(), 0.0));
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < ys.size(); ++j) out[i][j] = tiou(xs[i], ys[j]);
  return out;
}

}  // namespace dvc
