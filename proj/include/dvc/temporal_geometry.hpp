#ifndef DVC_TEMPORAL_GEOMETRY_HPP_
#define DVC_TEMPORAL_GEOMETRY_HPP_

// 1-D interval arithmetic in normalized video time.

#include <span>
#include <vector>

namespace dvc {

struct Segment {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  double center() const { return 0.5 * (start + end); }
  bool operator==(const Segment&) const = default;
};

// Swaps reversed endpoints, then clamps both into [0,1].
Segment canonicalize(Segment s);

// |a n b| / |a u b|; 0 whenever the union has zero measure.
double tiou(const Segment& a, const Segment& b);

// tiou(a,b) - |C \ (a u b)| / |C| with C the enclosing hull; 0 if |C| == 0.
double giou1d(const Segment& a, const Segment& b);

// Row-major |xs| x |ys| matrix of tiou values.
std::vector<std::vector<double>> pairwise_tiou(std::span<const Segment> xs,
                                               std::span<const Segment> ys);

}  // namespace dvc

#endif  // DVC_TEMPORAL_GEOMETRY_HPP_
