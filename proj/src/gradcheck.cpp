#include "dvc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dvc/autodiff.hpp"
#include "dvc/losses.hpp"

namespace dvc::losses {
namespace {

Segment random_segment(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double a = u(rng), b = u(rng);
  if (a > b) std::swap(a, b);
  if (b - a < 0.05) b = std::min(1.0, a + 0.05 + 0.1 * u(rng));
  return Segment{a, b};
}

double overlap_len(double s1, double e1, double s2, double e2) {
  return std::min(e1, e2) - std::max(s1, s2);
}

// True when the current segments sit within `margin` of a point where the
// loss is not differentiable.
bool near_kink(const Matrix& s, const Matrix& e, const std::vector<Segment>& gts,
               const OSLConfig& cfg, double margin) {
  const Eigen::Index k = s.rows();
  std::vector<double> pts;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (e(i) - s(i) < margin) return true;
    pts.push_back(s(i));
    pts.push_back(e(i));
  }
  for (const Segment& g : gts) {
    pts.push_back(g.start);
    pts.push_back(g.end);
  }
  std::sort(pts.begin(), pts.end());
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (pts[i] - pts[i - 1] < margin) return true;
  for (Eigen::Index i = 0; i < k; ++i) {
    // Best-GT tie and the clamp of beta - P_o.
    std::vector<double> t;
    for (const Segment& g : gts) t.push_back(tiou(Segment{s(i), e(i)}, g));
    std::sort(t.rbegin(), t.rend());
    if (t.size() > 1 && t[0] - t[1] < margin) return true;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (i == j) continue;
      const double po = tiou(Segment{s(i), e(i)}, Segment{s(j), e(j)});
      if (std::abs(cfg.beta - po - cfg.epsilon) < margin) return true;
      if (std::abs(overlap_len(s(i), e(i), s(j), e(j))) < margin) return true;
    }
    for (const Segment& g : gts)
      if (std::abs(overlap_len(s(i), e(i), g.start, g.end)) < margin) return true;
  }
  return false;
}

void merge(GradcheckSummary& into, const ad::GradCheckResult& r) {
  into.max_rel_error = std::max(into.max_rel_error, r.max_rel_error);
  into.max_abs_error = std::max(into.max_abs_error, r.max_abs_error);
  into.checked += r.checked;
  into.skipped += r.skipped;
  ++into.configs;
}

}  // namespace

std::optional<GradcheckTarget> parse_gradcheck_target(const std::string& name) {
  if (name == "osl") return GradcheckTarget::kOsl;
  if (name == "ctca") return GradcheckTarget::kCtca;
  return std::nullopt;
}

GradcheckSummary run_gradcheck(GradcheckTarget target, int n_configs,
                               std::uint64_t seed, double step) {
  std::mt19937_64 rng(seed);
  GradcheckSummary summary;
  for (int c = 0; c < n_configs; ++c) {
    if (target == GradcheckTarget::kOsl) {
      std::uniform_int_distribution<int> kd(2, 6), ed(1, 3);
      std::uniform_real_distribution<double> bd(1.0, 1.5);
      const int k = kd(rng), e = ed(rng);
      OSLConfig cfg;
      cfg.beta = bd(rng);
      Matrix s(k, 1), en(k, 1);
      for (int i = 0; i < k; ++i) {
        const Segment seg = random_segment(rng);
        s(i) = seg.start;
        en(i) = seg.end;
      }
      std::vector<Segment> gts;
      for (int j = 0; j < e; ++j) gts.push_back(random_segment(rng));
      Var vs = ad::leaf(s), ve = ad::leaf(en);
      const double margin = 3.0 * step;
      merge(summary,
            ad::gradcheck([&] { return overlap_suppression(vs, ve, gts, cfg); },
                          {vs, ve}, step,
                          [&] { return near_kink(vs.value(), ve.value(), gts, cfg, margin); }));
    } else {
      std::uniform_int_distribution<int> kd(2, 8), dd(2, 16);
      const int k = kd(rng), d = dd(rng);
      std::normal_distribution<double> n(0.0, 1.0);
      Matrix cap(k, d), loc(k, d);
      for (int i = 0; i < k * d; ++i) {
        cap(i) = n(rng);
        loc(i) = n(rng);
      }
      std::vector<int> matched;
      std::bernoulli_distribution pick(0.6);
      for (int i = 0; i < k; ++i)
        if (pick(rng)) matched.push_back(i);
      if (matched.empty()) matched.push_back(static_cast<int>(rng() % k));
      Var vc = ad::leaf(cap), vl = ad::leaf(loc);
      const CTCAConfig cfg;
      merge(summary,
            ad::gradcheck([&] { return cross_task_alignment(vc, vl, matched, cfg); },
                          {vc, vl}, step));
    }
  }
  return summary;
}

}  // namespace dvc::losses
