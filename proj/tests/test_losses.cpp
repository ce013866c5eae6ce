#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dvc/losses.hpp"

namespace dvc::losses {
namespace {

Matrix col(std::initializer_list<double> v) {
  Matrix m(static_cast<int>(v.size()), 1);
  int i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

Matrix randn(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (ad::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

// Straight-line interval overlap used only by the oracles below.
double oracle_iou(double s1, double e1, double s2, double e2) {
  const double inter = std::max(0.0, std::min(e1, e2) - std::max(s1, s2));
  const double uni = (e1 - s1) + (e2 - s2) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double osl_oracle(const std::vector<std::pair<double, double>>& p,
                  const std::vector<std::pair<double, double>>& g, double gamma,
                  double beta, double eps) {
  double total = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double pg = 0.0;
    for (const auto& gt : g)
      pg = std::max(pg, oracle_iou(p[i].first, p[i].second, gt.first, gt.second));
    const double alpha = gamma * pg + (1 - gamma) * (1 - pg);
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (i == j) continue;
      const double po = oracle_iou(p[i].first, p[i].second, p[j].first, p[j].second);
      total += -alpha * std::log(std::max(beta - po, eps));
      ++pairs;
    }
  }
  return total / pairs;
}

TEST(OslTest, AlphaAtPaperGamma) {
  EXPECT_EQ(osl_alpha(0.25, 1.0), 0.25);
  EXPECT_EQ(osl_alpha(0.25, 0.0), 0.75);
}

TEST(OslTest, DisjointPredictionsGiveZero) {
  const std::vector<Segment> gts = {{0.0, 0.3}};
  const Var s = ad::leaf(col({0.0, 0.4, 0.8}));
  const Var e = ad::leaf(col({0.2, 0.6, 1.0}));
  EXPECT_EQ(overlap_suppression(s, e, gts, OSLConfig{}).item(), 0.0);
}

TEST(OslTest, MatchesIndependentOracle) {
  const std::vector<std::pair<double, double>> p = {{0.1, 0.5}, {0.3, 0.7}, {0.45, 0.9}};
  const std::vector<std::pair<double, double>> g = {{0.1, 0.45}, {0.5, 0.95}};
  const std::vector<Segment> gts = {{0.1, 0.45}, {0.5, 0.95}};
  const Var s = ad::constant(col({0.1, 0.3, 0.45}));
  const Var e = ad::constant(col({0.5, 0.7, 0.9}));
  const double got = overlap_suppression(s, e, gts, OSLConfig{}).item();
  EXPECT_NEAR(got, osl_oracle(p, g, 0.25, 1.0, 1e-6), 1e-12);
}

TEST(OslTest, FewerThanTwoPredictionsIsZero) {
  const std::vector<Segment> gts = {{0.0, 1.0}};
  EXPECT_EQ(overlap_suppression(ad::constant(col({0.1})), ad::constant(col({0.4})),
                                gts, OSLConfig{})
                .item(),
            0.0);
}

TEST(OslTest, IdenticalPredictionsHitTheClamp) {
  const std::vector<Segment> gts = {{0.8, 0.9}};
  const double v = overlap_suppression(ad::constant(col({0.1, 0.1})),
                                       ad::constant(col({0.4, 0.4})), gts, OSLConfig{})
                       .item();
  EXPECT_NEAR(v, -0.75 * std::log(1e-6), 1e-9);
}

TEST(OslTest, ConfigValidation) {
  EXPECT_THROW((OSLConfig{0.6, 1.0, 1e-6}).validate(), std::invalid_argument);
  EXPECT_THROW((OSLConfig{0.25, 0.0, 1e-6}).validate(), std::invalid_argument);
  EXPECT_THROW((OSLConfig{0.25, 1.0, 2.0}).validate(), std::invalid_argument);
  EXPECT_NO_THROW(OSLConfig{}.validate());
  EXPECT_THROW(CTCAConfig{0.0}.validate(), std::invalid_argument);
}

TEST(OslTest, AlphaStrictlyDecreasingInPg) {
  for (double gamma : {0.0, 0.1, 0.25, 0.49}) {
    double prev = osl_alpha(gamma, 0.0);
    for (int i = 1; i <= 20; ++i) {
      const double a = osl_alpha(gamma, i / 20.0);
      EXPECT_LT(a, prev);
      EXPECT_NEAR(a - prev, (2 * gamma - 1) / 20.0, 1e-12);
      prev = a;
    }
  }
}

double ctca_oracle(const Matrix& cap, const Matrix& loc, const std::vector<int>& m,
                   double tau) {
  auto cosine = [](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return a.dot(b) / (std::max(a.norm(), 1e-8) * std::max(b.norm(), 1e-8));
  };
  double total = 0.0;
  for (int j : m) {
    double denom = 0.0;
    for (int k = 0; k < loc.rows(); ++k)
      denom += std::exp(cosine(cap.row(j), loc.row(k)) / tau);
    total += -std::log(std::exp(cosine(cap.row(j), loc.row(j)) / tau) / denom);
  }
  return total / m.size();
}

TEST(CtcaTest, SingleQueryIsExactlyZero) {
  std::mt19937_64 rng(1);
  const std::vector<int> m = {0};
  EXPECT_EQ(cross_task_alignment(ad::constant(randn(rng, 1, 5)),
                                 ad::constant(randn(rng, 1, 5)), m, CTCAConfig{})
                .item(),
            0.0);
}

TEST(CtcaTest, ClosedFormTwoQueries) {
  Matrix cap(2, 2), loc(2, 2);
  cap << 1, 0, 0.3, 0.8;
  loc << 1, 0, 0, 1;
  const std::vector<int> m = {0};
  const double v =
      cross_task_alignment(ad::constant(cap), ad::constant(loc), m, CTCAConfig{1.0}).item();
  EXPECT_NEAR(v, std::log(1 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(v, 0.3133, 1e-4);
}

TEST(CtcaTest, MatchesLoopOracle) {
  std::mt19937_64 rng(2);
  const Matrix cap = randn(rng, 8, 16), loc = randn(rng, 8, 16);
  const std::vector<int> m = {1, 4, 6};
  const double v =
      cross_task_alignment(ad::constant(cap), ad::constant(loc), m, CTCAConfig{}).item();
  EXPECT_NEAR(v, ctca_oracle(cap, loc, m, 0.1), 1e-6);
}

TEST(CtcaTest, EmptyMatchSetFlagged) {
  bool flag = false;
  const std::vector<int> none;
  std::mt19937_64 rng(3);
  EXPECT_EQ(cross_task_alignment(ad::constant(randn(rng, 3, 4)),
                                 ad::constant(randn(rng, 3, 4)), none, CTCAConfig{}, &flag)
                .item(),
            0.0);
  EXPECT_TRUE(flag);
}

TEST(CtcaTest, InvariantToRowRescalingAndNonnegative) {
  std::mt19937_64 rng(4);
  Matrix cap = randn(rng, 6, 5), loc = randn(rng, 6, 5);
  const std::vector<int> m = {0, 2, 5};
  const double base =
      cross_task_alignment(ad::constant(cap), ad::constant(loc), m, CTCAConfig{}).item();
  EXPECT_GE(base, 0.0);
  cap.row(2) *= 7.3;
  loc.row(4) *= 7.3;
  const double scaled =
      cross_task_alignment(ad::constant(cap), ad::constant(loc), m, CTCAConfig{}).item();
  EXPECT_NEAR(base, scaled, 1e-10);
}

TEST(ConceptLossTest, MaxEntropyAndSaturation) {
  Matrix labels(2, 3);
  labels << 1, 0, 1, 0, 0, 1;
  EXPECT_NEAR(concept_guider_loss(ad::constant(Matrix::Zero(2, 3)), labels).item(),
              std::log(2.0), 1e-12);
  const Matrix sat = (labels.array() * 40.0 - 20.0).matrix();
  EXPECT_LT(concept_guider_loss(ad::constant(sat), labels).item(), 1e-8);
}

TEST(ConceptLossTest, MatchesLoopOracle) {
  std::mt19937_64 rng(5);
  const Matrix logits = randn(rng, 4, 30);
  Matrix labels(4, 30);
  std::bernoulli_distribution b(0.3);
  for (ad::Index i = 0; i < labels.size(); ++i) labels(i) = b(rng);
  double total = 0.0;
  for (ad::Index i = 0; i < logits.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits(i)));
    total += -(labels(i) * std::log(p) + (1 - labels(i)) * std::log(1 - p));
  }
  EXPECT_NEAR(concept_guider_loss(ad::constant(logits), labels).item(),
              total / logits.size(), 1e-6);
}

double focal_oracle(const std::vector<double>& c, const std::vector<int>& pos,
                    double alpha, double gamma) {
  double total = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const bool y = std::find(pos.begin(), pos.end(), static_cast<int>(i)) != pos.end();
    const double p = std::clamp(c[i], 1e-12, 1 - 1e-12);
    total += y ? -alpha * std::pow(1 - p, gamma) * std::log(p)
               : -(1 - alpha) * std::pow(p, gamma) * std::log(1 - p);
  }
  return total / std::max<std::size_t>(pos.size(), 1);
}

TEST(FocalTest, MatchesLoopOracleAndGammaZeroIsWeightedBce) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::vector<double> c(7);
  for (double& x : c) x = u(rng);
  Matrix cm(7, 1);
  for (int i = 0; i < 7; ++i) cm(i, 0) = c[i];
  const std::vector<int> pos = {1, 3};
  EXPECT_NEAR(focal_cls_loss(ad::constant(cm), pos, FocalConfig{}).item(),
              focal_oracle(c, pos, 0.25, 2.0), 1e-6);
  double wbce = 0.0;
  for (int i = 0; i < 7; ++i) {
    const bool y = i == 1 || i == 3;
    wbce += y ? -0.25 * std::log(c[i]) : -0.75 * std::log(1 - c[i]);
  }
  EXPECT_NEAR(focal_cls_loss(ad::constant(cm), pos, FocalConfig{0.25, 0.0}).item(),
              wbce / 2, 1e-10);
}

TEST(FocalTest, PerfectConfidencesGiveZero) {
  const std::vector<int> pos = {0};
  EXPECT_NEAR(focal_cls_loss(ad::constant(col({1.0, 0.0, 0.0})), pos, FocalConfig{}).item(),
              0.0, 1e-9);
}

TEST(GiouLossTest, Cases) {
  const std::vector<Segment> same = {{0.1, 0.4}};
  EXPECT_NEAR(giou_loss(ad::constant(col({0.1})), ad::constant(col({0.4})), same).item(),
              0.0, 1e-12);
  const std::vector<Segment> far = {{0.9, 1.0}};
  EXPECT_NEAR(giou_loss(ad::constant(col({0.0})), ad::constant(col({0.1})), far).item(),
              1.8, 1e-12);
  const std::vector<Segment> none;
  EXPECT_EQ(giou_loss(ad::constant(Matrix(0, 1)), ad::constant(Matrix(0, 1)), none).item(),
            0.0);
}

TEST(GiouLossTest, BatchMeanMatchesLoop) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Segment> preds, gts;
  Matrix s(6, 1), e(6, 1);
  for (int i = 0; i < 6; ++i) {
    preds.push_back(canonicalize({u(rng), u(rng)}));
    gts.push_back(canonicalize({u(rng), u(rng)}));
    s(i, 0) = preds[i].start;
    e(i, 0) = preds[i].end;
  }
  double total = 0.0;
  for (int i = 0; i < 6; ++i) total += 1.0 - giou1d(preds[i], gts[i]);
  EXPECT_NEAR(giou_loss(ad::constant(s), ad::constant(e), gts).item(), total / 6, 1e-12);
}

TEST(CaptionCeTest, Cases) {
  const int v = 10;
  const std::vector<int> tokens = {4, 5, 2};
  Matrix sat = Matrix::Constant(3, v, -50.0);
  for (int t = 0; t < 3; ++t) sat(t, tokens[t]) = 50.0;
  EXPECT_LT(caption_ce(ad::constant(sat), tokens, 0).item(), 1e-12);
  EXPECT_NEAR(caption_ce(ad::constant(Matrix::Zero(3, v)), tokens, 0).item(),
              std::log(10.0), 1e-12);
  bool all_pad = false;
  const std::vector<int> pads = {0, 0};
  EXPECT_EQ(caption_ce(ad::constant(Matrix::Zero(2, v)), pads, 0, &all_pad).item(), 0.0);
  EXPECT_TRUE(all_pad);
}

TEST(CaptionCeTest, MatchesLoopOracleAndSkipsPads) {
  std::mt19937_64 rng(8);
  const Matrix logits = randn(rng, 5, 9);
  const std::vector<int> tokens = {3, 7, 0, 2, 0};
  double total = 0.0;
  int n = 0;
  for (int t = 0; t < 5; ++t) {
    if (tokens[t] == 0) continue;
    double z = 0.0;
    for (int k = 0; k < 9; ++k) z += std::exp(logits(t, k));
    total += -(logits(t, tokens[t]) - std::log(z));
    ++n;
  }
  EXPECT_NEAR(caption_ce(ad::constant(logits), tokens, 0).item(), total / n, 1e-6);
}

TEST(CaptionCeTest, BatchedFormEqualsMeanOfSequences) {
  std::mt19937_64 rng(9);
  const int steps = 4, batch = 3, v = 6;
  std::vector<Var> step_logits;
  for (int t = 0; t < steps; ++t) step_logits.push_back(ad::constant(randn(rng, batch, v)));
  const std::vector<std::vector<int>> targets = {{4, 2, 0, 0}, {5, 5, 3, 2}, {0, 0, 0, 0}};
  double total = 0.0;
  int live = 0;
  for (int b = 0; b < batch; ++b) {
    Matrix seq(steps, v);
    for (int t = 0; t < steps; ++t) seq.row(t) = step_logits[t].value().row(b);
    bool all_pad = false;
    const double ce = caption_ce(ad::constant(seq), targets[b], 0, &all_pad).item();
    if (!all_pad) {
      total += ce;
      ++live;
    }
  }
  EXPECT_NEAR(caption_ce_batch(step_logits, targets, 0).item(), total / live, 1e-12);
}

TEST(EventCountTest, Cases) {
  Matrix sat = Matrix::Constant(1, 11, -50.0);
  sat(0, 3) = 50.0;
  EXPECT_LT(event_count_ce(ad::constant(sat), 3).item(), 1e-12);
  EXPECT_NEAR(event_count_ce(ad::constant(Matrix::Zero(1, 11)), 4).item(), std::log(11.0),
              1e-12);
  Matrix last = Matrix::Zero(1, 11);
  last(0, 10) = 5.0;
  EXPECT_DOUBLE_EQ(event_count_ce(ad::constant(last), 25).item(),
                   event_count_ce(ad::constant(last), 10).item());
}

TEST(TotalLossTest, CompositionRules) {
  LossTerms raw = {1.5, 0.2, 3.0, 0.7, 0.1, 0.9, 0.4};
  LossWeights zero{0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(total_loss(raw, zero).total, 0.0);
  LossWeights single{0, 0, 1, 0, 0, 0, 0};
  EXPECT_EQ(total_loss(raw, single).total, 3.0);

  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0, 2);
  for (double& r : raw) r = u(rng);
  const LossWeights w{u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
  double dot = 0.0;
  const auto wa = w.as_array();
  for (std::size_t k = 0; k < kTermCount; ++k) dot += wa[k] * raw[k];
  const LossReport rep = total_loss(raw, w);
  EXPECT_NEAR(rep.total, dot, 1e-12);
  LossWeights w2 = w;
  w2.giou *= 2; w2.cls *= 2; w2.cap *= 2; w2.ec *= 2; w2.ctca *= 2; w2.osl *= 2; w2.cg *= 2;
  EXPECT_NEAR(total_loss(raw, w2).total, 2 * rep.total, 1e-12);

  std::array<Var, kTermCount> vars;
  for (std::size_t k = 0; k < kTermCount; ++k) vars[k] = ad::constant(raw[k]);
  EXPECT_EQ(weighted_total(vars, w).item(), rep.total);
}

TEST(TotalLossTest, LogLineFormat) {
  const LossReport rep = total_loss({1, 2, 3, 4, 5, 6, 7}, LossWeights{});
  const std::string line = rep.to_log_line(12);
  EXPECT_EQ(line.rfind("step=12 giou=1 cls=2 cap=3 ec=4 ctca=5 osl=6 cg=7 w_giou=2", 0), 0u)
      << line;
  EXPECT_NE(line.find("total="), std::string::npos);
}

}  // namespace
}  // namespace dvc::losses
