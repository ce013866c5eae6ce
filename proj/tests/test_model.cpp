#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "dvc/checkpoint.hpp"
#include "dvc/data.hpp"
#include "dvc/model.hpp"

namespace dvc::model {
namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.num_queries = 5;
  c.n_enc_layers = 1;
  c.n_dec_layers = 2;
  c.n_heads = 2;
  c.ffn_dim = 32;
  c.max_events = 4;
  c.vocab_size = 12;
  c.max_caption_len = 5;
  c.n_concepts = 7;
  c.frames = 20;
  c.input_dim = 6;
  return c;
}

VideoInput random_input(const ModelConfig& c, int raw_frames, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  data::FeatureMatrix f(raw_frames, c.input_dim);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = n(rng);
  return VideoInput::from_fixed(data::resize_to_fixed_length(f, c.frames));
}

Var& param(Model& m, const std::string& name) {
  for (auto& [n, v] : const_cast<std::vector<std::pair<std::string, Var>>&>(
           m.parameters().items()))
    if (n == name) return v;
  throw std::out_of_range(name);
}

void perturb(Model& m, const std::string& name, unsigned seed, double scale = 1.0) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix& v = param(m, name).mutable_value();
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = n(rng);
}

TEST(QueryInitTest, DeterministicIndependentAndSpaced) {
  ModelConfig c = small_config();
  c.num_queries = 50;
  const QueryBank a = init_queries(c, 7), b = init_queries(c, 7);
  EXPECT_EQ(a.loc_embed.value(), b.loc_embed.value());
  EXPECT_EQ(a.cap_embed.value(), b.cap_embed.value());
  EXPECT_TRUE((a.loc_embed.value().array() != a.cap_embed.value().array()).all());
  const Matrix centers = a.centers(), widths = a.widths();
  for (int i = 0; i < 50; ++i) {
    EXPECT_NEAR(centers(i, 0), (2.0 * i + 1.0) / 100.0, 1e-12);
    EXPECT_NEAR(widths(i, 0), 1.0 / 50.0, 1e-12);
  }
  EXPECT_NEAR(centers(0, 0), 0.01, 1e-12);
  EXPECT_NEAR(centers(1, 0), 0.03, 1e-12);
}

TEST(ModelConfigTest, Validation) {
  ModelConfig c = small_config();
  c.num_queries = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.n_dec_layers = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.vocab_size = 0;
  EXPECT_THROW(Model(c, 1), std::invalid_argument);
}

TEST(EncoderTest, ShapeAndWidthCheck) {
  const ModelConfig c = small_config();
  Model m(c, 1);
  const Encoded e = m.encode(random_input(c, 20, 1));
  EXPECT_EQ(e.context.rows(), 20);
  EXPECT_EQ(e.context.cols(), 16);
  VideoInput bad = random_input(c, 20, 1);
  bad.features = Matrix::Zero(20, 5);
  EXPECT_THROW(m.encode(bad), std::invalid_argument);
}

TEST(EncoderTest, PadContentDoesNotLeak) {
  const ModelConfig c = small_config();
  Model m(c, 2);
  VideoInput in = random_input(c, 12, 3);
  ASSERT_EQ(in.n_valid, 12);
  const Matrix a = m.encode(in).context.value();
  in.features.bottomRows(8).setRandom();
  const Matrix b = m.encode(in).context.value();
  EXPECT_TRUE(a.topRows(12).isApprox(b.topRows(12), 1e-12));
  const DecoderOutput da = m.decode(m.encode(in));
  in.features.bottomRows(8).setRandom();
  const DecoderOutput db = m.decode(m.encode(in));
  EXPECT_TRUE(da.loc_feats.value().isApprox(db.loc_feats.value(), 1e-12));
}

TEST(EncoderTest, ZeroLayersIsProjectionPlusPosition) {
  ModelConfig c = small_config();
  c.n_enc_layers = 0;
  Model m(c, 4);
  const Matrix& w = param(m, "encoder.input_proj.w").value();
  const Matrix& b = param(m, "encoder.input_proj.b").value();
  Matrix offsets[2];
  for (int k = 0; k < 2; ++k) {
    const VideoInput in = random_input(c, 20, 10 + k);
    const Matrix proj = (in.features * w).rowwise() + b.row(0);
    offsets[k] = m.encode(in).context.value() - proj;
  }
  // The residual is the input-independent position table.
  EXPECT_TRUE(offsets[0].isApprox(offsets[1], 1e-12));
  EXPECT_GT(offsets[0].norm(), 0.0);
}

TEST(DecoderTest, AttentionRowsAreDistributions) {
  const ModelConfig c = small_config();
  Model m(c, 5);
  const VideoInput in = random_input(c, 14, 6);
  const DecoderOutput out = m.decode(m.encode(in), /*record=*/true);
  ASSERT_EQ(out.loc_attention.size(), 2u);
  for (const auto* recs : {&out.loc_attention, &out.cap_attention})
    for (const Matrix& a : *recs) {
      EXPECT_EQ(a.rows(), 5);
      EXPECT_EQ(a.cols(), 20);
      EXPECT_GE(a.minCoeff(), 0.0);
      for (int i = 0; i < a.rows(); ++i) {
        EXPECT_NEAR(a.row(i).leftCols(14).sum(), 1.0, 1e-9);
        EXPECT_LT(a.row(i).rightCols(6).sum(), 1e-9);
      }
    }
}

TEST(DecoderTest, RolesSeeIdenticalLocalityBias) {
  const ModelConfig c = small_config();
  Model m(c, 5);
  perturb(m, "decoder.layer0.ref_update.w", 1, 0.5);
  const DecoderOutput out = m.decode(m.encode(random_input(c, 20, 7)), true);
  ASSERT_EQ(out.loc_bias.size(), out.cap_bias.size());
  for (std::size_t l = 0; l < out.loc_bias.size(); ++l)
    EXPECT_EQ(out.loc_bias[l], out.cap_bias[l]) << "layer " << l;
}

TEST(DecoderTest, RefinedRefsStayInsideUnitInterval) {
  const ModelConfig c = small_config();
  for (unsigned s = 0; s < 20; ++s) {
    Model m(c, s);
    perturb(m, "decoder.layer0.ref_update.w", s, 3.0);
    perturb(m, "decoder.layer1.ref_update.w", s + 100, 3.0);
    const DecoderOutput out = m.decode(m.encode(random_input(c, 20, s)));
    const Matrix cl = out.center_logit.value(), wl = out.width_logit.value();
    // Logits are unbounded; the sigmoid is strictly inside (0, 1) wherever
    // a double can tell it apart from the endpoints.
    for (int i = 0; i < c.num_queries; ++i) {
      for (const double logit : {cl(i, 0), wl(i, 0)}) {
        ASSERT_TRUE(std::isfinite(logit));
        if (std::abs(logit) > 30.0) continue;
        const double v = 1.0 / (1.0 + std::exp(-logit));
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
      }
    }
    for (const Segment& r : out.refined_refs()) {
      EXPECT_GE(r.start, 0.0);
      EXPECT_LE(r.end, 1.0);
      EXPECT_LE(r.start, r.end);
    }
  }
}

TEST(DecoderTest, ZeroUpdateKeepsInitialRefs) {
  ModelConfig c = small_config();
  c.n_dec_layers = 1;
  Model m(c, 9);
  const DecoderOutput out = m.decode(m.encode(random_input(c, 20, 1)));
  EXPECT_TRUE(out.center_logit.value().isApprox(m.queries().center_logit.value()));
  EXPECT_TRUE(out.width_logit.value().isApprox(m.queries().width_logit.value()));
  const Matrix cen = m.queries().centers(), wid = m.queries().widths();
  const auto refs = out.refined_refs();
  for (int i = 0; i < c.num_queries; ++i) {
    EXPECT_NEAR(refs[i].start, std::max(0.0, cen(i, 0) - wid(i, 0) / 2), 1e-12);
    EXPECT_NEAR(refs[i].end, std::min(1.0, cen(i, 0) + wid(i, 0) / 2), 1e-12);
  }
}

TEST(LocalizationHeadTest, ZeroedHeadReturnsRefs) {
  const ModelConfig c = small_config();
  Model m(c, 3);
  perturb(m, "decoder.layer1.ref_update.w", 2, 0.5);
  param(m, "loc_head.delta.w").mutable_value().setZero();
  param(m, "loc_head.delta.b").mutable_value().setZero();
  const DecoderOutput out = m.decode(m.encode(random_input(c, 20, 2)));
  const auto segs = m.localize(out).segments();
  const auto refs = out.refined_refs();
  for (int i = 0; i < c.num_queries; ++i) {
    EXPECT_NEAR(segs[i].start, refs[i].start, 1e-12);
    EXPECT_NEAR(segs[i].end, refs[i].end, 1e-12);
  }
}

TEST(LocalizationHeadTest, CanonicalSegmentsOverRandomNets) {
  const ModelConfig c = small_config();
  for (unsigned s = 0; s < 100; ++s) {
    Model m(c, 1000 + s);
    perturb(m, "loc_head.delta.w", s, 2.0);
    perturb(m, "loc_head.delta.b", s + 7, 2.0);
    const LocalizationOutput loc = m.localize(m.decode(m.encode(random_input(c, 20, s))));
    for (const Segment& seg : loc.segments()) {
      EXPECT_GE(seg.start, 0.0);
      EXPECT_LE(seg.start, seg.end);
      EXPECT_LE(seg.end, 1.0);
    }
    for (double conf : loc.confidence_values()) {
      EXPECT_GT(conf, 0.0);
      EXPECT_LT(conf, 1.0);
    }
  }
}

TEST(CaptionHeadTest, WindowKernelDecay) {
  const Segment w{0.4, 0.5};
  const double width = 0.1, center = 0.45;
  EXPECT_DOUBLE_EQ(caption_window_weight(center, w), 1.0);
  for (double k : {3.0, 3.5, 5.0}) {
    EXPECT_LT(caption_window_weight(center + k * width, w), 1e-3);
    EXPECT_LT(caption_window_weight(center - k * width, w), 1e-3);
    EXPECT_LT(caption_window_weight(w.end + k * width, w), 1e-3);
  }
  EXPECT_NEAR(caption_window_weight(center + width, w), std::exp(-2.0), 1e-12);
  // Degenerate window uses the sigma floor.
  EXPECT_LT(caption_window_weight(0.51, Segment{0.5, 0.5}), 1e-3);
}

TEST(CaptionHeadTest, TeacherForcedShapesAndGreedyDeterminism) {
  const ModelConfig c = small_config();
  Model m(c, 11);
  const Encoded enc = m.encode(random_input(c, 20, 3));
  const DecoderOutput out = m.decode(enc);
  const std::vector<int> rows = {0, 3};
  const Var cap_rows = ad::gather_rows(out.cap_feats, rows);
  const std::vector<Segment> windows = {{0.1, 0.3}, {0.5, 0.9}};
  const std::vector<std::vector<int>> ids = {{1, 5, 6, 7}, {1, 8, 0, 0}};
  const auto logits = m.caption_logits(cap_rows, enc, windows, ids);
  ASSERT_EQ(logits.size(), 4u);
  for (const Var& l : logits) {
    EXPECT_EQ(l.rows(), 2);
    EXPECT_EQ(l.cols(), 12);
  }
  const auto g1 = m.caption_greedy(cap_rows, enc, windows);
  const auto g2 = m.caption_greedy(cap_rows, enc, windows);
  EXPECT_EQ(g1, g2);
  for (const auto& seq : g1) {
    EXPECT_LE(static_cast<int>(seq.size()), c.max_caption_len);
    for (int t : seq) {
      EXPECT_GE(t, 0);
      EXPECT_LT(t, 12);
    }
  }
}

TEST(ConceptHeadTest, RangeAndZeroWeights) {
  const ModelConfig c = small_config();
  Model m(c, 12);
  const DecoderOutput out = m.decode(m.encode(random_input(c, 20, 4)));
  const Matrix p = ad::sigmoid(m.concept_logits(out)).value();
  EXPECT_EQ(p.rows(), 5);
  EXPECT_EQ(p.cols(), 7);
  EXPECT_GT(p.minCoeff(), 0.0);
  EXPECT_LT(p.maxCoeff(), 1.0);
  param(m, "concept.out.w").mutable_value().setZero();
  param(m, "concept.out.b").mutable_value().setZero();
  const Matrix q = ad::sigmoid(m.concept_logits(out)).value();
  EXPECT_TRUE(q.isApproxToConstant(0.5));
}

TEST(CounterTest, SimplexAndQueryPermutationInvariance) {
  const ModelConfig c = small_config();
  Model m(c, 13);
  DecoderOutput out = m.decode(m.encode(random_input(c, 20, 5)));
  const Matrix r = ad::softmax_rows(m.count_logits(out)).value();
  EXPECT_EQ(r.cols(), c.max_events + 1);
  EXPECT_NEAR(r.sum(), 1.0, 1e-12);
  const std::vector<int> perm = {3, 1, 4, 0, 2};
  out.loc_feats = ad::gather_rows(out.loc_feats, perm);
  const Matrix rp = ad::softmax_rows(m.count_logits(out)).value();
  EXPECT_TRUE(r.isApprox(rp, 1e-12));
}

TEST(InferTest, SelectionCountOrderAndTopN) {
  ModelConfig c = small_config();
  c.max_events = 8;  // larger than K to exercise the clamp
  for (unsigned s = 0; s < 15; ++s) {
    Model m(c, 50 + s);
    perturb(m, "counter.out.b", s, 3.0);
    perturb(m, "loc_head.class.w", s + 1, 1.0);
    const VideoInput in = random_input(c, 20, s);
    const Inference inf = m.infer(in);
    const int n = static_cast<int>(inf.events.size());
    EXPECT_GE(n, 1);
    EXPECT_LE(n, c.num_queries);
    EXPECT_LE(inf.predicted_count, c.max_events);
    EXPECT_EQ(n, std::clamp(inf.predicted_count, 1, c.num_queries));
    for (int j = 1; j < n; ++j)
      EXPECT_LE(inf.events[j - 1].segment.start, inf.events[j].segment.start);
    std::vector<double> all = m.localize(inf.decoder).confidence_values();
    std::sort(all.rbegin(), all.rend());
    std::vector<double> chosen;
    for (const auto& e : inf.events) chosen.push_back(e.confidence);
    std::sort(chosen.rbegin(), chosen.rend());
    for (int j = 0; j < n; ++j) EXPECT_DOUBLE_EQ(chosen[j], all[j]);
    EXPECT_LE(static_cast<int>(m.infer(in, 1).events.size()), 1);
    // Same weights, same output.
    const Inference again = m.infer(in);
    ASSERT_EQ(again.events.size(), inf.events.size());
    for (int j = 0; j < n; ++j) EXPECT_EQ(again.events[j].tokens, inf.events[j].tokens);
  }
}

// Sum of every head output restricted to one role's features.
Var head_sum(const Model& m, const Encoded& enc, const DecoderOutput& out, bool cap_only) {
  if (cap_only) {
    const std::vector<int> rows = {0, 1};
    const Var cap_rows = ad::gather_rows(out.cap_feats, rows);
    const std::vector<Segment> windows = {{0.1, 0.4}, {0.3, 0.8}};
    Var total = ad::sum(m.concept_logits(out));
    for (const Var& l : m.caption_logits(cap_rows, enc, windows, {{1, 4, 5}, {1, 6, 7}}))
      total = total + ad::sum(l);
    return total;
  }
  const LocalizationOutput loc = m.localize(out);
  return ad::sum(loc.starts) + ad::sum(loc.ends) + ad::sum(loc.confidences) +
         ad::sum(m.count_logits(out));
}

TEST(RoleSeparationTest, CaptionLossesLeaveLocalizationQueriesUntouched) {
  const ModelConfig c = small_config();
  Model m(c, 21);
  perturb(m, "decoder.layer0.ref_update.w", 3, 0.5);
  const Encoded enc = m.encode(random_input(c, 20, 8));
  const DecoderOutput out = m.decode(enc);
  m.parameters().zero_grad();
  ad::backward(head_sum(m, enc, out, true));
  const Matrix g_loc = m.queries().loc_embed.grad();
  EXPECT_TRUE(g_loc.size() == 0 || g_loc.isZero(0.0));
  EXPECT_GT(m.queries().cap_embed.grad().norm(), 0.0);

  m.parameters().zero_grad();
  const DecoderOutput out2 = m.decode(enc);
  ad::backward(head_sum(m, enc, out2, false));
  const Matrix g_cap = m.queries().cap_embed.grad();
  EXPECT_TRUE(g_cap.size() == 0 || g_cap.isZero(0.0));
  EXPECT_GT(m.queries().loc_embed.grad().norm(), 0.0);
}

TEST(RoleSeparationTest, SharedQueriesWithoutRoleSplit) {
  ModelConfig c = small_config();
  c.role_specific_queries = false;
  Model m(c, 21);
  const Encoded enc = m.encode(random_input(c, 20, 8));
  const DecoderOutput out = m.decode(enc);
  EXPECT_EQ(out.cap_feats.value(), out.loc_feats.value());
}

TEST(GradientTest, EveryParameterGetsFiniteGradient) {
  const ModelConfig c = small_config();
  Model m(c, 31);
  perturb(m, "loc_head.delta.w", 1, 0.3);
  const Encoded enc = m.encode(random_input(c, 16, 9));
  const DecoderOutput out = m.decode(enc);
  m.parameters().zero_grad();
  ad::backward(head_sum(m, enc, out, true) + head_sum(m, enc, out, false));
  for (const auto& [name, v] : m.parameters().items()) {
    ASSERT_TRUE(v.has_grad()) << name;
    EXPECT_TRUE(v.grad().allFinite()) << name;
  }
}

TEST(DeterminismTest, SameSeedSameForward) {
  const ModelConfig c = small_config();
  Model a(c, 77), b(c, 77);
  const VideoInput in = random_input(c, 20, 1);
  EXPECT_EQ(a.decode(a.encode(in)).loc_feats.value(), b.decode(b.encode(in)).loc_feats.value());
  Model d(c, 78);
  EXPECT_NE(a.decode(a.encode(in)).loc_feats.value(), d.decode(d.encode(in)).loc_feats.value());
}

TEST(CheckpointTest, RoundTripReproducesInference) {
  namespace fs = std::filesystem;
  const ModelConfig c = small_config();
  Model m(c, 41);
  perturb(m, "loc_head.delta.w", 5, 0.5);
  const fs::path p = fs::temp_directory_path() / "dvc_model_test.ckpt";
  CheckpointMeta meta;
  meta.words = {"<pad>", "<bos>", "<eos>", "<unk>", "a", "b", "c", "d", "e", "f", "g", "h"};
  meta.concepts = {"a", "b"};
  meta.step = 17;
  meta.epoch = 2;
  meta.best_f1 = 0.25;
  meta.train_config = "[train]\nepochs=2\n";
  save_checkpoint(p, m, meta);
  const LoadedCheckpoint ck = load_checkpoint(p);
  EXPECT_EQ(ck.model->config(), c);
  EXPECT_EQ(ck.meta.words, meta.words);
  EXPECT_EQ(ck.meta.concepts, meta.concepts);
  EXPECT_EQ(ck.meta.step, 17);
  EXPECT_EQ(ck.meta.epoch, 2);
  EXPECT_EQ(ck.meta.best_f1, 0.25);
  EXPECT_EQ(ck.meta.train_config, meta.train_config);
  EXPECT_FALSE(ck.has_optimizer);
  const auto& pa = m.parameters().items();
  const auto& pb = ck.model->parameters().items();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second.value(), pb[i].second.value()) << pa[i].first;
  }
  const VideoInput in = random_input(c, 20, 4);
  const Inference ia = m.infer(in), ib = ck.model->infer(in);
  ASSERT_EQ(ia.events.size(), ib.events.size());
  for (std::size_t j = 0; j < ia.events.size(); ++j) {
    EXPECT_EQ(ia.events[j].segment, ib.events[j].segment);
    EXPECT_EQ(ia.events[j].tokens, ib.events[j].tokens);
  }

  // Truncation and a bad magic are reported as data errors.
  const auto size = fs::file_size(p);
  fs::resize_file(p, size - 16);
  EXPECT_THROW(load_checkpoint(p), data::DataError);
  {
    std::ofstream out(p, std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint(p), data::DataError);
  fs::remove(p);
}

TEST(AttentionDumpTest, OneLinePerRoleLayerAndSelection) {
  const ModelConfig c = small_config();
  Model m(c, 42);
  const Inference plain = m.infer(random_input(c, 20, 1), 0, false);
  std::ostringstream none;
  EXPECT_THROW(write_attention_records(none, "v", plain), std::invalid_argument);
  const Inference inf = m.infer(random_input(c, 20, 1), 0, true);
  std::ostringstream os;
  write_attention_records(os, "vid", inf);
  std::istringstream lines(os.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    ++count;
    EXPECT_EQ(line.rfind("vid\t", 0), 0u);
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 4 + c.frames);
  }
  EXPECT_EQ(count, 2 * c.n_dec_layers * static_cast<int>(inf.events.size()));
}

}  // namespace
}  // namespace dvc::model
