#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>

#include "dvc/checkpoint.hpp"
#include "dvc/data.hpp"
#include "dvc/training.hpp"

namespace dvc::training {
namespace {

namespace fs = std::filesystem;
using losses::Term;

data::Dataset tiny_dataset(std::uint64_t seed) {
  data::SynthParams p;
  p.n_train = 6;
  p.n_val = 3;
  p.frames_min = 40;
  p.frames_max = 60;
  p.feature_dim = 8;
  p.seed = seed;
  return data::synth_generate(p);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 3;
  c.lr = 1e-3;
  c.grad_clip = 1.0;
  c.model.d_model = 16;
  c.model.num_queries = 4;
  c.model.n_enc_layers = 1;
  c.model.n_dec_layers = 2;
  c.model.n_heads = 2;
  c.model.ffn_dim = 32;
  c.model.max_events = 6;
  c.model.max_caption_len = 5;
  c.model.n_concepts = 8;
  c.model.frames = 32;
  return c;
}

struct TinySetup {
  PreparedData data;
  std::unique_ptr<model::Model> model;
};

TinySetup make_setup(const TrainConfig& cfg, std::uint64_t data_seed = 1) {
  TinySetup s;
  s.data = prepare(tiny_dataset(data_seed), cfg);
  s.model = std::make_unique<model::Model>(resolve_model_config(cfg, s.data), cfg.seed);
  return s;
}

std::vector<const PreparedVideo*> batch_of(const PreparedData& d) {
  std::vector<const PreparedVideo*> b;
  for (const auto& v : d.train) b.push_back(&v);
  return b;
}

TEST(ConfigTest, IniRoundTrip) {
  TrainConfig c = tiny_config();
  c.lr = 0.000123456789012345;
  c.weight_decay = 3e-5;
  c.warmup_steps = 17;
  c.seed = 987654321;
  c.osl = false;
  c.cg = false;
  c.weights.giou = 2.5;
  c.weights.osl = 0.125;
  c.osl_cfg.gamma = 0.3;
  c.osl_cfg.beta = 1.25;
  c.ctca_cfg.tau = 0.07;
  c.focal.alpha = 0.3;
  c.matching.cap = 0.75;
  c.model.role_specific_queries = true;
  const TrainConfig back = from_ini(to_ini(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(from_ini(to_ini(TrainConfig{})), TrainConfig{});

  const fs::path p = fs::temp_directory_path() / "dvc_cfg_test.ini";
  save_config(p, c);
  EXPECT_EQ(load_config(p), c);
  fs::remove(p);
}

TEST(ConfigTest, RejectsUnknownAndMalformed) {
  EXPECT_THROW(from_ini("[train]\nepochz=3\n"), ConfigError);
  EXPECT_THROW(from_ini("[nosuch]\nx=1\n"), ConfigError);
  EXPECT_THROW(from_ini("[train]\nepochs=three\n"), ConfigError);
  EXPECT_THROW(from_ini("[toggles]\nosl=maybe\n"), ConfigError);
  EXPECT_THROW(from_ini("[train]\nlr=-1\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.ini"), ConfigError);
  EXPECT_EQ(from_ini("[train]\nepochs=7\n").epochs, 7);
}

TEST(ConfigTest, CtcaRequiresRsqi) {
  TrainConfig c = tiny_config();
  c.rsqi = false;
  c.ctca = true;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(from_ini("[toggles]\nrsqi=false\nctca=true\n"), ConfigError);
  c.ctca = false;
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainerTest, ModelRoleFlagMustMatchToggle) {
  TrainConfig c = tiny_config();
  TinySetup s = make_setup(c);
  TrainConfig off = c;
  off.rsqi = false;
  off.ctca = false;
  EXPECT_THROW(Trainer(off, *s.model), ConfigError);
}

TEST(TrainerTest, AllOffIsBaselineLossSet) {
  TrainConfig c = tiny_config();
  c.rsqi = c.ctca = c.osl = c.cg = false;
  TinySetup s = make_setup(c);
  Trainer t(c, *s.model);
  const VideoLosses vl = t.video_losses(s.data.train[0]);
  for (Term x : {Term::kCtca, Term::kOsl, Term::kCg})
    EXPECT_EQ(vl.report.weighted[static_cast<int>(x)], 0.0);
  const auto w = c.weights.as_array();
  double expect = 0.0;
  for (Term x : {Term::kGiou, Term::kCls, Term::kCap, Term::kEc}) {
    const int i = static_cast<int>(x);
    EXPECT_GT(vl.report.raw[i], 0.0);
    expect += w[i] * vl.report.raw[i];
  }
  EXPECT_NEAR(vl.report.total, expect, 1e-12);
  EXPECT_NEAR(vl.total.item(), expect, 1e-12);
}

TEST(TrainerTest, AllOnReportsEveryTerm) {
  const TrainConfig c = tiny_config();
  TinySetup s = make_setup(c);
  Trainer t(c, *s.model);
  const VideoLosses vl = t.video_losses(s.data.train[1]);
  EXPECT_EQ(vl.match.pairs.size(),
            std::min<std::size_t>(c.model.num_queries, s.data.train[1].gts.size()));
  double sum = 0.0;
  for (std::size_t i = 0; i < losses::kTermCount; ++i) {
    EXPECT_TRUE(std::isfinite(vl.report.raw[i]));
    EXPECT_NEAR(vl.report.weighted[i], c.weights.as_array()[i] * vl.report.raw[i], 1e-12);
    sum += vl.report.weighted[i];
  }
  EXPECT_NEAR(vl.report.total, sum, 1e-12);
  EXPECT_GT(vl.report.raw[static_cast<int>(Term::kCg)], 0.0);
}

TEST(TrainerTest, StepIsDeterministic) {
  const TrainConfig c = tiny_config();
  TinySetup a = make_setup(c), b = make_setup(c);
  Trainer ta(c, *a.model), tb(c, *b.model);
  for (int k = 0; k < 2; ++k) {
    const auto ra = ta.train_step(batch_of(a.data));
    const auto rb = tb.train_step(batch_of(b.data));
    EXPECT_EQ(ra.raw, rb.raw);
    EXPECT_EQ(ra.total, rb.total);
  }
  const auto& pa = a.model->parameters().items();
  const auto& pb = b.model->parameters().items();
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_EQ(pa[i].second.value(), pb[i].second.value()) << pa[i].first;
  EXPECT_EQ(ta.step(), 2);
}

TEST(TrainerTest, StepReportIsBatchMean) {
  const TrainConfig c = tiny_config();
  TinySetup s = make_setup(c);
  Trainer t(c, *s.model);
  double mean = 0.0;
  for (const auto& v : s.data.train) mean += t.video_losses(v).report.total;
  mean /= static_cast<double>(s.data.train.size());
  EXPECT_NEAR(t.train_step(batch_of(s.data)).total, mean, 1e-9);
}

TEST(TrainerTest, ConceptGradientsFollowToggle) {
  for (bool cg : {false, true}) {
    TrainConfig c = tiny_config();
    c.cg = cg;
    TinySetup s = make_setup(c);
    Trainer t(c, *s.model);
    s.model->parameters().zero_grad();
    ad::backward(t.video_losses(s.data.train[0]).total);
    double norm = 0.0;
    for (const auto& [name, v] : s.model->parameters().items())
      if (name.rfind("concept.", 0) == 0 && v.has_grad()) norm += v.grad().squaredNorm();
    if (cg) {
      EXPECT_GT(norm, 0.0);
    } else {
      EXPECT_EQ(norm, 0.0);
    }
  }
}

TEST(TrainerTest, OslToggleLeavesOtherTermsAtStepZero) {
  TrainConfig on = tiny_config(), off = tiny_config();
  off.osl = false;
  TinySetup a = make_setup(on), b = make_setup(off);
  Trainer ta(on, *a.model), tb(off, *b.model);
  for (std::size_t v = 0; v < a.data.train.size(); ++v) {
    const auto ra = ta.video_losses(a.data.train[v]).report;
    const auto rb = tb.video_losses(b.data.train[v]).report;
    for (std::size_t i = 0; i < losses::kTermCount; ++i) {
      if (i == static_cast<std::size_t>(Term::kOsl)) continue;
      EXPECT_EQ(ra.raw[i], rb.raw[i]) << losses::kTermNames[i];
    }
    EXPECT_EQ(rb.weighted[static_cast<int>(Term::kOsl)], 0.0);
  }
}

TEST(TrainerTest, NonFiniteLossRaises) {
  const TrainConfig c = tiny_config();
  TinySetup s = make_setup(c);
  Trainer t(c, *s.model);
  for (auto& [name, v] : const_cast<std::vector<std::pair<std::string, ad::Var>>&>(
           s.model->parameters().items()))
    if (name == "loc_head.class.b")
      v.mutable_value().setConstant(std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(t.train_step(batch_of(s.data)), NumericError);
}

TEST(PredictTest, EvaluationFormAndTopk) {
  const TrainConfig c = tiny_config();
  TinySetup s = make_setup(c);
  const auto preds = predict(*s.model, s.data.val, s.data.words, 2);
  ASSERT_EQ(preds.size(), s.data.val.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    EXPECT_EQ(preds[i].video_id, s.data.val[i].video_id);
    EXPECT_LE(preds[i].preds.size(), 2u);
    EXPECT_EQ(preds[i].gts.size(), s.data.val[i].gts.size());
  }
}

TEST(OverlapStatsTest, Cases) {
  const std::vector<std::vector<Segment>> single = {{{0.1, 0.2}}, {{0.5, 0.9}}};
  const OverlapStats a = overlap_statistics(single);
  EXPECT_EQ(a.n_pairs, 0);
  EXPECT_EQ(a.mean_pairwise_tiou, 0.0);

  const std::vector<std::vector<Segment>> dup = {{{0.1, 0.4}, {0.1, 0.4}, {0.1, 0.4}}};
  const OverlapStats b = overlap_statistics(dup);
  EXPECT_EQ(b.n_pairs, 3);
  EXPECT_DOUBLE_EQ(b.mean_pairwise_tiou, 1.0);
  EXPECT_EQ(b.pairs_above_half, 3);

  const std::vector<Segment> three = {{0.0, 0.4}, {0.2, 0.6}, {0.3, 1.0}};
  double total = 0.0;
  long above = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i < j) {
        const double inter = std::max(0.0, std::min(three[i].end, three[j].end) -
                                               std::max(three[i].start, three[j].start));
        const double uni = (three[i].end - three[i].start) +
                           (three[j].end - three[j].start) - inter;
        total += inter / uni;
        above += inter / uni > 0.5;
      }
  const std::vector<std::vector<Segment>> one = {three};
  const OverlapStats c = overlap_statistics(one);
  EXPECT_EQ(c.n_pairs, 3);
  EXPECT_NEAR(c.mean_pairwise_tiou, total / 3.0, 1e-12);
  EXPECT_EQ(c.pairs_above_half, above);
}

TEST(FitTest, HistoryBestCheckpointAndResume) {
  const fs::path dir = fs::temp_directory_path() / "dvc_fit_test";
  fs::remove_all(dir);
  const data::Dataset ds = tiny_dataset(3);
  TrainConfig c = tiny_config();
  c.epochs = 3;
  FitOptions opt;
  opt.out_dir = dir;
  const FitResult r = fit(ds, c, opt);
  ASSERT_EQ(r.history.size(), 3u);
  double best = -1.0;
  int best_epoch = 0;
  for (const auto& e : r.history)
    if (e.val.localization.f1 > best) {
      best = e.val.localization.f1;
      best_epoch = e.epoch;
    }
  EXPECT_EQ(r.best_f1, best);
  EXPECT_EQ(r.best_epoch, best_epoch);
  for (const char* f : {"config.ini", "history.csv", "train.log", "best.ckpt", "last.ckpt"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const model::LoadedCheckpoint best_ck = model::load_checkpoint(dir / "best.ckpt");
  EXPECT_EQ(best_ck.meta.best_f1, best);
  EXPECT_EQ(best_ck.meta.epoch, best_epoch);
  EXPECT_EQ(load_config(dir / "config.ini"), c);

  std::ifstream hist(dir / "history.csv");
  std::string line;
  int lines = 0;
  while (std::getline(hist, line)) ++lines;
  EXPECT_EQ(lines, 1 + 3);

  const long steps_per_epoch = (6 + c.batch_size - 1) / c.batch_size;
  EXPECT_EQ(r.history.back().step, 3 * steps_per_epoch);

  TrainConfig more = c;
  more.epochs = 5;
  FitOptions resume = opt;
  resume.resume = dir / "last.ckpt";
  const FitResult r2 = fit(ds, more, resume);
  ASSERT_EQ(r2.history.size(), 2u);
  EXPECT_EQ(r2.history.front().epoch, 4);
  EXPECT_EQ(r2.history.front().step, 4 * steps_per_epoch);
  EXPECT_GE(r2.best_f1, r.best_f1);
  fs::remove_all(dir);
}

TEST(FitTest, ResumeMatchesUninterruptedRun) {
  const fs::path dir = fs::temp_directory_path() / "dvc_fit_resume";
  fs::remove_all(dir);
  const data::Dataset ds = tiny_dataset(4);
  TrainConfig c = tiny_config();
  c.epochs = 2;
  const FitResult full = fit(ds, c);
  TrainConfig first = c;
  first.epochs = 1;
  FitOptions opt;
  opt.out_dir = dir;
  fit(ds, first, opt);
  opt.resume = dir / "last.ckpt";
  const FitResult resumed = fit(ds, c, opt);
  const auto& pa = full.model->parameters().items();
  const auto& pb = resumed.model->parameters().items();
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_EQ(pa[i].second.value(), pb[i].second.value()) << pa[i].first;
  fs::remove_all(dir);
}

}  // namespace
}  // namespace dvc::training
