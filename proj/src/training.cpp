#include "dvc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "dvc/checkpoint.hpp"

namespace dvc::training {
namespace {

using text::WordVocabulary;

// Begin token followed by the target without its last id.
std::vector<int> shifted(const std::vector<int>& target) {
  std::vector<int> in{WordVocabulary::kBos};
  in.insert(in.end(), target.begin(), target.end() - (target.empty() ? 0 : 1));
  return in;
}

std::vector<std::vector<int>> pad_to_common(std::vector<std::vector<int>> seqs) {
  std::size_t n = 0;
  for (const auto& s : seqs) n = std::max(n, s.size());
  for (auto& s : seqs) s.resize(n, WordVocabulary::kPad);
  return seqs;
}

std::string describe_losses(const std::string& video_id,
                            const losses::LossReport& r) {
  std::ostringstream os;
  os << video_id << ":";
  for (std::size_t t = 0; t < losses::kTermCount; ++t)
    os << ' ' << losses::kTermNames[t] << '=' << r.raw[t];
  return os.str();
}

struct DropoutScope {
  DropoutScope(const model::Model& m, std::uint64_t seed) : model(m) {
    model.begin_dropout(seed);
  }
  ~DropoutScope() { model.end_dropout(); }
  const model::Model& model;
};

}  // namespace

// --- config -----------------------------------------------------------------------

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(grad_clip > 0.0, "grad_clip must be positive");
  require(warmup_steps >= 0, "warmup_steps must be >= 0");
  require(eval_every >= 1, "eval_every must be >= 1");
  require(!ctca || rsqi, "CTCA cannot be enabled without RSQI");
  try {
    weights.validate();
    osl_cfg.validate();
    ctca_cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(matching.giou >= 0.0 && matching.cap >= 0.0,
          "matching coefficients must be >= 0");
}

static void check_roles(const TrainConfig& cfg, const model::Model& m) {
  if (m.config().role_specific_queries != cfg.rsqi)
    throw ConfigError("model role_specific_queries does not match rsqi toggle");
}

// --- data ---------------------------------------------------------------------------

PreparedVideo prepare_video(const data::VideoRecord& record,
                            const WordVocabulary& words,
                            const concepts::ConceptVocabulary& concepts,
                            int frames, int max_caption_len) {
  PreparedVideo v;
  v.video_id = record.video_id;
  v.duration_s = record.duration_s;
  v.input = model::VideoInput::from_fixed(
      data::resize_to_fixed_length(record.features, frames));
  const std::vector<Segment> segs = record.normalized_segments();
  std::vector<int> order(segs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return segs[a].start < segs[b].start;
  });
  for (int i : order) {
    const auto tokens = text::tokenize(record.events[i].sentence);
    v.gts.push_back(segs[i]);
    v.captions.push_back(record.events[i].sentence);
    v.targets.push_back(words.encode(tokens, max_caption_len));
    v.labels.push_back(concepts::label_events(tokens, concepts));
  }
  return v;
}

PreparedData prepare(const data::Dataset& dataset, const TrainConfig& cfg) {
  PreparedData out;
  std::vector<std::vector<std::string>> corpus;
  std::vector<std::string> sentences;
  for (const auto& rec : dataset.train) {
    for (const auto& e : rec.events) {
      corpus.push_back(text::tokenize(e.sentence));
      sentences.push_back(e.sentence);
    }
  }
  if (corpus.empty()) throw data::DataError("training split has no captions");
  out.words = WordVocabulary::build(corpus);
  concepts::ContentLexicon lexicon;
  lexicon.allow = dataset.lexicon;
  lexicon.deny = concepts::default_stopwords();
  out.concepts =
      concepts::build_vocabulary(sentences, cfg.model.n_concepts, lexicon);
  if (out.concepts.size() == 0)
    throw data::DataError("no admissible concept tokens in training captions");
  const int frames = cfg.model.frames;
  const int t_max = cfg.model.max_caption_len;
  for (const auto& rec : dataset.train)
    out.train.push_back(prepare_video(rec, out.words, out.concepts, frames, t_max));
  for (const auto& rec : dataset.val)
    out.val.push_back(prepare_video(rec, out.words, out.concepts, frames, t_max));
  return out;
}

model::ModelConfig resolve_model_config(const TrainConfig& cfg,
                                        const PreparedData& data) {
  model::ModelConfig m = cfg.model;
  m.vocab_size = data.words.size();
  m.n_concepts = data.concepts.size();
  m.role_specific_queries = cfg.rsqi;
  if (!data.train.empty())
    m.input_dim = static_cast<int>(data.train.front().input.features.cols());
  return m;
}

// --- losses -------------------------------------------------------------------------

Eigen::MatrixXd caption_cost(const model::Model& model, const model::Encoded& enc,
                             const Var& cap_feats,
                             std::span<const Segment> windows,
                             const std::vector<std::vector<int>>& targets) {
  ad::NoGradGuard no_grad;
  const int k = static_cast<int>(cap_feats.rows());
  const int e = static_cast<int>(targets.size());
  Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(k, e);
  if (k == 0 || e == 0) return cost;
  std::vector<int> rows;
  std::vector<Segment> row_windows;
  std::vector<std::vector<int>> inputs;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < e; ++j) {
      rows.push_back(i);
      row_windows.push_back(windows[i]);
      inputs.push_back(shifted(targets[j]));
    }
  }
  const auto logits = model.caption_logits(ad::gather_rows(cap_feats, rows), enc,
                                           row_windows, pad_to_common(inputs));
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < e; ++j) {
      const int b = i * e + j;
      double total = 0.0;
      int n = 0;
      for (std::size_t t = 0; t < targets[j].size(); ++t) {
        const int id = targets[j][t];
        if (id == WordVocabulary::kPad) continue;
        const auto row = logits[t].value().row(b);
        const double mx = row.maxCoeff();
        const double lse = mx + std::log((row.array() - mx).exp().sum());
        total += lse - row(id);
        ++n;
      }
      cost(i, j) = n > 0 ? total / n : 0.0;
    }
  }
  return cost;
}

Trainer::Trainer(const TrainConfig& cfg, model::Model& model)
    : cfg_(cfg),
      model_(model),
      optimizer_(model.parameters(),
                 ad::AdamOptions{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}) {
  cfg_.validate();
  check_roles(cfg_, model_);
}

VideoLosses Trainer::video_losses(const PreparedVideo& video) const {
  using losses::Term;
  const model::Model& m = model_;
  const model::Encoded enc = m.encode(video.input);
  const model::DecoderOutput dec = m.decode(enc);
  const model::LocalizationOutput loc = m.localize(dec);
  const std::vector<Segment> segs = loc.segments();
  const std::vector<double> conf = loc.confidence_values();

  VideoLosses out;
  const Eigen::MatrixXd cap_ce =
      caption_cost(m, enc, dec.cap_feats, segs, video.targets);
  const Eigen::MatrixXd cost =
      matching::matching_cost(conf, segs, video.gts, cap_ce, cfg_.matching, cfg_.focal);
  if (!cost.allFinite())
    throw NumericError("non-finite matching cost for video " + video.video_id);
  out.match = matching::hungarian(cost);
  const std::vector<int> pred = out.match.pred_indices();
  const std::vector<int> gt = out.match.gt_indices();

  std::vector<Segment> matched_gts, matched_windows;
  std::vector<std::vector<int>> inputs, targets;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    matched_gts.push_back(video.gts[gt[p]]);
    matched_windows.push_back(segs[pred[p]]);
    targets.push_back(video.targets[gt[p]]);
    inputs.push_back(shifted(video.targets[gt[p]]));
  }

  auto& t = out.terms;
  const Var zero = ad::constant(0.0);
  t.fill(zero);
  if (!pred.empty()) {
    t[static_cast<int>(Term::kGiou)] =
        losses::giou_loss(ad::gather_rows(loc.starts, pred),
                          ad::gather_rows(loc.ends, pred), matched_gts);
    const Var rows = ad::gather_rows(dec.cap_feats, pred);
    const auto logits = m.caption_logits(rows, enc, matched_windows,
                                         pad_to_common(inputs));
    t[static_cast<int>(Term::kCap)] = losses::caption_ce_batch(
        logits, pad_to_common(targets), WordVocabulary::kPad);
  }
  t[static_cast<int>(Term::kCls)] =
      losses::focal_cls_loss(loc.confidences, pred, cfg_.focal);
  t[static_cast<int>(Term::kEc)] = losses::event_count_ce(
      m.count_logits(dec), static_cast<int>(video.gts.size()));
  if (cfg_.ctca) {
    t[static_cast<int>(Term::kCtca)] = losses::cross_task_alignment(
        dec.cap_feats, dec.loc_feats, pred, cfg_.ctca_cfg, &out.report.no_matches);
  }
  if (cfg_.osl) {
    t[static_cast<int>(Term::kOsl)] =
        losses::overlap_suppression(loc.starts, loc.ends, video.gts, cfg_.osl_cfg);
  }
  if (cfg_.cg && !pred.empty()) {
    const int nc = m.config().n_concepts;
    Matrix labels(static_cast<int>(pred.size()), nc);
    for (std::size_t p = 0; p < pred.size(); ++p)
      for (int c = 0; c < nc; ++c) labels(p, c) = video.labels[gt[p]][c];
    t[static_cast<int>(Term::kCg)] = losses::concept_guider_loss(
        ad::gather_rows(m.concept_logits(dec), pred), labels);
  }

  losses::LossTerms raw{};
  for (std::size_t i = 0; i < losses::kTermCount; ++i) raw[i] = t[i].item();
  const bool no_matches = out.report.no_matches;
  out.report = losses::total_loss(raw, cfg_.weights);
  out.report.no_matches = no_matches;
  out.report.empty_caption = pred.empty();
  out.total = losses::weighted_total(t, cfg_.weights);
  return out;
}

losses::LossReport Trainer::train_step(
    std::span<const PreparedVideo* const> batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  ad::ParameterSet& params = model_.parameters();
  params.zero_grad();

  std::vector<Var> totals;
  losses::LossReport report;
  std::string diagnostics;
  bool finite = true;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const PreparedVideo* v = batch[j];
    // Masks depend only on (seed, step, slot), so resumed runs replay them.
    const DropoutScope scope(model_, cfg_.seed * 0x9e3779b97f4a7c15ULL ^
                                         (static_cast<std::uint64_t>(step_) << 16) ^ j);
    VideoLosses vl = video_losses(*v);
    if (!std::isfinite(vl.report.total)) finite = false;
    diagnostics += describe_losses(v->video_id, vl.report) + "; ";
    for (std::size_t i = 0; i < losses::kTermCount; ++i) {
      report.raw[i] += vl.report.raw[i] / static_cast<double>(batch.size());
      report.weighted[i] += vl.report.weighted[i] / static_cast<double>(batch.size());
    }
    report.no_matches = report.no_matches || vl.report.no_matches;
    report.empty_caption = report.empty_caption || vl.report.empty_caption;
    totals.push_back(vl.total);
  }
  if (!finite)
    throw NumericError("non-finite loss at step " + std::to_string(step_) + ": " +
                       diagnostics);
  Var sum = totals[0];
  for (std::size_t i = 1; i < totals.size(); ++i) sum = sum + totals[i];
  const Var objective = ad::scale(sum, 1.0 / static_cast<double>(totals.size()));
  report.total = objective.item();
  ad::backward(objective);

  const double norm = params.grad_norm();
  if (!std::isfinite(norm))
    throw NumericError("non-finite gradient at step " + std::to_string(step_) +
                       ": " + diagnostics);
  if (norm > cfg_.grad_clip) params.scale_grads(cfg_.grad_clip / norm);
  double lr = cfg_.lr;
  if (cfg_.warmup_steps > 0)
    lr *= std::min(1.0, static_cast<double>(step_ + 1) / cfg_.warmup_steps);
  optimizer_.set_lr(lr);
  optimizer_.step();
  ++step_;
  return report;
}

// --- statistics and inference ---------------------------------------------------

OverlapStats overlap_statistics(std::span<const std::vector<Segment>> per_video) {
  OverlapStats s;
  double total = 0.0;
  for (const auto& segs : per_video) {
    for (std::size_t i = 0; i < segs.size(); ++i) {
      for (std::size_t j = i + 1; j < segs.size(); ++j) {
        const double v = tiou(segs[i], segs[j]);
        total += v;
        ++s.n_pairs;
        if (v > 0.5) ++s.pairs_above_half;
      }
    }
  }
  if (s.n_pairs > 0) s.mean_pairwise_tiou = total / static_cast<double>(s.n_pairs);
  return s;
}

std::vector<eval::VideoEvaluation> predict(const model::Model& model,
                                           std::span<const PreparedVideo> videos,
                                           const WordVocabulary& words, int topk) {
  std::vector<eval::VideoEvaluation> out;
  for (const PreparedVideo& v : videos) {
    eval::VideoEvaluation ve;
    ve.video_id = v.video_id;
    const model::Inference inf = model.infer(v.input, topk);
    for (const auto& e : inf.events)
      ve.preds.push_back({e.segment, text::join(words.decode(e.tokens)), e.confidence});
    for (std::size_t i = 0; i < v.gts.size(); ++i)
      ve.gts.push_back({v.gts[i], v.captions[i]});
    out.push_back(std::move(ve));
  }
  return out;
}

// --- fit ------------------------------------------------------------------------------

void load_parameters(model::Model& model, const std::vector<Matrix>& values) {
  const auto& items = model.parameters().items();
  if (values.size() != items.size())
    throw std::invalid_argument("load_parameters: count mismatch");
  for (std::size_t i = 0; i < items.size(); ++i) {
    Var v = items[i].second;
    if (v.rows() != values[i].rows() || v.cols() != values[i].cols())
      throw std::invalid_argument("load_parameters: shape mismatch for " +
                                  items[i].first);
    v.mutable_value() = values[i];
  }
}

std::string history_csv_header() {
  std::string h = "epoch,step,train_loss";
  for (auto name : losses::kTermNames) h += ",train_" + std::string(name);
  h += ",val_recall,val_precision,val_f1,val_bleu4,val_cider,val_soda_c,seconds";
  return h;
}

std::string history_csv_row(const EpochRecord& r) {
  char buf[64];
  std::string row = std::to_string(r.epoch) + "," + std::to_string(r.step);
  auto num = [&](double x) {
    std::snprintf(buf, sizeof(buf), ",%.9g", x);
    row += buf;
  };
  num(r.train_loss);
  for (double v : r.train_terms) num(v);
  num(r.val.localization.recall);
  num(r.val.localization.precision);
  num(r.val.localization.f1);
  num(r.val.bleu4);
  num(r.val.cider);
  num(r.val.soda_c);
  num(r.seconds);
  return row;
}

FitResult fit(const data::Dataset& dataset, const TrainConfig& cfg,
              const FitOptions& options) {
  cfg.validate();
  FitResult result;
  result.data = prepare(dataset, cfg);
  const PreparedData& data = result.data;
  if (data.train.empty()) throw data::DataError("training split is empty");

  const model::ModelConfig mcfg = resolve_model_config(cfg, data);
  result.model = std::make_unique<model::Model>(mcfg, cfg.seed);
  Trainer trainer(cfg, *result.model);
  int start_epoch = 0;
  if (options.resume) {
    model::LoadedCheckpoint ck = model::load_checkpoint(*options.resume);
    if (!(ck.model->config() == mcfg))
      throw ConfigError("resume checkpoint has a different model config");
    std::vector<Matrix> values;
    for (const auto& [name, var] : ck.model->parameters().items())
      values.push_back(var.value());
    load_parameters(*result.model, values);
    if (ck.has_optimizer) {
      trainer.optimizer().first_moments() = ck.adam_m;
      trainer.optimizer().second_moments() = ck.adam_v;
      trainer.optimizer().set_steps(ck.adam_steps);
    }
    trainer.set_step(ck.meta.step);
    start_epoch = ck.meta.epoch;
    result.best_f1 = ck.meta.best_f1;
    result.best_epoch = ck.meta.epoch;
    result.best_params = values;
    // The best weights live in a sibling best.ckpt when the run wrote one.
    const auto best_path = options.resume->parent_path() / "best.ckpt";
    if (std::filesystem::exists(best_path) &&
        !std::filesystem::equivalent(best_path, *options.resume)) {
      model::LoadedCheckpoint best = model::load_checkpoint(best_path);
      if (best.model->config() == mcfg) {
        result.best_params.clear();
        for (const auto& [name, var] : best.model->parameters().items())
          result.best_params.push_back(var.value());
        result.best_f1 = best.meta.best_f1;
        result.best_epoch = best.meta.epoch;
      }
    }
  }

  const bool write = !options.out_dir.empty();
  std::ofstream history, log_file;
  if (write) {
    std::filesystem::create_directories(options.out_dir);
    save_config(options.out_dir / "config.ini", cfg);
    const auto hist_path = options.out_dir / "history.csv";
    const bool fresh = !options.resume || !std::filesystem::exists(hist_path);
    history.open(hist_path, fresh ? std::ios::trunc : std::ios::app);
    if (fresh) history << history_csv_header() << "\n";
    log_file.open(options.out_dir / "train.log", fresh ? std::ios::trunc : std::ios::app);
  }
  model::CheckpointMeta meta;
  meta.words = data.words.words();
  meta.concepts = data.concepts.entries;
  meta.train_config = to_ini(cfg);

  std::vector<int> order(data.train.size());
  for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    int n_batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<const PreparedVideo*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i)
        batch.push_back(&data.train[order[i]]);
      const losses::LossReport r = trainer.train_step(batch);
      rec.train_loss += r.total;
      for (std::size_t i = 0; i < losses::kTermCount; ++i) rec.train_terms[i] += r.raw[i];
      ++n_batches;
      const std::string line = r.to_log_line(trainer.step());
      if (log_file.is_open()) log_file << line << "\n";
      if (options.log && options.log_every > 0 && trainer.step() % options.log_every == 0)
        *options.log << line << "\n";
    }
    rec.train_loss /= n_batches;
    for (double& v : rec.train_terms) v /= n_batches;
    rec.step = trainer.step();

    const bool evaluate_now = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
    if (evaluate_now && !data.val.empty()) {
      const auto preds = predict(*result.model, data.val, data.words);
      rec.val = eval::evaluate(preds, eval::EvalConfig{});
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (history.is_open()) history << history_csv_row(rec) << std::endl;
    if (options.log) {
      char buf[200];
      std::snprintf(buf, sizeof(buf),
                    "epoch %d step %ld loss %.5f val_f1 %.4f soda_c %.4f cider %.4f (%.1fs)",
                    epoch, rec.step, rec.train_loss, rec.val.localization.f1,
                    rec.val.soda_c, rec.val.cider, rec.seconds);
      *options.log << buf << std::endl;
    }

    if (evaluate_now && rec.val.localization.f1 > result.best_f1) {
      result.best_f1 = rec.val.localization.f1;
      result.best_epoch = epoch;
      result.best_params.clear();
      for (const auto& [name, var] : result.model->parameters().items())
        result.best_params.push_back(var.value());
      if (write) {
        meta.step = trainer.step();
        meta.epoch = epoch;
        meta.best_f1 = result.best_f1;
        model::save_checkpoint(options.out_dir / "best.ckpt", *result.model, meta);
      }
    }
    if (write) {
      meta.step = trainer.step();
      meta.epoch = epoch;
      meta.best_f1 = result.best_f1;
      model::save_checkpoint(options.out_dir / "last.ckpt", *result.model, meta,
                             &trainer.optimizer());
    }
    result.history.push_back(std::move(rec));
  }
  return result;
}

}  // namespace dvc::training
