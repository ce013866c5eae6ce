// Command-line entry point: synth-data, train, eval, infer, gradcheck,
// inspect.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "dvc/checkpoint.hpp"
#include "dvc/data.hpp"
#include "dvc/evaluation.hpp"
#include "dvc/gradcheck.hpp"
#include "dvc/model.hpp"
#include "dvc/training.hpp"

namespace fs = std::filesystem;
using namespace dvc;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

// --- synth-data ---------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  data::SynthParams params;
  bool force = false;
};

int cmd_synth_data(const SynthArgs& a) {
  if (fs::exists(a.out) && !fs::is_empty(a.out)) {
    if (!a.force)
      throw UsageError("output directory " + a.out.string() +
                       " is not empty (use --force)");
    for (const char* name : {"manifest.json", "train.json", "val.json", "lexicon.txt"})
      fs::remove(a.out / name);
    fs::remove_all(a.out / "features");
  }
  const data::SyntheticDataset ds = data::synth_generate(a.params);
  const auto files = data::write_dataset(a.out, ds);
  std::printf("wrote %zu files to %s (%zu train, %zu val videos)\n", files.size(),
              a.out.string().c_str(), ds.train.size(), ds.val.size());
  return kOk;
}

// --- train ----------------------------------------------------------------------

struct TrainArgs {
  fs::path data_dir;
  fs::path config;
  fs::path out = "run";
  std::optional<bool> rsqi, ctca, osl, cg;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<fs::path> resume;
  int log_every = 0;
};

int cmd_train(const TrainArgs& a) {
  training::TrainConfig cfg;
  if (!a.config.empty()) cfg = training::load_config(a.config);
  if (a.rsqi) cfg.rsqi = *a.rsqi;
  if (a.ctca) cfg.ctca = *a.ctca;
  if (a.osl) cfg.osl = *a.osl;
  if (a.cg) cfg.cg = *a.cg;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;
  if (a.lr) cfg.lr = *a.lr;
  cfg.validate();

  std::cout << "# resolved config\n" << training::to_ini(cfg) << std::flush;
  const data::Dataset ds = data::load_dataset(a.data_dir);
  training::FitOptions opts;
  opts.out_dir = a.out;
  opts.resume = a.resume;
  opts.log = &std::cout;
  opts.log_every = a.log_every;
  const training::FitResult r = training::fit(ds, cfg, opts);
  const auto& last = r.history.empty() ? training::EpochRecord{} : r.history.back();
  std::printf("val_f1=%.6f best_f1=%.6f best_epoch=%d soda_c=%.6f\n",
              last.val.localization.f1, r.best_f1, r.best_epoch, last.val.soda_c);
  return kOk;
}

// --- eval ------------------------------------------------------------------------

struct EvalArgs {
  fs::path preds, gt, out;
  std::string thresholds = "0.3,0.5,0.7,0.9";
  bool bleu_smoothing = false;
};

std::vector<eval::VideoEvaluation> join_predictions(
    const eval::PredictionFile& preds, const std::vector<data::VideoRecord>& gts) {
  std::vector<eval::VideoEvaluation> out;
  for (const auto& rec : gts) {
    eval::VideoEvaluation v;
    v.video_id = rec.video_id;
    const auto segs = rec.normalized_segments();
    for (std::size_t i = 0; i < segs.size(); ++i)
      v.gts.push_back({segs[i], rec.events[i].sentence});
    if (auto it = preds.find(rec.video_id); it != preds.end()) {
      for (const auto& p : it->second) {
        v.preds.push_back({canonicalize(Segment{p.start_s / rec.duration_s,
                                                p.end_s / rec.duration_s}),
                           p.sentence, p.confidence});
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

int cmd_eval(const EvalArgs& a) {
  eval::EvalConfig cfg;
  try {
    cfg.tiou_thresholds = eval::parse_thresholds(a.thresholds);
    cfg.bleu_smoothing = a.bleu_smoothing;
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const eval::PredictionFile preds = eval::read_predictions(a.preds);
  const data::AnnotationSet gt = data::load_annotations(a.gt);
  for (const auto& issue : gt.issues)
    std::cerr << "warning: " << issue.video_id << ": " << issue.message << "\n";
  if (gt.records.empty()) throw data::DataError("no valid ground-truth records");
  const auto videos = join_predictions(preds, gt.records);
  const eval::EvalReport report = eval::evaluate(videos, cfg);
  const std::string json = report.to_json();
  std::cout << json << "\n"
            << eval::EvalReport::csv_header() << "\n"
            << report.csv_row() << "\n";
  if (!a.out.empty()) {
    std::ofstream(a.out.string() + ".json") << json << "\n";
    std::ofstream(a.out.string() + ".csv")
        << eval::EvalReport::csv_header() << "\n" << report.csv_row() << "\n";
  }
  return kOk;
}

// --- infer / inspect ---------------------------------------------------------------

struct InferArgs {
  fs::path ckpt, data_dir, out;
  std::string split = "val";
  int topk = 0;
  bool attention = false;  // inspect only
};

struct LoadedRun {
  model::LoadedCheckpoint ck;
  text::WordVocabulary words;
  concepts::ConceptVocabulary concepts;
  std::vector<data::VideoRecord> records;
};

LoadedRun load_run(const InferArgs& a) {
  LoadedRun run;
  run.ck = model::load_checkpoint(a.ckpt);
  run.words = text::WordVocabulary::from_words(run.ck.meta.words);
  run.concepts = concepts::ConceptVocabulary::from_entries(run.ck.meta.concepts);
  data::Dataset ds = data::load_dataset(a.data_dir);
  if (a.split == "train") {
    run.records = std::move(ds.train);
  } else if (a.split == "val") {
    run.records = std::move(ds.val);
  } else {
    throw UsageError("--split must be train or val");
  }
  if (ds.feature_dim != run.ck.model->config().input_dim)
    throw data::DataError("feature width " + std::to_string(ds.feature_dim) +
                          " does not match the checkpoint (" +
                          std::to_string(run.ck.model->config().input_dim) + ")");
  return run;
}

int cmd_infer(const InferArgs& a) {
  if (a.topk < 0) throw UsageError("--topk must be >= 0");
  LoadedRun run = load_run(a);
  const model::Model& m = *run.ck.model;
  eval::PredictionFile out;
  for (const auto& rec : run.records) {
    const auto fixed = data::resize_to_fixed_length(rec.features, m.config().frames);
    const model::Inference inf = m.infer(model::VideoInput::from_fixed(fixed), a.topk);
    auto& list = out[rec.video_id];
    for (const auto& e : inf.events) {
      list.push_back({e.segment.start * rec.duration_s, e.segment.end * rec.duration_s,
                      text::join(run.words.decode(e.tokens)), e.confidence});
    }
  }
  eval::write_predictions(a.out, out);
  std::printf("wrote predictions for %zu videos to %s\n", out.size(),
              a.out.string().c_str());
  return kOk;
}

int cmd_inspect(const InferArgs& a) {
  LoadedRun run = load_run(a);
  const model::Model& m = *run.ck.model;
  std::ofstream attn_out;
  if (!a.out.empty()) {
    attn_out.open(a.out);
    if (!attn_out) throw data::DataError("cannot write " + a.out.string());
    attn_out << "video_id\trole\tlayer\tquery\trank\tweights...\n";
  }
  std::vector<std::vector<Segment>> selected;
  for (const auto& rec : run.records) {
    const auto fixed = data::resize_to_fixed_length(rec.features, m.config().frames);
    const model::Inference inf =
        m.infer(model::VideoInput::from_fixed(fixed), a.topk, /*record=*/true);
    if (attn_out.is_open()) model::write_attention_records(attn_out, rec.video_id, inf);
    std::vector<Segment> segs;
    for (const auto& e : inf.events) segs.push_back(e.segment);
    selected.push_back(std::move(segs));
  }
  const training::OverlapStats s = training::overlap_statistics(selected);
  std::printf("videos=%zu pairs=%ld mean_pairwise_tiou=%.6f pairs_above_0.5=%ld\n",
              selected.size(), s.n_pairs, s.mean_pairwise_tiou, s.pairs_above_half);
  return kOk;
}

// --- gradcheck --------------------------------------------------------------------

struct GradcheckArgs {
  std::string loss = "osl";
  int configs = 20;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const auto target = losses::parse_gradcheck_target(a.loss);
  if (!target) throw UsageError("--loss must be osl or ctca");
  if (a.configs < 1) throw UsageError("--configs must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  const losses::GradcheckSummary s = losses::run_gradcheck(*target, a.configs, a.seed);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = s.max_rel_error < a.tolerance && s.checked > 0;
  std::printf("%s loss=%s configs=%d checked=%ld skipped=%ld max_rel_error=%.3e "
              "max_abs_error=%.3e seconds=%.2f\n",
              pass ? "PASS" : "FAIL", a.loss.c_str(), s.configs, s.checked, s.skipped,
              s.max_rel_error, s.max_abs_error, secs);
  return pass ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense video captioning with role-specific queries"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* sc = app.add_subcommand("synth-data", "generate a synthetic dataset");
  sc->add_option("--out", synth.out, "output directory")->required();
  sc->add_option("--videos", synth.params.n_train, "training videos");
  sc->add_option("--val-videos", synth.params.n_val, "validation videos");
  sc->add_option("--seed", synth.params.seed, "generator seed");
  sc->add_option("--events-min", synth.params.events_min);
  sc->add_option("--events-max", synth.params.events_max);
  sc->add_option("--frames-min", synth.params.frames_min);
  sc->add_option("--frames-max", synth.params.frames_max);
  sc->add_option("--dim", synth.params.feature_dim, "feature width");
  sc->add_flag("--overlap-stress", synth.params.overlap_stress,
               "allow overlapping ground-truth events");
  sc->add_flag("--force", synth.force, "overwrite a non-empty output directory");

  TrainArgs train;
  auto* tc = app.add_subcommand("train", "train a model");
  tc->add_option("--data", train.data_dir, "dataset directory")->required();
  tc->add_option("--config", train.config, "INI config file");
  tc->add_option("--out", train.out, "run directory");
  tc->add_flag("--rsqi,!--no-rsqi", train.rsqi, "role-specific queries");
  tc->add_flag("--ctca,!--no-ctca", train.ctca, "cross-task alignment loss");
  tc->add_flag("--osl,!--no-osl", train.osl, "overlap suppression loss");
  tc->add_flag("--cg,!--no-cg", train.cg, "concept guider loss");
  tc->add_option("--epochs", train.epochs);
  tc->add_option("--seed", train.seed);
  tc->add_option("--lr", train.lr);
  tc->add_option("--resume", train.resume, "checkpoint to resume from");
  tc->add_option("--log-every", train.log_every, "print a loss line every N steps");

  EvalArgs ev;
  auto* ec = app.add_subcommand("eval", "score a prediction file");
  ec->add_option("--preds", ev.preds)->required();
  ec->add_option("--gt", ev.gt, "annotation file")->required();
  ec->add_option("--thresholds", ev.thresholds, "comma-separated tIoU thresholds");
  ec->add_option("--out", ev.out, "write <out>.json and <out>.csv");
  ec->add_flag("--bleu-smoothing", ev.bleu_smoothing);

  InferArgs inf;
  auto* ic = app.add_subcommand("infer", "write predictions for a split");
  ic->add_option("--ckpt", inf.ckpt)->required();
  ic->add_option("--data", inf.data_dir)->required();
  ic->add_option("--split", inf.split);
  ic->add_option("--out", inf.out, "prediction file")->required();
  ic->add_option("--topk", inf.topk, "cap on the number of events per video");

  InferArgs insp;
  auto* nc = app.add_subcommand("inspect", "dump attention rows and overlap statistics");
  nc->add_option("--ckpt", insp.ckpt)->required();
  nc->add_option("--data", insp.data_dir)->required();
  nc->add_option("--split", insp.split);
  nc->add_option("--out", insp.out, "attention TSV");
  nc->add_option("--topk", insp.topk);

  GradcheckArgs gc;
  auto* gcc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gcc->add_option("--loss", gc.loss, "osl or ctca");
  gcc->add_option("--configs", gc.configs, "random configurations");
  gcc->add_option("--seed", gc.seed);
  gcc->add_option("--tolerance", gc.tolerance, "max relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return kUsage;
  }

  try {
    if (*sc) return cmd_synth_data(synth);
    if (*tc) return cmd_train(train);
    if (*ec) return cmd_eval(ev);
    if (*ic) return cmd_infer(inf);
    if (*nc) return cmd_inspect(insp);
    if (*gcc) return cmd_gradcheck(gc);
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return kUsage;
  } catch (const training::ConfigError& e) {
    std::cerr << "error: config: " << one_line(e.what()) << "\n";
    return kUsage;
  } catch (const training::NumericError& e) {
    std::cerr << "error: numeric: " << one_line(e.what()) << "\n";
    return kNumeric;
  } catch (const data::DataError& e) {
    std::cerr << "error: data: " << one_line(e.what()) << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: data: " << one_line(e.what()) << "\n";
    return kData;
  }
  return kUsage;
}
