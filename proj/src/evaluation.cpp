#include "dvc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dvc/data.hpp"
#include "dvc/text.hpp"

namespace dvc::eval {

using nlohmann::json;

void EvalConfig::validate() const {
  if (tiou_thresholds.empty()) throw std::invalid_argument("no tIoU thresholds");
  double prev = 0.0;
  for (double t : tiou_thresholds) {
    if (!(t > prev && t <= 1.0))
      throw std::invalid_argument("tIoU thresholds must increase within (0, 1]");
    prev = t;
  }
  if (max_ngram < 1) throw std::invalid_argument("max_ngram must be >= 1");
  if (!(cider_sigma > 0.0)) throw std::invalid_argument("cider_sigma must be > 0");
}

std::vector<double> parse_thresholds(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used == 0) throw std::invalid_argument("bad threshold: " + item);
    out.push_back(v);
  }
  return out;
}

// --- localization ------------------------------------------------------------------

LocalizationScores localization_prf(std::span<const VideoEvaluation> videos,
                                    const EvalConfig& cfg) {
  cfg.validate();
  LocalizationScores out;
  const std::size_t nt = cfg.tiou_thresholds.size();
  std::vector<long> matched_preds(nt, 0), recalled_gts(nt, 0);
  long n_preds = 0, n_gts = 0;
  for (const auto& v : videos) {
    n_preds += static_cast<long>(v.preds.size());
    n_gts += static_cast<long>(v.gts.size());
    std::vector<double> best_pred(v.preds.size(), 0.0);
    std::vector<double> best_gt(v.gts.size(), 0.0);
    for (std::size_t i = 0; i < v.preds.size(); ++i)
      for (std::size_t j = 0; j < v.gts.size(); ++j) {
        const double iou = tiou(v.preds[i].segment, v.gts[j].segment);
        best_pred[i] = std::max(best_pred[i], iou);
        best_gt[j] = std::max(best_gt[j], iou);
      }
    for (std::size_t t = 0; t < nt; ++t) {
      const double th = cfg.tiou_thresholds[t];
      for (double b : best_pred) matched_preds[t] += b >= th ? 1 : 0;
      for (double b : best_gt) recalled_gts[t] += b >= th ? 1 : 0;
    }
  }
  for (std::size_t t = 0; t < nt; ++t) {
    out.precision_at.push_back(
        n_preds ? static_cast<double>(matched_preds[t]) / n_preds : 0.0);
    out.recall_at.push_back(
        n_gts ? static_cast<double>(recalled_gts[t]) / n_gts : 0.0);
  }
  for (std::size_t t = 0; t < nt; ++t) {
    out.precision += out.precision_at[t] / static_cast<double>(nt);
    out.recall += out.recall_at[t] / static_cast<double>(nt);
  }
  const double s = out.precision + out.recall;
  out.f1 = s > 0.0 ? 2.0 * out.precision * out.recall / s : 0.0;
  return out;
}

// --- n-gram helpers -----------------------------------------------------------------

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngram_counts(const Tokens& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

int clipped_matches(const NgramCounts& cand, const NgramCounts& ref) {
  int m = 0;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

int total_count(const NgramCounts& c) {
  int t = 0;
  for (const auto& kv : c) t += kv.second;
  return t;
}

}  // namespace

double bleu(const std::vector<Tokens>& candidates,
            const std::vector<std::vector<Tokens>>& references, int max_n,
            bool smoothing) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("bleu: candidate/reference count mismatch");
  if (candidates.empty()) return 0.0;
  std::vector<double> matches(max_n, 0.0), totals(max_n, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Tokens& cand = candidates[i];
    const auto& refs = references[i];
    cand_len += static_cast<double>(cand.size());
    // Closest reference length, shorter on ties.
    std::size_t best = 0;
    long best_diff = -1;
    for (const auto& r : refs) {
      const long diff = std::labs(static_cast<long>(r.size()) -
                                  static_cast<long>(cand.size()));
      if (best_diff < 0 || diff < best_diff ||
          (diff == best_diff && r.size() < best)) {
        best_diff = diff;
        best = r.size();
      }
    }
    ref_len += static_cast<double>(best);
    for (int n = 1; n <= max_n; ++n) {
      const NgramCounts cc = ngram_counts(cand, n);
      NgramCounts max_ref;
      for (const auto& r : refs)
        for (const auto& [g, c] : ngram_counts(r, n))
          max_ref[g] = std::max(max_ref[g], c);
      matches[n - 1] += clipped_matches(cc, max_ref);
      totals[n - 1] += total_count(cc);
    }
  }
  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    double m = matches[n - 1], t = totals[n - 1];
    if (smoothing && n > 1) {
      m += 1.0;
      t += 1.0;
    }
    if (m <= 0.0 || t <= 0.0) return 0.0;
    log_sum += std::log(m / t) / max_n;
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum);
}

double cider(const std::vector<Tokens>& candidates,
             const std::vector<std::vector<Tokens>>& references, int max_n,
             double sigma) {
  if (references.empty()) throw std::invalid_argument("cider: empty references");
  if (candidates.size() != references.size())
    throw std::invalid_argument("cider: candidate/reference count mismatch");

  using Gram = std::vector<std::string>;
  auto all_counts = [&](const Tokens& s) {
    std::map<Gram, int> counts;
    for (int n = 1; n <= max_n; ++n)
      for (auto& [g, c] : ngram_counts(s, n)) counts[g] += c;
    return counts;
  };
  std::map<Gram, double> doc_freq;
  std::vector<std::vector<std::map<Gram, int>>> ref_counts(references.size());
  for (std::size_t i = 0; i < references.size(); ++i) {
    std::set<Gram> seen;
    for (const auto& r : references[i]) {
      ref_counts[i].push_back(all_counts(r));
      for (const auto& kv : ref_counts[i].back()) seen.insert(kv.first);
    }
    for (const auto& g : seen) doc_freq[g] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(references.size()));

  struct Vec {
    std::vector<std::map<Gram, double>> v;
    std::vector<double> norm;
    int length = 0;
  };
  auto to_vec = [&](const std::map<Gram, int>& counts) {
    Vec out{std::vector<std::map<Gram, double>>(max_n),
            std::vector<double>(max_n, 0.0), 0};
    for (const auto& [g, tf] : counts) {
      auto it = doc_freq.find(g);
      const double df = std::log(std::max(1.0, it == doc_freq.end() ? 0.0 : it->second));
      const int n = static_cast<int>(g.size()) - 1;
      const double w = tf * (log_n - df);
      out.v[n][g] = w;
      out.norm[n] += w * w;
      if (n == 1) out.length += tf;
    }
    for (double& x : out.norm) x = std::sqrt(x);
    return out;
  };
  auto sim = [&](const Vec& hyp, const Vec& ref) {
    const double delta = static_cast<double>(hyp.length - ref.length);
    const double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
    std::vector<double> val(max_n, 0.0);
    for (int n = 0; n < max_n; ++n) {
      for (const auto& [g, w] : hyp.v[n]) {
        auto it = ref.v[n].find(g);
        if (it != ref.v[n].end()) val[n] += std::min(w, it->second) * it->second;
      }
      if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0)
        val[n] /= hyp.norm[n] * ref.norm[n];
      val[n] *= penalty;
    }
    return val;
  };

  double total = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Vec hyp = to_vec(all_counts(candidates[i]));
    std::vector<double> acc(max_n, 0.0);
    for (const auto& rc : ref_counts[i]) {
      const auto val = sim(hyp, to_vec(rc));
      for (int n = 0; n < max_n; ++n) acc[n] += val[n];
    }
    double mean_n = 0.0;
    for (double a : acc) mean_n += a / max_n;
    if (!ref_counts[i].empty()) mean_n /= static_cast<double>(ref_counts[i].size());
    total += 10.0 * mean_n;
  }
  return total / static_cast<double>(candidates.size());
}

double caption_fscore(const Tokens& candidate, const Tokens& reference,
                      int max_n) {
  double log_p = 0.0, log_r = 0.0;
  int orders = 0;
  for (int n = 1; n <= max_n; ++n) {
    const NgramCounts c = ngram_counts(candidate, n);
    const NgramCounts r = ngram_counts(reference, n);
    const double cc = total_count(c), rc = total_count(r);
    if (cc == 0.0 && rc == 0.0) continue;
    const double m = clipped_matches(c, r);
    const double s = n > 1 ? 1.0 : 0.0;  // add-one beyond unigrams
    const double p = cc + s > 0.0 ? (m + s) / (cc + s) : 0.0;
    const double q = rc + s > 0.0 ? (m + s) / (rc + s) : 0.0;
    if (p <= 0.0 || q <= 0.0) return 0.0;
    log_p += std::log(p);
    log_r += std::log(q);
    ++orders;
  }
  if (orders == 0) return 0.0;
  const double p = std::exp(log_p / orders), r = std::exp(log_r / orders);
  return 2.0 * p * r / (p + r);
}

double monotone_alignment_value(const std::vector<std::vector<double>>& scores) {
  const std::size_t n = scores.size();
  const std::size_t m = n ? scores[0].size() : 0;
  std::vector<std::vector<double>> dp(n + 1, std::vector<double>(m + 1, 0.0));
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      dp[i][j] = std::max({dp[i - 1][j], dp[i][j - 1],
                           dp[i - 1][j - 1] + scores[i - 1][j - 1]});
  return dp[n][m];
}

double soda_c(std::span<const VideoEvaluation> videos, const EvalConfig& cfg) {
  if (videos.empty()) return 0.0;
  double total = 0.0;
  for (const auto& v : videos) {
    if (v.preds.empty() || v.gts.empty()) continue;
    auto preds = v.preds;
    auto gts = v.gts;
    std::stable_sort(preds.begin(), preds.end(), [](const auto& a, const auto& b) {
      return a.segment.start < b.segment.start;
    });
    std::stable_sort(gts.begin(), gts.end(), [](const auto& a, const auto& b) {
      return a.segment.start < b.segment.start;
    });
    std::vector<Tokens> gt_tokens;
    for (const auto& g : gts) gt_tokens.push_back(text::tokenize(g.caption));
    std::vector<std::vector<double>> scores(preds.size(),
                                            std::vector<double>(gts.size(), 0.0));
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const Tokens cand = text::tokenize(preds[i].caption);
      for (std::size_t j = 0; j < gts.size(); ++j) {
        const double iou = tiou(preds[i].segment, gts[j].segment);
        if (iou <= 0.0) continue;
        scores[i][j] = iou * caption_fscore(cand, gt_tokens[j], cfg.max_ngram);
      }
    }
    const double aligned = monotone_alignment_value(scores);
    const double p = aligned / static_cast<double>(preds.size());
    const double r = aligned / static_cast<double>(gts.size());
    total += p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return total / static_cast<double>(videos.size());
}

// --- full report ------------------------------------------------------------------------

EvalReport evaluate(std::span<const VideoEvaluation> videos,
                    const EvalConfig& cfg) {
  cfg.validate();
  EvalReport report;
  report.n_videos = static_cast<int>(videos.size());
  report.thresholds = cfg.tiou_thresholds;
  report.localization = localization_prf(videos, cfg);
  // Never produced by the tokenizer, so it matches nothing.
  const Tokens no_match = {"\x01"};
  for (double th : cfg.tiou_thresholds) {
    std::vector<Tokens> cands;
    std::vector<std::vector<Tokens>> refs;
    for (const auto& v : videos) {
      for (const auto& p : v.preds) {
        std::vector<Tokens> matched;
        for (const auto& g : v.gts)
          if (tiou(p.segment, g.segment) >= th)
            matched.push_back(text::tokenize(g.caption));
        if (matched.empty()) matched.push_back(no_match);
        cands.push_back(text::tokenize(p.caption));
        refs.push_back(std::move(matched));
      }
    }
    const double b = bleu(cands, refs, cfg.max_ngram, cfg.bleu_smoothing);
    const double c = cands.empty() ? 0.0
                                   : cider(cands, refs, cfg.max_ngram, cfg.cider_sigma);
    report.bleu4_at.push_back(b);
    report.cider_at.push_back(c);
    report.bleu4 += b / static_cast<double>(cfg.tiou_thresholds.size());
    report.cider += c / static_cast<double>(cfg.tiou_thresholds.size());
  }
  report.soda_c = soda_c(videos, cfg);
  return report;
}

std::string EvalReport::to_json() const {
  json j;
  j["n_videos"] = n_videos;
  j["recall"] = localization.recall;
  j["precision"] = localization.precision;
  j["f1"] = localization.f1;
  j["bleu4"] = bleu4;
  j["cider"] = cider;
  j["soda_c"] = soda_c;
  j["meteor"] = nullptr;
  j["thresholds"] = thresholds;
  j["recall_at"] = localization.recall_at;
  j["precision_at"] = localization.precision_at;
  j["bleu4_at"] = bleu4_at;
  j["cider_at"] = cider_at;
  return j.dump(1);
}

std::string EvalReport::csv_header() {
  return "n_videos,recall,precision,f1,bleu4,cider,soda_c,meteor";
}

std::string EvalReport::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,", n_videos,
                localization.recall, localization.precision, localization.f1,
                bleu4, cider, soda_c);
  return buf;
}

// --- prediction files --------------------------------------------------------------------

void write_predictions(const std::filesystem::path& path,
                       const PredictionFile& preds) {
  json results = json::object();
  for (const auto& [vid, events] : preds) {
    json arr = json::array();
    for (const auto& e : events)
      arr.push_back({{"timestamp", {e.start_s, e.end_s}},
                     {"sentence", e.sentence},
                     {"confidence", e.confidence}});
    results[vid] = arr;
  }
  json doc = {{"version", "dvc-predictions-1"}, {"results", results}};
  std::ofstream out(path);
  if (!out) throw data::DataError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

PredictionFile parse_predictions(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw data::DataError(std::string("prediction file does not parse: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("results") || !doc["results"].is_object())
    throw data::DataError("prediction file needs a 'results' object");
  PredictionFile out;
  for (auto it = doc["results"].begin(); it != doc["results"].end(); ++it) {
    if (!it.value().is_array())
      throw data::DataError("results for " + it.key() + " must be an array");
    auto& list = out[it.key()];
    for (const auto& e : it.value()) {
      if (!e.contains("timestamp") || !e["timestamp"].is_array() ||
          e["timestamp"].size() != 2 || !e["timestamp"][0].is_number() ||
          !e["timestamp"][1].is_number() || !e.contains("sentence") ||
          !e["sentence"].is_string())
        throw data::DataError("malformed prediction in " + it.key());
      TimedPrediction p;
      p.start_s = e["timestamp"][0].get<double>();
      p.end_s = e["timestamp"][1].get<double>();
      p.sentence = e["sentence"].get<std::string>();
      if (e.contains("confidence") && e["confidence"].is_number())
        p.confidence = e["confidence"].get<double>();
      list.push_back(std::move(p));
    }
  }
  return out;
}

PredictionFile read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data::DataError("cannot open prediction file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_predictions(buf.str());
}

}  // namespace dvc::eval
