#include "dvc/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dvc/concepts.hpp"
#include "dvc/text.hpp"

namespace dvc::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Segment> VideoRecord::normalized_segments() const {
  std::vector<Segment> out;
  out.reserve(events.size());
  for (const auto& e : events) {
    const double d = duration_s > 0.0 ? duration_s : 1.0;
    out.push_back(canonicalize({e.start_s / d, e.end_s / d}));
  }
  return out;
}

// --- annotations ---------------------------------------------------------------

AnnotationSet parse_annotations(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("annotation file does not parse: ") + e.what());
  }
  if (!doc.is_object()) throw DataError("annotation root must be an object");

  AnnotationSet out;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& id = it.key();
    const json& entry = it.value();
    auto issue = [&](const std::string& msg) {
      out.issues.push_back({id, msg});
    };
    if (!entry.is_object()) {
      issue("entry is not an object");
      continue;
    }
    if (!entry.contains("duration") || !entry["duration"].is_number()) {
      issue("missing numeric 'duration'");
      continue;
    }
    if (!entry.contains("timestamps") || !entry["timestamps"].is_array()) {
      issue("missing 'timestamps' array");
      continue;
    }
    if (!entry.contains("sentences") || !entry["sentences"].is_array()) {
      issue("missing 'sentences' array");
      continue;
    }
    const json& ts = entry["timestamps"];
    const json& ss = entry["sentences"];
    if (ts.size() != ss.size()) {
      issue("timestamps/sentences length mismatch");
      continue;
    }
    VideoRecord rec;
    rec.video_id = id;
    rec.duration_s = entry["duration"].get<double>();
    bool ok = rec.duration_s > 0.0;
    if (!ok) issue("duration must be positive");
    for (std::size_t k = 0; ok && k < ts.size(); ++k) {
      const std::string where = "event " + std::to_string(k) + ": ";
      if (!ts[k].is_array() || ts[k].size() != 2 || !ts[k][0].is_number() ||
          !ts[k][1].is_number()) {
        issue(where + "timestamp must be a [start, end] pair");
        ok = false;
        break;
      }
      if (!ss[k].is_string() || text::tokenize(ss[k].get<std::string>()).empty()) {
        issue(where + "missing caption");
        ok = false;
        break;
      }
      TimedCaption ev{ts[k][0].get<double>(), ts[k][1].get<double>(),
                      ss[k].get<std::string>()};
      if (ev.end_s < ev.start_s) {
        issue(where + "end < start");
        ok = false;
      } else if (ev.start_s < 0.0 || ev.end_s > rec.duration_s) {
        issue(where + "timestamp outside [0, duration]");
        ok = false;
      }
      rec.events.push_back(std::move(ev));
    }
    if (ok) out.records.push_back(std::move(rec));
  }
  return out;
}

AnnotationSet load_annotations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_annotations(buf.str());
}

void write_annotations(const fs::path& path,
                       const std::vector<VideoRecord>& records) {
  json doc = json::object();
  for (const auto& rec : records) {
    json ts = json::array();
    json ss = json::array();
    for (const auto& e : rec.events) {
      ts.push_back({e.start_s, e.end_s});
      ss.push_back(e.sentence);
    }
    doc[rec.video_id] = {{"duration", rec.duration_s},
                         {"timestamps", ts},
                         {"sentences", ss}};
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

// --- features --------------------------------------------------------------------

namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <typename T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& v) {
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) return false;
  v = to_little(v);
  return true;
}

}  // namespace

void write_features(const fs::path& path, const FeatureMatrix& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kFeatureMagic, sizeof(kFeatureMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(features.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(features.cols()));
  for (Eigen::Index i = 0; i < features.size(); ++i)
    put<float>(out, features.data()[i]);
}

FeatureMatrix load_features(const fs::path& path,
                            std::optional<int> expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  char magic[sizeof(kFeatureMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kFeatureMagic, sizeof(magic)) != 0)
    throw DataError("bad feature magic in " + path.string());
  std::uint32_t rows = 0, cols = 0;
  if (!get(in, rows) || !get(in, cols))
    throw DataError("truncated feature header in " + path.string());
  if (rows == 0 || cols == 0)
    throw DataError("empty feature matrix in " + path.string());
  if (expected_dim && static_cast<int>(cols) != *expected_dim)
    throw DataError("feature width " + std::to_string(cols) + " != expected " +
                    std::to_string(*expected_dim) + " in " + path.string());
  FeatureMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (!get(in, m.data()[i]))
      throw DataError("truncated feature payload in " + path.string());
  in.peek();
  if (!in.eof()) throw DataError("trailing bytes in " + path.string());
  return m;
}

FixedLengthFeatures resize_to_fixed_length(const FeatureMatrix& features,
                                           int target_length) {
  if (target_length < 1) throw std::invalid_argument("target length < 1");
  const int raw = static_cast<int>(features.rows());
  if (raw == 0) throw DataError("empty feature sequence");
  FixedLengthFeatures out;
  out.features = FeatureMatrix::Zero(target_length, features.cols());
  out.valid.assign(target_length, 0);
  if (raw > target_length) {
    for (int i = 0; i < target_length; ++i) {
      const double pos = static_cast<double>(i) * raw / target_length;
      const int src = std::min(raw - 1, static_cast<int>(std::lround(pos)));
      out.features.row(i) = features.row(src);
      out.source_index.push_back(src);
    }
    out.n_valid = target_length;
  } else {
    out.features.topRows(raw) = features;
    for (int i = 0; i < raw; ++i) out.source_index.push_back(i);
    out.n_valid = raw;
  }
  for (int i = 0; i < out.n_valid; ++i) {
    out.valid[i] = 1;
    out.frame_time.push_back((out.source_index[i] + 0.5) / raw);
  }
  return out;
}

// --- synthetic generator ------------------------------------------------------------

namespace {

const std::vector<std::string>& verbs() {
  static const std::vector<std::string> v = {
      "add",  "boil", "chop", "cut",   "fry",   "grate", "knead", "mix",
      "peel", "pour", "roll", "slice", "spread", "stir", "wash"};
  return v;
}

const std::vector<std::string>& nouns() {
  static const std::vector<std::string> n = {
      "bread", "butter", "cheese", "dough", "egg",    "garlic", "meat", "noodles",
      "oil",   "onion",  "pepper", "rice",  "salt",   "sauce",  "tomato"};
  return n;
}

}  // namespace

void SynthParams::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (n_train < 1 || n_val < 0) fail("synth: need n_train >= 1, n_val >= 0");
  if (frames_min < 2 || frames_max < frames_min) fail("synth: bad frame range");
  if (events_min < 1 || events_max < events_min) fail("synth: bad event range");
  if (events_max > events_cap) fail("synth: events_max exceeds events_cap");
  if (feature_dim < 1) fail("synth: feature_dim must be >= 1");
  if (n_classes < 1 ||
      n_classes > static_cast<int>(verbs().size() * nouns().size()))
    fail("synth: n_classes out of range");
  if (!(event_fraction_min > 0.0 && event_fraction_max >= event_fraction_min &&
        event_fraction_max <= 1.0))
    fail("synth: bad event fraction range");
  if (!(noise_sigma >= 0.0) || !(pattern_strength > noise_sigma))
    fail("synth: pattern_strength must exceed noise_sigma");
  if (!overlap_stress) {
    // Worst case: the shortest video holding the most events.
    const int min_len = std::max(
        1, static_cast<int>(std::ceil(event_fraction_min * frames_min)));
    if (events_max * min_len + events_max + 1 > frames_min)
      fail("synth: infeasible packing, too many events for the frame budget");
  }
}

SyntheticDataset synth_generate(const SynthParams& params) {
  params.validate();
  std::mt19937_64 rng(params.seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  auto uniform_int = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  auto uniform_real = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  SyntheticDataset ds;
  ds.feature_dim = params.feature_dim;

  std::vector<std::pair<int, int>> combos;
  for (int v = 0; v < static_cast<int>(verbs().size()); ++v)
    for (int n = 0; n < static_cast<int>(nouns().size()); ++n) combos.emplace_back(v, n);
  std::shuffle(combos.begin(), combos.end(), rng);
  for (int c = 0; c < params.n_classes; ++c) {
    EventClass cls{verbs()[combos[c].first], nouns()[combos[c].second]};
    ds.lexicon.insert(cls.verb);
    ds.lexicon.insert(cls.noun);
    ds.classes.push_back(cls);
    Eigen::VectorXf dir(params.feature_dim);
    for (int d = 0; d < params.feature_dim; ++d) dir(d) = normal(rng);
    dir.normalize();
    ds.directions.push_back(dir);
  }

  const int total = params.n_train + params.n_val;
  for (int v = 0; v < total; ++v) {
    VideoRecord rec;
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%05d", v);
    rec.video_id = id;
    const int frames = uniform_int(params.frames_min, params.frames_max);
    const int n_events = uniform_int(params.events_min, params.events_max);
    rec.duration_s = frames;  // 1 frame per second

    std::vector<int> lengths(n_events);
    for (int& len : lengths) {
      const double frac =
          uniform_real(params.event_fraction_min, params.event_fraction_max);
      len = std::max(1, static_cast<int>(std::lround(frac * frames)));
    }
    std::vector<int> starts(n_events);
    if (!params.overlap_stress) {
      const int used = std::accumulate(lengths.begin(), lengths.end(), 0) +
                       (n_events + 1);
      int slack = frames - used;
      while (slack < 0) {
        // Shrink the longest event until the set fits.
        auto longest = std::max_element(lengths.begin(), lengths.end());
        if (*longest <= 1)
          throw std::invalid_argument("synth: infeasible packing");
        --*longest;
        ++slack;
      }
      std::vector<double> weights(n_events + 1);
      for (double& w : weights) w = uniform_real(0.0, 1.0) + 1e-3;
      const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
      std::vector<int> gaps(n_events + 1);
      int assigned = 0;
      for (int g = 0; g <= n_events; ++g) {
        gaps[g] = 1 + static_cast<int>(std::floor(slack * weights[g] / wsum));
        assigned += gaps[g] - 1;
      }
      gaps.back() += slack - assigned;
      int at = gaps[0];
      for (int k = 0; k < n_events; ++k) {
        starts[k] = at;
        at += lengths[k] + gaps[k + 1];
      }
    } else {
      for (int k = 0; k < n_events; ++k) {
        lengths[k] = std::min(lengths[k], frames);
        if (k > 0 && (k == 1 || uniform_real(0.0, 1.0) < 0.5)) {
          // Overlap the previous event by half of its span.
          starts[k] = std::min(starts[k - 1] + std::max(1, lengths[k - 1] / 2),
                               frames - lengths[k]);
        } else {
          starts[k] = uniform_int(0, frames - lengths[k]);
        }
      }
    }

    std::vector<int> labels(n_events);
    for (int k = 0; k < n_events; ++k) {
      int c = uniform_int(0, params.n_classes - 1);
      if (k > 0 && params.n_classes > 1 && c == labels[k - 1])
        c = (c + 1) % params.n_classes;
      labels[k] = c;
    }

    rec.features.resize(frames, params.feature_dim);
    for (Eigen::Index i = 0; i < rec.features.size(); ++i)
      rec.features.data()[i] =
          static_cast<float>(params.noise_sigma) * normal(rng);
    std::vector<int> order(n_events);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return starts[a] < starts[b]; });
    std::vector<int> sorted_labels;
    for (int k : order) {
      const auto& dir = ds.directions[labels[k]];
      for (int f = starts[k]; f < starts[k] + lengths[k]; ++f)
        rec.features.row(f) +=
            static_cast<float>(params.pattern_strength) * dir.transpose();
      rec.events.push_back({static_cast<double>(starts[k]),
                            static_cast<double>(starts[k] + lengths[k]),
                            ds.classes[labels[k]].caption()});
      sorted_labels.push_back(labels[k]);
    }
    if (v < params.n_train) {
      ds.train.push_back(std::move(rec));
      ds.train_labels.push_back(std::move(sorted_labels));
    } else {
      ds.val.push_back(std::move(rec));
      ds.val_labels.push_back(std::move(sorted_labels));
    }
  }
  return ds;
}

// --- dataset directories ---------------------------------------------------------------

std::vector<std::string> write_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir / "features");
  std::vector<std::string> files;
  json manifest;
  manifest["format"] = "dvc-dataset";
  manifest["version"] = 1;
  manifest["feature_dim"] = dataset.feature_dim;
  json feature_map = json::object();
  auto emit_split = [&](const std::string& name,
                        const std::vector<VideoRecord>& records) {
    const std::string ann = name + ".json";
    write_annotations(dir / ann, records);
    files.push_back(ann);
    json ids = json::array();
    for (const auto& rec : records) {
      const std::string rel = "features/" + rec.video_id + ".bin";
      write_features(dir / rel, rec.features);
      files.push_back(rel);
      feature_map[rec.video_id] = rel;
      ids.push_back(rec.video_id);
    }
    manifest["splits"][name] = {{"annotations", ann}, {"videos", ids}};
  };
  emit_split("train", dataset.train);
  emit_split("val", dataset.val);
  manifest["features"] = feature_map;
  concepts::write_token_list(dir / "lexicon.txt", dataset.lexicon);
  files.push_back("lexicon.txt");
  manifest["lexicon"] = "lexicon.txt";
  files.push_back("manifest.json");
  manifest["files"] = files;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest");
  out << manifest.dump(1) << '\n';
  return files;
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("missing manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("manifest does not parse: ") + e.what());
  }
  Dataset ds;
  try {
    ds.feature_dim = manifest.at("feature_dim").get<int>();
    if (manifest.contains("lexicon"))
      ds.lexicon = concepts::read_token_list(
          dir / manifest["lexicon"].get<std::string>());
    for (const char* split : {"train", "val"}) {
      const json& s = manifest.at("splits").at(split);
      AnnotationSet ann = load_annotations(dir / s.at("annotations").get<std::string>());
      if (!ann.issues.empty())
        throw DataError("annotation error in " + std::string(split) + " (" +
                        ann.issues.front().video_id + "): " +
                        ann.issues.front().message);
      auto& target = std::string(split) == "train" ? ds.train : ds.val;
      for (const auto& id_json : s.at("videos")) {
        const auto id = id_json.get<std::string>();
        auto it = std::find_if(ann.records.begin(), ann.records.end(),
                               [&](const VideoRecord& r) { return r.video_id == id; });
        if (it == ann.records.end())
          throw DataError("video " + id + " listed but not annotated");
        VideoRecord rec = *it;
        rec.features = load_features(
            dir / manifest.at("features").at(id).get<std::string>(), ds.feature_dim);
        target.push_back(std::move(rec));
      }
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest schema error: ") + e.what());
  }
  return ds;
}

}  // namespace dvc::data
