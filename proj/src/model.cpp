#include "dvc/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dvc/text.hpp"

namespace dvc::model {
namespace {

constexpr double kMaskBias = -1e9;
constexpr double kWindowSigmaFloor = 1e-3;

double logit(double p) { return std::log(p / (1.0 - p)); }

Matrix uniform(std::mt19937_64& rng, int rows, int cols, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = dist(rng);
  return m;
}

Matrix normal(std::mt19937_64& rng, int rows, int cols, double sigma) {
  std::normal_distribution<double> dist(0.0, sigma);
  Matrix m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = dist(rng);
  return m;
}

Matrix sinusoidal_table(int frames, int d) {
  Matrix pe(frames, d);
  for (int p = 0; p < frames; ++p) {
    for (int i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / d);
      pe(p, i) = (i % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
    }
  }
  return pe;
}

Segment window_of(double center, double width) {
  return Segment{std::clamp(center - 0.5 * width, 0.0, 1.0),
                 std::clamp(center + 0.5 * width, 0.0, 1.0)};
}

// Log of the soft caption window for each row's segment; pads get kMaskBias.
Matrix window_log_bias(const Encoded& enc, std::span<const Segment> windows) {
  const int frames = static_cast<int>(enc.frame_time.cols());
  Matrix bias(static_cast<int>(windows.size()), frames);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const double c = windows[b].center();
    const double sigma = std::max(0.5 * windows[b].length(), kWindowSigmaFloor);
    for (int f = 0; f < frames; ++f) {
      if (enc.key_bias(0, f) < 0.0) {
        bias(b, f) = kMaskBias;
      } else {
        const double z = (enc.frame_time(0, f) - c) / sigma;
        bias(b, f) = -0.5 * z * z;
      }
    }
  }
  return bias;
}

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("model config: ") + what);
  };
  require(d_model >= 1, "d_model must be >= 1");
  require(num_queries >= 1, "K must be >= 1");
  require(n_enc_layers >= 0, "n_enc_layers must be >= 0");
  require(n_dec_layers >= 1, "n_dec_layers must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(n_heads >= 1 && d_model % n_heads == 0,
          "n_heads must divide d_model");
  require(ffn_dim >= 1, "ffn_dim must be >= 1");
  require(max_events >= 1, "L_max must be >= 1");
  require(vocab_size > text::WordVocabulary::kUnk,
          "vocabulary is empty");
  require(max_caption_len >= 1, "T_max must be >= 1");
  require(n_concepts >= 1, "N_c must be >= 1");
  require(frames >= 1, "F must be >= 1");
  require(input_dim >= 1, "input_dim must be >= 1");
}

Matrix QueryBank::centers() const {
  return center_logit.value().unaryExpr(
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

Matrix QueryBank::widths() const {
  return width_logit.value().unaryExpr(
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

QueryBank init_queries(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int k = cfg.num_queries;
  QueryBank bank;
  bank.loc_embed = ad::leaf(normal(rng, k, cfg.d_model, 1.0));
  bank.cap_embed = ad::leaf(normal(rng, k, cfg.d_model, 1.0));
  Matrix centers(k, 1), widths(k, 1);
  const double w0 = k == 1 ? 0.5 : 1.0 / k;
  for (int i = 0; i < k; ++i) {
    centers(i, 0) = logit((2.0 * i + 1.0) / (2.0 * k));
    widths(i, 0) = logit(w0);
  }
  bank.center_logit = ad::leaf(centers);
  bank.width_logit = ad::leaf(widths);
  return bank;
}

VideoInput VideoInput::from_fixed(const data::FixedLengthFeatures& fixed) {
  VideoInput in;
  const int frames = static_cast<int>(fixed.features.rows());
  in.features = fixed.features.cast<double>();
  in.valid = fixed.valid;
  in.n_valid = fixed.n_valid;
  in.frame_time = Matrix::Zero(1, frames);
  int k = 0;
  for (int f = 0; f < frames; ++f) {
    if (fixed.valid[f]) in.frame_time(0, f) = fixed.frame_time[k++];
  }
  return in;
}

double caption_window_weight(double frame_time, const Segment& window) {
  const double sigma = std::max(0.5 * window.length(), kWindowSigmaFloor);
  const double z = (frame_time - window.center()) / sigma;
  return std::exp(-0.5 * z * z);
}

std::vector<Segment> DecoderOutput::refined_refs() const {
  std::vector<Segment> out;
  const Matrix& c = center_logit.value();
  const Matrix& w = width_logit.value();
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    out.push_back(window_of(1.0 / (1.0 + std::exp(-c(i, 0))),
                            1.0 / (1.0 + std::exp(-w(i, 0)))));
  }
  return out;
}

std::vector<Segment> LocalizationOutput::segments() const {
  std::vector<Segment> out;
  for (Eigen::Index i = 0; i < starts.rows(); ++i)
    out.push_back(Segment{starts(i, 0), ends(i, 0)});
  return out;
}

std::vector<double> LocalizationOutput::confidence_values() const {
  const Matrix& c = confidences.value();
  return std::vector<double>(c.data(), c.data() + c.size());
}

// --- construction ---------------------------------------------------------------

Model::Linear Model::make_linear(const std::string& name, int in, int out,
                                 bool zero) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Matrix w = zero ? Matrix::Zero(in, out) : uniform(rng_, in, out, bound);
  Matrix b = zero ? Matrix::Zero(1, out) : uniform(rng_, 1, out, bound);
  return Linear{params_.add(name + ".w", std::move(w)),
                params_.add(name + ".b", std::move(b))};
}

Model::LayerNorm Model::make_norm(const std::string& name, int dim) {
  return LayerNorm{params_.add(name + ".gamma", Matrix::Ones(1, dim)),
                   params_.add(name + ".beta", Matrix::Zero(1, dim))};
}

Model::Attention Model::make_attention(const std::string& name) {
  const int d = cfg_.d_model;
  return Attention{make_linear(name + ".q", d, d), make_linear(name + ".k", d, d),
                   make_linear(name + ".v", d, d), make_linear(name + ".o", d, d)};
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  cfg_.validate();
  const int d = cfg_.d_model;
  const QueryBank bank = init_queries(cfg_, seed);
  queries_.loc_embed = params_.add("query.loc_embed", bank.loc_embed.value());
  queries_.cap_embed = params_.add("query.cap_embed", bank.cap_embed.value());
  queries_.center_logit = params_.add("query.center_logit", bank.center_logit.value());
  queries_.width_logit = params_.add("query.width_logit", bank.width_logit.value());
  sharpness_logit_ = params_.add("decoder.sharpness_logit", Matrix::Zero(1, 1));
  // Head h centers its window at c + offset_h * w, spread over [-1/2, 1/2].
  Matrix offsets = Matrix::Zero(1, cfg_.n_heads);
  for (int h = 0; cfg_.n_heads > 1 && h < cfg_.n_heads; ++h)
    offsets(0, h) = -0.5 + static_cast<double>(h) / (cfg_.n_heads - 1);
  head_offsets_ = params_.add("decoder.head_offsets", std::move(offsets));

  input_proj_ = make_linear("encoder.input_proj", cfg_.input_dim, d);
  positional_ = sinusoidal_table(cfg_.frames, d);
  for (int l = 0; l < cfg_.n_enc_layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l);
    EncoderLayer layer;
    layer.self_attn = make_attention(p + ".self_attn");
    layer.ln1 = make_norm(p + ".ln1", d);
    layer.ff1 = make_linear(p + ".ff1", d, cfg_.ffn_dim);
    layer.ff2 = make_linear(p + ".ff2", cfg_.ffn_dim, d);
    layer.ln2 = make_norm(p + ".ln2", d);
    encoder_.push_back(std::move(layer));
  }
  query_pos_ = make_linear("decoder.query_pos", 2, d);
  for (int l = 0; l < cfg_.n_dec_layers; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l);
    DecoderLayer layer;
    layer.self_attn = make_attention(p + ".self_attn");
    layer.ln1 = make_norm(p + ".ln1", d);
    layer.cross_attn = make_attention(p + ".cross_attn");
    layer.ln2 = make_norm(p + ".ln2", d);
    layer.ff1 = make_linear(p + ".ff1", d, cfg_.ffn_dim);
    layer.ff2 = make_linear(p + ".ff2", cfg_.ffn_dim, d);
    layer.ln3 = make_norm(p + ".ln3", d);
    layer.ref_update = make_linear(p + ".ref_update", d, 2, /*zero=*/true);
    decoder_.push_back(std::move(layer));
  }

  box_hidden_ = make_linear("loc_head.hidden", d, d);
  box_out_ = make_linear("loc_head.delta", d, 2, /*zero=*/true);
  class_head_ = make_linear("loc_head.class", d, 1);

  const int v = cfg_.vocab_size;
  const int h = d;
  word_embed_ = params_.add("caption.word_embed", normal(rng_, v, d, 1.0));
  cap_attn_query_ = make_linear("caption.attn_query", 2 * d, d);
  cap_attn_key_ = make_linear("caption.attn_key", d, d);
  const double bound = 1.0 / std::sqrt(static_cast<double>(3 * d + h));
  lstm_w_word_ = params_.add("caption.lstm.w_word", uniform(rng_, d, 4 * h, bound));
  lstm_w_ctx_ = params_.add("caption.lstm.w_ctx", uniform(rng_, d, 4 * h, bound));
  lstm_w_query_ = params_.add("caption.lstm.w_query", uniform(rng_, d, 4 * h, bound));
  lstm_w_hidden_ = params_.add("caption.lstm.w_hidden", uniform(rng_, h, 4 * h, bound));
  Matrix lstm_b = Matrix::Zero(1, 4 * h);
  lstm_b.block(0, h, 1, h).setOnes();  // forget gate
  lstm_bias_ = params_.add("caption.lstm.b", std::move(lstm_b));
  cap_out_ = make_linear("caption.out", h + d, v);

  concept_hidden_ = make_linear("concept.hidden", d, d);
  concept_out_ = make_linear("concept.out", d, cfg_.n_concepts);
  count_hidden_ = make_linear("counter.hidden", d, d);
  count_out_ = make_linear("counter.out", d, cfg_.max_events + 1);
}

// --- forward --------------------------------------------------------------------

Var Model::attend(const Attention& attn, const Var& queries, const Var& keys,
                  const Var& values, const Var* bias, Matrix* record) const {
  const int heads = cfg_.n_heads;
  const int dh = cfg_.d_model / heads;
  const Var q = attn.q(queries);
  const Var k = attn.k(keys);
  const Var v = attn.v(values);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  if (record) *record = Matrix::Zero(queries.rows(), keys.rows());
  for (int hd = 0; hd < heads; ++hd) {
    const Var qh = ad::slice_cols(q, hd * dh, dh);
    const Var kh = ad::slice_cols(k, hd * dh, dh);
    const Var vh = ad::slice_cols(v, hd * dh, dh);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), scale);
    if (bias) {
      // Either one bias for every head or heads side by side.
      const bool per_head = bias->cols() == heads * keys.rows() && heads > 1;
      scores = scores + (per_head ? ad::slice_cols(*bias, hd * keys.rows(), keys.rows())
                                  : *bias);
    }
    const Var weights = ad::softmax_rows(scores);
    if (record) *record += weights.value() / heads;
    outs.push_back(ad::matmul(weights, vh));
  }
  return attn.o(heads == 1 ? outs[0] : ad::concat_cols(outs));
}

Encoded Model::encode(const VideoInput& input) const {
  if (input.features.cols() != cfg_.input_dim)
    throw std::invalid_argument("encode: feature width " +
                                std::to_string(input.features.cols()) +
                                " != " + std::to_string(cfg_.input_dim));
  if (input.features.rows() != cfg_.frames)
    throw std::invalid_argument("encode: expected " + std::to_string(cfg_.frames) +
                                " frames, got " +
                                std::to_string(input.features.rows()));
  Encoded enc;
  enc.frame_time = input.frame_time;
  enc.key_bias = Matrix::Zero(1, cfg_.frames);
  for (int f = 0; f < cfg_.frames; ++f)
    if (!input.valid[f]) enc.key_bias(0, f) = kMaskBias;

  Var x = input_proj_(ad::constant(input.features)) + ad::constant(positional_);
  const Var mask = ad::constant(enc.key_bias);
  for (const EncoderLayer& layer : encoder_) {
    x = layer.ln1(x + dropout(attend(layer.self_attn, x, x, x, &mask, nullptr)));
    x = layer.ln2(x + dropout(layer.ff2(ad::relu(layer.ff1(x)))));
  }
  enc.context = x;
  return enc;
}

Var Model::locality_bias(const Var& center, const Var& width,
                         const Encoded& enc) const {
  const int k = static_cast<int>(center.rows());
  const Var t = ad::constant(enc.frame_time.replicate(k, 1));
  const Var s = ad::exp(sharpness_logit_);
  const Var mask = ad::constant(enc.key_bias);
  std::vector<Var> heads;
  for (int h = 0; h < cfg_.n_heads; ++h) {
    const Var shifted = center + width * ad::element(head_offsets_, 0, h);
    const Var z = (t - shifted) / width;
    heads.push_back(-(ad::square(z) * s) + mask);
  }
  return heads.size() == 1 ? heads[0] : ad::concat_cols(heads);
}

Var Model::decoder_layer(const DecoderLayer& layer, const Var& q,
                         const Var& pos, const Encoded& enc, const Var& bias,
                         Matrix* record) const {
  const Var qp = q + pos;
  Var x = layer.ln1(q + dropout(attend(layer.self_attn, qp, qp, q, nullptr, nullptr)));
  x = layer.ln2(x + dropout(attend(layer.cross_attn, x + pos, enc.context, enc.context,
                                   &bias, record)));
  return layer.ln3(x + dropout(layer.ff2(ad::relu(layer.ff1(x)))));
}

void Model::begin_dropout(std::uint64_t seed) const {
  dropout_on_ = cfg_.dropout > 0.0;
  dropout_rng_.seed(seed);
}

void Model::end_dropout() const { dropout_on_ = false; }

Var Model::dropout(const Var& x) const {
  if (!dropout_on_) return x;
  std::bernoulli_distribution keep(1.0 - cfg_.dropout);
  Matrix mask(x.rows(), x.cols());
  const double scale = 1.0 / (1.0 - cfg_.dropout);
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = keep(dropout_rng_) ? scale : 0.0;
  return x * ad::constant(std::move(mask));
}

DecoderOutput Model::decode(const Encoded& enc, bool record) const {
  DecoderOutput out;
  Var q_loc = queries_.loc_embed;
  Var q_cap = cfg_.role_specific_queries ? queries_.cap_embed : Var();
  Var c_logit = queries_.center_logit;
  Var w_logit = queries_.width_logit;
  for (const DecoderLayer& layer : decoder_) {
    const Var c = ad::sigmoid(c_logit);
    const Var w = ad::sigmoid(w_logit);
    const Var bias_loc = locality_bias(c, w, enc);
    const Var pos_loc = query_pos_(ad::concat_cols({c, w}));
    Matrix rec_loc, rec_cap;
    q_loc = decoder_layer(layer, q_loc, pos_loc, enc, bias_loc,
                          record ? &rec_loc : nullptr);
    if (cfg_.role_specific_queries) {
      // The caption role reads the same window values but does not steer
      // the shared references.
      const Var c_ro = ad::detach(c);
      const Var w_ro = ad::detach(w);
      const Var bias_cap = locality_bias(c_ro, w_ro, enc);
      const Var pos_cap = query_pos_(ad::concat_cols({c_ro, w_ro}));
      q_cap = decoder_layer(layer, q_cap, pos_cap, enc, bias_cap,
                            record ? &rec_cap : nullptr);
      if (record) out.cap_bias.push_back(bias_cap.value());
    } else if (record) {
      rec_cap = rec_loc;
      out.cap_bias.push_back(bias_loc.value());
    }
    if (record) {
      out.loc_attention.push_back(std::move(rec_loc));
      out.cap_attention.push_back(std::move(rec_cap));
      out.loc_bias.push_back(bias_loc.value());
    }
    const Var delta = layer.ref_update(q_loc);
    c_logit = c_logit + ad::slice_cols(delta, 0, 1);
    w_logit = w_logit + ad::slice_cols(delta, 1, 1);
  }
  out.loc_feats = q_loc;
  out.cap_feats = cfg_.role_specific_queries ? q_cap : q_loc;
  out.center_logit = c_logit;
  out.width_logit = w_logit;
  return out;
}

LocalizationOutput Model::localize(const DecoderOutput& out) const {
  const Var delta = box_out_(ad::relu(box_hidden_(out.loc_feats)));
  const Var center = ad::sigmoid(out.center_logit + ad::slice_cols(delta, 0, 1));
  const Var width = ad::sigmoid(out.width_logit + ad::slice_cols(delta, 1, 1));
  const Var half = ad::scale(width, 0.5);
  LocalizationOutput loc;
  loc.starts = ad::clamp(center - half, 0.0, 1.0);
  loc.ends = ad::clamp(center + half, 0.0, 1.0);
  loc.confidences = ad::sigmoid(class_head_(out.loc_feats));
  return loc;
}

Var Model::concept_logits(const DecoderOutput& out) const {
  return concept_out_(ad::relu(concept_hidden_(out.cap_feats)));
}

Var Model::count_logits(const DecoderOutput& out) const {
  return count_out_(ad::relu(count_hidden_(ad::max_over_rows(out.loc_feats))));
}

std::vector<Var> Model::caption_logits(
    const Var& cap_rows, const Encoded& enc, std::span<const Segment> windows,
    const std::vector<std::vector<int>>& input_ids) const {
  const int batch = static_cast<int>(cap_rows.rows());
  if (static_cast<int>(windows.size()) != batch ||
      static_cast<int>(input_ids.size()) != batch)
    throw std::invalid_argument("caption_logits: batch size mismatch");
  std::size_t steps = 0;
  for (const auto& ids : input_ids) steps = std::max(steps, ids.size());

  const int h = cfg_.d_model;
  const Var window = ad::constant(window_log_bias(enc, windows));
  const Var keys_t = ad::transpose(cap_attn_key_(enc.context));
  const Var query_gates = ad::matmul(cap_rows, lstm_w_query_) + lstm_bias_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(h));

  Var hidden = ad::constant(Matrix::Zero(batch, h));
  Var cell = ad::constant(Matrix::Zero(batch, h));
  std::vector<Var> logits;
  std::vector<int> step_ids(batch);
  for (std::size_t t = 0; t < steps; ++t) {
    for (int b = 0; b < batch; ++b) {
      step_ids[b] = t < input_ids[b].size() ? input_ids[b][t]
                                            : text::WordVocabulary::kPad;
    }
    const Var emb = ad::gather_rows(word_embed_, step_ids);
    const Var attn_q = cap_attn_query_(ad::concat_cols({hidden, cap_rows}));
    const Var attn =
        ad::softmax_rows(ad::scale(ad::matmul(attn_q, keys_t), scale) + window);
    const Var z = ad::matmul(attn, enc.context);
    const Var gates = ad::matmul(emb, lstm_w_word_) + ad::matmul(z, lstm_w_ctx_) +
                      ad::matmul(hidden, lstm_w_hidden_) + query_gates;
    const Var in_g = ad::sigmoid(ad::slice_cols(gates, 0, h));
    const Var forget_g = ad::sigmoid(ad::slice_cols(gates, h, h));
    const Var cand = ad::tanh(ad::slice_cols(gates, 2 * h, h));
    const Var out_g = ad::sigmoid(ad::slice_cols(gates, 3 * h, h));
    cell = forget_g * cell + in_g * cand;
    hidden = out_g * ad::tanh(cell);
    logits.push_back(cap_out_(ad::concat_cols({hidden, z})));
  }
  return logits;
}

std::vector<std::vector<int>> Model::caption_greedy(
    const Var& cap_rows, const Encoded& enc,
    std::span<const Segment> windows) const {
  ad::NoGradGuard no_grad;
  const int batch = static_cast<int>(cap_rows.rows());
  std::vector<std::vector<int>> prefix(batch,
                                       std::vector<int>{text::WordVocabulary::kBos});
  std::vector<bool> done(batch, false);
  for (int t = 0; t < cfg_.max_caption_len; ++t) {
    // Recomputing the prefix keeps one code path for both modes; captions
    // are short.
    const std::vector<Var> logits = caption_logits(cap_rows, enc, windows, prefix);
    const Matrix& last = logits.back().value();
    bool all_done = true;
    for (int b = 0; b < batch; ++b) {
      if (done[b]) {
        prefix[b].push_back(text::WordVocabulary::kPad);
        continue;
      }
      int best = text::WordVocabulary::kEos;
      double best_v = -std::numeric_limits<double>::infinity();
      for (int v = 0; v < cfg_.vocab_size; ++v) {
        if (v == text::WordVocabulary::kPad || v == text::WordVocabulary::kBos)
          continue;
        if (last(b, v) > best_v) {
          best_v = last(b, v);
          best = v;
        }
      }
      prefix[b].push_back(best);
      if (best == text::WordVocabulary::kEos) done[b] = true;
      all_done = all_done && done[b];
    }
    if (all_done) break;
  }
  std::vector<std::vector<int>> out(batch);
  for (int b = 0; b < batch; ++b) {
    for (std::size_t t = 1; t < prefix[b].size(); ++t) {
      const int id = prefix[b][t];
      if (id == text::WordVocabulary::kEos || id == text::WordVocabulary::kPad)
        break;
      out[b].push_back(id);
    }
  }
  return out;
}

Inference Model::infer(const VideoInput& input, int topk, bool record) const {
  ad::NoGradGuard no_grad;
  const Encoded enc = encode(input);
  Inference result;
  result.decoder = decode(enc, record);
  const LocalizationOutput loc = localize(result.decoder);
  result.count_distribution = ad::softmax_rows(count_logits(result.decoder)).value();
  Eigen::Index argmax = 0;
  result.count_distribution.row(0).maxCoeff(&argmax);
  result.predicted_count = static_cast<int>(argmax);
  int n = std::clamp(result.predicted_count, 1, cfg_.num_queries);
  if (topk > 0) n = std::min(n, topk);

  const std::vector<double> conf = loc.confidence_values();
  std::vector<int> order(conf.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return conf[a] > conf[b]; });
  order.resize(n);

  const std::vector<Segment> segs = loc.segments();
  std::vector<Segment> windows;
  for (int i : order) windows.push_back(segs[i]);
  const Var rows = ad::gather_rows(result.decoder.cap_feats, order);
  const auto tokens = caption_greedy(rows, enc, windows);
  for (int j = 0; j < n; ++j) {
    result.events.push_back(
        InferredEvent{segs[order[j]], conf[order[j]], order[j], tokens[j]});
  }
  std::stable_sort(result.events.begin(), result.events.end(),
                   [](const InferredEvent& a, const InferredEvent& b) {
                     if (a.segment.start != b.segment.start)
                       return a.segment.start < b.segment.start;
                     return a.segment.end < b.segment.end;
                   });
  return result;
}

}  // namespace dvc::model
