#ifndef DVC_MODEL_HPP_
#define DVC_MODEL_HPP_

// Encoder-decoder with separate localization and caption query tables that
// share reference windows, plus the localization, caption, concept and
// event-count heads.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dvc/autodiff.hpp"
#include "dvc/data.hpp"
#include "dvc/temporal_geometry.hpp"

namespace dvc::model {

using ad::Matrix;
using ad::Var;

struct ModelConfig {
  int d_model = 64;
  int num_queries = 10;  // K, per role
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int n_heads = 4;
  int ffn_dim = 128;
  int max_events = 10;  // L_max
  int vocab_size = 0;
  int max_caption_len = 8;  // T_max, including the end token
  int n_concepts = 30;
  int frames = 100;  // F
  int input_dim = 32;
  // Separate caption query table; when false the caption stream reuses the
  // localization queries.
  bool role_specific_queries = true;
  // Residual-branch dropout rate; only applied inside begin/end_dropout.
  double dropout = 0.0;

  void validate() const;  // throws std::invalid_argument
  bool operator==(const ModelConfig&) const = default;
};

// Learnable queries. Centers and widths live in logit space.
struct QueryBank {
  Var loc_embed;     // K x d
  Var cap_embed;     // K x d
  Var center_logit;  // K x 1
  Var width_logit;   // K x 1

  Matrix centers() const;
  Matrix widths() const;
};

// Fresh, unregistered bank. Centers start at (2i+1)/(2K), widths at 1/K.
QueryBank init_queries(const ModelConfig& cfg, std::uint64_t seed);

struct VideoInput {
  Matrix features;               // F x D_in
  std::vector<std::uint8_t> valid;  // F
  Matrix frame_time;             // 1 x F normalized centers (0 on pads)
  int n_valid = 0;

  static VideoInput from_fixed(const data::FixedLengthFeatures& fixed);
};

struct Encoded {
  Var context;        // F x d
  Matrix key_bias;    // 1 x F: 0 for real frames, large negative for pads
  Matrix frame_time;  // 1 x F
};

struct DecoderOutput {
  Var loc_feats;     // K x d
  Var cap_feats;     // K x d
  Var center_logit;  // K x 1, after the last refinement
  Var width_logit;   // K x 1
  // Filled only when recording: per layer K x F cross-attention weights
  // (head-averaged) and the K x (H * F) locality bias each role saw, heads
  // side by side.
  std::vector<Matrix> loc_attention;
  std::vector<Matrix> cap_attention;
  std::vector<Matrix> loc_bias;
  std::vector<Matrix> cap_bias;

  std::vector<Segment> refined_refs() const;
};

struct LocalizationOutput {
  Var starts;       // K x 1
  Var ends;         // K x 1
  Var confidences;  // K x 1, sigmoid of the class logit

  std::vector<Segment> segments() const;
  std::vector<double> confidence_values() const;
};

struct InferredEvent {
  Segment segment;
  double confidence = 0.0;
  int query = 0;
  std::vector<int> tokens;  // without the end token
};

struct Inference {
  std::vector<InferredEvent> events;  // sorted by start
  Matrix count_distribution;          // 1 x (L_max + 1)
  int predicted_count = 0;            // argmax before clamping
  DecoderOutput decoder;              // with attention records if requested
};

// Soft caption window over frame times: exp(-0.5 ((t - c) / sigma)^2) with
// sigma = max(width / 2, 1e-3).
double caption_window_weight(double frame_time, const Segment& window);

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterSet& parameters() { return params_; }
  const ad::ParameterSet& parameters() const { return params_; }
  const QueryBank& queries() const { return queries_; }

  Encoded encode(const VideoInput& input) const;
  DecoderOutput decode(const Encoded& enc, bool record = false) const;
  LocalizationOutput localize(const DecoderOutput& out) const;
  Var concept_logits(const DecoderOutput& out) const;  // K x N_c
  Var count_logits(const DecoderOutput& out) const;    // 1 x (L_max + 1)

  // Teacher-forced logits, one B x V matrix per step. Row b reads
  // cap_rows.row(b) and the soft window windows[b]; input_ids[b] starts
  // with the begin token and is padded to a common length.
  std::vector<Var> caption_logits(const Var& cap_rows, const Encoded& enc,
                                  std::span<const Segment> windows,
                                  const std::vector<std::vector<int>>& input_ids) const;
  // Greedy decoding up to T_max steps or the end token.
  std::vector<std::vector<int>> caption_greedy(const Var& cap_rows,
                                               const Encoded& enc,
                                               std::span<const Segment> windows) const;

  // N = argmax of the count distribution clamped to [1, K] (and to topk
  // when positive), top-N queries by confidence, one caption each.
  Inference infer(const VideoInput& input, int topk = 0, bool record = false) const;

  // Forwards between these calls drop residual branches at cfg.dropout
  // with masks drawn from `seed`. No-op when the rate is zero.
  void begin_dropout(std::uint64_t seed) const;
  void end_dropout() const;

 private:
  struct Linear {
    Var w, b;
    Var operator()(const Var& x) const { return ad::matmul(x, w) + b; }
  };
  struct LayerNorm {
    Var gamma, beta;
    Var operator()(const Var& x) const { return ad::layer_norm_rows(x, gamma, beta); }
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct EncoderLayer {
    Attention self_attn;
    LayerNorm ln1, ln2;
    Linear ff1, ff2;
  };
  struct DecoderLayer {
    Attention self_attn, cross_attn;
    LayerNorm ln1, ln2, ln3;
    Linear ff1, ff2;
    Linear ref_update;  // d -> (delta center, delta width), zero-initialized
  };

  Linear make_linear(const std::string& name, int in, int out, bool zero = false);
  LayerNorm make_norm(const std::string& name, int dim);
  Attention make_attention(const std::string& name);

  Var attend(const Attention& attn, const Var& queries, const Var& keys,
             const Var& values, const Var* bias, Matrix* record) const;
  Var decoder_layer(const DecoderLayer& layer, const Var& q, const Var& pos,
                    const Encoded& enc, const Var& bias, Matrix* record) const;
  Var locality_bias(const Var& center, const Var& width, const Encoded& enc) const;
  Var dropout(const Var& x) const;

  ModelConfig cfg_;
  std::mt19937_64 rng_;
  mutable bool dropout_on_ = false;
  mutable std::mt19937_64 dropout_rng_;
  ad::ParameterSet params_;
  QueryBank queries_;
  Var sharpness_logit_;  // 1 x 1
  Var head_offsets_;     // 1 x H window-center offsets in widths
  Linear input_proj_;
  Matrix positional_;  // F x d sinusoidal table
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Linear query_pos_;                 // (center, width) -> d
  Linear box_hidden_, box_out_;      // localization deltas
  Linear class_head_;
  Var word_embed_;                   // V x d
  Linear cap_attn_query_, cap_attn_key_;
  Var lstm_w_word_, lstm_w_ctx_, lstm_w_query_, lstm_w_hidden_, lstm_bias_;
  Linear cap_out_;
  Linear concept_hidden_, concept_out_;
  Linear count_hidden_, count_out_;
};

}  // namespace dvc::model

#endif  // DVC_MODEL_HPP_
