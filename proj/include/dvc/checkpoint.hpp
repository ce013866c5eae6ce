#ifndef DVC_CHECKPOINT_HPP_
#define DVC_CHECKPOINT_HPP_

// Checkpoint container and the attention-record dump.
//
// Checkpoint layout (little-endian):
//   8-byte magic "DVCCKPT1"
//   uint64 header length, then a JSON header:
//     { "model": {ModelConfig fields}, "words": [...], "concepts": [...],
//       "step": n, "epoch": n, "best_f1": x, "train_config": "<ini text>",
//       "tensors": [ {"name": s, "rows": r, "cols": c}, ... ] }
//   then, per header tensor in order, rows*cols float64 in column-major
//   order. Optimizer moments are stored as tensors "adam.m/<param>" and
//   "adam.v/<param>" with the step count under "adam_steps".

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dvc/autodiff.hpp"
#include "dvc/model.hpp"

namespace dvc::model {

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

struct CheckpointMeta {
  std::vector<std::string> words;
  std::vector<std::string> concepts;
  long step = 0;
  int epoch = 0;
  double best_f1 = 0.0;
  std::string train_config;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointMeta& meta, ad::Adam* optimizer = nullptr);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  CheckpointMeta meta;
  bool has_optimizer = false;
  long adam_steps = 0;
  std::vector<Matrix> adam_m;  // parallel to model parameters
  std::vector<Matrix> adam_v;
};

// Throws data::DataError on a malformed file or a tensor whose name or
// shape does not match the configured model.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// One tab-separated line per (role, layer, selected query):
//   video_id  role  layer  query  rank  w_0 ... w_{F-1}
// where role is "loc" or "cap" and rank is the query's position in the
// confidence-ordered selection. Requires an inference run with recording.
void write_attention_records(std::ostream& os, const std::string& video_id,
                             const Inference& inference);

}  // namespace dvc::model

#endif  // DVC_CHECKPOINT_HPP_
