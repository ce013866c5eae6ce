#include "dvc/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <ostream>

#include "dvc/data.hpp"

namespace dvc::model {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'D', 'V', 'C', 'C', 'K', 'P', 'T', '1'};

}  // namespace

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"num_queries", c.num_queries},
          {"n_enc_layers", c.n_enc_layers},
          {"n_dec_layers", c.n_dec_layers},
          {"n_heads", c.n_heads},
          {"ffn_dim", c.ffn_dim},
          {"max_events", c.max_events},
          {"vocab_size", c.vocab_size},
          {"max_caption_len", c.max_caption_len},
          {"n_concepts", c.n_concepts},
          {"frames", c.frames},
          {"input_dim", c.input_dim},
          {"role_specific_queries", c.role_specific_queries},
          {"dropout", c.dropout}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.num_queries = j.at("num_queries").get<int>();
  c.n_enc_layers = j.at("n_enc_layers").get<int>();
  c.n_dec_layers = j.at("n_dec_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.max_events = j.at("max_events").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_caption_len = j.at("max_caption_len").get<int>();
  c.n_concepts = j.at("n_concepts").get<int>();
  c.frames = j.at("frames").get<int>();
  c.input_dim = j.at("input_dim").get<int>();
  c.role_specific_queries = j.at("role_specific_queries").get<bool>();
  c.dropout = j.value("dropout", 0.0);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointMeta& meta, ad::Adam* optimizer) {
  std::vector<std::pair<std::string, const Matrix*>> tensors;
  for (const auto& [name, var] : model.parameters().items())
    tensors.emplace_back(name, &var.value());
  if (optimizer) {
    const auto& items = model.parameters().items();
    for (std::size_t i = 0; i < items.size(); ++i)
      tensors.emplace_back("adam.m/" + items[i].first, &optimizer->first_moments()[i]);
    for (std::size_t i = 0; i < items.size(); ++i)
      tensors.emplace_back("adam.v/" + items[i].first, &optimizer->second_moments()[i]);
  }
  nlohmann::json header = {{"model", config_to_json(model.config())},
                           {"words", meta.words},
                           {"concepts", meta.concepts},
                           {"step", meta.step},
                           {"epoch", meta.epoch},
                           {"best_f1", meta.best_f1},
                           {"train_config", meta.train_config},
                           {"has_optimizer", optimizer != nullptr},
                           {"adam_steps", optimizer ? optimizer->steps() : 0}};
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, m] : tensors)
    table.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
  header["tensors"] = table;
  const std::string text = header.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw data::DataError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : tensors)
      out.write(reinterpret_cast<const char*>(m->data()),
                static_cast<std::streamsize>(m->size() * sizeof(double)));
    if (!out) throw data::DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data::DataError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw data::DataError(path.string() + ": not a checkpoint (bad magic)");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 30)) throw data::DataError(path.string() + ": bad header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw data::DataError(path.string() + ": truncated header");

  LoadedCheckpoint out;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    out.meta.words = header.at("words").get<std::vector<std::string>>();
    out.meta.concepts = header.at("concepts").get<std::vector<std::string>>();
    out.meta.step = header.at("step").get<long>();
    out.meta.epoch = header.at("epoch").get<int>();
    out.meta.best_f1 = header.at("best_f1").get<double>();
    out.meta.train_config = header.at("train_config").get<std::string>();
    out.has_optimizer = header.at("has_optimizer").get<bool>();
    out.adam_steps = header.at("adam_steps").get<long>();
    out.model = std::make_unique<Model>(config_from_json(header.at("model")), 0);
  } catch (const nlohmann::json::exception& e) {
    throw data::DataError(path.string() + ": bad header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw data::DataError(path.string() + ": " + e.what());
  }

  const auto& items = out.model->parameters().items();
  std::vector<std::string> expected;
  for (const auto& item : items) expected.push_back(item.first);
  if (out.has_optimizer) {
    for (const auto& item : items) expected.push_back("adam.m/" + item.first);
    for (const auto& item : items) expected.push_back("adam.v/" + item.first);
  }
  const auto& table = header.at("tensors");
  if (table.size() != expected.size())
    throw data::DataError(path.string() + ": expected " +
                          std::to_string(expected.size()) + " tensors, found " +
                          std::to_string(table.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const std::string name = table[i].at("name").get<std::string>();
    const long rows = table[i].at("rows").get<long>();
    const long cols = table[i].at("cols").get<long>();
    if (name != expected[i])
      throw data::DataError(path.string() + ": tensor " + std::to_string(i) +
                            " is '" + name + "', expected '" + expected[i] + "'");
    const Matrix& ref = items[i % items.size()].second.value();
    if (rows != ref.rows() || cols != ref.cols())
      throw data::DataError(path.string() + ": shape mismatch for " + name);
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw data::DataError(path.string() + ": truncated tensor " + name);
    if (i < items.size()) {
      Var v = items[i].second;
      v.mutable_value() = std::move(m);
    } else if (i < 2 * items.size()) {
      out.adam_m.push_back(std::move(m));
    } else {
      out.adam_v.push_back(std::move(m));
    }
  }
  return out;
}

void write_attention_records(std::ostream& os, const std::string& video_id,
                             const Inference& inference) {
  const DecoderOutput& dec = inference.decoder;
  if (dec.loc_attention.empty())
    throw std::invalid_argument("attention records were not captured");
  std::vector<int> ranked;  // selected queries, confidence order
  std::vector<InferredEvent> by_conf = inference.events;
  std::stable_sort(by_conf.begin(), by_conf.end(),
                   [](const InferredEvent& a, const InferredEvent& b) {
                     return a.confidence > b.confidence;
                   });
  for (const auto& e : by_conf) ranked.push_back(e.query);
  const char* roles[2] = {"loc", "cap"};
  for (int r = 0; r < 2; ++r) {
    const auto& layers = r == 0 ? dec.loc_attention : dec.cap_attention;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t rank = 0; rank < ranked.size(); ++rank) {
        const int q = ranked[rank];
        os << video_id << '\t' << roles[r] << '\t' << l << '\t' << q << '\t' << rank;
        for (Eigen::Index f = 0; f < layers[l].cols(); ++f) os << '\t' << layers[l](q, f);
        os << '\n';
      }
    }
  }
}

}  // namespace dvc::model
