#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dvc/training.hpp"

namespace dvc::training {
namespace {

namespace pt = boost::property_tree;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Binds every config key to a reader and a writer so that both directions
// share one list.
struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <class T>
T parse_as(const std::string& key, const std::string& text);

template <>
int parse_as<int>(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size())
    throw ConfigError("config: " + key + ": expected an integer, got '" + text + "'");
  return v;
}

template <>
std::uint64_t parse_as<std::uint64_t>(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!text.empty() && text[0] != '-') v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size())
    throw ConfigError("config: " + key + ": expected an unsigned integer, got '" +
                      text + "'");
  return v;
}

template <>
double parse_as<double>(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size())
    throw ConfigError("config: " + key + ": expected a number, got '" + text + "'");
  return v;
}

template <>
bool parse_as<bool>(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw ConfigError("config: " + key + ": expected true/false, got '" + text + "'");
}

template <class T>
std::string show(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, double>) {
    return format_double(v);
  } else {
    return std::to_string(v);
  }
}

template <class T>
Field bind(T TrainConfig::*outer) {
  return Field{[outer](const TrainConfig& c) { return show(c.*outer); },
               [outer](TrainConfig& c, const std::string& s) {
                 c.*outer = parse_as<T>("", s);
               }};
}

template <class S, class T>
Field bind(S TrainConfig::*outer, T S::*inner) {
  return Field{[outer, inner](const TrainConfig& c) { return show(c.*outer.*inner); },
               [outer, inner](TrainConfig& c, const std::string& s) {
                 c.*outer.*inner = parse_as<T>("", s);
               }};
}

// Ordered so that the written file reads top to bottom by section.
const std::vector<std::pair<std::string, Field>>& fields() {
  using C = TrainConfig;
  using M = model::ModelConfig;
  using W = losses::LossWeights;
  static const std::vector<std::pair<std::string, Field>> table = {
      {"train.epochs", bind(&C::epochs)},
      {"train.batch_size", bind(&C::batch_size)},
      {"train.lr", bind(&C::lr)},
      {"train.weight_decay", bind(&C::weight_decay)},
      {"train.grad_clip", bind(&C::grad_clip)},
      {"train.warmup_steps", bind(&C::warmup_steps)},
      {"train.seed", bind(&C::seed)},
      {"train.deterministic", bind(&C::deterministic)},
      {"train.eval_every", bind(&C::eval_every)},
      {"toggles.rsqi", bind(&C::rsqi)},
      {"toggles.ctca", bind(&C::ctca)},
      {"toggles.osl", bind(&C::osl)},
      {"toggles.cg", bind(&C::cg)},
      {"weights.giou", bind(&C::weights, &W::giou)},
      {"weights.cls", bind(&C::weights, &W::cls)},
      {"weights.cap", bind(&C::weights, &W::cap)},
      {"weights.ec", bind(&C::weights, &W::ec)},
      {"weights.ctca", bind(&C::weights, &W::ctca)},
      {"weights.osl", bind(&C::weights, &W::osl)},
      {"weights.cg", bind(&C::weights, &W::cg)},
      {"osl.gamma", bind(&C::osl_cfg, &losses::OSLConfig::gamma)},
      {"osl.beta", bind(&C::osl_cfg, &losses::OSLConfig::beta)},
      {"osl.epsilon", bind(&C::osl_cfg, &losses::OSLConfig::epsilon)},
      {"ctca.tau", bind(&C::ctca_cfg, &losses::CTCAConfig::tau)},
      {"focal.alpha", bind(&C::focal, &losses::FocalConfig::alpha)},
      {"focal.gamma", bind(&C::focal, &losses::FocalConfig::gamma)},
      {"matching.giou", bind(&C::matching, &matching::MatchingCoefficients::giou)},
      {"matching.cap", bind(&C::matching, &matching::MatchingCoefficients::cap)},
      {"model.d_model", bind(&C::model, &M::d_model)},
      {"model.num_queries", bind(&C::model, &M::num_queries)},
      {"model.n_enc_layers", bind(&C::model, &M::n_enc_layers)},
      {"model.n_dec_layers", bind(&C::model, &M::n_dec_layers)},
      {"model.n_heads", bind(&C::model, &M::n_heads)},
      {"model.ffn_dim", bind(&C::model, &M::ffn_dim)},
      {"model.max_events", bind(&C::model, &M::max_events)},
      {"model.max_caption_len", bind(&C::model, &M::max_caption_len)},
      {"model.dropout", bind(&C::model, &M::dropout)},
      {"model.n_concepts", bind(&C::model, &M::n_concepts)},
      {"model.frames", bind(&C::model, &M::frames)},
  };
  return table;
}

}  // namespace

std::string to_ini(const TrainConfig& cfg) {
  pt::ptree tree;
  for (const auto& [key, field] : fields()) tree.put(key, field.get(cfg));
  std::ostringstream os;
  pt::write_ini(os, tree);
  return os.str();
}

TrainConfig from_ini(const std::string& text) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::map<std::string, const Field*> index;
  for (const auto& [key, field] : fields()) index[key] = &field;
  TrainConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [name, value] : body) {
      const std::string key = section + "." + name;
      auto it = index.find(key);
      if (it == index.end()) throw ConfigError("config: unknown key '" + key + "'");
      try {
        it->second->set(cfg, value.data());
      } catch (const ConfigError& e) {
        throw ConfigError("config: " + key + ": bad value '" + value.data() + "'");
      }
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_ini(ss.str());
}

void save_config(const std::filesystem::path& path, const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("config: cannot write " + path.string());
  out << to_ini(cfg);
}

}  // namespace dvc::training
