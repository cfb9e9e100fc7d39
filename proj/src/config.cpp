#include "xmodal/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "xmodal/error.hpp"

namespace xmodal {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw InputError("config: " + key + ": expected a nonnegative integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw InputError("config: " + key + ": expected a finite number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InputError("config: " + key + ": expected true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_size(key, item));
  }
  return out;
}

using Setter = std::function<void(Config&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& schema() {
  static const std::map<std::string, Setter> s = {
      {"model.embed_dim", [](Config& c, const std::string& k, const std::string& v) { c.embed_dim = parse_size(k, v); }},
      {"model.hidden", [](Config& c, const std::string& k, const std::string& v) { c.hidden = parse_size(k, v); }},
      {"model.word_dim", [](Config& c, const std::string& k, const std::string& v) { c.word_dim = parse_size(k, v); }},
      {"model.conv_hidden", [](Config& c, const std::string& k, const std::string& v) { c.conv_hidden = parse_size(k, v); }},
      {"model.conv_stride", [](Config& c, const std::string& k, const std::string& v) { c.conv_stride = parse_size(k, v); }},
      {"model.max_seq", [](Config& c, const std::string& k, const std::string& v) { c.max_seq = parse_size(k, v); }},
      {"model.temperature", [](Config& c, const std::string& k, const std::string& v) { c.temperature = parse_double(k, v); }},
      {"model.gate_mode",
       [](Config& c, const std::string& k, const std::string& v) {
         if (v == "elementwise") c.gate_mode = GateMode::elementwise;
         else if (v == "scalar") c.gate_mode = GateMode::scalar;
         else throw InputError("config: " + k + ": expected elementwise|scalar, got '" + v + "'");
       }},
      {"model.pooling",
       [](Config& c, const std::string& k, const std::string& v) {
         if (v == "sgmp") c.pooling = Pooling::sgmp;
         else if (v == "max") c.pooling = Pooling::max;
         else if (v == "avg") c.pooling = Pooling::avg;
         else throw InputError("config: " + k + ": expected sgmp|max|avg, got '" + v + "'");
       }},
      {"model.tie_directions", [](Config& c, const std::string& k, const std::string& v) { c.tie_directions = parse_bool(k, v); }},
      {"loss.margin", [](Config& c, const std::string& k, const std::string& v) { c.margin = parse_double(k, v); }},
      {"loss.dropout_rate", [](Config& c, const std::string& k, const std::string& v) { c.dropout_rate = parse_double(k, v); }},
      {"loss.dropout_policy",
       [](Config& c, const std::string& k, const std::string& v) {
         if (v == "positive-pairs-only") c.dropout_policy = DropoutApply::positive_pairs_only;
         else if (v == "both") c.dropout_policy = DropoutApply::both;
         else if (v == "none") c.dropout_policy = DropoutApply::none;
         else throw InputError("config: " + k + ": expected positive-pairs-only|both|none, got '" + v + "'");
       }},
      {"loss.use_triplet", [](Config& c, const std::string& k, const std::string& v) { c.use_triplet = parse_bool(k, v); }},
      {"loss.use_hardest", [](Config& c, const std::string& k, const std::string& v) { c.use_hardest = parse_bool(k, v); }},
      {"loss.use_semi", [](Config& c, const std::string& k, const std::string& v) { c.use_semi = parse_bool(k, v); }},
      {"mining.positive_mode",
       [](Config& c, const std::string& k, const std::string& v) {
         if (v == "closest") c.positive_mode = PositiveMode::closest;
         else if (v == "farthest") c.positive_mode = PositiveMode::farthest;
         else throw InputError("config: " + k + ": expected closest|farthest, got '" + v + "'");
       }},
      {"batch.identities", [](Config& c, const std::string& k, const std::string& v) { c.batch_identities = parse_size(k, v); }},
      {"batch.images_per_id", [](Config& c, const std::string& k, const std::string& v) { c.batch_images_per_id = parse_size(k, v); }},
      {"batch.texts_per_image", [](Config& c, const std::string& k, const std::string& v) { c.batch_texts_per_image = parse_size(k, v); }},
      {"optim.lr", [](Config& c, const std::string& k, const std::string& v) { c.lr = parse_double(k, v); }},
      {"optim.decay_epochs", [](Config& c, const std::string& k, const std::string& v) { c.decay_epochs = parse_size_list(k, v); }},
      {"optim.decay_rate", [](Config& c, const std::string& k, const std::string& v) { c.decay_rate = parse_double(k, v); }},
      {"optim.epochs", [](Config& c, const std::string& k, const std::string& v) { c.epochs = parse_size(k, v); }},
      {"optim.checkpoint_every", [](Config& c, const std::string& k, const std::string& v) { c.checkpoint_every = parse_size(k, v); }},
      {"optim.eval_every", [](Config& c, const std::string& k, const std::string& v) { c.eval_every = parse_size(k, v); }},
      {"data.dir", [](Config& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"data.num_identities", [](Config& c, const std::string& k, const std::string& v) { c.data_num_identities = parse_size(k, v); }},
      {"data.attributes", [](Config& c, const std::string& k, const std::string& v) { c.data_attributes = parse_size(k, v); }},
      {"data.synonyms", [](Config& c, const std::string& k, const std::string& v) { c.data_synonyms = parse_size(k, v); }},
      {"data.image_noise", [](Config& c, const std::string& k, const std::string& v) { c.data_image_noise = parse_double(k, v); }},
      {"data.described_fraction", [](Config& c, const std::string& k, const std::string& v) { c.data_described_fraction = parse_double(k, v); }},
      {"data.images_per_id", [](Config& c, const std::string& k, const std::string& v) { c.data_images_per_id = parse_size(k, v); }},
      {"data.texts_per_image", [](Config& c, const std::string& k, const std::string& v) { c.data_texts_per_image = parse_size(k, v); }},
      {"data.height", [](Config& c, const std::string& k, const std::string& v) { c.data_height = parse_size(k, v); }},
      {"data.width", [](Config& c, const std::string& k, const std::string& v) { c.data_width = parse_size(k, v); }},
      {"eval.mode",
       [](Config& c, const std::string& k, const std::string& v) {
         if (v == "plain-cosine") c.eval_mode = EvalMode::plain_cosine;
         else if (v == "gated") c.eval_mode = EvalMode::gated;
         else throw InputError("config: " + k + ": expected plain-cosine|gated, got '" + v + "'");
       }},
      {"eval.ks", [](Config& c, const std::string& k, const std::string& v) { c.eval_ks = parse_size_list(k, v); }},
      {"seed",
       [](Config& c, const std::string& k, const std::string& v) {
         try {
           std::size_t pos = 0;
           unsigned long long n = std::stoull(v, &pos);
           if (pos != v.size()) throw std::invalid_argument(v);
           c.seed = n;
         } catch (const std::exception&) {
           throw InputError("config: " + k + ": expected an unsigned integer, got '" + v + "'");
         }
       }},
      {"out.dir", [](Config& c, const std::string&, const std::string& v) { c.out_dir = v; }},
  };
  return s;
}

}  // namespace

void apply_override(Config& cfg, const std::string& assignment) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw InputError("config: expected key=value, got '" + assignment + "'");
  std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  auto it = schema().find(key);
  if (it == schema().end()) throw InputError("config: unknown key '" + key + "'");
  it->second(cfg, key, value);
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config: cannot open '" + path + "'");
  Config cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    try {
      apply_override(cfg, stripped);
    } catch (const InputError& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate(cfg);
  return cfg;
}

void validate(const Config& cfg) {
  if (cfg.hidden == 0 || cfg.word_dim == 0 || cfg.conv_hidden == 0)
    throw InputError("config: model dimensions must be positive");
  if (cfg.embed_dim != 2 * cfg.hidden)
    throw InputError("config: model.embed_dim must equal 2*model.hidden (got " +
                     std::to_string(cfg.embed_dim) + " vs hidden " +
                     std::to_string(cfg.hidden) + ")");
  if (cfg.conv_stride == 0) throw InputError("config: model.conv_stride must be >= 1");
  if (cfg.max_seq == 0) throw InputError("config: model.max_seq must be >= 1");
  if (!(cfg.temperature > 0.0))
    throw InputError("config: model.temperature must be positive");
  if (!(cfg.margin >= 0.0)) throw InputError("config: loss.margin must be >= 0");
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0))
    throw InputError("config: loss.dropout_rate must lie in [0,1)");
  if (cfg.batch_identities < 2)
    throw InputError("config: batch.identities must be >= 2");
  if (cfg.batch_images_per_id == 0 || cfg.batch_texts_per_image == 0)
    throw InputError("config: batch sizes must be >= 1");
  if (!(cfg.lr > 0.0)) throw InputError("config: optim.lr must be positive");
  if (!(cfg.decay_rate > 0.0 && cfg.decay_rate <= 1.0))
    throw InputError("config: optim.decay_rate must lie in (0,1]");
  if (cfg.epochs == 0) throw InputError("config: optim.epochs must be >= 1");
  if (cfg.eval_every == 0) throw InputError("config: optim.eval_every must be >= 1");
  if (cfg.eval_ks.empty()) throw InputError("config: eval.ks must be nonempty");
  for (std::size_t k : cfg.eval_ks)
    if (k == 0) throw InputError("config: eval.ks entries must be >= 1");
  validate(synthetic_spec(cfg));
}

ModelSpec model_spec(const Config& cfg, std::size_t vocab_size) {
  ModelSpec ms;
  ms.embed_dim = cfg.embed_dim;
  ms.hidden = cfg.hidden;
  ms.word_dim = cfg.word_dim;
  ms.conv_hidden = cfg.conv_hidden;
  ms.conv_stride = cfg.conv_stride;
  ms.vocab_size = vocab_size;
  ms.max_seq = cfg.max_seq;
  ms.tie_directions = cfg.tie_directions;
  return ms;
}

SyntheticSpec synthetic_spec(const Config& cfg) {
  SyntheticSpec sp;
  sp.num_identities = cfg.data_num_identities;
  sp.attributes = cfg.data_attributes;
  sp.synonyms = cfg.data_synonyms;
  sp.image_noise = cfg.data_image_noise;
  sp.described_fraction = cfg.data_described_fraction;
  sp.images_per_id = cfg.data_images_per_id;
  sp.texts_per_image = cfg.data_texts_per_image;
  sp.height = cfg.data_height;
  sp.width = cfg.data_width;
  return sp;
}

BatchSpec batch_spec(const Config& cfg) {
  return {cfg.batch_identities, cfg.batch_images_per_id, cfg.batch_texts_per_image};
}

ScoreConfig score_config(const Config& cfg) {
  ScoreConfig sc;
  sc.temperature = cfg.temperature;
  sc.gate_mode = cfg.gate_mode;
  return sc;
}

}  // namespace xmodal
