#include "elvit/runconfig.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace elvit {
namespace {

// walk one object level, rejecting keys outside `allowed`
void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object())
    throw std::runtime_error("run config: section '" + where + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw std::runtime_error("run config: unknown key '" + where + "." + key + "'");
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void DataConfig::validate() const {
  if (source != "shapes" && source != "idx")
    throw std::runtime_error("run config: unknown data source '" + source + "'");
  if (source == "shapes" && n < 1)
    throw std::runtime_error("run config: data.n must be >= 1");
  if (source == "idx" && (images.empty() || labels.empty()))
    throw std::runtime_error("run config: idx source needs data.images and data.labels");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw std::runtime_error("run config: data.val_fraction outside [0,1)");
}

nlohmann::json model_config_json(const ModelConfig& mc) {
  nlohmann::json j;
  j["image_side"] = mc.image_side;
  j["channels"] = mc.channels;
  j["depth"] = mc.depth;
  j["dim"] = mc.dim;
  j["heads"] = mc.heads;
  j["ffn_dim"] = mc.ffn_dim;
  j["num_classes"] = mc.num_classes;
  j["base_patch"] = mc.base_patch;
  j["grids"] = mc.grids;
  j["keep_rates"] = mc.keep_rates;
  j["drop_blocks"] = mc.drop_blocks;
  j["attn_scale"] = mc.attention_scale_name();
  j["ln_eps"] = mc.ln_eps;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"image_side", "channels", "depth", "dim", "heads", "ffn_dim", "num_classes",
              "base_patch", "grids", "keep_rates", "drop_blocks", "attn_scale", "ln_eps"},
             "model");
  ModelConfig mc;
  take(j, "image_side", mc.image_side);
  take(j, "channels", mc.channels);
  take(j, "depth", mc.depth);
  take(j, "dim", mc.dim);
  take(j, "heads", mc.heads);
  take(j, "ffn_dim", mc.ffn_dim);
  take(j, "num_classes", mc.num_classes);
  take(j, "base_patch", mc.base_patch);
  take(j, "grids", mc.grids);
  take(j, "keep_rates", mc.keep_rates);
  take(j, "drop_blocks", mc.drop_blocks);
  take(j, "ln_eps", mc.ln_eps);
  if (j.contains("attn_scale")) {
    const std::string s = j.at("attn_scale").get<std::string>();
    if (s == "per_head")
      mc.attn_scale = ModelConfig::AttnScale::per_head;
    else if (s == "full_dim")
      mc.attn_scale = ModelConfig::AttnScale::full_dim;
    else
      throw std::runtime_error("run config: unknown attn_scale '" + s + "'");
  }
  return mc;
}

nlohmann::json train_config_json(const TrainConfig& tc) {
  nlohmann::json j;
  j["epochs"] = tc.epochs;
  j["batch_size"] = tc.batch_size;
  j["seed"] = tc.seed;
  j["lr"] = tc.lr;
  j["weight_decay"] = tc.weight_decay;
  j["optimizer"] = tc.optimizer;
  j["sample_scheme"] = tc.sample_scheme;
  j["detach_teacher"] = tc.detach_teacher;
  j["warmup_epochs"] = tc.warmup_epochs;
  j["lr_min_ratio"] = tc.lr_min_ratio;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"epochs", "batch_size", "seed", "lr", "weight_decay", "optimizer",
              "sample_scheme", "detach_teacher", "warmup_epochs", "lr_min_ratio"},
             "train");
  TrainConfig tc;
  take(j, "epochs", tc.epochs);
  take(j, "batch_size", tc.batch_size);
  take(j, "seed", tc.seed);
  take(j, "lr", tc.lr);
  take(j, "weight_decay", tc.weight_decay);
  take(j, "optimizer", tc.optimizer);
  take(j, "sample_scheme", tc.sample_scheme);
  take(j, "detach_teacher", tc.detach_teacher);
  take(j, "warmup_epochs", tc.warmup_epochs);
  take(j, "lr_min_ratio", tc.lr_min_ratio);
  return tc;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("run config: cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw std::runtime_error("run config: parse error in '" + path + "': " + e.what());
  }
  return parse_json(doc);
}

RunConfig RunConfig::parse_json(const nlohmann::json& doc) {
  check_keys(doc, {"schema_version", "model", "train", "data", "output_dir"}, "<root>");
  RunConfig rc;
  if (doc.contains("schema_version")) rc.schema_version = doc.at("schema_version").get<int64_t>();
  if (rc.schema_version != 1)
    throw std::runtime_error("run config: unsupported schema_version " +
                             std::to_string(rc.schema_version));
  if (doc.contains("model")) rc.model = model_config_from_json(doc.at("model"));
  if (doc.contains("train")) rc.train = train_config_from_json(doc.at("train"));
  if (doc.contains("data")) {
    const nlohmann::json& j = doc.at("data");
    check_keys(j, {"source", "n", "seed", "val_fraction", "images", "labels"}, "data");
    take(j, "source", rc.data.source);
    take(j, "n", rc.data.n);
    take(j, "seed", rc.data.seed);
    take(j, "val_fraction", rc.data.val_fraction);
    take(j, "images", rc.data.images);
    take(j, "labels", rc.data.labels);
  }
  take(doc, "output_dir", rc.output_dir);
  rc.model.validate();
  rc.train.validate();
  rc.data.validate();
  return rc;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["schema_version"] = schema_version;
  j["model"] = model_config_json(model);
  j["train"] = train_config_json(train);
  j["data"]["source"] = data.source;
  j["data"]["n"] = data.n;
  j["data"]["seed"] = data.seed;
  j["data"]["val_fraction"] = data.val_fraction;
  j["data"]["images"] = data.images;
  j["data"]["labels"] = data.labels;
  j["output_dir"] = output_dir;
  return j;
}

std::string RunConfig::hash() const {
  const std::string dump = to_json().dump();  // object keys are emitted sorted
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace elvit
