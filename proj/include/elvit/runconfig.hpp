#pragma once

// One self-describing run document: model + training + data source + output
// directory, with a schema version and a content hash embedded in every
// artifact the run emits. Unknown keys are rejected, not ignored.

#include <cstdint>
#include <string>

#include "elvit/model.hpp"
#include "elvit/train.hpp"
#include "json.hpp"

namespace elvit {

struct DataConfig {
  std::string source = "shapes";  // shapes | idx
  int64_t n = 2000;               // generated image count (shapes source)
  uint64_t seed = 7;              // generation seed (shapes source)
  double val_fraction = 0.2;      // tail fraction held out for validation
  std::string images;             // IDX image file (idx source)
  std::string labels;             // IDX label file (idx source)

  void validate() const;
};

struct RunConfig {
  int64_t schema_version = 1;
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::string output_dir = ".";

  static RunConfig parse_file(const std::string& path);
  static RunConfig parse_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
  // FNV-1a 64 over the canonical dump; stable across key order in the source file
  std::string hash() const;
};

nlohmann::json model_config_json(const ModelConfig& mc);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_json(const TrainConfig& tc);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace elvit
