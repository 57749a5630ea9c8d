#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "evfsam/data.hpp"
#include "evfsam/model.hpp"
#include "evfsam/train.hpp"
#include "json.hpp"

namespace evfsam {

// Where the train/val splits come from: generated on the fly from the
// generator fields, or loaded from index files when train_index is set.
struct DataConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 2000;
  std::size_t n_val = 200;
  std::size_t canvas_size = 48;
  Difficulty difficulty = Difficulty::Spatial;
  double overlap_iou_cap = 0.05;
  std::size_t min_objects = 3;
  std::size_t max_objects = 5;
  std::string train_index;
  std::string val_index;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

// Sections "encoder", "sam", "train", "data"; the model-level fields
// (projector_hidden, init_seed) live under "encoder". Unknown keys throw ConfigError.
nlohmann::ordered_json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

struct Splits {
  std::vector<SegSample> train;
  std::vector<SegSample> val;
};
// Relative index paths resolve against `base_dir`.
Splits load_splits(const DataConfig& c, const std::filesystem::path& base_dir = {});

}  // namespace evfsam
