#pragma once

#include <optional>
#include <string>
#include <vector>

#include "evfsam/config.hpp"
#include "json.hpp"

namespace evfsam {

// Values per axis; an empty axis keeps the base config's value. Cells are
// the cartesian product fusion x representation x trainable.
struct AblationAxes {
  std::vector<std::string> fusion;          // as parse_fusion_mode
  std::vector<std::string> representation;  // as parse_representation
  std::vector<std::string> trainable;       // '+'-joined trainable groups, or "none"
};

// "fusion=text_only,late_concat;representation=image_cls;trainable=multimodal_encoder+mask_decoder"
AblationAxes parse_axes(const std::string& spec);
FreezeFlags parse_trainable_set(const std::string& spec);

struct AblationCell {
  std::string name;
  RunConfig config;
  std::optional<std::string> error;  // set when the cell cannot be configured
};

std::vector<AblationCell> expand_cells(const RunConfig& base, const AblationAxes& axes);

struct AblationRow {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<double> giou, ciou;  // per successful seed
  double giou_mean = 0, giou_std = 0, ciou_mean = 0, ciou_std = 0;
  std::vector<std::string> errors;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::string to_table() const;
  nlohmann::ordered_json to_json() const;
};

// Trains and evaluates every cell once per seed (seed drives both
// initialization and data order; the dataset is shared). Per-cell failures
// are recorded in the row rather than thrown.
AblationResult ablate(const RunConfig& base, const AblationAxes& axes, const std::vector<std::uint64_t>& seeds,
                      const Splits& splits);

}  // namespace evfsam
