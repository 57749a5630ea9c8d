#include "evfsam/ablate.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "evfsam/errors.hpp"

namespace evfsam {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = sd = 0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
}

}  // namespace

FreezeFlags parse_trainable_set(const std::string& spec) {
  FreezeFlags f;
  for (ParamGroup g : kAllGroups) f.set(g, false);
  if (spec == "none") return f;
  for (const auto& name : split(spec, '+')) f.set(parse_param_group(name), true);
  return f;
}

AblationAxes parse_axes(const std::string& spec) {
  AblationAxes a;
  for (const auto& part : split(spec, ';')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("axis '" + part + "' is not of the form name=v1,v2");
    const std::string name = part.substr(0, eq);
    auto values = split(part.substr(eq + 1), ',');
    if (values.empty()) throw ConfigError("axis '" + name + "' has no values");
    if (name == "fusion") a.fusion = values;
    else if (name == "representation") a.representation = values;
    else if (name == "trainable") a.trainable = values;
    else throw ConfigError("unknown ablation axis '" + name + "'");
  }
  return a;
}

std::vector<AblationCell> expand_cells(const RunConfig& base, const AblationAxes& axes) {
  const std::vector<std::string> none{""};
  const auto& fus = axes.fusion.empty() ? none : axes.fusion;
  const auto& reps = axes.representation.empty() ? none : axes.representation;
  const auto& trs = axes.trainable.empty() ? none : axes.trainable;
  std::vector<AblationCell> cells;
  for (const auto& f : fus)
    for (const auto& r : reps)
      for (const auto& t : trs) {
        AblationCell cell;
        cell.config = base;
        std::vector<std::string> parts;
        try {
          auto& enc = cell.config.model.encoder;
          if (!f.empty()) {
            enc.fusion = parse_fusion_mode(f, enc.num_layers);
            enc.representation = default_representation(enc.fusion);
            parts.push_back(f);
          }
          if (!r.empty()) {
            enc.representation = parse_representation(r);
            parts.push_back(r);
          }
          if (!t.empty()) {
            cell.config.train.trainable = parse_trainable_set(t);
            parts.push_back("trainable:" + t);
          }
          enc.validate();
        } catch (const std::exception& e) {
          cell.error = e.what();
        }
        if (parts.empty()) parts.push_back("base");
        for (std::size_t i = 0; i < parts.size(); ++i) cell.name += (i ? "/" : "") + parts[i];
        cells.push_back(std::move(cell));
      }
  return cells;
}

AblationResult ablate(const RunConfig& base, const AblationAxes& axes, const std::vector<std::uint64_t>& seeds,
                      const Splits& splits) {
  AblationResult result;
  const auto& eval_set = splits.val.empty() ? splits.train : splits.val;
  for (const auto& cell : expand_cells(base, axes)) {
    AblationRow row;
    row.name = cell.name;
    for (std::uint64_t seed : seeds) {
      row.seeds.push_back(seed);
      if (cell.error) {
        row.errors.push_back("seed " + std::to_string(seed) + ": " + *cell.error);
        continue;
      }
      try {
        RunConfig c = cell.config;
        c.model.init_seed = seed;
        c.train.seed = seed;
        EvfSamModel model(c.model, grammar_tokenizer(c.model.encoder.max_text_len));
        Trainer trainer(model, c.train);
        trainer.run(splits.train, {}, nullptr);
        const MetricsReport m = evaluate(model, eval_set, c.train.threshold);
        row.giou.push_back(m.giou);
        row.ciou.push_back(m.ciou);
      } catch (const std::exception& e) {
        row.errors.push_back("seed " + std::to_string(seed) + ": " + e.what());
      }
    }
    mean_std(row.giou, row.giou_mean, row.giou_std);
    mean_std(row.ciou, row.ciou_mean, row.ciou_std);
    result.rows.push_back(std::move(row));
  }
  return result;
}

std::string AblationResult::to_table() const {
  std::size_t w = 4;
  for (const auto& r : rows) w = std::max(w, r.name.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %-17s  %-17s  %s\n", static_cast<int>(w), "cell", "gIoU", "cIoU", "runs");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %.4f +- %.4f  %.4f +- %.4f  %zu/%zu\n", static_cast<int>(w), r.name.c_str(),
                  r.giou_mean, r.giou_std, r.ciou_mean, r.ciou_std, r.giou.size(), r.seeds.size());
    out += buf;
    for (const auto& e : r.errors) out += "  error: " + e + "\n";
  }
  return out;
}

nlohmann::ordered_json AblationResult::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json o;
    o["cell"] = r.name;
    o["seeds"] = r.seeds;
    o["giou"] = r.giou;
    o["ciou"] = r.ciou;
    o["giou_mean"] = r.giou_mean;
    o["giou_std"] = r.giou_std;
    o["ciou_mean"] = r.ciou_mean;
    o["ciou_std"] = r.ciou_std;
    o["errors"] = r.errors;
    j.push_back(o);
  }
  return j;
}

}  // namespace evfsam
