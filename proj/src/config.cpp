#include "evfsam/config.hpp"

#include <fstream>
#include <set>

#include "evfsam/errors.hpp"

namespace evfsam {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("unknown config key '" + section + (section.empty() ? "" : ".") + k + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

}  // namespace

ordered_json to_json(const RunConfig& c) {
  const auto& e = c.model.encoder;
  const auto& s = c.model.sam;
  const auto& t = c.train;
  const auto& d = c.data;
  ordered_json j;
  j["encoder"] = {{"num_layers", e.num_layers},
                  {"embed_dim", e.embed_dim},
                  {"num_heads", e.num_heads},
                  {"ffn_dim", e.ffn_dim},
                  {"image_size", e.image_size},
                  {"patch_size", e.patch_size},
                  {"max_text_len", e.max_text_len},
                  {"fusion", to_string(e.fusion)},
                  {"representation", to_string(e.representation)},
                  {"projector_hidden", c.model.projector_hidden},
                  {"init_seed", c.model.init_seed}};
  j["sam"] = {{"image_size", s.image_size},
              {"patch_size", s.patch_size},
              {"encoder_dim", s.encoder_dim},
              {"encoder_layers", s.encoder_layers},
              {"encoder_heads", s.encoder_heads},
              {"encoder_ffn_dim", s.encoder_ffn_dim},
              {"feat_dim", s.feat_dim},
              {"decoder_blocks", s.decoder_blocks},
              {"decoder_heads", s.decoder_heads},
              {"decoder_mlp_dim", s.decoder_mlp_dim},
              {"upsample_factor", s.upsample_factor}};
  ordered_json trainable = {{"image_encoder", t.trainable.image_encoder},
                            {"multimodal_encoder", t.trainable.multimodal_encoder},
                            {"prompt_encoder", t.trainable.prompt_encoder},
                            {"mask_decoder", t.trainable.mask_decoder}};
  j["train"] = {{"lr", t.lr},
                {"lr_final", t.lr_final},
                {"total_iterations", t.total_iterations},
                {"batch_size", t.batch_size},
                {"grad_accum_steps", t.grad_accum_steps},
                {"bce_weight", t.loss_weights.bce},
                {"dice_weight", t.loss_weights.dice},
                {"seed", t.seed},
                {"trainable", trainable},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"weight_decay", t.weight_decay},
                {"eval_every", t.eval_every},
                {"threshold", t.threshold}};
  j["data"] = {{"seed", d.seed},
               {"n_train", d.n_train},
               {"n_val", d.n_val},
               {"canvas_size", d.canvas_size},
               {"difficulty", to_string(d.difficulty)},
               {"overlap_iou_cap", d.overlap_iou_cap},
               {"min_objects", d.min_objects},
               {"max_objects", d.max_objects},
               {"train_index", d.train_index},
               {"val_index", d.val_index}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  check_keys(j, "", {"encoder", "sam", "train", "data"});

  if (j.contains("encoder")) {
    const json& e = j["encoder"];
    check_keys(e, "encoder", {"num_layers", "embed_dim", "num_heads", "ffn_dim", "image_size", "patch_size",
                              "max_text_len", "fusion", "representation", "projector_hidden", "init_seed"});
    auto& ec = c.model.encoder;
    read(e, "num_layers", ec.num_layers, "encoder");
    read(e, "embed_dim", ec.embed_dim, "encoder");
    read(e, "num_heads", ec.num_heads, "encoder");
    read(e, "ffn_dim", ec.ffn_dim, "encoder");
    read(e, "image_size", ec.image_size, "encoder");
    read(e, "patch_size", ec.patch_size, "encoder");
    read(e, "max_text_len", ec.max_text_len, "encoder");
    read(e, "projector_hidden", c.model.projector_hidden, "encoder");
    read(e, "init_seed", c.model.init_seed, "encoder");
    std::string fusion = "early_full";
    read(e, "fusion", fusion, "encoder");
    try {
      ec.fusion = parse_fusion_mode(fusion, ec.num_layers);
    } catch (const std::exception& ex) {
      throw ConfigError(std::string("encoder.fusion: ") + ex.what());
    }
    ec.representation = default_representation(ec.fusion);
    if (e.contains("representation")) {
      std::string rep;
      read(e, "representation", rep, "encoder");
      try {
        ec.representation = parse_representation(rep);
      } catch (const std::exception& ex) {
        throw ConfigError(std::string("encoder.representation: ") + ex.what());
      }
    }
  }

  if (j.contains("sam")) {
    const json& s = j["sam"];
    check_keys(s, "sam", {"image_size", "patch_size", "encoder_dim", "encoder_layers", "encoder_heads",
                          "encoder_ffn_dim", "feat_dim", "decoder_blocks", "decoder_heads", "decoder_mlp_dim",
                          "upsample_factor"});
    auto& sc = c.model.sam;
    read(s, "image_size", sc.image_size, "sam");
    read(s, "patch_size", sc.patch_size, "sam");
    read(s, "encoder_dim", sc.encoder_dim, "sam");
    read(s, "encoder_layers", sc.encoder_layers, "sam");
    read(s, "encoder_heads", sc.encoder_heads, "sam");
    read(s, "encoder_ffn_dim", sc.encoder_ffn_dim, "sam");
    read(s, "feat_dim", sc.feat_dim, "sam");
    read(s, "decoder_blocks", sc.decoder_blocks, "sam");
    read(s, "decoder_heads", sc.decoder_heads, "sam");
    read(s, "decoder_mlp_dim", sc.decoder_mlp_dim, "sam");
    read(s, "upsample_factor", sc.upsample_factor, "sam");
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, "train", {"lr", "lr_final", "total_iterations", "batch_size", "grad_accum_steps", "bce_weight",
                            "dice_weight", "seed", "trainable", "beta1", "beta2", "eps", "weight_decay",
                            "eval_every", "threshold"});
    auto& tc = c.train;
    read(t, "lr", tc.lr, "train");
    read(t, "lr_final", tc.lr_final, "train");
    read(t, "total_iterations", tc.total_iterations, "train");
    read(t, "batch_size", tc.batch_size, "train");
    read(t, "grad_accum_steps", tc.grad_accum_steps, "train");
    read(t, "bce_weight", tc.loss_weights.bce, "train");
    read(t, "dice_weight", tc.loss_weights.dice, "train");
    read(t, "seed", tc.seed, "train");
    read(t, "beta1", tc.beta1, "train");
    read(t, "beta2", tc.beta2, "train");
    read(t, "eps", tc.eps, "train");
    read(t, "weight_decay", tc.weight_decay, "train");
    read(t, "eval_every", tc.eval_every, "train");
    read(t, "threshold", tc.threshold, "train");
    if (t.contains("trainable")) {
      const json& f = t["trainable"];
      check_keys(f, "train.trainable", {"image_encoder", "multimodal_encoder", "prompt_encoder", "mask_decoder"});
      read(f, "image_encoder", tc.trainable.image_encoder, "train.trainable");
      read(f, "multimodal_encoder", tc.trainable.multimodal_encoder, "train.trainable");
      read(f, "prompt_encoder", tc.trainable.prompt_encoder, "train.trainable");
      read(f, "mask_decoder", tc.trainable.mask_decoder, "train.trainable");
    }
  }

  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d, "data", {"seed", "n_train", "n_val", "canvas_size", "difficulty", "overlap_iou_cap", "min_objects",
                           "max_objects", "train_index", "val_index"});
    auto& dc = c.data;
    read(d, "seed", dc.seed, "data");
    read(d, "n_train", dc.n_train, "data");
    read(d, "n_val", dc.n_val, "data");
    read(d, "canvas_size", dc.canvas_size, "data");
    read(d, "overlap_iou_cap", dc.overlap_iou_cap, "data");
    read(d, "min_objects", dc.min_objects, "data");
    read(d, "max_objects", dc.max_objects, "data");
    read(d, "train_index", dc.train_index, "data");
    read(d, "val_index", dc.val_index, "data");
    if (d.contains("difficulty")) {
      std::string diff;
      read(d, "difficulty", diff, "data");
      try {
        dc.difficulty = parse_difficulty(diff);
      } catch (const std::exception& ex) {
        throw ConfigError(std::string("data.difficulty: ") + ex.what());
      }
    }
  }

  try {
    c.model.encoder.validate();
    c.model.sam.validate();
    c.train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& ex) {
    throw ConfigError(ex.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return run_config_from_json(j);
}

Splits load_splits(const DataConfig& c, const std::filesystem::path& base_dir) {
  Splits s;
  if (!c.train_index.empty()) {
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    s.train = load_dataset(resolve(c.train_index));
    if (!c.val_index.empty()) s.val = load_dataset(resolve(c.val_index));
    return s;
  }
  GeneratorConfig g;
  g.seed = c.seed;
  g.n_samples = c.n_train + c.n_val;
  g.canvas_size = c.canvas_size;
  g.difficulty = c.difficulty;
  g.overlap_iou_cap = c.overlap_iou_cap;
  g.min_objects = c.min_objects;
  g.max_objects = c.max_objects;
  auto all = generate_dataset(g);
  s.val.assign(std::make_move_iterator(all.begin() + static_cast<long>(c.n_train)),
               std::make_move_iterator(all.end()));
  all.resize(c.n_train);
  s.train = std::move(all);
  return s;
}

}  // namespace evfsam
