// Command-line driver: data generation, training, evaluation, ablations,
// gradient checks and mask export.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "evfsam/ablate.hpp"
#include "evfsam/config.hpp"
#include "evfsam/errors.hpp"
#include "evfsam/gradsuite.hpp"
#include "evfsam/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace evfsam;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;
constexpr int kCheckFailed = 3;

constexpr double kGradTolerance = 1e-4;

// Usage-level failure detected after argument parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool verbose() {
  const char* v = std::getenv("EVFSAM_LOG");
  return v && std::string(v) != "0" && std::string(v) != "quiet";
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory '" + dir.string() + "'");
  const fs::path probe = dir / ".evfsam_write_probe";
  if (!std::ofstream(probe)) throw UsageError("output directory '" + dir.string() + "' is not writable");
  fs::remove(probe, ec);
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os || !(os << content)) throw UsageError("cannot write '" + path.string() + "'");
}

RunConfig config_or_defaults(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

fs::path config_dir(const std::string& path) { return path.empty() ? fs::path{} : fs::path(path).parent_path(); }

EvfSamModel load_model(const Checkpoint& ckpt) {
  const RunConfig rc = run_config_from_json(ckpt.config);
  EvfSamModel model(rc.model, grammar_tokenizer(rc.model.encoder.max_text_len));
  ckpt.apply(model, nullptr);
  return model;
}

int gen_data(std::uint64_t seed, std::size_t n, std::size_t size, const std::string& difficulty,
             const std::string& out) {
  if (n == 0) throw UsageError("--n must be positive");
  GeneratorConfig g;
  g.seed = seed;
  g.n_samples = n;
  g.canvas_size = size;
  g.difficulty = parse_difficulty(difficulty);
  ensure_dir(out);
  const auto samples = generate_dataset(g);
  const auto index = write_dataset(out, samples);
  std::cout << "wrote " << samples.size() << " samples to " << index.string() << "\n";
  return kOk;
}

int train(const std::string& config_path, const std::string& out_dir) {
  const RunConfig rc = config_or_defaults(config_path);
  ensure_dir(out_dir);
  const fs::path out(out_dir);
  write_file(out / "config.json", to_json(rc).dump(2) + "\n");
  const Splits splits = load_splits(rc.data, config_dir(config_path));
  EvfSamModel model(rc.model, grammar_tokenizer(rc.model.encoder.max_text_len));
  Trainer trainer(model, rc.train);
  std::ofstream log(out / "train_log.jsonl", std::ios::binary);
  if (!log) throw UsageError("cannot write training log in '" + out_dir + "'");
  const MetricsReport report = trainer.run(splits.train, splits.val, &log);
  save_checkpoint(out / "checkpoint.evf", Checkpoint::capture(model, &trainer.optimizer(), trainer.iteration(), to_json(rc)));
  write_file(out / "metrics.txt", report.to_text());
  write_file(out / "metrics.json", report.to_json() + "\n");
  std::cout << report.to_text();
  return kOk;
}

int eval(const std::string& config_path, const std::string& ckpt_path, const std::string& split,
         const std::string& out_prefix) {
  if (split != "train" && split != "val") throw UsageError("--split must be 'train' or 'val'");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const RunConfig rc = config_path.empty() ? run_config_from_json(ckpt.config) : load_run_config(config_path);
  const EvfSamModel model = load_model(ckpt);
  const Splits splits = load_splits(rc.data, config_dir(config_path));
  const MetricsReport report = evaluate(model, split == "train" ? splits.train : splits.val, rc.train.threshold);
  if (!out_prefix.empty()) {
    write_file(out_prefix + ".txt", report.to_text());
    write_file(out_prefix + ".json", report.to_json() + "\n");
  }
  std::cout << report.to_text();
  return kOk;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::istringstream is(s);
  for (std::string tok; std::getline(is, tok, ',');) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("--seeds must be a comma-separated list of integers, got '" + s + "'");
    }
  }
  if (seeds.empty()) throw UsageError("--seeds is empty");
  return seeds;
}

int ablate_cmd(const std::string& config_path, const std::string& axes, const std::string& seeds,
               const std::string& out_prefix) {
  const RunConfig rc = config_or_defaults(config_path);
  const AblationAxes parsed = parse_axes(axes);
  const auto seed_list = parse_seeds(seeds);
  const Splits splits = load_splits(rc.data, config_dir(config_path));
  const AblationResult result = ablate(rc, parsed, seed_list, splits);
  std::cout << result.to_table();
  if (!out_prefix.empty()) {
    write_file(out_prefix + ".txt", result.to_table());
    write_file(out_prefix + ".json", result.to_json().dump(2) + "\n");
  }
  for (const auto& row : result.rows)
    if (!row.errors.empty()) return kRuntime;
  return kOk;
}

int gradcheck(const std::string& scope, std::size_t configs, std::uint64_t seed, const std::string& json_path) {
  const auto reports = run_gradcheck(scope, configs, seed);
  bool ok = true;
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    const bool pass = r.max_rel_error < kGradTolerance;
    ok = ok && pass;
    std::printf("%-10s configs %3zu  max_rel_error %.3e  %s\n", r.block.c_str(), r.configs,
                static_cast<double>(r.max_rel_error), pass ? "ok" : "FAIL");
    j.push_back({{"block", r.block}, {"configs", r.configs}, {"max_rel_error", r.max_rel_error}, {"pass", pass}});
  }
  if (!json_path.empty()) write_file(json_path, j.dump(2) + "\n");
  return ok ? kOk : kCheckFailed;
}

int predict(const std::string& ckpt_path, const std::string& image_path, const std::string& text,
            const std::string& out_prefix, double threshold) {
  const EvfSamModel model = load_model(load_checkpoint(ckpt_path));
  const Image image = read_ppm(image_path);
  const Mask mask = model.predict(image, text, static_cast<Scalar>(threshold));
  write_pgm(out_prefix + ".pgm", mask);
  nlohmann::ordered_json j;
  j["expression"] = text;
  j["mask_rle"] = {{"size", {mask.height, mask.width}}, {"counts", rle_encode(mask)}};
  write_file(out_prefix + ".json", j.dump() + "\n");
  std::cout << "mask " << mask.height << "x" << mask.width << ", " << mask.count() << " pixels set\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Early vision-language fused segmentation toolkit"};
  app.require_subcommand(0, 1);
  bool dump_defaults = false;
  app.add_flag("--dump-defaults", dump_defaults, "Print the default run configuration as JSON");

  std::uint64_t seed = 0;
  std::size_t n = 100, size = 48;
  std::string difficulty = "spatial", out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic referring-segmentation dataset");
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--n", n, "Number of samples");
  gen->add_option("--size", size, "Canvas size in pixels");
  gen->add_option("--difficulty", difficulty, "attributes | spatial");
  gen->add_option("--out", out, "Output directory")->required();

  std::string config, out_dir;
  auto* tr = app.add_subcommand("train", "Train a model and write checkpoint, log and metrics");
  tr->add_option("--config", config, "Run configuration JSON (defaults if omitted)");
  tr->add_option("--out-dir", out_dir, "Output directory")->required();

  std::string checkpoint, split = "val", out_prefix;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  ev->add_option("--config", config, "Run configuration JSON (defaults to the checkpoint's)");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--split", split, "train | val");
  ev->add_option("--out", out_prefix, "Write <prefix>.txt and <prefix>.json");

  std::string axes, seeds = "0,1,2";
  auto* ab = app.add_subcommand("ablate", "Train and compare configurations over ablation axes");
  ab->add_option("--config", config, "Base run configuration JSON");
  ab->add_option("--axes", axes, "e.g. 'fusion=text_only,late_concat,early_full'")->required();
  ab->add_option("--seeds", seeds, "Comma-separated seeds");
  ab->add_option("--out", out_prefix, "Write <prefix>.txt and <prefix>.json");

  std::string scope = "all", json_path;
  std::size_t configs = 20;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks per block");
  gc->add_option("--scope", scope, "all | attention | multiway | projector | prompt | decoder | bce | dice");
  gc->add_option("--configs", configs, "Random configurations per block");
  gc->add_option("--seed", seed, "Seed for the random configurations");
  gc->add_option("--json", json_path, "Also write the report as JSON");

  std::string image, text;
  double threshold = 0.0;
  auto* pr = app.add_subcommand("predict", "Export the predicted mask for an image and expression");
  pr->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  pr->add_option("--image", image, "Input image (binary PPM)")->required();
  pr->add_option("--text", text, "Referring expression")->required();
  pr->add_option("--out", out_prefix, "Write <prefix>.pgm and <prefix>.json")->required();
  pr->add_option("--threshold", threshold, "Logit threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (dump_defaults) {
      std::cout << to_json(RunConfig{}).dump(2) << "\n";
      return kOk;
    }
    if (verbose()) std::cerr << "evfsam: running " << (app.get_subcommands().empty() ? "nothing" : app.get_subcommands()[0]->get_name()) << "\n";
    if (*gen) return gen_data(seed, n, size, difficulty, out);
    if (*tr) return train(config, out_dir);
    if (*ev) return eval(config, checkpoint, split, out_prefix);
    if (*ab) return ablate_cmd(config, axes, seeds, out_prefix);
    if (*gc) return gradcheck(scope, configs, seed, json_path);
    if (*pr) return predict(checkpoint, image, text, out_prefix, threshold);
    std::cout << app.help();
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
