#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "evfsam/data.hpp"
#include "evfsam/losses.hpp"
#include "evfsam/model.hpp"
#include "json.hpp"

namespace evfsam {

struct FreezeFlags {
  bool image_encoder = false;  // trainable?
  bool multimodal_encoder = true;
  bool prompt_encoder = true;
  bool mask_decoder = true;

  bool trainable(ParamGroup g) const;
  void set(ParamGroup g, bool trainable);
  bool operator==(const FreezeFlags&) const = default;
};

struct TrainConfig {
  double lr = 1e-4;
  double lr_final = 0.0;
  std::size_t total_iterations = 1000;
  std::size_t batch_size = 4;
  std::size_t grad_accum_steps = 2;
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  FreezeFlags trainable;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t eval_every = 0;  // 0: evaluate only at the end
  double threshold = 0.0;      // evaluation binarization (logits > threshold)

  void validate() const;
};

// lr(t) = lr0 (1 - t/T) + lr_final (t/T)
double learning_rate(const TrainConfig& config, std::size_t t);

// AdamW with bias correction and decoupled weight decay over the trainable
// parameters of a store. Moments are keyed by parameter name.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}
  explicit AdamW(const TrainConfig& c) : AdamW(c.beta1, c.beta2, c.eps, c.weight_decay) {}

  // Applies one update to every parameter with requires_grad, using its grad.
  // Throws NumericError naming the first parameter with a non-finite gradient.
  void step(ParameterStore& store, double lr);

  std::uint64_t steps() const { return t_; }
  struct Moments {
    Tensor m, v;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(std::uint64_t steps, std::map<std::string, Moments> moments);

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

struct StepRecord {
  std::size_t it = 0;
  double lr = 0;
  double loss = 0;
  double bce = 0;
  double dice = 0;
};

// Deterministic training loop over an in-memory dataset.
class Trainer {
 public:
  Trainer(EvfSamModel& model, const TrainConfig& config);

  // One optimizer step: grad_accum_steps micro-batches of batch_size samples,
  // each sample's loss weighted 1/(batch_size * grad_accum_steps).
  StepRecord step(const std::vector<SegSample>& data);

  // Runs the remaining iterations. Writes JSON-lines step/eval records to
  // `log` if given. Evaluates on `val` (or `data` when val is empty) every
  // eval_every steps and after the last one.
  MetricsReport run(const std::vector<SegSample>& data, const std::vector<SegSample>& val = {},
                    std::ostream* log = nullptr);

  std::size_t iteration() const { return iteration_; }
  const AdamW& optimizer() const { return adam_; }
  AdamW& optimizer() { return adam_; }
  void set_iteration(std::size_t it) { iteration_ = it; }

 private:
  std::size_t next_index(std::size_t n);
  const ImageFeatureGrid* cached_features(const std::vector<SegSample>& data, std::size_t i);

  EvfSamModel& model_;
  TrainConfig config_;
  AdamW adam_;
  std::size_t iteration_ = 0;
  Rng order_rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  const std::vector<SegSample>* cache_owner_ = nullptr;
  std::vector<std::optional<ImageFeatureGrid>> cache_;
};

MetricsReport evaluate(const EvfSamModel& model, const std::vector<SegSample>& data, double threshold = 0.0);

// Mask target at the model's output resolution.
Tensor training_target(const Mask& mask, std::size_t out_size);

struct Checkpoint {
  std::uint64_t iteration = 0;
  nlohmann::ordered_json config;
  std::vector<std::pair<std::string, Tensor>> params;  // registration order
  std::uint64_t adam_steps = 0;
  std::map<std::string, AdamW::Moments> moments;

  static Checkpoint capture(const EvfSamModel& model, const AdamW* adam, std::uint64_t iteration,
                            nlohmann::ordered_json config);
  // Copies parameter values (and optimizer state if given) into a model whose
  // parameter names and shapes match.
  void apply(EvfSamModel& model, AdamW* adam) const;
};

// "EVFCKPT1", u64 manifest length, JSON manifest, tensor blob.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace evfsam
