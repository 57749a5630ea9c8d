#include "evfsam/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "evfsam/autodiff.hpp"
#include "evfsam/errors.hpp"
#include "evfsam/ops.hpp"
#include "evfsam/serialize.hpp"

namespace evfsam {

bool FreezeFlags::trainable(ParamGroup g) const {
  switch (g) {
    case ParamGroup::ImageEncoder: return image_encoder;
    case ParamGroup::MultimodalEncoder: return multimodal_encoder;
    case ParamGroup::PromptEncoder: return prompt_encoder;
    case ParamGroup::MaskDecoder: return mask_decoder;
  }
  return false;
}

void FreezeFlags::set(ParamGroup g, bool trainable) {
  switch (g) {
    case ParamGroup::ImageEncoder: image_encoder = trainable; break;
    case ParamGroup::MultimodalEncoder: multimodal_encoder = trainable; break;
    case ParamGroup::PromptEncoder: prompt_encoder = trainable; break;
    case ParamGroup::MaskDecoder: mask_decoder = trainable; break;
  }
}

void TrainConfig::validate() const {
  if (total_iterations == 0) throw ConfigError("train.total_iterations must be > 0");
  if (batch_size == 0 || grad_accum_steps == 0) throw ConfigError("train.batch_size and grad_accum_steps must be > 0");
  if (!(lr >= 0) || !(lr_final >= 0)) throw ConfigError("learning rates must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("AdamW betas must lie in [0,1)");
  if (!(eps > 0)) throw ConfigError("AdamW eps must be > 0");
}

double learning_rate(const TrainConfig& c, std::size_t t) {
  const double f = static_cast<double>(t) / static_cast<double>(c.total_iterations);
  return c.lr * (1.0 - f) + c.lr_final * f;
}

// ---------------------------------------------------------------- AdamW

void AdamW::step(ParameterStore& store, double lr) {
  for (const auto& p : store.params()) {
    if (!p.value.requires_grad() || !p.value.has_grad()) continue;
    for (Scalar g : p.value.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& p : store.params()) {
    if (!p.value.requires_grad() || !p.value.has_grad()) continue;
    auto it = moments_.find(p.name);
    if (it == moments_.end())
      it = moments_.emplace(p.name, Moments{Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())}).first;
    auto w = p.value.data();
    auto g = p.value.grad();
    auto m = it->second.m.data();
    auto v = it->second.v.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<Scalar>(beta1_ * m[i] + (1 - beta1_) * g[i]);
      v[i] = static_cast<Scalar>(beta2_ * v[i] + (1 - beta2_) * g[i] * g[i]);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] = static_cast<Scalar>(w[i] - lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]));
    }
  }
}

void AdamW::restore(std::uint64_t steps, std::map<std::string, Moments> moments) {
  t_ = steps;
  moments_ = std::move(moments);
}

// ---------------------------------------------------------------- training

Tensor training_target(const Mask& mask, std::size_t out_size) {
  if (mask.height == out_size && mask.width == out_size) return mask_to_tensor(mask);
  return mask_to_tensor(resize_nearest(mask, out_size, out_size));
}

Trainer::Trainer(EvfSamModel& model, const TrainConfig& config)
    : model_(model), config_(config), adam_(config), order_rng_(mix_seed(config.seed, 0x5eed)) {
  config_.validate();
  for (ParamGroup g : kAllGroups) model_.params().set_trainable(g, config_.trainable.trainable(g));
}

std::size_t Trainer::next_index(std::size_t n) {
  if (order_.size() != n || cursor_ == n) {
    order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    order_rng_.shuffle(order_);
    cursor_ = 0;
  }
  return order_[cursor_++];
}

const ImageFeatureGrid* Trainer::cached_features(const std::vector<SegSample>& data, std::size_t i) {
  if (config_.trainable.image_encoder) return nullptr;
  if (cache_owner_ != &data || cache_.size() != data.size()) {
    cache_owner_ = &data;
    cache_.assign(data.size(), std::nullopt);
  }
  if (!cache_[i]) {
    NoGradScope no_grad;
    cache_[i] = model_.image_features(data[i].image);
  }
  return &*cache_[i];
}

StepRecord Trainer::step(const std::vector<SegSample>& data) {
  if (data.empty()) throw ConfigError("training dataset is empty");
  const std::size_t per_step = config_.batch_size * config_.grad_accum_steps;
  const Scalar weight = Scalar{1} / static_cast<Scalar>(per_step);
  const std::size_t out = model_.config().sam.output_size();
  StepRecord rec;
  rec.it = iteration_;
  rec.lr = learning_rate(config_, iteration_);
  model_.params().zero_grad();
  for (std::size_t a = 0; a < config_.grad_accum_steps; ++a) {
    for (std::size_t b = 0; b < config_.batch_size; ++b) {
      const std::size_t i = next_index(data.size());
      const SegSample& s = data[i];
      Tape tape;
      TapeScope scope(tape);
      const Tensor logits = model_.forward(s.image, s.expression, {}, cached_features(data, i));
      const LossBreakdown loss = total_loss(logits, training_target(s.mask, out), config_.loss_weights);
      const double l = loss.total.item();
      if (!std::isfinite(l))
        throw NumericError("loss is " + std::to_string(l) + " at iteration " + std::to_string(iteration_) +
                           " (sample " + s.sample_id + ")");
      rec.loss += l / static_cast<double>(per_step);
      rec.bce += loss.bce / static_cast<double>(per_step);
      rec.dice += loss.dice / static_cast<double>(per_step);
      if (loss.total.requires_grad()) tape.backward(scale(loss.total, weight));
    }
  }
  adam_.step(model_.params(), rec.lr);
  model_.params().zero_grad();
  ++iteration_;
  return rec;
}

namespace {

void log_step(std::ostream& os, const StepRecord& r) {
  nlohmann::ordered_json j;
  j["it"] = r.it;
  j["lr"] = r.lr;
  j["loss"] = r.loss;
  j["bce"] = r.bce;
  j["dice"] = r.dice;
  os << j.dump() << '\n';
}

void log_eval(std::ostream& os, std::size_t it, const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["it"] = it;
  j["giou"] = m.giou;
  j["ciou"] = m.ciou;
  os << j.dump() << '\n';
}

}  // namespace

MetricsReport Trainer::run(const std::vector<SegSample>& data, const std::vector<SegSample>& val,
                           std::ostream* log) {
  const auto& eval_set = val.empty() ? data : val;
  MetricsReport report;
  while (iteration_ < config_.total_iterations) {
    const StepRecord r = step(data);
    if (log) log_step(*log, r);
    const bool last = iteration_ == config_.total_iterations;
    if (last || (config_.eval_every > 0 && iteration_ % config_.eval_every == 0)) {
      report = evaluate(model_, eval_set, config_.threshold);
      if (log) log_eval(*log, iteration_, report);
    }
  }
  return report;
}

MetricsReport evaluate(const EvfSamModel& model, const std::vector<SegSample>& data, double threshold) {
  std::vector<Mask> pred, gt;
  pred.reserve(data.size());
  gt.reserve(data.size());
  for (const auto& s : data) {
    pred.push_back(model.predict(s.image, s.expression, static_cast<Scalar>(threshold)));
    gt.push_back(s.mask);
  }
  return compute_metrics(pred, gt);
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'E', 'V', 'F', 'C', 'K', 'P', 'T', '1'};

}  // namespace

Checkpoint Checkpoint::capture(const EvfSamModel& model, const AdamW* adam, std::uint64_t iteration,
                               nlohmann::ordered_json config) {
  Checkpoint c;
  c.iteration = iteration;
  c.config = std::move(config);
  for (const auto& p : model.params().params()) c.params.emplace_back(p.name, p.value.clone());
  if (adam) {
    c.adam_steps = adam->steps();
    for (const auto& [name, mo] : adam->moments()) c.moments[name] = {mo.m.clone(), mo.v.clone()};
  }
  return c;
}

void Checkpoint::apply(EvfSamModel& model, AdamW* adam) const {
  auto& store = model.params();
  if (params.size() != store.params().size())
    throw FormatError("checkpoint holds " + std::to_string(params.size()) + " parameters, model has " +
                      std::to_string(store.params().size()));
  for (const auto& [name, t] : params) {
    if (!store.contains(name)) throw FormatError("checkpoint parameter '" + name + "' not in model");
    Tensor dst = store.at(name).value;
    if (dst.shape() != t.shape())
      throw FormatError("checkpoint parameter '" + name + "' has shape " + to_string(t.shape()) + ", model " +
                        to_string(dst.shape()));
    std::copy(t.data().begin(), t.data().end(), dst.data().begin());
  }
  if (adam) {
    std::map<std::string, AdamW::Moments> m;
    for (const auto& [name, mo] : moments) m[name] = {mo.m.clone(), mo.v.clone()};
    adam->restore(adam_steps, std::move(m));
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ostringstream blob;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  auto put = [&](const std::string& kind, const std::string& name, const Tensor& t) {
    nlohmann::ordered_json e;
    e["kind"] = kind;
    e["name"] = name;
    e["offset"] = static_cast<std::uint64_t>(blob.tellp());
    e["shape"] = t.shape();
    tensors.push_back(e);
    write_tensor(blob, t);
  };
  for (const auto& [name, t] : ckpt.params) put("param", name, t);
  for (const auto& [name, mo] : ckpt.moments) {
    put("adam_m", name, mo.m);
    put("adam_v", name, mo.v);
  }
  nlohmann::ordered_json manifest;
  manifest["iteration"] = ckpt.iteration;
  manifest["adam_steps"] = ckpt.adam_steps;
  manifest["config"] = ckpt.config;
  manifest["tensors"] = tensors;
  const std::string m = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os.write(kMagic, sizeof kMagic);
  write_u64(os, m.size());
  os.write(m.data(), static_cast<std::streamsize>(m.size()));
  const std::string b = blob.str();
  os.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!os) throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kMagic))
    throw FormatError("'" + path.string() + "' is not a checkpoint (bad magic)");
  const std::uint64_t mlen = read_u64(is);
  if (mlen > (std::uint64_t{1} << 32)) throw FormatError("checkpoint manifest length " + std::to_string(mlen));
  std::string m(mlen, '\0');
  if (!is.read(m.data(), static_cast<std::streamsize>(mlen))) throw FormatError("truncated checkpoint manifest");
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  const std::streamoff base = is.tellg();
  Checkpoint c;
  try {
    c.iteration = manifest.at("iteration").get<std::uint64_t>();
    c.adam_steps = manifest.at("adam_steps").get<std::uint64_t>();
    c.config = manifest.at("config");
    for (const auto& e : manifest.at("tensors")) {
      is.seekg(base + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
      Tensor t = read_tensor(is);
      if (t.shape() != e.at("shape").get<Shape>())
        throw FormatError("checkpoint tensor '" + e.at("name").get<std::string>() + "' shape disagrees with manifest");
      const auto kind = e.at("kind").get<std::string>();
      const auto name = e.at("name").get<std::string>();
      if (kind == "param") c.params.emplace_back(name, t);
      else if (kind == "adam_m") c.moments[name].m = t;
      else if (kind == "adam_v") c.moments[name].v = t;
      else throw FormatError("unknown checkpoint tensor kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  return c;
}

}  // namespace evfsam
