#include "evfsam/losses.hpp"

#include <cmath>
#include <cstdio>

#include "evfsam/autodiff.hpp"
#include "evfsam/errors.hpp"
#include "evfsam/ops.hpp"
#include "json.hpp"

namespace evfsam {

namespace {

void check_target(const char* op, const Tensor& logits, const Tensor& target) {
  if (logits.shape() != target.shape())
    throw ShapeError(std::string(op) + ": logits " + to_string(logits.shape()) + " vs target " +
                     to_string(target.shape()));
  for (Scalar t : target.data())
    if (t != 0 && t != 1) throw ValidationError(std::string(op) + ": target value " + std::to_string(t) + " is not 0/1");
}

Scalar stable_sigmoid(Scalar z) {
  if (z >= 0) return 1 / (1 + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (1 + e);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Tensor bce_loss(const Tensor& logits, const Tensor& target) {
  check_target("bce_loss", logits, target);
  const auto z = logits.data();
  const auto t = target.data();
  const std::size_t n = z.size();
  Scalar acc = 0;
  for (std::size_t i = 0; i < n; ++i)
    acc += std::max(z[i], Scalar{0}) - z[i] * t[i] + std::log1p(std::exp(-std::abs(z[i])));
  Tensor out = Tensor::scalar(acc / static_cast<Scalar>(n));
  if (detail::should_record({&logits})) {
    detail::record("bce_loss", {logits}, out, [logits, target, out, n]() {
      const Scalar g = out.grad()[0] / static_cast<Scalar>(n);
      auto gz = logits.ensure_grad();
      const auto z = logits.data();
      const auto t = target.data();
      for (std::size_t i = 0; i < n; ++i) gz[i] += g * (stable_sigmoid(z[i]) - t[i]);
    });
  }
  return out;
}

Tensor dice_loss(const Tensor& logits, const Tensor& target, Scalar smooth) {
  check_target("dice_loss", logits, target);
  const auto z = logits.data();
  const auto t = target.data();
  const std::size_t n = z.size();
  std::vector<Scalar> p(n);
  Scalar inter = 0, sp = 0, st = 0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = stable_sigmoid(z[i]);
    inter += p[i] * t[i];
    sp += p[i];
    st += t[i];
  }
  const Scalar num = 2 * inter + smooth;
  const Scalar den = sp + st + smooth;
  Tensor out = Tensor::scalar(1 - num / den);
  if (detail::should_record({&logits})) {
    detail::record("dice_loss", {logits}, out, [logits, target, out, p = std::move(p), num, den]() {
      // d/dp_i [1 - num/den] = -(2 t_i den - num) / den^2, then chain through sigmoid.
      const Scalar g = out.grad()[0];
      auto gz = logits.ensure_grad();
      const auto t = target.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const Scalar dp = -(2 * t[i] * den - num) / (den * den);
        gz[i] += g * dp * p[i] * (1 - p[i]);
      }
    });
  }
  return out;
}

LossBreakdown total_loss(const Tensor& logits, const Tensor& target, const LossWeights& weights) {
  Tensor b = bce_loss(logits, target);
  Tensor d = dice_loss(logits, target);
  LossBreakdown out;
  out.bce = b.item();
  out.dice = d.item();
  out.total = add(scale(b, weights.bce), scale(d, weights.dice));
  return out;
}

std::string MetricsReport::to_text() const {
  return "giou " + fmt(giou) + "\nciou " + fmt(ciou) + "\nn_samples " + std::to_string(n_samples) + "\n";
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["giou"] = giou;
  j["ciou"] = ciou;
  j["n_samples"] = n_samples;
  j["per_sample_iou"] = per_sample_iou;
  return j.dump(2) + "\n";
}

MetricsReport compute_metrics(const std::vector<Mask>& predictions, const std::vector<Mask>& ground_truth) {
  if (predictions.size() != ground_truth.size())
    throw ValidationError("compute_metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                          std::to_string(ground_truth.size()) + " ground-truth masks");
  MetricsReport r;
  r.n_samples = predictions.size();
  std::uint64_t cum_inter = 0, cum_union = 0;
  double iou_sum = 0;
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    const Mask& p = predictions[s];
    const Mask& g = ground_truth[s];
    if (p.height != g.height || p.width != g.width)
      throw ValidationError("compute_metrics: sample " + std::to_string(s) + " shape mismatch");
    std::uint64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < p.bits.size(); ++i) {
      inter += (p.bits[i] && g.bits[i]);
      uni += (p.bits[i] || g.bits[i]);
    }
    const double iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    r.per_sample_iou.push_back(iou);
    iou_sum += iou;
    cum_inter += inter;
    cum_union += uni;
  }
  if (r.n_samples > 0) r.giou = iou_sum / static_cast<double>(r.n_samples);
  r.ciou = cum_union == 0 ? 1.0 : static_cast<double>(cum_inter) / static_cast<double>(cum_union);
  return r;
}

}  // namespace evfsam
