#include "evfsam/nn.hpp"

#include <cmath>

#include "evfsam/errors.hpp"
#include "evfsam/ops.hpp"

namespace evfsam {

std::string to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::ImageEncoder: return "image_encoder";
    case ParamGroup::MultimodalEncoder: return "multimodal_encoder";
    case ParamGroup::PromptEncoder: return "prompt_encoder";
    case ParamGroup::MaskDecoder: return "mask_decoder";
  }
  return "?";
}

ParamGroup parse_param_group(const std::string& name) {
  for (auto g : kAllGroups)
    if (to_string(g) == name) return g;
  throw ConfigError("unknown parameter group '" + name + "'");
}

Tensor ParameterStore::add(std::string name, ParamGroup group, Tensor init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  init.set_requires_grad(true);
  index_[name] = params_.size();
  params_.push_back({std::move(name), group, init});
  return init;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
  return params_[it->second];
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParameterStore::set_trainable(ParamGroup group, bool trainable) {
  for (auto& p : params_)
    if (p.group == group) p.value.set_requires_grad(trainable);
}

void ParameterStore::zero_grad() {
  for (auto& p : params_)
    if (p.value.has_grad()) p.value.zero_grad();
}

std::vector<Tensor> ParameterStore::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value.clone());
  return out;
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  for (auto& p : params_) {
    const auto& src = other.at(p.name).value;
    if (src.shape() != p.value.shape())
      throw ShapeError("parameter '" + p.name + "': " + to_string(src.shape()) + " vs " +
                       to_string(p.value.shape()));
    std::copy(src.data().begin(), src.data().end(), p.value.data().begin());
  }
}

Tensor Initializer::fan_in_uniform(Shape shape, std::size_t fan_in) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<Scalar>(rng_.uniform(-bound, bound));
  return t;
}

Tensor Initializer::normal(Shape shape, Scalar stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Scalar>(rng_.normal() * stddev);
  return t;
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

Linear make_linear(ParameterStore& store, Initializer& init, const std::string& name, ParamGroup group,
                   std::size_t in, std::size_t out) {
  Linear l;
  l.weight = store.add(name + ".weight", group, init.fan_in_uniform({in, out}, in));
  l.bias = store.add(name + ".bias", group, init.fan_in_uniform({out}, in));
  return l;
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

LayerNorm make_layer_norm(ParameterStore& store, const std::string& name, ParamGroup group, std::size_t dim) {
  return {store.add(name + ".gamma", group, Tensor::full({dim}, 1)),
          store.add(name + ".beta", group, Tensor::zeros({dim}))};
}

Tensor split_heads(const Tensor& x, std::size_t num_heads, bool transposed) {
  if (x.rank() != 2 || x.dim(1) % num_heads != 0)
    throw ShapeError("split_heads: " + to_string(x.shape()) + " into " + std::to_string(num_heads) + " heads");
  const std::size_t t = x.dim(0), d = x.dim(1), dh = d / num_heads;
  auto idx = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::size_t o = 0;
  for (std::size_t h = 0; h < num_heads; ++h) {
    if (transposed) {
      for (std::size_t j = 0; j < dh; ++j)
        for (std::size_t i = 0; i < t; ++i) (*idx)[o++] = i * d + h * dh + j;
    } else {
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < dh; ++j) (*idx)[o++] = i * d + h * dh + j;
    }
  }
  return gather(x, idx, transposed ? Shape{num_heads, dh, t} : Shape{num_heads, t, dh});
}

Tensor merge_heads(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("merge_heads: expected rank 3, got " + to_string(x.shape()));
  const std::size_t nh = x.dim(0), t = x.dim(1), dh = x.dim(2);
  auto idx = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::size_t o = 0;
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t h = 0; h < nh; ++h)
      for (std::size_t j = 0; j < dh; ++j) (*idx)[o++] = h * t * dh + i * dh + j;
  return gather(x, idx, {t, nh * dh});
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& keys, const Tensor& values,
                                      const Tensor& mask) const {
  const std::size_t d = q.out_dim();
  const Scalar inv_sqrt = Scalar{1} / std::sqrt(static_cast<Scalar>(d / num_heads));
  Tensor qh = split_heads(scale(q(queries), inv_sqrt), num_heads);
  Tensor kt = split_heads(k(keys), num_heads, /*transposed=*/true);
  Tensor vh = split_heads(v(values), num_heads);
  Tensor scores = matmul(qh, kt);
  if (mask.defined()) scores = add_mask(scores, mask);
  return out(merge_heads(matmul(softmax(scores, 2), vh)));
}

MultiHeadAttention make_attention(ParameterStore& store, Initializer& init, const std::string& name,
                                  ParamGroup group, std::size_t dim, std::size_t num_heads) {
  if (num_heads == 0 || dim % num_heads != 0)
    throw ConfigError(name + ": dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(num_heads) + " heads");
  MultiHeadAttention a;
  a.q = make_linear(store, init, name + ".q", group, dim, dim);
  a.k = make_linear(store, init, name + ".k", group, dim, dim);
  a.v = make_linear(store, init, name + ".v", group, dim, dim);
  a.out = make_linear(store, init, name + ".out", group, dim, dim);
  a.num_heads = num_heads;
  return a;
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor h = fc1(x);
  h = activation == Activation::Relu ? relu(h) : gelu(h);
  return fc2(h);
}

Mlp make_mlp(ParameterStore& store, Initializer& init, const std::string& name, ParamGroup group,
             std::size_t in, std::size_t hidden, std::size_t out, Mlp::Activation act) {
  Mlp m;
  m.fc1 = make_linear(store, init, name + ".fc1", group, in, hidden);
  m.fc2 = make_linear(store, init, name + ".fc2", group, hidden, out);
  m.activation = act;
  return m;
}

}  // namespace evfsam
