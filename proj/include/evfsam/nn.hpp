#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "evfsam/rng.hpp"
#include "evfsam/tensor.hpp"

namespace evfsam {

// Freeze-flag granularity. Every parameter of the model belongs to exactly one group.
enum class ParamGroup { ImageEncoder, MultimodalEncoder, PromptEncoder, MaskDecoder };

inline constexpr ParamGroup kAllGroups[] = {ParamGroup::ImageEncoder, ParamGroup::MultimodalEncoder,
                                            ParamGroup::PromptEncoder, ParamGroup::MaskDecoder};

std::string to_string(ParamGroup group);
ParamGroup parse_param_group(const std::string& name);

struct Parameter {
  std::string name;  // stable hierarchical name, e.g. "encoder.layers.0.attn.q.weight"
  ParamGroup group;
  Tensor value;
};

// Owns the model's learnable tensors in registration order.
class ParameterStore {
 public:
  Tensor add(std::string name, ParamGroup group, Tensor init);
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t total_elements() const;

  void set_trainable(ParamGroup group, bool trainable);
  void zero_grad();
  // Deep copy of every parameter value (grads dropped).
  std::vector<Tensor> snapshot() const;
  // Copies values from another store by name; every name must exist in both.
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual dense-layer default.
  Tensor fan_in_uniform(Shape shape, std::size_t fan_in);
  Tensor normal(Shape shape, Scalar stddev);
  Rng& rng() { return rng_; }

 private:
  Rng rng_;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const;
  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
};

Linear make_linear(ParameterStore& store, Initializer& init, const std::string& name, ParamGroup group,
                   std::size_t in, std::size_t out);

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  Tensor operator()(const Tensor& x) const;
};

LayerNorm make_layer_norm(ParameterStore& store, const std::string& name, ParamGroup group, std::size_t dim);

// Multi-head scaled dot-product attention with separate q/k/v/out projections.
struct MultiHeadAttention {
  Linear q, k, v, out;
  std::size_t num_heads = 1;

  // queries [Tq, D], keys/values [Tk, D]; `mask` is an additive [Tq, Tk]
  // constant (0 or -inf) or an undefined tensor.
  Tensor operator()(const Tensor& queries, const Tensor& keys, const Tensor& values,
                    const Tensor& mask = Tensor()) const;
};

MultiHeadAttention make_attention(ParameterStore& store, Initializer& init, const std::string& name,
                                  ParamGroup group, std::size_t dim, std::size_t num_heads);

// Two-layer perceptron: fc2(act(fc1(x))).
struct Mlp {
  enum class Activation { Relu, Gelu };
  Linear fc1, fc2;
  Activation activation = Activation::Gelu;
  Tensor operator()(const Tensor& x) const;
};

Mlp make_mlp(ParameterStore& store, Initializer& init, const std::string& name, ParamGroup group,
             std::size_t in, std::size_t hidden, std::size_t out, Mlp::Activation act);

// [T, H*dh] -> [H, T, dh] (or [H, dh, T] when `transposed`).
Tensor split_heads(const Tensor& x, std::size_t num_heads, bool transposed = false);
// [H, T, dh] -> [T, H*dh]
Tensor merge_heads(const Tensor& x);

}  // namespace evfsam
