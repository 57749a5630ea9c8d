#pragma once

#include <cstddef>
#include <vector>

#include "evfsam/nn.hpp"
#include "evfsam/tensor.hpp"

namespace evfsam {

// Maps the encoder representation to a prompt token: fc2(ReLU(fc1(x))).
class Projector {
 public:
  Projector(ParameterStore& store, Initializer& init, const std::string& name, ParamGroup group,
            std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim);

  // x: [in_dim] or [B, in_dim].
  Tensor operator()(const Tensor& x) const;
  std::size_t in_dim() const { return fc1_.in_dim(); }
  std::size_t out_dim() const { return fc2_.out_dim(); }
  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }

 private:
  Linear fc1_, fc2_;
};

struct PointPrompt {
  double x, y;  // normalized [0,1]^2 image coordinates
};
struct BoxPrompt {
  double x0, y0, x1, y1;
};
struct GeometricPrompts {
  std::vector<PointPrompt> points;
  std::vector<BoxPrompt> boxes;
  std::size_t token_count() const { return points.size() + 2 * boxes.size(); }
};

enum class TokenKind { Point, BoxCorner, Evf };

struct SparsePromptEmbeddings {
  Tensor tokens;  // [B, N, prompt_dim]
  std::vector<TokenKind> provenance;  // per token (shared across the batch)
  std::size_t batch() const { return tokens.dim(0); }
  std::size_t count() const { return tokens.dim(1); }
  // Tokens of batch item b as [N, prompt_dim].
  Tensor sample(std::size_t b) const;
};

// Fixed sinusoidal features of a normalized (x, y) coordinate:
// [sin(2^k pi x), cos(2^k pi x), sin(2^k pi y), cos(2^k pi y)] for k < dim/4.
std::vector<Scalar> coordinate_features(double x, double y, std::size_t dim);

// The adapted prompt encoder: geometric prompts become coordinate features
// plus a learned per-kind embedding, and the projected multimodal (evf) token
// is appended after them. It also owns the dense "no mask" embedding.
class PromptEncoder {
 public:
  PromptEncoder(ParameterStore& store, Initializer& init, const std::string& name, std::size_t prompt_dim);

  SparsePromptEmbeddings build(const Tensor& evf_token, const GeometricPrompts& geometric = {}) const;
  // evf_tokens [B, D]; every batch item must carry the same number of geometric prompts.
  SparsePromptEmbeddings build_batch(const Tensor& evf_tokens, const std::vector<GeometricPrompts>& geometric) const;

  const Tensor& no_mask_embedding() const { return no_mask_; }
  std::size_t prompt_dim() const { return dim_; }

 private:
  Tensor tokens_for(const Tensor& evf_token, const GeometricPrompts& geometric, std::vector<TokenKind>& kinds) const;

  std::size_t dim_;
  Tensor point_embed_, corner_tl_embed_, corner_br_embed_;
  Tensor no_mask_;
};

}  // namespace evfsam
