#pragma once

#include <cstddef>
#include <vector>

#include "evfsam/image.hpp"
#include "evfsam/nn.hpp"
#include "evfsam/prompt.hpp"

namespace evfsam {

struct SamConfig {
  std::size_t image_size = 48;
  std::size_t patch_size = 4;
  std::size_t encoder_dim = 32;
  std::size_t encoder_layers = 2;
  std::size_t encoder_heads = 2;
  std::size_t encoder_ffn_dim = 64;
  std::size_t feat_dim = 32;  // == prompt_dim
  std::size_t decoder_blocks = 2;
  std::size_t decoder_heads = 2;
  std::size_t decoder_mlp_dim = 64;
  std::size_t upsample_factor = 4;  // two x2 transposed-conv stages

  void validate() const;
  std::size_t grid_size() const { return image_size / patch_size; }
  std::size_t output_size() const { return grid_size() * upsample_factor; }
};

struct ImageFeatureGrid {
  Tensor features;  // [h * w, feat_dim], raster order
  std::size_t height = 0;
  std::size_t width = 0;
};

// Plain pre-norm ViT followed by a linear neck to feat_dim.
class SamImageEncoder {
 public:
  SamImageEncoder(const SamConfig& config, ParameterStore& store, Initializer& init,
                  const std::string& prefix = "sam.image_encoder");
  ImageFeatureGrid operator()(const Image& image) const;

 private:
  struct Block {
    LayerNorm norm1, norm2;
    MultiHeadAttention attn;
    Mlp mlp;
  };
  SamConfig config_;
  Linear patch_proj_;
  Tensor pos_;
  std::vector<Block> blocks_;
  Linear neck_;
  LayerNorm neck_norm_;
};

// Two-way transformer mask decoder with a single mask output.
class MaskDecoder {
 public:
  MaskDecoder(const SamConfig& config, ParameterStore& store, Initializer& init,
              const std::string& prefix = "sam.mask_decoder");

  // sparse: one batch item ([1, N, D]); dense_embedding: [D], added to every
  // grid cell. Returns [output_size, output_size] logits.
  Tensor operator()(const ImageFeatureGrid& grid, const SparsePromptEmbeddings& sparse,
                    const Tensor& dense_embedding) const;

 private:
  struct Block {
    MultiHeadAttention self_attn, token_to_image, image_to_token;
    LayerNorm norm1, norm2, norm3, norm4;
    Mlp mlp;
  };
  SamConfig config_;
  Tensor mask_token_;
  std::vector<Block> blocks_;
  MultiHeadAttention final_attn_;
  LayerNorm final_norm_;
  Linear up1_, up2_;
  LayerNorm up_norm_;
  Mlp hyper_;
};

// Fixed sinusoidal positional encoding of an h x w grid (cell centers): [h*w, dim].
Tensor grid_positional_encoding(std::size_t h, std::size_t w, std::size_t dim);
// [h*w, 4*c] (channel block (dy*2+dx)*c) -> [(2h)*(2w), c]: the rearrangement
// that turns a per-cell linear map into a stride-2 2x2 transposed convolution.
Tensor pixel_shuffle2(const Tensor& x, std::size_t h, std::size_t w);

}  // namespace evfsam
