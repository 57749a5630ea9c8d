#include "evfsam/sam.hpp"

#include "evfsam/encoder.hpp"
#include "evfsam/errors.hpp"
#include "evfsam/ops.hpp"

namespace evfsam {

void SamConfig::validate() const {
  if (patch_size == 0 || image_size % patch_size != 0)
    throw ShapeError("sam image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                     std::to_string(patch_size));
  if (upsample_factor != 4) throw ConfigError("sam upsample_factor is fixed at 4 (two x2 stages)");
  if (feat_dim % 8 != 0) throw ConfigError("sam feat_dim must be a multiple of 8");
  if (encoder_dim % encoder_heads != 0 || feat_dim % decoder_heads != 0)
    throw ConfigError("sam attention dims must be divisible by their head counts");
}

Tensor grid_positional_encoding(std::size_t h, std::size_t w, std::size_t dim) {
  Tensor pe({h * w, dim});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto f = coordinate_features((j + 0.5) / static_cast<double>(w), (i + 0.5) / static_cast<double>(h), dim);
      std::copy(f.begin(), f.end(), pe.data().begin() + static_cast<long>((i * w + j) * dim));
    }
  return pe;
}

Tensor pixel_shuffle2(const Tensor& x, std::size_t h, std::size_t w) {
  if (x.rank() != 2 || x.dim(0) != h * w || x.dim(1) % 4 != 0)
    throw ShapeError("pixel_shuffle2: " + to_string(x.shape()) + " for a " + std::to_string(h) + "x" +
                     std::to_string(w) + " grid");
  const std::size_t c = x.dim(1) / 4, oh = 2 * h, ow = 2 * w;
  auto idx = std::make_shared<std::vector<std::size_t>>(oh * ow * c);
  std::size_t o = 0;
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t s = 0; s < ow; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        (*idx)[o++] = ((r / 2) * w + s / 2) * 4 * c + ((r % 2) * 2 + s % 2) * c + ch;
  return gather(x, idx, {oh * ow, c});
}

SamImageEncoder::SamImageEncoder(const SamConfig& config, ParameterStore& store, Initializer& init,
                                 const std::string& prefix)
    : config_(config) {
  config_.validate();
  const auto g = ParamGroup::ImageEncoder;
  const std::size_t d = config_.encoder_dim;
  const std::size_t n = config_.grid_size() * config_.grid_size();
  patch_proj_ = make_linear(store, init, prefix + ".patch_proj", g, config_.patch_size * config_.patch_size * 3, d);
  pos_ = store.add(prefix + ".pos", g, init.normal({n, d}, 0.1));
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const std::string p = prefix + ".blocks." + std::to_string(l);
    Block b;
    b.norm1 = make_layer_norm(store, p + ".norm1", g, d);
    b.attn = make_attention(store, init, p + ".attn", g, d, config_.encoder_heads);
    b.norm2 = make_layer_norm(store, p + ".norm2", g, d);
    b.mlp = make_mlp(store, init, p + ".mlp", g, d, config_.encoder_ffn_dim, d, Mlp::Activation::Gelu);
    blocks_.push_back(std::move(b));
  }
  neck_ = make_linear(store, init, prefix + ".neck", g, d, config_.feat_dim);
  neck_norm_ = make_layer_norm(store, prefix + ".neck_norm", g, config_.feat_dim);
}

ImageFeatureGrid SamImageEncoder::operator()(const Image& image) const {
  if (image.height != config_.image_size || image.width != config_.image_size)
    throw ShapeError("sam image encoder expects " + std::to_string(config_.image_size) + "^2 input, got " +
                     std::to_string(image.height) + "x" + std::to_string(image.width));
  Tensor x = add(patch_proj_(patchify(image, config_.patch_size)), pos_);
  for (const auto& b : blocks_) {
    Tensor h = b.norm1(x);
    x = add(x, b.attn(h, h, h));
    x = add(x, b.mlp(b.norm2(x)));
  }
  return {neck_norm_(neck_(x)), config_.grid_size(), config_.grid_size()};
}

MaskDecoder::MaskDecoder(const SamConfig& config, ParameterStore& store, Initializer& init,
                         const std::string& prefix)
    : config_(config) {
  config_.validate();
  const auto g = ParamGroup::MaskDecoder;
  const std::size_t d = config_.feat_dim;
  const std::size_t heads = config_.decoder_heads;
  mask_token_ = store.add(prefix + ".mask_token", g, init.normal({1, d}, 1.0));
  for (std::size_t l = 0; l < config_.decoder_blocks; ++l) {
    const std::string p = prefix + ".blocks." + std::to_string(l);
    Block b;
    b.self_attn = make_attention(store, init, p + ".self_attn", g, d, heads);
    b.norm1 = make_layer_norm(store, p + ".norm1", g, d);
    b.token_to_image = make_attention(store, init, p + ".token_to_image", g, d, heads);
    b.norm2 = make_layer_norm(store, p + ".norm2", g, d);
    b.mlp = make_mlp(store, init, p + ".mlp", g, d, config_.decoder_mlp_dim, d, Mlp::Activation::Relu);
    b.norm3 = make_layer_norm(store, p + ".norm3", g, d);
    b.image_to_token = make_attention(store, init, p + ".image_to_token", g, d, heads);
    b.norm4 = make_layer_norm(store, p + ".norm4", g, d);
    blocks_.push_back(std::move(b));
  }
  final_attn_ = make_attention(store, init, prefix + ".final_attn", g, d, heads);
  final_norm_ = make_layer_norm(store, prefix + ".final_norm", g, d);
  up1_ = make_linear(store, init, prefix + ".upscale1", g, d, 4 * (d / 4));
  up_norm_ = make_layer_norm(store, prefix + ".upscale_norm", g, d / 4);
  up2_ = make_linear(store, init, prefix + ".upscale2", g, d / 4, 4 * (d / 8));
  hyper_ = make_mlp(store, init, prefix + ".hyper", g, d, d, d / 8, Mlp::Activation::Relu);
}

Tensor MaskDecoder::operator()(const ImageFeatureGrid& grid, const SparsePromptEmbeddings& sparse,
                               const Tensor& dense_embedding) const {
  const std::size_t d = config_.feat_dim;
  if (grid.features.rank() != 2 || grid.features.dim(1) != d || sparse.tokens.dim(2) != d)
    throw ShapeError("mask decoder: feature dim " + to_string(grid.features.shape()) + " / prompt " +
                     to_string(sparse.tokens.shape()) + " do not match feat_dim " + std::to_string(d));
  if (sparse.batch() != 1) throw ShapeError("mask decoder decodes one batch item at a time");

  // Token set: [mask token] ++ sparse prompts; the prompts double as query positional encodings.
  Tensor prompts = sparse.sample(0);
  Tensor query_pe = concat_rows({Tensor::zeros({1, d}), prompts});
  Tensor queries = concat_rows({mask_token_, prompts});
  Tensor keys = add_bias(grid.features, dense_embedding);
  const Tensor key_pe = grid_positional_encoding(grid.height, grid.width, d);

  for (const auto& b : blocks_) {
    Tensor q = add(queries, query_pe);
    queries = b.norm1(add(queries, b.self_attn(q, q, queries)));
    q = add(queries, query_pe);
    Tensor k = add(keys, key_pe);
    queries = b.norm2(add(queries, b.token_to_image(q, k, keys)));
    queries = b.norm3(add(queries, b.mlp(queries)));
    q = add(queries, query_pe);
    keys = b.norm4(add(keys, b.image_to_token(k, q, queries)));
  }
  {
    Tensor q = add(queries, query_pe);
    Tensor k = add(keys, key_pe);
    queries = final_norm_(add(queries, final_attn_(q, k, keys)));
  }

  const std::size_t h = grid.height, w = grid.width;
  Tensor up = gelu(up_norm_(pixel_shuffle2(up1_(keys), h, w)));
  up = gelu(pixel_shuffle2(up2_(up), 2 * h, 2 * w));  // [(4h)(4w), d/8]
  Tensor hyper = hyper_(slice_rows(queries, 0, 1));  // [1, d/8]
  Tensor logits = matmul(up, transpose(hyper));        // [(4h)(4w), 1]
  return reshape(logits, {4 * h, 4 * w});
}

}  // namespace evfsam
