#include "evfsam/model.hpp"

#include "evfsam/autodiff.hpp"
#include "evfsam/data.hpp"
#include "evfsam/errors.hpp"
#include "evfsam/ops.hpp"

namespace evfsam {

void ModelConfig::validate() const {
  encoder.validate();
  sam.validate();
}

VocabTokenizer grammar_tokenizer(std::size_t max_text_len) {
  return VocabTokenizer(grammar_vocabulary(), max_text_len);
}

EvfSamModel::EvfSamModel(const ModelConfig& config, VocabTokenizer tokenizer)
    : config_(config), tokenizer_(std::move(tokenizer)) {
  config_.encoder.vocab_size = tokenizer_.vocab_size();
  config_.encoder.max_text_len = tokenizer_.max_text_len();
  config_.validate();
  Initializer init(config_.init_seed);
  encoder_ = std::make_unique<MultimodalEncoder>(config_.encoder, store_, init);
  const std::size_t rep = config_.encoder.representation_dim();
  projector_ = std::make_unique<Projector>(store_, init, "projector", ParamGroup::MultimodalEncoder, rep,
                                           config_.projector_hidden ? config_.projector_hidden : rep,
                                           config_.sam.feat_dim);
  prompt_encoder_ = std::make_unique<PromptEncoder>(store_, init, "sam.prompt_encoder", config_.sam.feat_dim);
  image_encoder_ = std::make_unique<SamImageEncoder>(config_.sam, store_, init);
  mask_decoder_ = std::make_unique<MaskDecoder>(config_.sam, store_, init);
  store_.set_trainable(ParamGroup::ImageEncoder, false);
}

ImageFeatureGrid EvfSamModel::image_features(const Image& image) const {
  const std::size_t s = config_.sam.image_size;
  if (image.height == s && image.width == s) return (*image_encoder_)(image);
  return (*image_encoder_)(resize_bilinear(image, s, s));
}

Tensor EvfSamModel::evf_token(const Image& image, const std::string& expression) const {
  const std::size_t s = config_.encoder.image_size;
  const TokenizedText text = tokenizer_.tokenize(expression);
  EncoderOutput out = (image.height == s && image.width == s)
                          ? encoder_->encode(image, text)
                          : encoder_->encode(resize_bilinear(image, s, s), text);
  return (*projector_)(out.representation);
}

Tensor EvfSamModel::forward(const Image& image, const std::string& expression, const GeometricPrompts& geometric,
                            const ImageFeatureGrid* cached) const {
  const ImageFeatureGrid grid = cached ? *cached : image_features(image);
  const SparsePromptEmbeddings sparse = prompt_encoder_->build(evf_token(image, expression), geometric);
  return (*mask_decoder_)(grid, sparse, prompt_encoder_->no_mask_embedding());
}

Mask EvfSamModel::predict(const Image& image, const std::string& expression, Scalar threshold) const {
  NoGradScope no_grad;
  Mask m = binarize(forward(image, expression), threshold);
  if (m.height == image.height && m.width == image.width) return m;
  return resize_nearest(m, image.height, image.width);
}

}  // namespace evfsam
