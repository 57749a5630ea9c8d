#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "evfsam/encoder.hpp"
#include "evfsam/image.hpp"
#include "evfsam/nn.hpp"
#include "evfsam/prompt.hpp"
#include "evfsam/sam.hpp"

namespace evfsam {

struct ModelConfig {
  EncoderConfig encoder;
  SamConfig sam;
  std::size_t projector_hidden = 0;  // 0: same as the encoder representation dim
  std::uint64_t init_seed = 0;

  void validate() const;
};

// Encoder -> projector -> prompt encoder -> SAM mask decoder. The encoder and
// SAM each see their own resized view of the input image.
class EvfSamModel {
 public:
  EvfSamModel(const ModelConfig& config, VocabTokenizer tokenizer);

  const ModelConfig& config() const { return config_; }
  const VocabTokenizer& tokenizer() const { return tokenizer_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  MultimodalEncoder& encoder() { return *encoder_; }
  const Projector& projector() const { return *projector_; }
  const PromptEncoder& prompt_encoder() const { return *prompt_encoder_; }

  // SAM image features of the SAM view of `image`.
  ImageFeatureGrid image_features(const Image& image) const;
  // Projected multimodal token [prompt_dim].
  Tensor evf_token(const Image& image, const std::string& expression) const;
  // Mask logits [out, out], out = sam.output_size(). `cached` may hold the
  // result of image_features(image) to skip the (frozen) SAM image encoder.
  Tensor forward(const Image& image, const std::string& expression, const GeometricPrompts& geometric = {},
                 const ImageFeatureGrid* cached = nullptr) const;

  // Binary mask at the input image's resolution.
  Mask predict(const Image& image, const std::string& expression, Scalar threshold = 0) const;

 private:
  ModelConfig config_;
  VocabTokenizer tokenizer_;
  ParameterStore store_;
  std::unique_ptr<MultimodalEncoder> encoder_;
  std::unique_ptr<Projector> projector_;
  std::unique_ptr<PromptEncoder> prompt_encoder_;
  std::unique_ptr<SamImageEncoder> image_encoder_;
  std::unique_ptr<MaskDecoder> mask_decoder_;
};

// Tokenizer over the synthetic grammar's vocabulary.
VocabTokenizer grammar_tokenizer(std::size_t max_text_len);

}  // namespace evfsam
