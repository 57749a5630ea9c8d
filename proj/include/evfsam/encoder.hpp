#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "evfsam/image.hpp"
#include "evfsam/nn.hpp"
#include "evfsam/tensor.hpp"

namespace evfsam {

struct TokenizedText {
  std::vector<std::size_t> ids;    // length max_text_len
  std::vector<std::uint8_t> real;  // 1 for CLS/words/SEP, 0 for PAD
  std::size_t length() const { return ids.size(); }
};

// Lowercasing whitespace tokenizer over a closed vocabulary. Ids 0..3 are the
// specials [CLS], [SEP], [PAD], [UNK]; words follow in file order.
class VocabTokenizer {
 public:
  static constexpr std::size_t kCls = 0, kSep = 1, kPad = 2, kUnk = 3;
  static constexpr const char* kSpecials[] = {"[CLS]", "[SEP]", "[PAD]", "[UNK]"};

  VocabTokenizer(const std::vector<std::string>& words, std::size_t max_text_len);

  // File format: one token per line, line number = id, specials first.
  static VocabTokenizer load(const std::filesystem::path& path, std::size_t max_text_len);
  void save(const std::filesystem::path& path) const;

  // [CLS] word... [SEP] [PAD]...; words beyond max_text_len - 2 are truncated.
  TokenizedText tokenize(const std::string& text) const;
  std::size_t id_of(const std::string& word) const;
  std::size_t vocab_size() const { return tokens_.size(); }
  std::size_t max_text_len() const { return max_text_len_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
  std::size_t max_text_len_;
};

struct FusionMode {
  enum class Kind { TextOnly, LateConcat, Early };
  Kind kind = Kind::Early;
  std::size_t fusion_depth = 0;  // layers with joint attention (Early only)

  static FusionMode text_only() { return {Kind::TextOnly, 0}; }
  static FusionMode late_concat() { return {Kind::LateConcat, 0}; }
  static FusionMode early(std::size_t depth) { return {Kind::Early, depth}; }

  bool has_text() const { return true; }
  bool has_image() const { return kind != Kind::TextOnly; }
  bool operator==(const FusionMode&) const = default;
};

// "text_only", "late_concat", "early:<depth>"; parse also accepts
// "early_full" / "early_half" given the layer count.
std::string to_string(const FusionMode& mode);
FusionMode parse_fusion_mode(const std::string& s, std::size_t num_layers);

enum class Representation { TextCLS, ImageCLS, ImageAvgPool, ConcatCLS };
std::string to_string(Representation r);
Representation parse_representation(const std::string& s);
// The representation each fusion scheme is compared with by default.
Representation default_representation(const FusionMode& mode);

struct EncoderConfig {
  std::size_t num_layers = 4;
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t image_size = 48;
  std::size_t patch_size = 8;
  std::size_t vocab_size = 0;  // filled from the tokenizer
  std::size_t max_text_len = 8;
  FusionMode fusion = FusionMode::early(4);
  Representation representation = Representation::ImageCLS;

  void validate() const;
  std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  std::size_t representation_dim() const;
};

// Per-modality final token states. `image` is undefined under TextOnly.
struct EncoderStates {
  Tensor text;   // [max_text_len, D]
  Tensor image;  // [1 + num_patches, D], row 0 is the image [CLS]
  // Fixed layout [text ++ image].
  Tensor all() const;
};

struct EncoderOutput {
  EncoderStates states;
  Tensor representation;  // [representation_dim]
};

// [P, patch*patch*3] raw patch vectors in raster order, pixels within a patch
// in (row, col, channel) order.
Tensor patchify(const Image& image, std::size_t patch_size);

Tensor select_representation(const EncoderStates& states, Representation rep);

class MultimodalEncoder {
 public:
  MultimodalEncoder(const EncoderConfig& config, ParameterStore& store, Initializer& init,
                    const std::string& prefix = "encoder");

  const EncoderConfig& config() const { return config_; }

  EncoderOutput encode(const Image& image, const TokenizedText& text) const;
  // `patches` as produced by patchify (ignored under TextOnly).
  EncoderOutput encode_patches(const Tensor& patches, const TokenizedText& text) const;

  // Test hook: under Early mode, block cross-modal attention in every layer
  // regardless of fusion_depth.
  void set_force_block_diagonal(bool flag) { force_block_diagonal_ = flag; }

 private:
  struct Layer {
    MultiHeadAttention attn;  // shared across modalities
    LayerNorm attn_norm_text, attn_norm_image;
    LayerNorm ffn_norm_text, ffn_norm_image;
    Mlp ffn_text, ffn_image;
  };
  struct Stack {
    std::vector<Layer> layers;
    LayerNorm final_text, final_image;
  };

  Stack make_stack(ParameterStore& store, Initializer& init, const std::string& prefix, bool text,
                   bool image) const;
  // Runs a stack over the given streams (either may be undefined). `joint[l]`
  // selects joint (true) or within-modality (false) attention in layer l.
  void run_stack(const Stack& stack, Tensor& text, Tensor& image, const TokenizedText& tokens,
                 const std::vector<bool>& joint) const;
  Tensor embed_text(const TokenizedText& tokens) const;
  Tensor embed_image(const Tensor& patches) const;

  EncoderConfig config_;
  Tensor text_embed_, text_pos_;
  Linear patch_proj_;
  Tensor image_cls_, image_pos_;
  Stack main_;        // Early / TextOnly, and the text tower under LateConcat
  Stack image_tower_; // LateConcat only
  Linear late_head_;  // LateConcat only
  bool force_block_diagonal_ = false;
};

}  // namespace evfsam
