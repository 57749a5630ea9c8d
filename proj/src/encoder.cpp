#include "evfsam/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include "evfsam/errors.hpp"
#include "evfsam/ops.hpp"

namespace evfsam {

// ---------------------------------------------------------------- tokenizer

VocabTokenizer::VocabTokenizer(const std::vector<std::string>& words, std::size_t max_text_len)
    : max_text_len_(max_text_len) {
  if (max_text_len < 2) throw ConfigError("max_text_len must leave room for [CLS] and [SEP]");
  for (const char* s : kSpecials) tokens_.emplace_back(s);
  for (const auto& w : words) {
    std::string lw = w;
    std::transform(lw.begin(), lw.end(), lw.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lw.empty() || lw.find_first_of(" \t\r\n") != std::string::npos)
      throw ConfigError("vocabulary entry '" + w + "' is not a single word");
    if (ids_.count(lw) || std::find(std::begin(kSpecials), std::end(kSpecials), lw) != std::end(kSpecials))
      throw ConfigError("duplicate vocabulary entry '" + w + "'");
    ids_[lw] = tokens_.size();
    tokens_.push_back(lw);
  }
}

VocabTokenizer VocabTokenizer::load(const std::filesystem::path& path, std::size_t max_text_len) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open vocabulary '" + path.string() + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  for (std::size_t i = 0; i < 4; ++i)
    if (i >= lines.size() || lines[i] != kSpecials[i])
      throw FormatError("vocabulary line " + std::to_string(i + 1) + " must be " + kSpecials[i]);
  return VocabTokenizer(std::vector<std::string>(lines.begin() + 4, lines.end()), max_text_len);
}

void VocabTokenizer::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  for (const auto& t : tokens_) os << t << '\n';
}

std::size_t VocabTokenizer::id_of(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

TokenizedText VocabTokenizer::tokenize(const std::string& text) const {
  std::string lower = text;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  std::istringstream is(lower);
  TokenizedText out;
  out.ids.push_back(kCls);
  for (std::string w; is >> w && out.ids.size() < max_text_len_ - 1;) out.ids.push_back(id_of(w));
  out.ids.push_back(kSep);
  out.real.assign(out.ids.size(), 1);
  out.ids.resize(max_text_len_, kPad);
  out.real.resize(max_text_len_, 0);
  return out;
}

// ---------------------------------------------------------------- config

std::string to_string(const FusionMode& mode) {
  switch (mode.kind) {
    case FusionMode::Kind::TextOnly: return "text_only";
    case FusionMode::Kind::LateConcat: return "late_concat";
    case FusionMode::Kind::Early: return "early:" + std::to_string(mode.fusion_depth);
  }
  return "?";
}

FusionMode parse_fusion_mode(const std::string& s, std::size_t num_layers) {
  if (s == "text_only") return FusionMode::text_only();
  if (s == "late_concat") return FusionMode::late_concat();
  if (s == "early_full") return FusionMode::early(num_layers);
  if (s == "early_half") return FusionMode::early(num_layers / 2);
  if (s.rfind("early:", 0) == 0) {
    try {
      return FusionMode::early(std::stoul(s.substr(6)));
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("unknown fusion mode '" + s +
                    "' (expected text_only, late_concat, early_full, early_half or early:<depth>)");
}

std::string to_string(Representation r) {
  switch (r) {
    case Representation::TextCLS: return "text_cls";
    case Representation::ImageCLS: return "image_cls";
    case Representation::ImageAvgPool: return "image_avgpool";
    case Representation::ConcatCLS: return "concat_cls";
  }
  return "?";
}

Representation parse_representation(const std::string& s) {
  for (auto r : {Representation::TextCLS, Representation::ImageCLS, Representation::ImageAvgPool,
                 Representation::ConcatCLS})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown representation '" + s + "'");
}

Representation default_representation(const FusionMode& mode) {
  switch (mode.kind) {
    case FusionMode::Kind::TextOnly: return Representation::TextCLS;
    case FusionMode::Kind::LateConcat: return Representation::ConcatCLS;
    case FusionMode::Kind::Early: return Representation::ImageCLS;
  }
  return Representation::ImageCLS;
}

void EncoderConfig::validate() const {
  if (num_layers == 0 || embed_dim == 0 || ffn_dim == 0 || num_heads == 0)
    throw ConfigError("encoder dimensions must be positive");
  if (embed_dim % num_heads != 0)
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  if (patch_size == 0 || image_size % patch_size != 0)
    throw ShapeError("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                     std::to_string(patch_size));
  if (vocab_size != 0 && vocab_size <= 4) throw ConfigError("vocab_size must include the 4 specials and at least one word");
  if (max_text_len < 2) throw ConfigError("max_text_len must be at least 2");
  if (fusion.kind == FusionMode::Kind::Early && fusion.fusion_depth > num_layers)
    throw ConfigError("fusion_depth " + std::to_string(fusion.fusion_depth) + " exceeds num_layers " +
                      std::to_string(num_layers));
  const bool needs_image = representation != Representation::TextCLS;
  if (fusion.kind == FusionMode::Kind::TextOnly && needs_image)
    throw ConfigError("representation " + to_string(representation) + " needs the image modality, absent under text_only");
  if (fusion.kind == FusionMode::Kind::LateConcat && representation != Representation::ConcatCLS)
    throw ConfigError("late_concat fuses by concatenation; representation must be concat_cls");
}

std::size_t EncoderConfig::representation_dim() const {
  return (fusion.kind == FusionMode::Kind::Early && representation == Representation::ConcatCLS) ? 2 * embed_dim
                                                                                                  : embed_dim;
}

// ---------------------------------------------------------------- helpers

Tensor EncoderStates::all() const { return image.defined() ? concat_rows({text, image}) : text; }

Tensor patchify(const Image& image, std::size_t patch_size) {
  if (patch_size == 0 || image.height % patch_size != 0 || image.width % patch_size != 0)
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " not divisible by patch size " + std::to_string(patch_size));
  const std::size_t gh = image.height / patch_size, gw = image.width / patch_size;
  const std::size_t pd = patch_size * patch_size * 3;
  Tensor out({gh * gw, pd});
  auto d = out.data();
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      std::size_t o = (py * gw + px) * pd;
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x)
          for (std::size_t c = 0; c < 3; ++c) d[o++] = image.at(py * patch_size + y, px * patch_size + x, c);
    }
  return out;
}

Tensor select_representation(const EncoderStates& states, Representation rep) {
  auto need = [](const Tensor& t, const char* what) {
    if (!t.defined()) throw ConfigError(std::string("representation needs the ") + what + " stream");
  };
  switch (rep) {
    case Representation::TextCLS: need(states.text, "text"); return row(states.text, 0);
    case Representation::ImageCLS: need(states.image, "image"); return row(states.image, 0);
    case Representation::ImageAvgPool:
      need(states.image, "image");
      return mean_rows(slice_rows(states.image, 1, states.image.dim(0)));
    case Representation::ConcatCLS:
      need(states.text, "text");
      need(states.image, "image");
      return concat_vectors({row(states.text, 0), row(states.image, 0)});
  }
  throw ConfigError("unknown representation");
}

// ---------------------------------------------------------------- encoder

MultimodalEncoder::MultimodalEncoder(const EncoderConfig& config, ParameterStore& store, Initializer& init,
                                     const std::string& prefix)
    : config_(config) {
  config_.validate();
  const auto g = ParamGroup::MultimodalEncoder;
  const std::size_t d = config_.embed_dim;
  text_embed_ = store.add(prefix + ".text.embed", g, init.normal({config_.vocab_size, d}, 0.5));
  text_pos_ = store.add(prefix + ".text.pos", g, init.normal({config_.max_text_len, d}, 0.1));
  const bool image = config_.fusion.has_image();
  if (image) {
    const std::size_t pd = config_.patch_size * config_.patch_size * 3;
    patch_proj_ = make_linear(store, init, prefix + ".image.patch_proj", g, pd, d);
    image_cls_ = store.add(prefix + ".image.cls", g, init.normal({1, d}, 0.5));
    image_pos_ = store.add(prefix + ".image.pos", g, init.normal({config_.num_patches() + 1, d}, 0.1));
  }
  switch (config_.fusion.kind) {
    case FusionMode::Kind::TextOnly: main_ = make_stack(store, init, prefix, true, false); break;
    case FusionMode::Kind::Early: main_ = make_stack(store, init, prefix, true, true); break;
    case FusionMode::Kind::LateConcat:
      main_ = make_stack(store, init, prefix + ".text_tower", true, false);
      image_tower_ = make_stack(store, init, prefix + ".image_tower", false, true);
      late_head_ = make_linear(store, init, prefix + ".late_head", g, 2 * d, d);
      break;
  }
}

MultimodalEncoder::Stack MultimodalEncoder::make_stack(ParameterStore& store, Initializer& init,
                                                       const std::string& prefix, bool text, bool image) const {
  const auto g = ParamGroup::MultimodalEncoder;
  const std::size_t d = config_.embed_dim;
  Stack s;
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = prefix + ".layers." + std::to_string(l);
    Layer layer;
    layer.attn = make_attention(store, init, p + ".attn", g, d, config_.num_heads);
    if (text) {
      layer.attn_norm_text = make_layer_norm(store, p + ".attn_norm.text", g, d);
      layer.ffn_norm_text = make_layer_norm(store, p + ".ffn_norm.text", g, d);
      layer.ffn_text = make_mlp(store, init, p + ".ffn.text", g, d, config_.ffn_dim, d, Mlp::Activation::Gelu);
    }
    if (image) {
      layer.attn_norm_image = make_layer_norm(store, p + ".attn_norm.image", g, d);
      layer.ffn_norm_image = make_layer_norm(store, p + ".ffn_norm.image", g, d);
      layer.ffn_image = make_mlp(store, init, p + ".ffn.image", g, d, config_.ffn_dim, d, Mlp::Activation::Gelu);
    }
    s.layers.push_back(std::move(layer));
  }
  if (text) s.final_text = make_layer_norm(store, prefix + ".final_norm.text", g, d);
  if (image) s.final_image = make_layer_norm(store, prefix + ".final_norm.image", g, d);
  return s;
}

Tensor MultimodalEncoder::embed_text(const TokenizedText& tokens) const {
  if (tokens.length() != config_.max_text_len)
    throw ShapeError("token sequence length " + std::to_string(tokens.length()) + " != max_text_len " +
                     std::to_string(config_.max_text_len));
  const std::size_t d = config_.embed_dim;
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(tokens.length() * d);
  for (auto id : tokens.ids) {
    if (id >= config_.vocab_size) throw ShapeError("token id " + std::to_string(id) + " outside vocabulary");
    for (std::size_t j = 0; j < d; ++j) idx->push_back(id * d + j);
  }
  return add(gather(text_embed_, idx, {tokens.length(), d}), text_pos_);
}

Tensor MultimodalEncoder::embed_image(const Tensor& patches) const {
  if (patches.rank() != 2 || patches.dim(0) != config_.num_patches() || patches.dim(1) != patch_proj_.in_dim())
    throw ShapeError("patches " + to_string(patches.shape()) + " do not match encoder config");
  return add(concat_rows({image_cls_, patch_proj_(patches)}), image_pos_);
}

void MultimodalEncoder::run_stack(const Stack& stack, Tensor& text, Tensor& image, const TokenizedText& tokens,
                                  const std::vector<bool>& joint) const {
  const std::size_t nt = text.defined() ? text.dim(0) : 0;
  const std::size_t ni = image.defined() ? image.dim(0) : 0;
  const std::size_t n = nt + ni;
  constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();

  // Additive masks: PAD keys are always hidden; the block mask also hides
  // keys of the other modality.
  Tensor joint_mask({n, n}), block_mask({n, n});
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k < n; ++k) {
      const bool pad = k < nt && !tokens.real[k];
      const bool cross = (q < nt) != (k < nt);
      joint_mask[q * n + k] = pad ? kNegInf : Scalar{0};
      block_mask[q * n + k] = (pad || cross) ? kNegInf : Scalar{0};
    }
  const bool single = nt == 0 || ni == 0;

  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const Layer& layer = stack.layers[l];
    std::vector<Tensor> normed;
    if (nt) normed.push_back(layer.attn_norm_text(text));
    if (ni) normed.push_back(layer.attn_norm_image(image));
    Tensor h = single ? normed[0] : concat_rows(normed);
    const bool use_joint = joint[l] && !force_block_diagonal_;
    Tensor a = layer.attn(h, h, h, use_joint || single ? joint_mask : block_mask);
    if (nt) text = add(text, single ? a : slice_rows(a, 0, nt));
    if (ni) image = add(image, single ? a : slice_rows(a, nt, n));
    if (nt) text = add(text, layer.ffn_text(layer.ffn_norm_text(text)));
    if (ni) image = add(image, layer.ffn_image(layer.ffn_norm_image(image)));
  }
  if (nt) text = stack.final_text(text);
  if (ni) image = stack.final_image(image);
}

EncoderOutput MultimodalEncoder::encode(const Image& image, const TokenizedText& text) const {
  if (!config_.fusion.has_image()) return encode_patches(Tensor(), text);
  if (image.height != config_.image_size || image.width != config_.image_size)
    throw ShapeError("encoder expects " + std::to_string(config_.image_size) + "^2 images, got " +
                     std::to_string(image.height) + "x" + std::to_string(image.width));
  return encode_patches(patchify(image, config_.patch_size), text);
}

EncoderOutput MultimodalEncoder::encode_patches(const Tensor& patches, const TokenizedText& text) const {
  EncoderOutput out;
  Tensor t = embed_text(text);
  Tensor img = config_.fusion.has_image() ? embed_image(patches) : Tensor();
  const std::size_t layers = config_.num_layers;
  switch (config_.fusion.kind) {
    case FusionMode::Kind::TextOnly:
      run_stack(main_, t, img, text, std::vector<bool>(layers, false));
      out.states = {t, Tensor()};
      out.representation = select_representation(out.states, config_.representation);
      break;
    case FusionMode::Kind::Early: {
      std::vector<bool> joint(layers);
      for (std::size_t l = 0; l < layers; ++l) joint[l] = l < config_.fusion.fusion_depth;
      run_stack(main_, t, img, text, joint);
      out.states = {t, img};
      out.representation = select_representation(out.states, config_.representation);
      break;
    }
    case FusionMode::Kind::LateConcat: {
      Tensor none;
      run_stack(main_, t, none, text, std::vector<bool>(layers, false));
      run_stack(image_tower_, none, img, text, std::vector<bool>(layers, false));
      out.states = {t, img};
      out.representation = late_head_(reshape(select_representation(out.states, Representation::ConcatCLS),
                                              {1, 2 * config_.embed_dim}));
      out.representation = reshape(out.representation, {config_.embed_dim});
      break;
    }
  }
  return out;
}

}  // namespace evfsam
