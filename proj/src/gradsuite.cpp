#include "evfsam/gradsuite.hpp"

#include <algorithm>
#include <limits>

#include "evfsam/encoder.hpp"
#include "evfsam/errors.hpp"
#include "evfsam/gradcheck.hpp"
#include "evfsam/losses.hpp"
#include "evfsam/nn.hpp"
#include "evfsam/ops.hpp"
#include "evfsam/prompt.hpp"
#include "evfsam/rng.hpp"
#include "evfsam/sam.hpp"

namespace evfsam {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(-scale, scale));
  return t;
}

Tensor random_binary(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.below(2) ? Scalar{1} : Scalar{0};
  return t;
}

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

std::vector<Tensor> param_values(const ParameterStore& store) {
  std::vector<Tensor> out;
  for (const auto& p : store.params()) out.push_back(p.value);
  return out;
}

GradCheckOptions capped(std::size_t coords, std::uint64_t seed) {
  GradCheckOptions o;
  o.max_coords_per_input = coords;
  o.seed = seed;
  return o;
}

GeometricPrompts random_geometry(Rng& rng) {
  GeometricPrompts g;
  for (std::uint64_t i = rng.below(3); i > 0; --i) g.points.push_back({rng.uniform(), rng.uniform()});
  if (rng.below(2)) {
    const double x0 = rng.uniform(0, 0.5), y0 = rng.uniform(0, 0.5);
    g.boxes.push_back({x0, y0, x0 + rng.uniform(0.1, 0.5), y0 + rng.uniform(0.1, 0.5)});
  }
  return g;
}

Scalar check_attention(Rng& rng, std::uint64_t seed) {
  const std::size_t heads = 1 + rng.below(2);
  const std::size_t dim = heads * (2 + rng.below(3));
  const std::size_t tq = 1 + rng.below(4), tk = 1 + rng.below(4);
  ParameterStore store;
  Initializer init(seed);
  const auto attn = make_attention(store, init, "attn", ParamGroup::MultimodalEncoder, dim, heads);
  const Tensor q = random_tensor({tq, dim}, rng), kv = random_tensor({tk, dim}, rng);
  Tensor mask;
  if (rng.below(2)) {
    // Hide a random subset of keys, always leaving key 0 visible.
    mask = Tensor({tq, tk});
    for (std::size_t i = 0; i < tq; ++i)
      for (std::size_t j = 1; j < tk; ++j)
        if (rng.below(3) == 0) mask[i * tk + j] = -std::numeric_limits<Scalar>::infinity();
  }
  const Tensor w = random_tensor({tq, dim}, rng);
  auto inputs = param_values(store);
  inputs.push_back(q);
  inputs.push_back(kv);
  return grad_check([&] { return dot(attn(q, kv, kv, mask), w); }, inputs, capped(0, seed));
}

Scalar check_multiway(Rng& rng, std::uint64_t seed) {
  const std::vector<std::string> words{"red", "blue", "circle", "square", "left", "above"};
  const VocabTokenizer tok(words, 5);
  EncoderConfig c;
  c.num_layers = 1 + rng.below(2);
  c.num_heads = 1 + rng.below(2);
  c.embed_dim = c.num_heads * (2 + rng.below(2));
  c.ffn_dim = 4 + rng.below(5);
  c.image_size = 8;
  c.patch_size = 4;
  c.vocab_size = tok.vocab_size();
  c.max_text_len = 5;
  switch (rng.below(3)) {
    case 0: c.fusion = FusionMode::text_only(); break;
    case 1: c.fusion = FusionMode::late_concat(); break;
    default: c.fusion = FusionMode::early(rng.below(c.num_layers + 1)); break;
  }
  c.representation = default_representation(c.fusion);
  if (c.fusion.kind == FusionMode::Kind::Early) {
    const Representation reps[] = {Representation::TextCLS, Representation::ImageCLS, Representation::ImageAvgPool,
                                   Representation::ConcatCLS};
    c.representation = reps[rng.below(4)];
  }
  ParameterStore store;
  Initializer init(seed);
  const MultimodalEncoder enc(c, store, init, "enc");
  std::string text;
  for (std::uint64_t n = 1 + rng.below(3); n > 0; --n) text += (text.empty() ? "" : " ") + words[rng.below(words.size())];
  const auto tokens = tok.tokenize(text);
  const Tensor patches = random_tensor({c.num_patches(), c.patch_size * c.patch_size * 3}, rng);
  const Tensor wr = random_tensor({c.representation_dim()}, rng);
  const std::size_t rows = c.max_text_len + (c.fusion.has_image() ? c.num_patches() + 1 : 0);
  const Tensor ws = random_tensor({rows, c.embed_dim}, rng, 0.3);
  auto inputs = param_values(store);
  inputs.push_back(patches);
  return grad_check(
      [&] {
        const auto out = enc.encode_patches(patches, tokens);
        return add(dot(out.representation, wr), dot(out.states.all(), ws));
      },
      inputs, capped(4, seed));
}

Scalar check_projector(Rng& rng, std::uint64_t seed) {
  const std::size_t in = 1 + rng.below(8), hidden = 1 + rng.below(8), out = 1 + rng.below(8);
  ParameterStore store;
  Initializer init(seed);
  const Projector p(store, init, "projector", ParamGroup::MultimodalEncoder, in, hidden, out);
  const Tensor x = random_tensor({in}, rng, 2.0);
  const Tensor w = random_tensor({out}, rng);
  auto inputs = param_values(store);
  inputs.push_back(x);
  return grad_check([&] { return dot(p(x), w); }, inputs, capped(0, seed));
}

Scalar check_prompt(Rng& rng, std::uint64_t seed) {
  const std::size_t dim = 4 * (1 + rng.below(3));
  ParameterStore store;
  Initializer init(seed);
  const PromptEncoder pe(store, init, "pe", dim);
  const Tensor evf = random_tensor({dim}, rng);
  const GeometricPrompts geo = random_geometry(rng);
  const Tensor w = random_tensor({1, geo.token_count() + 1, dim}, rng);
  const Tensor wd = random_tensor({dim}, rng);
  auto inputs = param_values(store);
  inputs.push_back(evf);
  return grad_check([&] { return add(dot(pe.build(evf, geo).tokens, w), dot(pe.no_mask_embedding(), wd)); },
                    inputs, capped(0, seed));
}

Scalar check_decoder(Rng& rng, std::uint64_t seed) {
  SamConfig c;
  c.image_size = 8 + 4 * rng.below(2);
  c.patch_size = 4;
  c.feat_dim = 16;
  c.decoder_blocks = 1 + rng.below(2);
  c.decoder_heads = 1 + rng.below(2);
  c.decoder_mlp_dim = 4 + rng.below(8);
  ParameterStore store;
  Initializer init(seed);
  const PromptEncoder pe(store, init, "pe", c.feat_dim);
  const MaskDecoder dec(c, store, init, "dec");
  const std::size_t g = c.grid_size();
  const ImageFeatureGrid grid{random_tensor({g * g, c.feat_dim}, rng), g, g};
  const Tensor evf = random_tensor({c.feat_dim}, rng);
  const GeometricPrompts geo = random_geometry(rng);
  const std::size_t out = c.output_size();
  const Tensor target = random_binary({out, out}, rng);
  auto inputs = param_values(store);
  inputs.push_back(evf);
  inputs.push_back(grid.features);
  return grad_check([&] { return total_loss(dec(grid, pe.build(evf, geo), pe.no_mask_embedding()), target).total; },
                    inputs, capped(3, seed));
}

Scalar check_loss(Rng& rng, std::uint64_t seed, bool dice) {
  const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
  const Tensor z = random_tensor({h, w}, rng, 4.0);
  const Tensor t = random_binary({h, w}, rng);
  return grad_check([&] { return dice ? dice_loss(z, t) : bce_loss(z, t); }, {z}, capped(0, seed));
}

Scalar check_block(const std::string& block, Rng& rng, std::uint64_t seed) {
  if (block == "attention") return check_attention(rng, seed);
  if (block == "multiway") return check_multiway(rng, seed);
  if (block == "projector") return check_projector(rng, seed);
  if (block == "prompt") return check_prompt(rng, seed);
  if (block == "decoder") return check_decoder(rng, seed);
  if (block == "bce") return check_loss(rng, seed, false);
  if (block == "dice") return check_loss(rng, seed, true);
  throw ConfigError("unknown gradcheck block '" + block + "'");
}

}  // namespace

const std::vector<std::string>& gradcheck_block_names() {
  static const std::vector<std::string> names{"attention", "multiway", "projector", "prompt",
                                              "decoder",   "bce",      "dice"};
  return names;
}

std::vector<BlockGradReport> run_gradcheck(const std::string& scope, std::size_t n_configs, std::uint64_t seed) {
  const auto& all = gradcheck_block_names();
  std::vector<std::string> blocks;
  if (scope == "all") blocks = all;
  else if (std::find(all.begin(), all.end(), scope) != all.end()) blocks = {scope};
  else throw ConfigError("unknown gradcheck scope '" + scope + "' (expected 'all' or a block name)");
  if (n_configs == 0) throw ConfigError("gradcheck needs at least one configuration");

  std::vector<BlockGradReport> reports;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    BlockGradReport r;
    r.block = blocks[b];
    for (std::size_t i = 0; i < n_configs; ++i) {
      const auto block_index = static_cast<std::uint64_t>(std::find(all.begin(), all.end(), blocks[b]) - all.begin());
      const std::uint64_t s = mix_seed(mix_seed(seed, block_index), i);
      Rng rng(s);
      r.max_rel_error = std::max(r.max_rel_error, check_block(blocks[b], rng, s));
      ++r.configs;
    }
    reports.push_back(r);
  }
  return reports;
}

}  // namespace evfsam
