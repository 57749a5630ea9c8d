#include <cmath>

#include "doctest.h"
#include "evfsam/autodiff.hpp"
#include "evfsam/errors.hpp"
#include "evfsam/gradcheck.hpp"
#include "evfsam/losses.hpp"
#include "evfsam/model.hpp"
#include "evfsam/ops.hpp"
#include "evfsam/prompt.hpp"
#include "evfsam/sam.hpp"
#include "helpers.hpp"

using namespace evfsam;
using testing::random_tensor;

namespace {

Image random_image(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  Image im(size, size);
  for (auto& v : im.rgb) v = rng.uniform();
  return im;
}

SamConfig tiny_sam() {
  SamConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.encoder_dim = 16;
  c.encoder_layers = 1;
  c.encoder_heads = 2;
  c.encoder_ffn_dim = 16;
  c.feat_dim = 16;
  c.decoder_blocks = 2;
  c.decoder_heads = 2;
  c.decoder_mlp_dim = 16;
  return c;
}

void zero_group(ParameterStore& store, ParamGroup g) {
  for (auto& p : store.params())
    if (p.group == g) std::fill(p.value.data().begin(), p.value.data().end(), 0);
}

}  // namespace

TEST_CASE("projector shapes and structure") {
  ParameterStore store;
  Initializer init(1);
  const Projector full(store, init, "projector", ParamGroup::MultimodalEncoder, 1024, 1024, 256);
  CHECK(full(random_tensor({1024}, 2)).shape() == Shape{256});
  CHECK(full(random_tensor({3, 1024}, 2)).shape() == Shape{3, 256});
  CHECK_THROWS_AS(full(random_tensor({1000}, 2)), ShapeError);
  CHECK(store.params().size() == 4);  // two linear layers, nothing else
}

TEST_CASE("projector zero map, ReLU and homogeneity") {
  ParameterStore store;
  Initializer init(3);
  const Projector p(store, init, "p", ParamGroup::MultimodalEncoder, 2, 2, 3);
  const Tensor x = random_tensor({2}, 4);

  // Hidden pre-activation [-1, 2] -> post-ReLU [0, 2].
  auto set = [](Tensor t, std::vector<Scalar> v) { std::copy(v.begin(), v.end(), t.data().begin()); };
  set(p.fc1().weight, {1, 0, 0, 1});
  set(p.fc1().bias, {0, 0});
  set(p.fc2().weight, {1, 0, 0, 0, 1, 0});
  set(p.fc2().bias, {0, 0, 0});
  const Tensor y = p(Tensor({2}, {-1.0, 2.0}));
  CHECK(y[0] == 0);
  CHECK(y[1] == 2);
  CHECK(y[2] == 0);

  // Scaling the second layer (bias 0) scales the output.
  const Tensor before = p(x);
  Tensor w2 = p.fc2().weight;
  for (auto& w : w2.data()) w *= 2.5;
  const Tensor after = p(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(after[i] == doctest::Approx(2.5 * before[i]).epsilon(1e-14));

  for (auto& pr : store.params()) std::fill(pr.value.data().begin(), pr.value.data().end(), 0);
  const Tensor zero = p(x);
  for (Scalar v : zero.data()) CHECK(v == 0);
}

TEST_CASE("sparse prompt layout") {
  ParameterStore store;
  Initializer init(5);
  const PromptEncoder pe(store, init, "pe", 16);
  const Tensor evf = random_tensor({16}, 6);

  auto s = pe.build(evf);
  CHECK(s.tokens.shape() == Shape{1, 1, 16});
  CHECK(identical(s.sample(0), reshape(evf, {1, 16})));
  CHECK(s.provenance == std::vector<TokenKind>{TokenKind::Evf});

  GeometricPrompts box;
  box.boxes.push_back({0.1, 0.2, 0.6, 0.9});
  s = pe.build(evf, box);
  CHECK(s.count() == 3);
  CHECK(s.provenance.back() == TokenKind::Evf);

  GeometricPrompts pts;
  pts.points = {{0.5, 0.5}, {0.25, 0.75}};
  s = pe.build(evf, pts);
  CHECK(s.count() == 3);
  CHECK(s.provenance[2] == TokenKind::Evf);
  CHECK(identical(row(s.sample(0), 2), evf));

  GeometricPrompts both = pts;
  both.boxes = box.boxes;
  s = pe.build(evf, both);
  CHECK(s.count() == 5);
  CHECK(s.provenance == std::vector<TokenKind>{TokenKind::Point, TokenKind::Point, TokenKind::BoxCorner,
                                               TokenKind::BoxCorner, TokenKind::Evf});

  GeometricPrompts bad;
  bad.points = {{1.5, 0.2}};
  CHECK_THROWS_AS(pe.build(evf, bad), ValidationError);

  const auto batch = pe.build_batch(random_tensor({3, 16}, 7), {pts, pts, pts});
  CHECK(batch.tokens.shape() == Shape{3, 3, 16});
  CHECK_THROWS_AS(pe.build_batch(random_tensor({2, 16}, 7), {pts, box}), ShapeError);
}

TEST_CASE("coordinate features") {
  const auto f = coordinate_features(0.25, 0.5, 8);
  CHECK(f.size() == 8);
  CHECK(f[0] == doctest::Approx(std::sin(M_PI * 0.25)));
  CHECK(f[3] == doctest::Approx(std::cos(M_PI * 0.5)));
  CHECK(f[4] == doctest::Approx(std::sin(2 * M_PI * 0.25)));
  CHECK_THROWS_AS(coordinate_features(0, 0, 6), ShapeError);
}

TEST_CASE("sam image encoder grid") {
  SamConfig c = tiny_sam();
  c.image_size = 64;
  c.patch_size = 8;
  ParameterStore store;
  Initializer init(8);
  const SamImageEncoder enc(c, store, init);
  const Image im = random_image(64, 9);
  const auto g = enc(im);
  CHECK(g.height == 8);
  CHECK(g.width == 8);
  CHECK(g.features.shape() == Shape{64, 16});
  CHECK(g.features.all_finite());
  CHECK(identical(g.features, enc(im).features));
  CHECK_THROWS_AS(enc(random_image(32, 9)), ShapeError);
  for (const auto& p : store.params()) CHECK(p.group == ParamGroup::ImageEncoder);
}

TEST_CASE("pixel shuffle places sub-pixels") {
  // 1x2 grid, c = 1: channel block (dy*2+dx).
  const Tensor x({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor y = pixel_shuffle2(x, 1, 2);
  CHECK(y.shape() == Shape{8, 1});
  // Output rows (2 x 4 raster): [1 2 5 6; 3 4 7 8]
  const std::vector<Scalar> expect{1, 2, 5, 6, 3, 4, 7, 8};
  for (std::size_t i = 0; i < 8; ++i) CHECK(y[i] == expect[i]);
}

TEST_CASE("mask decoder contracts") {
  const SamConfig c = tiny_sam();
  ParameterStore store;
  Initializer init(10);
  const SamImageEncoder enc(c, store, init);
  const PromptEncoder pe(store, init, "pe", c.feat_dim);
  const MaskDecoder dec(c, store, init);
  const auto grid = enc(random_image(16, 11));

  const Tensor a = dec(grid, pe.build(random_tensor({16}, 12)), pe.no_mask_embedding());
  CHECK(a.shape() == Shape{16, 16});
  CHECK(c.output_size() == 16);
  const Tensor b = dec(grid, pe.build(random_tensor({16}, 13)), pe.no_mask_embedding());
  CHECK(max_abs_diff(a, b) > 0);
  CHECK(identical(a, dec(grid, pe.build(random_tensor({16}, 12)), pe.no_mask_embedding())));

  ImageFeatureGrid wrong{random_tensor({16, 8}, 14), 4, 4};
  CHECK_THROWS_AS(dec(wrong, pe.build(random_tensor({16}, 12)), pe.no_mask_embedding()), ShapeError);

  SamConfig big = c;
  big.image_size = 32;
  big.patch_size = 4;
  CHECK(big.output_size() == 32);

  zero_group(store, ParamGroup::MaskDecoder);
  const Tensor z = dec(grid, pe.build(random_tensor({16}, 12)), pe.no_mask_embedding());
  for (Scalar v : z.data()) CHECK(v == z[0]);
}

TEST_CASE("toy mask decoder at 8x8 grid upsamples to 32x32") {
  SamConfig c = tiny_sam();
  c.image_size = 64;
  c.patch_size = 8;
  ParameterStore store;
  Initializer init(15);
  const SamImageEncoder enc(c, store, init);
  const PromptEncoder pe(store, init, "pe", c.feat_dim);
  const MaskDecoder dec(c, store, init);
  CHECK(dec(enc(random_image(64, 16)), pe.build(random_tensor({16}, 17)), pe.no_mask_embedding()).shape() ==
        Shape{32, 32});
}

TEST_CASE("mask loss gradient reaches the evf token and the decoder") {
  const SamConfig c = tiny_sam();
  ParameterStore store;
  Initializer init(18);
  const SamImageEncoder enc(c, store, init);
  const PromptEncoder pe(store, init, "pe", c.feat_dim);
  const MaskDecoder dec(c, store, init);
  const auto grid = enc(random_image(16, 19));
  Mask m(16, 16);
  for (std::size_t y = 4; y < 10; ++y)
    for (std::size_t x = 3; x < 12; ++x) m.at(y, x) = 1;
  const Tensor target = mask_to_tensor(m);
  Tensor evf = random_tensor({16}, 20, 1.0, true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(total_loss(dec(grid, pe.build(evf), pe.no_mask_embedding()), target).total);
  }
  double norm = 0;
  for (Scalar g : evf.grad()) norm += g * g;
  CHECK(norm > 0);

  // Finite-difference check through the two-way decoder with a geometric prompt.
  GeometricPrompts geo;
  geo.points = {{0.3, 0.6}};
  std::vector<Tensor> probe{evf, store.at("sam.mask_decoder.mask_token").value,
                            store.at("sam.mask_decoder.blocks.0.token_to_image.q.weight").value,
                            store.at("sam.mask_decoder.blocks.1.image_to_token.v.weight").value,
                            store.at("sam.mask_decoder.upscale1.weight").value,
                            store.at("sam.mask_decoder.hyper.fc2.weight").value,
                            store.at("pe.point_embed").value, store.at("pe.no_mask_embed").value};
  GradCheckOptions opt;
  opt.max_coords_per_input = 12;
  const Scalar err = grad_check(
      [&] { return total_loss(dec(grid, pe.build(evf, geo), pe.no_mask_embedding()), target).total; }, probe, opt);
  CHECK(err < 1e-4);
}

TEST_CASE("assembled model forward") {
  ModelConfig mc;
  mc.encoder.num_layers = 2;
  mc.encoder.embed_dim = 16;
  mc.encoder.num_heads = 2;
  mc.encoder.ffn_dim = 16;
  mc.encoder.image_size = 16;
  mc.encoder.patch_size = 4;
  mc.encoder.fusion = FusionMode::early(2);
  mc.sam = tiny_sam();
  EvfSamModel model(mc, grammar_tokenizer(8));
  const Image im = random_image(24, 21);  // resized for both views
  const Tensor logits = model.forward(im, "red circle");
  CHECK(logits.shape() == Shape{16, 16});
  const Mask m = model.predict(im, "red circle");
  CHECK(m.height == 24);
  CHECK(m.width == 24);
  CHECK(identical(logits, model.forward(im, "red circle")));

  const auto grid = model.image_features(im);
  CHECK(identical(logits, model.forward(im, "red circle", {}, &grid)));

  // The image encoder starts frozen, everything else trainable.
  for (const auto& p : model.params().params())
    CHECK(p.value.requires_grad() == (p.group != ParamGroup::ImageEncoder));
  CHECK(model.params().at("projector.fc1.weight").group == ParamGroup::MultimodalEncoder);
}
