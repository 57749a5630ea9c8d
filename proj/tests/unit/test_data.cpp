#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "evfsam/data.hpp"
#include "evfsam/errors.hpp"
#include "evfsam/rng.hpp"
#include "json.hpp"

using namespace evfsam;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("evfsam_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

// Brute-force semantics of the expression grammar, written independently of
// the generator: enumerate every object and test the predicate directly.
std::vector<std::size_t> oracle_referents(const SceneSpec& scene, const std::string& expr) {
  const auto w = words(expr);
  const auto& objs = scene.objects;
  auto is = [&](const SceneObject& o, const std::string& color, const std::string& shape) {
    return o.color == color && to_string(o.shape) == shape;
  };
  std::vector<std::size_t> out;
  if (w.size() == 2) {
    for (std::size_t i = 0; i < objs.size(); ++i)
      if (is(objs[i], w[0], w[1])) out.push_back(i);
  } else if (w.size() == 3) {
    for (std::size_t i = 0; i < objs.size(); ++i)
      if (to_string(objs[i].size) == w[0] && is(objs[i], w[1], w[2])) out.push_back(i);
  } else if (w.size() == 5 && w[2] == "on" && w[3] == "the") {
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < objs.size(); ++i)
      if (is(objs[i], w[0], w[1])) cand.push_back(i);
    for (auto i : cand) {
      bool extreme = true;
      for (auto j : cand)
        if (w[4] == "left" ? objs[j].cx < objs[i].cx : objs[j].cx > objs[i].cx) extreme = false;
      if (extreme) out.push_back(i);
    }
  } else if (w.size() == 5 && w[1] == "above" && w[2] == "the") {
    std::vector<std::size_t> anchors;
    for (std::size_t i = 0; i < objs.size(); ++i)
      if (is(objs[i], w[3], w[4])) anchors.push_back(i);
    if (anchors.size() != 1) return {};
    const auto& a = objs[anchors[0]];
    for (std::size_t i = 0; i < objs.size(); ++i)
      if (i != anchors[0] && to_string(objs[i].shape) == w[0] && objs[i].cy < a.cy) out.push_back(i);
  }
  return out;
}

Mask random_mask(std::size_t h, std::size_t w, Rng& rng) {
  Mask m(h, w);
  const double p = rng.uniform();
  for (auto& b : m.bits) b = rng.uniform() < p ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("rle examples") {
  CHECK(rle_encode_flat({0, 0, 1, 1, 1, 0}) == std::vector<std::uint64_t>{2, 3, 1});
  CHECK(rle_encode_flat({0, 0, 0, 0, 0, 0}) == std::vector<std::uint64_t>{6});
  CHECK(rle_encode_flat({1, 1, 1, 1, 1, 1}) == std::vector<std::uint64_t>{0, 6});

  CHECK(rle_decode({6}, 2, 3).count() == 0);
  CHECK(rle_decode({0, 6}, 2, 3).count() == 6);
  CHECK_THROWS_AS(rle_decode({2, 3}, 2, 3), FormatError);

  // Column-major scan: the first column is read top to bottom first.
  Mask m(2, 3);
  m.at(1, 0) = 1;  // flat column-major index 1
  m.at(0, 2) = 1;  // index 4
  CHECK(rle_encode(m) == std::vector<std::uint64_t>{1, 1, 2, 1, 1});
  CHECK(rle_decode(rle_encode(m), 2, 3) == m);
}

TEST_CASE("rle round trip on random masks") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t h = 1 + rng.below(20), w = 1 + rng.below(20);
    const Mask m = random_mask(h, w, rng);
    const auto counts = rle_encode(m);
    std::uint64_t total = 0;
    for (auto c : counts) total += c;
    REQUIRE(total == h * w);
    REQUIRE(rle_decode(counts, h, w) == m);
  }
}

TEST_CASE("generation is deterministic and well-formed") {
  GeneratorConfig cfg;
  cfg.seed = 7;
  cfg.n_samples = 60;
  const auto a = generate_scenes(cfg);
  const auto b = generate_scenes(cfg);
  REQUIRE(a.size() == 60);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CAPTURE(a[i].sample.expression);
    CHECK(a[i].sample.image == b[i].sample.image);
    CHECK(a[i].sample.mask == b[i].sample.mask);
    CHECK(a[i].sample.expression == b[i].sample.expression);
    CHECK(a[i].sample.mask.count() > 0);
    CHECK(a[i].sample.mask.height == a[i].sample.image.height);
    const auto refs = oracle_referents(a[i].scene, a[i].sample.expression);
    REQUIRE(refs.size() == 1);
    CHECK(refs[0] == a[i].referent);
    CHECK(resolve_expression(a[i].scene, a[i].sample.expression) == refs);
    CHECK(rasterize(a[i].scene.objects[a[i].referent], cfg.canvas_size) == a[i].sample.mask);
    for (Scalar v : a[i].sample.image.rgb) CHECK((v >= 0 && v <= 1));
  }

  // Sample i depends only on (seed, i): a longer run shares its prefix.
  cfg.n_samples = 10;
  const auto prefix = generate_scenes(cfg);
  for (std::size_t i = 0; i < 10; ++i) CHECK(prefix[i].sample.image == a[i].sample.image);

  cfg.seed = 8;
  const auto other = generate_scenes(cfg);
  bool differs = false;
  for (std::size_t i = 0; i < 10; ++i) differs = differs || other[i].sample.expression != a[i].sample.expression;
  CHECK(differs);
}

TEST_CASE("objects respect the overlap cap") {
  GeneratorConfig cfg;
  cfg.seed = 3;
  cfg.n_samples = 40;
  for (const auto& g : generate_scenes(cfg)) {
    const auto& objs = g.scene.objects;
    for (std::size_t i = 0; i < objs.size(); ++i)
      for (std::size_t j = i + 1; j < objs.size(); ++j) {
        const Mask a = rasterize(objs[i], cfg.canvas_size), b = rasterize(objs[j], cfg.canvas_size);
        std::size_t inter = 0, uni = 0;
        for (std::size_t k = 0; k < a.bits.size(); ++k) {
          inter += a.bits[k] && b.bits[k];
          uni += a.bits[k] || b.bits[k];
        }
        CHECK(static_cast<double>(inter) <= cfg.overlap_iou_cap * static_cast<double>(uni));
      }
  }
}

TEST_CASE("attribute-only difficulty has no spatial words") {
  GeneratorConfig cfg;
  cfg.seed = 11;
  cfg.n_samples = 80;
  cfg.difficulty = Difficulty::AttributesOnly;
  for (const auto& s : generate_dataset(cfg))
    for (const auto& w : words(s.expression))
      for (const char* spatial : {"left", "right", "above", "on", "the"}) CHECK(w != spatial);

  cfg.difficulty = Difficulty::Spatial;
  bool saw_spatial = false;
  for (const auto& s : generate_dataset(cfg))
    for (const auto& w : words(s.expression)) saw_spatial = saw_spatial || w == "above" || w == "left" || w == "right";
  CHECK(saw_spatial);
}

TEST_CASE("every emitted word is in the grammar vocabulary") {
  const auto vocab = grammar_vocabulary();
  GeneratorConfig cfg;
  cfg.n_samples = 50;
  for (const auto& s : generate_dataset(cfg))
    for (const auto& w : words(s.expression)) CHECK(std::find(vocab.begin(), vocab.end(), w) != vocab.end());
}

TEST_CASE("pathological config exhausts the budget") {
  GeneratorConfig cfg;
  cfg.overlap_iou_cap = -1.0;  // no placement can satisfy this
  cfg.max_attempts = 20;
  cfg.n_samples = 1;
  CHECK_THROWS_WITH_AS(generate_dataset(cfg), doctest::Contains("budget exhausted"), std::runtime_error);
  cfg.canvas_size = 12;
  CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
}

TEST_CASE("dataset write/read round trip") {
  GeneratorConfig cfg;
  cfg.seed = 5;
  cfg.n_samples = 12;
  const auto samples = generate_dataset(cfg);
  const auto dir = temp_dir("roundtrip");
  const auto index = write_dataset(dir, samples);
  const auto back = load_dataset(index);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(back[i].sample_id == samples[i].sample_id);
    CHECK(back[i].expression == samples[i].expression);
    CHECK(back[i].mask == samples[i].mask);
    double worst = 0;
    for (std::size_t k = 0; k < samples[i].image.rgb.size(); ++k)
      worst = std::max(worst, std::abs(static_cast<double>(back[i].image.rgb[k] - samples[i].image.rgb[k])));
    CHECK(worst <= 0.5 / 255 + 1e-12);
  }
  // Writing twice is byte-identical.
  const auto dir2 = temp_dir("roundtrip2");
  write_dataset(dir2, samples);
  CHECK(slurp(index) == slurp(dir2 / "index.jsonl"));
  CHECK(slurp(dir / "images" / "s000003.ppm") == slurp(dir2 / "images" / "s000003.ppm"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("index format") {
  GeneratorConfig cfg;
  cfg.n_samples = 1;
  const auto dir = temp_dir("format");
  write_dataset(dir, generate_dataset(cfg));
  std::ifstream is(dir / "index.jsonl");
  std::string line;
  std::getline(is, line);
  const auto j = nlohmann::json::parse(line);
  CHECK(j.at("id") == "s000000");
  CHECK(j.at("image") == "images/s000000.ppm");
  CHECK(j.at("mask_rle").at("size") == std::vector<int>{48, 48});
  CHECK(j.at("expression").is_string());
  const std::string ppm = slurp(dir / "images" / "s000000.ppm");
  CHECK(ppm.rfind("P6\n48 48\n255\n", 0) == 0);
  CHECK(ppm.size() == 13 + 48 * 48 * 3);
  fs::remove_all(dir);
}

TEST_CASE("load_dataset validation") {
  const auto dir = temp_dir("validation");
  {
    std::ofstream(dir / "empty.jsonl");
  }
  CHECK(load_dataset(dir / "empty.jsonl").empty());

  Image im(2, 2);
  im.at(1, 1, 0) = 1;
  fs::create_directories(dir / "images");
  write_ppm(dir / "images" / "a.ppm", im);
  {
    std::ofstream os(dir / "bad.jsonl");
    os << R"({"id":"a","image":"images/a.ppm","expression":"red circle","mask_rle":{"size":[2,2],"counts":[3,1]}})" << "\n";
    os << R"({"id":"b","image":"images/a.ppm","expression":"red circle","mask_rle":{"size":[2,2],"counts":[3]}})" << "\n";
    os << R"({"id":"c","image":"images/a.ppm","mask_rle":{"size":[2,2],"counts":[4]}})" << "\n";
  }
  try {
    load_dataset(dir / "bad.jsonl");
    FAIL("expected a FormatError");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("line 1:") == std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("netpbm round trip") {
  const auto dir = temp_dir("netpbm");
  Mask m(3, 4);
  m.at(0, 0) = m.at(2, 3) = 1;
  write_pgm(dir / "m.pgm", m);
  CHECK(read_pgm(dir / "m.pgm") == m);
  const std::string pgm = slurp(dir / "m.pgm");
  CHECK(pgm.rfind("P5\n4 3\n255\n", 0) == 0);
  CHECK(static_cast<unsigned char>(pgm.back()) == 255);

  Image im(2, 3);
  im.at(1, 2, 1) = 0.5;
  write_ppm(dir / "i.ppm", im);
  const Image back = read_ppm(dir / "i.ppm");
  CHECK(back.at(1, 2, 1) == doctest::Approx(128.0 / 255));
  {
    std::ofstream os(dir / "p3.ppm");
    os << "P3\n1 1\n255\n0 0 0\n";
  }
  CHECK_THROWS_AS(read_ppm(dir / "p3.ppm"), FormatError);
  fs::remove_all(dir);
}

#ifdef EVFSAM_FIXTURE_DIR
TEST_CASE("shipped fixture: generator output is byte-exact") {
  const fs::path fixture = fs::path(EVFSAM_FIXTURE_DIR) / "dataset_seed7";
  GeneratorConfig cfg;
  cfg.seed = 7;
  cfg.n_samples = 3;
  cfg.canvas_size = 32;
  const auto dir = temp_dir("fixture");
  write_dataset(dir, generate_dataset(cfg));
  CHECK(slurp(dir / "index.jsonl") == slurp(fixture / "index.jsonl"));
  for (const char* id : {"s000000", "s000001", "s000002"}) {
    const std::string name = std::string(id) + ".ppm";
    CHECK(slurp(dir / "images" / name) == slurp(fixture / "images" / name));
  }
  const auto loaded = load_dataset(fixture / "index.jsonl");
  CHECK(loaded.size() == 3);
  fs::remove_all(dir);
}

TEST_CASE("shipped fixture: hand-written index") {
  const auto s = load_dataset(fs::path(EVFSAM_FIXTURE_DIR) / "tiny" / "index.jsonl");
  REQUIRE(s.size() == 1);
  CHECK(s[0].sample_id == "tiny0");
  CHECK(s[0].expression == "red square");
  CHECK(s[0].image.height == 2);
  CHECK(s[0].image.width == 3);
  CHECK(s[0].image.at(0, 0, 0) == 1.0);
  CHECK(s[0].image.at(1, 2, 2) == doctest::Approx(51.0 / 255));
  // counts [1,2,3] column-major over 2x3: col0 = (0,1), col1 = (1,1), col2 = (0,0)...
  Mask expect(2, 3);
  expect.at(1, 0) = 1;
  expect.at(0, 1) = 1;
  CHECK(s[0].mask == expect);
}
#endif
