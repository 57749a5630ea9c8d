#include "evfsam/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "evfsam/errors.hpp"
#include "evfsam/rng.hpp"
#include "json.hpp"

namespace evfsam {

namespace {

struct PaletteEntry {
  const char* name;
  std::array<double, 3> rgb;
};

constexpr PaletteEntry kPalette[] = {
    {"red", {0.90, 0.15, 0.15}},
    {"green", {0.15, 0.80, 0.20}},
    {"blue", {0.20, 0.30, 0.95}},
    {"yellow", {0.95, 0.90, 0.20}},
};

constexpr ShapeKind kShapes[] = {ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle};

// Minimum pixel separation that makes a spatial relation visually clear.
constexpr double kRelationMargin = 4.0;

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> words;
  for (std::string w; is >> w;) words.push_back(w);
  return words;
}

std::optional<ShapeKind> parse_shape(const std::string& w) {
  for (auto s : kShapes)
    if (to_string(s) == w) return s;
  return std::nullopt;
}

bool is_color(const std::string& w) {
  return std::any_of(std::begin(kPalette), std::end(kPalette), [&](const auto& p) { return w == p.name; });
}

std::optional<SizeClass> parse_size(const std::string& w) {
  if (w == "small") return SizeClass::Small;
  if (w == "large") return SizeClass::Large;
  return std::nullopt;
}

const std::array<double, 3>& color_rgb(const std::string& name) {
  for (const auto& p : kPalette)
    if (name == p.name) return p.rgb;
  throw ValidationError("unknown palette color '" + name + "'");
}

enum class Template { ColorShape, SizeColorShape, ColorShapeSide, ShapeAboveColorShape };

double mask_iou(const Mask& a, const Mask& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += (a.bits[i] && b.bits[i]) ? 1 : 0;
    uni += (a.bits[i] || b.bits[i]) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

SceneObject random_object(Rng& rng) {
  SceneObject o;
  o.shape = kShapes[rng.below(3)];
  o.color = kPalette[rng.below(std::size(kPalette))].name;
  o.size = rng.below(2) ? SizeClass::Large : SizeClass::Small;
  o.cx = o.cy = 0;
  return o;
}

// Places objects one by one at uniform positions subject to the overlap cap
// and an optional per-object vertical constraint.
template <typename Constraint>
bool place_objects(Rng& rng, std::vector<SceneObject>& objects, const GeneratorConfig& cfg, Constraint ok) {
  std::vector<Mask> placed;
  const double size = static_cast<double>(cfg.canvas_size);
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const double r = object_radius(objects[i].size, cfg.canvas_size);
    bool done = false;
    for (int attempt = 0; attempt < 50 && !done; ++attempt) {
      objects[i].cx = rng.uniform(r + 1.0, size - r - 1.0);
      objects[i].cy = rng.uniform(r + 1.0, size - r - 1.0);
      if (!ok(i, objects)) continue;
      Mask m = rasterize(objects[i], cfg.canvas_size);
      done = std::all_of(placed.begin(), placed.end(),
                         [&](const Mask& p) { return mask_iou(m, p) <= cfg.overlap_iou_cap; });
      if (done) placed.push_back(std::move(m));
    }
    if (!done) return false;
  }
  return true;
}

std::optional<GeneratedSample> try_generate(Rng& rng, const GeneratorConfig& cfg) {
  const bool spatial = cfg.difficulty == Difficulty::Spatial;
  const auto tmpl = static_cast<Template>(rng.below(spatial ? 4 : 2));
  const std::size_t n = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);

  std::vector<SceneObject> objects;
  for (std::size_t i = 0; i < n; ++i) objects.push_back(random_object(rng));

  std::string expression;
  bool placed = false;
  switch (tmpl) {
    case Template::ColorShape:
      placed = place_objects(rng, objects, cfg, [](std::size_t, const auto&) { return true; });
      expression = objects[0].color + " " + to_string(objects[0].shape);
      break;
    case Template::SizeColorShape:
      if (n >= 2 && rng.below(2)) {
        objects[1].shape = objects[0].shape;
        objects[1].color = objects[0].color;
        objects[1].size = objects[0].size == SizeClass::Large ? SizeClass::Small : SizeClass::Large;
      }
      placed = place_objects(rng, objects, cfg, [](std::size_t, const auto&) { return true; });
      expression = to_string(objects[0].size) + " " + objects[0].color + " " + to_string(objects[0].shape);
      break;
    case Template::ColorShapeSide: {
      const std::size_t copies = (n >= 3 && rng.below(3) == 0) ? 2 : 1;
      for (std::size_t k = 1; k <= copies; ++k) {
        objects[k].shape = objects[0].shape;
        objects[k].color = objects[0].color;
      }
      placed = place_objects(rng, objects, cfg, [](std::size_t, const auto&) { return true; });
      const bool left = rng.below(2) == 0;
      expression = objects[0].color + " " + to_string(objects[0].shape) + " on the " + (left ? "left" : "right");
      if (placed) {
        std::vector<double> xs;
        for (const auto& o : objects)
          if (o.shape == objects[0].shape && o.color == objects[0].color) xs.push_back(o.cx);
        std::sort(xs.begin(), xs.end());
        const double gap = left ? xs[1] - xs[0] : xs[xs.size() - 1] - xs[xs.size() - 2];
        if (gap < kRelationMargin) placed = false;
      }
      break;
    }
    case Template::ShapeAboveColorShape: {
      // objects[0] = anchor, objects[1] = target above it, objects[2] = same-shape distractor below.
      if (n < 2) return std::nullopt;
      const ShapeKind target_shape = kShapes[rng.below(3)];
      objects[1].shape = target_shape;
      if (n >= 3) objects[2].shape = target_shape;
      placed = place_objects(rng, objects, cfg, [](std::size_t i, const std::vector<SceneObject>& o) {
        if (i == 1) return o[1].cy < o[0].cy - kRelationMargin;
        if (i == 2) return o[2].cy > o[0].cy + kRelationMargin;
        return true;
      });
      expression = to_string(target_shape) + " above the " + objects[0].color + " " + to_string(objects[0].shape);
      if (placed) {
        for (std::size_t i = 1; i < n; ++i)
          if (objects[i].shape == target_shape && std::abs(objects[i].cy - objects[0].cy) < kRelationMargin)
            placed = false;
      }
      break;
    }
  }
  if (!placed) return std::nullopt;

  SceneSpec scene;
  scene.canvas_size = cfg.canvas_size;
  scene.background = rng.uniform(0.05, 0.25);
  scene.objects = objects;
  const auto referents = resolve_expression(scene, expression);
  if (referents.size() != 1) return std::nullopt;

  // Paint the referent last so its full rasterization is visible.
  std::swap(scene.objects[referents[0]], scene.objects.back());
  GeneratedSample g;
  g.scene = std::move(scene);
  g.referent = g.scene.objects.size() - 1;
  g.sample.expression = expression;
  g.sample.image = render(g.scene);
  g.sample.mask = rasterize(g.scene.objects[g.referent], cfg.canvas_size);
  return g;
}

}  // namespace

std::string to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

std::string to_string(SizeClass s) { return s == SizeClass::Small ? "small" : "large"; }

std::string to_string(Difficulty d) { return d == Difficulty::Spatial ? "spatial" : "attributes"; }

Difficulty parse_difficulty(const std::string& s) {
  if (s == "spatial") return Difficulty::Spatial;
  if (s == "attributes") return Difficulty::AttributesOnly;
  throw ConfigError("unknown difficulty '" + s + "' (expected 'attributes' or 'spatial')");
}

const std::vector<std::string>& palette_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& p : kPalette) v.push_back(p.name);
    return v;
  }();
  return names;
}

std::vector<std::string> grammar_vocabulary() {
  std::vector<std::string> words = palette_names();
  for (auto s : kShapes) words.push_back(to_string(s));
  for (const char* w : {"small", "large", "on", "the", "left", "right", "above"}) words.emplace_back(w);
  return words;
}

double object_radius(SizeClass size, std::size_t canvas_size) {
  return static_cast<double>(canvas_size) * (size == SizeClass::Small ? 0.09 : 0.15);
}

Mask rasterize(const SceneObject& obj, std::size_t canvas_size) {
  Mask m(canvas_size, canvas_size);
  const double r = object_radius(obj.size, canvas_size);
  for (std::size_t y = 0; y < canvas_size; ++y)
    for (std::size_t x = 0; x < canvas_size; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - obj.cx;
      const double dy = static_cast<double>(y) + 0.5 - obj.cy;
      bool inside = false;
      switch (obj.shape) {
        case ShapeKind::Circle: inside = dx * dx + dy * dy <= r * r; break;
        case ShapeKind::Square: inside = std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r; break;
        case ShapeKind::Triangle:  // apex up, base at cy + r
          inside = dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2.0;
          break;
      }
      m.at(y, x) = inside ? 1 : 0;
    }
  return m;
}

Image render(const SceneSpec& scene) {
  Image img(scene.canvas_size, scene.canvas_size);
  std::fill(img.rgb.begin(), img.rgb.end(), static_cast<Scalar>(scene.background));
  for (const auto& obj : scene.objects) {
    const Mask m = rasterize(obj, scene.canvas_size);
    const auto& rgb = color_rgb(obj.color);
    for (std::size_t y = 0; y < scene.canvas_size; ++y)
      for (std::size_t x = 0; x < scene.canvas_size; ++x)
        if (m.at(y, x))
          for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<Scalar>(rgb[c]);
  }
  return img;
}

std::vector<std::size_t> resolve_expression(const SceneSpec& scene, const std::string& expression) {
  const auto w = split_words(expression);
  std::vector<std::size_t> out;
  const auto& objs = scene.objects;
  auto matching = [&](std::optional<SizeClass> size, const std::string& color, ShapeKind shape) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < objs.size(); ++i)
      if (objs[i].color == color && objs[i].shape == shape && (!size || objs[i].size == *size)) idx.push_back(i);
    return idx;
  };

  if (w.size() == 2 && is_color(w[0]) && parse_shape(w[1])) return matching(std::nullopt, w[0], *parse_shape(w[1]));
  if (w.size() == 3 && parse_size(w[0]) && is_color(w[1]) && parse_shape(w[2]))
    return matching(parse_size(w[0]), w[1], *parse_shape(w[2]));
  if (w.size() == 5 && is_color(w[0]) && parse_shape(w[1]) && w[2] == "on" && w[3] == "the" &&
      (w[4] == "left" || w[4] == "right")) {
    const auto cand = matching(std::nullopt, w[0], *parse_shape(w[1]));
    if (cand.empty()) return out;
    const bool left = w[4] == "left";
    double best = objs[cand[0]].cx;
    for (auto i : cand) best = left ? std::min(best, objs[i].cx) : std::max(best, objs[i].cx);
    for (auto i : cand)
      if (objs[i].cx == best) out.push_back(i);
    return out;
  }
  if (w.size() == 5 && parse_shape(w[0]) && w[1] == "above" && w[2] == "the" && is_color(w[3]) &&
      parse_shape(w[4])) {
    const auto anchors = matching(std::nullopt, w[3], *parse_shape(w[4]));
    if (anchors.size() != 1) return out;
    const auto& anchor = objs[anchors[0]];
    for (std::size_t i = 0; i < objs.size(); ++i)
      if (i != anchors[0] && objs[i].shape == *parse_shape(w[0]) && objs[i].cy < anchor.cy) out.push_back(i);
    return out;
  }
  return out;
}

std::vector<GeneratedSample> generate_scenes(const GeneratorConfig& cfg) {
  if (cfg.n_samples == 0) throw ConfigError("n_samples must be positive");
  if (cfg.canvas_size < 16) throw ConfigError("canvas_size must be at least 16");
  if (cfg.min_objects < 2 || cfg.max_objects < cfg.min_objects)
    throw ConfigError("object count range must satisfy 2 <= min_objects <= max_objects");
  std::vector<GeneratedSample> out;
  out.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    Rng rng(mix_seed(cfg.seed, i));
    std::optional<GeneratedSample> g;
    for (std::size_t attempt = 0; attempt < cfg.max_attempts && !g; ++attempt) g = try_generate(rng, cfg);
    if (!g)
      throw std::runtime_error("generation budget exhausted for sample " + std::to_string(i) + " after " +
                               std::to_string(cfg.max_attempts) + " attempts");
    char id[32];
    std::snprintf(id, sizeof id, "s%06zu", i);
    g->sample.sample_id = id;
    out.push_back(std::move(*g));
  }
  return out;
}

std::vector<SegSample> generate_dataset(const GeneratorConfig& cfg) {
  std::vector<SegSample> out;
  for (auto& g : generate_scenes(cfg)) out.push_back(std::move(g.sample));
  return out;
}

std::vector<std::uint64_t> rle_encode_flat(const std::vector<std::uint8_t>& flat) {
  std::vector<std::uint64_t> counts;
  std::uint8_t current = 0;
  std::uint64_t run = 0;
  for (auto b : flat) {
    const std::uint8_t v = b ? 1 : 0;
    if (v != current) {
      counts.push_back(run);
      run = 0;
      current = v;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

std::vector<std::uint64_t> rle_encode(const Mask& mask) {
  std::vector<std::uint8_t> flat;
  flat.reserve(mask.bits.size());
  for (std::size_t x = 0; x < mask.width; ++x)
    for (std::size_t y = 0; y < mask.height; ++y) flat.push_back(mask.at(y, x));
  return rle_encode_flat(flat);
}

Mask rle_decode(const std::vector<std::uint64_t>& counts, std::size_t height, std::size_t width) {
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  if (total != static_cast<std::uint64_t>(height) * width)
    throw FormatError("RLE counts sum to " + std::to_string(total) + " but mask has " +
                      std::to_string(height * width) + " pixels");
  Mask m(height, width);
  std::size_t pos = 0;
  std::uint8_t v = 0;
  for (auto c : counts) {
    for (std::uint64_t k = 0; k < c; ++k, ++pos) m.at(pos % height, pos / height) = v;
    v ^= 1;
  }
  return m;
}

namespace {

void write_netpbm(const std::filesystem::path& path, const char* magic, std::size_t h, std::size_t w,
                  const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << magic << '\n' << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::vector<std::uint8_t> read_netpbm(const std::filesystem::path& path, const std::string& magic,
                                      std::size_t channels, std::size_t& h, std::size_t& w) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open image '" + path.string() + "'");
  auto token = [&]() {
    std::string t;
    char c;
    while (is.get(c)) {
      if (c == '#') {
        std::string comment;
        std::getline(is, comment);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != magic) throw FormatError("'" + path.string() + "' is not a " + magic + " file");
  std::size_t maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw FormatError("malformed header in '" + path.string() + "'");
  }
  if (w == 0 || h == 0) throw FormatError("empty image in '" + path.string() + "'");
  if (maxval != 255) throw FormatError("unsupported maxval " + std::to_string(maxval) + " in '" + path.string() + "'");
  std::vector<std::uint8_t> bytes(h * w * channels);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw FormatError("truncated pixel data in '" + path.string() + "'");
  return bytes;
}

std::uint8_t quantize(Scalar v) {
  if (!(v >= 0 && v <= 1)) throw ValidationError("pixel value " + std::to_string(v) + " outside [0,1]");
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> bytes(image.rgb.size());
  std::transform(image.rgb.begin(), image.rgb.end(), bytes.begin(), quantize);
  write_netpbm(path, "P6", image.height, image.width, bytes);
}

Image read_ppm(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto bytes = read_netpbm(path, "P6", 3, h, w);
  Image img(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = static_cast<Scalar>(bytes[i]) / Scalar{255};
  return img;
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> bytes(mask.bits.size());
  std::transform(mask.bits.begin(), mask.bits.end(), bytes.begin(), [](std::uint8_t b) { return b ? 255 : 0; });
  write_netpbm(path, "P5", mask.height, mask.width, bytes);
}

Mask read_pgm(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto bytes = read_netpbm(path, "P5", 1, h, w);
  Mask m(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] != 0 && bytes[i] != 255) throw FormatError("non-binary mask value in '" + path.string() + "'");
    m.bits[i] = bytes[i] ? 1 : 0;
  }
  return m;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<SegSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  const fs::path index = dir / "index.jsonl";
  std::ofstream os(index, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + index.string() + "' for writing");
  for (const auto& s : samples) {
    const std::string rel = "images/" + s.sample_id + ".ppm";
    write_ppm(dir / rel, s.image);
    nlohmann::ordered_json j;
    j["id"] = s.sample_id;
    j["image"] = rel;
    j["expression"] = s.expression;
    j["mask_rle"] = {{"size", {s.mask.height, s.mask.width}}, {"counts", rle_encode(s.mask)}};
    os << j.dump() << '\n';
  }
  if (!os) throw std::runtime_error("failed writing '" + index.string() + "'");
  return index;
}

std::vector<SegSample> load_dataset(const std::filesystem::path& index_path) {
  std::ifstream is(index_path, std::ios::binary);
  if (!is) throw FormatError("cannot open dataset index '" + index_path.string() + "'");
  const auto base = index_path.parent_path();
  std::vector<SegSample> samples;
  std::vector<std::string> errors;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      for (const char* key : {"id", "image", "expression", "mask_rle"})
        if (!j.contains(key)) throw FormatError(std::string("missing field '") + key + "'");
      const auto& rle = j.at("mask_rle");
      if (!rle.contains("size") || !rle.contains("counts")) throw FormatError("mask_rle needs 'size' and 'counts'");
      const auto size = rle.at("size").get<std::vector<std::size_t>>();
      if (size.size() != 2 || size[0] == 0 || size[1] == 0) throw FormatError("mask_rle.size must be [H, W]");
      SegSample s;
      s.sample_id = j.at("id").get<std::string>();
      s.expression = j.at("expression").get<std::string>();
      s.mask = rle_decode(rle.at("counts").get<std::vector<std::uint64_t>>(), size[0], size[1]);
      s.image = read_ppm(base / j.at("image").get<std::string>());
      if (s.image.height != s.mask.height || s.image.width != s.mask.width)
        throw FormatError("image and mask sizes differ");
      samples.push_back(std::move(s));
    } catch (const std::exception& e) {
      errors.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = index_path.string() + ": " + std::to_string(errors.size()) + " malformed line(s)";
    for (const auto& e : errors) msg += "\n  " + e;
    throw FormatError(msg);
  }
  return samples;
}

}  // namespace evfsam
