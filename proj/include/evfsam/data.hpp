#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evfsam/image.hpp"

namespace evfsam {

struct SegSample {
  std::string sample_id;
  Image image;
  std::string expression;
  Mask mask;
};

enum class ShapeKind { Circle, Square, Triangle };
enum class SizeClass { Small, Large };
enum class Difficulty { AttributesOnly, Spatial };

struct SceneObject {
  ShapeKind shape;
  std::string color;  // palette name
  SizeClass size;
  double cx;  // pixel coordinates of the center
  double cy;
};

struct SceneSpec {
  std::size_t canvas_size = 48;
  double background = 0.1;  // gray level
  std::vector<SceneObject> objects;
};

std::string to_string(ShapeKind s);
std::string to_string(SizeClass s);
std::string to_string(Difficulty d);
Difficulty parse_difficulty(const std::string& s);

const std::vector<std::string>& palette_names();
// Words the expression grammar can emit (tokenizer vocabulary, specials excluded).
std::vector<std::string> grammar_vocabulary();

// Half-extent in pixels of an object of the given size class on a canvas.
double object_radius(SizeClass size, std::size_t canvas_size);
Mask rasterize(const SceneObject& obj, std::size_t canvas_size);
// Objects are painted in order, so later objects are on top.
Image render(const SceneSpec& scene);

// Indices of the scene objects an expression denotes under the grammar's semantics:
//   "<color> <shape>", "<size> <color> <shape>"      -> all matching objects
//   "<color> <shape> on the <left|right>"            -> extreme matching object (ties: all tied)
//   "<shape> above the <color> <shape>"              -> objects of <shape> whose center lies
//                                                       above the center of the unique anchor
// Unparseable expressions denote nothing.
std::vector<std::size_t> resolve_expression(const SceneSpec& scene, const std::string& expression);

struct GeneratorConfig {
  std::uint64_t seed = 0;
  std::size_t n_samples = 100;
  std::size_t canvas_size = 48;
  Difficulty difficulty = Difficulty::Spatial;
  double overlap_iou_cap = 0.05;
  std::size_t min_objects = 3;
  std::size_t max_objects = 5;
  std::size_t max_attempts = 1000;  // per sample resampling budget
};

struct GeneratedSample {
  SegSample sample;
  SceneSpec scene;
  std::size_t referent = 0;  // index into scene.objects
};

// Deterministic in all arguments; sample i depends only on (seed, i, config).
std::vector<GeneratedSample> generate_scenes(const GeneratorConfig& config);
std::vector<SegSample> generate_dataset(const GeneratorConfig& config);

// COCO-style uncompressed RLE over the column-major scan of the mask.
// Counts alternate starting with a (possibly zero) run of 0s.
std::vector<std::uint64_t> rle_encode(const Mask& mask);
std::vector<std::uint64_t> rle_encode_flat(const std::vector<std::uint8_t>& flat);
Mask rle_decode(const std::vector<std::uint64_t>& counts, std::size_t height, std::size_t width);

// NetPBM I/O. Images are quantized to 8 bits (round(v * 255)).
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Mask& mask);  // 0 / 255
Mask read_pgm(const std::filesystem::path& path);

// Writes `<dir>/index.jsonl` plus `<dir>/images/<id>.ppm`.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<SegSample>& samples);
// Reads a JSON-lines index; image paths are relative to the index's directory.
// All malformed lines are reported together in one FormatError ("line N: ...").
std::vector<SegSample> load_dataset(const std::filesystem::path& index_path);

}  // namespace evfsam
