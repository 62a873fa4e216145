#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "drilldown/tensor.hpp"
#include "json.hpp"

// Synthetic multi-object scenes with templated region captions, standing in
// for a detector-annotated photo corpus.
namespace dd::scene {

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;

  double center_x() const { return x + w / 2; }
  double center_y() const { return y + h / 2; }
  bool contains(const BBox& o) const {
    return o.x >= x && o.y >= y && o.x + o.w <= x + w && o.y + o.h <= y + h;
  }
};

struct Region {
  std::string category;
  std::string color;
  std::string size;
  BBox bbox;
  std::vector<double> feature;
};

struct Caption {
  std::size_t region = 0;
  std::string text;

  bool operator==(const Caption&) const = default;
};

struct Scene {
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
  std::vector<Region> regions;
  std::vector<Caption> captions;
};

struct CorpusConfig {
  std::size_t train_count = 2000;
  std::size_t val_count = 200;
  std::size_t test_count = 500;
  std::size_t regions_per_scene = 8;
  // Minimum captions per scene; also the episode length.
  std::size_t turns = 5;
  std::vector<std::string> categories{"circle", "square",  "triangle", "diamond", "star",  "hexagon",
                                      "pentagon", "cross", "ellipse",  "arrow",   "heart", "ring"};
  std::vector<std::string> colors{"red", "green", "blue", "yellow", "purple", "orange", "white", "black"};
  std::vector<std::string> sizes{"small", "medium", "large"};
  double feature_noise = 0.05;
  // Zipf exponent on category and color frequencies (0 = uniform).
  double frequency_skew = 0.7;
  // Each region gets relational captions to this many nearest neighbours.
  std::size_t relations_per_region = 2;
  std::uint64_t seed = 7;

  std::size_t feature_dim() const { return categories.size() + colors.size() + sizes.size() + 4; }
  void validate() const;
  nlohmann::json to_json() const;
  static CorpusConfig from_json(const nlohmann::json& j);
};

enum class Split { train, val, test };
const char* split_name(Split s);
Split parse_split(const std::string& name);

enum class EpisodeMode { train, eval };

// Independent per-scene stream derived from the corpus seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

// Name of the 3x3 grid cell holding a normalized point, e.g. "top left".
std::string cell_name(double cx, double cy);

Scene generate_scene(const CorpusConfig& config, std::uint64_t id, std::uint64_t seed);

// Standalone SVG, one element of class "region" per region in region order.
std::string render_svg(const Scene& scene);

void make_corpus(const CorpusConfig& config, const std::filesystem::path& dir);
std::vector<Scene> load_split(const std::filesystem::path& dir, Split split);
CorpusConfig load_manifest(const std::filesystem::path& dir);

nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

// Train mode draws distinct captions in random order; eval mode takes the
// prefix of a permutation fixed by the scene seed.
std::vector<std::size_t> episode_indices(std::size_t caption_count, std::uint64_t scene_seed, std::size_t turns,
                                         EpisodeMode mode, grad::Rng& rng);
std::vector<std::string> sample_episode(const Scene& scene, std::size_t turns, EpisodeMode mode,
                                        grad::Rng& rng);

// N x F matrix of raw region features.
grad::Tensor feature_matrix(const Scene& scene);

}  // namespace dd::scene
