#include "drilldown/scenegen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>
#include <tuple>

namespace dd::scene {

namespace {

struct SizeRange {
  double lo, hi;
};

SizeRange size_range(std::size_t size_index, std::size_t size_count) {
  // Spread side lengths over [0.10, 0.40] with gaps between classes.
  const double span = 0.30 / static_cast<double>(size_count);
  const double lo = 0.10 + span * static_cast<double>(size_index);
  return {lo, lo + span * 0.75};
}

std::vector<double> zipf_weights(std::size_t n, double skew) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / std::pow(static_cast<double>(i + 1), skew);
  return w;
}

std::string relation(const BBox& subject, const BBox& object) {
  const double dx = object.center_x() - subject.center_x();
  const double dy = object.center_y() - subject.center_y();
  if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? "left of" : "right of";
  return dy > 0 ? "above" : "below";
}

}  // namespace

void CorpusConfig::validate() const {
  if (categories.empty() || colors.empty() || sizes.empty()) {
    throw std::invalid_argument("corpus palettes must be non-empty");
  }
  if (train_count == 0 || val_count == 0 || test_count == 0) {
    throw std::invalid_argument("corpus split counts must be positive");
  }
  if (regions_per_scene == 0) throw std::invalid_argument("regions_per_scene must be at least 1");
  if (turns == 0) throw std::invalid_argument("turns must be at least 1");
  if (feature_noise < 0) throw std::invalid_argument("feature_noise must be non-negative");
}

nlohmann::json CorpusConfig::to_json() const {
  return {{"train_count", train_count},
          {"val_count", val_count},
          {"test_count", test_count},
          {"regions_per_scene", regions_per_scene},
          {"turns", turns},
          {"categories", categories},
          {"colors", colors},
          {"sizes", sizes},
          {"feature_noise", feature_noise},
          {"frequency_skew", frequency_skew},
          {"relations_per_region", relations_per_region},
          {"seed", seed}};
}

CorpusConfig CorpusConfig::from_json(const nlohmann::json& j) {
  CorpusConfig c;
  c.train_count = j.at("train_count");
  c.val_count = j.at("val_count");
  c.test_count = j.at("test_count");
  c.regions_per_scene = j.at("regions_per_scene");
  c.turns = j.at("turns");
  c.categories = j.at("categories").get<std::vector<std::string>>();
  c.colors = j.at("colors").get<std::vector<std::string>>();
  c.sizes = j.at("sizes").get<std::vector<std::string>>();
  c.feature_noise = j.at("feature_noise");
  c.frequency_skew = j.at("frequency_skew");
  c.relations_per_region = j.at("relations_per_region");
  c.seed = j.at("seed");
  return c;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + name + "'");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  // splitmix64 finalizer
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string cell_name(double cx, double cy) {
  static const std::array<const char*, 3> rows{"top", "middle", "bottom"};
  static const std::array<const char*, 3> cols{"left", "center", "right"};
  const auto bucket = [](double v) { return static_cast<std::size_t>(std::clamp(v, 0.0, 0.999999) * 3.0); };
  const std::size_t r = bucket(cy), c = bucket(cx);
  if (r == 1 && c == 1) return "center";
  return std::string(rows[r]) + " " + cols[c];
}

Scene generate_scene(const CorpusConfig& config, std::uint64_t id, std::uint64_t seed) {
  config.validate();
  grad::Rng rng(seed);
  auto category_w = zipf_weights(config.categories.size(), config.frequency_skew);
  std::discrete_distribution<std::size_t> pick_category(category_w.begin(), category_w.end());
  auto color_w = zipf_weights(config.colors.size(), config.frequency_skew);
  std::discrete_distribution<std::size_t> pick_color(color_w.begin(), color_w.end());
  std::uniform_int_distribution<std::size_t> pick_size(0, config.sizes.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  const std::size_t n = config.regions_per_scene;
  const std::size_t n_cat = config.categories.size(), n_col = config.colors.size(),
                    n_size = config.sizes.size();

  for (int attempt = 0;; ++attempt) {
    Scene scene;
    scene.id = id;
    scene.seed = seed;
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> used;
    std::vector<std::array<std::size_t, 3>> attrs;
    for (std::size_t i = 0; i < n; ++i) {
      std::array<std::size_t, 3> a{};
      for (int tries = 0; tries < 20; ++tries) {
        a = {pick_category(rng), pick_color(rng), pick_size(rng)};
        if (!used.count({a[0], a[1], a[2]})) break;
      }
      used.insert({a[0], a[1], a[2]});
      attrs.push_back(a);

      const SizeRange range = size_range(a[2], n_size);
      BBox box;
      for (int tries = 0; tries < 50; ++tries) {
        const double side = range.lo + (range.hi - range.lo) * unit(rng);
        box.w = std::min(1.0, side * (0.85 + 0.3 * unit(rng)));
        box.h = std::min(1.0, side * (0.85 + 0.3 * unit(rng)));
        box.x = (1.0 - box.w) * unit(rng);
        box.y = (1.0 - box.h) * unit(rng);
        bool nested = false;
        for (const Region& r : scene.regions) nested = nested || r.bbox.contains(box) || box.contains(r.bbox);
        if (!nested) break;
      }

      Region region;
      region.category = config.categories[a[0]];
      region.color = config.colors[a[1]];
      region.size = config.sizes[a[2]];
      region.bbox = box;
      region.feature.assign(config.feature_dim(), 0.0);
      region.feature[a[0]] = 1.0;
      region.feature[n_cat + a[1]] = 1.0;
      region.feature[n_cat + n_col + a[2]] = 1.0;
      const std::size_t base = n_cat + n_col + n_size;
      region.feature[base + 0] = box.x;
      region.feature[base + 1] = box.y;
      region.feature[base + 2] = box.w;
      region.feature[base + 3] = box.h;
      for (double& v : region.feature) v += config.feature_noise * noise(rng);
      scene.regions.push_back(std::move(region));
    }

    std::set<std::string> seen;
    auto add_caption = [&](std::size_t region, std::string text) {
      if (seen.insert(text).second) scene.captions.push_back({region, std::move(text)});
    };
    for (std::size_t i = 0; i < n; ++i) {
      const Region& r = scene.regions[i];
      add_caption(i, "a " + r.size + " " + r.color + " " + r.category);
      add_caption(i, "a " + r.color + " " + r.category + " in the " +
                         cell_name(r.bbox.center_x(), r.bbox.center_y()));
      std::vector<std::size_t> others;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) others.push_back(j);
      auto dist = [&](std::size_t j) {
        const BBox& b = scene.regions[j].bbox;
        return std::hypot(b.center_x() - r.bbox.center_x(), b.center_y() - r.bbox.center_y());
      };
      std::stable_sort(others.begin(), others.end(), [&](std::size_t p, std::size_t q) { return dist(p) < dist(q); });
      others.resize(std::min(others.size(), config.relations_per_region));
      for (std::size_t j : others) {
        const Region& o = scene.regions[j];
        add_caption(i, "a " + r.category + " " + relation(r.bbox, o.bbox) + " a " + o.color + " " + o.category);
      }
    }
    if (scene.captions.size() >= config.turns) return scene;
    if (attempt > 100) {
      throw std::runtime_error("scene " + std::to_string(id) + ": cannot reach " + std::to_string(config.turns) +
                               " distinct captions with this configuration");
    }
  }
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string color_hex(const std::string& color) {
  static const std::array<std::pair<const char*, const char*>, 8> table{{{"red", "#d62728"},
                                                                         {"green", "#2ca02c"},
                                                                         {"blue", "#1f77b4"},
                                                                         {"yellow", "#f2d21b"},
                                                                         {"purple", "#9467bd"},
                                                                         {"orange", "#ff7f0e"},
                                                                         {"white", "#ffffff"},
                                                                         {"black", "#111111"}}};
  for (const auto& [name, hex] : table)
    if (color == name) return hex;
  return "#777777";
}

std::string polygon(const std::vector<std::pair<double, double>>& unit_points, double x, double y, double w,
                    double h, const std::string& fill) {
  std::string pts;
  for (const auto& [px, py] : unit_points) {
    if (!pts.empty()) pts += ' ';
    pts += fmt(x + px * w) + "," + fmt(y + py * h);
  }
  return "<polygon class=\"region\" points=\"" + pts + "\" fill=\"" + fill + "\"/>";
}

std::vector<std::pair<double, double>> regular(int sides, double rotation, bool star = false) {
  std::vector<std::pair<double, double>> pts;
  const double pi = std::acos(-1.0);
  const int count = star ? sides * 2 : sides;
  for (int i = 0; i < count; ++i) {
    const double radius = star && (i % 2) ? 0.2 : 0.5;
    const double a = rotation + 2 * pi * i / count;
    pts.emplace_back(0.5 + radius * std::cos(a), 0.5 + radius * std::sin(a));
  }
  return pts;
}

std::string shape_element(const Region& r) {
  constexpr double kCanvas = 200.0;
  const double x = r.bbox.x * kCanvas, y = r.bbox.y * kCanvas, w = r.bbox.w * kCanvas, h = r.bbox.h * kCanvas;
  const std::string fill = color_hex(r.color);
  const double pi = std::acos(-1.0);
  const std::string& c = r.category;
  if (c == "circle")
    return "<circle class=\"region\" cx=\"" + fmt(x + w / 2) + "\" cy=\"" + fmt(y + h / 2) + "\" r=\"" +
           fmt(std::min(w, h) / 2) + "\" fill=\"" + fill + "\"/>";
  if (c == "ring")
    return "<circle class=\"region\" cx=\"" + fmt(x + w / 2) + "\" cy=\"" + fmt(y + h / 2) + "\" r=\"" +
           fmt(std::min(w, h) * 0.4) + "\" fill=\"none\" stroke=\"" + fill + "\" stroke-width=\"" +
           fmt(std::min(w, h) * 0.18) + "\"/>";
  if (c == "ellipse")
    return "<ellipse class=\"region\" cx=\"" + fmt(x + w / 2) + "\" cy=\"" + fmt(y + h / 2) + "\" rx=\"" +
           fmt(w / 2) + "\" ry=\"" + fmt(h / 3) + "\" fill=\"" + fill + "\"/>";
  if (c == "square")
    return "<rect class=\"region\" x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(w) + "\" height=\"" +
           fmt(h) + "\" fill=\"" + fill + "\"/>";
  if (c == "heart") {
    const std::string d = "M " + fmt(x + w / 2) + " " + fmt(y + h) + " C " + fmt(x - w * 0.2) + " " +
                          fmt(y + h * 0.45) + " " + fmt(x + w * 0.2) + " " + fmt(y - h * 0.1) + " " +
                          fmt(x + w / 2) + " " + fmt(y + h * 0.3) + " C " + fmt(x + w * 0.8) + " " +
                          fmt(y - h * 0.1) + " " + fmt(x + w * 1.2) + " " + fmt(y + h * 0.45) + " " +
                          fmt(x + w / 2) + " " + fmt(y + h) + " Z";
    return "<path class=\"region\" d=\"" + d + "\" fill=\"" + fill + "\"/>";
  }
  if (c == "triangle") return polygon({{0.5, 0}, {1, 1}, {0, 1}}, x, y, w, h, fill);
  if (c == "diamond") return polygon({{0.5, 0}, {1, 0.5}, {0.5, 1}, {0, 0.5}}, x, y, w, h, fill);
  if (c == "star") return polygon(regular(5, -pi / 2, true), x, y, w, h, fill);
  if (c == "hexagon") return polygon(regular(6, 0), x, y, w, h, fill);
  if (c == "pentagon") return polygon(regular(5, -pi / 2), x, y, w, h, fill);
  if (c == "cross")
    return polygon({{0.35, 0}, {0.65, 0}, {0.65, 0.35}, {1, 0.35}, {1, 0.65}, {0.65, 0.65}, {0.65, 1}, {0.35, 1},
                    {0.35, 0.65}, {0, 0.65}, {0, 0.35}, {0.35, 0.35}},
                   x, y, w, h, fill);
  if (c == "arrow")
    return polygon({{0, 0.35}, {0.6, 0.35}, {0.6, 0.1}, {1, 0.5}, {0.6, 0.9}, {0.6, 0.65}, {0, 0.65}}, x, y, w, h,
                   fill);
  return "<rect class=\"region\" x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(w) + "\" height=\"" +
         fmt(h) + "\" fill=\"" + fill + "\" stroke=\"#333333\" stroke-dasharray=\"4 2\"/>";
}

}  // namespace

std::string render_svg(const Scene& scene) {
  std::string out =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"200\" height=\"200\" viewBox=\"0 0 200 200\">\n"
      "<rect class=\"background\" x=\"0\" y=\"0\" width=\"200\" height=\"200\" fill=\"#9a9a9a\"/>\n";
  for (const Region& r : scene.regions) out += shape_element(r) + "\n";
  out += "</svg>\n";
  return out;
}

nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json regions = nlohmann::json::array();
  for (const Region& r : scene.regions) {
    regions.push_back({{"category", r.category},
                       {"color", r.color},
                       {"size", r.size},
                       {"bbox", {r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h}},
                       {"feature", r.feature}});
  }
  nlohmann::json captions = nlohmann::json::array();
  for (const Caption& c : scene.captions) captions.push_back({{"region", c.region}, {"text", c.text}});
  return {{"id", scene.id}, {"seed", scene.seed}, {"regions", regions}, {"captions", captions}};
}

Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.id = j.at("id");
  s.seed = j.at("seed");
  for (const auto& r : j.at("regions")) {
    Region region;
    // Attribute fields are optional so externally extracted features load too.
    region.category = r.value("category", "");
    region.color = r.value("color", "");
    region.size = r.value("size", "");
    if (r.contains("bbox")) {
      auto b = r.at("bbox").get<std::vector<double>>();
      if (b.size() != 4) throw std::invalid_argument("bbox must have 4 entries");
      region.bbox = {b[0], b[1], b[2], b[3]};
    }
    region.feature = r.at("feature").get<std::vector<double>>();
    s.regions.push_back(std::move(region));
  }
  for (const auto& c : j.at("captions")) {
    Caption caption{c.at("region").get<std::size_t>(), c.at("text").get<std::string>()};
    if (caption.region >= s.regions.size()) throw std::invalid_argument("caption references a missing region");
    s.captions.push_back(std::move(caption));
  }
  return s;
}

void make_corpus(const CorpusConfig& config, const std::filesystem::path& dir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create corpus directory " + dir.string() + ": " + ec.message());
  const std::array<std::pair<Split, std::size_t>, 3> splits{
      {{Split::train, config.train_count}, {Split::val, config.val_count}, {Split::test, config.test_count}}};
  std::uint64_t next_id = 0;
  for (const auto& [split, count] : splits) {
    const auto path = dir / (std::string(split_name(split)) + ".jsonl");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (std::size_t i = 0; i < count; ++i, ++next_id) {
      out << scene_to_json(generate_scene(config, next_id, derive_seed(config.seed, next_id))).dump() << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  const auto manifest_path = dir / "manifest.json";
  std::ofstream manifest(manifest_path, std::ios::binary | std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot open " + manifest_path.string() + " for writing");
  nlohmann::json m{{"config", config.to_json()},
                   {"seed", config.seed},
                   {"counts", {config.train_count, config.val_count, config.test_count}}};
  manifest << m.dump(2) << '\n';
  if (!manifest) throw std::runtime_error("write failed for " + manifest_path.string());
}

std::vector<Scene> load_split(const std::filesystem::path& dir, Split split) {
  const auto path = dir / (std::string(split_name(split)) + ".jsonl");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Scene> scenes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      scenes.push_back(scene_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const Scene& s = scenes.back();
    const Scene& first = scenes.front();
    if (s.regions.empty() || s.regions.size() != first.regions.size() ||
        s.regions[0].feature.size() != first.regions[0].feature.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": region count and feature length must be uniform across the corpus");
    }
    for (const Region& r : s.regions) {
      if (r.feature.size() != first.regions[0].feature.size()) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": ragged region features");
      }
    }
  }
  return scenes;
}

CorpusConfig load_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return CorpusConfig::from_json(nlohmann::json::parse(in).at("config"));
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::vector<std::size_t> episode_indices(std::size_t n, std::uint64_t scene_seed, std::size_t turns,
                                         EpisodeMode mode, grad::Rng& rng) {
  if (turns > n) {
    throw std::invalid_argument("scene has " + std::to_string(n) + " captions, episode needs " +
                                std::to_string(turns));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (mode == EpisodeMode::train) {
    for (std::size_t i = 0; i < turns; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(order[i], order[pick(rng)]);
    }
  } else {
    grad::Rng fixed(derive_seed(scene_seed, 0xE7A1));
    std::shuffle(order.begin(), order.end(), fixed);
  }
  order.resize(turns);
  return order;
}

std::vector<std::string> sample_episode(const Scene& scene, std::size_t turns, EpisodeMode mode, grad::Rng& rng) {
  std::vector<std::string> out;
  for (std::size_t i : episode_indices(scene.captions.size(), scene.seed, turns, mode, rng))
    out.push_back(scene.captions[i].text);
  return out;
}

grad::Tensor feature_matrix(const Scene& scene) {
  const std::size_t n = scene.regions.size();
  const std::size_t f = n ? scene.regions[0].feature.size() : 0;
  grad::Tensor out({n, f});
  for (std::size_t i = 0; i < n; ++i) {
    if (scene.regions[i].feature.size() != f) throw grad::DimensionError("ragged region features");
    std::copy(scene.regions[i].feature.begin(), scene.regions[i].feature.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace dd::scene
