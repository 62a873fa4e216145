#include "drilldown/simrank.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>

namespace dd::sim {

using grad::kNormEps;

double pair_cosine(std::span<const double> x, std::span<const double> v) {
  if (x.size() != v.size()) throw grad::DimensionError("pair_cosine: length mismatch");
  const double denom = std::max(grad::l2_norm(x), kNormEps) * std::max(grad::l2_norm(v), kNormEps);
  return grad::dot(x, v) / denom;
}

namespace {

std::vector<double> cosines(std::span<const double> x, const Tensor& V) {
  if (V.rows() == 0) throw grad::DimensionError("image has no regions");
  std::vector<double> c(V.rows());
  for (std::size_t k = 0; k < V.rows(); ++k) c[k] = pair_cosine(x, V.row(k));
  return c;
}

double attend(std::span<const double> cos, double lambda, bool literal_inverse_n) {
  const auto alpha = grad::softmax_sharp(cos, lambda);
  double s = 0.0;
  for (std::size_t k = 0; k < cos.size(); ++k) s += alpha[k] * cos[k];
  return literal_inverse_n ? s / static_cast<double>(cos.size()) : s;
}

}  // namespace

std::vector<double> region_attention(std::span<const double> x, const Tensor& V, double lambda) {
  return grad::softmax_sharp(cosines(x, V), lambda);
}

double state_image_similarity(std::span<const double> x, const Tensor& V, const SimilarityConfig& config) {
  return attend(cosines(x, V), config.lambda, config.literal_inverse_n);
}

double set_image_similarity(const state::StateSet& X, const Tensor& V, const SimilarityConfig& config) {
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t j = 0; j < X.slot_count(); ++j) {
    if (X.empty[j]) continue;
    total += state_image_similarity(X.slots.row(j), V, config);
    ++used;
  }
  return used == 0 ? 0.0 : total / static_cast<double>(used);
}

RetrievalIndex::RetrievalIndex(std::vector<ImageId> ids, std::vector<Tensor> regions)
    : ids_(std::move(ids)), regions_(std::move(regions)) {
  if (ids_.size() != regions_.size()) throw std::invalid_argument("index: one region matrix per id required");
  if (ids_.empty()) return;
  regions_per_image_ = regions_[0].rows();
  if (regions_per_image_ == 0) throw grad::DimensionError("index: image has no regions");
  for (std::size_t i = 0; i < regions_.size(); ++i) {
    if (!regions_[i].same_shape(regions_[0])) {
      throw grad::DimensionError("index: image " + std::to_string(ids_[i]) + " has shape " +
                                 regions_[i].shape_string() + ", expected " + regions_[0].shape_string());
    }
  }
  normalized_ = grad::l2_normalize_rows(grad::concat_rows(regions_), kNormEps);
}

std::size_t RetrievalIndex::position(ImageId id) const {
  auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) throw std::out_of_range("image " + std::to_string(id) + " is not in the index");
  return static_cast<std::size_t>(it - ids_.begin());
}

std::vector<double> RetrievalIndex::score(const state::StateSet& X, const SimilarityConfig& config) const {
  std::vector<double> out(ids_.size(), 0.0);
  std::vector<Tensor> filled;
  for (std::size_t j = 0; j < X.slot_count(); ++j)
    if (!X.empty[j]) filled.push_back(grad::slice_rows(X.slots, j, 1));
  if (filled.empty() || ids_.empty()) return out;
  if (X.dim() != dim()) throw grad::DimensionError("index: state width does not match region width");

  const Tensor states = grad::l2_normalize_rows(grad::concat_rows(filled), kNormEps);
  const Tensor cos = grad::matmul_bt(normalized_, states);  // (images * n) x filled
  const std::size_t n = regions_per_image_;
  std::vector<double> column(n);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < filled.size(); ++j) {
      for (std::size_t k = 0; k < n; ++k) column[k] = cos(i * n + k, j);
      total += attend(column, config.lambda, config.literal_inverse_n);
    }
    out[i] = total / static_cast<double>(filled.size());
  }
  return out;
}

std::vector<RankedImage> rank_scores(std::span<const ImageId> ids, std::span<const double> scores) {
  if (ids.size() != scores.size()) throw std::invalid_argument("rank_scores: one score per id required");
  std::vector<RankedImage> ranked(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ranked[i] = {ids[i], scores[i]};
  std::sort(ranked.begin(), ranked.end(), [](const RankedImage& a, const RankedImage& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return ranked;
}

std::size_t rank_of(std::span<const RankedImage> ranking, ImageId target) {
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (ranking[i].id == target) return i + 1;
  throw std::out_of_range("target image " + std::to_string(target) + " is not in the ranking");
}

std::vector<RankedImage> rank_corpus(const state::StateSet& X, const RetrievalIndex& index,
                                     const SimilarityConfig& config) {
  if (index.empty()) throw std::invalid_argument("cannot rank an empty index");
  const auto scores = index.score(X, config);
  return rank_scores(index.ids(), scores);
}

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (k < 1) throw std::invalid_argument("recall cutoff must be at least 1");
  if (ranks.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r : ranks) {
    if (r < 1) throw std::invalid_argument("ranks are 1-based");
    if (r <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

TurnMetrics turn_metrics(std::size_t turn, std::span<const std::size_t> ranks) {
  TurnMetrics m;
  m.turn = turn;
  m.r1 = recall_at_k(ranks, 1);
  m.r5 = recall_at_k(ranks, 5);
  m.r10 = recall_at_k(ranks, 10);
  double total = 0.0;
  for (std::size_t r : ranks) total += static_cast<double>(r);
  m.mean_rank = ranks.empty() ? 0.0 : total / static_cast<double>(ranks.size());
  return m;
}

void write_metrics_csv(std::ostream& out, std::span<const TurnMetrics> metrics) {
  out << "turn,r1,r5,r10,mean_rank\n";
  char line[160];
  for (const auto& m : metrics) {
    std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6f,%.4f\n", m.turn, m.r1, m.r5, m.r10, m.mean_rank);
    out << line;
  }
}

Var batch_similarity(std::span<const Var> slots, const std::vector<std::vector<bool>>& empty, Var regions,
                     std::size_t n, const SimilarityConfig& config) {
  if (slots.empty()) throw std::invalid_argument("batch_similarity: no slots");
  const std::size_t m = slots.size();
  const std::size_t q = slots[0].value().rows();
  if (empty.size() != q) throw std::invalid_argument("batch_similarity: empty mask rows mismatch");
  if (n == 0 || regions.value().rows() % n != 0) throw grad::DimensionError("batch_similarity: bad region count");
  const std::size_t images = regions.value().rows() / n;
  grad::Tape& tape = *regions.tape;

  Var states = grad::l2_normalize_rows(grad::concat_rows(slots), kNormEps);  // rows (j, a)
  Var keys = grad::l2_normalize_rows(regions, kNormEps);                      // rows (i, k)
  Var cos = grad::reshape(grad::matmul_bt(states, keys), m * q * images, n);
  Var alpha = grad::softmax_rows(cos, config.lambda);
  Var per_slot = grad::reshape(grad::sum_rows(grad::mul(alpha, cos)), m * q, images);
  if (config.literal_inverse_n) per_slot = grad::scale(per_slot, 1.0 / static_cast<double>(n));

  Tensor mean({q, m * q});
  for (std::size_t a = 0; a < q; ++a) {
    if (empty[a].size() != m) throw std::invalid_argument("batch_similarity: empty mask width mismatch");
    const auto used = static_cast<std::size_t>(std::count(empty[a].begin(), empty[a].end(), false));
    for (std::size_t j = 0; j < m; ++j)
      if (!empty[a][j]) mean(a, j * q + a) = 1.0 / static_cast<double>(used);
  }
  return grad::matmul(tape.constant(std::move(mean)), per_slot);
}

}  // namespace dd::sim
