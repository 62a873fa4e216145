#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "drilldown/statebank.hpp"
#include "drilldown/tape.hpp"

namespace dd::sim {

using grad::Tensor;
using grad::Var;

struct SimilarityConfig {
  double lambda = 9.0;             // attention sharpness, exp(lambda * cos)
  bool literal_inverse_n = false;  // extra 1/N on each state-image score
};

double pair_cosine(std::span<const double> x, std::span<const double> v);

// Softmax over the cosines between x and every row of V.
std::vector<double> region_attention(std::span<const double> x, const Tensor& V, double lambda);

double state_image_similarity(std::span<const double> x, const Tensor& V, const SimilarityConfig& config);

// Mean over non-empty slots, 0 when every slot is empty.
double set_image_similarity(const state::StateSet& X, const Tensor& V, const SimilarityConfig& config);

using ImageId = std::int64_t;

class RetrievalIndex {
 public:
  RetrievalIndex() = default;
  // One projected region matrix per image, all with the same row count.
  RetrievalIndex(std::vector<ImageId> ids, std::vector<Tensor> regions);

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t regions_per_image() const { return regions_per_image_; }
  std::size_t dim() const { return normalized_.cols(); }
  const std::vector<ImageId>& ids() const { return ids_; }
  const Tensor& regions(std::size_t i) const { return regions_.at(i); }
  std::size_t position(ImageId id) const;

  // s(X, I) for every image, in index order.
  std::vector<double> score(const state::StateSet& X, const SimilarityConfig& config) const;

 private:
  std::vector<ImageId> ids_;
  std::vector<Tensor> regions_;
  Tensor normalized_{{1, 1}};  // every image's rows stacked, unit length
  std::size_t regions_per_image_ = 0;
};

struct RankedImage {
  ImageId id;
  double score;
};

// Descending score, ascending id on ties.
std::vector<RankedImage> rank_scores(std::span<const ImageId> ids, std::span<const double> scores);

// 1-based position of target; throws std::out_of_range if absent.
std::size_t rank_of(std::span<const RankedImage> ranking, ImageId target);

std::vector<RankedImage> rank_corpus(const state::StateSet& X, const RetrievalIndex& index,
                                     const SimilarityConfig& config);

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k);

struct TurnMetrics {
  std::size_t turn = 0;
  double r1 = 0, r5 = 0, r10 = 0;
  double mean_rank = 0;
};

TurnMetrics turn_metrics(std::size_t turn, std::span<const std::size_t> ranks);

// Header turn,r1,r5,r10,mean_rank then one row per turn.
void write_metrics_csv(std::ostream& out, std::span<const TurnMetrics> metrics);

// Differentiable s(X_a, I_b) for every query a and image b. slots[j] holds
// slot j of every query (Q x D), empty[a][j] marks unused slots, and regions
// stacks the projected regions of every image ((K * n) x D). Returns Q x K.
Var batch_similarity(std::span<const Var> slots, const std::vector<std::vector<bool>>& empty, Var regions,
                     std::size_t n, const SimilarityConfig& config);

}  // namespace dd::sim
