#pragma once

#include <span>
#include <string>
#include <vector>

#include "drilldown/encoder.hpp"
#include "drilldown/simrank.hpp"

// Comparison encoders: a hierarchical context GRU over sentence vectors
// (HRE, R-HRE), one flat GRU over the concatenated turns (R-RE), and
// per-turn rank averaging (R-RankFusion).
namespace dd::base {

using grad::ParamStore;
using grad::Tensor;
using grad::Var;
using text::TokenId;

inline const std::string kContextPrefix = "ctx";

// ctx.* GRU from D to D.
void init_context_encoder(ParamStore& store, std::size_t dim, grad::Rng& rng);

// Folds the context GRU over q^1..q^t from a zero state.
std::vector<double> hre_encode(std::span<const std::vector<double>> queries, const ParamStore& store);

// Concatenated tokens of every turn, in order, without separators.
std::vector<TokenId> concat_turns(std::span<const std::vector<TokenId>> turns);

// Last hidden state of the sentence encoder run over concat_turns(turns).
std::vector<double> rre_encode(std::span<const std::vector<TokenId>> turns, const ParamStore& store);

// turns[b][t] holds example b's tokens for turn t. Entry t of the result is
// the B x D encoder state right after turn t's last token.
std::vector<Var> rre_turn_states(const enc::SentenceEncoderVars& enc,
                                 const std::vector<std::vector<std::vector<TokenId>>>& turns);

// Mean of the raw region rows (1 x F), the input to the global image vector.
Tensor global_image_features(const Tensor& raw);

// Averages each image's per-turn rank; ascending mean, ties by id. The
// returned score is the negated mean rank.
std::vector<sim::RankedImage> rank_fusion(std::span<const std::vector<sim::RankedImage>> per_turn);

}  // namespace dd::base
