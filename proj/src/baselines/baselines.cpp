#include "drilldown/baselines.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace dd::base {

using grad::Tape;

void init_context_encoder(ParamStore& store, std::size_t dim, grad::Rng& rng) {
  enc::init_gru(store, kContextPrefix, dim, dim, rng);
}

std::vector<double> hre_encode(std::span<const std::vector<double>> queries, const ParamStore& store) {
  if (queries.empty()) throw std::invalid_argument("hre_encode needs at least one query");
  Tape tape(Tape::no_grad);
  auto psi = enc::bind_gru(tape, store, kContextPrefix);
  Var h = tape.constant(Tensor({1, queries[0].size()}));
  for (const auto& q : queries) h = enc::gru_step(psi, tape.constant(Tensor::row_vector(q)), h);
  return h.value().values();
}

std::vector<TokenId> concat_turns(std::span<const std::vector<TokenId>> turns) {
  std::vector<TokenId> out;
  for (const auto& t : turns) out.insert(out.end(), t.begin(), t.end());
  return out;
}

std::vector<double> rre_encode(std::span<const std::vector<TokenId>> turns, const ParamStore& store) {
  const auto ids = concat_turns(turns);
  if (ids.empty()) throw std::invalid_argument("rre_encode: no tokens in any turn");
  Tape tape(Tape::no_grad);
  return enc::encode_sentence(enc::bind_sentence_encoder(tape, store), ids).value().values();
}

std::vector<Var> rre_turn_states(const enc::SentenceEncoderVars& enc,
                                 const std::vector<std::vector<std::vector<TokenId>>>& turns) {
  if (turns.empty()) throw std::invalid_argument("rre_turn_states: empty batch");
  const std::size_t t_count = turns[0].size();
  std::vector<std::vector<TokenId>> flat;
  std::vector<std::vector<std::size_t>> ends(t_count);
  for (const auto& example : turns) {
    if (example.size() != t_count) throw std::invalid_argument("rre_turn_states: ragged turn count");
    std::size_t length = 0;
    for (std::size_t t = 0; t < t_count; ++t) {
      if (example[t].empty()) throw std::invalid_argument("rre_turn_states: empty turn");
      length += example[t].size();
      ends[t].push_back(length - 1);
    }
    flat.push_back(concat_turns(example));
  }
  const auto steps = enc::encode_batch_steps(enc, flat);
  std::vector<Var> out;
  for (std::size_t t = 0; t < t_count; ++t) out.push_back(grad::pick_rows(steps, ends[t]));
  return out;
}

Tensor global_image_features(const Tensor& raw) {
  if (raw.rows() == 0) throw grad::DimensionError("global_image_features: no regions");
  Tensor mean({1, raw.cols()});
  for (std::size_t r = 0; r < raw.rows(); ++r)
    for (std::size_t c = 0; c < raw.cols(); ++c) mean[c] += raw(r, c);
  return grad::scale(mean, 1.0 / static_cast<double>(raw.rows()));
}

std::vector<sim::RankedImage> rank_fusion(std::span<const std::vector<sim::RankedImage>> per_turn) {
  if (per_turn.empty()) throw std::invalid_argument("rank_fusion needs at least one turn");
  std::map<sim::ImageId, double> total;
  for (std::size_t i = 0; i < per_turn[0].size(); ++i) total[per_turn[0][i].id] = 0.0;
  for (const auto& ranking : per_turn) {
    if (ranking.size() != total.size()) throw std::invalid_argument("rank_fusion: turns rank different corpora");
    for (std::size_t i = 0; i < ranking.size(); ++i) {
      auto it = total.find(ranking[i].id);
      if (it == total.end()) throw std::invalid_argument("rank_fusion: turns rank different corpora");
      it->second += static_cast<double>(i + 1);
    }
  }
  std::vector<sim::RankedImage> fused;
  for (const auto& [id, sum] : total) fused.push_back({id, -sum / static_cast<double>(per_turn.size())});
  std::stable_sort(fused.begin(), fused.end(),
                   [](const sim::RankedImage& a, const sim::RankedImage& b) { return a.score > b.score; });
  return fused;
}

}  // namespace dd::base
