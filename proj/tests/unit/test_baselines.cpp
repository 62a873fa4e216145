#include <algorithm>
#include <vector>

#include "doctest.h"
#include "drilldown/baselines.hpp"
#include "drilldown/trainer.hpp"
#include "test_support.hpp"

using namespace dd;
using namespace dd::base;
using dd::testing::random_tensor;
using grad::Rng;
using grad::Tensor;

namespace {

std::vector<std::vector<double>> random_queries(std::size_t count, std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_tensor(1, d, rng).values());
  return out;
}

std::vector<sim::RankedImage> ranking(std::initializer_list<sim::ImageId> ids) {
  std::vector<sim::RankedImage> out;
  double score = 1.0;
  for (auto id : ids) out.push_back({id, score -= 0.1});
  return out;
}

}  // namespace

TEST_CASE("hre_encode folds the context cell") {
  ParamStore store;
  Rng rng(1);
  init_context_encoder(store, 4, rng);
  const auto q = random_queries(3, 4, rng);

  grad::Tape tape(grad::Tape::no_grad);
  auto psi = enc::bind_gru(tape, store, kContextPrefix);
  auto first = enc::gru_step(psi, tape.constant(Tensor::row_vector(q[0])), tape.constant(Tensor({1, 4})));
  CHECK(hre_encode(std::span(q).first(1), store) == first.value().values());
  CHECK(hre_encode(q, store) == hre_encode(q, store));

  // Same recurrence as a one-slot state bank whose fusion cell is psi.
  ParamStore shared;
  for (const auto& [name, t] : store.entries()) shared.set("fuse" + name.substr(kContextPrefix.size()), t);
  Rng any(0);
  auto episode = state::run_episode(q, state::EpisodePolicy::greedy, shared, 1, any);
  CHECK(episode.states.back().slots.values() == hre_encode(q, store));
  CHECK_THROWS(hre_encode(std::span<const std::vector<double>>{}, store));
}

TEST_CASE("rre_encode runs one GRU over the concatenated turns") {
  ParamStore store;
  Rng rng(2);
  enc::init_sentence_encoder(store, 10, 3, 4, rng);
  const std::vector<std::vector<TokenId>> turns = {{2, 3}, {4, 5, 6}, {7}};

  grad::Tape tape(grad::Tape::no_grad);
  auto single = enc::encode_sentence(enc::bind_sentence_encoder(tape, store), turns[0]).value().values();
  CHECK(rre_encode(std::span(turns).first(1), store) == single);
  CHECK(concat_turns(turns).size() == 6);
  CHECK(concat_turns(turns) == std::vector<TokenId>{2, 3, 4, 5, 6, 7});

  const std::vector<std::vector<TokenId>> swapped = {turns[1], turns[0], turns[2]};
  CHECK(rre_encode(turns, store) != rre_encode(swapped, store));
  CHECK_THROWS(rre_encode(std::vector<std::vector<TokenId>>{{}, {}}, store));

  const std::vector<std::vector<std::vector<TokenId>>> batch = {turns, swapped, {{8}, {9, 2}, {3, 3, 3}}};
  auto states = rre_turn_states(enc::bind_sentence_encoder(tape, store), batch);
  REQUIRE(states.size() == 3);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t t = 1; t <= 3; ++t) {
      auto expected = rre_encode(std::span(batch[b]).first(t), store);
      for (std::size_t j = 0; j < 4; ++j) CHECK(states[t - 1].value()(b, j) == doctest::Approx(expected[j]).epsilon(1e-14));
    }
  }
}

TEST_CASE("global image features") {
  Tensor raw = Tensor::matrix(2, 3, {1, 2, 3, 3, 4, 5});
  CHECK(global_image_features(raw) == Tensor::matrix(1, 3, {2, 3, 4}));
}

TEST_CASE("rank fusion examples") {
  // image 9: rank 3 then 5
  const std::vector<std::vector<sim::RankedImage>> two = {ranking({1, 2, 9, 4, 5}), ranking({1, 2, 4, 5, 9})};
  auto fused = rank_fusion(two);
  auto nine = std::find_if(fused.begin(), fused.end(), [](const auto& r) { return r.id == 9; });
  REQUIRE(nine != fused.end());
  CHECK(-nine->score == doctest::Approx(4.0));
  CHECK(fused.front().id == 1);

  const std::vector<std::vector<sim::RankedImage>> one = {ranking({3, 1, 2})};
  auto same = rank_fusion(one);
  CHECK(same[0].id == 3);
  CHECK(same[1].id == 1);
  CHECK(same[2].id == 2);

  // ties on mean rank resolve by id
  const std::vector<std::vector<sim::RankedImage>> tied = {ranking({5, 2}), ranking({2, 5})};
  CHECK(rank_fusion(tied)[0].id == 2);

  const std::vector<std::vector<sim::RankedImage>> bad = {ranking({1, 2}), ranking({1, 3})};
  CHECK_THROWS(rank_fusion(bad));
  const std::vector<std::vector<sim::RankedImage>> short_turn = {ranking({1, 2}), ranking({1})};
  CHECK_THROWS(rank_fusion(short_turn));
}

TEST_CASE("one-slot drilldown and R-HRE rank identically with shared parameters") {
  using namespace dd::train;
  Rng rng(7);
  TrainConfig cfg;
  cfg.model = ModelKind::rhre;
  cfg.state_dim = 6;
  cfg.embed_dim = 4;
  cfg.turns = 3;
  Checkpoint rhre;
  rhre.config = cfg;
  rhre.params = init_model(cfg, 12, 5, rng);
  Checkpoint drill = rhre;
  drill.config.model = ModelKind::drilldown;
  drill.config.slots = 1;
  drill.params = grad::ParamStore();
  for (const auto& [name, t] : rhre.params.entries()) {
    const bool ctx = name.rfind(kContextPrefix + ".", 0) == 0;
    drill.params.set(ctx ? "fuse" + name.substr(kContextPrefix.size()) : name, t);
  }
  Rng prng(8);
  state::init_policy(drill.params, 6, prng);

  Dataset scenes;
  for (int i = 0; i < 15; ++i) {
    EncodedScene s;
    s.id = i;
    s.seed = 100 + i;
    s.raw = random_tensor(4, 5, rng);
    for (int c = 0; c < 3; ++c) s.captions.push_back({static_cast<TokenId>(2 + (i + c) % 10), 3, 4});
    scenes.push_back(s);
  }
  for (bool joint : {false, true}) {
    drill.phase = joint ? "joint" : "pretrain";
    RetrievalModel a(drill), b(rhre);
    auto ia = a.build_index(scenes);
    auto ib = b.build_index(scenes);
    EpisodeRunner ra(a, ia), rb(b, ib);
    for (int t = 0; t < 3; ++t) {
      auto la = ra.observe(scenes[2].captions[t]);
      auto lb = rb.observe(scenes[2].captions[t]);
      for (std::size_t i = 0; i < la.size(); ++i) {
        CHECK(la[i].id == lb[i].id);
        CHECK(std::abs(la[i].score - lb[i].score) < 1e-12);
      }
    }
  }
}
