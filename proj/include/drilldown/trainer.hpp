#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "drilldown/optim.hpp"
#include "drilldown/scenegen.hpp"
#include "drilldown/simrank.hpp"
#include "drilldown/statebank.hpp"
#include "drilldown/textproc.hpp"
#include "json.hpp"

namespace dd::train {

using grad::ParamStore;
using grad::Rng;
using grad::Tape;
using grad::Tensor;
using grad::Var;
using text::TokenId;

enum class ModelKind { drilldown, hre, rhre, rre, rankfusion };
const char* model_name(ModelKind kind);
ModelKind parse_model(const std::string& name);

struct TrainConfig {
  ModelKind model = ModelKind::drilldown;
  std::size_t slots = 3;
  std::size_t state_dim = 48;
  std::size_t embed_dim = 32;
  std::size_t turns = 5;
  double margin = 0.2;
  double lambda = 9.0;
  double gamma = 1.0;
  double mu = 0.1;
  double learning_rate = 2e-4;
  double clip = 10.0;
  std::size_t batch_size = 32;
  std::size_t pretrain_epochs = 60;
  std::size_t joint_epochs = 30;
  std::uint64_t seed = 1;
  bool literal_inverse_n = false;
  std::size_t min_count = 1;

  // Single-state models always run with one slot.
  std::size_t effective_slots() const { return model == ModelKind::drilldown ? slots : 1; }
  sim::SimilarityConfig similarity() const { return {lambda, literal_inverse_n}; }
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::string phase;  // "pretrain" or "joint"
  std::size_t epoch = 0;
  double train_loss = 0;
  double policy_loss = 0;
  double val_metric = 0;
};

struct Checkpoint {
  TrainConfig config;
  text::Vocab vocab;
  ParamStore params;
  std::string phase = "pretrain";  // phase of the selected epoch
  std::size_t epoch = 0;
  std::vector<EpochRecord> history;
};

inline constexpr int kCheckpointFormat = 1;

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
nlohmann::json checkpoint_to_json(const Checkpoint& cp);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

// Fresh parameters for the configured model kind.
ParamStore init_model(const TrainConfig& config, std::size_t vocab_size, std::size_t feature_dim, Rng& rng);

// Scenes with pre-tokenized captions.
struct EncodedScene {
  sim::ImageId id = 0;
  std::uint64_t seed = 0;
  Tensor raw{{1, 1}};
  std::vector<std::vector<TokenId>> captions;
};
using Dataset = std::vector<EncodedScene>;
Dataset encode_scenes(const std::vector<scene::Scene>& scenes, const text::Vocab& vocab);
text::Vocab build_vocab(const std::vector<scene::Scene>& train, std::size_t min_count);

// Per example a target image and its turn-by-turn queries.
struct Batch {
  std::vector<std::vector<std::vector<TokenId>>> queries;  // [example][turn]
  std::vector<Tensor> raw;                                 // N x F per example
};

// Mean over examples of the hardest-negative hinge in both directions.
// scores(a, b) = s(X_a, I_b); the diagonal holds positive pairs.
Var triplet_loss(Var scores, double margin);
double triplet_loss_value(const Tensor& scores, double margin);

// Sum_i gamma^i rewards[i].
double discounted_return(std::span<const double> rewards, double gamma);

// Look-ahead value of writing remaining[0] into each slot of X, following one
// policy-sampled trajectory over the rest of remaining. Rewards are s(X, I).
std::vector<double> estimate_q(const state::StateSet& X, std::span<const std::vector<double>> remaining,
                               const Tensor& target_regions, const ParamStore& params, const TrainConfig& config,
                               Rng& rng);

// Argmax with ties to the lowest index.
std::size_t best_action(std::span<const double> q);

// -log pi(k_star | X, q) for a bank without empty slots.
double policy_loss(const state::StateSet& X, std::span<const double> q, std::size_t k_star, const ParamStore& params);

enum class SlotPolicy { fixed, learned };

// One recorded decision among full slots, for the policy loss.
struct Decision {
  std::size_t example = 0;
  std::size_t turn = 0;  // 1-based turn whose query was written
  state::StateSet before;
};

struct ForwardResult {
  Var loss;                       // mean over turns of the triplet loss
  std::vector<Var> turn_scores;   // B x B per turn
  std::vector<Tensor> queries;    // per turn B x D sentence vectors (values)
  Tensor targets{{1, 1}};          // projected target regions, stacked
  std::vector<std::vector<std::size_t>> actions;  // [turn][example]
  std::vector<Decision> decisions;
};

// Builds the episode loss for a batch on the tape. Learned-policy batches
// sample actions among full slots from the current policy.
ForwardResult forward_batch(Tape& tape, const ParamStore& params, const TrainConfig& config, const Batch& batch,
                            SlotPolicy policy, Rng& rng);

// Sum over decisions of -log pi(k*), inputs detached.
Var policy_loss_batch(Tape& tape, const ParamStore& params, const ForwardResult& forward,
                      const std::vector<std::size_t>& k_star);

struct StepStats {
  double loss = 0;
  double policy_loss = 0;
  std::size_t decisions = 0;
  double grad_norm = 0;
};

// One optimizer update on the batch.
StepStats train_step(ParamStore& params, grad::AdamState& adam, const TrainConfig& config, const Batch& batch,
                     SlotPolicy policy, Rng& rng);

// Inference over an index built from a checkpoint.
class RetrievalModel {
 public:
  explicit RetrievalModel(Checkpoint cp);

  const Checkpoint& checkpoint() const { return cp_; }
  const TrainConfig& config() const { return cp_.config; }
  const ParamStore& params() const { return cp_.params; }
  bool learned_policy() const { return cp_.phase == "joint"; }

  sim::RetrievalIndex build_index(const Dataset& scenes) const;
  std::vector<double> encode_query(std::span<const TokenId> ids) const;

 private:
  Checkpoint cp_;
};

// Greedy, deterministic multi-turn retrieval against one index.
class EpisodeRunner {
 public:
  EpisodeRunner(const RetrievalModel& model, const sim::RetrievalIndex& index);

  std::vector<sim::RankedImage> observe(std::span<const TokenId> ids);
  std::size_t turn() const { return turn_; }
  const state::StateSet& states() const { return states_; }
  // s(X, I) for the current state and index entry i.
  double reward(std::size_t position) const;

 private:
  const RetrievalModel* model_;
  const sim::RetrievalIndex* index_;
  state::StateSet states_;
  std::vector<std::vector<TokenId>> history_;
  std::vector<std::vector<sim::RankedImage>> per_turn_;
  std::size_t turn_ = 0;
};

struct EvalResult {
  std::vector<sim::TurnMetrics> turns;
  double mean_reward = 0;  // mean over episodes of the summed per-turn s(X, I_target)
  std::vector<std::vector<std::size_t>> ranks;  // [turn][episode]

  double recall10_sum() const;
  double final_recall10() const { return turns.empty() ? 0.0 : turns.back().r10; }
};

// Episodes use the scene-fixed caption order, or seeded draws when rng is set.
EvalResult evaluate(const RetrievalModel& model, const Dataset& scenes, std::size_t turns, Rng* rng = nullptr);

using EpochCallback = std::function<void(const EpochRecord&)>;

Checkpoint pretrain(const TrainConfig& config, const text::Vocab& vocab, const Dataset& train, const Dataset& val,
                    const EpochCallback& on_epoch = {});

// Continues a pretrained drilldown checkpoint with the learned policy.
Checkpoint joint_train(const Checkpoint& pretrained, const Dataset& train, const Dataset& val,
                       const EpochCallback& on_epoch = {});

}  // namespace dd::train
