#include "drilldown/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "drilldown/baselines.hpp"
#include "drilldown/encoder.hpp"

namespace dd::train {

using nlohmann::json;
using state::StateSet;

namespace {

constexpr std::pair<ModelKind, const char*> kModelNames[] = {{ModelKind::drilldown, "drilldown"},
                                                             {ModelKind::hre, "hre"},
                                                             {ModelKind::rhre, "rhre"},
                                                             {ModelKind::rre, "rre"},
                                                             {ModelKind::rankfusion, "rankfusion"}};

const std::string& fusion_prefix(ModelKind kind) {
  static const std::string fuse = "fuse";
  return kind == ModelKind::drilldown ? fuse : base::kContextPrefix;
}

bool uses_bank(ModelKind kind) {
  return kind == ModelKind::drilldown || kind == ModelKind::rhre || kind == ModelKind::hre;
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  auto row = t.row(r);
  return {row.begin(), row.end()};
}

}  // namespace

const char* model_name(ModelKind kind) {
  for (auto [k, name] : kModelNames)
    if (k == kind) return name;
  throw std::invalid_argument("unknown model kind");
}

ModelKind parse_model(const std::string& name) {
  for (auto [k, n] : kModelNames)
    if (name == n) return k;
  throw std::invalid_argument("unknown model '" + name + "' (expected drilldown, hre, rhre, rre or rankfusion)");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("train config: ") + what);
  };
  require(margin > 0, "margin must be positive");
  require(gamma >= 0 && gamma <= 1, "gamma must lie in [0, 1]");
  require(mu >= 0, "mu must be non-negative");
  require(batch_size >= 2, "batch size must be at least 2");
  require(slots >= 1 && state_dim >= 1 && embed_dim >= 1 && turns >= 1, "sizes must be positive");
  require(learning_rate > 0 && clip > 0 && lambda > 0, "learning rate, clip and lambda must be positive");
}

json TrainConfig::to_json() const {
  return {{"model", model_name(model)},
          {"slots", slots},
          {"state_dim", state_dim},
          {"embed_dim", embed_dim},
          {"turns", turns},
          {"margin", margin},
          {"lambda", lambda},
          {"gamma", gamma},
          {"mu", mu},
          {"learning_rate", learning_rate},
          {"clip", clip},
          {"batch_size", batch_size},
          {"pretrain_epochs", pretrain_epochs},
          {"joint_epochs", joint_epochs},
          {"seed", seed},
          {"literal_inverse_n", literal_inverse_n},
          {"min_count", min_count}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.model = parse_model(j.value("model", std::string(model_name(c.model))));
  c.slots = j.value("slots", c.slots);
  c.state_dim = j.value("state_dim", c.state_dim);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.turns = j.value("turns", c.turns);
  c.margin = j.value("margin", c.margin);
  c.lambda = j.value("lambda", c.lambda);
  c.gamma = j.value("gamma", c.gamma);
  c.mu = j.value("mu", c.mu);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.clip = j.value("clip", c.clip);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.joint_epochs = j.value("joint_epochs", c.joint_epochs);
  c.seed = j.value("seed", c.seed);
  c.literal_inverse_n = j.value("literal_inverse_n", c.literal_inverse_n);
  c.min_count = j.value("min_count", c.min_count);
  c.validate();
  return c;
}

json checkpoint_to_json(const Checkpoint& cp) {
  json history = json::array();
  for (const auto& r : cp.history) {
    history.push_back({{"phase", r.phase},
                       {"epoch", r.epoch},
                       {"train_loss", r.train_loss},
                       {"policy_loss", r.policy_loss},
                       {"val_metric", r.val_metric}});
  }
  json params = json::object();
  for (const auto& [name, t] : cp.params.entries())
    params[name] = {{"shape", {t.rows(), t.cols()}}, {"data", t.data()}};
  return {{"format_version", kCheckpointFormat},
          {"config", cp.config.to_json()},
          {"vocab", cp.vocab.to_json()},
          {"phase", cp.phase},
          {"epoch", cp.epoch},
          {"val_history", history},
          {"params", params}};
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormat) {
      throw std::runtime_error("unsupported checkpoint format_version " + std::to_string(version) + " (expected " +
                               std::to_string(kCheckpointFormat) + ")");
    }
    Checkpoint cp;
    cp.config = TrainConfig::from_json(j.at("config"));
    cp.vocab = text::Vocab::from_json(j.at("vocab"));
    cp.phase = j.at("phase").get<std::string>();
    if (cp.phase != "pretrain" && cp.phase != "joint") throw std::runtime_error("unknown phase '" + cp.phase + "'");
    cp.epoch = j.at("epoch").get<std::size_t>();
    for (const auto& r : j.at("val_history")) {
      cp.history.push_back({r.at("phase").get<std::string>(), r.at("epoch").get<std::size_t>(),
                            r.at("train_loss").get<double>(), r.at("policy_loss").get<double>(),
                            r.at("val_metric").get<double>()});
    }
    for (const auto& [name, entry] : j.at("params").items()) {
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      auto data = entry.at("data").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] * shape[1] != data.size()) {
        throw std::runtime_error("parameter '" + name + "' has " + std::to_string(data.size()) +
                                 " values for its declared shape");
      }
      cp.params.set(name, Tensor({shape[0], shape[1]}, std::move(data)));
    }
    return cp;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(cp).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint " + path.string() + " is not a complete document: " + e.what());
  }
  try {
    return checkpoint_from_json(j);
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint " + path.string() + ": " + e.what());
  }
}

ParamStore init_model(const TrainConfig& config, std::size_t vocab_size, std::size_t feature_dim, Rng& rng) {
  config.validate();
  ParamStore store;
  enc::init_sentence_encoder(store, vocab_size, config.embed_dim, config.state_dim, rng);
  enc::init_region_projection(store, feature_dim, config.state_dim, rng);
  if (config.model == ModelKind::drilldown) {
    state::init_fusion(store, config.state_dim, rng);
    state::init_policy(store, config.state_dim, rng);
  } else if (config.model == ModelKind::rhre || config.model == ModelKind::hre) {
    base::init_context_encoder(store, config.state_dim, rng);
  }
  return store;
}

text::Vocab build_vocab(const std::vector<scene::Scene>& train, std::size_t min_count) {
  std::vector<std::string> captions;
  for (const auto& s : train)
    for (const auto& c : s.captions) captions.push_back(c.text);
  return text::Vocab::build(captions, min_count);
}

Dataset encode_scenes(const std::vector<scene::Scene>& scenes, const text::Vocab& vocab) {
  Dataset out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) {
    EncodedScene e;
    e.id = static_cast<sim::ImageId>(s.id);
    e.seed = s.seed;
    e.raw = scene::feature_matrix(s);
    for (const auto& c : s.captions) {
      auto ids = text::encode_text(c.text, vocab);
      if (ids.empty()) throw std::invalid_argument("scene " + std::to_string(s.id) + " has an empty caption");
      e.captions.push_back(std::move(ids));
    }
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

struct Hardest {
  std::vector<std::size_t> image;  // per row a: hardest column b != a
  std::vector<std::size_t> state;  // per column a: hardest row a' != a
};

Hardest find_hardest(const Tensor& s) {
  const std::size_t b = s.rows();
  Hardest h{std::vector<std::size_t>(b), std::vector<std::size_t>(b)};
  for (std::size_t a = 0; a < b; ++a) {
    bool have_i = false, have_s = false;
    for (std::size_t o = 0; o < b; ++o) {
      if (o == a) continue;
      if (!have_i || s(a, o) > s(a, h.image[a])) h.image[a] = o, have_i = true;
      if (!have_s || s(o, a) > s(h.state[a], a)) h.state[a] = o, have_s = true;
    }
  }
  return h;
}

void require_square(const Tensor& s) {
  if (s.rows() != s.cols()) throw grad::DimensionError("triplet loss needs a square score matrix");
  if (s.rows() < 2) throw std::invalid_argument("triplet loss needs at least two examples for negatives");
}

}  // namespace

double triplet_loss_value(const Tensor& s, double margin) {
  require_square(s);
  const Hardest h = find_hardest(s);
  double total = 0.0;
  for (std::size_t a = 0; a < s.rows(); ++a) {
    total += std::max(0.0, margin + s(a, h.image[a]) - s(a, a));
    total += std::max(0.0, margin + s(h.state[a], a) - s(a, a));
  }
  return total / static_cast<double>(s.rows());
}

Var triplet_loss(Var scores, double margin) {
  const Tensor& s = scores.value();
  require_square(s);
  const Hardest h = find_hardest(s);
  const double loss = triplet_loss_value(s, margin);
  return scores.tape->record(Tensor::scalar(loss), {scores},
                             [scores, h, margin](const Tensor& g, std::span<Tensor* const> grads) {
                               if (!grads[0]) return;
                               const Tensor& v = scores.value();
                               const std::size_t b = v.rows();
                               const double w = g.item() / static_cast<double>(b);
                               Tensor& out = *grads[0];
                               for (std::size_t a = 0; a < b; ++a) {
                                 if (margin + v(a, h.image[a]) - v(a, a) > 0) {
                                   out(a, h.image[a]) += w;
                                   out(a, a) -= w;
                                 }
                                 if (margin + v(h.state[a], a) - v(a, a) > 0) {
                                   out(h.state[a], a) += w;
                                   out(a, a) -= w;
                                 }
                               }
                             });
}

double discounted_return(std::span<const double> rewards, double gamma) {
  double total = 0.0, weight = 1.0;
  for (double r : rewards) {
    total += weight * r;
    weight *= gamma;
  }
  return total;
}

std::vector<double> estimate_q(const StateSet& X, std::span<const std::vector<double>> remaining,
                               const Tensor& target_regions, const ParamStore& params, const TrainConfig& config,
                               Rng& rng) {
  if (X.has_empty()) throw std::invalid_argument("estimate_q: state bank still has empty slots");
  if (remaining.empty()) throw std::invalid_argument("estimate_q: no remaining queries");
  const auto sim_cfg = config.similarity();
  std::vector<double> q(X.slot_count());
  std::vector<double> rewards;
  for (std::size_t k = 0; k < X.slot_count(); ++k) {
    rewards.clear();
    StateSet x = state::update_slot(X, k, remaining[0], params);
    rewards.push_back(sim::set_image_similarity(x, target_regions, sim_cfg));
    for (std::size_t i = 1; i < remaining.size(); ++i) {
      const auto choice = state::select_slot(x, remaining[i], params, state::SelectMode::sample, rng);
      x = state::update_slot(x, choice.index, remaining[i], params);
      rewards.push_back(sim::set_image_similarity(x, target_regions, sim_cfg));
    }
    q[k] = discounted_return(rewards, config.gamma);
  }
  return q;
}

std::size_t best_action(std::span<const double> q) {
  if (q.empty()) throw std::invalid_argument("best_action: no actions");
  return static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
}

double policy_loss(const StateSet& X, std::span<const double> q, std::size_t k_star, const ParamStore& params) {
  if (X.has_empty()) throw std::invalid_argument("policy_loss: state bank still has empty slots");
  const auto dist = state::slot_distribution(X, q, params);
  return -std::log(dist.at(k_star));
}

ForwardResult forward_batch(Tape& tape, const ParamStore& params, const TrainConfig& config, const Batch& batch,
                            SlotPolicy policy, Rng& rng) {
  const std::size_t b_count = batch.queries.size();
  const std::size_t turns = config.turns;
  if (b_count < 2) throw std::invalid_argument("forward_batch: need at least two examples");
  if (batch.raw.size() != b_count) throw std::invalid_argument("forward_batch: one image per example required");
  for (const auto& q : batch.queries)
    if (q.size() != turns) throw std::invalid_argument("forward_batch: every example needs one query per turn");

  ForwardResult out;
  const auto sim_cfg = config.similarity();

  std::vector<Tensor> images;
  if (config.model == ModelKind::hre) {
    for (const auto& raw : batch.raw) images.push_back(base::global_image_features(raw));
  } else {
    images = batch.raw;
  }
  const std::size_t n = images[0].rows();
  Var regions = enc::project_regions(tape.constant(grad::concat_rows(images)), tape.param(params, "img.W_I"),
                                     tape.param(params, "img.b_I"));
  out.targets = regions.value();

  const auto enc_vars = enc::bind_sentence_encoder(tape, params);
  const std::vector<std::vector<bool>> all_full(b_count, std::vector<bool>(1, false));

  if (config.model == ModelKind::rre) {
    for (Var s : base::rre_turn_states(enc_vars, batch.queries)) {
      const Var slots[1] = {s};
      out.turn_scores.push_back(sim::batch_similarity(slots, all_full, regions, n, sim_cfg));
    }
  } else {
    std::vector<std::vector<TokenId>> sequences;
    sequences.reserve(b_count * turns);
    for (std::size_t t = 0; t < turns; ++t)
      for (std::size_t b = 0; b < b_count; ++b) sequences.push_back(batch.queries[b][t]);
    Var q_all = enc::encode_batch(enc_vars, sequences);

    std::optional<state::BatchStateBank> bank;
    enc::GruVars fusion;
    if (uses_bank(config.model)) {
      bank.emplace(tape, b_count, config.effective_slots(), config.state_dim);
      fusion = enc::bind_gru(tape, params, fusion_prefix(config.model));
    }
    for (std::size_t t = 1; t <= turns; ++t) {
      Var q_t = grad::slice_rows(q_all, (t - 1) * b_count, b_count);
      out.queries.push_back(q_t.value());
      if (!bank) {
        const Var slots[1] = {q_t};
        out.turn_scores.push_back(sim::batch_similarity(slots, all_full, regions, n, sim_cfg));
        continue;
      }
      std::vector<std::size_t> choice(b_count);
      for (std::size_t b = 0; b < b_count; ++b) {
        if (policy == SlotPolicy::fixed) {
          choice[b] = state::fixed_policy_slot(t, bank->slot_count());
        } else if (bank->any_empty(b)) {
          choice[b] = bank->choose_empty(b, state::SelectMode::sample, rng);
        } else {
          StateSet before = bank->snapshot(b);
          choice[b] = state::select_slot(before, row_of(out.queries.back(), b), params, state::SelectMode::sample, rng)
                          .index;
          out.decisions.push_back({b, t, std::move(before)});
        }
      }
      bank->update(fusion, q_t, choice);
      out.actions.push_back(choice);
      out.turn_scores.push_back(sim::batch_similarity(bank->slots(), bank->empty_mask(), regions, n, sim_cfg));
    }
  }

  Var total = triplet_loss(out.turn_scores[0], config.margin);
  for (std::size_t t = 1; t < out.turn_scores.size(); ++t)
    total = grad::add(total, triplet_loss(out.turn_scores[t], config.margin));
  out.loss = grad::scale(total, 1.0 / static_cast<double>(out.turn_scores.size()));
  return out;
}

Var policy_loss_batch(Tape& tape, const ParamStore& params, const ForwardResult& forward,
                      const std::vector<std::size_t>& k_star) {
  if (forward.decisions.empty()) throw std::invalid_argument("policy_loss_batch: no decisions");
  if (k_star.size() != forward.decisions.size()) throw std::invalid_argument("policy_loss_batch: one target each");
  const std::size_t m = forward.decisions[0].before.slot_count();
  std::vector<Tensor> xs, qs;
  for (const auto& d : forward.decisions) {
    xs.push_back(d.before.slots);
    const Tensor& q = forward.queries.at(d.turn - 1);
    for (std::size_t j = 0; j < m; ++j) qs.push_back(grad::slice_rows(q, d.example, 1));
  }
  Var scores = state::policy_scores(state::bind_policy(tape, params), tape.constant(grad::concat_rows(xs)),
                                    tape.constant(grad::concat_rows(qs)));
  Var logp = grad::log_softmax_rows(grad::reshape(scores, forward.decisions.size(), m));
  return grad::scale(grad::sum_all(grad::gather_elements(logp, k_star)), -1.0);
}

StepStats train_step(ParamStore& params, grad::AdamState& adam, const TrainConfig& config, const Batch& batch,
                     SlotPolicy policy, Rng& rng) {
  Tape tape;
  ForwardResult fwd = forward_batch(tape, params, config, batch, policy, rng);
  StepStats stats;
  stats.loss = fwd.loss.value().item();
  Var total = fwd.loss;
  if (policy == SlotPolicy::learned && !fwd.decisions.empty()) {
    std::vector<std::size_t> k_star;
    const std::size_t n = fwd.targets.rows() / batch.queries.size();
    for (const auto& d : fwd.decisions) {
      std::vector<std::vector<double>> remaining;
      for (std::size_t t = d.turn; t <= config.turns; ++t) remaining.push_back(row_of(fwd.queries[t - 1], d.example));
      const Tensor target = grad::slice_rows(fwd.targets, d.example * n, n);
      k_star.push_back(best_action(estimate_q(d.before, remaining, target, params, config, rng)));
    }
    Var lp = grad::scale(policy_loss_batch(tape, params, fwd, k_star), 1.0 / static_cast<double>(batch.queries.size()));
    stats.policy_loss = lp.value().item();
    stats.decisions = fwd.decisions.size();
    total = grad::add(total, grad::scale(lp, config.mu));
  }
  tape.backward(total);
  grad::GradMap grads = tape.param_grads();
  stats.grad_norm = grad::clip_global_norm(grads, config.clip);
  grad::adam_step(params, grads, adam);
  return stats;
}

RetrievalModel::RetrievalModel(Checkpoint cp) : cp_(std::move(cp)) { cp_.config.validate(); }

sim::RetrievalIndex RetrievalModel::build_index(const Dataset& scenes) const {
  Tape tape(Tape::no_grad);
  Var W = tape.param(cp_.params, "img.W_I");
  Var b = tape.param(cp_.params, "img.b_I");
  std::vector<sim::ImageId> ids;
  std::vector<Tensor> regions;
  for (const auto& s : scenes) {
    const Tensor raw = cp_.config.model == ModelKind::hre ? base::global_image_features(s.raw) : s.raw;
    ids.push_back(s.id);
    regions.push_back(enc::project_regions(tape.constant(raw), W, b).value());
  }
  return sim::RetrievalIndex(std::move(ids), std::move(regions));
}

std::vector<double> RetrievalModel::encode_query(std::span<const TokenId> ids) const {
  Tape tape(Tape::no_grad);
  return enc::encode_sentence(enc::bind_sentence_encoder(tape, cp_.params), ids).value().values();
}

EpisodeRunner::EpisodeRunner(const RetrievalModel& model, const sim::RetrievalIndex& index)
    : model_(&model),
      index_(&index),
      states_(state::init_states(model.config().effective_slots(), model.config().state_dim)) {
  if (index.empty()) throw std::invalid_argument("episode over an empty index");
}

std::vector<sim::RankedImage> EpisodeRunner::observe(std::span<const TokenId> ids) {
  if (ids.empty()) throw std::invalid_argument("query has no tokens");
  const TrainConfig& cfg = model_->config();
  const ParamStore& params = model_->params();
  history_.emplace_back(ids.begin(), ids.end());
  ++turn_;
  switch (cfg.model) {
    case ModelKind::drilldown: {
      const auto q = model_->encode_query(ids);
      std::size_t k = state::fixed_policy_slot(turn_, states_.slot_count());
      if (model_->learned_policy()) {
        Rng unused(0);
        k = state::select_slot(states_, q, params, state::SelectMode::greedy, unused).index;
      }
      states_ = state::update_slot(states_, k, q, params, "fuse");
      break;
    }
    case ModelKind::rhre:
    case ModelKind::hre:
      states_ = state::update_slot(states_, 0, model_->encode_query(ids), params, base::kContextPrefix);
      break;
    case ModelKind::rre:
    case ModelKind::rankfusion: {
      const auto v = cfg.model == ModelKind::rre ? base::rre_encode(history_, params) : model_->encode_query(ids);
      std::copy(v.begin(), v.end(), states_.slots.row(0).begin());
      states_.empty[0] = false;
      states_.turn = turn_;
      break;
    }
  }
  auto ranking = sim::rank_corpus(states_, *index_, cfg.similarity());
  if (cfg.model != ModelKind::rankfusion) return ranking;
  per_turn_.push_back(std::move(ranking));
  return base::rank_fusion(per_turn_);
}

double EpisodeRunner::reward(std::size_t position) const {
  return sim::set_image_similarity(states_, index_->regions(position), model_->config().similarity());
}

double EvalResult::recall10_sum() const {
  double total = 0.0;
  for (const auto& t : turns) total += t.r10;
  return total;
}

EvalResult evaluate(const RetrievalModel& model, const Dataset& scenes, std::size_t turns, Rng* rng) {
  const sim::RetrievalIndex index = model.build_index(scenes);
  EvalResult result;
  result.ranks.assign(turns, {});
  double reward_total = 0.0;
  Rng unused(0);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    const auto order = scene::episode_indices(s.captions.size(), s.seed, turns,
                                              rng ? scene::EpisodeMode::train : scene::EpisodeMode::eval,
                                              rng ? *rng : unused);
    EpisodeRunner runner(model, index);
    for (std::size_t t = 0; t < turns; ++t) {
      const auto ranking = runner.observe(s.captions[order[t]]);
      result.ranks[t].push_back(sim::rank_of(ranking, s.id));
      reward_total += runner.reward(i);
    }
  }
  for (std::size_t t = 0; t < turns; ++t) result.turns.push_back(sim::turn_metrics(t + 1, result.ranks[t]));
  result.mean_reward = scenes.empty() ? 0.0 : reward_total / static_cast<double>(scenes.size());
  return result;
}

namespace {

struct EpochStats {
  double loss = 0;
  double policy_loss = 0;
};

EpochStats run_epoch(ParamStore& params, grad::AdamState& adam, const TrainConfig& config, const Dataset& train,
                     SlotPolicy policy, Rng& rng, const std::string& phase, std::size_t epoch) {
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  EpochStats stats;
  std::size_t batches = 0, policy_batches = 0;
  for (std::size_t start = 0; start + 2 <= order.size(); start += config.batch_size) {
    const std::size_t end = std::min(order.size(), start + config.batch_size);
    Batch batch;
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = train[order[i]];
      const auto picks = scene::episode_indices(s.captions.size(), s.seed, config.turns, scene::EpisodeMode::train, rng);
      std::vector<std::vector<TokenId>> queries;
      for (std::size_t p : picks) queries.push_back(s.captions[p]);
      batch.queries.push_back(std::move(queries));
      batch.raw.push_back(s.raw);
    }
    if (batch.queries.size() < 2) break;
    StepStats step;
    try {
      step = train_step(params, adam, config, batch, policy, rng);
    } catch (const grad::NumericError& e) {
      throw grad::NumericError(phase + " epoch " + std::to_string(epoch) + " batch " + std::to_string(batches + 1) +
                               ": " + e.what());
    }
    stats.loss += step.loss;
    ++batches;
    if (step.decisions > 0) {
      stats.policy_loss += step.policy_loss;
      ++policy_batches;
    }
  }
  if (batches) stats.loss /= static_cast<double>(batches);
  if (policy_batches) stats.policy_loss /= static_cast<double>(policy_batches);
  return stats;
}

Checkpoint run_phase(Checkpoint cp, const Dataset& train, const Dataset& val, const std::string& phase,
                     std::size_t epochs, SlotPolicy policy, std::uint64_t salt, const EpochCallback& on_epoch) {
  const TrainConfig& config = cp.config;
  if (train.size() < 2) throw std::invalid_argument("training split needs at least two scenes");
  Rng rng(scene::derive_seed(config.seed, salt));
  grad::AdamState adam;
  adam.config.learning_rate = config.learning_rate;
  std::optional<Checkpoint> best;
  double best_metric = 0.0;
  cp.phase = phase;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const EpochStats stats = run_epoch(cp.params, adam, config, train, policy, rng, phase, epoch);
    cp.epoch = epoch;
    const double val_metric = evaluate(RetrievalModel(cp), val, config.turns).recall10_sum();
    EpochRecord record{phase, epoch, stats.loss, stats.policy_loss, val_metric};
    cp.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (!best || val_metric > best_metric) {
      best = cp;
      best_metric = val_metric;
    }
  }
  if (!best) return cp;
  best->history = cp.history;
  return *best;
}

}  // namespace

Checkpoint pretrain(const TrainConfig& config, const text::Vocab& vocab, const Dataset& train, const Dataset& val,
                    const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("training split is empty");
  Checkpoint cp;
  cp.config = config;
  cp.vocab = vocab;
  Rng init_rng(scene::derive_seed(config.seed, 1));
  cp.params = init_model(config, vocab.size(), train[0].raw.cols(), init_rng);
  // Single-state models have no joint phase and get the whole epoch budget here.
  const std::size_t epochs =
      config.model == ModelKind::drilldown ? config.pretrain_epochs : config.pretrain_epochs + config.joint_epochs;
  return run_phase(std::move(cp), train, val, "pretrain", epochs, SlotPolicy::fixed, 2, on_epoch);
}

Checkpoint joint_train(const Checkpoint& pretrained, const Dataset& train, const Dataset& val,
                       const EpochCallback& on_epoch) {
  if (pretrained.config.model != ModelKind::drilldown) {
    throw std::invalid_argument("joint training applies to drilldown checkpoints only");
  }
  return run_phase(pretrained, train, val, "joint", pretrained.config.joint_epochs, SlotPolicy::learned, 3, on_epoch);
}

}  // namespace dd::train
