#include "drilldown/statebank.hpp"

#include <algorithm>
#include <stdexcept>

namespace dd::state {

using grad::Activation;

bool StateSet::has_empty() const { return std::find(empty.begin(), empty.end(), true) != empty.end(); }

std::size_t StateSet::filled_count() const {
  return static_cast<std::size_t>(std::count(empty.begin(), empty.end(), false));
}

StateSet init_states(std::size_t slots, std::size_t dim) {
  if (slots < 1 || dim < 1) throw std::invalid_argument("state bank needs at least one slot and dimension");
  return StateSet{Tensor({slots, dim}), std::vector<bool>(slots, true), 0};
}

void init_policy(ParamStore& store, std::size_t dim, grad::Rng& rng) {
  store.init_uniform("policy.W1", dim, 2 * dim, 2 * dim, rng);
  store.init_zeros("policy.b1", 1, dim);
  store.init_uniform("policy.W2", dim, dim, dim, rng);
  store.init_zeros("policy.b2", 1, dim);
  store.init_uniform("policy.W3", 1, dim, dim, rng);
  store.init_zeros("policy.b3", 1, 1);
}

PolicyVars bind_policy(Tape& tape, const ParamStore& store) {
  auto p = [&](const char* name) { return tape.param(store, std::string("policy.") + name); };
  return {p("W1"), p("b1"), p("W2"), p("b2"), p("W3"), p("b3")};
}

Var policy_scores(const PolicyVars& p, Var x_rows, Var q_rows) {
  using grad::activate;
  using grad::add_row;
  using grad::matmul_bt;
  Var joined = grad::concat_cols(x_rows, q_rows);
  Var h1 = activate(add_row(matmul_bt(joined, p.W1), p.b1), Activation::relu);
  Var h2 = activate(add_row(matmul_bt(h1, p.W2), p.b2), Activation::relu);
  return add_row(matmul_bt(h2, p.W3), p.b3);
}

double policy_score(std::span<const double> x, std::span<const double> q, const ParamStore& store) {
  Tape tape(Tape::no_grad);
  Var xv = tape.constant(Tensor::row_vector({x.begin(), x.end()}));
  Var qv = tape.constant(Tensor::row_vector({q.begin(), q.end()}));
  return policy_scores(bind_policy(tape, store), xv, qv).value().item();
}

void init_fusion(ParamStore& store, std::size_t dim, grad::Rng& rng) { enc::init_gru(store, "fuse", dim, dim, rng); }

std::vector<double> slot_distribution(const StateSet& states, std::span<const double> query,
                                      const ParamStore& store) {
  const std::size_t m = states.slot_count();
  std::vector<double> dist(m, 0.0);
  if (states.has_empty()) {
    const double share = 1.0 / static_cast<double>(m - states.filled_count());
    for (std::size_t j = 0; j < m; ++j)
      if (states.empty[j]) dist[j] = share;
    return dist;
  }
  if (m == 1) return {1.0};
  Tape tape(Tape::no_grad);
  Var x = tape.constant(states.slots);
  Tensor q_rows({m, query.size()});
  for (std::size_t j = 0; j < m; ++j) std::copy(query.begin(), query.end(), q_rows.row(j).begin());
  Var scores = policy_scores(bind_policy(tape, store), x, tape.constant(std::move(q_rows)));
  return grad::softmax_sharp(scores.value().data(), 1.0);
}

SlotChoice select_slot(const StateSet& states, std::span<const double> query, const ParamStore& store,
                       SelectMode mode, grad::Rng& rng) {
  SlotChoice choice{0, slot_distribution(states, query, store)};
  if (mode == SelectMode::greedy) {
    choice.index = static_cast<std::size_t>(
        std::max_element(choice.distribution.begin(), choice.distribution.end()) - choice.distribution.begin());
  } else {
    std::discrete_distribution<std::size_t> draw(choice.distribution.begin(), choice.distribution.end());
    choice.index = draw(rng);
  }
  return choice;
}

std::size_t fixed_policy_slot(std::size_t turn, std::size_t slots) {
  if (turn < 1) throw std::invalid_argument("turns are 1-based");
  if (slots < 1) throw std::invalid_argument("need at least one slot");
  return (turn - 1) % slots;
}

StateSet update_slot(const StateSet& states, std::size_t k, std::span<const double> query,
                     const ParamStore& store, const std::string& fusion_prefix) {
  if (k >= states.slot_count()) {
    throw std::out_of_range("slot " + std::to_string(k) + " out of range for " +
                            std::to_string(states.slot_count()) + " slots");
  }
  Tape tape(Tape::no_grad);
  Var q = tape.constant(Tensor::row_vector({query.begin(), query.end()}));
  Var h = tape.constant(Tensor::row_vector({states.slots.row(k).begin(), states.slots.row(k).end()}));
  Var fused = enc::gru_step(enc::bind_gru(tape, store, fusion_prefix), q, h);
  StateSet out = states;
  std::copy(fused.value().data().begin(), fused.value().data().end(), out.slots.row(k).begin());
  out.empty[k] = false;
  ++out.turn;
  return out;
}

Episode run_episode(std::span<const std::vector<double>> queries, EpisodePolicy policy, const ParamStore& store,
                    std::size_t slots, grad::Rng& rng, const std::string& fusion_prefix) {
  if (queries.empty()) throw std::invalid_argument("episode needs at least one query");
  Episode episode;
  StateSet x = init_states(slots, queries[0].size());
  for (std::size_t t = 1; t <= queries.size(); ++t) {
    const auto& q = queries[t - 1];
    std::size_t k = 0;
    if (policy == EpisodePolicy::fixed) {
      k = fixed_policy_slot(t, slots);
    } else {
      k = select_slot(x, q, store, policy == EpisodePolicy::greedy ? SelectMode::greedy : SelectMode::sample, rng)
              .index;
    }
    x = update_slot(x, k, q, store, fusion_prefix);
    episode.states.push_back(x);
    episode.actions.push_back(k);
  }
  return episode;
}

BatchStateBank::BatchStateBank(Tape& tape, std::size_t batch, std::size_t slots, std::size_t dim)
    : tape_(&tape), batch_(batch), empty_(batch, std::vector<bool>(slots, true)) {
  if (slots < 1 || dim < 1 || batch < 1) throw std::invalid_argument("state bank needs positive extents");
  Var zeros = tape.constant(Tensor({batch, dim}));
  slots_.assign(slots, zeros);
}

bool BatchStateBank::any_empty(std::size_t b) const {
  return std::find(empty_[b].begin(), empty_[b].end(), true) != empty_[b].end();
}

std::size_t BatchStateBank::choose_empty(std::size_t b, SelectMode mode, grad::Rng& rng) const {
  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < slots_.size(); ++j)
    if (empty_[b][j]) candidates.push_back(j);
  if (candidates.empty()) throw std::logic_error("choose_empty on a full state bank");
  if (mode == SelectMode::greedy) return candidates.front();
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  return candidates[pick(rng)];
}

void BatchStateBank::update(const enc::GruVars& fusion, Var q, std::span<const std::size_t> choice) {
  if (choice.size() != batch_) throw std::invalid_argument("one slot choice per batch entry required");
  for (std::size_t k : choice)
    if (k >= slots_.size()) throw std::out_of_range("slot choice out of range");
  const bool uniform = std::all_of(choice.begin(), choice.end(), [&](std::size_t k) { return k == choice[0]; });
  if (uniform) {
    slots_[choice[0]] = enc::gru_step(fusion, q, slots_[choice[0]]);
  } else {
    Var hidden = grad::pick_rows(slots_, choice);
    Var fused = enc::gru_step(fusion, q, hidden);
    for (std::size_t j = 0; j < slots_.size(); ++j) {
      std::vector<std::size_t> which(batch_);
      bool touched = false;
      for (std::size_t b = 0; b < batch_; ++b) {
        which[b] = choice[b] == j ? 1 : 0;
        touched = touched || choice[b] == j;
      }
      if (touched) {
        const Var sources[2] = {slots_[j], fused};
        slots_[j] = grad::pick_rows(sources, which);
      }
    }
  }
  for (std::size_t b = 0; b < batch_; ++b) empty_[b][choice[b]] = false;
  ++turn_;
}

StateSet BatchStateBank::snapshot(std::size_t b) const {
  StateSet s{Tensor({slots_.size(), slots_[0].value().cols()}), empty_[b], turn_};
  for (std::size_t j = 0; j < slots_.size(); ++j) {
    auto row = slots_[j].value().row(b);
    std::copy(row.begin(), row.end(), s.slots.row(j).begin());
  }
  return s;
}

}  // namespace dd::state
