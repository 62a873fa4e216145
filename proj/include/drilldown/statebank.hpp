#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "drilldown/encoder.hpp"
#include "drilldown/params.hpp"
#include "drilldown/tape.hpp"

// The M-slot query state bank, its slot-selection policy and the GRU-cell
// fusion that writes a query into the chosen slot.
namespace dd::state {

using grad::ParamStore;
using grad::Tape;
using grad::Tensor;
using grad::Var;

struct StateSet {
  Tensor slots;             // M x D, empty slots are exact zeros
  std::vector<bool> empty;  // authoritative emptiness, never inferred from values
  std::size_t turn = 0;     // updates applied so far

  std::size_t slot_count() const { return empty.size(); }
  std::size_t dim() const { return slots.cols(); }
  bool has_empty() const;
  std::size_t filled_count() const;

  bool operator==(const StateSet&) const = default;
};

StateSet init_states(std::size_t slots, std::size_t dim);

enum class SelectMode { sample, greedy };

struct SlotChoice {
  std::size_t index = 0;
  std::vector<double> distribution;
};

struct PolicyVars {
  Var W1, b1, W2, b2, W3, b3;
};

// policy.W1 (D x 2D), policy.W2 (D x D), policy.W3 (1 x D) and biases.
void init_policy(ParamStore& store, std::size_t dim, grad::Rng& rng);
PolicyVars bind_policy(Tape& tape, const ParamStore& store);

// Row-wise W3 relu(W2 relu(W1 [x; q] + b1) + b2) + b3, returns R x 1.
Var policy_scores(const PolicyVars& policy, Var x_rows, Var q_rows);
double policy_score(std::span<const double> x, std::span<const double> q, const ParamStore& store);

// fuse.* GRU cell from D to D.
void init_fusion(ParamStore& store, std::size_t dim, grad::Rng& rng);

// Uniform over empty slots while any exist, otherwise a softmax over the
// policy scores of every slot.
std::vector<double> slot_distribution(const StateSet& states, std::span<const double> query,
                                      const ParamStore& store);

// Greedy picks the argmax, lowest index on ties. Sampling draws from the
// distribution.
SlotChoice select_slot(const StateSet& states, std::span<const double> query, const ParamStore& store,
                       SelectMode mode, grad::Rng& rng);

// Zero-based slot for 1-based turn t under the circular pretraining policy.
std::size_t fixed_policy_slot(std::size_t turn, std::size_t slots);

// Writes gru(q, slot k) into slot k; other slots are untouched.
StateSet update_slot(const StateSet& states, std::size_t k, std::span<const double> query,
                     const ParamStore& store, const std::string& fusion_prefix = "fuse");

enum class EpisodePolicy { fixed, sample, greedy };

struct Episode {
  std::vector<StateSet> states;  // X^1 .. X^T
  std::vector<std::size_t> actions;
};

// queries are encoded sentence vectors (one per turn).
Episode run_episode(std::span<const std::vector<double>> queries, EpisodePolicy policy, const ParamStore& store,
                    std::size_t slots, grad::Rng& rng, const std::string& fusion_prefix = "fuse");

// Differentiable bank for a whole batch: slot j of every example lives in one
// B x D node, and the emptiness mask is kept alongside.
class BatchStateBank {
 public:
  BatchStateBank(Tape& tape, std::size_t batch, std::size_t slots, std::size_t dim);

  std::size_t batch() const { return batch_; }
  std::size_t slot_count() const { return slots_.size(); }
  const std::vector<Var>& slots() const { return slots_; }
  bool empty(std::size_t b, std::size_t j) const { return empty_[b][j]; }
  bool any_empty(std::size_t b) const;
  const std::vector<std::vector<bool>>& empty_mask() const { return empty_; }

  // Lowest-index empty slot (greedy) or a uniform draw among empties.
  std::size_t choose_empty(std::size_t b, SelectMode mode, grad::Rng& rng) const;

  // Fuses row b of q into slot choice[b] of example b.
  void update(const enc::GruVars& fusion, Var q, std::span<const std::size_t> choice);

  // Value snapshot of example b.
  StateSet snapshot(std::size_t b) const;

 private:
  Tape* tape_;
  std::size_t batch_;
  std::vector<Var> slots_;
  std::vector<std::vector<bool>> empty_;
  std::size_t turn_ = 0;
};

}  // namespace dd::state
