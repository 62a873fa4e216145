#pragma once

#include <span>
#include <string>
#include <vector>

#include "drilldown/params.hpp"
#include "drilldown/tape.hpp"
#include "drilldown/textproc.hpp"

namespace dd::enc {

using grad::ParamStore;
using grad::Tape;
using grad::Var;

// GRU cell parameters bound on a tape. Weight matrices are stored
// output-major (hidden x input); biases are 1 x hidden rows.
struct GruVars {
  Var W_r, U_r, b_r;
  Var W_z, U_z, b_z;
  Var W_n, U_n, b_n, b_u;
};

void init_gru(ParamStore& store, const std::string& prefix, std::size_t input_dim, std::size_t hidden_dim,
              grad::Rng& rng);
GruVars bind_gru(Tape& tape, const ParamStore& store, const std::string& prefix);

// r = sigmoid(W_r e + U_r h + b_r)
// z = sigmoid(W_z e + U_z h + b_z)
// n = tanh(W_n e + b_n + r * (U_n h + b_u))
// h' = (1 - z) * n + z * h
// Rows of e and h are independent batch entries.
Var gru_step(const GruVars& gru, Var e, Var h);

struct SentenceEncoderVars {
  Var W_E;
  GruVars gru;
};

// embed.W_E (E x |vocab|) and enc.* (GRU from E to D).
void init_sentence_encoder(ParamStore& store, std::size_t vocab_size, std::size_t embed_dim,
                           std::size_t state_dim, grad::Rng& rng);
SentenceEncoderVars bind_sentence_encoder(Tape& tape, const ParamStore& store);

// One row per id: column id of W_E.
Var embed_words(Var W_E, std::span<const text::TokenId> ids);

// Last hidden state of the GRU folded over ids from a zero state (1 x D).
Var encode_sentence(const SentenceEncoderVars& enc, std::span<const text::TokenId> ids);

// Hidden states of a padded batch: entry k is B x D after k + 1 steps. Rows
// past the end of a shorter sequence hold padding garbage and must not be read.
std::vector<Var> encode_batch_steps(const SentenceEncoderVars& enc,
                                    std::span<const std::vector<text::TokenId>> sequences);

// Final hidden state per sequence (B x D).
Var encode_batch(const SentenceEncoderVars& enc, std::span<const std::vector<text::TokenId>> sequences);

// img.W_I (D x F) and img.b_I (1 x D).
void init_region_projection(ParamStore& store, std::size_t feature_dim, std::size_t state_dim, grad::Rng& rng);

// v_j = W_I c_j + b_I for every row c_j of raw.
Var project_regions(Var raw, Var W_I, Var b_I);

}  // namespace dd::enc
