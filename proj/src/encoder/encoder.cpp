#include "drilldown/encoder.hpp"

#include <algorithm>
#include <stdexcept>

namespace dd::enc {

using grad::Activation;

void init_gru(ParamStore& store, const std::string& prefix, std::size_t input_dim, std::size_t hidden_dim,
              grad::Rng& rng) {
  for (const char* gate : {"r", "z", "n"}) {
    store.init_uniform(prefix + ".W_" + gate, hidden_dim, input_dim, input_dim, rng);
    store.init_uniform(prefix + ".U_" + gate, hidden_dim, hidden_dim, hidden_dim, rng);
    store.init_zeros(prefix + ".b_" + gate, 1, hidden_dim);
  }
  store.init_zeros(prefix + ".b_u", 1, hidden_dim);
}

GruVars bind_gru(Tape& tape, const ParamStore& store, const std::string& prefix) {
  auto p = [&](const char* name) { return tape.param(store, prefix + "." + name); };
  return {p("W_r"), p("U_r"), p("b_r"), p("W_z"), p("U_z"), p("b_z"), p("W_n"), p("U_n"), p("b_n"), p("b_u")};
}

Var gru_step(const GruVars& g, Var e, Var h) {
  using grad::add;
  using grad::add_row;
  using grad::matmul_bt;
  Var r = activate(add_row(add(matmul_bt(e, g.W_r), matmul_bt(h, g.U_r)), g.b_r), Activation::sigmoid);
  Var z = activate(add_row(add(matmul_bt(e, g.W_z), matmul_bt(h, g.U_z)), g.b_z), Activation::sigmoid);
  Var hidden_part = add_row(matmul_bt(h, g.U_n), g.b_u);
  Var n = activate(add(add_row(matmul_bt(e, g.W_n), g.b_n), mul(r, hidden_part)), Activation::tanh);
  // (1 - z) n + z h, written as n + z (h - n)
  return add(n, mul(z, sub(h, n)));
}

void init_sentence_encoder(ParamStore& store, std::size_t vocab_size, std::size_t embed_dim,
                           std::size_t state_dim, grad::Rng& rng) {
  store.init_uniform("embed.W_E", embed_dim, vocab_size, vocab_size, rng);
  init_gru(store, "enc", embed_dim, state_dim, rng);
}

SentenceEncoderVars bind_sentence_encoder(Tape& tape, const ParamStore& store) {
  return {tape.param(store, "embed.W_E"), bind_gru(tape, store, "enc")};
}

Var embed_words(Var W_E, std::span<const text::TokenId> ids) { return grad::gather_cols(W_E, ids); }

Var encode_sentence(const SentenceEncoderVars& enc, std::span<const text::TokenId> ids) {
  if (ids.empty()) throw std::invalid_argument("cannot encode an empty token sequence");
  Tape& tape = *enc.W_E.tape;
  Var h = tape.constant(grad::Tensor({1, enc.gru.U_r.value().rows()}));
  for (text::TokenId id : ids) {
    const text::TokenId one[1] = {id};
    h = gru_step(enc.gru, embed_words(enc.W_E, one), h);
  }
  return h;
}

std::vector<Var> encode_batch_steps(const SentenceEncoderVars& enc,
                                    std::span<const std::vector<text::TokenId>> sequences) {
  if (sequences.empty()) throw std::invalid_argument("encode_batch: empty batch");
  std::size_t longest = 0;
  for (const auto& s : sequences) {
    if (s.empty()) throw std::invalid_argument("cannot encode an empty token sequence");
    longest = std::max(longest, s.size());
  }
  Tape& tape = *enc.W_E.tape;
  Var h = tape.constant(grad::Tensor({sequences.size(), enc.gru.U_r.value().rows()}));
  std::vector<Var> steps;
  steps.reserve(longest);
  std::vector<text::TokenId> column(sequences.size());
  for (std::size_t k = 0; k < longest; ++k) {
    for (std::size_t b = 0; b < sequences.size(); ++b)
      column[b] = k < sequences[b].size() ? sequences[b][k] : text::kPadId;
    h = gru_step(enc.gru, embed_words(enc.W_E, column), h);
    steps.push_back(h);
  }
  return steps;
}

Var encode_batch(const SentenceEncoderVars& enc, std::span<const std::vector<text::TokenId>> sequences) {
  auto steps = encode_batch_steps(enc, sequences);
  std::vector<std::size_t> last(sequences.size());
  for (std::size_t b = 0; b < sequences.size(); ++b) last[b] = sequences[b].size() - 1;
  return grad::pick_rows(steps, last);
}

void init_region_projection(ParamStore& store, std::size_t feature_dim, std::size_t state_dim, grad::Rng& rng) {
  store.init_uniform("img.W_I", state_dim, feature_dim, feature_dim, rng);
  store.init_zeros("img.b_I", 1, state_dim);
}

Var project_regions(Var raw, Var W_I, Var b_I) {
  if (raw.value().cols() != W_I.value().cols()) {
    throw grad::DimensionError("project_regions: feature width " + std::to_string(raw.value().cols()) +
                               " does not match W_I " + W_I.value().shape_string());
  }
  return grad::add_row(grad::matmul_bt(raw, W_I), b_I);
}

}  // namespace dd::enc
