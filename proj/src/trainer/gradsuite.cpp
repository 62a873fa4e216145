#include "drilldown/gradsuite.hpp"

#include <functional>
#include <random>

#include "drilldown/baselines.hpp"
#include "drilldown/encoder.hpp"
#include "drilldown/trainer.hpp"

namespace dd::train {

namespace {

using grad::Activation;
using grad::LossFn;

Tensor uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t({rows, cols});
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Projects a tensor-valued output onto fixed random weights.
Var reduce(Var x, std::uint64_t seed) {
  Rng rng(seed);
  return grad::sum_all(grad::mul(x, x.tape->constant(uniform(x.value().rows(), x.value().cols(), rng))));
}

struct Case {
  std::string name;
  ParamStore params;
  LossFn loss;
  double step = 1e-5;
};

using UnaryOp = std::function<Var(Var)>;

Case unary(const std::string& name, std::size_t rows, std::size_t cols, UnaryOp op, Rng& rng, double lo = -1.0,
           double hi = 1.0) {
  Case c{name, {}, {}};
  c.params.set("a", uniform(rows, cols, rng, lo, hi));
  c.loss = [op](Tape& tape, const ParamStore& p) { return reduce(op(tape.param(p, "a")), 11); };
  return c;
}

using BinaryOp = std::function<Var(Var, Var)>;

Case binary(const std::string& name, grad::Shape a, grad::Shape b, BinaryOp op, Rng& rng) {
  Case c{name, {}, {}};
  c.params.set("a", uniform(a[0], a[1], rng));
  c.params.set("b", uniform(b[0], b[1], rng));
  c.loss = [op](Tape& tape, const ParamStore& p) { return reduce(op(tape.param(p, "a"), tape.param(p, "b")), 12); };
  return c;
}

std::vector<Case> op_cases() {
  Rng rng(20240901);
  std::vector<Case> cases;
  cases.push_back(binary("matmul", {3, 4}, {4, 2}, [](Var a, Var b) { return grad::matmul(a, b); }, rng));
  cases.push_back(binary("matmul_bt", {3, 4}, {2, 4}, [](Var a, Var b) { return grad::matmul_bt(a, b); }, rng));
  cases.push_back(binary("add", {3, 4}, {3, 4}, [](Var a, Var b) { return grad::add(a, b); }, rng));
  cases.push_back(binary("sub", {3, 4}, {3, 4}, [](Var a, Var b) { return grad::sub(a, b); }, rng));
  cases.push_back(binary("mul", {3, 4}, {3, 4}, [](Var a, Var b) { return grad::mul(a, b); }, rng));
  cases.push_back(binary("add_row", {3, 4}, {1, 4}, [](Var a, Var b) { return grad::add_row(a, b); }, rng));
  cases.push_back(binary("concat_cols", {3, 2}, {3, 4}, [](Var a, Var b) { return grad::concat_cols(a, b); }, rng));
  cases.push_back(binary("concat_rows", {2, 3}, {4, 3}, [](Var a, Var b) {
    const Var parts[2] = {a, b};
    return grad::concat_rows(parts);
  }, rng));
  cases.push_back(binary("pick_rows", {4, 3}, {4, 3}, [](Var a, Var b) {
    const Var parts[2] = {a, b};
    const std::size_t which[4] = {1, 0, 0, 1};
    return grad::pick_rows(parts, which);
  }, rng));
  cases.push_back(unary("scale", 3, 4, [](Var a) { return grad::scale(a, -2.5); }, rng));
  // keep inputs away from the relu kink
  cases.push_back(unary("relu", 3, 4, [](Var a) { return grad::activate(a, Activation::relu); }, rng, 0.1, 1.0));
  cases.push_back(unary("sigmoid", 3, 4, [](Var a) { return grad::activate(a, Activation::sigmoid); }, rng, -3, 3));
  cases.push_back(unary("tanh", 3, 4, [](Var a) { return grad::activate(a, Activation::tanh); }, rng, -2, 2));
  cases.push_back(unary("softmax_rows", 3, 5, [](Var a) { return grad::softmax_rows(a, 9.0); }, rng));
  cases.push_back(unary("log_softmax_rows", 3, 5, [](Var a) { return grad::log_softmax_rows(a); }, rng));
  cases.push_back(unary("l2_normalize_rows", 3, 5, [](Var a) { return grad::l2_normalize_rows(a, grad::kNormEps); }, rng));
  cases.push_back(unary("sum_rows", 3, 5, [](Var a) { return grad::sum_rows(a); }, rng));
  cases.push_back(unary("sum_all", 3, 5, [](Var a) { return grad::sum_all(a); }, rng));
  cases.push_back(unary("reshape", 3, 4, [](Var a) { return grad::reshape(a, 2, 6); }, rng));
  cases.push_back(unary("slice_rows", 5, 3, [](Var a) { return grad::slice_rows(a, 1, 3); }, rng));
  cases.push_back(unary("gather_cols", 4, 6, [](Var a) {
    const std::size_t ids[4] = {5, 0, 5, 2};
    return grad::gather_cols(a, ids);
  }, rng));
  cases.push_back(unary("gather_elements", 4, 3, [](Var a) {
    const std::size_t cols[4] = {2, 0, 1, 2};
    return grad::gather_elements(a, cols);
  }, rng));
  cases.push_back(unary("triplet_loss", 5, 5, [](Var a) { return triplet_loss(a, 0.3); }, rng));
  return cases;
}

std::vector<Case> module_cases() {
  Rng rng(77);
  std::vector<Case> cases;

  Case gru{"gru_step", {}, {}};
  enc::init_gru(gru.params, "g", 3, 4, rng);
  for (const char* b : {"g.b_r", "g.b_z", "g.b_n", "g.b_u"}) gru.params.set(b, uniform(1, 4, rng, -0.5, 0.5));
  {
    Tensor e = uniform(2, 3, rng), h = uniform(2, 4, rng);
    gru.loss = [e, h](Tape& tape, const ParamStore& p) {
      return reduce(enc::gru_step(enc::bind_gru(tape, p, "g"), tape.constant(e), tape.constant(h)), 13);
    };
  }
  cases.push_back(std::move(gru));

  Case sentence{"encode_sentence", {}, {}};
  enc::init_sentence_encoder(sentence.params, 7, 3, 4, rng);
  sentence.loss = [](Tape& tape, const ParamStore& p) {
    const std::vector<std::vector<TokenId>> batch = {{1, 4, 2, 6, 3}, {5, 5, 2}};
    return reduce(enc::encode_batch(enc::bind_sentence_encoder(tape, p), batch), 14);
  };
  cases.push_back(std::move(sentence));

  Case projection{"project_regions", {}, {}};
  enc::init_region_projection(projection.params, 5, 3, rng);
  projection.params.set("img.b_I", uniform(1, 3, rng));
  {
    Tensor raw = uniform(4, 5, rng);
    projection.loss = [raw](Tape& tape, const ParamStore& p) {
      return reduce(enc::project_regions(tape.constant(raw), tape.param(p, "img.W_I"), tape.param(p, "img.b_I")), 15);
    };
  }
  cases.push_back(std::move(projection));

  Case policy{"policy_scores", {}, {}};
  state::init_policy(policy.params, 3, rng);
  for (const char* b : {"policy.b1", "policy.b2"}) policy.params.set(b, uniform(1, 3, rng, 0.1, 0.4));
  {
    Tensor x = uniform(4, 3, rng), q = uniform(4, 3, rng);
    policy.loss = [x, q](Tape& tape, const ParamStore& p) {
      Var s = state::policy_scores(state::bind_policy(tape, p), tape.constant(x), tape.constant(q));
      return reduce(s, 17);
    };
  }
  cases.push_back(std::move(policy));

  Case similarity{"batch_similarity", {}, {}};
  similarity.params.set("s0", uniform(3, 4, rng));
  similarity.params.set("s1", uniform(3, 4, rng));
  similarity.params.set("v", uniform(6, 4, rng));
  similarity.loss = [](Tape& tape, const ParamStore& p) {
    const Var slots[2] = {tape.param(p, "s0"), tape.param(p, "s1")};
    const std::vector<std::vector<bool>> empty = {{false, false}, {false, true}, {true, false}};
    return reduce(sim::batch_similarity(slots, empty, tape.param(p, "v"), 3, {9.0, false}), 16);
  };
  cases.push_back(std::move(similarity));
  return cases;
}

// 2 images, N=3, M=2, D=4, T=2, three-word queries.
std::vector<Case> episode_cases() {
  std::vector<Case> cases;
  Rng data_rng(11);
  Batch batch;
  for (int i = 0; i < 2; ++i) {
    batch.raw.push_back(uniform(3, 5, data_rng));
    std::vector<std::vector<TokenId>> turns;
    for (int t = 0; t < 2; ++t) {
      std::uniform_int_distribution<TokenId> token(2, 7);
      turns.push_back({token(data_rng), token(data_rng), token(data_rng)});
    }
    batch.queries.push_back(turns);
  }
  for (auto kind : {ModelKind::drilldown, ModelKind::rhre, ModelKind::hre, ModelKind::rre, ModelKind::rankfusion}) {
    TrainConfig cfg;
    cfg.model = kind;
    cfg.slots = 2;
    cfg.state_dim = 4;
    cfg.embed_dim = 3;
    cfg.turns = 2;
    cfg.lambda = 3.0;
    cfg.margin = 1.5;  // every hinge active, away from kinks
    Rng rng(5);
    Case c{std::string("episode_loss/") + model_name(kind), init_model(cfg, 8, 5, rng), {}};
    Rng jitter(6);
    for (const auto& name : c.params.names()) {
      const Tensor& t = c.params.at(name);
      c.params.set(name, grad::add(t, uniform(t.rows(), t.cols(), jitter, -0.2, 0.2)));
    }
    c.loss = [cfg, batch](Tape& tape, const ParamStore& p) {
      Rng episode_rng(0);
      return forward_batch(tape, p, cfg, batch, SlotPolicy::fixed, episode_rng).loss;
    };
    // Wider baselines have coordinates with gradients near 1e-7, where the
    // default step is dominated by rounding.
    if (kind != ModelKind::drilldown) c.step = 1e-4;
    cases.push_back(std::move(c));
  }
  return cases;
}

}  // namespace

std::vector<GradCaseResult> run_gradient_suite() {
  std::vector<GradCaseResult> results;
  for (auto group : {op_cases(), module_cases(), episode_cases()}) {
    for (const auto& c : group) {
      const auto report = grad::grad_check(c.loss, c.params, c.step);
      results.push_back({c.name, report.max_rel_error, report.coordinates, report.worst_param, report.worst_index});
    }
  }
  return results;
}

}  // namespace dd::train
