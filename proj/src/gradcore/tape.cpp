#include "drilldown/tape.hpp"

#include <algorithm>
#include <cmath>

namespace dd::grad {

const Tensor& Var::value() const { return tape->value(*this); }
bool Var::requires_grad() const { return tape->requires_grad(*this); }

Var Tape::push(Node node) {
  if (!all_finite(node.value)) {
    throw NumericError("non-finite value produced on tape at node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) { return push(Node{std::move(value), false, {}, {}}); }

Var Tape::leaf(Tensor value) { return push(Node{std::move(value), grad_enabled_, {}, {}}); }

Var Tape::param(const ParamStore& store, const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return Var{this, it->second};
  Var v = leaf(store.at(name));
  bound_.emplace(name, v.id);
  return v;
}

Var Tape::record(Tensor value, std::vector<Var> parents, Backward backward) {
  Node node{std::move(value), false, {}, {}};
  node.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (p.tape != this) throw std::invalid_argument("operand belongs to a different tape");
    node.parents.push_back(p.id);
    node.requires_grad = node.requires_grad || nodes_[p.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

void Tape::backward(Var loss) {
  const Node& root = nodes_.at(loss.id);
  if (root.value.numel() != 1) {
    throw DimensionError("backward needs a scalar loss, got " + root.value.shape_string());
  }
  grads_.assign(nodes_.size(), Tensor{});
  grads_[loss.id] = Tensor({1, 1}, 1.0);
  std::vector<Tensor*> slots;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || grads_[i].numel() == 0) continue;
    slots.clear();
    for (std::size_t p : node.parents) {
      if (!nodes_[p].requires_grad) {
        slots.push_back(nullptr);
        continue;
      }
      if (grads_[p].numel() == 0) grads_[p] = Tensor({nodes_[p].value.rows(), nodes_[p].value.cols()});
      slots.push_back(&grads_[p]);
    }
    node.backward(grads_[i], slots);
  }
}

Tensor Tape::grad(Var v) const {
  if (v.id < grads_.size() && grads_[v.id].numel() != 0) return grads_[v.id];
  const Tensor& val = nodes_.at(v.id).value;
  return Tensor({val.rows(), val.cols()});
}

GradMap Tape::param_grads() const {
  GradMap out;
  for (const auto& [name, id] : bound_) out.emplace(name, grad(Var{const_cast<Tape*>(this), id}));
  return out;
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  return a.tape->record(matmul(a.value(), b.value()), {a, b},
                        [a, b](const Tensor& g, std::span<Tensor* const> in) {
                          if (in[0]) add_inplace(*in[0], matmul_bt(g, b.value()));
                          if (in[1]) add_inplace(*in[1], matmul_at(a.value(), g));
                        });
}

Var matmul_bt(Var a, Var b) {
  return a.tape->record(matmul_bt(a.value(), b.value()), {a, b},
                        [a, b](const Tensor& g, std::span<Tensor* const> in) {
                          if (in[0]) add_inplace(*in[0], matmul(g, b.value()));
                          if (in[1]) add_inplace(*in[1], matmul_at(g, a.value()));
                        });
}

Var add(Var a, Var b) {
  return a.tape->record(add(a.value(), b.value()), {a, b},
                        [](const Tensor& g, std::span<Tensor* const> in) {
                          if (in[0]) add_inplace(*in[0], g);
                          if (in[1]) add_inplace(*in[1], g);
                        });
}

Var sub(Var a, Var b) {
  return a.tape->record(sub(a.value(), b.value()), {a, b},
                        [](const Tensor& g, std::span<Tensor* const> in) {
                          if (in[0]) add_inplace(*in[0], g);
                          if (in[1]) add_inplace(*in[1], scale(g, -1.0));
                        });
}

Var mul(Var a, Var b) {
  return a.tape->record(mul(a.value(), b.value()), {a, b},
                        [a, b](const Tensor& g, std::span<Tensor* const> in) {
                          if (in[0]) add_inplace(*in[0], mul(g, b.value()));
                          if (in[1]) add_inplace(*in[1], mul(g, a.value()));
                        });
}

Var scale(Var a, double s) {
  return a.tape->record(scale(a.value(), s), {a}, [s](const Tensor& g, std::span<Tensor* const> in) {
    add_inplace(*in[0], scale(g, s));
  });
}

Var add_row(Var a, Var bias) {
  return a.tape->record(add_row(a.value(), bias.value()), {a, bias},
                        [](const Tensor& g, std::span<Tensor* const> in) {
                          if (in[0]) add_inplace(*in[0], g);
                          if (in[1]) {
                            Tensor& gb = *in[1];
                            for (std::size_t r = 0; r < g.rows(); ++r)
                              for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
                          }
                        });
}

Var activate(Var x, Activation kind) {
  Tensor y = activate(x.value(), kind);
  Tape* tape = x.tape;
  const std::size_t out_id = tape->size();
  return tape->record(std::move(y), {x}, [x, kind, tape, out_id](const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& xv = x.value();
    const Tensor& yv = tape->value(Var{tape, out_id});
    Tensor& gx = *in[0];
    for (std::size_t i = 0; i < g.numel(); ++i) {
      double d = 0.0;
      switch (kind) {
        case Activation::relu: d = xv[i] > 0.0 ? 1.0 : 0.0; break;
        case Activation::sigmoid: d = yv[i] * (1.0 - yv[i]); break;
        case Activation::tanh: d = 1.0 - yv[i] * yv[i]; break;
      }
      gx[i] += g[i] * d;
    }
  });
}

Var softmax_rows(Var x, double lambda) {
  Tape* tape = x.tape;
  const std::size_t out_id = tape->size();
  return tape->record(softmax_rows(x.value(), lambda), {x},
                      [tape, out_id, lambda](const Tensor& g, std::span<Tensor* const> in) {
                        const Tensor& y = tape->value(Var{tape, out_id});
                        Tensor& gx = *in[0];
                        for (std::size_t r = 0; r < y.rows(); ++r) {
                          double inner = 0.0;
                          for (std::size_t c = 0; c < y.cols(); ++c) inner += g(r, c) * y(r, c);
                          for (std::size_t c = 0; c < y.cols(); ++c)
                            gx(r, c) += lambda * y(r, c) * (g(r, c) - inner);
                        }
                      });
}

Var log_softmax_rows(Var x) {
  Tape* tape = x.tape;
  const std::size_t out_id = tape->size();
  return tape->record(log_softmax_rows(x.value()), {x},
                      [tape, out_id](const Tensor& g, std::span<Tensor* const> in) {
                        const Tensor& y = tape->value(Var{tape, out_id});
                        Tensor& gx = *in[0];
                        for (std::size_t r = 0; r < y.rows(); ++r) {
                          double total = 0.0;
                          for (std::size_t c = 0; c < y.cols(); ++c) total += g(r, c);
                          for (std::size_t c = 0; c < y.cols(); ++c)
                            gx(r, c) += g(r, c) - std::exp(y(r, c)) * total;
                        }
                      });
}

Var l2_normalize_rows(Var x, double eps) {
  Tape* tape = x.tape;
  const std::size_t out_id = tape->size();
  return tape->record(l2_normalize_rows(x.value(), eps), {x},
                      [x, tape, out_id, eps](const Tensor& g, std::span<Tensor* const> in) {
                        const Tensor& xv = x.value();
                        const Tensor& y = tape->value(Var{tape, out_id});
                        Tensor& gx = *in[0];
                        for (std::size_t r = 0; r < y.rows(); ++r) {
                          const double norm = l2_norm(xv.row(r));
                          if (norm < eps) {
                            for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) += g(r, c) / eps;
                            continue;
                          }
                          const double proj = dot(y.row(r), g.row(r));
                          for (std::size_t c = 0; c < y.cols(); ++c)
                            gx(r, c) += (g(r, c) - y(r, c) * proj) / norm;
                        }
                      });
}

Var sum_rows(Var x) {
  return x.tape->record(sum_rows(x.value()), {x}, [](const Tensor& g, std::span<Tensor* const> in) {
    Tensor& gx = *in[0];
    for (std::size_t r = 0; r < gx.rows(); ++r)
      for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g[r];
  });
}

Var sum_all(Var x) {
  return x.tape->record(Tensor::scalar(sum_all(x.value())), {x},
                        [](const Tensor& g, std::span<Tensor* const> in) {
                          for (double& v : in[0]->data()) v += g[0];
                        });
}

Var reshape(Var x, std::size_t rows, std::size_t cols) {
  return x.tape->record(reshape(x.value(), rows, cols), {x},
                        [](const Tensor& g, std::span<Tensor* const> in) {
                          Tensor& gx = *in[0];
                          for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
                        });
}

Var concat_cols(Var a, Var b) {
  const std::size_t split = a.value().cols();
  return a.tape->record(concat_cols(a.value(), b.value()), {a, b},
                        [split](const Tensor& g, std::span<Tensor* const> in) {
                          for (std::size_t r = 0; r < g.rows(); ++r) {
                            for (std::size_t c = 0; c < g.cols(); ++c) {
                              if (c < split) {
                                if (in[0]) (*in[0])(r, c) += g(r, c);
                              } else if (in[1]) {
                                (*in[1])(r, c - split) += g(r, c);
                              }
                            }
                          }
                        });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value());
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& v : values) {
    offsets.push_back(offset);
    offset += v.numel();
  }
  return parts[0].tape->record(concat_rows(values), {parts.begin(), parts.end()},
                               [offsets](const Tensor& g, std::span<Tensor* const> in) {
                                 for (std::size_t i = 0; i < in.size(); ++i) {
                                   if (!in[i]) continue;
                                   Tensor& gi = *in[i];
                                   for (std::size_t j = 0; j < gi.numel(); ++j) gi[j] += g[offsets[i] + j];
                                 }
                               });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  return x.tape->record(slice_rows(x.value(), begin, count), {x},
                        [begin](const Tensor& g, std::span<Tensor* const> in) {
                          Tensor& gx = *in[0];
                          const std::size_t base = begin * gx.cols();
                          for (std::size_t i = 0; i < g.numel(); ++i) gx[base + i] += g[i];
                        });
}

Var gather_cols(Var table, std::span<const std::size_t> ids) {
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return table.tape->record(gather_cols(table.value(), ids), {table},
                            [idx](const Tensor& g, std::span<Tensor* const> in) {
                              Tensor& gt = *in[0];
                              for (std::size_t i = 0; i < idx.size(); ++i)
                                for (std::size_t e = 0; e < g.cols(); ++e) gt(e, idx[i]) += g(i, e);
                            });
}

Var pick_rows(std::span<const Var> sources, std::span<const std::size_t> which) {
  if (sources.empty()) throw DimensionError("pick_rows: no sources");
  std::vector<const Tensor*> values;
  for (const Var& s : sources) values.push_back(&s.value());
  Tensor out = pick_rows(values, which);
  std::vector<std::size_t> sel(which.begin(), which.end());
  return sources[0].tape->record(std::move(out), {sources.begin(), sources.end()},
                                 [sel](const Tensor& g, std::span<Tensor* const> in) {
                                   for (std::size_t r = 0; r < sel.size(); ++r) {
                                     Tensor* target = in[sel[r]];
                                     if (!target) continue;
                                     for (std::size_t c = 0; c < g.cols(); ++c) (*target)(r, c) += g(r, c);
                                   }
                                 });
}

Var gather_elements(Var x, std::span<const std::size_t> cols) {
  std::vector<std::size_t> sel(cols.begin(), cols.end());
  return x.tape->record(gather_elements(x.value(), cols), {x},
                        [sel](const Tensor& g, std::span<Tensor* const> in) {
                          for (std::size_t r = 0; r < sel.size(); ++r) (*in[0])(r, sel[r]) += g[r];
                        });
}

Var detach(Var x) { return x.tape->constant(x.value()); }

}  // namespace dd::grad
