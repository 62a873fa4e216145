#include "drilldown/optim.hpp"

#include <algorithm>
#include <cmath>

namespace dd::grad {

void adam_step(ParamStore& params, const GradMap& grads, AdamState& state) {
  const AdamConfig& cfg = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.mutable_at(name);
    if (!p.same_shape(g)) {
      throw DimensionError("adam: gradient shape " + g.shape_string() + " for parameter '" + name +
                           "' of shape " + p.shape_string());
    }
    auto [m_it, m_new] = state.first_moment.try_emplace(name, Tensor({p.rows(), p.cols()}));
    auto [v_it, v_new] = state.second_moment.try_emplace(name, Tensor({p.rows(), p.cols()}));
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

double global_norm(const GradMap& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.data()) sq += v * v;
  return std::sqrt(sq);
}

double clip_global_norm(GradMap& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [_, g] : grads)
      for (double& v : g.data()) v *= factor;
  }
  return norm;
}

namespace {

double evaluate(const LossFn& loss, const ParamStore& params) {
  Tape tape(Tape::no_grad);
  const double value = loss(tape, params).value().item();
  if (!std::isfinite(value)) throw NumericError("grad_check: loss is not finite");
  return value;
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, const ParamStore& params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  GradMap analytic;
  {
    Tape tape;
    Var out = loss(tape, params);
    if (!std::isfinite(out.value().item())) throw NumericError("grad_check: loss is not finite");
    tape.backward(out);
    analytic = tape.param_grads();
  }
  GradCheckReport report;
  ParamStore probe = params;
  for (const auto& [name, ad] : analytic) {
    Tensor& p = probe.mutable_at(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double plus = evaluate(loss, probe);
      p[i] = saved - h;
      const double minus = evaluate(loss, probe);
      p[i] = saved;
      const double fd = (plus - minus) / (2.0 * h);
      const double err = std::abs(ad[i] - fd) / std::max(1e-8, std::abs(ad[i]) + std::abs(fd));
      ++report.coordinates;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace dd::grad
