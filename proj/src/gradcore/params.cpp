#include "drilldown/params.hpp"

#include <cmath>

namespace dd::grad {

void ParamStore::set(const std::string& name, Tensor value) { params_[name] = std::move(value); }

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::mutable_at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::init_uniform(const std::string& name, std::size_t rows, std::size_t cols,
                              std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t({rows, cols});
  for (double& v : t.data()) v = dist(rng);
  set(name, std::move(t));
}

void ParamStore::init_zeros(const std::string& name, std::size_t rows, std::size_t cols) {
  set(name, Tensor({rows, cols}));
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

}  // namespace dd::grad
