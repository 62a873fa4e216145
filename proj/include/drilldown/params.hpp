#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "drilldown/tensor.hpp"

namespace dd::grad {

using GradMap = std::map<std::string, Tensor>;

// Named trainable tensors, ordered by name so iteration is deterministic.
class ParamStore {
 public:
  void set(const std::string& name, Tensor value);
  const Tensor& at(const std::string& name) const;
  Tensor& mutable_at(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  void init_uniform(const std::string& name, std::size_t rows, std::size_t cols,
                    std::size_t fan_in, Rng& rng);
  void init_zeros(const std::string& name, std::size_t rows, std::size_t cols);

  const std::map<std::string, Tensor>& entries() const noexcept { return params_; }
  std::vector<std::string> names() const;
  std::size_t parameter_count() const;

  bool operator==(const ParamStore&) const = default;

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace dd::grad
