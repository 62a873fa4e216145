#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "drilldown/tensor.hpp"

// Value-level kernels. The differentiable versions in tape.hpp call these for
// their forward pass, so inference and training share the same arithmetic.
namespace dd::grad {

inline constexpr double kNormEps = 1e-8;

enum class Activation { relu, sigmoid, tanh };

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T
Tensor matmul_bt(const Tensor& a, const Tensor& b);
// a^T * b
Tensor matmul_at(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// Adds a 1 x n bias to every row of a.
Tensor add_row(const Tensor& a, const Tensor& bias);
void add_inplace(Tensor& acc, const Tensor& x);

Tensor activate(const Tensor& x, Activation kind);

// Row-wise softmax of lambda * x with max subtraction.
Tensor softmax_rows(const Tensor& x, double lambda);
std::vector<double> softmax_sharp(std::span<const double> scores, double lambda);
Tensor log_softmax_rows(const Tensor& x);

// x / max(||x||, eps), row by row.
Tensor l2_normalize_rows(const Tensor& x, double eps = kNormEps);
std::vector<double> l2_normalize(std::span<const double> x, double eps = kNormEps);
double l2_norm(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);

Tensor sum_rows(const Tensor& x);
double sum_all(const Tensor& x);

Tensor reshape(const Tensor& x, std::size_t rows, std::size_t cols);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);

// Row i is column ids[i] of table (embedding lookup).
Tensor gather_cols(const Tensor& table, std::span<const std::size_t> ids);
// Row r is row r of *sources[which[r]].
Tensor pick_rows(std::span<const Tensor* const> sources, std::span<const std::size_t> which);
// Column vector whose entry r is x(r, cols[r]).
Tensor gather_elements(const Tensor& x, std::span<const std::size_t> cols);

}  // namespace dd::grad
