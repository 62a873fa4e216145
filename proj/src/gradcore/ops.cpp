#include "drilldown/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dd::grad {

namespace {

void require(bool ok, const char* op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                         b.shape_string());
  }
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require(a.same_shape(b), op, a, b);
  Tensor out({a.rows(), a.cols()});
  auto x = a.data();
  auto y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.row(i).data();
    const double* ai = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      if (s == 0.0) continue;
      const double* bp = b.row(p).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += s * bp[j];
    }
  }
  return out;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_bt", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.row(i).data();
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.row(j).data();
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      out(i, j) = acc;
    }
  }
  return out;
}

Tensor matmul_at(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows(), "matmul_at", a, b);
  const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
  Tensor out({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a.row(p).data();
    const double* bp = b.row(p).data();
    for (std::size_t i = 0; i < m; ++i) {
      const double s = ap[i];
      if (s == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += s * bp[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double s) {
  Tensor out({a.rows(), a.cols()});
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  return out;
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require(bias.rows() == 1 && bias.cols() == a.cols(), "add_row", a, bias);
  Tensor out({a.rows(), a.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) + bias[j];
  return out;
}

void add_inplace(Tensor& acc, const Tensor& x) {
  require(acc.same_shape(x), "add_inplace", acc, x);
  for (std::size_t i = 0; i < x.numel(); ++i) acc[i] += x[i];
}

Tensor activate(const Tensor& x, Activation kind) {
  Tensor out({x.rows(), x.cols()});
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    switch (kind) {
      case Activation::relu: out[i] = v > 0.0 ? v : 0.0; break;
      case Activation::sigmoid: out[i] = 1.0 / (1.0 + std::exp(-v)); break;
      case Activation::tanh: out[i] = std::tanh(v); break;
    }
  }
  return out;
}

Tensor softmax_rows(const Tensor& x, double lambda) {
  if (x.cols() == 0) throw DimensionError("softmax over an empty row");
  if (!(lambda > 0.0)) throw std::invalid_argument("softmax sharpness must be positive");
  Tensor out({x.rows(), x.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    const double top = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(lambda * (in[j] - top));
      total += o[j];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

std::vector<double> softmax_sharp(std::span<const double> scores, double lambda) {
  if (scores.empty()) throw DimensionError("softmax over an empty vector");
  Tensor row = softmax_rows(Tensor::row_vector({scores.begin(), scores.end()}), lambda);
  return row.values();
}

Tensor log_softmax_rows(const Tensor& x) {
  if (x.cols() == 0) throw DimensionError("log-softmax over an empty row");
  Tensor out({x.rows(), x.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    const double top = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (double v : in) total += std::exp(v - top);
    const double log_z = top + std::log(total);
    for (std::size_t j = 0; j < in.size(); ++j) out(r, j) = in[j] - log_z;
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  Tensor out({x.rows(), x.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    const double denom = std::max(l2_norm(in), eps);
    auto o = out.row(r);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] / denom;
  }
  return out;
}

std::vector<double> l2_normalize(std::span<const double> x, double eps) {
  return l2_normalize_rows(Tensor::row_vector({x.begin(), x.end()}), eps).values();
}

Tensor sum_rows(const Tensor& x) {
  Tensor out({x.rows(), 1});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double acc = 0.0;
    for (double v : x.row(r)) acc += v;
    out[r] = acc;
  }
  return out;
}

double sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return acc;
}

Tensor reshape(const Tensor& x, std::size_t rows, std::size_t cols) {
  if (rows * cols != x.numel()) {
    throw DimensionError("reshape " + x.shape_string() + " to " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
  return Tensor({rows, cols}, x.values());
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows(), "concat_cols", a, b);
  Tensor out({a.rows(), a.cols() + b.cols()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto o = out.row(r);
    std::copy(a.row(r).begin(), a.row(r).end(), o.begin());
    std::copy(b.row(r).begin(), b.row(r).end(), o.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == parts[0].cols(), "concat_rows", parts[0], p);
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * parts[0].cols());
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor({rows, parts[0].cols()}, std::move(data));
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.rows()) {
    throw DimensionError("slice_rows out of range on " + x.shape_string());
  }
  auto first = x.data().begin() + static_cast<std::ptrdiff_t>(begin * x.cols());
  return Tensor({count, x.cols()}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * x.cols())));
}

Tensor gather_cols(const Tensor& table, std::span<const std::size_t> ids) {
  Tensor out({ids.size(), table.rows()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.cols()) {
      throw DimensionError("gather_cols: id " + std::to_string(ids[i]) + " out of range for " +
                           table.shape_string());
    }
    for (std::size_t e = 0; e < table.rows(); ++e) out(i, e) = table(e, ids[i]);
  }
  return out;
}

Tensor pick_rows(std::span<const Tensor* const> sources, std::span<const std::size_t> which) {
  if (sources.empty()) throw DimensionError("pick_rows: no sources");
  const Tensor& first = *sources[0];
  for (const Tensor* s : sources) require(s->same_shape(first), "pick_rows", first, *s);
  if (which.size() != first.rows()) throw DimensionError("pick_rows: selector length mismatch");
  Tensor out({first.rows(), first.cols()});
  for (std::size_t r = 0; r < which.size(); ++r) {
    if (which[r] >= sources.size()) throw DimensionError("pick_rows: source index out of range");
    auto src = sources[which[r]]->row(r);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

Tensor gather_elements(const Tensor& x, std::span<const std::size_t> cols) {
  if (cols.size() != x.rows()) throw DimensionError("gather_elements: selector length mismatch");
  Tensor out({x.rows(), 1});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (cols[r] >= x.cols()) throw DimensionError("gather_elements: column out of range");
    out[r] = x(r, cols[r]);
  }
  return out;
}

}  // namespace dd::grad
