#include "lgmm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lgmm/error.hpp"

namespace lgmm {
namespace {

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shapes " + shape_of(a) + " and " + shape_of(b) +
                     " differ");
  }
}

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  auto src = a.values();
  auto dst = out.values();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k] = f(src[k]);
  return out;
}

template <typename F>
Matrix zip(const Matrix& a, const Matrix& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Matrix out(a.rows(), a.cols());
  auto x = a.values();
  auto y = b.values();
  auto dst = out.values();
  for (std::size_t k = 0; k < x.size(); ++k) dst[k] = f(x[k], y[k]);
  return out;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + shape_of(a) + " * " + shape_of(b) + ")");
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()) + ")");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < arow.size(); ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Matrix sub(const Matrix& a, const Matrix& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  return zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}

Matrix add_row_broadcast(const Matrix& a, const Matrix& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_row_broadcast: bias " + shape_of(bias) + " does not fit " + shape_of(a));
  }
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias(0, j);
  }
  return out;
}

Matrix sub_col_broadcast(const Matrix& a, const Matrix& shift) {
  if (shift.cols() != 1 || shift.rows() != a.rows()) {
    throw ShapeError("sub_col_broadcast: shift " + shape_of(shift) + " does not fit " +
                     shape_of(a));
  }
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (double& v : out.row(i)) v -= shift(i, 0);
  }
  return out;
}

Matrix scale(const Matrix& a, double factor) {
  return map(a, [factor](double x) { return x * factor; });
}

Matrix rectify(const Matrix& a) {
  return map(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Matrix log(const Matrix& a) {
  return map(a, [](double x) { return std::log(x); });
}

Matrix exp(const Matrix& a) {
  return map(a, [](double x) { return std::exp(x); });
}

Matrix col_l2_normalize(const Matrix& a, double eps) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) sq += a(i, j) * a(i, j);
    const double norm = std::sqrt(sq + eps);
    if (norm == 0.0) continue;
    for (std::size_t i = 0; i < a.rows(); ++i) out(i, j) = a(i, j) / norm;
  }
  return out;
}

Matrix row_softmax(const Matrix& a, double temperature) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto src = a.row(i);
    auto dst = out.row(i);
    double peak = -std::numeric_limits<double>::infinity();
    for (double v : src) peak = std::max(peak, v / temperature);
    double total = 0.0;
    for (std::size_t j = 0; j < src.size(); ++j) {
      dst[j] = std::exp(src[j] / temperature - peak);
      total += dst[j];
    }
    for (double& v : dst) v /= total;
  }
  return out;
}

Matrix row_cosine(const Matrix& a, const Matrix& b, double eps) {
  require_same_shape(a, b, "row_cosine");
  Matrix out(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto x = a.row(i);
    auto y = b.row(i);
    double dot = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      dot += x[k] * y[k];
      xx += x[k] * x[k];
      yy += y[k] * y[k];
    }
    const double denom = (std::sqrt(xx) + eps) * (std::sqrt(yy) + eps);
    out(i, 0) = denom == 0.0 ? 0.0 : dot / denom;
  }
  return out;
}

Matrix lse_pool(const Matrix& a, double sharpness) {
  if (a.empty()) throw ContractError("lse_pool: empty score vector");
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : a.values()) peak = std::max(peak, sharpness * v);
  double total = 0.0;
  for (double v : a.values()) total += std::exp(sharpness * v - peak);
  return Matrix::scalar((peak + std::log(total)) / sharpness);
}

Matrix row_logsumexp(const Matrix& a, RowMask mask) {
  if (mask == RowMask::kOffDiagonal && a.rows() != a.cols()) {
    throw ShapeError("row_logsumexp: off-diagonal mask needs a square matrix, got " + shape_of(a));
  }
  Matrix out(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto admitted = [&](std::size_t j) { return mask == RowMask::kNone || j != i; };
    double peak = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (!admitted(j)) continue;
      peak = std::max(peak, a(i, j));
      any = true;
    }
    if (!any) throw ContractError("row_logsumexp: row " + std::to_string(i) + " admits no entries");
    double total = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (admitted(j)) total += std::exp(a(i, j) - peak);
    }
    out(i, 0) = peak + std::log(total);
  }
  return out;
}

Matrix diagonal(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("diagonal: matrix " + shape_of(a) + " is not square");
  Matrix out(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) out(i, 0) = a(i, i);
  return out;
}

Matrix sum(const Matrix& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return Matrix::scalar(total);
}

Matrix stack(std::span<const Matrix> cells, std::size_t rows, std::size_t cols) {
  if (cells.size() != rows * cols) {
    throw ShapeError("stack: " + std::to_string(cells.size()) + " cells for a " +
                     std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
  }
  Matrix out(rows, cols);
  auto dst = out.values();
  for (std::size_t k = 0; k < cells.size(); ++k) dst[k] = cells[k].item();
  return out;
}

Matrix stop_gradient(const Matrix& a) { return a; }

}  // namespace lgmm
