#pragma once

// Dense numeric primitives shared by the plain evaluation path and the
// gradient tape. Every composite (kernel score, losses, projection) is
// written in terms of these, so a recorded computation reproduces the plain
// one bit-for-bit.

#include <span>

#include "lgmm/matrix.hpp"

namespace lgmm {

enum class RowMask { kNone, kOffDiagonal };

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
/// a[i][j] + bias[0][j]
Matrix add_row_broadcast(const Matrix& a, const Matrix& bias);
/// a[i][j] - shift[i][0]
Matrix sub_col_broadcast(const Matrix& a, const Matrix& shift);
Matrix scale(const Matrix& a, double factor);

Matrix rectify(const Matrix& a);
Matrix log(const Matrix& a);
Matrix exp(const Matrix& a);

/// Divides every entry by the L2 norm of its column, sqrt(sum_i a_ij^2 + eps).
/// Columns whose norm is zero map to zero.
Matrix col_l2_normalize(const Matrix& a, double eps);
/// Softmax of a / temperature along each row.
Matrix row_softmax(const Matrix& a, double temperature);
/// n x 1 vector of cosines between matching rows, eps added to each norm.
Matrix row_cosine(const Matrix& a, const Matrix& b, double eps);
/// (1/sharpness) * log(sum over all entries of exp(sharpness * a)), as 1x1.
Matrix lse_pool(const Matrix& a, double sharpness);
/// n x 1 vector of log(sum_j exp(a_ij)) over the entries admitted by mask.
Matrix row_logsumexp(const Matrix& a, RowMask mask);
/// n x 1 diagonal of a square matrix.
Matrix diagonal(const Matrix& a);
/// 1x1 sum of all entries.
Matrix sum(const Matrix& a);
/// Assembles 1x1 cells (row-major order) into a rows x cols matrix.
Matrix stack(std::span<const Matrix> cells, std::size_t rows, std::size_t cols);
/// Identity on values; the tape version blocks gradients.
Matrix stop_gradient(const Matrix& a);

/// Plain-value constant in the same "space" as `like`; used by generic code.
inline Matrix lift(const Matrix& /*like*/, Matrix value) { return value; }
inline const Matrix& value_of(const Matrix& m) { return m; }

}  // namespace lgmm
