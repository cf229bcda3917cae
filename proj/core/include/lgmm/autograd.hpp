#pragma once

// Reverse-mode differentiation over the primitives in ops.hpp.
//
// A Tape records every primitive application in execution order, which is a
// topological order of the expression graph; backward() walks it in reverse
// once. Forward values are produced by the very same plain functions, so a
// recorded expression evaluates bit-identically to its unrecorded twin.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lgmm/matrix.hpp"
#include "lgmm/ops.hpp"

namespace lgmm {

enum class Primitive : std::uint8_t {
  kMatMul,
  kMatMulNT,
  kTranspose,
  kAdd,
  kSub,
  kHadamard,
  kAddRowBroadcast,
  kSubColBroadcast,
  kScale,
  kRectify,
  kLog,
  kExp,
  kColL2Normalize,
  kRowSoftmax,
  kRowCosine,
  kLsePool,
  kRowLogSumExp,
  kDiagonal,
  kSum,
  kStack,
  kStopGradient,
};

/// Non-differentiable parameters of a primitive application.
struct Attributes {
  double scalar = 0.0;
  RowMask mask = RowMask::kNone;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Name of a registered primitive; throws ContractError for unregistered values.
std::string_view primitive_name(Primitive p);
std::span<const Primitive> registered_primitives();

class Tape;

/// Handle to one recorded value.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input.
  Var leaf(Matrix value);
  /// Input that never receives a gradient.
  Var constant(Matrix value);

  /// Records `p` applied to `inputs`. Throws ContractError for a primitive
  /// without a registered rule, a wrong arity, or inputs from another tape.
  Var apply(Primitive p, std::vector<Var> inputs, Attributes attrs = {});

  /// Accumulates d(root)/d(node) for every node. Root must be 1x1.
  void backward(const Var& root);

  const Matrix& value(const Var& v) const;
  /// Gradient after backward(); all-zero for nodes off every path to the root.
  const Matrix& grad(const Var& v) const;
  bool requires_grad(const Var& v) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() noexcept { nodes_.clear(); }

 private:
  struct Node {
    Primitive op{};
    bool is_input = false;
    bool needs_grad = false;
    std::vector<std::size_t> inputs;
    Attributes attrs;
    Matrix value;
    Matrix grad;
  };

  const Node& node(const Var& v) const;
  Var push(Node node);

  std::vector<Node> nodes_;
};

// Recorded counterparts of the plain primitives. Generic code written against
// Matrix picks these up unchanged.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var add_row_broadcast(const Var& a, const Var& bias);
Var sub_col_broadcast(const Var& a, const Var& shift);
Var scale(const Var& a, double factor);
Var rectify(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
Var col_l2_normalize(const Var& a, double eps);
Var row_softmax(const Var& a, double temperature);
Var row_cosine(const Var& a, const Var& b, double eps);
Var lse_pool(const Var& a, double sharpness);
Var row_logsumexp(const Var& a, RowMask mask);
Var diagonal(const Var& a);
Var sum(const Var& a);
Var stack(std::span<const Var> cells, std::size_t rows, std::size_t cols);
Var stop_gradient(const Var& a);

Var lift(const Var& like, Matrix value);
inline const Matrix& value_of(const Var& v) { return v.value(); }

/// Outcome of comparing backward() against central differences.
struct GradientReport {
  struct Parameter {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
  };

  std::vector<Parameter> parameters;
  double step = 0.0;
  double tolerance = 0.0;
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  /// False when two evaluations at the same point disagreed; the check is void.
  bool deterministic = true;
  bool passed = false;
};

/// Builds a scalar expression from leaves holding `params` (same order).
using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Central differences (f(p+h) - f(p-h)) / 2h per coordinate against the
/// recorded gradient. Relative error uses max(|analytic|, |numeric|, 1e-8).
GradientReport finite_diff_check(const TapeFunction& fn, const std::vector<Matrix>& params,
                                 double step = 1e-5, double tolerance = 1e-4);

/// Evaluates fn at params and returns (value, gradients).
std::pair<double, std::vector<Matrix>> value_and_grad(const TapeFunction& fn,
                                                      const std::vector<Matrix>& params);

}  // namespace lgmm
