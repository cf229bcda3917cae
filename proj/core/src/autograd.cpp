#include "lgmm/autograd.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "lgmm/error.hpp"

namespace lgmm {
namespace {

using Inputs = std::span<const Matrix* const>;
using Grads = std::span<Matrix* const>;

struct Rule {
  Primitive op;
  const char* name;
  std::size_t arity;  // 0 = variadic
  Matrix (*forward)(Inputs in, const Attributes& attrs);
  // Accumulates into grads[k] for every non-null k.
  void (*adjoint)(Inputs in, const Matrix& out, const Matrix& g, const Attributes& attrs,
                  Grads grads);
};

void accumulate(Matrix* target, const Matrix& delta) {
  if (target == nullptr) return;
  auto dst = target->values();
  auto src = delta.values();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
}

void accumulate_scaled(Matrix* target, const Matrix& delta, double factor) {
  if (target == nullptr) return;
  auto dst = target->values();
  auto src = delta.values();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += factor * src[k];
}

const Rule kRules[] = {
    {Primitive::kMatMul, "matmul", 2,
     [](Inputs in, const Attributes&) { return matmul(*in[0], *in[1]); },
     [](Inputs in, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       if (d[0]) accumulate(d[0], matmul_nt(g, *in[1]));
       if (d[1]) accumulate(d[1], matmul(transpose(*in[0]), g));
     }},
    {Primitive::kMatMulNT, "matmul_nt", 2,
     [](Inputs in, const Attributes&) { return matmul_nt(*in[0], *in[1]); },
     [](Inputs in, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       if (d[0]) accumulate(d[0], matmul(g, *in[1]));
       if (d[1]) accumulate(d[1], matmul(transpose(g), *in[0]));
     }},
    {Primitive::kTranspose, "transpose", 1,
     [](Inputs in, const Attributes&) { return transpose(*in[0]); },
     [](Inputs, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       accumulate(d[0], transpose(g));
     }},
    {Primitive::kAdd, "add", 2, [](Inputs in, const Attributes&) { return add(*in[0], *in[1]); },
     [](Inputs, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       accumulate(d[0], g);
       accumulate(d[1], g);
     }},
    {Primitive::kSub, "sub", 2, [](Inputs in, const Attributes&) { return sub(*in[0], *in[1]); },
     [](Inputs, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       accumulate(d[0], g);
       accumulate_scaled(d[1], g, -1.0);
     }},
    {Primitive::kHadamard, "hadamard", 2,
     [](Inputs in, const Attributes&) { return hadamard(*in[0], *in[1]); },
     [](Inputs in, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       if (d[0]) accumulate(d[0], hadamard(g, *in[1]));
       if (d[1]) accumulate(d[1], hadamard(g, *in[0]));
     }},
    {Primitive::kAddRowBroadcast, "add_row_broadcast", 2,
     [](Inputs in, const Attributes&) { return add_row_broadcast(*in[0], *in[1]); },
     [](Inputs, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       accumulate(d[0], g);
       if (d[1]) {
         for (std::size_t i = 0; i < g.rows(); ++i)
           for (std::size_t j = 0; j < g.cols(); ++j) (*d[1])(0, j) += g(i, j);
       }
     }},
    {Primitive::kSubColBroadcast, "sub_col_broadcast", 2,
     [](Inputs in, const Attributes&) { return sub_col_broadcast(*in[0], *in[1]); },
     [](Inputs, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       accumulate(d[0], g);
       if (d[1]) {
         for (std::size_t i = 0; i < g.rows(); ++i)
           for (std::size_t j = 0; j < g.cols(); ++j) (*d[1])(i, 0) -= g(i, j);
       }
     }},
    {Primitive::kScale, "scale", 1,
     [](Inputs in, const Attributes& a) { return scale(*in[0], a.scalar); },
     [](Inputs, const Matrix&, const Matrix& g, const Attributes& a, Grads d) {
       accumulate_scaled(d[0], g, a.scalar);
     }},
    {Primitive::kRectify, "rectify", 1, [](Inputs in, const Attributes&) { return rectify(*in[0]); },
     [](Inputs in, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       if (!d[0]) return;
       auto x = in[0]->values();
       auto gv = g.values();
       auto dst = d[0]->values();
       for (std::size_t k = 0; k < dst.size(); ++k)
         if (x[k] > 0.0) dst[k] += gv[k];
     }},
    {Primitive::kLog, "log", 1, [](Inputs in, const Attributes&) { return log(*in[0]); },
     [](Inputs in, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       if (!d[0]) return;
       auto x = in[0]->values();
       auto gv = g.values();
       auto dst = d[0]->values();
       for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += gv[k] / x[k];
     }},
    {Primitive::kExp, "exp", 1, [](Inputs in, const Attributes&) { return exp(*in[0]); },
     [](Inputs, const Matrix& out, const Matrix& g, const Attributes&, Grads d) {
       if (d[0]) accumulate(d[0], hadamard(g, out));
     }},
    {Primitive::kColL2Normalize, "col_l2_normalize", 1,
     [](Inputs in, const Attributes& a) { return col_l2_normalize(*in[0], a.scalar); },
     [](Inputs in, const Matrix& out, const Matrix& g, const Attributes& a, Grads d) {
       if (!d[0]) return;
       const Matrix& x = *in[0];
       for (std::size_t j = 0; j < x.cols(); ++j) {
         double sq = 0.0;
         for (std::size_t i = 0; i < x.rows(); ++i) sq += x(i, j) * x(i, j);
         const double norm = std::sqrt(sq + a.scalar);
         if (norm == 0.0) continue;
         double proj = 0.0;
         for (std::size_t i = 0; i < x.rows(); ++i) proj += g(i, j) * out(i, j);
         for (std::size_t i = 0; i < x.rows(); ++i)
           (*d[0])(i, j) += (g(i, j) - out(i, j) * proj) / norm;
       }
     }},
    {Primitive::kRowSoftmax, "row_softmax", 1,
     [](Inputs in, const Attributes& a) { return row_softmax(*in[0], a.scalar); },
     [](Inputs, const Matrix& out, const Matrix& g, const Attributes& a, Grads d) {
       if (!d[0]) return;
       for (std::size_t i = 0; i < out.rows(); ++i) {
         double proj = 0.0;
         for (std::size_t j = 0; j < out.cols(); ++j) proj += g(i, j) * out(i, j);
         for (std::size_t j = 0; j < out.cols(); ++j)
           (*d[0])(i, j) += out(i, j) * (g(i, j) - proj) / a.scalar;
       }
     }},
    {Primitive::kRowCosine, "row_cosine", 2,
     [](Inputs in, const Attributes& a) { return row_cosine(*in[0], *in[1], a.scalar); },
     [](Inputs in, const Matrix& out, const Matrix& g, const Attributes& a, Grads d) {
       const Matrix& x = *in[0];
       const Matrix& y = *in[1];
       for (std::size_t i = 0; i < x.rows(); ++i) {
         auto xr = x.row(i);
         auto yr = y.row(i);
         double xx = 0.0, yy = 0.0;
         for (std::size_t k = 0; k < xr.size(); ++k) {
           xx += xr[k] * xr[k];
           yy += yr[k] * yr[k];
         }
         const double nx = std::sqrt(xx);
         const double ny = std::sqrt(yy);
         const double denom = (nx + a.scalar) * (ny + a.scalar);
         if (denom == 0.0) continue;
         const double c = out(i, 0);
         const double gi = g(i, 0);
         const double cx = nx > 0.0 ? c / (nx * (nx + a.scalar)) : 0.0;
         const double cy = ny > 0.0 ? c / (ny * (ny + a.scalar)) : 0.0;
         for (std::size_t k = 0; k < xr.size(); ++k) {
           if (d[0]) (*d[0])(i, k) += gi * (yr[k] / denom - cx * xr[k]);
           if (d[1]) (*d[1])(i, k) += gi * (xr[k] / denom - cy * yr[k]);
         }
       }
     }},
    {Primitive::kLsePool, "lse_pool", 1,
     [](Inputs in, const Attributes& a) { return lse_pool(*in[0], a.scalar); },
     [](Inputs in, const Matrix& out, const Matrix& g, const Attributes& a, Grads d) {
       if (!d[0]) return;
       const double pooled = out.item();
       auto x = in[0]->values();
       auto dst = d[0]->values();
       for (std::size_t k = 0; k < x.size(); ++k)
         dst[k] += g.item() * std::exp(a.scalar * (x[k] - pooled));
     }},
    {Primitive::kRowLogSumExp, "row_logsumexp", 1,
     [](Inputs in, const Attributes& a) { return row_logsumexp(*in[0], a.mask); },
     [](Inputs in, const Matrix& out, const Matrix& g, const Attributes& a, Grads d) {
       if (!d[0]) return;
       const Matrix& x = *in[0];
       for (std::size_t i = 0; i < x.rows(); ++i)
         for (std::size_t j = 0; j < x.cols(); ++j) {
           if (a.mask == RowMask::kOffDiagonal && i == j) continue;
           (*d[0])(i, j) += g(i, 0) * std::exp(x(i, j) - out(i, 0));
         }
     }},
    {Primitive::kDiagonal, "diagonal", 1,
     [](Inputs in, const Attributes&) { return diagonal(*in[0]); },
     [](Inputs, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       if (!d[0]) return;
       for (std::size_t i = 0; i < g.rows(); ++i) (*d[0])(i, i) += g(i, 0);
     }},
    {Primitive::kSum, "sum", 1, [](Inputs in, const Attributes&) { return sum(*in[0]); },
     [](Inputs, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       if (!d[0]) return;
       for (double& v : d[0]->values()) v += g.item();
     }},
    {Primitive::kStack, "stack", 0,
     [](Inputs in, const Attributes& a) {
       std::vector<Matrix> cells;
       cells.reserve(in.size());
       for (const Matrix* m : in) cells.push_back(*m);
       return stack(cells, a.rows, a.cols);
     },
     [](Inputs, const Matrix&, const Matrix& g, const Attributes&, Grads d) {
       auto gv = g.values();
       for (std::size_t k = 0; k < d.size(); ++k)
         if (d[k]) (*d[k])(0, 0) += gv[k];
     }},
    {Primitive::kStopGradient, "stop_gradient", 1,
     [](Inputs in, const Attributes&) { return stop_gradient(*in[0]); },
     [](Inputs, const Matrix&, const Matrix&, const Attributes&, Grads) {}},
};

const Rule* find_rule(Primitive p) {
  const auto index = static_cast<std::size_t>(p);
  if (index >= std::size(kRules) || kRules[index].op != p) return nullptr;
  return &kRules[index];
}

constexpr std::array<Primitive, std::size(kRules)> all_primitives() {
  std::array<Primitive, std::size(kRules)> out{};
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<Primitive>(k);
  return out;
}

constexpr auto kAllPrimitives = all_primitives();

Tape& tape_of(const Var& v) {
  if (v.tape() == nullptr) throw ContractError("variable is not attached to a tape");
  return *v.tape();
}

Var apply_to(Primitive p, std::vector<Var> inputs, Attributes attrs = {}) {
  Tape& t = tape_of(inputs.front());
  return t.apply(p, std::move(inputs), attrs);
}

}  // namespace

std::string_view primitive_name(Primitive p) {
  const Rule* rule = find_rule(p);
  if (rule == nullptr) {
    throw ContractError("primitive #" + std::to_string(static_cast<int>(p)) + " is not registered");
  }
  return rule->name;
}

std::span<const Primitive> registered_primitives() { return kAllPrimitives; }

const Matrix& Var::value() const { return tape_of(*this).value(*this); }
const Matrix& Var::grad() const { return tape_of(*this).grad(*this); }

Var Tape::leaf(Matrix value) {
  Node n;
  n.is_input = true;
  n.needs_grad = true;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.is_input = true;
  n.needs_grad = false;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::apply(Primitive p, std::vector<Var> inputs, Attributes attrs) {
  const Rule* rule = find_rule(p);
  if (rule == nullptr) {
    throw ContractError("cannot record primitive #" + std::to_string(static_cast<int>(p)) +
                        ": no adjoint rule registered");
  }
  if (inputs.empty() || (rule->arity != 0 && inputs.size() != rule->arity)) {
    throw ContractError(std::string(rule->name) + " takes " + std::to_string(rule->arity) +
                        " input(s), got " + std::to_string(inputs.size()));
  }
  Node n;
  n.op = p;
  n.attrs = attrs;
  std::vector<const Matrix*> values;
  values.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ContractError(std::string(rule->name) + ": input from another tape");
    const Node& src = nodes_[v.id()];
    values.push_back(&src.value);
    n.needs_grad = n.needs_grad || src.needs_grad;
    n.inputs.push_back(v.id());
  }
  if (p == Primitive::kStopGradient) n.needs_grad = false;
  n.value = rule->forward(values, attrs);
  return push(std::move(n));
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tape::Node& Tape::node(const Var& v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw ContractError("variable does not belong to this tape");
  }
  return nodes_[v.id()];
}

const Matrix& Tape::value(const Var& v) const { return node(v).value; }

const Matrix& Tape::grad(const Var& v) const {
  const Node& n = node(v);
  if (n.grad.size() != n.value.size()) {
    throw ContractError("no gradient recorded for this variable; call backward() first");
  }
  return n.grad;
}

bool Tape::requires_grad(const Var& v) const { return node(v).needs_grad; }

void Tape::backward(const Var& root) {
  const Node& r = node(root);
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw ContractError("backward() needs a scalar root, got " + std::to_string(r.value.rows()) +
                        "x" + std::to_string(r.value.cols()));
  }
  for (Node& n : nodes_) n.grad = Matrix(n.value.rows(), n.value.cols());
  nodes_[root.id()].grad(0, 0) = 1.0;

  std::vector<const Matrix*> in_values;
  std::vector<Matrix*> in_grads;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.is_input || !n.needs_grad) continue;
    const Rule* rule = find_rule(n.op);
    in_values.clear();
    in_grads.clear();
    for (std::size_t src : n.inputs) {
      in_values.push_back(&nodes_[src].value);
      in_grads.push_back(nodes_[src].needs_grad ? &nodes_[src].grad : nullptr);
    }
    rule->adjoint(in_values, n.value, n.grad, n.attrs, in_grads);
  }
}

Var matmul(const Var& a, const Var& b) { return apply_to(Primitive::kMatMul, {a, b}); }
Var matmul_nt(const Var& a, const Var& b) { return apply_to(Primitive::kMatMulNT, {a, b}); }
Var transpose(const Var& a) { return apply_to(Primitive::kTranspose, {a}); }
Var add(const Var& a, const Var& b) { return apply_to(Primitive::kAdd, {a, b}); }
Var sub(const Var& a, const Var& b) { return apply_to(Primitive::kSub, {a, b}); }
Var hadamard(const Var& a, const Var& b) { return apply_to(Primitive::kHadamard, {a, b}); }
Var add_row_broadcast(const Var& a, const Var& bias) {
  return apply_to(Primitive::kAddRowBroadcast, {a, bias});
}
Var sub_col_broadcast(const Var& a, const Var& shift) {
  return apply_to(Primitive::kSubColBroadcast, {a, shift});
}
Var scale(const Var& a, double factor) {
  return apply_to(Primitive::kScale, {a}, {.scalar = factor});
}
Var rectify(const Var& a) { return apply_to(Primitive::kRectify, {a}); }
Var log(const Var& a) { return apply_to(Primitive::kLog, {a}); }
Var exp(const Var& a) { return apply_to(Primitive::kExp, {a}); }
Var col_l2_normalize(const Var& a, double eps) {
  return apply_to(Primitive::kColL2Normalize, {a}, {.scalar = eps});
}
Var row_softmax(const Var& a, double temperature) {
  return apply_to(Primitive::kRowSoftmax, {a}, {.scalar = temperature});
}
Var row_cosine(const Var& a, const Var& b, double eps) {
  return apply_to(Primitive::kRowCosine, {a, b}, {.scalar = eps});
}
Var lse_pool(const Var& a, double sharpness) {
  return apply_to(Primitive::kLsePool, {a}, {.scalar = sharpness});
}
Var row_logsumexp(const Var& a, RowMask mask) {
  return apply_to(Primitive::kRowLogSumExp, {a}, {.mask = mask});
}
Var diagonal(const Var& a) { return apply_to(Primitive::kDiagonal, {a}); }
Var sum(const Var& a) { return apply_to(Primitive::kSum, {a}); }
Var stack(std::span<const Var> cells, std::size_t rows, std::size_t cols) {
  if (cells.empty()) throw ContractError("stack: no cells");
  return apply_to(Primitive::kStack, std::vector<Var>(cells.begin(), cells.end()),
                  {.rows = rows, .cols = cols});
}
Var stop_gradient(const Var& a) { return apply_to(Primitive::kStopGradient, {a}); }

Var lift(const Var& like, Matrix value) { return tape_of(like).constant(std::move(value)); }

std::pair<double, std::vector<Matrix>> value_and_grad(const TapeFunction& fn,
                                                      const std::vector<Matrix>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Matrix& p : params) leaves.push_back(tape.leaf(p));
  Var root = fn(tape, leaves);
  tape.backward(root);
  std::vector<Matrix> grads;
  grads.reserve(leaves.size());
  for (const Var& v : leaves) grads.push_back(v.grad());
  return {root.value().item(), std::move(grads)};
}

namespace {

double evaluate(const TapeFunction& fn, const std::vector<Matrix>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Matrix& p : params) leaves.push_back(tape.constant(p));
  return fn(tape, leaves).value().item();
}

}  // namespace

GradientReport finite_diff_check(const TapeFunction& fn, const std::vector<Matrix>& params,
                                 double step, double tolerance) {
  if (!(step > 0.0)) throw ContractError("finite-difference step must be > 0");
  GradientReport report;
  report.step = step;
  report.tolerance = tolerance;

  const auto [value, analytic] = value_and_grad(fn, params);
  const double again = evaluate(fn, params);
  if (again != value || evaluate(fn, params) != again) {
    report.deterministic = false;
    report.passed = false;
    return report;
  }

  std::vector<Matrix> probe = params;
  report.parameters.resize(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto coords = probe[p].values();
    for (std::size_t k = 0; k < coords.size(); ++k) {
      const double saved = coords[k];
      coords[k] = saved + step;
      const double up = evaluate(fn, probe);
      coords[k] = saved - step;
      const double down = evaluate(fn, probe);
      coords[k] = saved;

      const double numeric = (up - down) / (2.0 * step);
      const double exact = analytic[p].values()[k];
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
      const double rel = std::abs(exact - numeric) / denom;
      auto& entry = report.parameters[p];
      if (rel > entry.max_relative_error) {
        entry.max_relative_error = rel;
        entry.worst_index = k;
      }
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_parameter = p;
        report.worst_index = k;
        report.worst_analytic = exact;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_relative_error <= tolerance;
  return report;
}

}  // namespace lgmm
