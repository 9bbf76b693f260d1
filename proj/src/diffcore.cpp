#include "sghp/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sghp/error.hpp"

namespace sghp::diff {

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw Error("shape_mismatch", "tensor data does not match its shape");
}

Tensor Tensor::column(std::vector<double> v) {
  const auto n = v.size();
  return Tensor(n, 1, std::move(v));
}

Tensor Tensor::row(std::vector<double> v) {
  const auto n = v.size();
  return Tensor(1, n, std::move(v));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

// ---------------------------------------------------------------- Tape

const Tensor& Var::value() const { return tape->value(index); }

double Var::scalar() const {
  const Tensor& v = value();
  if (!v.is_scalar()) throw Error("shape_mismatch", "node is not a scalar");
  return v[0];
}

DomainError::DomainError(std::size_t node, const std::string& what)
    : std::domain_error("node " + std::to_string(node) + ": " + what), node_(node) {}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(const std::string& name, Tensor value) {
  if (params_.contains(name)) throw Error("duplicate_parameter", "parameter registered twice: " + name);
  Node n;
  n.value = std::move(value);
  n.op = "parameter";
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  params_[name] = nodes_.size() - 1;
  return {this, nodes_.size() - 1};
}

Tensor Tape::run_forward(std::size_t index, const Node& node) const {
  std::vector<const Tensor*> in;
  in.reserve(node.inputs.size());
  for (auto i : node.inputs) in.push_back(&nodes_[i].value);
  try {
    Tensor out = node.forward(in);
    if (!out.all_finite()) throw std::domain_error("non-finite result");
    return out;
  } catch (const DomainError&) {
    throw;
  } catch (const std::domain_error& e) {
    throw DomainError(index, std::string(node.op) + ": " + e.what());
  }
}

Var Tape::record(const char* op, std::vector<std::size_t> inputs, Forward forward, Backward backward) {
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  for (auto i : n.inputs) n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
  n.value = run_forward(nodes_.size(), n);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

std::vector<std::string> Tape::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : params_) names.push_back(name);
  return names;
}

const Tensor& Tape::parameter_value(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown_parameter", "no parameter named " + name);
  return nodes_[it->second].value;
}

void Tape::set_parameter(const std::string& name, const Tensor& value) {
  const auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown_parameter", "no parameter named " + name);
  Node& leaf = nodes_[it->second];
  if (!leaf.value.same_shape(value)) throw Error("shape_mismatch", "parameter shape changed: " + name);
  leaf.value = value;
  for (std::size_t i = it->second + 1; i < nodes_.size(); ++i)
    if (nodes_[i].forward) nodes_[i].value = run_forward(i, nodes_[i]);
}

void Tape::replay() {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].forward) nodes_[i].value = run_forward(i, nodes_[i]);
}

NamedArrays Tape::backward(Var root) const {
  if (root.tape != this) throw Error("foreign_node", "root belongs to another tape");
  if (!nodes_[root.index].value.is_scalar()) throw Error("non_scalar_root", "root node is not a scalar");

  std::vector<Tensor> grads(root.index + 1);
  if (nodes_[root.index].needs_grad) grads[root.index] = Tensor::scalar(1.0);

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t i = root.index + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.needs_grad || !n.backward || grads[i].size() == 0) continue;
    in_values.clear();
    in_grads.clear();
    for (auto j : n.inputs) {
      in_values.push_back(&nodes_[j].value);
      if (nodes_[j].needs_grad) {
        if (grads[j].size() == 0) grads[j] = Tensor(nodes_[j].value.rows(), nodes_[j].value.cols());
        in_grads.push_back(&grads[j]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    n.backward(grads[i], in_values, n.value, in_grads);
  }

  NamedArrays out;
  for (const auto& [name, idx] : params_) {
    if (idx <= root.index && grads[idx].size() != 0) {
      out[name] = std::move(grads[idx]);
    } else {
      out[name] = Tensor(nodes_[idx].value.rows(), nodes_[idx].value.cols());
    }
  }
  return out;
}

Evaluation evaluate(const Tape& tape, Var root) {
  Evaluation e;
  e.gradients = tape.backward(root);
  e.value = root.scalar();
  return e;
}

double grad_check(Tape& tape, Var root, double step) {
  if (!(step > 0.0)) throw Error("invalid_step", "finite-difference step must be positive");
  const NamedArrays analytic = tape.backward(root);
  double worst = 0.0;
  for (const auto& name : tape.parameter_names()) {
    const Tensor original = tape.parameter_value(name);
    Tensor probe = original;
    for (std::size_t k = 0; k < original.size(); ++k) {
      probe[k] = original[k] + step;
      tape.set_parameter(name, probe);
      const double up = root.scalar();
      probe[k] = original[k] - step;
      tape.set_parameter(name, probe);
      const double down = root.scalar();
      probe[k] = original[k];
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(analytic.at(name)[k] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
    tape.set_parameter(name, original);
  }
  return worst;
}

// ---------------------------------------------------------------- helpers

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

Tape& tape_of(Var a) { return *a.tape; }

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw Error("foreign_node", "operands live on different tapes");
}

std::vector<std::size_t> ids(std::span<const Var> parts) {
  std::vector<std::size_t> out;
  for (const auto& p : parts) out.push_back(p.index);
  return out;
}

// Elementwise unary op: f(x) for the value, df(x, y) for dy/dx.
template <class F, class DF>
Var unary(const char* name, Var a, F f, DF df) {
  return tape_of(a).record(
      name, {a.index},
      [f](Tape::Inputs in) {
        const Tensor& x = *in[0];
        Tensor y(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
        return y;
      },
      [df](const Tensor& g, Tape::Inputs in, const Tensor& y, std::span<Tensor* const> gi) {
        const Tensor& x = *in[0];
        Tensor& gx = *gi[0];
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], y[i]);
      });
}

void check_binary_shapes(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b) && !a.is_scalar() && !b.is_scalar())
    throw Error("shape_mismatch", "elementwise operands have incompatible shapes");
}

// Elementwise binary op with 1x1 broadcasting. dfa/dfb give partials
// w.r.t. the left and right operand.
template <class F, class DFA, class DFB>
Var binary(const char* name, Var a, Var b, F f, DFA dfa, DFB dfb) {
  check_same_tape(a, b);
  check_binary_shapes(a.value(), b.value());
  return tape_of(a).record(
      name, {a.index, b.index},
      [f](Tape::Inputs in) {
        const Tensor& x = *in[0];
        const Tensor& z = *in[1];
        const bool xs = x.is_scalar() && !z.is_scalar();
        const bool zs = z.is_scalar() && !x.is_scalar();
        const Tensor& shape = xs ? z : x;
        Tensor y(shape.rows(), shape.cols());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xs ? x[0] : x[i], zs ? z[0] : z[i]);
        return y;
      },
      [dfa, dfb](const Tensor& g, Tape::Inputs in, const Tensor& y, std::span<Tensor* const> gi) {
        const Tensor& x = *in[0];
        const Tensor& z = *in[1];
        const bool xs = x.is_scalar() && !z.is_scalar();
        const bool zs = z.is_scalar() && !x.is_scalar();
        for (std::size_t i = 0; i < y.size(); ++i) {
          const double xv = xs ? x[0] : x[i];
          const double zv = zs ? z[0] : z[i];
          if (gi[0]) (*gi[0])[xs ? 0 : i] += g[i] * dfa(xv, zv, y[i]);
          if (gi[1]) (*gi[1])[zs ? 0 : i] += g[i] * dfb(xv, zv, y[i]);
        }
      });
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double z) { return x + z; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double z) { return x - z; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double z) { return x * z; }, [](double, double z, double) { return z; },
      [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b,
      [](double x, double z) {
        if (z == 0.0) throw std::domain_error("division by zero");
        return x / z;
      },
      [](double, double z, double) { return 1.0 / z; }, [](double, double z, double y) { return -y / z; });
}

Var pow(Var a, double e) {
  return unary(
      "pow", a,
      [e](double x) {
        if (x < 0.0 && e != std::floor(e)) throw std::domain_error("negative base with fractional exponent");
        if (x == 0.0 && e < 0.0) throw std::domain_error("zero base with negative exponent");
        return std::pow(x, e);
      },
      [e](double x, double) { return e == 0.0 ? 0.0 : e * std::pow(x, e - 1.0); });
}

Var neg(Var a) {
  return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double c) {
  return unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      "log", a,
      [](double x) {
        if (!(x > 0.0)) throw std::domain_error("log of nonpositive value");
        return std::log(x);
      },
      [](double x, double) { return 1.0 / x; });
}

Var log1p(Var a) {
  return unary(
      "log1p", a,
      [](double x) {
        if (!(x > -1.0)) throw std::domain_error("log1p of value <= -1");
        return std::log1p(x);
      },
      [](double x, double) { return 1.0 / (1.0 + x); });
}

Var sin(Var a) {
  return unary("sin", a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var cos(Var a) {
  return unary("cos", a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Var abs(Var a) {
  // Subgradient 0 at the kink.
  return unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var softplus(Var a) {
  return unary(
      "softplus", a, [](double x) { return softplus(x); }, [](double x, double) { return sigmoid(x); });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a, [](double x) { return sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  if (a.value().cols() != b.value().rows()) throw Error("shape_mismatch", "matmul inner dimensions differ");
  return tape_of(a).record(
      "matmul", {a.index, b.index},
      [](Tape::Inputs in) {
        const Tensor& x = *in[0];
        const Tensor& z = *in[1];
        const std::size_t m = x.rows(), k = x.cols(), n = z.cols();
        Tensor y(m, n);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double xv = x(i, p);
            if (xv == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) y(i, j) += xv * z(p, j);
          }
        return y;
      },
      [](const Tensor& g, Tape::Inputs in, const Tensor&, std::span<Tensor* const> gi) {
        const Tensor& x = *in[0];
        const Tensor& z = *in[1];
        const std::size_t m = x.rows(), k = x.cols(), n = z.cols();
        if (gi[0]) {
          Tensor& gx = *gi[0];  // g z^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += g(i, j) * z(p, j);
              gx(i, p) += s;
            }
        }
        if (gi[1]) {
          Tensor& gz = *gi[1];  // x^T g
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double xv = x(i, p);
              if (xv == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gz(p, j) += xv * g(i, j);
            }
        }
      });
}

Var matvec(Var m, Var v) {
  if (v.value().cols() != 1) throw Error("shape_mismatch", "matvec expects a column vector");
  return matmul(m, v);
}

Var transpose(Var a) {
  return tape_of(a).record(
      "transpose", {a.index},
      [](Tape::Inputs in) {
        const Tensor& x = *in[0];
        Tensor y(x.cols(), x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) y(j, i) = x(i, j);
        return y;
      },
      [](const Tensor& g, Tape::Inputs in, const Tensor&, std::span<Tensor* const> gi) {
        const Tensor& x = *in[0];
        Tensor& gx = *gi[0];
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) gx(i, j) += g(j, i);
      });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  if (a.value().size() != rows * cols) throw Error("shape_mismatch", "reshape changes element count");
  return tape_of(a).record(
      "reshape", {a.index},
      [rows, cols](Tape::Inputs in) {
        return Tensor(rows, cols, std::vector<double>(in[0]->values()));
      },
      [](const Tensor& g, Tape::Inputs, const Tensor&, std::span<Tensor* const> gi) {
        Tensor& gx = *gi[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("shape_mismatch", "concat_cols needs at least one input");
  const std::size_t rows = parts[0].value().rows();
  for (const auto& p : parts) {
    check_same_tape(parts[0], p);
    if (p.value().rows() != rows) throw Error("shape_mismatch", "concat_cols row counts differ");
  }
  return tape_of(parts[0]).record(
      "concat_cols", ids(parts),
      [rows](Tape::Inputs in) {
        std::size_t cols = 0;
        for (const auto* t : in) cols += t->cols();
        Tensor y(rows, cols);
        std::size_t off = 0;
        for (const auto* t : in) {
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < t->cols(); ++j) y(i, off + j) = (*t)(i, j);
          off += t->cols();
        }
        return y;
      },
      [rows](const Tensor& g, Tape::Inputs in, const Tensor&, std::span<Tensor* const> gi) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < in.size(); ++p) {
          const std::size_t c = in[p]->cols();
          if (gi[p])
            for (std::size_t i = 0; i < rows; ++i)
              for (std::size_t j = 0; j < c; ++j) (*gi[p])(i, j) += g(i, off + j);
          off += c;
        }
      });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw Error("shape_mismatch", "concat needs at least one input");
  for (const auto& p : parts) check_same_tape(parts[0], p);
  return tape_of(parts[0]).record(
      "concat", ids(parts),
      [](Tape::Inputs in) {
        std::vector<double> out;
        for (const auto* t : in) out.insert(out.end(), t->values().begin(), t->values().end());
        return Tensor::column(std::move(out));
      },
      [](const Tensor& g, Tape::Inputs in, const Tensor&, std::span<Tensor* const> gi) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < in.size(); ++p) {
          if (gi[p])
            for (std::size_t i = 0; i < in[p]->size(); ++i) (*gi[p])[i] += g[off + i];
          off += in[p]->size();
        }
      });
}

Var add_rowwise(Var m, Var row) {
  check_same_tape(m, row);
  if (row.value().rows() != 1 || row.value().cols() != m.value().cols())
    throw Error("shape_mismatch", "add_rowwise expects a 1 x cols row");
  return tape_of(m).record(
      "add_rowwise", {m.index, row.index},
      [](Tape::Inputs in) {
        Tensor y = *in[0];
        const Tensor& r = *in[1];
        for (std::size_t i = 0; i < y.rows(); ++i)
          for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += r[j];
        return y;
      },
      [](const Tensor& g, Tape::Inputs, const Tensor&, std::span<Tensor* const> gi) {
        if (gi[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
        if (gi[1])
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) (*gi[1])[j] += g(i, j);
      });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.value().rows()) throw Error("shape_mismatch", "slice_rows out of range");
  return tape_of(a).record(
      "slice_rows", {a.index},
      [begin, end](Tape::Inputs in) {
        const Tensor& x = *in[0];
        const auto c = x.cols();
        return Tensor(end - begin, c,
                      std::vector<double>(x.values().begin() + static_cast<std::ptrdiff_t>(begin * c),
                                          x.values().begin() + static_cast<std::ptrdiff_t>(end * c)));
      },
      [begin](const Tensor& g, Tape::Inputs, const Tensor&, std::span<Tensor* const> gi) {
        Tensor& gx = *gi[0];
        const auto off = begin * g.cols();
        for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
      });
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  for (auto r : rows)
    if (r >= a.value().rows()) throw Error("index_out_of_range", "gather_rows index out of range");
  return tape_of(a).record(
      "gather_rows", {a.index},
      [rows](Tape::Inputs in) {
        const Tensor& x = *in[0];
        Tensor y(rows.size(), x.cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = x(rows[i], j);
        return y;
      },
      [rows](const Tensor& g, Tape::Inputs, const Tensor&, std::span<Tensor* const> gi) {
        Tensor& gx = *gi[0];
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gx(rows[i], j) += g(i, j);
      });
}

Var gather(Var a, std::vector<std::size_t> indices) {
  for (auto i : indices)
    if (i >= a.value().size()) throw Error("index_out_of_range", "gather index out of range");
  return tape_of(a).record(
      "gather", {a.index},
      [indices](Tape::Inputs in) {
        const Tensor& x = *in[0];
        Tensor y(indices.size(), 1);
        for (std::size_t i = 0; i < indices.size(); ++i) y[i] = x[indices[i]];
        return y;
      },
      [indices](const Tensor& g, Tape::Inputs, const Tensor&, std::span<Tensor* const> gi) {
        Tensor& gx = *gi[0];
        for (std::size_t i = 0; i < indices.size(); ++i) gx[indices[i]] += g[i];
      });
}

Var scatter(Var values, std::vector<std::size_t> indices, std::size_t rows, std::size_t cols) {
  if (indices.size() != values.value().size()) throw Error("shape_mismatch", "scatter index count differs");
  for (auto i : indices)
    if (i >= rows * cols) throw Error("index_out_of_range", "scatter index out of range");
  return tape_of(values).record(
      "scatter", {values.index},
      [indices, rows, cols](Tape::Inputs in) {
        const Tensor& x = *in[0];
        Tensor y(rows, cols);
        for (std::size_t i = 0; i < indices.size(); ++i) y[indices[i]] = x[i];
        return y;
      },
      [indices](const Tensor& g, Tape::Inputs, const Tensor&, std::span<Tensor* const> gi) {
        Tensor& gx = *gi[0];
        for (std::size_t i = 0; i < indices.size(); ++i) gx[i] += g[indices[i]];
      });
}

// ---------------------------------------------------------------- reductions

Var sum(Var a) {
  return tape_of(a).record(
      "sum", {a.index},
      [](Tape::Inputs in) {
        const auto& v = in[0]->values();
        return Tensor::scalar(std::accumulate(v.begin(), v.end(), 0.0));
      },
      [](const Tensor& g, Tape::Inputs, const Tensor&, std::span<Tensor* const> gi) {
        Tensor& gx = *gi[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
      });
}

namespace {

void softmax_row(const Tensor& x, std::size_t r, Tensor& y) {
  double mx = x(r, 0);
  for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(r, j));
  double z = 0.0;
  for (std::size_t j = 0; j < x.cols(); ++j) z += (y(r, j) = std::exp(x(r, j) - mx));
  for (std::size_t j = 0; j < x.cols(); ++j) y(r, j) /= z;
}

void check_targets(const Tensor& x, const std::vector<std::size_t>& targets) {
  if (targets.size() != x.rows()) throw Error("shape_mismatch", "one target per row required");
  for (auto t : targets)
    if (t >= x.cols()) throw Error("index_out_of_range", "target class out of range");
}

}  // namespace

Var softmax_rows(Var logits) {
  return tape_of(logits).record(
      "softmax_rows", {logits.index},
      [](Tape::Inputs in) {
        const Tensor& x = *in[0];
        Tensor y(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) softmax_row(x, r, y);
        return y;
      },
      [](const Tensor& g, Tape::Inputs, const Tensor& y, std::span<Tensor* const> gi) {
        Tensor& gx = *gi[0];
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += g(r, j) * y(r, j);
          for (std::size_t j = 0; j < y.cols(); ++j) gx(r, j) += y(r, j) * (g(r, j) - dot);
        }
      });
}

Var cross_entropy(Var probs, std::vector<std::size_t> targets) {
  check_targets(probs.value(), targets);
  return tape_of(probs).record(
      "cross_entropy", {probs.index},
      [targets](Tape::Inputs in) {
        const Tensor& p = *in[0];
        double loss = 0.0;
        for (std::size_t r = 0; r < p.rows(); ++r) {
          const double v = p(r, targets[r]);
          if (!(v > 0.0)) throw std::domain_error("log of nonpositive probability");
          loss -= std::log(v);
        }
        return Tensor::scalar(loss);
      },
      [targets](const Tensor& g, Tape::Inputs in, const Tensor&, std::span<Tensor* const> gi) {
        const Tensor& p = *in[0];
        Tensor& gp = *gi[0];
        for (std::size_t r = 0; r < p.rows(); ++r) gp(r, targets[r]) -= g[0] / p(r, targets[r]);
      });
}

Var softmax_cross_entropy(Var logits, std::vector<std::size_t> targets) {
  check_targets(logits.value(), targets);
  return tape_of(logits).record(
      "softmax_cross_entropy", {logits.index},
      [targets](Tape::Inputs in) {
        const Tensor& x = *in[0];
        double loss = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double mx = x(r, 0);
          for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(r, j));
          double z = 0.0;
          for (std::size_t j = 0; j < x.cols(); ++j) z += std::exp(x(r, j) - mx);
          loss += mx + std::log(z) - x(r, targets[r]);
        }
        return Tensor::scalar(loss);
      },
      [targets](const Tensor& g, Tape::Inputs in, const Tensor&, std::span<Tensor* const> gi) {
        const Tensor& x = *in[0];
        Tensor& gx = *gi[0];
        Tensor p(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) {
          softmax_row(x, r, p);
          for (std::size_t j = 0; j < x.cols(); ++j)
            gx(r, j) += g[0] * (p(r, j) - (j == targets[r] ? 1.0 : 0.0));
        }
      });
}

// ---------------------------------------------------------------- Adam

void adam_step(NamedArrays& params, const NamedArrays& grads, AdamState& state) {
  if (params.size() != grads.size()) throw Error("shape_mismatch", "parameter and gradient sets differ");
  for (const auto& [name, p] : params) {
    const auto it = grads.find(name);
    if (it == grads.end()) throw Error("shape_mismatch", "missing gradient for " + name);
    if (!it->second.same_shape(p)) throw Error("shape_mismatch", "gradient shape differs for " + name);
    for (auto* moments : {&state.m, &state.v}) {
      auto [slot, inserted] = moments->try_emplace(name, p.rows(), p.cols());
      if (!slot->second.same_shape(p)) throw Error("shape_mismatch", "moment shape differs for " + name);
    }
  }

  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

double global_norm(const NamedArrays& grads) {
  double s = 0.0;
  for (const auto& [_, g] : grads)
    for (double x : g.values()) s += x * x;
  return std::sqrt(s);
}

double clip_global_norm(NamedArrays& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& [_, g] : grads)
      for (double& x : g.data()) x *= f;
  }
  return norm;
}

}  // namespace sghp::diff
