#pragma once

// Reverse-mode differentiation over dense row-major tensors, and Adam.
//
// A Tape records nodes eagerly: each op computes its value on construction
// and remembers how to recompute it (replay) and how to push gradients back
// to its inputs. Parameters are named leaves; constants are leaves without
// gradients. Broadcasting is limited to 1x1 operands in elementwise binary
// ops plus the explicit add_rowwise.

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sghp::diff {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor column(std::vector<double> v);
  static Tensor row(std::vector<double> v);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }
  bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool all_finite() const;
  void fill(double v);

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using NamedArrays = std::map<std::string, Tensor>;

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t index = 0;

  const Tensor& value() const;
  double scalar() const;
};

/// Thrown when an op is evaluated outside its domain; node is the index the
/// offending node has (or would have) on the tape.
class DomainError : public std::domain_error {
 public:
  DomainError(std::size_t node, const std::string& what);
  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

class Tape {
 public:
  using Inputs = std::span<const Tensor* const>;
  using Forward = std::function<Tensor(Inputs)>;
  // (output grad, input values, output value, input grads; null when the
  // input does not need a gradient)
  using Backward = std::function<void(const Tensor&, Inputs, const Tensor&, std::span<Tensor* const>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var constant(double value) { return constant(Tensor::scalar(value)); }
  /// Registers a named differentiable leaf. Names must be unique per tape.
  Var parameter(const std::string& name, Tensor value);

  /// Appends an op node; used by the primitive functions below.
  Var record(const char* op, std::vector<std::size_t> inputs, Forward forward, Backward backward);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t i) const { return nodes_[i].value; }
  const std::string& op(std::size_t i) const { return nodes_[i].op; }
  std::vector<std::string> parameter_names() const;
  const Tensor& parameter_value(const std::string& name) const;

  /// Overwrites a parameter leaf and recomputes every node after it.
  void set_parameter(const std::string& name, const Tensor& value);

  /// Recomputes all op nodes from the current leaf values.
  void replay();

  /// Reverse pass from a scalar root. Returns d root / d parameter for each
  /// registered parameter (zeros when the root does not depend on it).
  NamedArrays backward(Var root) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    Forward forward;
    Backward backward;
    std::string op;
    bool needs_grad = false;
  };

  Tensor run_forward(std::size_t index, const Node& node) const;

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> params_;
};

struct Evaluation {
  double value = 0.0;
  NamedArrays gradients;
};

/// Value of a scalar root and exact reverse-mode gradients for every
/// registered parameter.
Evaluation evaluate(const Tape& tape, Var root);

/// Max over all parameter elements of |analytic - numeric| / max(1, |numeric|)
/// using central differences. Parameters are restored afterwards.
double grad_check(Tape& tape, Var root, double step);

// Elementwise (1x1 operands broadcast).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var pow(Var a, double exponent);
Var neg(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double c);
Var exp(Var a);
Var log(Var a);
Var log1p(Var a);
Var sin(Var a);
Var cos(Var a);
Var abs(Var a);
Var softplus(Var a);
Var sigmoid(Var a);

// Linear algebra and reshaping.
Var matmul(Var a, Var b);
Var matvec(Var m, Var v);  ///< v is a column (n x 1)
Var transpose(Var a);
Var reshape(Var a, std::size_t rows, std::size_t cols);
Var concat_cols(std::span<const Var> parts);
Var concat(std::span<const Var> parts);  ///< stacks flattened inputs into a column
Var add_rowwise(Var m, Var row);         ///< adds a 1 x cols row to each row of m
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::vector<std::size_t> rows);
/// Column of a's flattened elements at the given indices.
Var gather(Var a, std::vector<std::size_t> indices);
/// rows x cols zero tensor with values' elements placed at flat indices
/// (indices must be distinct).
Var scatter(Var values, std::vector<std::size_t> indices, std::size_t rows, std::size_t cols);

// Reductions and classification.
Var sum(Var a);
Var softmax_rows(Var logits);
/// -sum_r log probs(r, target[r]) for a row-stochastic matrix.
Var cross_entropy(Var probs, std::vector<std::size_t> targets);
/// cross_entropy(softmax_rows(logits), targets) in log-sum-exp form.
Var softmax_cross_entropy(Var logits, std::vector<std::size_t> targets);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }

// Scalar helpers shared with non-tape code.
double softplus(double x);
double sigmoid(double x);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  NamedArrays m;
  NamedArrays v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update in place. Moment arrays are created on the
/// first call. Throws sghp::Error("shape_mismatch") when names or shapes of
/// params and grads disagree.
void adam_step(NamedArrays& params, const NamedArrays& grads, AdamState& state);

double global_norm(const NamedArrays& grads);
/// Rescales grads so their global L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_global_norm(NamedArrays& grads, double max_norm);

}  // namespace sghp::diff
