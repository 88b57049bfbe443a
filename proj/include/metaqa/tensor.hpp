#pragma once

// Dense 64-bit tensors and a tape-based reverse-mode differentiator.
//
// A Tape records every primitive application whose inputs require gradients.
// Leaves are either constants or references to Parameters; gradients of
// parameter leaves are accumulated straight into Parameter::grad, so several
// tapes (one per example of a batch) can contribute to the same step. The
// caller zeroes gradients between steps.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace metaqa {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 view: rank-1 tensors are treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const;
  void fill(double value);

  // Bitwise equality of shape and payload (distinguishes -0.0 from 0.0 and
  // treats identical NaN payloads as equal).
  bool bit_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool requires_grad = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad();
};

enum class Op : std::uint8_t {
  kLeaf,
  kMatMul,
  kAdd,
  kMul,
  kScale,
  kTranspose,
  kSoftmaxRows,
  kLayerNorm,
  kGelu,
  kEmbedding,
  kConcat,
  kSlice,
  kSigmoid,
  kLog,
  kSum,
  kBce,
  kCrossEntropy,
};

const char* op_name(Op op);

class Tape;

// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

// One recorded primitive application. Attributes that are not used by an op
// keep their defaults.
struct Node {
  Op op = Op::kLeaf;
  std::vector<std::size_t> inputs;
  Tensor value;
  const Tensor* external = nullptr;  // parameter or borrowed constant storage
  Parameter* param = nullptr;
  bool requires_grad = false;

  double scalar = 0.0;                 // scale factor, layer-norm eps
  std::size_t axis = 0;                // concat/slice axis
  std::size_t begin = 0;               // slice bounds
  std::size_t end = 0;
  std::vector<std::size_t> indices;    // embedding ids
  Tensor target;                       // BCE labels, CE target distribution
  Tensor saved;                        // layer-norm x_hat, softmax probs for CE
  Tensor saved_aux;                    // layer-norm inverse std

  const Tensor& val() const { return external != nullptr ? *external : value; }
};

// The computation record for one forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor value);
  // Borrows storage; the tensor must outlive the tape.
  Var constant_ref(const Tensor& value);
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_[v.id].val(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  // Number of non-leaf nodes (recorded primitive applications).
  std::size_t op_count() const;

  // Propagates d(loss)/d(node) back to every parameter leaf. Gradients are
  // added to Parameter::grad; nothing is cleared.
  void backward(Var loss);

  // Recomputes every node from the leaves using the recorded ops and returns
  // the values in node order.
  std::vector<Tensor> replay() const;

  // Internal: append a node whose value has already been computed.
  Var push(Node node);

 private:
  std::vector<Node> nodes_;
};

// Primitives. When none of the inputs requires a gradient the result is
// stored as a constant leaf instead of being recorded.
Var matmul(Var a, Var b);
// Elementwise sum; b may also be a row vector ([d] or [1 x d]) broadcast over
// the rows of a.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var transpose(Var a);
Var softmax_rows(Var m);
Var layer_norm(Var x, Var gamma, Var beta, double eps);
Var gelu(Var x);
Var embedding(Var table, std::span<const std::size_t> ids);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var sigmoid(Var x);
Var log(Var x);
Var sum(Var x);
// Sum over elements of -(y log p + (1 - y) log(1 - p)).
Var bce(Var probs, const Tensor& labels);
// -sum_j t_j log softmax(logits)_j for a single row of logits; masked logits
// (-inf) must carry zero target mass.
Var cross_entropy(Var logits, const Tensor& target);
Var detach(Var x);

// Forward kernels shared by op construction and Tape::replay.
namespace kernels {
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& m);
double gelu(double x);
double gelu_grad(double x);
}  // namespace kernels

struct GradEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradReport {
  std::vector<GradEntry> entries;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

double relative_error(double analytic, double numeric);

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  std::size_t sample = 200;
  std::uint64_t seed = 0;
  // Test hook: added to every analytic gradient before comparison.
  double corrupt_analytic = 0.0;
};

// Builds the scalar loss on the given tape.
using LossBuilder = std::function<Var(Tape&)>;

// Central-difference check of `sample` randomly chosen scalar parameters
// (tensor chosen uniformly, then element). Leaves Parameter::grad zeroed.
GradReport grad_check(const LossBuilder& forward, std::span<Parameter* const> params,
                      const GradCheckOptions& options);

}  // namespace metaqa
