#include "metaqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "metaqa/errors.hpp"

namespace metaqa {

namespace {

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + to_string(shape_) + " does not match " + std::to_string(data_.size()) +
                     " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::rows() const {
  if (shape_.size() < 2) return 1;
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape() || grad.size() != value.size()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0);
  }
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kTranspose: return "transpose";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kGelu: return "gelu";
    case Op::kEmbedding: return "embedding";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kSigmoid: return "sigmoid";
    case Op::kLog: return "log";
    case Op::kSum: return "sum";
    case Op::kBce: return "bce";
    case Op::kCrossEntropy: return "cross_entropy";
  }
  return "?";
}

const Tensor& Var::value() const { return tape->value(*this); }
bool Var::requires_grad() const { return tape->node(id).requires_grad; }

// ---------------------------------------------------------------------------
// Forward kernels

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return out;
}

Tensor softmax_rows(const Tensor& m) {
  Tensor out(m.shape());
  const std::size_t r = m.rows();
  const std::size_t c = m.cols();
  for (std::size_t i = 0; i < r; ++i) {
    const double* in = m.data().data() + i * c;
    double* o = out.data().data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, in[j]);
    if (!std::isfinite(mx)) {
      throw ContractError("softmax_rows: row " + std::to_string(i) + " has no finite entry");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= total;
  }
  return out;
}

double gelu(double x) {
  const double inner = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_grad(double x) {
  const double inner = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(inner);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

}  // namespace kernels

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool is_row_vector_for(const Tensor& b, const Tensor& a) {
  return a.rank() == 2 && b.size() == a.cols() && (b.rank() == 1 || (b.rank() == 2 && b.rows() == 1));
}

Shape as_matrix_shape(const Tensor& t) { return {t.rows(), t.cols()}; }

// Computes node.value (and saved state) from input values. Used both when an
// op is first recorded and on replay, so the two paths are bit-identical.
void forward(Node& n, const std::vector<const Tensor*>& in) {
  switch (n.op) {
    case Op::kLeaf:
      return;
    case Op::kMatMul:
      n.value = kernels::matmul(*in[0], *in[1]);
      return;
    case Op::kAdd: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      Tensor out = a;
      if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
      } else if (is_row_vector_for(b, a)) {
        const std::size_t c = a.cols();
        for (std::size_t r = 0; r < a.rows(); ++r)
          for (std::size_t j = 0; j < c; ++j) out[r * c + j] += b[j];
      } else {
        throw ShapeError("add: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
      }
      n.value = std::move(out);
      return;
    }
    case Op::kMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.shape() != b.shape()) {
        throw ShapeError("mul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
      }
      Tensor out = a;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
      n.value = std::move(out);
      return;
    }
    case Op::kScale: {
      Tensor out = *in[0];
      for (double& v : out.data()) v *= n.scalar;
      n.value = std::move(out);
      return;
    }
    case Op::kTranspose: {
      const Tensor& a = *in[0];
      if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(a.shape()));
      const std::size_t r = a.rows();
      const std::size_t c = a.cols();
      Tensor out({c, r});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
      n.value = std::move(out);
      return;
    }
    case Op::kSoftmaxRows:
      n.value = kernels::softmax_rows(*in[0]);
      return;
    case Op::kLayerNorm: {
      const Tensor& x = *in[0];
      const Tensor& gamma = *in[1];
      const Tensor& beta = *in[2];
      const std::size_t d = x.cols();
      if (d == 0 || gamma.size() != d || beta.size() != d) {
        throw ShapeError("layer_norm: input " + to_string(x.shape()) + " with gamma " + to_string(gamma.shape()) +
                         " and beta " + to_string(beta.shape()));
      }
      const std::size_t rows = x.size() / d;
      Tensor out(x.shape());
      Tensor xhat(x.shape());
      Tensor inv({rows});
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + n.scalar);
        inv[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
          const double h = (xr[j] - mean) * is;
          xhat[r * d + j] = h;
          out[r * d + j] = h * gamma[j] + beta[j];
        }
      }
      n.value = std::move(out);
      n.saved = std::move(xhat);
      n.saved_aux = std::move(inv);
      return;
    }
    case Op::kGelu: {
      Tensor out = *in[0];
      for (double& v : out.data()) v = kernels::gelu(v);
      n.value = std::move(out);
      return;
    }
    case Op::kEmbedding: {
      const Tensor& table = *in[0];
      if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + to_string(table.shape()));
      const std::size_t d = table.cols();
      Tensor out({n.indices.size(), d});
      for (std::size_t i = 0; i < n.indices.size(); ++i) {
        const std::size_t id = n.indices[i];
        if (id >= table.rows()) {
          throw ContractError("embedding: id " + std::to_string(id) + " out of range for table " +
                              to_string(table.shape()));
        }
        std::copy_n(table.data().data() + id * d, d, out.data().data() + i * d);
      }
      n.value = std::move(out);
      return;
    }
    case Op::kConcat: {
      if (in.empty()) throw ShapeError("concat: no inputs");
      if (n.axis == 0) {
        const std::size_t c = in[0]->cols();
        std::size_t rows = 0;
        for (const Tensor* t : in) {
          if (t->cols() != c) throw ShapeError("concat: column mismatch " + to_string(t->shape()));
          rows += t->rows();
        }
        Tensor out({rows, c});
        std::size_t off = 0;
        for (const Tensor* t : in) {
          std::copy(t->data().begin(), t->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
          off += t->size();
        }
        n.value = std::move(out);
      } else if (n.axis == 1) {
        const std::size_t r = in[0]->rows();
        std::size_t cols = 0;
        for (const Tensor* t : in) {
          if (t->rows() != r) throw ShapeError("concat: row mismatch " + to_string(t->shape()));
          cols += t->cols();
        }
        Tensor out({r, cols});
        std::size_t off = 0;
        for (const Tensor* t : in) {
          const std::size_t c = t->cols();
          for (std::size_t i = 0; i < r; ++i)
            std::copy_n(t->data().data() + i * c, c, out.data().data() + i * cols + off);
          off += c;
        }
        n.value = std::move(out);
      } else {
        throw ShapeError("concat: axis must be 0 or 1");
      }
      return;
    }
    case Op::kSlice: {
      const Tensor& x = *in[0];
      const std::size_t r = x.rows();
      const std::size_t c = x.cols();
      const std::size_t limit = n.axis == 0 ? r : c;
      if (n.axis > 1 || n.begin > n.end || n.end > limit) {
        throw ShapeError("slice: [" + std::to_string(n.begin) + ", " + std::to_string(n.end) + ") on axis " +
                         std::to_string(n.axis) + " of " + to_string(x.shape()));
      }
      const std::size_t w = n.end - n.begin;
      if (n.axis == 0) {
        Tensor out({w, c});
        std::copy_n(x.data().data() + n.begin * c, w * c, out.data().data());
        n.value = std::move(out);
      } else {
        Tensor out({r, w});
        for (std::size_t i = 0; i < r; ++i) std::copy_n(x.data().data() + i * c + n.begin, w, out.data().data() + i * w);
        n.value = std::move(out);
      }
      return;
    }
    case Op::kSigmoid: {
      Tensor out = *in[0];
      for (double& v : out.data()) v = stable_sigmoid(v);
      n.value = std::move(out);
      return;
    }
    case Op::kLog: {
      Tensor out = *in[0];
      for (double& v : out.data()) v = std::log(v);
      n.value = std::move(out);
      return;
    }
    case Op::kSum: {
      double total = 0.0;
      for (double v : in[0]->data()) total += v;
      n.value = Tensor::scalar(total);
      return;
    }
    case Op::kBce: {
      const Tensor& p = *in[0];
      if (p.size() != n.target.size()) {
        throw ShapeError("bce: probabilities " + to_string(p.shape()) + " vs labels " + to_string(n.target.shape()));
      }
      double total = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double y = n.target[i];
        if (y != 0.0) total -= y * std::log(p[i]);
        if (y != 1.0) total -= (1.0 - y) * std::log1p(-p[i]);
      }
      n.value = Tensor::scalar(total);
      return;
    }
    case Op::kCrossEntropy: {
      const Tensor& logits = *in[0];
      if (logits.size() != n.target.size() || logits.rows() != 1) {
        throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) + " vs target " +
                         to_string(n.target.shape()));
      }
      const Tensor probs = kernels::softmax_rows(Tensor({1, logits.size()}, std::vector<double>(logits.data().begin(), logits.data().end())));
      double mx = -std::numeric_limits<double>::infinity();
      for (double v : logits.data()) mx = std::max(mx, v);
      double acc = 0.0;
      for (double v : logits.data()) acc += std::exp(v - mx);
      const double lse = mx + std::log(acc);
      double total = 0.0;
      for (std::size_t j = 0; j < logits.size(); ++j) {
        const double t = n.target[j];
        if (t == 0.0) continue;
        if (!std::isfinite(logits[j])) throw ContractError("cross_entropy: target mass on a masked logit");
        total += t * (lse - logits[j]);
      }
      n.value = Tensor::scalar(total);
      n.saved = Tensor(logits.shape(), std::vector<double>(probs.data().begin(), probs.data().end()));
      return;
    }
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.external = &value;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.external = &p.value;
  if (p.requires_grad) {
    n.param = &p;
    n.requires_grad = true;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
  }
  return push(std::move(n));
}

std::size_t Tape::op_count() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.op != Op::kLeaf; }));
}

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> values;
  values.reserve(nodes_.size());
  std::vector<const Tensor*> in;
  for (const Node& original : nodes_) {
    if (original.op == Op::kLeaf) {
      values.push_back(original.val());
      continue;
    }
    Node n;
    n.op = original.op;
    n.scalar = original.scalar;
    n.axis = original.axis;
    n.begin = original.begin;
    n.end = original.end;
    n.indices = original.indices;
    n.target = original.target;
    in.clear();
    for (std::size_t i : original.inputs) in.push_back(&values[i]);
    forward(n, in);
    values.push_back(std::move(n.value));
  }
  return values;
}

namespace {

Var record(Node n, std::initializer_list<Var> inputs) {
  Tape* tape = inputs.begin()->tape;
  std::vector<const Tensor*> in;
  bool needs_grad = false;
  for (const Var& v : inputs) {
    if (v.tape != tape) throw ContractError(std::string(op_name(n.op)) + ": inputs live on different tapes");
    in.push_back(&v.value());
    needs_grad = needs_grad || v.requires_grad();
  }
  forward(n, in);
  if (!needs_grad) return tape->constant(std::move(n.value));
  for (const Var& v : inputs) n.inputs.push_back(v.id);
  n.requires_grad = true;
  return tape->push(std::move(n));
}

Var record_many(Node n, std::span<const Var> inputs) {
  if (inputs.empty()) throw ShapeError(std::string(op_name(n.op)) + ": no inputs");
  Tape* tape = inputs.front().tape;
  std::vector<const Tensor*> in;
  bool needs_grad = false;
  for (const Var& v : inputs) {
    if (v.tape != tape) throw ContractError(std::string(op_name(n.op)) + ": inputs live on different tapes");
    in.push_back(&v.value());
    needs_grad = needs_grad || v.requires_grad();
  }
  forward(n, in);
  if (!needs_grad) return tape->constant(std::move(n.value));
  for (const Var& v : inputs) n.inputs.push_back(v.id);
  n.requires_grad = true;
  return tape->push(std::move(n));
}

Node make(Op op) {
  Node n;
  n.op = op;
  return n;
}

}  // namespace

Var matmul(Var a, Var b) { return record(make(Op::kMatMul), {a, b}); }
Var add(Var a, Var b) { return record(make(Op::kAdd), {a, b}); }
Var mul(Var a, Var b) { return record(make(Op::kMul), {a, b}); }

Var scale(Var a, double factor) {
  Node n = make(Op::kScale);
  n.scalar = factor;
  return record(std::move(n), {a});
}

Var transpose(Var a) { return record(make(Op::kTranspose), {a}); }
Var softmax_rows(Var m) { return record(make(Op::kSoftmaxRows), {m}); }

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  Node n = make(Op::kLayerNorm);
  n.scalar = eps;
  return record(std::move(n), {x, gamma, beta});
}

Var gelu(Var x) { return record(make(Op::kGelu), {x}); }

Var embedding(Var table, std::span<const std::size_t> ids) {
  Node n = make(Op::kEmbedding);
  n.indices.assign(ids.begin(), ids.end());
  return record(std::move(n), {table});
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  Node n = make(Op::kConcat);
  n.axis = axis;
  return record_many(std::move(n), parts);
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  Node n = make(Op::kSlice);
  n.axis = axis;
  n.begin = begin;
  n.end = end;
  return record(std::move(n), {x});
}

Var sigmoid(Var x) { return record(make(Op::kSigmoid), {x}); }
Var log(Var x) { return record(make(Op::kLog), {x}); }
Var sum(Var x) { return record(make(Op::kSum), {x}); }

Var bce(Var probs, const Tensor& labels) {
  Node n = make(Op::kBce);
  n.target = labels;
  return record(std::move(n), {probs});
}

Var cross_entropy(Var logits, const Tensor& target) {
  Node n = make(Op::kCrossEntropy);
  n.target = target;
  return record(std::move(n), {logits});
}

Var detach(Var x) { return x.tape->constant(x.value()); }

// ---------------------------------------------------------------------------
// Backward

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw ContractError("backward: loss must be scalar, got shape " + to_string(lv.shape()));
  if (!nodes_[loss.id].requires_grad) return;

  std::vector<Tensor> grads(nodes_.size());
  auto grad_of = [&](std::size_t id) -> Tensor* {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.param != nullptr) return &n.param->grad;
    if (grads[id].shape() != n.val().shape() || grads[id].size() != n.val().size()) grads[id] = Tensor(n.val().shape());
    return &grads[id];
  };

  grads[loss.id] = Tensor(lv.shape(), 1.0);
  for (std::size_t idx = loss.id + 1; idx-- > 0;) {
    Node& n = nodes_[idx];
    if (n.op == Op::kLeaf || !n.requires_grad) continue;
    const Tensor& g = grads[idx];
    if (g.empty()) continue;  // not reached from the loss

    std::vector<const Tensor*> in;
    for (std::size_t i : n.inputs) in.push_back(&nodes_[i].val());

    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatMul: {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        const std::size_t m = a.rows();
        const std::size_t k = a.cols();
        const std::size_t nn = b.cols();
        if (Tensor* ga = grad_of(n.inputs[0])) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* grow = g.data().data() + i * nn;
              const double* brow = b.data().data() + p * nn;
              for (std::size_t j = 0; j < nn; ++j) acc += grow[j] * brow[j];
              (*ga)[i * k + p] += acc;
            }
        }
        if (Tensor* gb = grad_of(n.inputs[1])) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = a[i * k + p];
              const double* grow = g.data().data() + i * nn;
              double* gbrow = gb->data().data() + p * nn;
              for (std::size_t j = 0; j < nn; ++j) gbrow[j] += aip * grow[j];
            }
        }
        break;
      }
      case Op::kAdd: {
        if (Tensor* ga = grad_of(n.inputs[0])) accumulate(*ga, g);
        if (Tensor* gb = grad_of(n.inputs[1])) {
          if (gb->size() == g.size()) {
            accumulate(*gb, g);
          } else {
            const std::size_t c = g.cols();
            for (std::size_t r = 0; r < g.rows(); ++r)
              for (std::size_t j = 0; j < c; ++j) (*gb)[j] += g[r * c + j];
          }
        }
        break;
      }
      case Op::kMul: {
        if (Tensor* ga = grad_of(n.inputs[0]))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (*in[1])[i];
        if (Tensor* gb = grad_of(n.inputs[1]))
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * (*in[0])[i];
        break;
      }
      case Op::kScale: {
        if (Tensor* ga = grad_of(n.inputs[0]))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.scalar;
        break;
      }
      case Op::kTranspose: {
        if (Tensor* ga = grad_of(n.inputs[0])) {
          const std::size_t r = in[0]->rows();
          const std::size_t c = in[0]->cols();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += g[j * r + i];
        }
        break;
      }
      case Op::kSoftmaxRows: {
        if (Tensor* ga = grad_of(n.inputs[0])) {
          const Tensor& y = n.value;
          const std::size_t c = y.cols();
          for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
            for (std::size_t j = 0; j < c; ++j) (*ga)[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
          }
        }
        break;
      }
      case Op::kLayerNorm: {
        const Tensor& gamma = *in[1];
        const Tensor& xhat = n.saved;
        const std::size_t d = gamma.size();
        const std::size_t rows = xhat.size() / d;
        Tensor* gx = grad_of(n.inputs[0]);
        Tensor* gg = grad_of(n.inputs[1]);
        Tensor* gbeta = grad_of(n.inputs[2]);
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* grow = g.data().data() + r * d;
          const double* hrow = xhat.data().data() + r * d;
          if (gg != nullptr)
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += grow[j] * hrow[j];
          if (gbeta != nullptr)
            for (std::size_t j = 0; j < d; ++j) (*gbeta)[j] += grow[j];
          if (gx != nullptr) {
            double s1 = 0.0;
            double s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = grow[j] * gamma[j];
              s1 += dxhat[j];
              s2 += dxhat[j] * hrow[j];
            }
            const double inv = n.saved_aux[r];
            const double dd = static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j)
              (*gx)[r * d + j] += inv / dd * (dd * dxhat[j] - s1 - hrow[j] * s2);
          }
        }
        break;
      }
      case Op::kGelu: {
        if (Tensor* ga = grad_of(n.inputs[0]))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * kernels::gelu_grad((*in[0])[i]);
        break;
      }
      case Op::kEmbedding: {
        if (Tensor* gt = grad_of(n.inputs[0])) {
          const std::size_t d = in[0]->cols();
          for (std::size_t i = 0; i < n.indices.size(); ++i) {
            double* dst = gt->data().data() + n.indices[i] * d;
            const double* src = g.data().data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
          }
        }
        break;
      }
      case Op::kConcat: {
        if (n.axis == 0) {
          std::size_t off = 0;
          for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const std::size_t sz = in[k]->size();
            if (Tensor* gi = grad_of(n.inputs[k]))
              for (std::size_t i = 0; i < sz; ++i) (*gi)[i] += g[off + i];
            off += sz;
          }
        } else {
          const std::size_t total = g.cols();
          std::size_t off = 0;
          for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const std::size_t c = in[k]->cols();
            if (Tensor* gi = grad_of(n.inputs[k]))
              for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t j = 0; j < c; ++j) (*gi)[r * c + j] += g[r * total + off + j];
            off += c;
          }
        }
        break;
      }
      case Op::kSlice: {
        if (Tensor* gi = grad_of(n.inputs[0])) {
          const std::size_t c = in[0]->cols();
          const std::size_t w = n.end - n.begin;
          if (n.axis == 0) {
            for (std::size_t i = 0; i < g.size(); ++i) (*gi)[n.begin * c + i] += g[i];
          } else {
            for (std::size_t r = 0; r < in[0]->rows(); ++r)
              for (std::size_t j = 0; j < w; ++j) (*gi)[r * c + n.begin + j] += g[r * w + j];
          }
        }
        break;
      }
      case Op::kSigmoid: {
        if (Tensor* gi = grad_of(n.inputs[0]))
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = n.value[i];
            (*gi)[i] += g[i] * s * (1.0 - s);
          }
        break;
      }
      case Op::kLog: {
        if (Tensor* gi = grad_of(n.inputs[0]))
          for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i] / (*in[0])[i];
        break;
      }
      case Op::kSum: {
        if (Tensor* gi = grad_of(n.inputs[0]))
          for (double& v : gi->data()) v += g[0];
        break;
      }
      case Op::kBce: {
        if (Tensor* gi = grad_of(n.inputs[0]))
          for (std::size_t i = 0; i < gi->size(); ++i) {
            const double p = (*in[0])[i];
            const double y = n.target[i];
            (*gi)[i] += g[0] * (p - y) / (p * (1.0 - p));
          }
        break;
      }
      case Op::kCrossEntropy: {
        if (Tensor* gi = grad_of(n.inputs[0])) {
          double mass = 0.0;
          for (double t : n.target.data()) mass += t;
          for (std::size_t j = 0; j < gi->size(); ++j) (*gi)[j] += g[0] * (mass * n.saved[j] - n.target[j]);
        }
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradReport grad_check(const LossBuilder& forward_fn, std::span<Parameter* const> params,
                      const GradCheckOptions& options) {
  if (!(options.h > 0.0)) throw ContractError("grad_check: step h must be positive");

  auto evaluate = [&]() {
    Tape tape;
    return forward_fn(tape).value().item();
  };

  std::vector<Parameter*> trainable;
  for (Parameter* p : params) {
    if (p->requires_grad && p->value.size() > 0) trainable.push_back(p);
  }
  for (Parameter* p : trainable) p->zero_grad();

  double base = 0.0;
  {
    Tape tape;
    Var loss = forward_fn(tape);
    base = loss.value().item();
    tape.backward(loss);
  }
  const double again = evaluate();
  if (std::memcmp(&base, &again, sizeof(double)) != 0) {
    throw DeterminismError("grad_check: forward is not deterministic (" + std::to_string(base) + " vs " +
                           std::to_string(again) + ")");
  }

  GradReport report;
  if (trainable.empty()) {
    report.passed = true;
    return report;
  }

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick_param(0, trainable.size() - 1);
  for (std::size_t s = 0; s < options.sample; ++s) {
    Parameter* p = trainable[pick_param(rng)];
    std::uniform_int_distribution<std::size_t> pick_elem(0, p->value.size() - 1);
    const std::size_t idx = pick_elem(rng);

    const double original = p->value[idx];
    p->value[idx] = original + options.h;
    const double plus = evaluate();
    p->value[idx] = original - options.h;
    const double minus = evaluate();
    p->value[idx] = original;

    GradEntry e;
    e.param = p->name;
    e.index = idx;
    e.analytic = p->grad[idx] + options.corrupt_analytic;
    e.numeric = (plus - minus) / (2.0 * options.h);
    e.rel_error = relative_error(e.analytic, e.numeric);
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(std::move(e));
  }
  report.checked = report.entries.size();
  report.passed = report.max_rel_error <= options.tol;
  for (Parameter* p : trainable) p->zero_grad();
  return report;
}

}  // namespace metaqa
