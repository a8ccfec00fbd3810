#include "caila/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>

namespace caila {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << " x ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= std::size_t(d);
  return n;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(shape_numel(t.impl_->shape), 0.0f);
  t.impl_->requires_grad = requires_grad;
  if (requires_grad) t.impl_->grad.assign(t.impl_->data.size(), 0.0f);
  return t;
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("from_data: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  }
  Tensor t = zeros(std::move(shape), requires_grad);
  t.impl_->data = std::move(values);
  return t;
}

Tensor Tensor::scalar(float value) { return from_data({}, {value}); }

int Tensor::rows() const {
  const Shape& s = check().shape;
  if (s.size() > 2) throw ShapeError("rows: tensor has rank > 2, shape " + shape_str(s));
  return s.size() == 2 ? s[0] : 1;
}

int Tensor::cols() const {
  const Shape& s = check().shape;
  if (s.size() > 2) throw ShapeError("cols: tensor has rank > 2, shape " + shape_str(s));
  if (s.empty()) return 1;
  return s.size() == 2 ? s[1] : s[0];
}

void Tensor::set_requires_grad(bool on) {
  Impl& im = check();
  if (on && !im.requires_grad) im.grad.assign(im.data.size(), 0.0f);
  if (!on) im.grad.clear();
  im.requires_grad = on;
}

std::span<float> Tensor::grad() {
  Impl& im = check();
  if (!im.requires_grad) throw ValueError("grad: tensor does not require grad");
  return im.grad;
}

std::span<const float> Tensor::grad() const {
  Impl& im = check();
  if (!im.requires_grad) throw ValueError("grad: tensor does not require grad");
  return im.grad;
}

void Tensor::zero_grad() {
  Impl& im = check();
  std::fill(im.grad.begin(), im.grad.end(), 0.0f);
}

float Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
  return check().data[0];
}

float Tensor::at(int i) const {
  if (rank() != 1) throw ShapeError("at(i): expected rank 1, shape " + shape_str(shape()));
  if (i < 0 || i >= shape()[0]) throw ShapeError("at(i): index " + std::to_string(i) + " out of range");
  return check().data[std::size_t(i)];
}

float Tensor::at(int r, int c) const {
  if (rank() != 2) throw ShapeError("at(r,c): expected rank 2, shape " + shape_str(shape()));
  if (r < 0 || r >= shape()[0] || c < 0 || c >= shape()[1]) {
    throw ShapeError("at(r,c): index (" + std::to_string(r) + "," + std::to_string(c) +
                     ") out of range for " + shape_str(shape()));
  }
  return check().data[std::size_t(r) * std::size_t(shape()[1]) + std::size_t(c)];
}

Tensor Tensor::clone() const {
  const Impl& im = check();
  return from_data(im.shape, im.data);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
  if (g_active_tape) throw Error("a tape is already active on this thread");
  g_active_tape = this;
}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const char* op, std::function<void()> fn) {
  nodes_.push_back(Node{op, std::move(fn)});
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const Node& n : nodes_) names.emplace_back(n.op);
  return names;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar()) throw ShapeError("backward: loss must be a scalar");
  if (!loss.requires_grad()) throw ValueError("backward: loss has no gradient history");
  if (replayed_) throw Error("backward: tape already replayed");
  replayed_ = true;
  Tensor seed = loss;  // shares storage; grants mutable grad access
  seed.grad()[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
}

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rank-0/1 tensors map as a single row.
MatD load(const Tensor& t) {
  return Eigen::Map<const MatF>(t.data().data(), t.rows(), t.cols()).cast<double>();
}

void store(Tensor& t, const MatD& m) {
  Eigen::Map<MatF>(t.data().data(), t.rows(), t.cols()) = m.cast<float>();
}

MatD grad_of(const Tensor& t) {
  return Eigen::Map<const MatF>(t.grad().data(), t.rows(), t.cols()).cast<double>();
}

// By value: closures capture const handles, and a copy is just a refcount.
void accum_grad(Tensor t, const MatD& g) {
  if (!t.requires_grad()) return;
  Eigen::Map<MatF> gm(t.grad().data(), t.rows(), t.cols());
  gm += g.cast<float>();
}

void ensure_finite(const Tensor& t, const char* op) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw ValueError(std::string(op) + ": produced a non-finite value");
  }
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ValueError(std::string(op) + ": undefined tensor operand");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

bool tracking(std::initializer_list<const Tensor*> ins) {
  if (!Tape::recording()) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

bool tracking_list(std::span<const Tensor> xs) {
  if (!Tape::recording()) return false;
  for (const Tensor& t : xs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

bool all_finite(const Tensor& t) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() < 1 || a.rank() > 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected rank-1/2 left and rank-2 right, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  bool track = tracking({&a, &b});
  Shape out_shape = a.rank() == 1 ? Shape{b.cols()} : Shape{a.rows(), b.cols()};
  Tensor out = Tensor::zeros(std::move(out_shape), track);
  store(out, load(a) * load(b));
  ensure_finite(out, "matmul");
  if (track) {
    Tape::active()->record("matmul", [a, b, out]() mutable {
      MatD go = grad_of(out);
      // Guard each side: frozen operands skip a whole GEMM, not just the add.
      if (a.requires_grad()) accum_grad(a, go * load(b).transpose());
      if (b.requires_grad()) accum_grad(b, load(a).transpose() * go);
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_defined(x, "transpose");
  if (x.rank() < 1 || x.rank() > 2) {
    throw ShapeError("transpose: expected rank 1 or 2, shape " + shape_str(x.shape()));
  }
  bool track = tracking({&x});
  Tensor out = Tensor::zeros({x.cols(), x.rows()}, track);
  store(out, load(x).transpose());
  ensure_finite(out, "transpose");
  if (track) {
    Tape::active()->record("transpose", [x, out]() mutable {
      accum_grad(x, grad_of(out).transpose());
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), track);
  store(out, load(a) + load(b));
  ensure_finite(out, "add");
  if (track) {
    Tape::active()->record("add", [a, b, out]() mutable {
      MatD go = grad_of(out);
      accum_grad(a, go);
      accum_grad(b, go);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), track);
  store(out, load(a) - load(b));
  ensure_finite(out, "sub");
  if (track) {
    Tape::active()->record("sub", [a, b, out]() mutable {
      MatD go = grad_of(out);
      accum_grad(a, go);
      accum_grad(b, -go);
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), track);
  store(out, (load(a).array() * load(b).array()).matrix());
  ensure_finite(out, "mul");
  if (track) {
    Tape::active()->record("mul", [a, b, out]() mutable {
      MatD go = grad_of(out);
      accum_grad(a, (go.array() * load(b).array()).matrix());
      accum_grad(b, (go.array() * load(a).array()).matrix());
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float s) {
  require_defined(a, "scale");
  if (!std::isfinite(s)) throw ValueError("scale: factor must be finite");
  bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape(), track);
  store(out, load(a) * double(s));
  ensure_finite(out, "scale");
  if (track) {
    Tape::active()->record("scale", [a, out, s]() mutable {
      accum_grad(a, grad_of(out) * double(s));
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, float s) {
  require_defined(a, "add_scalar");
  if (!std::isfinite(s)) throw ValueError("add_scalar: addend must be finite");
  bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape(), track);
  store(out, (load(a).array() + double(s)).matrix());
  ensure_finite(out, "add_scalar");
  if (track) {
    Tape::active()->record("add_scalar", [a, out]() mutable {
      accum_grad(a, grad_of(out));
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require_defined(x, "add_rowvec");
  require_defined(v, "add_rowvec");
  if (v.rank() != 1) throw ShapeError("add_rowvec: v must be rank 1, shape " + shape_str(v.shape()));
  if (x.rank() < 1 || x.rank() > 2 || x.cols() != v.cols()) {
    throw ShapeError("add_rowvec: " + shape_str(x.shape()) + " + row " + shape_str(v.shape()));
  }
  bool track = tracking({&x, &v});
  Tensor out = Tensor::zeros(x.shape(), track);
  MatD xm = load(x);
  Eigen::RowVectorXd vr = load(v).row(0);
  store(out, xm.rowwise() + vr);
  ensure_finite(out, "add_rowvec");
  if (track) {
    Tape::active()->record("add_rowvec", [x, v, out]() mutable {
      MatD go = grad_of(out);
      accum_grad(x, go);
      accum_grad(v, go.colwise().sum());
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, float temperature) {
  require_defined(x, "softmax");
  if (!(temperature > 0.0f) || !std::isfinite(temperature)) {
    throw ValueError("softmax: temperature must be positive and finite");
  }
  if (x.rank() < 1 || x.rank() > 2) {
    throw ShapeError("softmax: expected rank 1 or 2, shape " + shape_str(x.shape()));
  }
  bool track = tracking({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  MatD z = load(x) / double(temperature);
  MatD p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double m = z.row(i).maxCoeff();
    Eigen::ArrayXd e = (z.row(i).array() - m).exp();
    p.row(i) = (e / e.sum()).matrix();
  }
  store(out, p);
  ensure_finite(out, "softmax");
  if (track) {
    Tape::active()->record("softmax", [x, out, p, temperature]() mutable {
      MatD go = grad_of(out);
      Eigen::ArrayXd rowdot = (p.array() * go.array()).rowwise().sum();
      MatD gx = (p.array() * (go.array().colwise() - rowdot)).matrix() / double(temperature);
      accum_grad(x, gx);
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  require_defined(x, "layer_norm");
  require_defined(gain, "layer_norm");
  require_defined(bias, "layer_norm");
  if (x.rank() < 1 || x.rank() > 2) {
    throw ShapeError("layer_norm: expected rank 1 or 2, shape " + shape_str(x.shape()));
  }
  if (gain.rank() != 1 || bias.rank() != 1 || gain.cols() != x.cols() || bias.cols() != x.cols()) {
    throw ShapeError("layer_norm: params must be rank-1 of width " + std::to_string(x.cols()));
  }
  if (!(eps > 0.0f)) throw ValueError("layer_norm: eps must be positive");
  bool track = tracking({&x, &gain, &bias});
  Tensor out = Tensor::zeros(x.shape(), track);
  MatD xm = load(x);
  Eigen::VectorXd mu = xm.rowwise().mean();
  MatD xc = xm;
  xc.colwise() -= mu;
  Eigen::ArrayXd inv = (xc.array().square().rowwise().mean() + double(eps)).rsqrt();
  MatD xhat = (xc.array().colwise() * inv).matrix();
  Eigen::RowVectorXd g = load(gain).row(0);
  Eigen::RowVectorXd b = load(bias).row(0);
  store(out, ((xhat.array().rowwise() * g.array()).rowwise() + b.array()).matrix());
  ensure_finite(out, "layer_norm");
  if (track) {
    Tape::active()->record("layer_norm", [x, gain, bias, out, xhat, inv, g]() mutable {
      MatD go = grad_of(out);
      MatD dxhat = (go.array().rowwise() * g.array()).matrix();
      Eigen::ArrayXd m1 = dxhat.rowwise().mean();
      Eigen::ArrayXd m2 = (dxhat.array() * xhat.array()).rowwise().mean();
      MatD dx = (((dxhat.array().colwise() - m1) - (xhat.array().colwise() * m2)).colwise() * inv)
                    .matrix();
      accum_grad(x, dx);
      accum_grad(gain, (go.array() * xhat.array()).colwise().sum().matrix());
      accum_grad(bias, go.colwise().sum());
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  bool track = tracking({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  MatD in = load(x);
  store(out, in.unaryExpr([](double v) { return v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)); }));
  ensure_finite(out, "gelu");
  if (track) {
    Tape::active()->record("gelu", [x, out, in]() mutable {
      MatD d = in.unaryExpr([](double v) {
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = std::exp(-0.5 * v * v) * kInvSqrt2Pi;
        return cdf + v * pdf;
      });
      accum_grad(x, (grad_of(out).array() * d.array()).matrix());
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  require_defined(x, "relu");
  bool track = tracking({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  MatD in = load(x);
  store(out, in.cwiseMax(0.0));
  ensure_finite(out, "relu");
  if (track) {
    Tape::active()->record("relu", [x, out, in]() mutable {
      MatD mask = in.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
      accum_grad(x, (grad_of(out).array() * mask.array()).matrix());
    });
  }
  return out;
}

Tensor l2_normalize(const Tensor& x) {
  require_defined(x, "l2_normalize");
  if (x.rank() != 1) {
    throw ShapeError("l2_normalize: expected rank 1, shape " + shape_str(x.shape()));
  }
  MatD in = load(x);
  double n = in.norm();
  if (!(n > 1e-12)) throw ValueError("l2_normalize: vector norm is (near) zero");
  bool track = tracking({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  store(out, in / n);
  ensure_finite(out, "l2_normalize");
  if (track) {
    Tape::active()->record("l2_normalize", [x, out, n]() mutable {
      MatD y = load(out);
      MatD go = grad_of(out);
      double d = (y.array() * go.array()).sum();
      accum_grad(x, (go - y * d) / n);
    });
  }
  return out;
}

Tensor average(std::span<const Tensor> xs) {
  if (xs.empty()) throw ValueError("average: needs at least one tensor");
  for (const Tensor& t : xs) check_same_shape(xs[0], t, "average");
  bool track = tracking_list(xs);
  Tensor out = Tensor::zeros(xs[0].shape(), track);
  MatD acc = load(xs[0]);
  for (std::size_t k = 1; k < xs.size(); ++k) acc += load(xs[k]);
  double inv = 1.0 / double(xs.size());
  store(out, acc * inv);
  ensure_finite(out, "average");
  if (track) {
    std::vector<Tensor> ins(xs.begin(), xs.end());
    Tape::active()->record("average", [ins, out, inv]() mutable {
      MatD go = grad_of(out) * inv;
      for (Tensor& t : ins) accum_grad(t, go);
    });
  }
  return out;
}

Tensor average(std::initializer_list<Tensor> xs) {
  std::vector<Tensor> v(xs.begin(), xs.end());
  return average(std::span<const Tensor>(v));
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  bool track = tracking({&x});
  Tensor out = Tensor::zeros({}, track);
  out.data()[0] = float(load(x).sum());
  ensure_finite(out, "sum");
  if (track) {
    Tape::active()->record("sum", [x, out]() mutable {
      double g = out.grad()[0];
      accum_grad(x, MatD::Constant(x.rows(), x.cols(), g));
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  bool track = tracking({&x});
  Tensor out = Tensor::zeros({}, track);
  double inv = 1.0 / double(x.size());
  out.data()[0] = float(load(x).sum() * inv);
  ensure_finite(out, "mean");
  if (track) {
    Tape::active()->record("mean", [x, out, inv]() mutable {
      double g = double(out.grad()[0]) * inv;
      accum_grad(x, MatD::Constant(x.rows(), x.cols(), g));
    });
  }
  return out;
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_defined(a, "dot");
  require_defined(b, "dot");
  if (a.rank() != 1 || b.rank() != 1 || a.cols() != b.cols()) {
    throw ShapeError("dot: expected equal-length rank-1 tensors, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros({}, track);
  out.data()[0] = float((load(a).array() * load(b).array()).sum());
  ensure_finite(out, "dot");
  if (track) {
    Tape::active()->record("dot", [a, b, out]() mutable {
      double g = out.grad()[0];
      accum_grad(a, load(b) * g);
      accum_grad(b, load(a) * g);
    });
  }
  return out;
}

Tensor take_row(const Tensor& x, int row) {
  require_defined(x, "take_row");
  if (x.rank() != 2) throw ShapeError("take_row: expected rank 2, shape " + shape_str(x.shape()));
  if (row < 0 || row >= x.rows()) {
    throw ShapeError("take_row: row " + std::to_string(row) + " out of range for " +
                     shape_str(x.shape()));
  }
  bool track = tracking({&x});
  Tensor out = Tensor::zeros({x.cols()}, track);
  store(out, load(x).row(row));
  ensure_finite(out, "take_row");
  if (track) {
    Tape::active()->record("take_row", [x, out, row]() mutable {
      MatD gx = MatD::Zero(x.rows(), x.cols());
      gx.row(row) = grad_of(out).row(0);
      accum_grad(x, gx);
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  require_defined(x, "slice_cols");
  if (x.rank() < 1 || x.rank() > 2) {
    throw ShapeError("slice_cols: expected rank 1 or 2, shape " + shape_str(x.shape()));
  }
  if (start < 0 || len <= 0 || start + len > x.cols()) {
    throw ShapeError("slice_cols: window [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of range for " + shape_str(x.shape()));
  }
  bool track = tracking({&x});
  Shape out_shape = x.rank() == 1 ? Shape{len} : Shape{x.rows(), len};
  Tensor out = Tensor::zeros(std::move(out_shape), track);
  store(out, load(x).middleCols(start, len));
  ensure_finite(out, "slice_cols");
  if (track) {
    Tape::active()->record("slice_cols", [x, out, start, len]() mutable {
      MatD gx = MatD::Zero(x.rows(), x.cols());
      gx.middleCols(start, len) = grad_of(out);
      accum_grad(x, gx);
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> xs) {
  if (xs.empty()) throw ValueError("concat_cols: needs at least one tensor");
  int rk = xs[0].rank();
  if (rk < 1 || rk > 2) throw ShapeError("concat_cols: expected rank 1 or 2 inputs");
  int total = 0;
  for (const Tensor& t : xs) {
    require_defined(t, "concat_cols");
    if (t.rank() != rk || t.rows() != xs[0].rows()) {
      throw ShapeError("concat_cols: incompatible input " + shape_str(t.shape()));
    }
    total += t.cols();
  }
  bool track = tracking_list(xs);
  Shape out_shape = rk == 1 ? Shape{total} : Shape{xs[0].rows(), total};
  Tensor out = Tensor::zeros(std::move(out_shape), track);
  MatD m(out.rows(), out.cols());
  int off = 0;
  for (const Tensor& t : xs) {
    m.middleCols(off, t.cols()) = load(t);
    off += t.cols();
  }
  store(out, m);
  ensure_finite(out, "concat_cols");
  if (track) {
    std::vector<Tensor> ins(xs.begin(), xs.end());
    Tape::active()->record("concat_cols", [ins, out]() mutable {
      MatD go = grad_of(out);
      int off2 = 0;
      for (Tensor& t : ins) {
        accum_grad(t, go.middleCols(off2, t.cols()));
        off2 += t.cols();
      }
    });
  }
  return out;
}

Tensor stack_rows(std::span<const Tensor> xs) {
  if (xs.empty()) throw ValueError("stack_rows: needs at least one tensor");
  for (const Tensor& t : xs) {
    require_defined(t, "stack_rows");
    if (t.rank() != 1 || t.cols() != xs[0].cols()) {
      throw ShapeError("stack_rows: expected equal-length rank-1 tensors, got " +
                       shape_str(t.shape()));
    }
  }
  bool track = tracking_list(xs);
  Tensor out = Tensor::zeros({int(xs.size()), xs[0].cols()}, track);
  MatD m(out.rows(), out.cols());
  for (std::size_t i = 0; i < xs.size(); ++i) m.row(Eigen::Index(i)) = load(xs[i]).row(0);
  store(out, m);
  ensure_finite(out, "stack_rows");
  if (track) {
    std::vector<Tensor> ins(xs.begin(), xs.end());
    Tape::active()->record("stack_rows", [ins, out]() mutable {
      MatD go = grad_of(out);
      for (std::size_t i = 0; i < ins.size(); ++i) accum_grad(ins[i], go.row(Eigen::Index(i)));
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> xs) {
  if (xs.empty()) throw ValueError("concat_rows: needs at least one tensor");
  int total = 0;
  for (const Tensor& t : xs) {
    require_defined(t, "concat_rows");
    if (t.rank() != 2 || t.cols() != xs[0].cols()) {
      throw ShapeError("concat_rows: expected rank-2 tensors of equal width, got " +
                       shape_str(t.shape()));
    }
    total += t.rows();
  }
  bool track = tracking_list(xs);
  Tensor out = Tensor::zeros({total, xs[0].cols()}, track);
  MatD m(out.rows(), out.cols());
  int off = 0;
  for (const Tensor& t : xs) {
    m.middleRows(off, t.rows()) = load(t);
    off += t.rows();
  }
  store(out, m);
  ensure_finite(out, "concat_rows");
  if (track) {
    std::vector<Tensor> ins(xs.begin(), xs.end());
    Tape::active()->record("concat_rows", [ins, out]() mutable {
      MatD go = grad_of(out);
      int off2 = 0;
      for (Tensor& t : ins) {
        accum_grad(t, go.middleRows(off2, t.rows()));
        off2 += t.rows();
      }
    });
  }
  return out;
}

Tensor embed_rows(const Tensor& table, std::span<const int> ids) {
  require_defined(table, "embed_rows");
  if (table.rank() != 2) {
    throw ShapeError("embed_rows: table must be rank 2, shape " + shape_str(table.shape()));
  }
  if (ids.empty()) throw ValueError("embed_rows: empty id list");
  for (int id : ids) {
    if (id < 0 || id >= table.rows()) {
      throw ValueError("embed_rows: id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(table.rows()) + ")");
    }
  }
  bool track = tracking({&table});
  Tensor out = Tensor::zeros({int(ids.size()), table.cols()}, track);
  MatD tm = load(table);
  MatD m(out.rows(), out.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) m.row(Eigen::Index(i)) = tm.row(ids[i]);
  store(out, m);
  ensure_finite(out, "embed_rows");
  if (track) {
    std::vector<int> idv(ids.begin(), ids.end());
    Tape::active()->record("embed_rows", [table, out, idv]() mutable {
      MatD go = grad_of(out);
      MatD gt = MatD::Zero(table.rows(), table.cols());
      for (std::size_t i = 0; i < idv.size(); ++i) gt.row(idv[i]) += go.row(Eigen::Index(i));
      accum_grad(table, gt);
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets, float temperature) {
  require_defined(logits, "softmax_cross_entropy");
  if (!(temperature > 0.0f) || !std::isfinite(temperature)) {
    throw ValueError("softmax_cross_entropy: temperature must be positive and finite");
  }
  if (logits.rank() < 1 || logits.rank() > 2) {
    throw ShapeError("softmax_cross_entropy: expected rank 1 or 2 logits, shape " +
                     shape_str(logits.shape()));
  }
  int n = logits.rows();
  int c = logits.cols();
  if (int(targets.size()) != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " rows");
  }
  for (int t : targets) {
    if (t < 0 || t >= c) {
      throw ValueError("softmax_cross_entropy: target " + std::to_string(t) +
                       " out of range [0, " + std::to_string(c) + ")");
    }
  }
  bool track = tracking({&logits});
  Tensor out = Tensor::zeros({}, track);
  MatD z = load(logits) / double(temperature);
  MatD p(n, c);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double m = z.row(i).maxCoeff();
    Eigen::ArrayXd e = (z.row(i).array() - m).exp();
    double s = e.sum();
    p.row(i) = (e / s).matrix();
    total += m + std::log(s) - z(i, targets[i]);
  }
  out.data()[0] = float(total / double(n));
  ensure_finite(out, "softmax_cross_entropy");
  if (track) {
    std::vector<int> tv(targets.begin(), targets.end());
    Tape::active()->record("softmax_cross_entropy",
                           [logits, out, p, tv, n, temperature]() mutable {
      double g = double(out.grad()[0]) / (double(n) * double(temperature));
      MatD gl = p * g;
      for (int i = 0; i < n; ++i) gl(i, tv[i]) -= g;
      accum_grad(logits, gl);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// grad_check
// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(Tensor&)>& f, Tensor x, double eps) {
  if (!x.defined()) throw ValueError("grad_check: undefined probe tensor");
  if (!(eps > 0.0) || eps > 0.1) throw ValueError("grad_check: eps must lie in (0, 0.1]");
  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor loss = f(x);
    if (!loss.defined() || !loss.is_scalar()) {
      throw ShapeError("grad_check: f must return a scalar");
    }
    tape.backward(loss);
    analytic.assign(x.grad().begin(), x.grad().end());
  }
  x.set_requires_grad(false);
  std::span<float> xs = x.data();
  double worst = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const float orig = xs[i];
    const float hi = float(double(orig) + eps);
    const float lo = float(double(orig) - eps);
    xs[i] = hi;
    double fp = f(x).item();
    xs[i] = lo;
    double fm = f(x).item();
    xs[i] = orig;
    double numeric = (fp - fm) / (double(hi) - double(lo));
    double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace caila
