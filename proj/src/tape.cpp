#include "slat/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "slat/error.hpp"
#include "slat/kernels.hpp"

namespace slat {

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::dense: return "dense";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::softplus: return "softplus";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::maxpool2x2: return "maxpool2x2";
    case OpKind::flatten: return "flatten";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::mul: return "mul";
    case OpKind::mul_scalar: return "mul_scalar";
    case OpKind::sum: return "sum";
    case OpKind::softmax_xent: return "softmax_xent";
    case OpKind::xent_grad: return "xent_grad";
    case OpKind::matmul_nn: return "matmul_nn";
    case OpKind::matmul_tn: return "matmul_tn";
    case OpKind::sum_rows: return "sum_rows";
    case OpKind::row_cosine: return "row_cosine";
  }
  return "?";
}

const Tensor& Gradients::at(NodeId node) const {
  if (!has(node)) throw std::out_of_range("no gradient recorded for node " + std::to_string(node.index));
  return *grads_[node.index];
}

PassCounts& pass_counts() {
  thread_local PassCounts counts;
  return counts;
}

void count_forward_pass() { ++pass_counts().forward; }

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// Rows/columns view of a matrix-like operand: rank 1 is a single row.
struct Mat {
  std::size_t rows, cols;
};

Mat as_matrix(const Tensor& t, const char* op) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw ShapeMismatch(op, "rank 1 or 2", to_string(t.shape()));
}

// Rows of a tensor treated as [rows, rest]; rank 1 is one row.
std::size_t row_count(const Tensor& t) { return t.rank() >= 2 ? t.dim(0) : 1; }

void check_labels(const Tensor& logits, std::span<const int> labels, const char* op) {
  const Mat m = as_matrix(logits, op);
  if (labels.size() != m.rows) {
    throw ShapeMismatch(op, std::to_string(m.rows) + " labels", std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= m.cols) throw LabelOutOfRange(y, m.cols);
  }
}

// Row-wise softmax.
Tensor softmax_rows(const Tensor& logits) {
  const Mat m = as_matrix(logits, "softmax");
  Tensor p(logits.shape());
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* z = logits.raw() + r * m.cols;
    double* out = p.raw() + r * m.cols;
    const double zmax = *std::max_element(z, z + m.cols);
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) {
      out[c] = std::exp(z[c] - zmax);
      s += out[c];
    }
    for (std::size_t c = 0; c < m.cols; ++c) out[c] /= s;
  }
  return p;
}

void accumulate(std::optional<Tensor>& slot, Tensor contribution) {
  if (!slot) {
    slot = std::move(contribution);
  } else {
    *slot += contribution;
  }
}

Tensor elementwise(const Tensor& a, const Tensor& b, double (*f)(double, double)) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

}  // namespace

NodeId Tape::push(Node n) {
  if (!n.value.all_finite()) {
    throw NonFiniteValue(std::string(to_string(n.kind)) + ": non-finite value produced");
  }
  nodes_.push_back(std::move(n));
  return NodeId{nodes_.size() - 1};
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

NodeId Tape::dense(NodeId x, NodeId weight, NodeId bias) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(weight);
  const Tensor& bv = value(bias);
  if (wv.rank() != 2) throw ShapeMismatch("dense", "weight rank 2", to_string(wv.shape()));
  const std::size_t out = wv.dim(0), in = wv.dim(1);
  if (bv.shape() != Shape{out}) throw ShapeMismatch("dense", "bias " + to_string(Shape{out}), to_string(bv.shape()));
  const Mat xm = as_matrix(xv, "dense");
  if (xm.cols != in) throw ShapeMismatch("dense", "input width " + std::to_string(in), to_string(xv.shape()));
  Node n;
  n.kind = OpKind::dense;
  n.inputs = {x, weight, bias};
  n.value = Tensor(xv.rank() == 1 ? Shape{out} : Shape{xm.rows, out});
  kernels::dense_forward(xv.data(), wv.data(), bv.data(), n.value.data(), xm.rows, in, out);
  n.requires_grad = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
  return push(std::move(n));
}

NodeId Tape::conv2d(NodeId x, NodeId weight, NodeId bias) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(weight);
  const Tensor& bv = value(bias);
  if (xv.rank() != 4) throw ShapeMismatch("conv2d", "input [B,C,H,W]", to_string(xv.shape()));
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3) || wv.dim(2) % 2 == 0 || wv.dim(1) != xv.dim(1)) {
    throw ShapeMismatch("conv2d", "weight [O," + std::to_string(xv.dim(1)) + ",k,k] with odd k",
                        to_string(wv.shape()));
  }
  if (bv.shape() != Shape{wv.dim(0)}) throw ShapeMismatch("conv2d", to_string(Shape{wv.dim(0)}), to_string(bv.shape()));
  const kernels::ConvDims d{xv.dim(0), xv.dim(1), wv.dim(0), xv.dim(2), xv.dim(3), wv.dim(2)};
  Node n;
  n.kind = OpKind::conv2d;
  n.inputs = {x, weight, bias};
  n.value = Tensor(Shape{d.batch, d.out_channels, d.height, d.width});
  kernels::conv2d_forward(xv.data(), wv.data(), bv.data(), n.value.data(), d);
  n.requires_grad = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
  return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
  const Tensor& xv = value(x);
  Node n;
  n.kind = OpKind::relu;
  n.inputs = {x};
  n.value = Tensor(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) n.value[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Tape::softplus(NodeId x) {
  const Tensor& xv = value(x);
  Node n;
  n.kind = OpKind::softplus;
  n.inputs = {x};
  n.value = Tensor(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) n.value[i] = stable_softplus(xv[i]);
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId x) {
  const Tensor& xv = value(x);
  Node n;
  n.kind = OpKind::sigmoid;
  n.inputs = {x};
  n.value = Tensor(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) n.value[i] = stable_sigmoid(xv[i]);
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Tape::maxpool2x2(NodeId x) {
  const Tensor& xv = value(x);
  if (xv.rank() != 4 || xv.dim(2) < 2 || xv.dim(3) < 2) {
    throw ShapeMismatch("maxpool2x2", "[B,C,H,W] with H,W >= 2", to_string(xv.shape()));
  }
  const kernels::PoolDims d{xv.dim(0) * xv.dim(1), xv.dim(2), xv.dim(3)};
  Node n;
  n.kind = OpKind::maxpool2x2;
  n.inputs = {x};
  n.value = Tensor(Shape{xv.dim(0), xv.dim(1), d.out_height(), d.out_width()});
  n.argmax.resize(n.value.size());
  kernels::maxpool2x2_forward(xv.data(), n.value.data(), n.argmax, d);
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Tape::flatten(NodeId x) {
  const Tensor& xv = value(x);
  if (xv.rank() < 2) throw ShapeMismatch("flatten", "rank >= 2", to_string(xv.shape()));
  Node n;
  n.kind = OpKind::flatten;
  n.inputs = {x};
  n.value = xv.reshaped(Shape{xv.dim(0), xv.size() / xv.dim(0)});
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  if (value(a).shape() != value(b).shape()) {
    throw ShapeMismatch("add", to_string(value(a).shape()), to_string(value(b).shape()));
  }
  Node n;
  n.kind = OpKind::add;
  n.inputs = {a, b};
  n.value = value(a) + value(b);
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

NodeId Tape::scale(NodeId x, double factor) {
  Node n;
  n.kind = OpKind::scale;
  n.inputs = {x};
  n.factor = factor;
  n.value = factor * value(x);
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  if (value(a).shape() != value(b).shape()) {
    throw ShapeMismatch("mul", to_string(value(a).shape()), to_string(value(b).shape()));
  }
  Node n;
  n.kind = OpKind::mul;
  n.inputs = {a, b};
  n.value = elementwise(value(a), value(b), [](double u, double v) { return u * v; });
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

NodeId Tape::mul_scalar(NodeId x, NodeId s) {
  if (value(s).size() != 1) throw ShapeMismatch("mul_scalar", "[1]", to_string(value(s).shape()));
  Node n;
  n.kind = OpKind::mul_scalar;
  n.inputs = {x, s};
  n.value = value(s)[0] * value(x);
  n.requires_grad = requires_grad(x) || requires_grad(s);
  return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
  double s = 0.0;
  for (double v : value(x).data()) s += v;
  Node n;
  n.kind = OpKind::sum;
  n.inputs = {x};
  n.value = Tensor::scalar(s);
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Tape::softmax_xent(NodeId logits, std::span<const int> labels, Reduction reduction) {
  const Tensor& z = value(logits);
  check_labels(z, labels, "softmax_xent");
  const Mat m = as_matrix(z, "softmax_xent");
  double total = 0.0;
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = z.raw() + r * m.cols;
    const double zmax = *std::max_element(row, row + m.cols);
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) s += std::exp(row[c] - zmax);
    total += std::log(s) - (row[labels[r]] - zmax);
  }
  Node n;
  n.kind = OpKind::softmax_xent;
  n.inputs = {logits};
  n.labels.assign(labels.begin(), labels.end());
  n.reduction = reduction;
  n.value = Tensor::scalar(reduction == Reduction::mean ? total / static_cast<double>(m.rows) : total);
  n.requires_grad = requires_grad(logits);
  return push(std::move(n));
}

NodeId Tape::xent_grad(NodeId logits, std::span<const int> labels, Reduction reduction) {
  const Tensor& z = value(logits);
  check_labels(z, labels, "xent_grad");
  const Mat m = as_matrix(z, "xent_grad");
  const double c = reduction == Reduction::mean ? 1.0 / static_cast<double>(m.rows) : 1.0;
  Node n;
  n.kind = OpKind::xent_grad;
  n.inputs = {logits};
  n.labels.assign(labels.begin(), labels.end());
  n.reduction = reduction;
  n.aux = softmax_rows(z);
  n.value = n.aux;
  for (std::size_t r = 0; r < m.rows; ++r) n.value[r * m.cols + static_cast<std::size_t>(labels[r])] -= 1.0;
  n.value = c * n.value;
  n.factor = c;
  n.requires_grad = requires_grad(logits);
  return push(std::move(n));
}

NodeId Tape::row_cosine(NodeId x, Tensor reference) {
  const Tensor& xv = value(x);
  if (reference.shape() != xv.shape()) throw ShapeMismatch("row_cosine", to_string(xv.shape()), to_string(reference.shape()));
  const std::size_t rows = row_count(xv);
  const std::size_t width = xv.size() / std::max<std::size_t>(rows, 1);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    total += cosine(xv.data().subspan(r * width, width), reference.data().subspan(r * width, width));
  }
  Node n;
  n.kind = OpKind::row_cosine;
  n.inputs = {x};
  n.aux = std::move(reference);
  n.value = Tensor::scalar(total / static_cast<double>(rows));
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Tape::matmul_nn(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  const Mat am = as_matrix(av, "matmul_nn");
  if (bv.rank() != 2 || bv.dim(0) != am.cols) {
    throw ShapeMismatch("matmul_nn", "[" + std::to_string(am.cols) + ",n]", to_string(bv.shape()));
  }
  const std::size_t ncols = bv.dim(1);
  Node n;
  n.kind = OpKind::matmul_nn;
  n.inputs = {a, b};
  n.value = Tensor(av.rank() == 1 ? Shape{ncols} : Shape{am.rows, ncols});
  kernels::matmul_nn(av.data(), bv.data(), n.value.data(), am.rows, am.cols, ncols);
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

NodeId Tape::matmul_tn(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  const Mat am = as_matrix(av, "matmul_tn");
  const Mat bm = as_matrix(bv, "matmul_tn");
  if (am.rows != bm.rows) throw ShapeMismatch("matmul_tn", to_string(av.shape()), to_string(bv.shape()));
  Node n;
  n.kind = OpKind::matmul_tn;
  n.inputs = {a, b};
  n.value = Tensor(Shape{am.cols, bm.cols});
  kernels::matmul_tn(av.data(), bv.data(), n.value.data(), am.cols, am.rows, bm.cols);
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

NodeId Tape::sum_rows(NodeId x) {
  const Tensor& xv = value(x);
  const Mat m = as_matrix(xv, "sum_rows");
  Node n;
  n.kind = OpKind::sum_rows;
  n.inputs = {x};
  n.value = Tensor(Shape{m.cols});
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) n.value[c] += xv[r * m.cols + c];
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

void Tape::register_site(int site, NodeId node) {
  if (node.index >= nodes_.size()) throw std::out_of_range("register_site: unknown node");
  sites_[site] = node;
}

NodeId Tape::site(int site) const {
  const auto it = sites_.find(site);
  if (it == sites_.end()) throw UnknownSite(site);
  return it->second;
}

Gradients Tape::backward(NodeId loss) const {
  const Tensor& v = value(loss);
  if (v.size() != 1) throw NonScalarLoss(v.size());
  return backward_from(loss, Tensor(v.shape(), 1.0));
}

Gradients Tape::backward_from(NodeId output, const Tensor& seed) const {
  if (seed.shape() != value(output).shape()) {
    throw ShapeMismatch("backward", to_string(value(output).shape()), to_string(seed.shape()));
  }
  ++pass_counts().backward;
  Gradients result;
  result.grads_.resize(nodes_.size());
  result.grads_[output.index] = seed;
  for (std::size_t i = output.index + 1; i-- > 0;) {
    if (!result.grads_[i] || !nodes_[i].requires_grad) continue;
    backprop_node(i, *result.grads_[i], result.grads_);
  }
  return result;
}

void Tape::backprop_node(std::size_t index, const Tensor& g, std::vector<std::optional<Tensor>>& grads) const {
  const Node& n = nodes_[index];
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k].index].requires_grad; };
  auto slot = [&](std::size_t k) -> std::optional<Tensor>& { return grads[n.inputs[k].index]; };
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k].index].value; };

  switch (n.kind) {
    case OpKind::leaf:
      return;
    case OpKind::dense: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const std::size_t out = w.dim(0), width = w.dim(1);
      const std::size_t rows = as_matrix(x, "dense").rows;
      if (wants(0)) {
        Tensor gx(x.shape());
        kernels::matmul_nn(g.data(), w.data(), gx.data(), rows, out, width);
        accumulate(slot(0), std::move(gx));
      }
      if (wants(1)) {
        Tensor gw(w.shape());
        kernels::matmul_tn(g.data(), x.data(), gw.data(), out, rows, width);
        accumulate(slot(1), std::move(gw));
      }
      if (wants(2)) {
        Tensor gb(Shape{out});
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < out; ++o) gb[o] += g[r * out + o];
        accumulate(slot(2), std::move(gb));
      }
      return;
    }
    case OpKind::conv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const kernels::ConvDims d{x.dim(0), x.dim(1), w.dim(0), x.dim(2), x.dim(3), w.dim(2)};
      if (wants(0)) {
        Tensor gx(x.shape());
        kernels::conv2d_backward_input(g.data(), w.data(), gx.data(), d);
        accumulate(slot(0), std::move(gx));
      }
      if (wants(1) || wants(2)) {
        Tensor gw(w.shape());
        Tensor gb(Shape{w.dim(0)});
        kernels::conv2d_backward_params(g.data(), x.data(), gw.data(), gb.data(), d);
        if (wants(1)) accumulate(slot(1), std::move(gw));
        if (wants(2)) accumulate(slot(2), std::move(gb));
      }
      return;
    }
    case OpKind::relu: {
      const Tensor& x = in(0);
      Tensor gx(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? g[i] : 0.0;
      accumulate(slot(0), std::move(gx));
      return;
    }
    case OpKind::softplus: {
      const Tensor& x = in(0);
      Tensor gx(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] = g[i] * stable_sigmoid(x[i]);
      accumulate(slot(0), std::move(gx));
      return;
    }
    case OpKind::sigmoid: {
      Tensor gx(n.value.shape());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * n.value[i] * (1.0 - n.value[i]);
      accumulate(slot(0), std::move(gx));
      return;
    }
    case OpKind::maxpool2x2: {
      Tensor gx(in(0).shape());
      kernels::maxpool2x2_backward(g.data(), n.argmax, gx.data());
      accumulate(slot(0), std::move(gx));
      return;
    }
    case OpKind::flatten:
      accumulate(slot(0), g.reshaped(in(0).shape()));
      return;
    case OpKind::add:
      if (wants(0)) accumulate(slot(0), g);
      if (wants(1)) accumulate(slot(1), g);
      return;
    case OpKind::scale:
      accumulate(slot(0), n.factor * g);
      return;
    case OpKind::mul:
      if (wants(0)) accumulate(slot(0), elementwise(g, in(1), [](double u, double v) { return u * v; }));
      if (wants(1)) accumulate(slot(1), elementwise(g, in(0), [](double u, double v) { return u * v; }));
      return;
    case OpKind::mul_scalar:
      if (wants(0)) accumulate(slot(0), in(1)[0] * g);
      if (wants(1)) accumulate(slot(1), Tensor::scalar(dot(g, in(0))));
      return;
    case OpKind::sum:
      accumulate(slot(0), Tensor(in(0).shape(), g[0]));
      return;
    case OpKind::softmax_xent: {
      const Tensor& z = in(0);
      const Mat m = as_matrix(z, "softmax_xent");
      Tensor gz = softmax_rows(z);
      for (std::size_t r = 0; r < m.rows; ++r) gz[r * m.cols + static_cast<std::size_t>(n.labels[r])] -= 1.0;
      const double c = (n.reduction == Reduction::mean ? 1.0 / static_cast<double>(m.rows) : 1.0) * g[0];
      accumulate(slot(0), c * gz);
      return;
    }
    case OpKind::xent_grad: {
      // out_r = c (p_r - e_y); d/dz_r of <g_r, out_r> = c (p_r * g_r - p_r <p_r, g_r>)
      const Tensor& p = n.aux;
      const Mat m = as_matrix(p, "xent_grad");
      Tensor gz(p.shape());
      for (std::size_t r = 0; r < m.rows; ++r) {
        double pg = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) pg += p[r * m.cols + c] * g[r * m.cols + c];
        for (std::size_t c = 0; c < m.cols; ++c) {
          const std::size_t i = r * m.cols + c;
          gz[i] = n.factor * p[i] * (g[i] - pg);
        }
      }
      accumulate(slot(0), std::move(gz));
      return;
    }
    case OpKind::matmul_nn: {
      // c = a b, a [m,k], b [k,n]
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const Mat am = as_matrix(a, "matmul_nn");
      const std::size_t ncols = b.dim(1);
      if (wants(0)) {
        Tensor ga(a.shape());
        kernels::matmul_nt(g.data(), b.data(), ga.data(), am.rows, ncols, am.cols);
        accumulate(slot(0), std::move(ga));
      }
      if (wants(1)) {
        Tensor gb(b.shape());
        kernels::matmul_tn(a.data(), g.data(), gb.data(), am.cols, am.rows, ncols);
        accumulate(slot(1), std::move(gb));
      }
      return;
    }
    case OpKind::matmul_tn: {
      // c = a^T b, a [k,m], b [k,n], c [m,n]
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const Mat am = as_matrix(a, "matmul_tn");
      const Mat bm = as_matrix(b, "matmul_tn");
      if (wants(0)) {
        Tensor ga(a.shape());
        kernels::matmul_nt(b.data(), g.data(), ga.data(), bm.rows, bm.cols, am.cols);
        accumulate(slot(0), std::move(ga));
      }
      if (wants(1)) {
        Tensor gb(b.shape());
        kernels::matmul_nn(a.data(), g.data(), gb.data(), am.rows, am.cols, bm.cols);
        accumulate(slot(1), std::move(gb));
      }
      return;
    }
    case OpKind::sum_rows: {
      const Tensor& x = in(0);
      const Mat m = as_matrix(x, "sum_rows");
      Tensor gx(x.shape());
      for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) gx[r * m.cols + c] = g[c];
      accumulate(slot(0), std::move(gx));
      return;
    }
    case OpKind::row_cosine: {
      const Tensor& x = in(0);
      const Tensor& ref = n.aux;
      const std::size_t rows = row_count(x);
      const std::size_t width = x.size() / std::max<std::size_t>(rows, 1);
      Tensor gx(x.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t off = r * width;
        double xx = 0.0, rr = 0.0, xr = 0.0;
        for (std::size_t i = 0; i < width; ++i) {
          xx += x[off + i] * x[off + i];
          rr += ref[off + i] * ref[off + i];
          xr += x[off + i] * ref[off + i];
        }
        if (xx == 0.0 || rr == 0.0) continue;
        const double nx = std::sqrt(xx), nr = std::sqrt(rr);
        const double cos = xr / (nx * nr);
        const double w = g[0] / static_cast<double>(rows);
        for (std::size_t i = 0; i < width; ++i) {
          gx[off + i] = w * (ref[off + i] / (nx * nr) - cos * x[off + i] / xx);
        }
      }
      accumulate(slot(0), std::move(gx));
      return;
    }
  }
}

std::vector<NodeId> Tape::grad_graph(NodeId loss, std::span<const NodeId> wrt) {
  if (value(loss).size() != 1) throw NonScalarLoss(value(loss).size());
  const std::size_t count = loss.index + 1;

  // Nodes on some path from a `wrt` node to the loss.
  std::vector<char> needed(count, 0);
  for (NodeId w : wrt) {
    if (w.index < count) needed[w.index] = 1;
  }
  for (std::size_t i = 0; i < count; ++i) {
    for (NodeId in : nodes_[i].inputs) {
      if (needed[in.index]) needed[i] = 1;
    }
  }

  std::vector<std::optional<NodeId>> grads(count);
  const NodeId seed = leaf(Tensor::scalar(1.0));
  grads[loss.index] = seed;
  auto acc = [&](NodeId target, NodeId contribution) {
    auto& s = grads[target.index];
    s = s ? add(*s, contribution) : contribution;
  };

  for (std::size_t i = count; i-- > 0;) {
    if (!grads[i] || !needed[i]) continue;
    const NodeId g = *grads[i];
    // Copy what we need: pushing nodes may reallocate nodes_.
    const OpKind kind = nodes_[i].kind;
    const std::vector<NodeId> inputs = nodes_[i].inputs;
    auto need = [&](std::size_t k) { return needed[inputs[k].index] != 0; };
    switch (kind) {
      case OpKind::leaf:
        break;
      case OpKind::dense:
        if (need(0)) acc(inputs[0], matmul_nn(g, inputs[1]));
        if (need(1)) acc(inputs[1], matmul_tn(g, inputs[0]));
        if (need(2)) acc(inputs[2], value(g).rank() == 1 ? g : sum_rows(g));
        break;
      case OpKind::softplus:
        if (need(0)) acc(inputs[0], mul(g, sigmoid(inputs[0])));
        break;
      case OpKind::add:
        if (need(0)) acc(inputs[0], g);
        if (need(1)) acc(inputs[1], g);
        break;
      case OpKind::scale: {
        const double f = nodes_[i].factor;
        if (need(0)) acc(inputs[0], scale(g, f));
        break;
      }
      case OpKind::sum:
        if (need(0)) {
          const NodeId ones = leaf(Tensor(value(inputs[0]).shape(), 1.0));
          acc(inputs[0], mul_scalar(ones, g));
        }
        break;
      case OpKind::softmax_xent: {
        if (!need(0)) break;
        const std::vector<int> labels = nodes_[i].labels;
        const Reduction red = nodes_[i].reduction;
        const NodeId gz = xent_grad(inputs[0], labels, red);
        acc(inputs[0], g == seed ? gz : mul_scalar(gz, g));
        break;
      }
      default:
        throw UnsupportedOps(std::string("grad_graph: op '") + to_string(kind) +
                             "' does not support double differentiation");
    }
  }

  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    if (w.index < count && grads[w.index]) {
      out.push_back(*grads[w.index]);
    } else {
      out.push_back(leaf(Tensor(value(w).shape(), 0.0)));
    }
  }
  return out;
}

}  // namespace slat
