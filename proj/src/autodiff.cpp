#include "advx/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "advx/kernels.hpp"
#include "advx/keyvalue.hpp"

namespace advx {

ActivationKind ActivationKind::relu_decay(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("relu_decay requires beta > 0");
  }
  return {ActivationTag::relu_decay, beta};
}

ActivationKind ActivationKind::parse(const std::string& text) {
  if (text == "relu") return relu();
  if (text == "relu6") return relu6();
  if (text == "tanh") return tanh();
  if (text == "elu") return elu();
  const std::string prefix = "relu_decay";
  if (text.rfind(prefix, 0) == 0) {
    if (text.size() == prefix.size()) return relu_decay(0.1);
    if (text[prefix.size()] == ':') {
      std::size_t used = 0;
      const std::string num = text.substr(prefix.size() + 1);
      double beta = 0.0;
      try {
        beta = std::stod(num, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == num.size() && used > 0) return relu_decay(beta);
    }
  }
  throw std::invalid_argument("unknown activation '" + text +
                              "' (expected relu, relu6, tanh, elu, relu_decay:<beta>)");
}

std::string ActivationKind::to_string() const {
  switch (tag) {
    case ActivationTag::relu: return "relu";
    case ActivationTag::relu6: return "relu6";
    case ActivationTag::tanh: return "tanh";
    case ActivationTag::elu: return "elu";
    case ActivationTag::relu_decay: return "relu_decay:" + format_double(beta);
  }
  return "?";
}

double activate(const ActivationKind& kind, double x) {
  switch (kind.tag) {
    case ActivationTag::relu: return x > 0.0 ? x : 0.0;
    case ActivationTag::relu6: return x > 0.0 ? std::min(x, 6.0) : 0.0;
    case ActivationTag::tanh: return std::tanh(x);
    case ActivationTag::elu: return x > 0.0 ? x : std::expm1(x);
    case ActivationTag::relu_decay: return x > 0.0 ? x / (1.0 + kind.beta * x * x) : 0.0;
  }
  return 0.0;
}

double activate_derivative(const ActivationKind& kind, double x) {
  switch (kind.tag) {
    case ActivationTag::relu: return x > 0.0 ? 1.0 : 0.0;
    case ActivationTag::relu6: return (x > 0.0 && x < 6.0) ? 1.0 : 0.0;
    case ActivationTag::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case ActivationTag::elu: return x > 0.0 ? 1.0 : std::exp(x);
    case ActivationTag::relu_decay: {
      if (!(x > 0.0)) return 0.0;
      const double bx2 = kind.beta * x * x;
      const double d = 1.0 + bx2;
      return (1.0 - bx2) / (d * d);
    }
  }
  return 0.0;
}

const Tensor& Gradients::of(Var v) const {
  if (!has(v)) {
    throw std::out_of_range("no gradient recorded for node " + std::to_string(v.id));
  }
  return grads_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) {
    throw std::out_of_range("node id " + std::to_string(v.id) + " not on this tape");
  }
  return nodes_[v.id];
}

void Tape::check_open() const {
  if (consumed_) throw std::logic_error("tape already consumed by a backward pass");
}

Var Tape::push(Node n) {
  check_open();
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_to_string(av.shape()) +
                                " x " + shape_to_string(bv.shape()));
  }
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  Node out;
  out.op = Op::matmul;
  out.lhs = a.id;
  out.rhs = b.id;
  out.value = Tensor({n, m});
  kernels::gemm_nn(av.data(), bv.data(), out.value.data(), n, k, m);
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(out));
}

Var Tape::add_bias(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  if (xv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != bv.dim(0)) {
    throw std::invalid_argument("add_bias: incompatible shapes " +
                                shape_to_string(xv.shape()) + " + " +
                                shape_to_string(bv.shape()));
  }
  Node out;
  out.op = Op::add_bias;
  out.lhs = x.id;
  out.rhs = bias.id;
  out.value = xv;
  const std::size_t n = xv.dim(0), m = xv.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.value.data().data() + i * m;
    for (std::size_t j = 0; j < m; ++j) row[j] += bv[j];
  }
  out.requires_grad = node(x).requires_grad || node(bias).requires_grad;
  return push(std::move(out));
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Node out;
  out.op = Op::add;
  out.lhs = a.id;
  out.rhs = b.id;
  out.value = value(a);
  auto dst = out.value.data();
  auto src = value(b).data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(out));
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Node out;
  out.op = Op::mul;
  out.lhs = a.id;
  out.rhs = b.id;
  out.value = value(a);
  auto dst = out.value.data();
  auto src = value(b).data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= src[i];
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(out));
}

Var Tape::scale(Var x, double factor) {
  Node out;
  out.op = Op::scale;
  out.lhs = x.id;
  out.scalar = factor;
  out.value = value(x);
  for (double& v : out.value.data()) v *= factor;
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Var Tape::activation(Var x, const ActivationKind& kind) {
  Node out;
  out.op = Op::activation;
  out.lhs = x.id;
  out.act = kind;
  out.value = value(x);
  for (double& v : out.value.data()) v = activate(kind, v);
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Var Tape::dropout(Var x, double rate, std::mt19937_64& rng, bool training) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " +
                                std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const Tensor& xv = value(x);
  Node out;
  out.op = Op::dropout;
  out.lhs = x.id;
  out.saved = Tensor(xv.shape());
  out.value = xv;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double m = keep(rng) ? keep_scale : 0.0;
    out.saved[i] = m;
    out.value[i] *= m;
  }
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) == 0) {
    throw std::invalid_argument("softmax: expected [n, c] logits with c > 0, got " +
                                shape_to_string(logits.shape()));
  }
  Tensor p(logits.shape());
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    auto in = logits.row(i);
    auto out = p.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[j] = std::exp(in[j] - mx);
      z += out[j];
    }
    for (std::size_t j = 0; j < c; ++j) out[j] /= z;
  }
  return p;
}

namespace {

// log-sum-exp of one row, max-subtracted.
double row_logsumexp(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  return mx + std::log(z);
}

}  // namespace

Var Tape::softmax_cross_entropy(Var logits, const Tensor& label_dist) {
  const Tensor& lv = value(logits);
  if (lv.rank() != 2 || lv.dim(1) == 0) {
    throw std::invalid_argument("softmax_cross_entropy: zero-length class axis or bad rank " +
                                shape_to_string(lv.shape()));
  }
  require_same_shape(lv, label_dist, "softmax_cross_entropy labels");
  const std::size_t n = lv.dim(0), c = lv.dim(1);
  Node out;
  out.op = Op::softmax_xent;
  out.lhs = logits.id;
  out.value = Tensor({n});
  out.saved = label_dist;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = lv.row(i);
    auto q = label_dist.row(i);
    double qsum = 0.0;
    for (double v : q) qsum += v;
    if (std::abs(qsum - 1.0) > 1e-9) {
      throw std::invalid_argument("softmax_cross_entropy: label distribution of row " +
                                  std::to_string(i) + " sums to " + std::to_string(qsum));
    }
    const double lse = row_logsumexp(row);
    double loss = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (q[j] != 0.0) loss -= q[j] * (row[j] - lse);
    }
    out.value[i] = loss;
  }
  out.requires_grad = node(logits).requires_grad;
  return push(std::move(out));
}

Var Tape::entropy(Var logits) {
  const Tensor& lv = value(logits);
  if (lv.rank() != 2 || lv.dim(1) < 2) {
    throw std::invalid_argument("entropy: expected [n, c] logits with c >= 2, got " +
                                shape_to_string(lv.shape()));
  }
  const std::size_t n = lv.dim(0), c = lv.dim(1);
  Node out;
  out.op = Op::entropy;
  out.lhs = logits.id;
  out.value = Tensor({n});
  out.saved = Tensor({n, c});  // log-probabilities
  for (std::size_t i = 0; i < n; ++i) {
    auto row = lv.row(i);
    auto logp = out.saved.row(i);
    const double lse = row_logsumexp(row);
    double h = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      logp[j] = row[j] - lse;
      h -= std::exp(logp[j]) * logp[j];
    }
    out.value[i] = h;
  }
  out.requires_grad = node(logits).requires_grad;
  return push(std::move(out));
}

Var Tape::weighted_sum(Var x, const Tensor& weights) {
  const Tensor& xv = value(x);
  if (weights.size() != xv.size()) {
    throw std::invalid_argument("weighted_sum: " + std::to_string(weights.size()) +
                                " weights for " + std::to_string(xv.size()) + " values");
  }
  Node out;
  out.op = Op::weighted_sum;
  out.lhs = x.id;
  out.saved = weights;
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += weights[i] * xv[i];
  out.value = Tensor::scalar(s);
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Var Tape::sum(Var x) {
  Node out;
  out.op = Op::sum;
  out.lhs = x.id;
  double s = 0.0;
  for (double v : value(x).data()) s += v;
  out.value = Tensor::scalar(s);
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Var Tape::sum_squares(Var x) {
  Node out;
  out.op = Op::sum_squares;
  out.lhs = x.id;
  double s = 0.0;
  for (double v : value(x).data()) s += v * v;
  out.value = Tensor::scalar(s);
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Gradients Tape::backward(Var root) {
  const Tensor& rv = value(root);
  if (rv.size() != 1) {
    throw std::invalid_argument("backward without a seed needs a scalar root, got " +
                                shape_to_string(rv.shape()));
  }
  return backward(root, Tensor(rv.shape(), 1.0));
}

Gradients Tape::backward(Var root, const Tensor& seed) {
  check_open();
  require_same_shape(value(root), seed, "backward seed");
  consumed_ = true;

  Gradients result;
  auto& g = result.grads_;
  g.resize(nodes_.size());
  g[root.id] = seed;

  auto accumulate = [&](std::size_t target, Tensor delta) {
    if (target == kNone || !nodes_[target].requires_grad) return;
    Tensor& slot = g[target];
    if (slot.empty()) {
      slot = std::move(delta);
    } else {
      auto dst = slot.data();
      auto src = delta.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  };

  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& nd = nodes_[id];
    if (!nd.requires_grad || g[id].empty() || nd.op == Op::leaf) continue;
    const Tensor& dy = g[id];

    switch (nd.op) {
      case Op::leaf: break;
      case Op::matmul: {
        const Tensor& a = nodes_[nd.lhs].value;
        const Tensor& b = nodes_[nd.rhs].value;
        const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
        if (nodes_[nd.lhs].requires_grad) {
          Tensor da({n, k});
          kernels::gemm_nt(dy.data(), b.data(), da.data(), n, m, k);
          accumulate(nd.lhs, std::move(da));
        }
        if (nodes_[nd.rhs].requires_grad) {
          Tensor db({k, m});
          kernels::gemm_tn(a.data(), dy.data(), db.data(), k, n, m);
          accumulate(nd.rhs, std::move(db));
        }
        break;
      }
      case Op::add_bias: {
        if (nodes_[nd.rhs].requires_grad) {
          Tensor db({dy.dim(1)});
          kernels::column_sums(dy.data(), db.data(), dy.dim(0), dy.dim(1));
          accumulate(nd.rhs, std::move(db));
        }
        accumulate(nd.lhs, dy);
        break;
      }
      case Op::add:
        accumulate(nd.lhs, dy);
        accumulate(nd.rhs, dy);
        break;
      case Op::mul: {
        const Tensor& a = nodes_[nd.lhs].value;
        const Tensor& b = nodes_[nd.rhs].value;
        if (nodes_[nd.lhs].requires_grad) {
          Tensor da(dy.shape());
          for (std::size_t i = 0; i < da.size(); ++i) da[i] = dy[i] * b[i];
          accumulate(nd.lhs, std::move(da));
        }
        if (nodes_[nd.rhs].requires_grad) {
          Tensor db(dy.shape());
          for (std::size_t i = 0; i < db.size(); ++i) db[i] = dy[i] * a[i];
          accumulate(nd.rhs, std::move(db));
        }
        break;
      }
      case Op::scale: {
        Tensor dx = dy;
        for (double& v : dx.data()) v *= nd.scalar;
        accumulate(nd.lhs, std::move(dx));
        break;
      }
      case Op::activation: {
        const Tensor& x = nodes_[nd.lhs].value;
        Tensor dx(dy.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) {
          dx[i] = dy[i] * activate_derivative(nd.act, x[i]);
        }
        accumulate(nd.lhs, std::move(dx));
        break;
      }
      case Op::dropout: {
        Tensor dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= nd.saved[i];
        accumulate(nd.lhs, std::move(dx));
        break;
      }
      case Op::softmax_xent: {
        const Tensor& logits = nodes_[nd.lhs].value;
        Tensor dx = softmax_rows(logits);
        const std::size_t n = logits.dim(0), c = logits.dim(1);
        for (std::size_t i = 0; i < n; ++i) {
          auto p = dx.row(i);
          auto q = nd.saved.row(i);
          double qsum = 0.0;
          for (double v : q) qsum += v;
          for (std::size_t j = 0; j < c; ++j) p[j] = dy[i] * (p[j] * qsum - q[j]);
        }
        accumulate(nd.lhs, std::move(dx));
        break;
      }
      case Op::entropy: {
        const std::size_t n = nd.saved.dim(0), c = nd.saved.dim(1);
        Tensor dx({n, c});
        for (std::size_t i = 0; i < n; ++i) {
          auto logp = nd.saved.row(i);
          auto out = dx.row(i);
          const double h = nd.value[i];
          for (std::size_t j = 0; j < c; ++j) {
            out[j] = -dy[i] * std::exp(logp[j]) * (logp[j] + h);
          }
        }
        accumulate(nd.lhs, std::move(dx));
        break;
      }
      case Op::weighted_sum: {
        Tensor dx(nodes_[nd.lhs].value.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[0] * nd.saved[i];
        accumulate(nd.lhs, std::move(dx));
        break;
      }
      case Op::sum: {
        accumulate(nd.lhs, Tensor(nodes_[nd.lhs].value.shape(), dy[0]));
        break;
      }
      case Op::sum_squares: {
        Tensor dx = nodes_[nd.lhs].value;
        for (double& v : dx.data()) v *= 2.0 * dy[0];
        accumulate(nd.lhs, std::move(dx));
        break;
      }
    }
    // Intermediate gradients are no longer needed once propagated.
    if (nd.op != Op::leaf && id != root.id) g[id] = Tensor();
  }
  return result;
}

Tensor smoothed_labels(std::span<const int> labels, std::size_t num_classes,
                       double smoothing) {
  if (num_classes == 0) throw std::invalid_argument("smoothed_labels: zero classes");
  if (!(smoothing >= 0.0) || smoothing >= 1.0) {
    throw std::invalid_argument("label smoothing must lie in [0, 1)");
  }
  Tensor q({labels.size(), num_classes}, smoothing / static_cast<double>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::invalid_argument("label " + std::to_string(y) + " out of range");
    }
    q.at(i, static_cast<std::size_t>(y)) += 1.0 - smoothing;
  }
  return q;
}

}  // namespace advx
