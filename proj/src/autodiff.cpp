// SPDX-License-Identifier: Apache-2.0
#include "gatekd/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace gatekd {

template <typename T>
Var Tape<T>::constant(Mat<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::leaf(Param<T>& p) {
  Node n;
  n.alias = &p.value;
  if (grad_enabled_) {
    n.param = &p;
    n.requires_grad = true;
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::frozen(const Param<T>& p) {
  Node n;
  n.alias = &p.value;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::record(Mat<T> value, std::initializer_list<Var> inputs, Backward fn) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

template <typename T>
Var Tape<T>::record(Mat<T> value, const std::vector<Var>& inputs, Backward fn) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (Var v : inputs) {
      if (nodes_[v.id].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
const Mat<T>& Tape<T>::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.alias != nullptr ? *n.alias : n.value;
}

template <typename T>
Mat<T>& Tape<T>::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.param != nullptr) return n.param->grad;
  if (!n.has_grad) {
    const Mat<T>& val = value(v);
    n.grad.setZero(val.rows(), val.cols());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss, T seed) {
  require(grad_enabled_, "backward on a tape recorded without gradients");
  require(value(loss).size() == 1, "backward requires a scalar node");
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss)(0, 0) += seed;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    // The closure may grow other nodes' grads but never this one's.
    Mat<T> g = std::move(n.grad);
    n.backward(*this, g);
    n.has_grad = false;
  }
}

template <typename T>
Mat<T> softmax_rows(const Mat<T>& logits) {
  Mat<T> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

namespace ad {

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  Mat<T> out = t.value(a) * t.value(b);
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Mat<T>& g) {
    if (tp.requires_grad(a)) tp.grad(a).noalias() += g * tp.value(b).transpose();
    if (tp.requires_grad(b)) tp.grad(b).noalias() += tp.value(a).transpose() * g;
  });
}

template <typename T>
Var matmul_nt(Tape<T>& t, Var a, Var b) {
  Mat<T> out = t.value(a) * t.value(b).transpose();
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Mat<T>& g) {
    if (tp.requires_grad(a)) tp.grad(a).noalias() += g * tp.value(b);
    if (tp.requires_grad(b)) tp.grad(b).noalias() += g.transpose() * tp.value(a);
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
          "add: shape mismatch");
  Mat<T> out = t.value(a) + t.value(b);
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Mat<T>& g) {
    if (tp.requires_grad(a)) tp.grad(a) += g;
    if (tp.requires_grad(b)) tp.grad(b) += g;
  });
}

template <typename T>
Var add_row(Tape<T>& t, Var a, Var row) {
  require(t.value(row).rows() == 1 && t.value(row).cols() == t.value(a).cols(),
          "add_row: shape mismatch");
  Mat<T> out = t.value(a);
  out.rowwise() += t.value(row).row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape<T>& tp, const Mat<T>& g) {
    if (tp.requires_grad(a)) tp.grad(a) += g;
    if (tp.requires_grad(row)) tp.grad(row) += g.colwise().sum();
  });
}

template <typename T>
Var add_const(Tape<T>& t, Var a, const Mat<T>& c) {
  Mat<T> out = t.value(a) + c;
  return t.record(std::move(out), {a}, [a](Tape<T>& tp, const Mat<T>& g) { tp.grad(a) += g; });
}

template <typename T>
Var scale(Tape<T>& t, Var a, T s) {
  Mat<T> out = t.value(a) * s;
  return t.record(std::move(out), {a}, [a, s](Tape<T>& tp, const Mat<T>& g) { tp.grad(a) += g * s; });
}

namespace {
template <typename T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
}

template <typename T>
Var gelu(Tape<T>& t, Var a) {
  const Mat<T>& x = t.value(a);
  Mat<T> th = (kGeluC<T> * (x.array() + T(0.044715) * x.array().cube())).tanh().matrix();
  Mat<T> out = (T(0.5) * x.array() * (T(1) + th.array())).matrix();
  return t.record(std::move(out), {a}, [a, th = std::move(th)](Tape<T>& tp, const Mat<T>& g) {
    const auto x = tp.value(a).array();
    auto sech2 = T(1) - th.array().square();
    auto d = T(0.5) * (T(1) + th.array()) +
             T(0.5) * x * sech2 * kGeluC<T> * (T(1) + T(3 * 0.044715) * x.square());
    tp.grad(a).array() += g.array() * d;
  });
}

template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gain, Var bias) {
  constexpr T kEps = T(1e-5);
  const Mat<T>& in = t.value(x);
  const auto n = in.rows();
  const auto d = in.cols();
  Mat<T> xhat(n, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = in.row(r).mean();
    auto centered = in.row(r).array() - mean;
    const T var = centered.square().mean();
    inv_std(r) = T(1) / std::sqrt(var + kEps);
    xhat.row(r) = centered * inv_std(r);
  }
  Mat<T> out = xhat;
  out.array().rowwise() *= t.value(gain).row(0).array();
  out.rowwise() += t.value(bias).row(0);
  return t.record(std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape<T>& tp, const Mat<T>& g) {
                    if (tp.requires_grad(gain))
                      tp.grad(gain) += (g.array() * xhat.array()).colwise().sum().matrix();
                    if (tp.requires_grad(bias)) tp.grad(bias) += g.colwise().sum();
                    if (!tp.requires_grad(x)) return;
                    Mat<T> dxhat = g;
                    dxhat.array().rowwise() *= tp.value(gain).row(0).array();
                    Mat<T>& gx = tp.grad(x);
                    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                      const T m1 = dxhat.row(r).mean();
                      const T m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
                      gx.row(r).array() +=
                          inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                    }
                  });
}

template <typename T>
Var slice_cols(Tape<T>& t, Var a, int start, int count) {
  require(start >= 0 && start + count <= t.value(a).cols(), "slice_cols: out of range");
  Mat<T> out = t.value(a).middleCols(start, count);
  return t.record(std::move(out), {a}, [a, start, count](Tape<T>& tp, const Mat<T>& g) {
    tp.grad(a).middleCols(start, count) += g;
  });
}

template <typename T>
Var concat_cols(Tape<T>& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const auto rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    require(t.value(p).rows() == rows, "concat_cols: row mismatch");
    cols += t.value(p).cols();
  }
  Mat<T> out(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    out.middleCols(c, t.value(p).cols()) = t.value(p);
    c += t.value(p).cols();
  }
  return t.record(std::move(out), parts, [parts](Tape<T>& tp, const Mat<T>& g) {
    Eigen::Index off = 0;
    for (Var p : parts) {
      const auto w = tp.value(p).cols();
      if (tp.requires_grad(p)) tp.grad(p) += g.middleCols(off, w);
      off += w;
    }
  });
}

template <typename T>
Var softmax_rows(Tape<T>& t, Var a, bool causal) {
  const Mat<T>& in = t.value(a);
  Mat<T> out = Mat<T>::Zero(in.rows(), in.cols());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const Eigen::Index width = causal ? std::min<Eigen::Index>(r + 1, in.cols()) : in.cols();
    auto src = in.row(r).head(width);
    const T m = src.maxCoeff();
    auto dst = out.row(r).head(width);
    dst = (src.array() - m).exp();
    dst /= dst.sum();
  }
  Mat<T> keep = out;
  return t.record(std::move(out), {a}, [a, p = std::move(keep)](Tape<T>& tp, const Mat<T>& g) {
    Mat<T>& ga = tp.grad(a);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const T dot = (g.row(r).array() * p.row(r).array()).sum();
      ga.row(r).array() += p.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

template <typename T>
Var embed(Tape<T>& t, Var table, std::span<const Token> ids) {
  const Mat<T>& tab = t.value(table);
  Mat<T> out(static_cast<Eigen::Index>(ids.size()), tab.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < tab.rows(), "embed: token out of range");
    out.row(static_cast<Eigen::Index>(i)) = tab.row(ids[i]);
  }
  std::vector<Token> idx(ids.begin(), ids.end());
  return t.record(std::move(out), {table}, [table, idx = std::move(idx)](Tape<T>& tp, const Mat<T>& g) {
    Mat<T>& gt = tp.grad(table);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

template <typename T>
Var cross_entropy(Tape<T>& t, Var logits, std::span<const Token> targets) {
  const Mat<T>& z = t.value(logits);
  require(static_cast<std::size_t>(z.rows()) == targets.size(), "cross_entropy: length mismatch");
  Mat<T> probs = gatekd::softmax_rows<T>(z);
  T loss = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    require(targets[r] >= 0 && targets[r] < z.cols(), "cross_entropy: target out of range");
    const auto row = static_cast<Eigen::Index>(r);
    const T m = z.row(row).maxCoeff();
    const T lse = m + std::log((z.row(row).array() - m).exp().sum());
    loss += lse - z(row, targets[r]);
  }
  const T inv_n = T(1) / static_cast<T>(targets.size());
  Mat<T> out(1, 1);
  out(0, 0) = loss * inv_n;
  std::vector<Token> tgt(targets.begin(), targets.end());
  return t.record(std::move(out), {logits},
                  [logits, inv_n, p = std::move(probs), tgt = std::move(tgt)](Tape<T>& tp, const Mat<T>& g) {
                    Mat<T>& gz = tp.grad(logits);
                    const T s = g(0, 0) * inv_n;
                    gz += p * s;
                    for (std::size_t r = 0; r < tgt.size(); ++r) gz(static_cast<Eigen::Index>(r), tgt[r]) -= s;
                  });
}

template <typename T>
Var weighted_sum(Tape<T>& t, const std::vector<Var>& xs, const std::vector<T>& ws) {
  require(xs.size() == ws.size(), "weighted_sum: size mismatch");
  Mat<T> out = Mat<T>::Zero(1, 1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require(t.value(xs[i]).size() == 1, "weighted_sum: operands must be scalar");
    out(0, 0) += ws[i] * t.value(xs[i])(0, 0);
  }
  return t.record(std::move(out), xs, [xs, ws](Tape<T>& tp, const Mat<T>& g) {
    for (std::size_t i = 0; i < xs.size(); ++i)
      if (tp.requires_grad(xs[i])) tp.grad(xs[i])(0, 0) += g(0, 0) * ws[i];
  });
}

}  // namespace ad

#define GATEKD_INSTANTIATE(T)                                                        \
  template class Tape<T>;                                                            \
  template Mat<T> softmax_rows<T>(const Mat<T>&);                                    \
  template Var ad::matmul<T>(Tape<T>&, Var, Var);                                    \
  template Var ad::matmul_nt<T>(Tape<T>&, Var, Var);                                 \
  template Var ad::add<T>(Tape<T>&, Var, Var);                                       \
  template Var ad::add_row<T>(Tape<T>&, Var, Var);                                   \
  template Var ad::add_const<T>(Tape<T>&, Var, const Mat<T>&);                       \
  template Var ad::scale<T>(Tape<T>&, Var, T);                                       \
  template Var ad::gelu<T>(Tape<T>&, Var);                                           \
  template Var ad::layer_norm<T>(Tape<T>&, Var, Var, Var);                           \
  template Var ad::slice_cols<T>(Tape<T>&, Var, int, int);                           \
  template Var ad::concat_cols<T>(Tape<T>&, const std::vector<Var>&);                \
  template Var ad::softmax_rows<T>(Tape<T>&, Var, bool);                             \
  template Var ad::embed<T>(Tape<T>&, Var, std::span<const Token>);                  \
  template Var ad::cross_entropy<T>(Tape<T>&, Var, std::span<const Token>);          \
  template Var ad::weighted_sum<T>(Tape<T>&, const std::vector<Var>&, const std::vector<T>&);

GATEKD_INSTANTIATE(float)
GATEKD_INSTANTIATE(double)

#undef GATEKD_INSTANTIATE

}  // namespace gatekd
