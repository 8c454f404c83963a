#include "distnav/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace distnav::ad {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

bool any_rg(Var a) { return a.tape->requires_grad(a.id); }
bool any_rg(Var a, Var b) { return any_rg(a) || any_rg(b); }

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

template <class F, class DF>
Var unary(Var x, F f, DF df) {
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  Mat out = xv.unaryExpr(f);
  int xi = x.id;
  return t.emit(std::move(out), any_rg(x), [xi, df](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    const Mat& xv = tp.value(xi);
    tp.accumulate(xi, g.cwiseProduct(xv.unaryExpr(df)));
  });
}

}  // namespace

Segments Segments::uniform(int count, int length) {
  Segments s;
  for (int i = 0; i < count; ++i) s.push(length);
  return s;
}

Var Tape::constant(Mat v) {
  nodes_.push_back(Node{std::move(v), nullptr, Mat(), nullptr, false});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant_ref(const Mat& v) {
  nodes_.push_back(Node{Mat(), &v, Mat(), nullptr, false});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Mat& v) {
  nodes_.push_back(Node{Mat(), &v, Mat(), nullptr, true});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::emit(Mat v, bool requires_grad, Backward bw) {
  Node n;
  n.own = std::move(v);
  n.rg = requires_grad;
  if (requires_grad) n.bw = std::move(bw);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root) {
  require(root.tape == this, "backward: foreign variable");
  require(root.rows() == 1 && root.cols() == 1, "backward: root must be scalar");
  if (!nodes_[root.id].rg) return;
  nodes_[root.id].grad = Mat::Ones(1, 1);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.bw && n.grad.size() != 0) n.bw(*this, i);
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Tape& t = *a.tape;
  Mat out = a.value() * b.value();
  int ai = a.id, bi = b.id;
  return t.emit(std::move(out), any_rg(a, b), [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.requires_grad(ai)) tp.accumulate(ai, g * tp.value(bi).transpose());
    if (tp.requires_grad(bi)) tp.accumulate(bi, tp.value(ai).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape& t = *a.tape;
  int ai = a.id, bi = b.id;
  return t.emit(a.value() + b.value(), any_rg(a, b), [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    tp.accumulate(ai, g);
    tp.accumulate(bi, g);
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape& t = *a.tape;
  int ai = a.id, bi = b.id;
  return t.emit(a.value() - b.value(), any_rg(a, b), [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    tp.accumulate(ai, g);
    tp.accumulate(bi, -g);
  });
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Tape& t = *a.tape;
  int ai = a.id, bi = b.id;
  return t.emit(a.value().cwiseProduct(b.value()), any_rg(a, b), [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.requires_grad(ai)) tp.accumulate(ai, g.cwiseProduct(tp.value(bi)));
    if (tp.requires_grad(bi)) tp.accumulate(bi, g.cwiseProduct(tp.value(ai)));
  });
}

Var add_row(Var x, Var row) {
  require(row.rows() == 1 && row.cols() == x.cols(), "add_row: shape mismatch");
  Tape& t = *x.tape;
  Mat out = x.value().rowwise() + row.value().row(0);
  int xi = x.id, ri = row.id;
  return t.emit(std::move(out), any_rg(x, row), [xi, ri](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    tp.accumulate(xi, g);
    if (tp.requires_grad(ri)) tp.accumulate(ri, g.colwise().sum());
  });
}

Var scale_rows(Var x, const Vec& s) {
  require(s.size() == x.rows(), "scale_rows: size mismatch");
  Tape& t = *x.tape;
  Mat out = s.asDiagonal() * x.value();
  int xi = x.id;
  return t.emit(std::move(out), any_rg(x), [xi, s](Tape& tp, int self) {
    tp.accumulate(xi, s.asDiagonal() * tp.grad(self));
  });
}

Var scale(Var x, double s) {
  Tape& t = *x.tape;
  int xi = x.id;
  return t.emit(x.value() * s, any_rg(x), [xi, s](Tape& tp, int self) { tp.accumulate(xi, tp.grad(self) * s); });
}

Var add_scalar(Var x, double s) {
  Tape& t = *x.tape;
  int xi = x.id;
  Mat out = x.value().array() + s;
  return t.emit(std::move(out), any_rg(x), [xi](Tape& tp, int self) { tp.accumulate(xi, tp.grad(self)); });
}

Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

// ---------------------------------------------------------------------------

Var gelu(Var x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt2pi](double v) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

Var tanh(Var x) {
  Tape& t = *x.tape;
  Mat out = x.value().array().tanh();
  int xi = x.id;
  return t.emit(std::move(out), any_rg(x), [xi](Tape& tp, int self) {
    const Mat& y = tp.value(self);
    tp.accumulate(xi, tp.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var sigmoid(Var x) {
  Tape& t = *x.tape;
  Mat out = x.value().unaryExpr([](double v) { return sigmoid_scalar(v); });
  int xi = x.id;
  return t.emit(std::move(out), any_rg(x), [xi](Tape& tp, int self) {
    const Mat& y = tp.value(self);
    tp.accumulate(xi, tp.grad(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Var softplus(Var x) {
  return unary(
      x, [](double v) { return softplus_scalar(v); }, [](double v) { return sigmoid_scalar(v); });
}

Var exp(Var x) {
  Tape& t = *x.tape;
  Mat out = x.value().array().exp();
  int xi = x.id;
  return t.emit(std::move(out), any_rg(x), [xi](Tape& tp, int self) {
    tp.accumulate(xi, tp.grad(self).cwiseProduct(tp.value(self)));
  });
}

Var log(Var x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Var square(Var x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var clamp(Var x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var minimum(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "minimum: shape mismatch");
  Tape& t = *a.tape;
  Mat out = a.value().cwiseMin(b.value());
  int ai = a.id, bi = b.id;
  return t.emit(std::move(out), any_rg(a, b), [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat take_a = (tp.value(ai).array() <= tp.value(bi).array()).cast<double>();
    tp.accumulate(ai, g.cwiseProduct(take_a));
    tp.accumulate(bi, g.cwiseProduct((1.0 - take_a.array()).matrix()));
  });
}

// ---------------------------------------------------------------------------

Var gather_rows(Var src, std::vector<int> idx) {
  Tape& t = *src.tape;
  const Mat& sv = src.value();
  Mat out(static_cast<Eigen::Index>(idx.size()), sv.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] >= 0 && idx[r] < sv.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = sv.row(idx[r]);
  }
  int si = src.id;
  return t.emit(std::move(out), any_rg(src), [si, idx = std::move(idx)](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat acc = Mat::Zero(tp.value(si).rows(), g.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) acc.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
    tp.accumulate(si, acc);
  });
}

Var assemble_rows(const std::vector<Var>& sources, std::vector<std::pair<int, int>> map) {
  require(!sources.empty(), "assemble_rows: no sources");
  Tape& t = *sources[0].tape;
  Eigen::Index cols = sources[0].cols();
  bool rg = false;
  std::vector<int> ids;
  for (const Var& s : sources) {
    require(s.cols() == cols, "assemble_rows: column mismatch");
    rg = rg || any_rg(s);
    ids.push_back(s.id);
  }
  Mat out(static_cast<Eigen::Index>(map.size()), cols);
  for (std::size_t r = 0; r < map.size(); ++r) {
    const Var& s = sources.at(map[r].first);
    require(map[r].second >= 0 && map[r].second < s.rows(), "assemble_rows: row out of range");
    out.row(static_cast<Eigen::Index>(r)) = s.value().row(map[r].second);
  }
  return t.emit(std::move(out), rg, [ids, map = std::move(map)](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    std::vector<Mat> acc(ids.size());
    for (std::size_t r = 0; r < map.size(); ++r) {
      auto [s, row] = map[r];
      if (!tp.requires_grad(ids[s])) continue;
      if (acc[s].size() == 0) acc[s] = Mat::Zero(tp.value(ids[s]).rows(), g.cols());
      acc[s].row(row) += g.row(static_cast<Eigen::Index>(r));
    }
    for (std::size_t s = 0; s < ids.size(); ++s)
      if (acc[s].size() != 0) tp.accumulate(ids[s], acc[s]);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: empty");
  std::vector<std::pair<int, int>> map;
  for (std::size_t p = 0; p < parts.size(); ++p)
    for (Eigen::Index r = 0; r < parts[p].rows(); ++r) map.emplace_back(static_cast<int>(p), static_cast<int>(r));
  return assemble_rows(parts, std::move(map));
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  Tape& t = *parts[0].tape;
  Eigen::Index rows = parts[0].rows(), cols = 0;
  bool rg = false;
  std::vector<int> ids;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
    rg = rg || any_rg(p);
    ids.push_back(p.id);
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.emit(std::move(out), rg, [ids](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Eigen::Index c = 0;
    for (int id : ids) {
      Eigen::Index w = tp.value(id).cols();
      tp.accumulate(id, g.middleCols(c, w));
      c += w;
    }
  });
}

Var slice_cols(Var x, int start, int n) {
  require(start >= 0 && n >= 0 && start + n <= x.cols(), "slice_cols: out of range");
  Tape& t = *x.tape;
  int xi = x.id;
  return t.emit(x.value().middleCols(start, n), any_rg(x), [xi, start, n](Tape& tp, int self) {
    Mat acc = Mat::Zero(tp.value(xi).rows(), tp.value(xi).cols());
    acc.middleCols(start, n) = tp.grad(self);
    tp.accumulate(xi, acc);
  });
}

Var slice_rows(Var x, int start, int n) {
  require(start >= 0 && n >= 0 && start + n <= x.rows(), "slice_rows: out of range");
  Tape& t = *x.tape;
  int xi = x.id;
  return t.emit(x.value().middleRows(start, n), any_rg(x), [xi, start, n](Tape& tp, int self) {
    Mat acc = Mat::Zero(tp.value(xi).rows(), tp.value(xi).cols());
    acc.middleRows(start, n) = tp.grad(self);
    tp.accumulate(xi, acc);
  });
}

Var segment_mean(Var x, const Segments& seg) {
  require(seg.total() == x.rows(), "segment_mean: segments do not cover input");
  Tape& t = *x.tape;
  Mat out(static_cast<Eigen::Index>(seg.size()), x.cols());
  for (std::size_t s = 0; s < seg.size(); ++s) {
    require(seg.length[s] > 0, "segment_mean: empty segment");
    out.row(static_cast<Eigen::Index>(s)) =
        x.value().middleRows(seg.offset[s], seg.length[s]).colwise().mean();
  }
  int xi = x.id;
  return t.emit(std::move(out), any_rg(x), [xi, seg](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat acc(tp.value(xi).rows(), g.cols());
    for (std::size_t s = 0; s < seg.size(); ++s)
      acc.middleRows(seg.offset[s], seg.length[s]) =
          (g.row(static_cast<Eigen::Index>(s)) / static_cast<double>(seg.length[s])).replicate(seg.length[s], 1);
    tp.accumulate(xi, acc);
  });
}

Var group_flatten(Var x, int group) {
  require(group > 0 && x.rows() % group == 0, "group_flatten: rows not divisible by group");
  Tape& t = *x.tape;
  Eigen::Index b = x.rows() / group, d = x.cols();
  const Mat& xv = x.value();
  Mat out(b, group * d);
  for (Eigen::Index i = 0; i < b; ++i)
    for (int s = 0; s < group; ++s) out.block(i, s * d, 1, d) = xv.row(i * group + s);
  int xi = x.id;
  return t.emit(std::move(out), any_rg(x), [xi, group](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Eigen::Index d = tp.value(xi).cols();
    Mat acc(tp.value(xi).rows(), d);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (int s = 0; s < group; ++s) acc.row(i * group + s) = g.block(i, s * d, 1, d);
    tp.accumulate(xi, acc);
  });
}

Var row_norm(Var x) {
  Tape& t = *x.tape;
  Mat out = x.value().rowwise().norm();
  int xi = x.id;
  return t.emit(std::move(out), any_rg(x), [xi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    const Mat& xv = tp.value(xi);
    const Mat& n = tp.value(self);
    Mat acc = Mat::Zero(xv.rows(), xv.cols());
    for (Eigen::Index r = 0; r < xv.rows(); ++r)
      if (n(r, 0) > 0) acc.row(r) = xv.row(r) * (g(r, 0) / n(r, 0));
    tp.accumulate(xi, acc);
  });
}

Var pick_cols(Var x, std::vector<int> idx) {
  require(static_cast<Eigen::Index>(idx.size()) == x.rows(), "pick_cols: size mismatch");
  Tape& t = *x.tape;
  Mat out(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    require(idx[r] >= 0 && idx[r] < x.cols(), "pick_cols: index out of range");
    out(r, 0) = x.value()(r, idx[r]);
  }
  int xi = x.id;
  return t.emit(std::move(out), any_rg(x), [xi, idx = std::move(idx)](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat acc = Mat::Zero(tp.value(xi).rows(), tp.value(xi).cols());
    for (Eigen::Index r = 0; r < acc.rows(); ++r) acc(r, idx[r]) = g(r, 0);
    tp.accumulate(xi, acc);
  });
}

Var sum(Var x) {
  Tape& t = *x.tape;
  int xi = x.id;
  return t.emit(Mat::Constant(1, 1, x.value().sum()), any_rg(x), [xi](Tape& tp, int self) {
    const Mat& xv = tp.value(xi);
    tp.accumulate(xi, Mat::Constant(xv.rows(), xv.cols(), tp.grad(self)(0, 0)));
  });
}

Var mean(Var x) {
  require(x.value().size() > 0, "mean: empty input");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

// ---------------------------------------------------------------------------

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require(gain.rows() == 1 && gain.cols() == x.cols() && bias.rows() == 1 && bias.cols() == x.cols(),
          "layer_norm: parameter shape mismatch");
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  Eigen::Index n = xv.rows(), d = xv.cols();
  Mat xhat(n, d);
  Vec inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    double mu = xv.row(r).mean();
    double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  int xi = x.id, gi = gain.id, bi = bias.id;
  bool rg = any_rg(x) || any_rg(gain) || any_rg(bias);
  return t.emit(std::move(out), rg, [xi, gi, bi, xhat, inv_std](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.requires_grad(gi)) tp.accumulate(gi, g.cwiseProduct(xhat).colwise().sum());
    if (tp.requires_grad(bi)) tp.accumulate(bi, g.colwise().sum());
    if (tp.requires_grad(xi)) {
      Mat dxhat = g.array().rowwise() * tp.value(gi).row(0).array();
      Mat dx(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        double m1 = dxhat.row(r).mean();
        double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
      }
      tp.accumulate(xi, dx);
    }
  });
}

Var attention(Var q, Var k, Var v, const Segments& qs, const Segments& ks, int heads) {
  require(q.cols() == k.cols() && k.cols() == v.cols() && k.rows() == v.rows(), "attention: shape mismatch");
  require(heads > 0 && q.cols() % heads == 0, "attention: dim not divisible by heads");
  require(qs.size() == ks.size() && qs.total() == q.rows() && ks.total() == k.rows(),
          "attention: segments do not match inputs");
  Tape& t = *q.tape;
  const int dh = static_cast<int>(q.cols()) / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const Mat& qv = q.value();
  const Mat& kv = k.value();
  const Mat& vv = v.value();
  Mat out(q.rows(), q.cols());
  std::vector<Mat> probs(qs.size() * heads);
  for (std::size_t s = 0; s < qs.size(); ++s) {
    require(ks.length[s] > 0, "attention: empty key segment");
    for (int h = 0; h < heads; ++h) {
      auto Q = qv.block(qs.offset[s], h * dh, qs.length[s], dh);
      auto K = kv.block(ks.offset[s], h * dh, ks.length[s], dh);
      auto V = vv.block(ks.offset[s], h * dh, ks.length[s], dh);
      Mat scores = (Q * K.transpose()) * inv;
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        double m = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - m).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      out.block(qs.offset[s], h * dh, qs.length[s], dh) = scores * V;
      probs[s * heads + h] = std::move(scores);
    }
  }
  int qi = q.id, ki = k.id, vi = v.id;
  bool rg = any_rg(q) || any_rg(k) || any_rg(v);
  return t.emit(std::move(out), rg, [qi, ki, vi, qs, ks, heads, dh, inv, probs = std::move(probs)](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    const Mat& qv = tp.value(qi);
    const Mat& kv = tp.value(ki);
    const Mat& vv = tp.value(vi);
    Mat dq = Mat::Zero(qv.rows(), qv.cols());
    Mat dk = Mat::Zero(kv.rows(), kv.cols());
    Mat dv = Mat::Zero(vv.rows(), vv.cols());
    for (std::size_t s = 0; s < qs.size(); ++s) {
      for (int h = 0; h < heads; ++h) {
        const Mat& P = probs[s * heads + h];
        auto Q = qv.block(qs.offset[s], h * dh, qs.length[s], dh);
        auto K = kv.block(ks.offset[s], h * dh, ks.length[s], dh);
        auto V = vv.block(ks.offset[s], h * dh, ks.length[s], dh);
        auto dO = g.block(qs.offset[s], h * dh, qs.length[s], dh);
        Mat dP = dO * V.transpose();
        dv.block(ks.offset[s], h * dh, ks.length[s], dh) += P.transpose() * dO;
        Vec rowdot = dP.cwiseProduct(P).rowwise().sum();
        Mat dS = P.cwiseProduct((dP.colwise() - rowdot));
        dq.block(qs.offset[s], h * dh, qs.length[s], dh) += (dS * K) * inv;
        dk.block(ks.offset[s], h * dh, ks.length[s], dh) += (dS.transpose() * Q) * inv;
      }
    }
    tp.accumulate(qi, dq);
    tp.accumulate(ki, dk);
    tp.accumulate(vi, dv);
  });
}

Var log_softmax_rows(Var x) {
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  Mat out(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    double m = xv.row(r).maxCoeff();
    double lse = m + std::log((xv.row(r).array() - m).exp().sum());
    out.row(r) = xv.row(r).array() - lse;
  }
  int xi = x.id;
  return t.emit(std::move(out), any_rg(x), [xi](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat p = tp.value(self).array().exp();
    Vec gs = g.rowwise().sum();
    tp.accumulate(xi, g - (p.array().colwise() * gs.array()).matrix());
  });
}

Var mixture_nll(Var t_hat, Var c_hat, const Vec& target, double var_reliable, double var_outlier) {
  require(t_hat.cols() == 1 && c_hat.cols() == 1 && t_hat.rows() == c_hat.rows() && target.size() == t_hat.rows(),
          "mixture_nll: shape mismatch");
  require(var_reliable > 0 && var_outlier > 0, "mixture_nll: variances must be positive");
  Tape& t = *t_hat.tape;
  const Eigen::Index n = t_hat.rows();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  Mat out(n, 1);
  Vec d_t(n), d_c(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double r = target(i) - t_hat.value()(i, 0);
    double c = c_hat.value()(i, 0);
    double lr = -0.5 * (log2pi + std::log(var_reliable)) - r * r / (2 * var_reliable);
    double lo = -0.5 * (log2pi + std::log(var_outlier)) - r * r / (2 * var_outlier);
    double a = c > 0 ? std::log(c) + lr : -std::numeric_limits<double>::infinity();
    double b = c < 1 ? std::log1p(-c) + lo : -std::numeric_limits<double>::infinity();
    double m = std::max(a, b);
    double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
    out(i, 0) = -lse;
    double w_r = std::exp(a - lse), w_o = std::exp(b - lse);
    d_t(i) = -(w_r * r / var_reliable + w_o * r / var_outlier);
    d_c(i) = -(std::exp(lr - lse) - std::exp(lo - lse));
  }
  int ti = t_hat.id, ci = c_hat.id;
  return t.emit(std::move(out), any_rg(t_hat, c_hat), [ti, ci, d_t, d_c](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    tp.accumulate(ti, g.cwiseProduct(d_t));
    tp.accumulate(ci, g.cwiseProduct(d_c));
  });
}

}  // namespace distnav::ad
