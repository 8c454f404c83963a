#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation together with a closure that propagates the
// output gradient to its inputs. Leaves may reference external storage (model
// parameters) to avoid copies; such storage must outlive the tape.

#include <Eigen/Dense>

#include <functional>
#include <utility>
#include <vector>

namespace distnav::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Tape() { nodes_.reserve(4096); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat v);
  Var constant_ref(const Mat& v);
  /// Stores a reference: v must outlive the tape.
  Var leaf(const Mat& v);

  const Mat& value(int id) const {
    const Node& n = nodes_[id];
    return n.ext ? *n.ext : n.own;
  }
  bool requires_grad(int id) const { return nodes_[id].rg; }
  /// Empty matrix when no gradient reached the node.
  const Mat& grad(int id) const { return nodes_[id].grad; }

  Var emit(Mat v, bool requires_grad, Backward bw);

  template <class Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.rg) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var root);
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat own;
    const Mat* ext = nullptr;
    Mat grad;
    Backward bw;
    bool rg = false;
  };
  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(id); }

/// Row segmentation of a stacked token matrix: sample s owns rows
/// [offset[s], offset[s] + length[s]).
struct Segments {
  std::vector<int> offset;
  std::vector<int> length;

  static Segments uniform(int count, int length);
  void push(int len) {
    offset.push_back(offset.empty() ? 0 : offset.back() + length.back());
    length.push_back(len);
  }
  int total() const { return offset.empty() ? 0 : offset.back() + length.back(); }
  std::size_t size() const { return offset.size(); }
};

// Linear algebra
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var x, Var row);
Var scale_rows(Var x, const Vec& s);
Var scale(Var x, double s);
Var add_scalar(Var x, double s);
Var linear(Var x, Var w, Var b);

// Elementwise nonlinearities
Var gelu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);
Var softplus(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
Var clamp(Var x, double lo, double hi);
Var minimum(Var a, Var b);

// Shape and indexing
Var gather_rows(Var src, std::vector<int> idx);
/// Output row r is row map[r].second of sources[map[r].first].
Var assemble_rows(const std::vector<Var>& sources, std::vector<std::pair<int, int>> map);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, int start, int n);
Var slice_rows(Var x, int start, int n);
Var segment_mean(Var x, const Segments& seg);
/// Stacks every `group` consecutive rows side by side: (B*group x D) -> (B x group*D).
Var group_flatten(Var x, int group);
Var row_norm(Var x);
Var pick_cols(Var x, std::vector<int> idx);

// Reductions
Var sum(Var x);
Var mean(Var x);

// Fused blocks
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Multi-head scaled dot-product attention; queries of segment s attend to
/// keys/values of segment s only.
Var attention(Var q, Var k, Var v, const Segments& qs, const Segments& ks, int heads);
Var log_softmax_rows(Var x);
/// Per-row inlier/outlier Gaussian mixture negative log-likelihood.
Var mixture_nll(Var t_hat, Var c_hat, const Vec& target, double var_reliable, double var_outlier);

}  // namespace distnav::ad
