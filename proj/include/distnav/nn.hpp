#pragma once

// Parameter storage, initialization and optimization shared by the distance
// model, the noise model and the policy.

#include "distnav/autodiff.hpp"
#include "distnav/rng.hpp"
#include "distnav/tensor_io.hpp"

#include <string>
#include <vector>

namespace distnav::nn {

using ad::Mat;
using ad::Var;

class ParamSet {
 public:
  int add(std::string name, Mat value);
  /// Uniform in +-1/sqrt(fan_in), rounded to float so checkpoints round-trip exactly.
  int add_uniform(std::string name, int rows, int cols, int fan_in, Rng& rng);
  int add_constant(std::string name, int rows, int cols, double value);

  int find(const std::string& name) const;  // -1 when absent
  Mat& operator[](int i) { return values_[static_cast<std::size_t>(i)]; }
  const Mat& operator[](int i) const { return values_[static_cast<std::size_t>(i)]; }
  const std::string& name(int i) const { return names_[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(values_.size()); }
  std::size_t scalar_count() const;
  bool all_finite() const;

  /// One tape leaf per parameter, in registration order.
  std::vector<Var> bind(ad::Tape& tape) const;
  /// Gradients of the bound leaves; zero where no gradient flowed.
  std::vector<Mat> gradients(const ad::Tape& tape, const std::vector<Var>& leaves) const;

  std::vector<NamedTensor> to_tensors() const;
  /// Replaces values from tensors; names and shapes must match exactly.
  void assign(const std::vector<NamedTensor>& tensors);
  void round_to_float();

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
};

double global_norm(const std::vector<Mat>& grads);
/// Scales grads in place so their global norm is at most max_norm; returns the pre-clip norm.
double clip_global_norm(std::vector<Mat>& grads, double max_norm);
bool all_finite(const std::vector<Mat>& grads);

class Adam {
 public:
  explicit Adam(const ParamSet& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ParamSet& params, const std::vector<Mat>& grads, double lr);
  long steps() const { return t_; }

 private:
  std::vector<Mat> m_, v_;
  double b1_, b2_, eps_;
  long t_ = 0;
};

/// Linear warmup followed by cosine decay to `final_fraction` * base.
double warmup_cosine(long step, long total, long warmup, double base, double final_fraction = 0.05);

// Graph helpers
Var linear(const std::vector<Var>& p, int w, int b, Var x);
/// Two-layer perceptron: act(x W1 + b1) W2 + b2 with GELU.
Var mlp2(const std::vector<Var>& p, int w1, int b1, int w2, int b2, Var x);

}  // namespace distnav::nn
