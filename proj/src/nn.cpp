#include "distnav/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace distnav::nn {

int ParamSet::add(std::string name, Mat value) {
  if (find(name) >= 0) throw std::invalid_argument("duplicate parameter '" + name + "'");
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return size() - 1;
}

int ParamSet::add_uniform(std::string name, int rows, int cols, int fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = static_cast<float>(a * (2.0 * uniform01(rng) - 1.0));
  return add(std::move(name), std::move(m));
}

int ParamSet::add_constant(std::string name, int rows, int cols, double value) {
  return add(std::move(name), Mat::Constant(rows, cols, static_cast<float>(value)));
}

int ParamSet::find(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (names_[i] == name) return i;
  return -1;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Mat& m : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

bool ParamSet::all_finite() const {
  for (const Mat& m : values_)
    if (!m.allFinite()) return false;
  return true;
}

std::vector<Var> ParamSet::bind(ad::Tape& tape) const {
  std::vector<Var> out;
  out.reserve(values_.size());
  for (const Mat& m : values_) out.push_back(tape.leaf(m));
  return out;
}

std::vector<Mat> ParamSet::gradients(const ad::Tape& tape, const std::vector<Var>& leaves) const {
  std::vector<Mat> out(values_.size());
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const Mat& g = tape.grad(leaves[i].id);
    out[i] = g.size() == 0 ? Mat::Zero(values_[i].rows(), values_[i].cols()) : g;
  }
  return out;
}

std::vector<NamedTensor> ParamSet::to_tensors() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < values_.size(); ++i) out.push_back({names_[i], values_[i]});
  return out;
}

void ParamSet::assign(const std::vector<NamedTensor>& tensors) {
  if (tensors.size() != values_.size())
    throw std::invalid_argument("parameter count mismatch: expected " + std::to_string(values_.size()) + ", got " +
                                std::to_string(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const NamedTensor& t = tensors[i];
    if (t.name != names_[i] || t.value.rows() != values_[i].rows() || t.value.cols() != values_[i].cols())
      throw std::invalid_argument("parameter '" + t.name + "' does not match expected '" + names_[i] + "' " +
                                  std::to_string(values_[i].rows()) + "x" + std::to_string(values_[i].cols()));
    values_[i] = t.value;
  }
}

void ParamSet::round_to_float() {
  for (Mat& m : values_) distnav::round_to_float(m);
}

double global_norm(const std::vector<Mat>& grads) {
  double s = 0.0;
  for (const Mat& g : grads) s += g.squaredNorm();
  return std::sqrt(s);
}

double clip_global_norm(std::vector<Mat>& grads, double max_norm) {
  double n = global_norm(grads);
  if (n > max_norm && n > 0)
    for (Mat& g : grads) g *= max_norm / n;
  return n;
}

bool all_finite(const std::vector<Mat>& grads) {
  for (const Mat& g : grads)
    if (!g.allFinite()) return false;
  return true;
}

Adam::Adam(const ParamSet& params, double beta1, double beta2, double eps) : b1_(beta1), b2_(beta2), eps_(eps) {
  for (int i = 0; i < params.size(); ++i) {
    m_.push_back(Mat::Zero(params[i].rows(), params[i].cols()));
    v_.push_back(Mat::Zero(params[i].rows(), params[i].cols()));
  }
}

void Adam::step(ParamSet& params, const std::vector<Mat>& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (int i = 0; i < params.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grads[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grads[i].cwiseAbs2();
    params[i].array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double warmup_cosine(long step, long total, long warmup, double base, double final_fraction) {
  if (warmup > 0 && step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  long span = std::max(1L, total - warmup);
  double p = std::clamp(static_cast<double>(step - warmup) / static_cast<double>(span), 0.0, 1.0);
  double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * p));
  return base * (final_fraction + (1.0 - final_fraction) * cosine);
}

Var linear(const std::vector<Var>& p, int w, int b, Var x) { return ad::linear(x, p[w], p[b]); }

Var mlp2(const std::vector<Var>& p, int w1, int b1, int w2, int b2, Var x) {
  return ad::linear(ad::gelu(ad::linear(x, p[w1], p[b1])), p[w2], p[b2]);
}

}  // namespace distnav::nn
