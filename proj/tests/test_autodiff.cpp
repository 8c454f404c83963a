#include "distnav/autodiff.hpp"
#include "distnav/nn.hpp"
#include "distnav/rng.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace distnav;
using ad::Mat;
using ad::Var;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (long k = 0; k < m.size(); ++k) m.data()[k] = scale * standard_normal(rng);
  return m;
}

// Gradient check of a graph built over the tensors in `ps`, reduced to a
// scalar through a fixed random projection.
double check(nn::ParamSet& ps, const std::function<Var(ad::Tape&, const std::vector<Var>&)>& build) {
  Rng rng = make_rng(99, "proj");
  Mat proj;
  auto value = [&](bool with_grad, std::vector<Mat>* grads) {
    ad::Tape tape;
    auto L = ps.bind(tape);
    Var out = build(tape, L);
    if (proj.size() == 0) proj = random_mat(static_cast<int>(out.value().rows()), static_cast<int>(out.value().cols()), rng);
    Var s = ad::sum(ad::mul(out, tape.constant(proj)));
    if (with_grad) {
      tape.backward(s);
      *grads = ps.gradients(tape, L);
    }
    return s.scalar();
  };
  std::vector<Mat> grads;
  value(true, &grads);
  return oracle::fd_check(ps, grads, [&] { return value(false, nullptr); }).max_rel;
}

}  // namespace

TEST_CASE("elementwise and matrix ops match finite differences") {
  Rng rng = make_rng(1, "ad");
  nn::ParamSet ps;
  ps.add("a", random_mat(4, 3, rng));
  ps.add("b", random_mat(4, 3, rng));
  ps.add("w", random_mat(3, 5, rng));
  ps.add("bias", random_mat(1, 5, rng));
  ps.add("pos", (random_mat(4, 3, rng).array().abs() + 0.5).matrix());

  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::matmul(L[0], L[2]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::linear(L[0], L[2], L[3]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::mul(L[0], L[1]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::sub(L[0], L[1]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::gelu(L[0]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::tanh(L[0]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::sigmoid(L[0]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::softplus(L[0]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::exp(L[0]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::log(L[4]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::square(L[0]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::log_softmax_rows(L[0]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::row_norm(L[0]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::concat_cols({L[0], L[1]}); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::concat_rows({L[0], L[1]}); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::slice_cols(L[2], 1, 3); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::slice_rows(L[0], 1, 2); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::gather_rows(L[0], {3, 0, 0, 2}); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::pick_cols(L[0], {2, 0, 1, 1}); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::add_row(L[2], L[3]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::group_flatten(L[0], 2); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::minimum(L[0], L[1]); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::mean(ad::square(L[0])); }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) {
          return ad::segment_mean(L[0], ad::Segments::uniform(2, 2));
        }) < 1e-6);
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) {
          return ad::assemble_rows({L[0], L[1]}, {{1, 0}, {0, 3}, {1, 2}});
        }) < 1e-6);
}

TEST_CASE("layer norm and segmented attention match finite differences") {
  Rng rng = make_rng(2, "ad");
  nn::ParamSet ps;
  ps.add("x", random_mat(5, 8, rng));
  ps.add("g", random_mat(1, 8, rng));
  ps.add("b", random_mat(1, 8, rng));
  ps.add("k", random_mat(7, 8, rng));
  ps.add("v", random_mat(7, 8, rng));
  CHECK(check(ps, [](ad::Tape&, const std::vector<Var>& L) { return ad::layer_norm(L[0], L[1], L[2]); }) < 1e-6);
  ad::Segments qs, ks;
  qs.push(2);
  qs.push(3);
  ks.push(4);
  ks.push(3);
  CHECK(check(ps, [&](ad::Tape&, const std::vector<Var>& L) { return ad::attention(L[0], L[3], L[4], qs, ks, 2); }) <
        1e-6);
}

TEST_CASE("mixture nll op matches finite differences and the scalar formula") {
  Rng rng = make_rng(3, "ad");
  nn::ParamSet ps;
  ps.add("t", (random_mat(6, 1, rng).array().abs() * 5).matrix());
  ps.add("c", Mat::Constant(6, 1, 0.3) + random_mat(6, 1, rng, 0.1));
  ad::Vec td(6);
  td << 0, 1, 3, 7, 12, 2;
  CHECK(check(ps, [&](ad::Tape&, const std::vector<Var>& L) { return ad::mixture_nll(L[0], L[1], td, 4.0, 40.0); }) <
        1e-6);
}

TEST_CASE("gradients are empty for constants and accumulate over reuse") {
  ad::Tape tape;
  Mat a = Mat::Constant(2, 2, 3.0);
  Var x = tape.leaf(a);
  Var c = tape.constant(Mat::Constant(2, 2, 1.0));
  Var y = ad::sum(ad::add(ad::mul(x, x), c));
  tape.backward(y);
  CHECK(tape.grad(c.id).size() == 0);
  CHECK(tape.grad(x.id)(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("row_norm subgradient at zero is zero") {
  ad::Tape tape;
  Var x = tape.leaf(Mat::Zero(1, 3));
  tape.backward(ad::sum(ad::row_norm(x)));
  CHECK(tape.grad(x.id).isZero());
}

TEST_CASE("adam and clipping") {
  nn::ParamSet ps;
  ps.add("w", Mat::Constant(1, 1, 1.0));
  nn::Adam adam(ps);
  std::vector<Mat> g{Mat::Constant(1, 1, 10.0)};
  CHECK(nn::clip_global_norm(g, 1.0) == doctest::Approx(10.0));
  CHECK(g[0](0, 0) == doctest::Approx(1.0));
  adam.step(ps, g, 0.1);
  // First Adam step moves by lr regardless of gradient scale.
  CHECK(ps[0](0, 0) == doctest::Approx(0.9));
  CHECK(nn::warmup_cosine(0, 100, 10, 1.0) == doctest::Approx(0.1));
  CHECK(nn::warmup_cosine(9, 100, 10, 1.0) == doctest::Approx(1.0));
  CHECK(nn::warmup_cosine(100, 100, 10, 1.0) == doctest::Approx(0.05));
}
