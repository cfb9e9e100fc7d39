#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "xmodal/grad_check.hpp"
#include "xmodal/tape.hpp"

using namespace xmodal;

namespace {

Tensor randu(Shape shape, std::mt19937_64& eng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(std::move(shape), lo, hi, eng);
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimError);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
  CHECK(shape_str({3, 1, 4}) == "[3x1x4]");
  Tensor nan({1}, {std::nan("")});
  CHECK_FALSE(nan.all_finite());
}

TEST_CASE("matmul identity and one-hot") {
  Tape tape;
  Var eye = tape.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
  Var m = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  Tensor r = tape.value(tape.matmul(eye, m));
  CHECK(r[0] == 1);
  CHECK(r[1] == 2);
  CHECK(r[2] == 3);
  CHECK(r[3] == 4);

  Var onehot = tape.leaf(Tensor({1, 2}, {1, 0}));
  Var col = tape.leaf(Tensor({2, 1}, {0, 5}));
  CHECK(tape.value(tape.matmul(onehot, col)).item() == 0.0);

  Var bad = tape.leaf(Tensor({3, 3}));
  CHECK_THROWS_AS(tape.matmul(onehot, bad), DimError);
}

TEST_CASE("matmul gradient") {
  std::mt19937_64 eng(7);
  GradReport rep = grad_check(
      "matmul",
      [](Tape& t, const ParamVars& p) {
        return t.sum(t.matmul(p.at("a"), p.at("b")));
      },
      {{"a", randu({3, 4}, eng)}, {"b", randu({4, 2}, eng)}});
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("elementwise add sub mul") {
  Tape tape;
  Var a = tape.leaf(Tensor({2}, {2, 3}));
  Var b = tape.leaf(Tensor({2}, {0, 1}));
  Tensor m = tape.value(tape.mul(a, b));
  CHECK(m[0] == 0);
  CHECK(m[1] == 3);
  Tensor s = tape.value(tape.add(a, tape.leaf(Tensor({2}))));
  CHECK(s[0] == 2);
  CHECK(s[1] == 3);
  CHECK(tape.value(tape.sub(a, a))[1] == 0);
  CHECK_THROWS_AS(tape.add(a, tape.leaf(Tensor({3}))), DimError);

  std::mt19937_64 eng(9);
  GradReport rep = grad_check(
      "mul",
      [](Tape& t, const ParamVars& p) { return t.sum(t.mul(p.at("a"), p.at("b"))); },
      {{"a", randu({5}, eng)}, {"b", randu({5}, eng)}});
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("sigmoid values and gradient") {
  Tape tape;
  Var x = tape.leaf(Tensor({3}, {0.0, -50.0, 50.0}));
  Tensor y = tape.value(tape.sigmoid(x));
  CHECK(y[0] == 0.5);
  CHECK(y[1] == doctest::Approx(1.9e-22).epsilon(0.01));
  CHECK(y[1] > 0.0);
  CHECK(std::isfinite(y[1]));
  CHECK(y[2] == doctest::Approx(1.0));

  GradReport rep = grad_check(
      "sigmoid",
      [](Tape& t, const ParamVars& p) { return t.sum(t.sigmoid(p.at("x"))); },
      {{"x", Tensor({1}, {1.0})}});
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("tanh relu clamp") {
  Tape tape;
  Var x = tape.leaf(Tensor({4}, {-2.0, -0.5, 0.5, 2.0}));
  Tensor r = tape.value(tape.relu(x));
  CHECK(r[0] == 0.0);
  CHECK(r[2] == 0.5);
  Tensor c = tape.value(tape.clamp(x, -1.0, 1.0));
  CHECK(c[0] == -1.0);
  CHECK(c[3] == 1.0);
  CHECK(tape.value(tape.tanh(x))[3] == doctest::Approx(std::tanh(2.0)));

  // clamp passes gradient only inside the window
  Tape t2;
  Var v = t2.leaf(Tensor({3}, {-5.0, 0.25, 5.0}));
  t2.backward(t2.sum(t2.clamp(v, -1.0, 1.0)));
  const Tensor& g = t2.grad(v);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);
}

TEST_CASE("spatial max values and argmax routing") {
  Tape tape;
  Var x = tape.leaf(Tensor({1, 2, 2}, {1, 5, 3, 2}));
  CHECK(tape.value(tape.spatial_max(x)).item() == 5.0);

  Tape t2;
  Var flat = t2.leaf(Tensor::full({1, 2, 2}, 7.0));
  Var m = t2.spatial_max(flat);
  CHECK(t2.value(m).item() == 7.0);
  t2.backward(t2.sum(m));
  const Tensor& g = t2.grad(flat);
  CHECK(g[0] == 1.0);  // first of the tied positions takes the gradient
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);

  std::mt19937_64 eng(11);
  Tensor r = randu({4, 5, 6}, eng);
  Tape t3;
  const Tensor& got = t3.value(t3.spatial_max(t3.leaf(r)));
  for (std::size_t c = 0; c < 4; ++c) {
    double best = r.at(c, 0, 0);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 6; ++j) best = std::max(best, r.at(c, i, j));
    CHECK(got[c] == best);
  }
}

TEST_CASE("spatial avg") {
  Tape tape;
  Var x = tape.leaf(Tensor({1, 2, 2}, {1, 3, 5, 7}));
  CHECK(tape.value(tape.spatial_avg(x)).item() == 4.0);
  Var one = tape.leaf(Tensor({2, 1, 1}, {3.5, -1.0}));
  Tensor same = tape.value(tape.spatial_avg(one));
  CHECK(same[0] == 3.5);
  CHECK(same[1] == -1.0);

  std::mt19937_64 eng(13);
  GradReport rep = grad_check(
      "spatial_avg",
      [](Tape& t, const ParamVars& p) { return t.sum(t.spatial_avg(p.at("x"))); },
      {{"x", randu({2, 3, 3}, eng)}});
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("max over time") {
  Tape tape;
  Var h = tape.leaf(Tensor({2, 2}, {1, 9, 4, 2}));
  Tensor m = tape.value(tape.max_over_time(h));
  CHECK(m[0] == 4.0);
  CHECK(m[1] == 9.0);

  Var single = tape.leaf(Tensor({1, 3}, {7, -2, 0.5}));
  Tensor s = tape.value(tape.max_over_time(single));
  CHECK(s[0] == 7.0);
  CHECK(s[1] == -2.0);
  CHECK(s[2] == 0.5);

  std::mt19937_64 eng(15);
  Tensor r = randu({7, 16}, eng);
  Tape t2;
  const Tensor& got = t2.value(t2.max_over_time(t2.leaf(r)));
  for (std::size_t d = 0; d < 16; ++d) {
    double best = r.at(0, d);
    for (std::size_t n = 1; n < 7; ++n) best = std::max(best, r.at(n, d));
    CHECK(got[d] == best);
  }
}

TEST_CASE("gradient accumulates over shared consumers") {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0));
  tape.backward(tape.add(x, x));
  CHECK(tape.grad(x).item() == 2.0);

  Tape t2;
  Var y = t2.leaf(Tensor::scalar(3.0));
  t2.backward(t2.add(t2.mul(y, y), y));  // d/dy (y^2 + y) = 2y + 1
  CHECK(t2.grad(y).item() == 7.0);
}

TEST_CASE("grad on an unreached node is zero") {
  Tape tape;
  Var a = tape.leaf(Tensor({2}, {1, 2}));
  Var b = tape.leaf(Tensor({2}, {3, 4}));
  tape.backward(tape.sum(a));
  CHECK(tape.grad(b)[0] == 0.0);
  CHECK(tape.grad(b)[1] == 0.0);
}

TEST_CASE("sqrt log recip dot sum") {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {0.0, 4.0}));
  Var r = tape.sqrt(x);
  CHECK(tape.value(r)[0] == 0.0);
  CHECK(tape.value(r)[1] == 2.0);
  tape.backward(tape.sum(r));
  const Tensor& g = tape.grad(x);
  CHECK(g[0] == 0.0);  // derivative at zero pinned to zero, no NaN
  CHECK(g[1] == 0.25);

  Tape t2;
  Var y = t2.leaf(Tensor({2}, {1.0, std::exp(1.0)}));
  const Tensor& lg = t2.value(t2.log(y));
  CHECK(lg[0] == 0.0);
  CHECK(lg[1] == doctest::Approx(1.0));
  CHECK(t2.value(t2.recip(t2.leaf(Tensor::scalar(4.0)))).item() == 0.25);

  Var a = t2.leaf(Tensor({3}, {1, 2, 3}));
  Var b = t2.leaf(Tensor({3}, {4, 5, 6}));
  CHECK(t2.value(t2.dot(a, b)).item() == 32.0);
  CHECK(t2.value(t2.sum(a)).item() == 6.0);
  CHECK(t2.value(t2.add_const(t2.sum(a), 1.5)).item() == 7.5);
  CHECK(t2.value(t2.scale_const(t2.sum(a), -2.0)).item() == -12.0);
}

TEST_CASE("scale_by add_n") {
  Tape tape;
  Var t = tape.leaf(Tensor({2}, {1, 2}));
  Var s = tape.leaf(Tensor::scalar(3.0));
  Tensor r = tape.value(tape.scale_by(t, s));
  CHECK(r[0] == 3.0);
  CHECK(r[1] == 6.0);
  Var total = tape.add_n({t, t, t});
  CHECK(tape.value(total)[1] == 6.0);
  CHECK_THROWS_AS(tape.add_n({}), InputError);

  std::mt19937_64 eng(17);
  GradReport rep = grad_check(
      "scale_by",
      [](Tape& tp, const ParamVars& p) {
        return tp.sum(tp.scale_by(p.at("t"), p.at("s")));
      },
      {{"t", randu({4}, eng)}, {"s", randu({1}, eng, 0.5, 1.5)}});
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("embed_rows routes gradients into selected rows") {
  Tape tape;
  Var table = tape.leaf(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  Var rows = tape.embed_rows(table, {1, 1, 2});
  Tensor v = tape.value(rows);
  CHECK(v.at(0, 0) == 3);
  CHECK(v.at(1, 1) == 4);
  CHECK(v.at(2, 0) == 5);
  tape.backward(tape.sum(rows));
  const Tensor& g = tape.grad(table);
  CHECK(g.at(0, 0) == 0.0);
  CHECK(g.at(1, 0) == 2.0);  // row 1 selected twice
  CHECK(g.at(2, 1) == 1.0);
  CHECK_THROWS_AS(tape.embed_rows(table, {3}), InputError);
}

TEST_CASE("concat slice reshape stack") {
  Tape tape;
  Var a = tape.leaf(Tensor({2}, {1, 2}));
  Var b = tape.leaf(Tensor({3}, {3, 4, 5}));
  Var cat = tape.concat({a, b});
  CHECK(tape.value(cat).numel() == 5);
  CHECK(tape.value(cat)[4] == 5);
  Var sl = tape.slice(cat, 1, 3);
  CHECK(tape.value(sl)[0] == 2);
  CHECK(tape.value(sl)[2] == 4);
  CHECK_THROWS_AS(tape.slice(cat, 4, 3), DimError);
  Var rs = tape.reshape(cat, {5, 1});
  CHECK(tape.value(rs).rank() == 2);
  CHECK_THROWS_AS(tape.reshape(cat, {2, 3}), DimError);
  Var st = tape.stack_rows({a, a});
  CHECK(tape.value(st).at(1, 1) == 2);

  tape.backward(tape.sum(sl));
  CHECK(tape.grad(a)[0] == 0.0);
  CHECK(tape.grad(a)[1] == 1.0);
  CHECK(tape.grad(b)[0] == 1.0);
  CHECK(tape.grad(b)[2] == 0.0);
}

TEST_CASE("conv2d hand examples") {
  // 3x3 single-channel input, identity-diagonal 2x2 kernel, bias 1
  Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor b({1}, {1});
  Tape tape;
  Var out = tape.conv2d(tape.leaf(x), tape.leaf(w), tape.leaf(b), 1);
  Tensor v = tape.value(out);
  CHECK(v.shape() == Shape{1, 2, 2});
  CHECK(v.at(0, 0, 0) == 7.0);   // 1 + 5 + 1
  CHECK(v.at(0, 0, 1) == 9.0);
  CHECK(v.at(0, 1, 0) == 13.0);
  CHECK(v.at(0, 1, 1) == 15.0);

  Tape t2;
  Var strided = t2.conv2d(t2.leaf(x), t2.leaf(w), t2.leaf(b), 2);
  CHECK(t2.value(strided).shape() == Shape{1, 1, 1});
  CHECK(t2.value(strided).item() == 7.0);

  std::mt19937_64 eng(19);
  GradReport rep = grad_check(
      "conv2d",
      [](Tape& t, const ParamVars& p) {
        return t.sum(t.conv2d(p.at("x"), p.at("w"), p.at("b"), 1));
      },
      {{"x", randu({2, 4, 4}, eng)}, {"w", randu({3, 2, 2, 2}, eng)},
       {"b", randu({3}, eng)}});
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("grad_check harness sanity") {
  GradReport smooth = grad_check(
      "sum_sigmoid",
      [](Tape& t, const ParamVars& p) { return t.sum(t.sigmoid(p.at("x"))); },
      {{"x", Tensor({3}, {0.3, -0.7, 1.1})}});
  CHECK(smooth.max_rel_error < 1e-7);

  GradReport flat = grad_check(
      "constant",
      [](Tape& t, const ParamVars& p) { return t.scale_const(t.sum(p.at("x")), 0.0); },
      {{"x", Tensor({3}, {0.3, -0.7, 1.1})}});
  CHECK(flat.max_rel_error == 0.0);
}
