#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "mlp_rig.hpp"
#include "reengage/autodiff.hpp"
#include "reengage/rng.hpp"

using namespace reengage;
using ad::Mat;
using ad::Tape;
using ad::Value;
using Eigen::VectorXd;

namespace {

Mat rowvec(std::initializer_list<double> v) {
  Mat m(1, static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

// scalar loss used across the gradient checks: f(x, theta) = sum(MLP(x))
double mlp_scalar(const rig::MlpSpec& spec, const VectorXd& theta, const VectorXd& x) {
  Tape t;
  Value th = t.input(Mat(theta.transpose()), false);
  Value xin = t.input(Mat(x.transpose()), false);
  return t.sum(rig::mlp_from_flat(t, th, spec, xin)).scalar();
}

}  // namespace

TEST_CASE("op examples") {
  Tape t;

  SUBCASE("affine with zero weights returns the bias row") {
    Value x = t.input(rowvec({7.0, -3.0, 2.0}), false);
    Value w = t.input(Mat::Zero(2, 3), false);
    Value b = t.input(Mat(rowvec({1.0, 2.0}).transpose()), false);
    Value y = t.affine(x, w, b);
    CHECK(y.mat()(0, 0) == 1.0);
    CHECK(y.mat()(0, 1) == 2.0);
  }

  SUBCASE("relu") {
    Value y = t.relu(t.input(rowvec({-1.0, 0.0, 3.0}), false));
    CHECK(y.mat()(0, 0) == 0.0);
    CHECK(y.mat()(0, 1) == 0.0);
    CHECK(y.mat()(0, 2) == 3.0);
  }

  SUBCASE("l2norm of [3,4] is 5") {
    Value y = t.l2norm(t.input(rowvec({3.0, 4.0}), false));
    CHECK(y.scalar() == doctest::Approx(5.0).epsilon(1e-14));
  }

  SUBCASE("shape mismatch names the op and shapes") {
    Value a = t.input(Mat::Zero(2, 3), false);
    Value b = t.input(Mat::Zero(3, 3), false);
    CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("add"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("2x3"), std::invalid_argument);
  }
}

TEST_CASE("grad examples") {
  SUBCASE("d(x^2)/dx at 3 is 6") {
    Tape t;
    Value x = t.input(3.0, true);
    Value f = t.square(x);
    auto g = t.grad(f, {x}, false);
    CHECK(g.at(x).scalar() == doctest::Approx(6.0).epsilon(1e-14));
  }

  SUBCASE("second-order mixed derivative: h = (df/dx)^2, f = theta*x^2") {
    Tape t;
    Value theta = t.input(1.0, true);
    Value x = t.input(2.0, true);
    Value f = t.mul(theta, t.square(x));
    auto gx = t.grad(f, {x}, true);
    Value h = t.square(gx.at(x));
    CHECK(h.scalar() == doctest::Approx(16.0));  // (2*theta*x)^2 = 16
    auto gt = t.grad(h, {theta}, false);
    CHECK(gt.at(theta).scalar() == doctest::Approx(32.0).epsilon(1e-12));
  }

  SUBCASE("constant target has no gradient entry; at_or_zero gives zeros") {
    Tape t;
    Value x = t.input(rowvec({1.0, 2.0}), true);
    Value c = t.constant(5.0);
    auto g = t.grad(c, {x}, false);
    CHECK(!g.contains(x));
    CHECK(g.at_or_zero(x).mat().isZero(0.0));
  }

  SUBCASE("non-scalar target rejected") {
    Tape t;
    Value x = t.input(rowvec({1.0, 2.0}), true);
    CHECK_THROWS_AS((void)t.grad(x, {x}, false), std::invalid_argument);
  }

  SUBCASE("grad is linear in the target") {
    RngStream rng(7);
    Tape t;
    Value x = t.input(Mat(rng.uniform_vector(4, -1, 1).transpose()), true);
    Value f = t.sum(t.square(x));
    Value g2 = t.sum(t.mul(x, t.tanh(x)));
    const double a = 1.7, b = -0.4;
    Value combo = t.add(t.scalar_mul(f, a), t.scalar_mul(g2, b));
    auto gc = t.grad(combo, {x}, false);
    auto gf = t.grad(f, {x}, false);
    auto gg = t.grad(g2, {x}, false);
    Mat expect = a * gf.at(x).mat() + b * gg.at(x).mat();
    CHECK((gc.at(x).mat() - expect).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("finite_diff_check examples") {
  SUBCASE("sum of squares") {
    auto f = [](const VectorXd& x) { return x.squaredNorm(); };
    VectorXd p(2);
    p << 1.0, 2.0;
    VectorXd analytic(2);
    analytic << 2.0, 4.0;
    CHECK(ad::finite_diff_check(f, analytic, p) < 1e-6);
  }

  SUBCASE("constant function") {
    auto f = [](const VectorXd&) { return 3.5; };
    VectorXd p = VectorXd::Zero(3);
    CHECK(ad::finite_diff_check(f, VectorXd::Zero(3), p) == 0.0);
  }

  SUBCASE("linear function is exact to near round-off") {
    VectorXd w(3);
    w << 0.3, -1.2, 0.8;
    auto f = [&](const VectorXd& x) { return w.dot(x); };
    VectorXd p(3);
    p << 0.1, 0.2, -0.4;
    CHECK(ad::finite_diff_check(f, w, p) < 1e-9);
  }

  SUBCASE("non-finite f reported") {
    auto f = [](const VectorXd& x) { return std::log(x[0]); };
    VectorXd p(1);
    p << 0.0;
    CHECK_THROWS_AS(ad::finite_diff_check(f, VectorXd::Zero(1), p), std::runtime_error);
  }
}

TEST_CASE("random MLP gradients match finite differences") {
  RngStream rng(42);
  for (int trial = 0; trial < 60; ++trial) {
    rig::Trial tr = rig::random_trial(rng, 16, 0.05);

    Tape t;
    Value th = t.input(Mat(tr.theta.transpose()), true);
    Value xin = t.input(Mat(tr.x.transpose()), true);
    Value f = t.sum(rig::mlp_from_flat(t, th, tr.spec, xin));
    auto g = t.grad(f, {th, xin}, false);

    auto f_of_theta = [&](const VectorXd& p) { return mlp_scalar(tr.spec, p, tr.x); };
    auto f_of_x = [&](const VectorXd& p) { return mlp_scalar(tr.spec, tr.theta, p); };

    const double e1 = ad::finite_diff_check(f_of_theta, g.at(th).mat().transpose(), tr.theta);
    const double e2 = ad::finite_diff_check(f_of_x, g.at(xin).mat().transpose(), tr.x);
    CAPTURE(trial);
    CHECK(e1 < 1e-4);
    CHECK(e2 < 1e-4);
  }
}

TEST_CASE("double backprop matches finite differences of h(grad f)") {
  RngStream rng(43);
  for (int trial = 0; trial < 25; ++trial) {
    rig::Trial tr = rig::random_trial(rng, 12, 0.05);
    const VectorXd v = rng.uniform_vector(tr.spec.widths.front(), -1.0, 1.0);

    // h(theta) = || d/dx f(x, theta) - v ||^2
    auto h_of_theta = [&](const VectorXd& p) {
      Tape t;
      Value th = t.input(Mat(p.transpose()), false);
      Value xin = t.input(Mat(tr.x.transpose()), true);
      Value f = t.sum(rig::mlp_from_flat(t, th, tr.spec, xin));
      auto g = t.grad(f, {xin}, false);
      return (g.at(xin).mat().transpose() - v).squaredNorm();
    };

    Tape t;
    Value th = t.input(Mat(tr.theta.transpose()), true);
    Value xin = t.input(Mat(tr.x.transpose()), true);
    Value f = t.sum(rig::mlp_from_flat(t, th, tr.spec, xin));
    auto gx = t.grad(f, {xin}, true);
    Value vc = t.constant(Mat(v.transpose()));
    Value h = t.sum(t.square(t.sub(gx.at(xin), vc)));
    CHECK(h.scalar() == doctest::Approx(h_of_theta(tr.theta)).epsilon(1e-12));

    auto gth = t.grad(h, {th}, false);
    const double err = ad::finite_diff_check(h_of_theta, gth.at(th).mat().transpose(), tr.theta);
    CAPTURE(trial);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("tape determinism: identical sequences give bit-identical results") {
  auto run = [](std::uint64_t seed) {
    RngStream rng(seed);
    rig::Trial tr = rig::random_trial(rng, 16, 0.05);
    Tape t;
    Value th = t.input(Mat(tr.theta.transpose()), true);
    Value xin = t.input(Mat(tr.x.transpose()), true);
    Value f = t.sum(rig::mlp_from_flat(t, th, tr.spec, xin));
    auto gx = t.grad(f, {xin}, true);
    Value h = t.sum(t.square(gx.at(xin)));
    auto gth = t.grad(h, {th}, false);
    return std::make_pair(f.scalar(), Mat(gth.at(th).mat()));
  };
  auto [f1, g1] = run(99);
  auto [f2, g2] = run(99);
  CHECK(f1 == f2);
  CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("softmax, row_max, select/scatter and huber backward vs finite differences") {
  RngStream rng(4242);
  const int rows = 3, cols = 5;
  const VectorXd flat = rng.uniform_vector(rows * cols, -1.5, 1.5);
  std::vector<int> idx{1, 4, 0};

  auto build = [&](const VectorXd& p, Tape& t, Value& x) {
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = p[r * cols + c];
    x = t.input(m, true);
  };
  auto flatten_grad = [&](const Mat& g) {
    VectorXd out(rows * cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out[r * cols + c] = g(r, c);
    return out;
  };

  auto check_fn = [&](auto&& make_scalar, double tol) {
    auto f = [&](const VectorXd& p) {
      Tape t;
      Value x;
      build(p, t, x);
      return make_scalar(t, x).scalar();
    };
    Tape t;
    Value x;
    build(flat, t, x);
    Value s = make_scalar(t, x);
    auto g = t.grad(s, {x}, false);
    CHECK(ad::finite_diff_check(f, flatten_grad(g.at(x).mat()), flat) < tol);
  };

  check_fn([&](Tape& t, Value x) { return t.sum(t.mul(t.softmax_rows(x), t.square(x))); }, 1e-6);
  check_fn([&](Tape& t, Value x) { return t.sum(t.row_max(x)); }, 1e-6);
  check_fn([&](Tape& t, Value x) { return t.sum(t.square(t.select_cols(x, idx))); }, 1e-6);
  check_fn([&](Tape& t, Value x) { return t.sum(t.huber(x, 1.0)); }, 1e-6);
  check_fn([&](Tape& t, Value x) { return t.mean(t.exp(t.scalar_mul(t.row_sum(x), 0.3))); }, 1e-6);
  check_fn(
      [&](Tape& t, Value x) {
        Value top = t.hslice(x, 0, 2);
        Value rest = t.hslice(x, 2, 3);
        return t.sum(t.square(t.hconcat(rest, top)));
      },
      1e-6);
}

TEST_CASE("padded slots of a scatter contribute exact zeros") {
  Tape t;
  Value v = t.input(Mat(rowvec({2.0, 3.0}).transpose()), true);
  Value wide = t.scatter_cols(v, {0, 3}, 5);
  Value s = t.sum(t.square(wide));
  auto g = t.grad(s, {v}, false);
  CHECK(g.at(v).mat()(0, 0) == 4.0);
  CHECK(g.at(v).mat()(1, 0) == 6.0);
}
