#include <doctest.h>

#include <cmath>

#include "reengage/theory.hpp"

using namespace reengage;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
VectorXd e(int i, int d) {
  VectorXd v = VectorXd::Zero(d);
  v[i] = 1.0;
  return v;
}
MatrixXd rot90() {
  MatrixXd m(2, 2);
  m << 0, -1, 1, 0;
  return m;
}
}  // namespace

TEST_CASE("optimal_q_dense") {
  SUBCASE("hand-evaluated point") {
    CHECK(theory::optimal_q_dense(VectorXd::Zero(2), e(0, 2), e(0, 2), MatrixXd::Identity(2, 2),
                                  0.5) == doctest::Approx(4.0).epsilon(1e-14));
  }
  SUBCASE("zero goal gives zero value") {
    RngStream rng(1);
    CHECK(theory::optimal_q_dense(rng.normal_vector(3), rng.unit_sphere(3), VectorXd::Zero(3),
                                  MatrixXd::Identity(3, 3), 0.9) == 0.0);
  }
  SUBCASE("gamma outside (0,1) rejected") {
    CHECK_THROWS_AS(theory::optimal_q_dense(VectorXd::Zero(2), e(0, 2), e(0, 2),
                                            MatrixXd::Identity(2, 2), 1.0),
                    std::invalid_argument);
  }
  SUBCASE("the closed-form optimal action beats 1000 random unit actions") {
    RngStream rng(2);
    const int d = 4;
    const MatrixXd u = env::random_orthogonal(d, rng);
    const VectorXd s = rng.normal_vector(d);
    const VectorXd g = rng.normal_vector(d);
    const VectorXd a_star = u.transpose() * g / g.norm();
    const double best = theory::optimal_q_dense(s, a_star, g, u, 0.9);
    for (int i = 0; i < 1000; ++i)
      CHECK(theory::optimal_q_dense(s, rng.unit_sphere(d), g, u, 0.9) <= best + 1e-12);
  }
}

TEST_CASE("optimal_q_sparse") {
  SUBCASE("hand-evaluated zero-branch point") {
    CHECK(theory::optimal_q_sparse(VectorXd::Zero(2), e(0, 2), VectorXd::Zero(2), e(0, 2),
                                   MatrixXd::Identity(2, 2), 0.5) ==
          doctest::Approx(1.0 / 0.75 + 0.25 / 0.5625).epsilon(1e-13));
  }
  SUBCASE("zero goal gives zero in both branches") {
    RngStream rng(3);
    const MatrixXd u = env::random_orthogonal(2, rng);
    CHECK(theory::optimal_q_sparse(rng.normal_vector(2), rng.normal_vector(2), e(0, 2),
                                   VectorXd::Zero(2), u, 0.7) == 0.0);
    CHECK(theory::optimal_q_sparse(VectorXd::Zero(2), rng.normal_vector(2), e(0, 2),
                                   VectorXd::Zero(2), u, 0.7) == 0.0);
  }
  SUBCASE("one-step Bellman self-consistency at the true rotation") {
    RngStream rng(4);
    const int d = 3;
    const MatrixXd u = env::random_orthogonal(d, rng);
    for (int trial = 0; trial < 20; ++trial) {
      const VectorXd s1 = rng.normal_vector(d);
      const VectorXd a = rng.unit_sphere(d);
      const VectorXd g = rng.normal_vector(d);
      const double gamma = 0.8;
      const double q = theory::optimal_q_sparse(s1, VectorXd::Zero(d), a, g, u, gamma);
      // deterministic transition: reward 0, successor (0; s1 + U a)
      const double successor = theory::optimal_q_sparse(VectorXd::Zero(d), s1 + u * a,
                                                        VectorXd::Zero(d), g, u, gamma);
      CHECK(q == doctest::Approx(gamma * successor).epsilon(1e-12));
    }
  }
}

TEST_CASE("reduced losses") {
  RngStream rng(5);

  SUBCASE("true parameter gives zero loss") {
    const int d = 4;
    const MatrixXd u = env::random_orthogonal(d, rng);
    auto samples = theory::make_dense_samples(d, 10, u, rng);
    for (const auto& s : samples) {
      CHECK(theory::standard_loss_dense(s, u) < 1e-24);
      CHECK(theory::reengage_loss_dense(s, u) < 1e-24);
    }
  }

  SUBCASE("hand-evaluated 90-degree case") {
    theory::DenseSample s;
    s.s = VectorXd::Zero(2);
    s.a = e(0, 2);
    s.g = e(1, 2);
    s.s_next = rot90() * s.a;  // displacement e2
    CHECK(theory::standard_loss_dense(s, MatrixXd::Identity(2, 2)) ==
          doctest::Approx(1.0).epsilon(1e-14));
    CHECK(theory::reengage_loss_dense(s, MatrixXd::Identity(2, 2)) ==
          doctest::Approx(2.0).epsilon(1e-14));
  }

  SUBCASE("goal orthogonal to both displacements hides the error from the standard loss") {
    MatrixXd u = MatrixXd::Identity(3, 3);
    u.topLeftCorner(2, 2) = rot90();
    theory::DenseSample s;
    s.s = VectorXd::Zero(3);
    s.a = e(0, 3);
    s.g = e(2, 3);  // orthogonal to e1 and e2
    s.s_next = u * s.a;
    CHECK(theory::standard_loss_dense(s, MatrixXd::Identity(3, 3)) == 0.0);
    CHECK(theory::reengage_loss_dense(s, MatrixXd::Identity(3, 3)) ==
          doctest::Approx(2.0).epsilon(1e-14));
  }

  SUBCASE("reengage reduction never varies with the goal") {
    const int d = 5;
    const MatrixXd u = env::random_orthogonal(d, rng);
    auto samples = theory::make_dense_samples(d, 5, u, rng);
    const MatrixXd u_hat = env::random_orthogonal(d, rng);
    for (auto& s : samples) {
      const double base = theory::reengage_loss_dense(s, u_hat);
      for (int rep = 0; rep < 10; ++rep) {
        s.g = rng.normal_vector(d);
        CHECK(theory::reengage_loss_dense(s, u_hat) == base);
      }
    }
  }

  SUBCASE("sparse pair matches the dense algebra and excludes s1=0") {
    theory::SparseSample s;
    s.s1 = VectorXd::Zero(2);
    s.a = e(0, 2);
    s.g = e(1, 2);
    s.s2_next = rot90() * s.a;
    s.s1 = e(0, 2) * 0.0;  // uninformative
    s.informative = false;
    CHECK_THROWS_AS(theory::sparse_loss_pair(s, MatrixXd::Identity(2, 2)),
                    std::invalid_argument);

    // same 90-degree numbers transfer with s1 nonzero
    s.informative = true;
    s.s1 = e(0, 2) * 0.5;
    s.s2_next = s.s1 + rot90() * s.a;
    auto [standard, reengage] = theory::sparse_loss_pair(s, MatrixXd::Identity(2, 2));
    CHECK(standard == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(reengage == doctest::Approx(2.0).epsilon(1e-14));

    RngStream rng2(6);
    const MatrixXd u = env::random_orthogonal(3, rng2);
    for (const auto& sp : theory::make_sparse_samples(3, 8, u, rng2)) {
      auto [st, re] = theory::sparse_loss_pair(sp, u);
      CHECK(st < 1e-24);
      CHECK(re < 1e-24);
    }
  }
}

TEST_CASE("reduction fidelity: full residuals equal reduced losses times the constant") {
  RngStream rng(7);
  const int d = 4;
  const MatrixXd u = env::random_orthogonal(d, rng);

  SUBCASE("dense, factor 1/(1-gamma)^2 for both value and gradient") {
    for (double gamma : {0.5, 0.9, 0.95}) {
      const double factor = 1.0 / std::pow(1.0 - gamma, 2);
      auto samples = theory::make_dense_samples(d, 50, u, rng);
      for (const auto& s : samples) {
        const MatrixXd u_cur = env::random_orthogonal(d, rng);
        const MatrixXd u_tar = env::random_orthogonal(d, rng);
        const double full = theory::dense_bellman_residual(s, u_cur, u_tar, gamma);
        const double reduced = theory::standard_loss_dense(s, u_cur);
        CHECK(full == doctest::Approx(reduced * factor).epsilon(1e-10));
        const double gfull = theory::dense_gradient_residual(s, u_cur, u_tar, gamma);
        const double greduced = theory::reengage_loss_dense(s, u_cur);
        CHECK(gfull == doctest::Approx(greduced * factor).epsilon(1e-10));
      }
    }
  }

  SUBCASE("sparse, factor gamma^2/(1-gamma^2)^2") {
    for (double gamma : {0.5, 0.9}) {
      const double factor = gamma * gamma / std::pow(1.0 - gamma * gamma, 2);
      auto samples = theory::make_sparse_samples(d, 50, u, rng);
      for (const auto& s : samples) {
        const MatrixXd u_cur = env::random_orthogonal(d, rng);
        const MatrixXd u_tar = env::random_orthogonal(d, rng);
        auto [standard, reengage] = theory::sparse_loss_pair(s, u_cur);
        CHECK(theory::sparse_bellman_residual(s, u_cur, u_tar, gamma) ==
              doctest::Approx(standard * factor).epsilon(1e-10));
        CHECK(theory::sparse_gradient_residual(s, u_cur, u_tar, gamma) ==
              doctest::Approx(reengage * factor).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("procrustes projection") {
  RngStream rng(8);
  SUBCASE("idempotent and exact on orthogonal inputs") {
    const MatrixXd q = env::random_orthogonal(5, rng);
    CHECK((theory::procrustes(q) - q).cwiseAbs().maxCoeff() < 1e-12);
    const MatrixXd m = q + 1e-3 * MatrixXd::Identity(5, 5);
    const MatrixXd p1 = theory::procrustes(m);
    CHECK((theory::procrustes(p1) - p1).cwiseAbs().maxCoeff() < 1e-12);
    env::require_orthogonal(p1);
  }
}

TEST_CASE("fit_rotation sample-complexity behavior") {
  RngStream rng(9);

  SUBCASE("reengage kind identifies U from d generic samples") {
    for (int d : {3, 5, 8}) {
      const MatrixXd u = env::random_orthogonal(d, rng);
      auto samples = theory::to_fit_inputs(
          std::span<const theory::DenseSample>(theory::make_dense_samples(d, d, u, rng)));
      auto fit = theory::fit_rotation(samples, theory::LossKind::kReengage, d, u);
      CHECK(fit.report.identifiable);
      CHECK(fit.report.frobenius_error < 1e-8);
    }
  }

  SUBCASE("standard kind with N=d samples is rank-deficient and certified ambiguous") {
    for (int d : {3, 4, 6}) {
      const MatrixXd u = env::random_orthogonal(d, rng);
      auto samples = theory::to_fit_inputs(
          std::span<const theory::DenseSample>(theory::make_dense_samples(d, d, u, rng)));
      auto fit = theory::fit_rotation(samples, theory::LossKind::kStandard, d, u);
      CHECK(!fit.report.identifiable);
      auto witness = theory::certify_nonidentifiable(samples, u, rng);
      REQUIRE(witness.has_value());
      env::require_orthogonal(*witness);
      CHECK((*witness - u).norm() > 0.1);
      double loss = 0;
      for (const auto& s : samples) {
        const double r = s.g.dot(*witness * s.a) - s.g.dot(s.y);
        loss += r * r;
      }
      CHECK(loss / samples.size() <= 1e-9);
    }
  }

  SUBCASE("standard kind recovers U from d^2 samples") {
    for (int d : {3, 4}) {
      const MatrixXd u = env::random_orthogonal(d, rng);
      auto samples = theory::to_fit_inputs(
          std::span<const theory::DenseSample>(theory::make_dense_samples(d, d * d, u, rng)));
      auto fit = theory::fit_rotation(samples, theory::LossKind::kStandard, d, u);
      CHECK(fit.report.identifiable);
      CHECK(fit.report.frobenius_error < 1e-6);
    }
  }

  SUBCASE("sparse-variant inputs carry the same information") {
    const int d = 4;
    const MatrixXd u = env::random_orthogonal(d, rng);
    auto samples = theory::to_fit_inputs(
        std::span<const theory::SparseSample>(theory::make_sparse_samples(d, d, u, rng)));
    auto fit = theory::fit_rotation(samples, theory::LossKind::kReengage, d, u);
    CHECK(fit.report.frobenius_error < 1e-8);
  }

  SUBCASE("empty sample set rejected") {
    std::vector<theory::FitInput> empty;
    CHECK_THROWS_AS(
        theory::fit_rotation(empty, theory::LossKind::kReengage, 3, MatrixXd::Identity(3, 3)),
        std::invalid_argument);
  }

  SUBCASE("gradient-descent mode agrees with the closed form on determined data") {
    const int d = 3;
    const MatrixXd u = env::random_orthogonal(d, rng);
    auto samples = theory::to_fit_inputs(
        std::span<const theory::DenseSample>(theory::make_dense_samples(d, 3 * d, u, rng)));
    auto fit = theory::fit_rotation(samples, theory::LossKind::kReengage, d, u,
                                    theory::FitMethod::kGradDescent);
    CHECK(fit.report.frobenius_error < 1e-3);
  }
}

TEST_CASE("complexity sweep smoke run") {
  const std::vector<int> dims{3, 5};
  auto result = theory::complexity_sweep(dims, 5, 1e-3, 2024);
  REQUIRE(result.rows.size() == 8);
  for (const auto& row : result.rows) {
    if (row.loss_kind == theory::LossKind::kReengage) {
      CHECK(row.n_star <= row.d + 2);
    } else {
      CHECK(row.n_star > row.d);  // strictly more data than the reengage fit
    }
    CHECK(row.median_error < 1e-3);
  }
  CHECK(result.slope_standard_dense > result.slope_reengage_dense);
  const std::string csv = theory::sweep_csv(result);
  CHECK(csv.find("d,loss_kind,variant,n_star,median_error") == 0);
  CHECK(csv.find("slope,reengage,dense,") != std::string::npos);
}
