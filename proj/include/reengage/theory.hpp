#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reengage/envs.hpp"
#include "reengage/rng.hpp"

namespace reengage::theory {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Closed-form Q hypothesis class over an orthogonal estimate

/// g.(s + U~ a)/(1-gamma) + gamma ||g|| / (1-gamma)^2.
double optimal_q_dense(const VectorXd& s, const VectorXd& a, const VectorXd& g,
                       const MatrixXd& u_hat, double gamma);

/// Piecewise form of the two-phase sparse environment.
double optimal_q_sparse(const VectorXd& s1, const VectorXd& s2, const VectorXd& a,
                        const VectorXd& g, const MatrixXd& u_hat, double gamma);

// ---------------------------------------------------------------------------
// Samples and reduced losses

struct DenseSample {
  VectorXd s, a, g, s_next;
};

/// One informative (s1 != 0) step of the sparse environment: the rotated
/// action lands in s2 of the successor.
struct SparseSample {
  VectorXd s1, a, g, s2_next;
  bool informative = true;
};

std::vector<DenseSample> make_dense_samples(int d, int n, const MatrixXd& u, RngStream& rng);
std::vector<SparseSample> make_sparse_samples(int d, int n_informative, const MatrixXd& u,
                                              RngStream& rng);

/// (g.U~ a - g.(s'-s))^2, the reduced Bellman residual of the dense class.
double standard_loss_dense(const DenseSample& sample, const MatrixXd& u_hat);

/// ||U~ a - (s'-s)||^2; does not depend on g.
double reengage_loss_dense(const DenseSample& sample, const MatrixXd& u_hat);

/// (standard, reengage) reductions of the sparse class; throws on an
/// uninformative (s1 = 0) sample, which carries no information about U.
std::pair<double, double> sparse_loss_pair(const SparseSample& sample, const MatrixXd& u_hat);

// Full-residual routes: the Bellman error and its goal gradient evaluated on
// the closed-form hypothesis class, with an independent orthogonal target
// estimate. Used to verify the constant-factor loss reductions. The gradient
// residuals are computed by tape autodiff over the closed forms, so the two
// routes share no algebra.
double dense_bellman_residual(const DenseSample& s, const MatrixXd& u_cur, const MatrixXd& u_tar,
                              double gamma);
double dense_gradient_residual(const DenseSample& s, const MatrixXd& u_cur, const MatrixXd& u_tar,
                               double gamma);
double sparse_bellman_residual(const SparseSample& s, const MatrixXd& u_cur,
                               const MatrixXd& u_tar, double gamma);
double sparse_gradient_residual(const SparseSample& s, const MatrixXd& u_cur,
                                const MatrixXd& u_tar, double gamma);

// ---------------------------------------------------------------------------
// Fitting

enum class LossKind { kStandard, kReengage };
enum class FitMethod { kClosedForm, kGradDescent };

const char* loss_kind_name(LossKind k);

struct RotationModel {
  MatrixXd u_hat;
  double gamma = 0.95;
  bool sparse_variant = false;
};

struct ComplexityResult {
  int d = 0;
  LossKind loss_kind = LossKind::kStandard;
  int samples_used = 0;
  double frobenius_error = 0.0;
  bool identifiable = false;
};

struct FitInput {
  VectorXd a, y, g;  // action, observed displacement, goal
};

std::vector<FitInput> to_fit_inputs(std::span<const DenseSample> samples);
std::vector<FitInput> to_fit_inputs(std::span<const SparseSample> samples);

/// Nearest orthogonal matrix (polar factor via SVD). Idempotent on
/// orthogonal inputs; applied to a cross-covariance it solves the orthogonal
/// Procrustes problem.
MatrixXd procrustes(const MatrixXd& m);

struct FitResult {
  RotationModel model;
  ComplexityResult report;
};

/// Closed-form fit of the reduced losses. kReengage solves U~ a_i ~ y_i by
/// least squares and projects; kStandard solves the d^2-unknown scalar system
/// g_i . U~ a_i ~ g_i . y_i and projects. Identifiability comes from the rank
/// of the least-squares system (singular values above 1e-8 of the largest).
/// u_true is used only for the reported error.
FitResult fit_rotation(std::span<const FitInput> samples, LossKind kind, int d,
                       const MatrixXd& u_true, FitMethod method = FitMethod::kClosedForm);

/// Searches for a second orthogonal matrix far from u_true that still attains
/// near-zero standard loss on the samples (random null-space perturbation
/// followed by alternating projections). Success certifies that the sample
/// set cannot identify U.
std::optional<MatrixXd> certify_nonidentifiable(std::span<const FitInput> samples,
                                                const MatrixXd& u_true, RngStream& rng,
                                                double min_distance = 0.1,
                                                double loss_tol = 1e-9);

// ---------------------------------------------------------------------------
// Sample-complexity sweep

struct SweepRow {
  int d = 0;
  LossKind loss_kind = LossKind::kStandard;
  bool sparse_variant = false;
  int n_star = 0;          // smallest N with median error below tol
  double median_error = 0.0;  // at n_star
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double slope_standard_dense = 0.0;
  double slope_reengage_dense = 0.0;
  double slope_standard_sparse = 0.0;
  double slope_reengage_sparse = 0.0;
};

/// For each dimension and loss kind (dense and sparse variants), binary-search
/// the smallest sample count whose median-over-trials Frobenius error is
/// below tol, then fit log-log slopes of N*(d).
SweepResult complexity_sweep(std::span<const int> dims, int trials, double tol,
                             std::uint64_t seed);

/// CSV with one row per (d, kind, variant) plus slope summary rows.
std::string sweep_csv(const SweepResult& result);

}  // namespace reengage::theory
