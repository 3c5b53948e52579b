#include "reengage/theory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "reengage/autodiff.hpp"

namespace reengage::theory {

namespace {

using ad::Tape;
using ad::Value;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_gamma(double gamma) {
  if (gamma <= 0.0 || gamma >= 1.0) fail("gamma must lie in (0, 1)");
}

}  // namespace

double optimal_q_dense(const VectorXd& s, const VectorXd& a, const VectorXd& g,
                       const MatrixXd& u_hat, double gamma) {
  check_gamma(gamma);
  return g.dot(s + u_hat * a) / (1.0 - gamma) + gamma * g.norm() / std::pow(1.0 - gamma, 2);
}

double optimal_q_sparse(const VectorXd& s1, const VectorXd& s2, const VectorXd& a,
                        const VectorXd& g, const MatrixXd& u_hat, double gamma) {
  check_gamma(gamma);
  const double g2 = gamma * gamma;
  if (!s1.isZero(0.0)) {
    return gamma * g.dot(s1 + u_hat * a) / (1.0 - g2) +
           std::pow(gamma, 3) * g.norm() / std::pow(1.0 - g2, 2);
  }
  return g.dot(s2) / (1.0 - g2) + g2 * g.norm() / std::pow(1.0 - g2, 2);
}

// ---------------------------------------------------------------------------
// Samples

std::vector<DenseSample> make_dense_samples(int d, int n, const MatrixXd& u, RngStream& rng) {
  std::vector<DenseSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    DenseSample s;
    s.s = rng.normal_vector(d);
    s.a = rng.unit_sphere(d);
    s.g = rng.normal_vector(d);
    s.s_next = env::rot_dense_step(s.s, s.a, u);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SparseSample> make_sparse_samples(int d, int n_informative, const MatrixXd& u,
                                              RngStream& rng) {
  std::vector<SparseSample> out;
  out.reserve(n_informative);
  for (int i = 0; i < n_informative; ++i) {
    SparseSample s;
    s.s1 = rng.normal_vector(d);
    s.a = rng.unit_sphere(d);
    s.g = rng.normal_vector(d);
    env::SparseState st{s.s1, VectorXd::Zero(d)};
    env::SparseState next = env::rot_sparse_step(st, s.a, u);
    s.s2_next = next.s2;
    s.informative = true;
    out.push_back(std::move(s));
  }
  return out;
}

double standard_loss_dense(const DenseSample& sample, const MatrixXd& u_hat) {
  const double lhs = sample.g.dot(u_hat * sample.a);
  const double rhs = sample.g.dot(sample.s_next - sample.s);
  return (lhs - rhs) * (lhs - rhs);
}

double reengage_loss_dense(const DenseSample& sample, const MatrixXd& u_hat) {
  return (u_hat * sample.a - (sample.s_next - sample.s)).squaredNorm();
}

std::pair<double, double> sparse_loss_pair(const SparseSample& sample, const MatrixXd& u_hat) {
  if (!sample.informative || sample.s1.isZero(0.0))
    fail("sparse_loss_pair: uninformative sample (s1 = 0), excluded");
  const VectorXd y = sample.s2_next - sample.s1;
  const double scalar = sample.g.dot(u_hat * sample.a) - sample.g.dot(y);
  return {scalar * scalar, (u_hat * sample.a - y).squaredNorm()};
}

// ---------------------------------------------------------------------------
// Full residuals on the closed-form hypothesis class

double dense_bellman_residual(const DenseSample& s, const MatrixXd& u_cur, const MatrixXd& u_tar,
                              double gamma) {
  check_gamma(gamma);
  const double q = optimal_q_dense(s.s, s.a, s.g, u_cur, gamma);
  const VectorXd a_star = u_tar.transpose() * s.g / s.g.norm();
  const double target = env::rot_dense_reward(s.s_next, s.g) +
                        gamma * optimal_q_dense(s.s_next, a_star, s.g, u_tar, gamma);
  return (q - target) * (q - target);
}

namespace {

// closed-form Q as tape ops: g.(s + U a)/(1-gamma) + gamma ||g||/(1-gamma)^2,
// with the action itself allowed to be a function of g (the target policy)
Value q_dense_node(Tape& t, const VectorXd& s, Value a, Value g, const MatrixXd& u,
                   double gamma) {
  Value moved = t.add(t.constant(ad::Mat(s)), t.matmul(t.constant(u), a));
  Value lin = t.scalar_mul(t.dot(g, moved), 1.0 / (1.0 - gamma));
  Value tail = t.scalar_mul(t.l2norm(g), gamma / std::pow(1.0 - gamma, 2));
  return t.add(lin, tail);
}

Value policy_node(Tape& t, Value g, const MatrixXd& u_tar) {
  Value raw = t.matmul(t.constant(MatrixXd(u_tar.transpose())), g);
  Value inv_norm = t.div(t.constant(1.0), t.l2norm(g));
  return t.mul(raw, t.fill(inv_norm, raw.rows(), 1));
}

}  // namespace

double dense_gradient_residual(const DenseSample& s, const MatrixXd& u_cur, const MatrixXd& u_tar,
                               double gamma) {
  check_gamma(gamma);
  Tape t;
  Value g = t.input(ad::Mat(s.g), true);
  Value q_cur = q_dense_node(t, s.s, t.constant(ad::Mat(s.a)), g, u_cur, gamma);
  Value a_star = policy_node(t, g, u_tar);
  Value reward = t.dot(g, t.constant(ad::Mat(s.s_next)));
  Value target =
      t.add(reward, t.scalar_mul(q_dense_node(t, s.s_next, a_star, g, u_tar, gamma), gamma));
  Value q_grad = t.grad(q_cur, {g}, false).at_or_zero(g);
  Value t_grad = t.grad(target, {g}, false).at_or_zero(g);
  return (q_grad.mat() - t_grad.mat()).squaredNorm();
}

namespace {

// sparse-class closed form on the tape; branch chosen by the caller
Value q_sparse_nonzero_node(Tape& t, const VectorXd& s1, Value a, Value g, const MatrixXd& u,
                            double gamma) {
  const double g2 = gamma * gamma;
  Value moved = t.add(t.constant(ad::Mat(s1)), t.matmul(t.constant(u), a));
  Value lin = t.scalar_mul(t.dot(g, moved), gamma / (1.0 - g2));
  Value tail = t.scalar_mul(t.l2norm(g), std::pow(gamma, 3) / std::pow(1.0 - g2, 2));
  return t.add(lin, tail);
}

Value q_sparse_zero_node(Tape& t, const VectorXd& s2, Value g, double gamma) {
  const double g2 = gamma * gamma;
  Value lin = t.scalar_mul(t.dot(g, t.constant(ad::Mat(s2))), 1.0 / (1.0 - g2));
  Value tail = t.scalar_mul(t.l2norm(g), g2 / std::pow(1.0 - g2, 2));
  return t.add(lin, tail);
}

}  // namespace

double sparse_bellman_residual(const SparseSample& s, const MatrixXd& u_cur,
                               const MatrixXd& u_tar, double gamma) {
  check_gamma(gamma);
  const int d = static_cast<int>(s.s1.size());
  const double q =
      optimal_q_sparse(s.s1, VectorXd::Zero(d), s.a, s.g, u_cur, gamma);
  // successor is (0; s2'), so the immediate reward is 0 and the target Q uses
  // the zero branch; the action there is irrelevant
  const double target =
      0.0 + gamma * optimal_q_sparse(VectorXd::Zero(d), s.s2_next, VectorXd::Zero(d), s.g, u_tar,
                                     gamma);
  return (q - target) * (q - target);
}

double sparse_gradient_residual(const SparseSample& s, const MatrixXd& u_cur,
                                const MatrixXd& u_tar, double gamma) {
  check_gamma(gamma);
  Tape t;
  Value g = t.input(ad::Mat(s.g), true);
  Value q_cur = q_sparse_nonzero_node(t, s.s1, t.constant(ad::Mat(s.a)), g, u_cur, gamma);
  // reward of the successor state is g . 0, identically zero in g
  Value target = t.scalar_mul(q_sparse_zero_node(t, s.s2_next, g, gamma), gamma);
  Value q_grad = t.grad(q_cur, {g}, false).at_or_zero(g);
  Value t_grad = t.grad(target, {g}, false).at_or_zero(g);
  return (q_grad.mat() - t_grad.mat()).squaredNorm();
}

// ---------------------------------------------------------------------------
// Fitting

const char* loss_kind_name(LossKind k) {
  return k == LossKind::kStandard ? "standard" : "reengage";
}

std::vector<FitInput> to_fit_inputs(std::span<const DenseSample> samples) {
  std::vector<FitInput> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.a, s.s_next - s.s, s.g});
  return out;
}

std::vector<FitInput> to_fit_inputs(std::span<const SparseSample> samples) {
  std::vector<FitInput> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.informative || s.s1.isZero(0.0)) continue;  // excluded, no information
    out.push_back({s.a, s.s2_next - s.s1, s.g});
  }
  return out;
}

MatrixXd procrustes(const MatrixXd& m) {
  Eigen::JacobiSVD<MatrixXd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

namespace {

int rank_of(const Eigen::JacobiSVD<MatrixXd>& svd) {
  const auto& sv = svd.singularValues();
  if (sv.size() == 0) return 0;
  const double thresh = 1e-8 * sv[0];
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > thresh) ++r;
  return r;
}

MatrixXd grad_descent_fit(std::span<const FitInput> samples, LossKind kind, int d,
                          RngStream&& rng) {
  MatrixXd u = env::random_orthogonal(d, rng);
  const double lr = 0.5 / static_cast<double>(samples.size());
  for (int iter = 0; iter < 2000; ++iter) {
    MatrixXd grad = MatrixXd::Zero(d, d);
    for (const auto& s : samples) {
      if (kind == LossKind::kReengage) {
        grad += 2.0 * (u * s.a - s.y) * s.a.transpose();
      } else {
        const double resid = s.g.dot(u * s.a) - s.g.dot(s.y);
        grad += 2.0 * resid * s.g * s.a.transpose();
      }
    }
    u = procrustes(u - lr * grad);
  }
  return u;
}

}  // namespace

FitResult fit_rotation(std::span<const FitInput> samples, LossKind kind, int d,
                       const MatrixXd& u_true, FitMethod method) {
  if (samples.empty()) fail("fit_rotation: need at least one sample");
  const int n = static_cast<int>(samples.size());

  FitResult out;
  out.model.sparse_variant = false;
  out.report.d = d;
  out.report.loss_kind = kind;
  out.report.samples_used = n;

  if (method == FitMethod::kGradDescent) {
    out.model.u_hat = grad_descent_fit(samples, kind, d, RngStream(12345));
    Eigen::JacobiSVD<MatrixXd> svd = [&] {
      if (kind == LossKind::kReengage) {
        MatrixXd a_mat(d, n);
        for (int i = 0; i < n; ++i) a_mat.col(i) = samples[i].a;
        return Eigen::JacobiSVD<MatrixXd>(a_mat);
      }
      MatrixXd design(n, d * d);
      for (int i = 0; i < n; ++i)
        design.row(i) = Eigen::Map<const VectorXd>(
            MatrixXd(samples[i].g * samples[i].a.transpose()).data(), d * d);
      return Eigen::JacobiSVD<MatrixXd>(design);
    }();
    out.report.identifiable =
        rank_of(svd) == (kind == LossKind::kReengage ? d : d * d);
  } else if (kind == LossKind::kReengage) {
    MatrixXd a_mat(d, n), y_mat(d, n);
    for (int i = 0; i < n; ++i) {
      a_mat.col(i) = samples[i].a;
      y_mat.col(i) = samples[i].y;
    }
    Eigen::JacobiSVD<MatrixXd> svd(a_mat);
    out.report.identifiable = rank_of(svd) == d;
    // orthogonal Procrustes on the cross-covariance solves the constrained
    // least squares min_{Q orthogonal} ||Q A - Y||_F
    out.model.u_hat = procrustes(y_mat * a_mat.transpose());
  } else {
    // scalar equations g_i . U~ a_i = g_i . y_i over the d^2 entries
    MatrixXd design(n, d * d);
    VectorXd rhs(n);
    for (int i = 0; i < n; ++i) {
      const MatrixXd outer = samples[i].g * samples[i].a.transpose();
      design.row(i) = Eigen::Map<const VectorXd>(outer.data(), d * d);
      rhs[i] = samples[i].g.dot(samples[i].y);
    }
    Eigen::JacobiSVD<MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.report.identifiable = rank_of(svd) == d * d;
    const VectorXd sol = svd.solve(rhs);  // min-norm least squares
    const MatrixXd u_ls = Eigen::Map<const MatrixXd>(sol.data(), d, d);
    out.model.u_hat = procrustes(u_ls);
  }

  out.report.frobenius_error = (out.model.u_hat - u_true).norm();
  return out;
}

std::optional<MatrixXd> certify_nonidentifiable(std::span<const FitInput> samples,
                                                const MatrixXd& u_true, RngStream& rng,
                                                double min_distance, double loss_tol) {
  const int d = static_cast<int>(u_true.rows());
  const int n = static_cast<int>(samples.size());
  MatrixXd design(n, d * d);
  VectorXd rhs(n);
  for (int i = 0; i < n; ++i) {
    const MatrixXd outer = samples[i].g * samples[i].a.transpose();
    design.row(i) = Eigen::Map<const VectorXd>(outer.data(), d * d);
    rhs[i] = samples[i].g.dot(samples[i].y);
  }
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(design);
  Eigen::JacobiSVD<MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeFullV);
  const int rank = rank_of(svd);
  if (rank >= d * d) return std::nullopt;  // full rank: identifiable, no witness

  const MatrixXd null_basis = svd.matrixV().rightCols(d * d - rank);
  const VectorXd u_vec = Eigen::Map<const VectorXd>(u_true.data(), d * d);

  auto mean_loss = [&](const MatrixXd& q) {
    const VectorXd qv = Eigen::Map<const VectorXd>(q.data(), d * d);
    return (design * qv - rhs).squaredNorm() / n;
  };

  for (int restart = 0; restart < 60; ++restart) {
    const double scale = 0.5 + 0.25 * restart;
    VectorXd x = u_vec + null_basis * rng.normal_vector(null_basis.cols(), scale);
    // alternate between the orthogonal manifold and the affine solution set
    for (int iter = 0; iter < 300; ++iter) {
      MatrixXd q = procrustes(Eigen::Map<const MatrixXd>(x.data(), d, d));
      x = Eigen::Map<const VectorXd>(q.data(), d * d);
      x -= cod.solve(design * x - rhs);
    }
    const MatrixXd witness = procrustes(Eigen::Map<const MatrixXd>(x.data(), d, d));
    if (mean_loss(witness) <= loss_tol && (witness - u_true).norm() > min_distance)
      return witness;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Sweep

namespace {

double median_error_at(int d, LossKind kind, bool sparse_variant, int n, int trials,
                       std::uint64_t seed) {
  std::vector<double> errs;
  errs.reserve(trials);
  for (int trial = 0; trial < trials; ++trial) {
    std::ostringstream label;
    label << "sweep/" << d << "/" << loss_kind_name(kind) << "/" << sparse_variant << "/" << n
          << "/" << trial;
    RngStream rng = RngStream::split(seed, label.str());
    const MatrixXd u = env::random_orthogonal(d, rng);
    std::vector<FitInput> inputs;
    if (sparse_variant) {
      inputs = to_fit_inputs(std::span<const SparseSample>(make_sparse_samples(d, n, u, rng)));
    } else {
      inputs = to_fit_inputs(std::span<const DenseSample>(make_dense_samples(d, n, u, rng)));
    }
    errs.push_back(fit_rotation(inputs, kind, d, u).report.frobenius_error);
  }
  std::sort(errs.begin(), errs.end());
  return errs[errs.size() / 2];
}

double fit_slope(const std::vector<std::pair<int, int>>& d_vs_n) {
  // least-squares slope of ln N on ln d
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(d_vs_n.size());
  for (auto [d, nn] : d_vs_n) {
    const double x = std::log(static_cast<double>(d));
    const double y = std::log(static_cast<double>(nn));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

SweepResult complexity_sweep(std::span<const int> dims, int trials, double tol,
                             std::uint64_t seed) {
  SweepResult result;
  for (bool sparse_variant : {false, true}) {
    for (LossKind kind : {LossKind::kReengage, LossKind::kStandard}) {
      std::vector<std::pair<int, int>> d_vs_n;
      for (int d : dims) {
        const int hi_cap = 4 * d * d + 16;
        auto ok = [&](int n) {
          return median_error_at(d, kind, sparse_variant, n, trials, seed) < tol;
        };
        // exponential bracket then binary search for the threshold
        int hi = 1;
        while (hi < hi_cap && !ok(hi)) hi *= 2;
        hi = std::min(hi, hi_cap);
        int lo = hi / 2;
        while (lo + 1 < hi) {
          const int mid = (lo + hi) / 2;
          if (ok(mid))
            hi = mid;
          else
            lo = mid;
        }
        SweepRow row;
        row.d = d;
        row.loss_kind = kind;
        row.sparse_variant = sparse_variant;
        row.n_star = hi;
        row.median_error = median_error_at(d, kind, sparse_variant, hi, trials, seed);
        result.rows.push_back(row);
        d_vs_n.emplace_back(d, hi);
      }
      const double slope = fit_slope(d_vs_n);
      if (kind == LossKind::kStandard && !sparse_variant) result.slope_standard_dense = slope;
      if (kind == LossKind::kReengage && !sparse_variant) result.slope_reengage_dense = slope;
      if (kind == LossKind::kStandard && sparse_variant) result.slope_standard_sparse = slope;
      if (kind == LossKind::kReengage && sparse_variant) result.slope_reengage_sparse = slope;
    }
  }
  return result;
}

std::string sweep_csv(const SweepResult& result) {
  std::ostringstream os;
  os << "d,loss_kind,variant,n_star,median_error\n";
  for (const auto& r : result.rows) {
    os << r.d << "," << loss_kind_name(r.loss_kind) << ","
       << (r.sparse_variant ? "sparse" : "dense") << "," << r.n_star << "," << r.median_error
       << "\n";
  }
  os << "slope,reengage,dense," << result.slope_reengage_dense << ",\n";
  os << "slope,standard,dense," << result.slope_standard_dense << ",\n";
  os << "slope,reengage,sparse," << result.slope_reengage_sparse << ",\n";
  os << "slope,standard,sparse," << result.slope_standard_sparse << ",\n";
  return os.str();
}

}  // namespace reengage::theory
