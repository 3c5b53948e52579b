#include "reengage/envs.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace reengage::env {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

double wrap_interval(double x, double lo, double hi) {
  const double width = hi - lo;
  return x - width * std::floor((x - lo) / width);
}
}  // namespace

double round_half_away(double x) { return std::round(x); }

Vector2d round_half_away(const Vector2d& v) {
  return Vector2d(std::round(v.x()), std::round(v.y()));
}

VectorXd project_ball(const VectorXd& a, double radius) {
  const double n = a.norm();
  if (n <= radius) return a;
  return a * (radius / n);
}

void require_orthogonal(const Eigen::MatrixXd& u) {
  if (u.rows() != u.cols()) fail("rotation matrix must be square");
  const Eigen::MatrixXd gram = u.transpose() * u;
  const double dev =
      (gram - Eigen::MatrixXd::Identity(u.rows(), u.cols())).cwiseAbs().maxCoeff();
  if (dev > 1e-10) fail("matrix is not orthogonal: ||U^T U - I||_inf = " + std::to_string(dev));
}

Eigen::MatrixXd random_orthogonal(int dim, RngStream& rng) {
  Eigen::MatrixXd gauss(dim, dim);
  for (Eigen::Index i = 0; i < gauss.size(); ++i) gauss.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  // sign-fix the factorization so the result is unique for a given seed
  for (int i = 0; i < dim; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  return q;
}

// ---------------------------------------------------------------------------
// Pure rules

VectorXd cs_step(const VectorXd& s, const VectorXd& a, double box_d) {
  if (s.size() != a.size()) fail("cs_step: state/action dimension mismatch");
  VectorXd out = s + a.cwiseMax(-1.0).cwiseMin(1.0);
  return out.cwiseMax(-box_d).cwiseMin(box_d);
}

double cs_reward(const VectorXd& s_next, const VectorXd& g, double eps) {
  return (s_next - g).cwiseAbs().maxCoeff() <= eps ? 0.0 : -1.0;
}

VectorXd bf_step(const VectorXd& s, int a) {
  if (a < 0 || a >= s.size()) fail("bf_step: bit index out of range");
  VectorXd out = s;
  out[a] = out[a] == 0.0 ? 1.0 : 0.0;
  return out;
}

DriveState ds_step(const DriveState& s, double a) {
  DriveState out;
  out.angle = s.angle + std::clamp(a, -0.5, 0.5);
  const Vector2d vel(std::cos(out.angle), std::sin(out.angle));
  out.pos.x() = wrap_interval(s.pos.x() + vel.x(), -10.0, 10.0);
  out.pos.y() = wrap_interval(s.pos.y() + vel.y(), -10.0, 10.0);
  return out;
}

VectorXd ds_observation(const DriveState& s) {
  VectorXd obs(6);
  const Vector2d r = round_half_away(s.pos);
  obs << s.pos.x(), s.pos.y(), r.x(), r.y(), std::cos(s.angle), std::sin(s.angle);
  return obs;
}

MultiReward ds_reward(const Vector2d& pos_next, const GoalSet& gs) {
  MultiReward out;
  out.per_item = Eigen::VectorXd::Zero(gs.n_max());
  const Vector2d r = round_half_away(pos_next);
  for (int i = 0; i < gs.count; ++i) {
    if (gs.goals(i, 0) == r.x() && gs.goals(i, 1) == r.y()) out.per_item[i] = 1.0;
  }
  out.total = out.per_item.sum();
  return out;
}

Vector2d ns_step(const Vector2d& s, const Vector2d& a, RngStream& rng) {
  const VectorXd ap = project_ball(a, 1.0);
  Vector2d z(rng.normal(), rng.normal());
  return s + Vector2d(ap) + z;
}

GoalSet ns_sample_goals(RngStream& rng, int n_max) {
  const int n_clusters = rng.geometric(0.15);
  const int budget = 1 + rng.uniform_int(n_max);
  Eigen::MatrixXd centers(n_clusters, 2);
  for (int c = 0; c < n_clusters; ++c) {
    centers(c, 0) = rng.normal() * 10.0;
    centers(c, 1) = rng.normal() * 10.0;
  }
  const VectorXd probs = rng.dirichlet_uniform(n_clusters);

  std::vector<std::pair<double, double>> goals;
  std::set<std::pair<double, double>> seen;
  for (int i = 0; i < budget; ++i) {
    // sample cluster by inverse cdf
    double u = rng.uniform();
    int c = 0;
    double acc = probs[0];
    while (u > acc && c + 1 < n_clusters) acc += probs[++c];
    const double gx = round_half_away(centers(c, 0) + rng.normal() * 2.0);
    const double gy = round_half_away(centers(c, 1) + rng.normal() * 2.0);
    if (seen.insert({gx, gy}).second) goals.emplace_back(gx, gy);
  }

  Eigen::MatrixXd active(static_cast<Eigen::Index>(goals.size()), 2);
  for (std::size_t i = 0; i < goals.size(); ++i) {
    active(static_cast<Eigen::Index>(i), 0) = goals[i].first;
    active(static_cast<Eigen::Index>(i), 1) = goals[i].second;
  }
  return GoalSet::make(active, n_max);
}

VectorXd rot_dense_step(const VectorXd& s, const VectorXd& a, const Eigen::MatrixXd& u) {
  if (s.size() != u.rows() || a.size() != u.cols()) fail("rot_dense_step: dimension mismatch");
  return s + u * project_ball(a, 1.0);
}

double rot_dense_reward(const VectorXd& s, const VectorXd& g) { return g.dot(s); }

SparseState rot_sparse_step(const SparseState& s, const VectorXd& a, const Eigen::MatrixXd& u) {
  SparseState out;
  if (!s.s1.isZero(0.0)) {
    out.s1 = VectorXd::Zero(s.s1.size());
    out.s2 = s.s1 + u * project_ball(a, 1.0);
  } else {
    out.s1 = s.s2;
    out.s2 = VectorXd::Zero(s.s2.size());
  }
  return out;
}

double rot_sparse_reward(const SparseState& s, const VectorXd& g) { return g.dot(s.s1); }

// ---------------------------------------------------------------------------
// ContinuousSeek

ContinuousSeek::ContinuousSeek(int dim, double box_d, double eps, int horizon)
    : dim_(dim), box_d_(box_d), eps_(eps), horizon_(horizon) {
  if (dim <= 0 || box_d <= 0 || eps < 0 || horizon <= 0) fail("ContinuousSeek: bad parameters");
}

void ContinuousSeek::reset(RngStream& rng) {
  state_.observation = VectorXd::Zero(dim_);
  state_.achieved_goal = state_.observation;
  state_.step_index = 0;
  // goal sampled uniformly over the box (distribution unstated upstream;
  // recorded as an assumption)
  goal_ = rng.uniform_vector(dim_, -box_d_, box_d_);
}

double ContinuousSeek::step(const VectorXd& action) {
  state_.observation = cs_step(state_.observation, action, box_d_);
  state_.achieved_goal = state_.observation;
  state_.step_index += 1;
  return cs_reward(state_.observation, goal_, eps_);
}

double ContinuousSeek::reward_from_achieved(const VectorXd& achieved, const VectorXd& g) const {
  return cs_reward(achieved, g, eps_);
}

bool ContinuousSeek::is_success(const VectorXd& achieved, const VectorXd& g) const {
  return reward_from_achieved(achieved, g) == 0.0;
}

// ---------------------------------------------------------------------------
// BitFlip

BitFlip::BitFlip(int bits) : bits_(bits) {
  if (bits <= 0) fail("BitFlip: bits must be positive");
}

void BitFlip::reset(RngStream& rng) {
  state_.observation = VectorXd(bits_);
  goal_ = VectorXd(bits_);
  for (int i = 0; i < bits_; ++i) state_.observation[i] = rng.uniform_int(2);
  for (int i = 0; i < bits_; ++i) goal_[i] = rng.uniform_int(2);
  state_.achieved_goal = state_.observation;
  state_.step_index = 0;
}

double BitFlip::step(const VectorXd& action) {
  if (action.size() != 1) fail("BitFlip: expected a 1-vector action index");
  state_.observation = bf_step(state_.observation, static_cast<int>(action[0]));
  state_.achieved_goal = state_.observation;
  state_.step_index += 1;
  return reward_from_achieved(state_.achieved_goal, goal_);
}

double BitFlip::reward_from_achieved(const VectorXd& achieved, const VectorXd& g) const {
  return is_success(achieved, g) ? 0.0 : -1.0;
}

bool BitFlip::is_success(const VectorXd& achieved, const VectorXd& g) const {
  return (achieved.array() == g.array()).all();
}

// ---------------------------------------------------------------------------
// Rotation environments

RotationDense::RotationDense(Eigen::MatrixXd u, int horizon)
    : u_(std::move(u)), dim_(static_cast<int>(u_.rows())), horizon_(horizon) {
  require_orthogonal(u_);
}

void RotationDense::reset(RngStream& rng) {
  state_.observation = rng.normal_vector(dim_);
  state_.achieved_goal = state_.observation;
  state_.step_index = 0;
  goal_ = rng.normal_vector(dim_);
}

double RotationDense::step(const VectorXd& action) {
  state_.observation = rot_dense_step(state_.observation, action, u_);
  state_.achieved_goal = state_.observation;
  state_.step_index += 1;
  return rot_dense_reward(state_.observation, goal_);
}

double RotationDense::reward_from_achieved(const VectorXd& achieved, const VectorXd& g) const {
  return rot_dense_reward(achieved, g);
}

RotationSparse::RotationSparse(Eigen::MatrixXd u, int horizon)
    : u_(std::move(u)), dim_(static_cast<int>(u_.rows())), horizon_(horizon) {
  require_orthogonal(u_);
}

SparseState RotationSparse::split_state() const {
  SparseState s;
  s.s1 = state_.observation.head(dim_);
  s.s2 = state_.observation.tail(dim_);
  return s;
}

void RotationSparse::reset(RngStream& rng) {
  state_.observation = rng.normal_vector(2 * dim_);
  state_.achieved_goal = state_.observation.head(dim_);
  state_.step_index = 0;
  goal_ = rng.normal_vector(dim_);
}

double RotationSparse::step(const VectorXd& action) {
  SparseState next = rot_sparse_step(split_state(), action, u_);
  state_.observation.head(dim_) = next.s1;
  state_.observation.tail(dim_) = next.s2;
  state_.achieved_goal = next.s1;
  state_.step_index += 1;
  return rot_sparse_reward(next, goal_);
}

double RotationSparse::reward_from_achieved(const VectorXd& achieved, const VectorXd& g) const {
  return g.dot(achieved);
}

// ---------------------------------------------------------------------------
// DriveSeek

DriveSeek::DriveSeek(int n_max, int horizon) : n_max_(n_max), horizon_(horizon) {}

void DriveSeek::reset(RngStream& rng) {
  drive_ = DriveState{};  // origin, heading 0
  state_.observation = ds_observation(drive_);
  state_.achieved_goal = round_half_away(drive_.pos);
  state_.step_index = 0;

  const int n = 1 + rng.uniform_int(std::min(n_max_, 200));
  // without replacement over the 21x21 integer grid
  std::vector<int> cells(441);
  for (int i = 0; i < 441; ++i) cells[i] = i;
  Eigen::MatrixXd goals(n, 2);
  for (int i = 0; i < n; ++i) {
    const int j = i + rng.uniform_int(441 - i);
    std::swap(cells[i], cells[j]);
    goals(i, 0) = cells[i] % 21 - 10;
    goals(i, 1) = cells[i] / 21 - 10;
  }
  goals_ = GoalSet::make(goals, n_max_);
}

MultiReward DriveSeek::step(const VectorXd& action) {
  if (action.size() != 1) fail("DriveSeek: expected scalar action");
  drive_ = ds_step(drive_, action[0]);
  state_.observation = ds_observation(drive_);
  state_.achieved_goal = round_half_away(drive_.pos);
  state_.step_index += 1;
  return ds_reward(drive_.pos, goals_);
}

bool DriveSeek::any_success(const VectorXd& achieved) const {
  for (int i = 0; i < goals_.count; ++i)
    if (goals_.goals(i, 0) == achieved[0] && goals_.goals(i, 1) == achieved[1]) return true;
  return false;
}

// ---------------------------------------------------------------------------
// NoisySeek

NoisySeek::NoisySeek(int n_max, int horizon) : n_max_(n_max), horizon_(horizon) {}

void NoisySeek::reset(RngStream& rng) {
  pos_ = Vector2d::Zero();
  noise_rng_ = RngStream(rng.bits());
  goals_ = ns_sample_goals(rng, n_max_);
  state_.observation = VectorXd(4);
  state_.observation << pos_.x(), pos_.y(), 0.0, 0.0;
  state_.achieved_goal = round_half_away(pos_);
  state_.step_index = 0;
}

MultiReward NoisySeek::step(const VectorXd& action) {
  if (action.size() != 2) fail("NoisySeek: expected 2-dimensional action");
  pos_ = ns_step(pos_, Vector2d(action[0], action[1]), noise_rng_);
  const Vector2d r = round_half_away(pos_);
  state_.observation << pos_.x(), pos_.y(), r.x(), r.y();
  state_.achieved_goal = r;
  state_.step_index += 1;

  MultiReward out;
  out.per_item = Eigen::VectorXd::Zero(goals_.n_max());
  for (int i = 0; i < goals_.count; ++i)
    if (goals_.goals(i, 0) == r.x() && goals_.goals(i, 1) == r.y()) out.per_item[i] = 1.0;
  out.total = out.per_item.sum();
  return out;
}

bool NoisySeek::any_success(const VectorXd& achieved) const {
  for (int i = 0; i < goals_.count; ++i)
    if (goals_.goals(i, 0) == achieved[0] && goals_.goals(i, 1) == achieved[1]) return true;
  return false;
}

// ---------------------------------------------------------------------------

std::unique_ptr<GoalEnv> make_goal_env(const std::string& name, int dim, double box_d, double eps,
                                       int horizon, std::uint64_t structure_seed) {
  if (name == "continuous-seek") return std::make_unique<ContinuousSeek>(dim, box_d, eps, horizon);
  if (name == "bit-flip") return std::make_unique<BitFlip>(dim);
  if (name == "rotation-dense" || name == "rotation-sparse") {
    RngStream rng = RngStream::split(structure_seed, "rotation-structure");
    Eigen::MatrixXd q = random_orthogonal(dim, rng);
    if (name == "rotation-dense") return std::make_unique<RotationDense>(q, horizon);
    return std::make_unique<RotationSparse>(q, horizon);
  }
  fail("unknown environment: " + name);
}

}  // namespace reengage::env
