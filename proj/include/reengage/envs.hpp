#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>

#include "reengage/nn.hpp"
#include "reengage/rng.hpp"

namespace reengage::env {

using Eigen::Vector2d;
using Eigen::VectorXd;
using nn::GoalSet;

struct EnvState {
  VectorXd observation;
  VectorXd achieved_goal;
  int step_index = 0;
};

enum class ActionKind { kBox, kBall2, kDiscrete };

struct ActionSpec {
  ActionKind kind = ActionKind::kBox;
  int dim = 0;
  double bound = 1.0;  // per-coordinate box bound, or ball radius
  int n_actions = 0;   // discrete only
};

// ---------------------------------------------------------------------------
// Pure transition / reward rules (the unit-testable core of each environment)

/// s' = clip(s + a, -D, D) componentwise; a is clipped into [-1,1]^d first.
VectorXd cs_step(const VectorXd& s, const VectorXd& a, double box_d);

/// 0 iff ||s' - g||_inf <= eps (inclusive), else -1.
double cs_reward(const VectorXd& s_next, const VectorXd& g, double eps);

/// Flips bit `a` of bitstring s (entries 0/1).
VectorXd bf_step(const VectorXd& s, int a);

struct DriveState {
  Vector2d pos = Vector2d::Zero();
  double angle = 0.0;
};

/// angle += clip(a, -0.5, 0.5); pos moves one unit along the heading and
/// wraps around the [-10,10]^2 box.
DriveState ds_step(const DriveState& s, double a);

/// Observation (pos, round(pos), cos angle, sin angle); round is
/// half-away-from-zero so goal matching is bit-stable.
VectorXd ds_observation(const DriveState& s);

/// R_item per slot (1 iff round(pos') equals the slot's goal, active slots
/// only) plus the summed reward.
struct MultiReward {
  double total = 0.0;
  VectorXd per_item;  // n_max entries, zero at padded slots
};
MultiReward ds_reward(const Vector2d& pos_next, const GoalSet& gs);

/// s' = s + project_ball(a) + z with z ~ N(0, I) from the stream.
Vector2d ns_step(const Vector2d& s, const Vector2d& a, RngStream& rng);

/// Clustered integer goals: cluster count ~ Geometric(0.15), goal budget
/// ~ U{1..200}, centers ~ N(0, 10^2 I), cluster weights ~ Dirichlet(1,..,1),
/// per-goal offset ~ N(0, 2^2 I), rounded and de-duplicated.
GoalSet ns_sample_goals(RngStream& rng, int n_max = 200);

VectorXd rot_dense_step(const VectorXd& s, const VectorXd& a, const Eigen::MatrixXd& u);
double rot_dense_reward(const VectorXd& s, const VectorXd& g);

struct SparseState {
  VectorXd s1, s2;
};
SparseState rot_sparse_step(const SparseState& s, const VectorXd& a, const Eigen::MatrixXd& u);
double rot_sparse_reward(const SparseState& s, const VectorXd& g);

/// Throws unless ||U^T U - I||_inf <= 1e-10.
void require_orthogonal(const Eigen::MatrixXd& u);

/// QR of a seeded Gaussian matrix with sign-fixed R diagonal; any orthogonal
/// matrix (determinant +/-1) is admissible.
Eigen::MatrixXd random_orthogonal(int dim, RngStream& rng);

/// round-half-away-from-zero, the project-wide convention for goal matching.
double round_half_away(double x);
Vector2d round_half_away(const Vector2d& v);

/// Projects onto the closed l2 ball of the given radius.
VectorXd project_ball(const VectorXd& a, double radius = 1.0);

// ---------------------------------------------------------------------------
// Uniform single-goal environment interface (ContinuousSeek, BitFlip, the
// rotation pair). Instances are single-threaded; reproducible from (seed,
// action sequence).

class GoalEnv {
 public:
  virtual ~GoalEnv() = default;

  virtual int obs_dim() const = 0;
  virtual int goal_dim() const = 0;
  virtual ActionSpec action_spec() const = 0;
  virtual int horizon() const = 0;

  /// Resets state and samples a fresh goal.
  virtual void reset(RngStream& rng) = 0;
  /// Advances one step; discrete actions are passed as a 1-vector index.
  virtual double step(const VectorXd& action) = 0;

  virtual const EnvState& state() const = 0;
  virtual const VectorXd& goal() const = 0;

  /// Reward recomputed from an achieved goal, for relabeling.
  virtual double reward_from_achieved(const VectorXd& achieved, const VectorXd& g) const = 0;
  virtual bool is_success(const VectorXd& achieved, const VectorXd& g) const = 0;
  virtual double c_low() const = 0;
};

class ContinuousSeek final : public GoalEnv {
 public:
  ContinuousSeek(int dim, double box_d = 5.0, double eps = 0.1, int horizon = 10);

  int obs_dim() const override { return dim_; }
  int goal_dim() const override { return dim_; }
  ActionSpec action_spec() const override { return {ActionKind::kBox, dim_, 1.0, 0}; }
  int horizon() const override { return horizon_; }
  void reset(RngStream& rng) override;
  double step(const VectorXd& action) override;
  const EnvState& state() const override { return state_; }
  const VectorXd& goal() const override { return goal_; }
  double reward_from_achieved(const VectorXd& achieved, const VectorXd& g) const override;
  bool is_success(const VectorXd& achieved, const VectorXd& g) const override;
  double c_low() const override { return -1.0; }

  double box() const { return box_d_; }
  double eps() const { return eps_; }

 private:
  int dim_;
  double box_d_, eps_;
  int horizon_;
  EnvState state_;
  VectorXd goal_;
};

class BitFlip final : public GoalEnv {
 public:
  explicit BitFlip(int bits);

  int obs_dim() const override { return bits_; }
  int goal_dim() const override { return bits_; }
  ActionSpec action_spec() const override { return {ActionKind::kDiscrete, 1, 0.0, bits_}; }
  int horizon() const override { return bits_; }
  void reset(RngStream& rng) override;
  double step(const VectorXd& action) override;
  const EnvState& state() const override { return state_; }
  const VectorXd& goal() const override { return goal_; }
  double reward_from_achieved(const VectorXd& achieved, const VectorXd& g) const override;
  bool is_success(const VectorXd& achieved, const VectorXd& g) const override;
  double c_low() const override { return -1.0; }

 private:
  int bits_;
  EnvState state_;
  VectorXd goal_;
};

class RotationDense final : public GoalEnv {
 public:
  RotationDense(Eigen::MatrixXd u, int horizon = 40);

  int obs_dim() const override { return dim_; }
  int goal_dim() const override { return dim_; }
  ActionSpec action_spec() const override { return {ActionKind::kBall2, dim_, 1.0, 0}; }
  int horizon() const override { return horizon_; }
  void reset(RngStream& rng) override;
  double step(const VectorXd& action) override;
  const EnvState& state() const override { return state_; }
  const VectorXd& goal() const override { return goal_; }
  double reward_from_achieved(const VectorXd& achieved, const VectorXd& g) const override;
  bool is_success(const VectorXd&, const VectorXd&) const override { return false; }
  double c_low() const override { return 0.0; }

  const Eigen::MatrixXd& rotation() const { return u_; }

 private:
  Eigen::MatrixXd u_;
  int dim_, horizon_;
  EnvState state_;
  VectorXd goal_;
};

class RotationSparse final : public GoalEnv {
 public:
  RotationSparse(Eigen::MatrixXd u, int horizon = 40);

  int obs_dim() const override { return 2 * dim_; }
  int goal_dim() const override { return dim_; }
  ActionSpec action_spec() const override { return {ActionKind::kBall2, dim_, 1.0, 0}; }
  int horizon() const override { return horizon_; }
  void reset(RngStream& rng) override;
  double step(const VectorXd& action) override;
  const EnvState& state() const override { return state_; }
  const VectorXd& goal() const override { return goal_; }
  double reward_from_achieved(const VectorXd& achieved, const VectorXd& g) const override;
  bool is_success(const VectorXd&, const VectorXd&) const override { return false; }
  double c_low() const override { return 0.0; }

  const Eigen::MatrixXd& rotation() const { return u_; }
  SparseState split_state() const;

 private:
  Eigen::MatrixXd u_;
  int dim_, horizon_;
  EnvState state_;
  VectorXd goal_;
};

// ---------------------------------------------------------------------------
// Multi-goal environments (goal sets; no goal projection, so HER relabeling
// is unsupported here).

class MultiGoalEnv {
 public:
  virtual ~MultiGoalEnv() = default;

  virtual int obs_dim() const = 0;
  virtual int goal_dim() const = 0;  // per-item dimension
  virtual int n_max() const = 0;
  virtual ActionSpec action_spec() const = 0;
  virtual int horizon() const = 0;

  virtual void reset(RngStream& rng) = 0;
  virtual MultiReward step(const VectorXd& action) = 0;

  virtual const EnvState& state() const = 0;
  virtual const GoalSet& goal_set() const = 0;
  /// True when the achieved goal (rounded position) matches any active slot.
  virtual bool any_success(const VectorXd& achieved) const = 0;
};

class DriveSeek final : public MultiGoalEnv {
 public:
  explicit DriveSeek(int n_max = 200, int horizon = 40);

  int obs_dim() const override { return 6; }
  int goal_dim() const override { return 2; }
  int n_max() const override { return n_max_; }
  ActionSpec action_spec() const override { return {ActionKind::kBox, 1, 0.5, 0}; }
  int horizon() const override { return horizon_; }
  void reset(RngStream& rng) override;
  MultiReward step(const VectorXd& action) override;
  const EnvState& state() const override { return state_; }
  const GoalSet& goal_set() const override { return goals_; }
  bool any_success(const VectorXd& achieved) const override;

  const DriveState& drive_state() const { return drive_; }

 private:
  int n_max_, horizon_;
  DriveState drive_;
  EnvState state_;
  GoalSet goals_;
};

class NoisySeek final : public MultiGoalEnv {
 public:
  explicit NoisySeek(int n_max = 200, int horizon = 40);

  int obs_dim() const override { return 4; }
  int goal_dim() const override { return 2; }
  int n_max() const override { return n_max_; }
  ActionSpec action_spec() const override { return {ActionKind::kBall2, 2, 1.0, 0}; }
  int horizon() const override { return horizon_; }
  void reset(RngStream& rng) override;
  MultiReward step(const VectorXd& action) override;
  const EnvState& state() const override { return state_; }
  const GoalSet& goal_set() const override { return goals_; }
  bool any_success(const VectorXd& achieved) const override;

 private:
  int n_max_, horizon_;
  Vector2d pos_ = Vector2d::Zero();
  RngStream noise_rng_{0};  // reseeded from the reset stream; drawn per step
  EnvState state_;
  GoalSet goals_;
};

/// Factory over the single-goal environments by config name
/// ("continuous-seek", "bit-flip", "rotation-dense", "rotation-sparse").
std::unique_ptr<GoalEnv> make_goal_env(const std::string& name, int dim, double box_d, double eps,
                                       int horizon, std::uint64_t structure_seed);

}  // namespace reengage::env
