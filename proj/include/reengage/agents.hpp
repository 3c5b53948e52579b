#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "reengage/autodiff.hpp"
#include "reengage/envs.hpp"
#include "reengage/nn.hpp"
#include "reengage/replay.hpp"
#include "reengage/rng.hpp"

namespace reengage::agent {

using ad::Mat;
using ad::Tape;
using ad::Value;

enum class CriticLossKind { kDdpg, kReengageDense, kReengageSparse };

/// Per-update loss decomposition; total = td + alpha * grad_term holds exactly
/// for every report.
struct LossReport {
  double total = 0.0;
  double td = 0.0;
  double grad_term = 0.0;
  double alpha = 0.0;
};

/// Row-per-sample batch for the continuous single-goal losses.
struct Batch {
  Mat s, a, s_next, g;  // B x dim
  Eigen::VectorXd r;    // B

  static Batch from_transitions(std::span<const replay::Transition> ts);
  Eigen::Index size() const { return s.rows(); }
};

/// Builds R(s', g) on the tape as a function of the goal node; s_next rows
/// are constants. Used by the dense loss, whose target gradient includes the
/// reward's own goal gradient.
using DenseRewardFn = std::function<Value(Tape&, const Mat& s_next, Value g)>;

/// Differentiable inner-product reward of the dense rotation class.
DenseRewardFn dot_product_reward();

struct ContinuousNets {
  const nn::NetParams* actor;
  const nn::NetParams* critic;
  const nn::NetParams* actor_target;
  const nn::NetParams* critic_target;
  double action_bound = 1.0;
  nn::Activation activation = nn::Activation::kRelu;
};

struct CriticLossGraph {
  Value total;
  LossReport report;
  nn::TapeNet critic;  // live critic attachment, for parameter gradients
};

struct ActorLossGraph {
  Value loss;
  nn::TapeNet actor;
};

/// Mean squared Bellman error with detached target r + gamma Q'(s', pi'(s',g), g).
CriticLossGraph ddpg_critic_loss(Tape& tape, const ContinuousNets& nets, const Batch& batch,
                                 double gamma);

/// -mean Q(s, pi(s,g), g); gradient flows only into the actor.
ActorLossGraph ddpg_actor_loss(Tape& tape, const ContinuousNets& nets, const Batch& batch);

/// TD term plus alpha * mean-over-batch squared l2 distance between
/// grad_g Q(s,a,g) and grad_g [R(s',g) + gamma Q'(s', pi'(s',g), g)],
/// the target gradient tracked through the target policy's goal input.
/// With alpha = 0 the graph is exactly the DDPG one.
CriticLossGraph reengage_dense_loss(Tape& tape, const ContinuousNets& nets, const Batch& batch,
                                    double gamma, double alpha, const DenseRewardFn& reward);

/// Sparse variant: the gradient term is gated on r == c_low (exact compare)
/// and the reward gradient is taken as zero.
CriticLossGraph reengage_sparse_loss(Tape& tape, const ContinuousNets& nets, const Batch& batch,
                                     double gamma, double alpha, double c_low);

// ---------------------------------------------------------------------------
// Multi-goal (gated DeepSets) losses

struct MultiBatch {
  Mat s, a, s_next;   // B x dim
  Mat goals_flat;     // B x n_max*goal_dim
  Mat gates;          // B x n_max, {0,1}
  Mat r_item;         // B x n_max, zero at padded slots
  Eigen::VectorXd r;  // B (sum of active items)
  int n_max = 0;
  int goal_dim = 0;

  Eigen::Index size() const { return s.rows(); }
};

struct MultiNets {
  const nn::NetParams* encoder;
  const nn::NetParams* critic_head;
  const nn::NetParams* actor_head;
  const nn::NetParams* encoder_target;
  const nn::NetParams* critic_head_target;
  const nn::NetParams* actor_head_target;
  double action_bound = 0.5;
  nn::Activation activation = nn::Activation::kRelu;
};

struct MultiLossGraph {
  Value total;
  LossReport report;
  nn::TapeNet encoder, critic_head;
};

/// DDPG TD term plus alpha * MSE between the raw gate gradient of the current
/// critic and 2 R_item + gamma * raw gate gradient of the target. Gates use
/// the squared convention, so padded slots are exact zeros on both sides and
/// active slots carry the factor-2 bookkeeping.
MultiLossGraph multi_reengage_loss(Tape& tape, const MultiNets& nets, const MultiBatch& batch,
                                   double gamma, double alpha);

// ---------------------------------------------------------------------------
// Discrete (DQN) losses

enum class DqnVariant { kGradOnly, kBothSoft, kBothSoftStochastic };

struct DiscreteBatch {
  Mat s, s_next, g;    // B x dim
  std::vector<int> a;  // selected actions
  Eigen::VectorXd r;
};

struct DqnNets {
  const nn::NetParams* q;
  const nn::NetParams* q_target;
  nn::Activation activation = nn::Activation::kRelu;
};

struct DqnLossGraph {
  Value total;
  LossReport report;
  nn::TapeNet q;
};

/// r + gamma * softmax(q/tau) . q, differentiable in anything feeding q;
/// tau = 0 falls back to the hard max.
Value soft_q_target(Tape& tape, Value q_row, double r, double gamma, double tau);

/// Goal-conditioned DQN with the soft-target gradient term. kGradOnly keeps
/// the hard-max Huber TD loss; the other variants substitute the soft target
/// into the TD term as well.
DqnLossGraph dqn_reengage_loss(Tape& tape, const DqnNets& nets, const DiscreteBatch& batch,
                               double gamma, double alpha, double tau, DqnVariant variant);

// ---------------------------------------------------------------------------
// Agents

struct TrainTimings {
  double sample_ms = 0.0;
  double critic_ms = 0.0;
  double actor_ms = 0.0;
};

struct TrainStepResult {
  bool warmup = false;
  LossReport critic;
  double actor_loss = 0.0;
  double critic_grad_norm = 0.0;
  double actor_grad_norm = 0.0;
  TrainTimings timings;
};

struct DdpgConfig {
  int obs_dim = 0;
  int goal_dim = 0;
  int action_dim = 0;
  env::ActionKind action_kind = env::ActionKind::kBox;
  double action_bound = 1.0;
  std::vector<int> hidden = {256, 256};
  double gamma = 0.95;
  double polyak_tau = 0.005;
  double lr = 1e-3;
  double alpha = 0.0;
  CriticLossKind loss = CriticLossKind::kDdpg;
  double c_low = -1.0;
  DenseRewardFn dense_reward;  // required for the dense loss
};

class DdpgAgent {
 public:
  DdpgAgent(DdpgConfig cfg, RngStream& init_rng);

  Eigen::VectorXd select_action(const Eigen::VectorXd& obs, const Eigen::VectorXd& goal,
                                double sigma, RngStream& rng, bool deterministic) const;

  /// One critic update, one actor update; Polyak afterwards.
  TrainStepResult train_on_batch(const Batch& batch);

  const DdpgConfig& config() const { return cfg_; }
  const nn::NetParams& actor() const { return actor_; }
  const nn::NetParams& critic() const { return critic_; }
  const nn::NetParams& actor_target() const { return actor_target_; }
  const nn::NetParams& critic_target() const { return critic_target_; }

 private:
  ContinuousNets nets_ref() const;

  DdpgConfig cfg_;
  nn::NetParams actor_, critic_, actor_target_, critic_target_;
  nn::AdamState opt_actor_, opt_critic_;
};

struct MultiConfig {
  int obs_dim = 0;
  int goal_dim = 2;
  int n_max = 200;
  int action_dim = 1;
  env::ActionKind action_kind = env::ActionKind::kBox;
  double action_bound = 0.5;
  int embed_dim = 20;
  std::vector<int> encoder_hidden = {400, 400};
  std::vector<int> head_hidden = {400};
  double gamma = 0.95;
  double polyak_tau = 0.005;
  double lr = 1e-3;
  double alpha = 0.0;  // 0 disables the gate-gradient term (plain DDPG)
};

class MultiAgent {
 public:
  MultiAgent(MultiConfig cfg, RngStream& init_rng);

  Eigen::VectorXd select_action(const Eigen::VectorXd& obs, const nn::GoalSet& gs, double sigma,
                                RngStream& rng, bool deterministic) const;

  TrainStepResult train_on_batch(const MultiBatch& batch);

  const MultiConfig& config() const { return cfg_; }
  const nn::NetParams& encoder() const { return encoder_; }

 private:
  MultiNets nets_ref() const;

  MultiConfig cfg_;
  nn::NetParams encoder_, critic_head_, actor_head_;
  nn::NetParams encoder_target_, critic_head_target_, actor_head_target_;
  nn::AdamState opt_encoder_, opt_critic_, opt_actor_;
};

struct DqnConfig {
  int obs_dim = 0;
  int goal_dim = 0;
  int n_actions = 0;
  std::vector<int> hidden = {256, 256};
  double gamma = 0.95;
  double polyak_tau = 0.005;
  double lr = 1e-3;
  double alpha = 0.0;
  double tau_soft = 0.5;
  DqnVariant variant = DqnVariant::kGradOnly;
  double epsilon = 0.2;  // epsilon-greedy exploration
};

class DqnAgent {
 public:
  DqnAgent(DqnConfig cfg, RngStream& init_rng);

  int select_action(const Eigen::VectorXd& obs, const Eigen::VectorXd& goal, RngStream& rng,
                    bool deterministic) const;

  TrainStepResult train_on_batch(const DiscreteBatch& batch);

  const DqnConfig& config() const { return cfg_; }
  const nn::NetParams& q_net() const { return q_; }

 private:
  DqnConfig cfg_;
  nn::NetParams q_, q_target_;
  nn::AdamState opt_;
};

}  // namespace reengage::agent
