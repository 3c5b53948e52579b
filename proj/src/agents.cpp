#include "reengage/agents.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace reengage::agent {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

Value policy_net(Tape& tape, const nn::TapeNet& actor, Value s, Value g, double bound,
                 nn::Activation act) {
  return nn::squash_to_box(tape, nn::mlp_forward(tape, actor, tape.hconcat(s, g), act), bound);
}

Value critic_net(Tape& tape, const nn::TapeNet& critic, Value s, Value a, Value g,
                 nn::Activation act) {
  return nn::mlp_forward(tape, critic, tape.hconcat({{s, a, g}}), act);
}

double grad_norm(const std::vector<std::pair<std::string, Mat>>& grads) {
  double acc = 0.0;
  for (const auto& [n, g] : grads) acc += g.squaredNorm();
  return std::sqrt(acc);
}

// Shared TD construction: every continuous critic loss builds its Bellman
// term through this one path so that alpha = 0 runs are bit-identical to the
// plain DDPG baseline.
struct TdBuild {
  Value td;        // mean squared Bellman error
  Value q;         // current Q, B x 1
  Value q_target;  // pre-detach target branch Q', B x 1
  Value g;         // goal node (input when goal_needs_grad)
  nn::TapeNet critic;
};

TdBuild build_td(Tape& tape, const ContinuousNets& nets, const Batch& batch, double gamma,
                 bool goal_needs_grad) {
  TdBuild b;
  Value s = tape.constant(batch.s);
  Value a = tape.constant(batch.a);
  Value s2 = tape.constant(batch.s_next);
  b.g = tape.input(batch.g, goal_needs_grad);
  Value r = tape.constant(Mat(batch.r));

  nn::TapeNet actor_t = nn::attach(tape, *nets.actor_target, false);
  nn::TapeNet critic_t = nn::attach(tape, *nets.critic_target, false);
  Value a2 = policy_net(tape, actor_t, s2, b.g, nets.action_bound, nets.activation);
  b.q_target = critic_net(tape, critic_t, s2, a2, b.g, nets.activation);

  Value y = tape.detach(tape.add(r, tape.scalar_mul(b.q_target, gamma)));

  b.critic = nn::attach(tape, *nets.critic, true);
  b.q = critic_net(tape, b.critic, s, a, b.g, nets.activation);
  b.td = tape.mean(tape.square(tape.sub(b.q, y)));
  return b;
}

}  // namespace

Batch Batch::from_transitions(std::span<const replay::Transition> ts) {
  if (ts.empty()) fail("Batch: empty transition list");
  Batch b;
  const auto n = static_cast<Eigen::Index>(ts.size());
  b.s = Mat(n, ts[0].s.size());
  b.a = Mat(n, ts[0].a.size());
  b.s_next = Mat(n, ts[0].s_next.size());
  b.g = Mat(n, ts[0].goal.size());
  b.r = Eigen::VectorXd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    b.s.row(i) = ts[i].s.transpose();
    b.a.row(i) = ts[i].a.transpose();
    b.s_next.row(i) = ts[i].s_next.transpose();
    b.g.row(i) = ts[i].goal.transpose();
    b.r[i] = ts[i].reward;
  }
  return b;
}

DenseRewardFn dot_product_reward() {
  return [](Tape& tape, const Mat& s_next, Value g) {
    return tape.row_sum(tape.mul(tape.constant(s_next), g));
  };
}

CriticLossGraph ddpg_critic_loss(Tape& tape, const ContinuousNets& nets, const Batch& batch,
                                 double gamma) {
  TdBuild b = build_td(tape, nets, batch, gamma, /*goal_needs_grad=*/false);
  CriticLossGraph out;
  out.total = b.td;
  out.report = LossReport{b.td.scalar(), b.td.scalar(), 0.0, 0.0};
  out.critic = std::move(b.critic);
  return out;
}

ActorLossGraph ddpg_actor_loss(Tape& tape, const ContinuousNets& nets, const Batch& batch) {
  Value s = tape.constant(batch.s);
  Value g = tape.constant(batch.g);
  nn::TapeNet actor = nn::attach(tape, *nets.actor, true);
  nn::TapeNet critic_frozen = nn::attach(tape, *nets.critic, false);
  Value a = policy_net(tape, actor, s, g, nets.action_bound, nets.activation);
  Value q = critic_net(tape, critic_frozen, s, a, g, nets.activation);
  ActorLossGraph out;
  out.loss = tape.neg(tape.mean(q));
  out.actor = std::move(actor);
  return out;
}

CriticLossGraph reengage_dense_loss(Tape& tape, const ContinuousNets& nets, const Batch& batch,
                                    double gamma, double alpha, const DenseRewardFn& reward) {
  if (alpha == 0.0) return ddpg_critic_loss(tape, nets, batch, gamma);
  if (!reward) fail("reengage_dense_loss: dense loss requires a differentiable reward evaluator");

  TdBuild b = build_td(tape, nets, batch, gamma, /*goal_needs_grad=*/true);

  Value r_of_g = reward(tape, batch.s_next, b.g);
  if (r_of_g.rows() != batch.size() || r_of_g.cols() != 1)
    fail("reengage_dense_loss: reward evaluator must return a B x 1 column");
  Value target = tape.add(r_of_g, tape.scalar_mul(b.q_target, gamma));
  Value target_grad = tape.grad(target.tape()->sum(target), {b.g}, false).at_or_zero(b.g);

  Value q_grad = tape.grad(tape.sum(b.q), {b.g}, true).at_or_zero(b.g);
  Value grad_term = tape.mean(tape.row_sum(tape.square(tape.sub(q_grad, target_grad))));
  Value total = tape.add(b.td, tape.scalar_mul(grad_term, alpha));

  CriticLossGraph out;
  out.total = total;
  out.report = LossReport{total.scalar(), b.td.scalar(), grad_term.scalar(), alpha};
  out.critic = std::move(b.critic);
  return out;
}

CriticLossGraph reengage_sparse_loss(Tape& tape, const ContinuousNets& nets, const Batch& batch,
                                     double gamma, double alpha, double c_low) {
  if (alpha == 0.0) return ddpg_critic_loss(tape, nets, batch, gamma);

  TdBuild b = build_td(tape, nets, batch, gamma, /*goal_needs_grad=*/true);

  // gradient term only on tuples with r == c_low (rewards are exact constants)
  Mat mask(batch.size(), 1);
  for (Eigen::Index i = 0; i < batch.size(); ++i) mask(i, 0) = batch.r[i] == c_low ? 1.0 : 0.0;
  Value w = tape.constant(mask);

  Value target_grad =
      tape.scalar_mul(tape.grad(tape.sum(b.q_target), {b.g}, false).at_or_zero(b.g), gamma);
  Value q_grad = tape.grad(tape.sum(b.q), {b.g}, true).at_or_zero(b.g);
  Value per_sample = tape.row_sum(tape.square(tape.sub(q_grad, target_grad)));
  Value grad_term = tape.mean(tape.mul(per_sample, w));
  Value total = tape.add(b.td, tape.scalar_mul(grad_term, alpha));

  CriticLossGraph out;
  out.total = total;
  out.report = LossReport{total.scalar(), b.td.scalar(), grad_term.scalar(), alpha};
  out.critic = std::move(b.critic);
  return out;
}

// ---------------------------------------------------------------------------
// Multi-goal loss

MultiLossGraph multi_reengage_loss(Tape& tape, const MultiNets& nets, const MultiBatch& batch,
                                   double gamma, double alpha) {
  if (batch.gates.cols() != batch.n_max || batch.r_item.cols() != batch.n_max ||
      batch.goals_flat.cols() != static_cast<Eigen::Index>(batch.n_max) * batch.goal_dim)
    fail("multi_reengage_loss: goal-set widths inconsistent with n_max");

  Value s = tape.constant(batch.s);
  Value a = tape.constant(batch.a);
  Value s2 = tape.constant(batch.s_next);
  Value goals = tape.constant(batch.goals_flat);
  Value gates = tape.input(batch.gates, alpha != 0.0);
  Value r = tape.constant(Mat(batch.r));

  nn::TapeNet enc_t = nn::attach(tape, *nets.encoder_target, false);
  nn::TapeNet critic_head_t = nn::attach(tape, *nets.critic_head_target, false);
  nn::TapeNet actor_head_t = nn::attach(tape, *nets.actor_head_target, false);

  Value emb2 = nn::deepset_embed(tape, enc_t, s2, goals, gates, batch.n_max, batch.goal_dim,
                                 nets.activation);
  Value a2 = nn::squash_to_box(
      tape, nn::mlp_forward(tape, actor_head_t, tape.hconcat(s2, emb2), nets.activation),
      nets.action_bound);
  Value q2 = nn::mlp_forward(tape, critic_head_t, tape.hconcat({{s2, a2, emb2}}), nets.activation);

  Value y = tape.detach(tape.add(r, tape.scalar_mul(q2, gamma)));

  nn::TapeNet enc = nn::attach(tape, *nets.encoder, true);
  nn::TapeNet critic_head = nn::attach(tape, *nets.critic_head, true);
  Value emb =
      nn::deepset_embed(tape, enc, s, goals, gates, batch.n_max, batch.goal_dim, nets.activation);
  Value q = nn::mlp_forward(tape, critic_head, tape.hconcat({{s, a, emb}}), nets.activation);

  Value td = tape.mean(tape.square(tape.sub(q, y)));

  MultiLossGraph out;
  out.encoder = std::move(enc);
  out.critic_head = std::move(critic_head);

  if (alpha == 0.0) {
    out.total = td;
    out.report = LossReport{td.scalar(), td.scalar(), 0.0, 0.0};
    return out;
  }

  // raw gate gradients carry the factor 2 of the squared-gate convention;
  // the ground-truth reward gradient is 2 R_item at active slots, 0 padded
  Value g_cur = tape.grad(tape.sum(q), {gates}, true).at_or_zero(gates);
  Value g_tar = tape.grad(tape.sum(q2), {gates}, false).at_or_zero(gates);
  Value target = tape.add(tape.constant(2.0 * batch.r_item), tape.scalar_mul(g_tar, gamma));
  Value grad_term = tape.mean(tape.row_sum(tape.square(tape.sub(g_cur, target))));
  Value total = tape.add(td, tape.scalar_mul(grad_term, alpha));

  out.total = total;
  out.report = LossReport{total.scalar(), td.scalar(), grad_term.scalar(), alpha};
  return out;
}

// ---------------------------------------------------------------------------
// Discrete losses

namespace {

Value soft_value_rows(Tape& tape, Value q_all, double tau) {
  if (tau == 0.0) return tape.row_max(q_all);
  Value weights = tape.softmax_rows(tape.scalar_mul(q_all, 1.0 / tau));
  return tape.row_sum(tape.mul(weights, q_all));
}

}  // namespace

Value soft_q_target(Tape& tape, Value q_row, double r, double gamma, double tau) {
  if (tau < 0.0) fail("soft_q_target: tau must be non-negative");
  if (q_row.rows() != 1) fail("soft_q_target: expected a single row of action values");
  Value v = soft_value_rows(tape, q_row, tau);
  return tape.add(tape.constant(r), tape.scalar_mul(v, gamma));
}

DqnLossGraph dqn_reengage_loss(Tape& tape, const DqnNets& nets, const DiscreteBatch& batch,
                               double gamma, double alpha, double tau, DqnVariant variant) {
  if (tau < 0.0) fail("dqn_reengage_loss: tau must be non-negative");
  Value s = tape.constant(batch.s);
  Value s2 = tape.constant(batch.s_next);
  Value g = tape.input(batch.g, alpha != 0.0);
  Value r = tape.constant(Mat(batch.r));

  nn::TapeNet q_t = nn::attach(tape, *nets.q_target, false);
  Value q2_all = nn::mlp_forward(tape, q_t, tape.hconcat(s2, g), nets.activation);

  nn::TapeNet qn = nn::attach(tape, *nets.q, true);
  Value q_all = nn::mlp_forward(tape, qn, tape.hconcat(s, g), nets.activation);
  Value q_sel = tape.select_cols(q_all, batch.a);

  Value td_target;
  if (variant == DqnVariant::kGradOnly) {
    td_target = tape.add(r, tape.scalar_mul(tape.row_max(q2_all), gamma));
  } else {
    td_target = tape.add(r, tape.scalar_mul(soft_value_rows(tape, q2_all, tau), gamma));
  }
  Value td = tape.mean(tape.huber(tape.sub(q_sel, tape.detach(td_target)), 1.0));

  DqnLossGraph out;
  out.q = std::move(qn);
  if (alpha == 0.0) {
    out.total = td;
    out.report = LossReport{td.scalar(), td.scalar(), 0.0, 0.0};
    return out;
  }

  // soft target for the gradient branch; the stored reward is constant on the
  // tape, so its goal gradient is the assumed zero
  Value soft_target = tape.add(r, tape.scalar_mul(soft_value_rows(tape, q2_all, tau), gamma));
  Value target_grad =
      tape.scalar_mul(tape.grad(tape.sum(soft_target), {g}, false).at_or_zero(g), gamma);
  Value q_grad = tape.grad(tape.sum(q_sel), {g}, true).at_or_zero(g);
  Value grad_term = tape.mean(tape.row_sum(tape.square(tape.sub(q_grad, target_grad))));
  Value total = tape.add(td, tape.scalar_mul(grad_term, alpha));

  out.total = total;
  out.report = LossReport{total.scalar(), td.scalar(), grad_term.scalar(), alpha};
  return out;
}

// ---------------------------------------------------------------------------
// DdpgAgent

DdpgAgent::DdpgAgent(DdpgConfig cfg, RngStream& init_rng) : cfg_(std::move(cfg)) {
  if (cfg_.obs_dim <= 0 || cfg_.goal_dim <= 0 || cfg_.action_dim <= 0)
    fail("DdpgAgent: dimensions must be positive");
  if (cfg_.gamma <= 0.0 || cfg_.gamma >= 1.0) fail("DdpgAgent: gamma must lie in (0,1)");
  nn::MlpSpec actor_spec{cfg_.obs_dim + cfg_.goal_dim, cfg_.hidden, cfg_.action_dim};
  nn::MlpSpec critic_spec{cfg_.obs_dim + cfg_.action_dim + cfg_.goal_dim, cfg_.hidden, 1};
  actor_ = nn::init_mlp(actor_spec, init_rng, "actor");
  critic_ = nn::init_mlp(critic_spec, init_rng, "critic");
  actor_target_ = nn::clone_params(actor_, "actor_target");
  critic_target_ = nn::clone_params(critic_, "critic_target");
  opt_actor_ = nn::init_adam(actor_);
  opt_critic_ = nn::init_adam(critic_);
}

ContinuousNets DdpgAgent::nets_ref() const {
  return ContinuousNets{&actor_, &critic_, &actor_target_, &critic_target_, cfg_.action_bound,
                        nn::Activation::kRelu};
}

Eigen::VectorXd DdpgAgent::select_action(const Eigen::VectorXd& obs, const Eigen::VectorXd& goal,
                                         double sigma, RngStream& rng, bool deterministic) const {
  Tape tape;
  nn::TapeNet actor = nn::attach(tape, actor_, false);
  Value s = tape.constant(Mat(obs.transpose()));
  Value g = tape.constant(Mat(goal.transpose()));
  Value a = policy_net(tape, actor, s, g, cfg_.action_bound, nn::Activation::kRelu);
  Eigen::VectorXd out = a.mat().row(0).transpose();
  if (!deterministic && sigma > 0.0)
    out += rng.normal_vector(cfg_.action_dim, sigma);
  if (cfg_.action_kind == env::ActionKind::kBall2)
    return env::project_ball(out, cfg_.action_bound);
  return out.cwiseMax(-cfg_.action_bound).cwiseMin(cfg_.action_bound);
}

TrainStepResult DdpgAgent::train_on_batch(const Batch& batch) {
  TrainStepResult res;
  const ContinuousNets nets = nets_ref();

  auto t0 = std::chrono::steady_clock::now();
  {
    Tape tape;
    CriticLossGraph loss = [&] {
      switch (cfg_.loss) {
        case CriticLossKind::kDdpg:
          return ddpg_critic_loss(tape, nets, batch, cfg_.gamma);
        case CriticLossKind::kReengageDense:
          return reengage_dense_loss(tape, nets, batch, cfg_.gamma, cfg_.alpha, cfg_.dense_reward);
        case CriticLossKind::kReengageSparse:
          return reengage_sparse_loss(tape, nets, batch, cfg_.gamma, cfg_.alpha, cfg_.c_low);
      }
      fail("DdpgAgent: unknown loss kind");
    }();
    auto grads = nn::named_grads(tape.grad(loss.total, [&] {
      std::vector<Value> wrt;
      for (const auto& [n, v] : loss.critic.params) wrt.push_back(v);
      return wrt;
    }(), false), loss.critic);
    res.critic = loss.report;
    res.critic_grad_norm = grad_norm(grads);
    nn::adam_step(critic_, grads, opt_critic_, cfg_.lr);
  }
  res.timings.critic_ms = ms_since(t0);

  t0 = std::chrono::steady_clock::now();
  {
    Tape tape;
    ActorLossGraph loss = ddpg_actor_loss(tape, nets, batch);
    std::vector<Value> wrt;
    for (const auto& [n, v] : loss.actor.params) wrt.push_back(v);
    auto grads = nn::named_grads(tape.grad(loss.loss, wrt, false), loss.actor);
    res.actor_loss = loss.loss.scalar();
    res.actor_grad_norm = grad_norm(grads);
    nn::adam_step(actor_, grads, opt_actor_, cfg_.lr);
  }
  res.timings.actor_ms = ms_since(t0);

  nn::polyak_update(critic_target_, critic_, cfg_.polyak_tau);
  nn::polyak_update(actor_target_, actor_, cfg_.polyak_tau);
  return res;
}

// ---------------------------------------------------------------------------
// MultiAgent

MultiAgent::MultiAgent(MultiConfig cfg, RngStream& init_rng) : cfg_(std::move(cfg)) {
  nn::MlpSpec enc_spec{cfg_.obs_dim + cfg_.goal_dim, cfg_.encoder_hidden, cfg_.embed_dim};
  nn::MlpSpec critic_spec{cfg_.obs_dim + cfg_.action_dim + cfg_.embed_dim, cfg_.head_hidden, 1};
  nn::MlpSpec actor_spec{cfg_.obs_dim + cfg_.embed_dim, cfg_.head_hidden, cfg_.action_dim};
  encoder_ = nn::init_mlp(enc_spec, init_rng, "encoder");
  critic_head_ = nn::init_mlp(critic_spec, init_rng, "critic");
  actor_head_ = nn::init_mlp(actor_spec, init_rng, "actor");
  encoder_target_ = nn::clone_params(encoder_, "encoder_target");
  critic_head_target_ = nn::clone_params(critic_head_, "critic_target");
  actor_head_target_ = nn::clone_params(actor_head_, "actor_target");
  opt_encoder_ = nn::init_adam(encoder_);
  opt_critic_ = nn::init_adam(critic_head_);
  opt_actor_ = nn::init_adam(actor_head_);
}

MultiNets MultiAgent::nets_ref() const {
  return MultiNets{&encoder_,        &critic_head_,        &actor_head_,
                   &encoder_target_, &critic_head_target_, &actor_head_target_,
                   cfg_.action_bound};
}

Eigen::VectorXd MultiAgent::select_action(const Eigen::VectorXd& obs, const nn::GoalSet& gs,
                                          double sigma, RngStream& rng,
                                          bool deterministic) const {
  if (gs.count > cfg_.n_max) fail("MultiAgent: goal count exceeds n_max");
  Tape tape;
  nn::TapeNet enc = nn::attach(tape, encoder_, false);
  nn::TapeNet head = nn::attach(tape, actor_head_, false);
  Mat goals_flat(1, static_cast<Eigen::Index>(gs.n_max()) * gs.goal_dim());
  for (int i = 0; i < gs.n_max(); ++i)
    goals_flat.block(0, i * gs.goal_dim(), 1, gs.goal_dim()) = gs.goals.row(i);
  Value s = tape.constant(Mat(obs.transpose()));
  Value goals = tape.constant(goals_flat);
  Value gates = tape.constant(Mat(gs.gates.transpose()));
  Value emb = nn::deepset_embed(tape, enc, s, goals, gates, gs.n_max(), gs.goal_dim());
  Value a = nn::squash_to_box(tape, nn::mlp_forward(tape, head, tape.hconcat(s, emb)),
                              cfg_.action_bound);
  Eigen::VectorXd out = a.mat().row(0).transpose();
  if (!deterministic && sigma > 0.0) out += rng.normal_vector(cfg_.action_dim, sigma);
  if (cfg_.action_kind == env::ActionKind::kBall2)
    return env::project_ball(out, cfg_.action_bound);
  return out.cwiseMax(-cfg_.action_bound).cwiseMin(cfg_.action_bound);
}

TrainStepResult MultiAgent::train_on_batch(const MultiBatch& batch) {
  TrainStepResult res;
  const MultiNets nets = nets_ref();

  auto t0 = std::chrono::steady_clock::now();
  {
    Tape tape;
    MultiLossGraph loss = multi_reengage_loss(tape, nets, batch, cfg_.gamma, cfg_.alpha);
    std::vector<Value> wrt;
    for (const auto& [n, v] : loss.encoder.params) wrt.push_back(v);
    for (const auto& [n, v] : loss.critic_head.params) wrt.push_back(v);
    auto gmap = tape.grad(loss.total, wrt, false);
    auto enc_grads = nn::named_grads(gmap, loss.encoder);
    auto critic_grads = nn::named_grads(gmap, loss.critic_head);
    res.critic = loss.report;
    res.critic_grad_norm = std::sqrt(std::pow(grad_norm(enc_grads), 2) +
                                     std::pow(grad_norm(critic_grads), 2));
    nn::adam_step(encoder_, enc_grads, opt_encoder_, cfg_.lr);
    nn::adam_step(critic_head_, critic_grads, opt_critic_, cfg_.lr);
  }
  res.timings.critic_ms = ms_since(t0);

  t0 = std::chrono::steady_clock::now();
  {
    // actor update: encoder frozen (it trains only with the critic)
    Tape tape;
    nn::TapeNet enc = nn::attach(tape, encoder_, false);
    nn::TapeNet actor_head = nn::attach(tape, actor_head_, true);
    nn::TapeNet critic_head = nn::attach(tape, critic_head_, false);
    Value s = tape.constant(batch.s);
    Value goals = tape.constant(batch.goals_flat);
    Value gates = tape.constant(batch.gates);
    Value emb = nn::deepset_embed(tape, enc, s, goals, gates, batch.n_max, batch.goal_dim);
    Value a = nn::squash_to_box(tape, nn::mlp_forward(tape, actor_head, tape.hconcat(s, emb)),
                                cfg_.action_bound);
    Value q = nn::mlp_forward(tape, critic_head, tape.hconcat({{s, a, emb}}));
    Value loss = tape.neg(tape.mean(q));
    std::vector<Value> wrt;
    for (const auto& [n, v] : actor_head.params) wrt.push_back(v);
    auto grads = nn::named_grads(tape.grad(loss, wrt, false), actor_head);
    res.actor_loss = loss.scalar();
    res.actor_grad_norm = grad_norm(grads);
    nn::adam_step(actor_head_, grads, opt_actor_, cfg_.lr);
  }
  res.timings.actor_ms = ms_since(t0);

  nn::polyak_update(encoder_target_, encoder_, cfg_.polyak_tau);
  nn::polyak_update(critic_head_target_, critic_head_, cfg_.polyak_tau);
  nn::polyak_update(actor_head_target_, actor_head_, cfg_.polyak_tau);
  return res;
}

// ---------------------------------------------------------------------------
// DqnAgent

DqnAgent::DqnAgent(DqnConfig cfg, RngStream& init_rng) : cfg_(std::move(cfg)) {
  if (cfg_.n_actions <= 0) fail("DqnAgent: n_actions must be positive");
  nn::MlpSpec spec{cfg_.obs_dim + cfg_.goal_dim, cfg_.hidden, cfg_.n_actions};
  q_ = nn::init_mlp(spec, init_rng, "critic");
  q_target_ = nn::clone_params(q_, "critic_target");
  opt_ = nn::init_adam(q_);
}

int DqnAgent::select_action(const Eigen::VectorXd& obs, const Eigen::VectorXd& goal,
                            RngStream& rng, bool deterministic) const {
  Tape tape;
  nn::TapeNet qn = nn::attach(tape, q_, false);
  Value s = tape.constant(Mat(obs.transpose()));
  Value g = tape.constant(Mat(goal.transpose()));
  Value q_all = nn::mlp_forward(tape, qn, tape.hconcat(s, g));

  if (!deterministic) {
    if (cfg_.variant == DqnVariant::kBothSoftStochastic && cfg_.tau_soft > 0.0) {
      Value probs = tape.softmax_rows(tape.scalar_mul(q_all, 1.0 / cfg_.tau_soft));
      double u = rng.uniform();
      double acc = 0.0;
      for (int i = 0; i < cfg_.n_actions; ++i) {
        acc += probs.mat()(0, i);
        if (u <= acc) return i;
      }
      return cfg_.n_actions - 1;
    }
    if (rng.uniform() < cfg_.epsilon) return rng.uniform_int(cfg_.n_actions);
  }

  Eigen::Index best;
  q_all.mat().row(0).maxCoeff(&best);
  return static_cast<int>(best);
}

TrainStepResult DqnAgent::train_on_batch(const DiscreteBatch& batch) {
  TrainStepResult res;
  auto t0 = std::chrono::steady_clock::now();
  {
    Tape tape;
    DqnNets nets{&q_, &q_target_};
    DqnLossGraph loss =
        dqn_reengage_loss(tape, nets, batch, cfg_.gamma, cfg_.alpha, cfg_.tau_soft, cfg_.variant);
    std::vector<Value> wrt;
    for (const auto& [n, v] : loss.q.params) wrt.push_back(v);
    auto grads = nn::named_grads(tape.grad(loss.total, wrt, false), loss.q);
    res.critic = loss.report;
    res.critic_grad_norm = grad_norm(grads);
    nn::adam_step(q_, grads, opt_, cfg_.lr);
  }
  res.timings.critic_ms = ms_since(t0);
  nn::polyak_update(q_target_, q_, cfg_.polyak_tau);
  return res;
}

}  // namespace reengage::agent
