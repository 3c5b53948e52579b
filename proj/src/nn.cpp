#include "reengage/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace reengage::nn {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }
}  // namespace

Mat& NetParams::at(const std::string& name) {
  for (auto& [n, v] : entries)
    if (n == name) return v;
  fail("NetParams[" + role + "]: no parameter named " + name);
}

const Mat& NetParams::at(const std::string& name) const {
  for (const auto& [n, v] : entries)
    if (n == name) return v;
  fail("NetParams[" + role + "]: no parameter named " + name);
}

bool NetParams::has(const std::string& name) const {
  for (const auto& [n, v] : entries)
    if (n == name) return true;
  return false;
}

int NetParams::layer_count() const {
  int l = 0;
  while (has("W" + std::to_string(l))) ++l;
  return l;
}

void NetParams::check_finite() const {
  for (const auto& [n, v] : entries)
    if (!v.allFinite()) fail("NetParams[" + role + "]: parameter " + n + " is not finite");
}

NetParams init_mlp(const MlpSpec& spec, RngStream& rng, std::string role) {
  if (spec.in <= 0 || spec.out <= 0) fail("init_mlp: layer widths must be positive");
  NetParams p;
  p.role = std::move(role);
  std::vector<int> widths;
  widths.push_back(spec.in);
  for (int h : spec.hidden) widths.push_back(h);
  widths.push_back(spec.out);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Mat w(out, in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    Mat b(out, 1);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-bound, bound);
    p.entries.emplace_back("W" + std::to_string(l), std::move(w));
    p.entries.emplace_back("b" + std::to_string(l), std::move(b));
  }
  return p;
}

NetParams clone_params(const NetParams& src, std::string role) {
  NetParams p = src;
  p.role = std::move(role);
  return p;
}

Value TapeNet::at(const std::string& name) const {
  for (const auto& [n, v] : params)
    if (n == name) return v;
  fail("TapeNet: no parameter named " + name);
}

TapeNet attach(Tape& tape, const NetParams& params, bool requires_grad) {
  TapeNet net;
  net.params.reserve(params.entries.size());
  for (const auto& [n, v] : params.entries)
    net.params.emplace_back(n, tape.input(v, requires_grad));
  return net;
}

Value mlp_forward(Tape& tape, const TapeNet& net, Value input, Activation activation) {
  int layers = 0;
  for (const auto& [n, v] : net.params)
    if (n.size() > 1 && n[0] == 'W') ++layers;
  if (layers == 0) fail("mlp_forward: net has no layers");
  Value h = input;
  for (int l = 0; l < layers; ++l) {
    Value z = tape.affine(h, net.at("W" + std::to_string(l)), net.at("b" + std::to_string(l)));
    if (l + 1 < layers)
      h = activation == Activation::kRelu ? tape.relu(z) : tape.tanh(z);
    else
      h = z;
  }
  return h;
}

Value squash_to_box(Tape& tape, Value pre_activation, double bound) {
  return tape.scalar_mul(tape.tanh(pre_activation), bound);
}

std::vector<std::pair<std::string, Mat>> named_grads(const ad::GradMap& grads,
                                                     const TapeNet& net) {
  std::vector<std::pair<std::string, Mat>> out;
  out.reserve(net.params.size());
  for (const auto& [n, v] : net.params) out.emplace_back(n, grads.at_or_zero(v).mat());
  return out;
}

// ---------------------------------------------------------------------------
// GoalSet

GoalSet GoalSet::make(const Mat& active_goals, int n_max) {
  if (active_goals.rows() > n_max) fail("GoalSet: goal count exceeds n_max");
  GoalSet gs;
  gs.goals = Mat::Zero(n_max, active_goals.cols());
  gs.goals.topRows(active_goals.rows()) = active_goals;
  gs.gates = Eigen::VectorXd::Zero(n_max);
  gs.gates.head(active_goals.rows()).setOnes();
  gs.count = static_cast<int>(active_goals.rows());
  return gs;
}

void GoalSet::validate() const {
  if (count > n_max()) fail("GoalSet: count exceeds n_max");
  if (gates.size() != n_max()) fail("GoalSet: gate vector length does not match n_max");
  for (int i = 0; i < n_max(); ++i) {
    const double expect = i < count ? 1.0 : 0.0;
    if (gates[i] != expect) fail("GoalSet: gate " + std::to_string(i) + " inconsistent with count");
    if (i >= count && !gs_padded_row_is_zero(i))
      fail("GoalSet: padded slot " + std::to_string(i) + " has nonzero goal");
  }
}

bool GoalSet::gs_padded_row_is_zero(int i) const { return goals.row(i).isZero(0.0); }

Value deepset_embed(Tape& tape, const TapeNet& encoder, Value s, Value goals_flat, Value gates,
                    int n_max, int goal_dim, Activation activation) {
  if (gates.cols() != n_max) fail("deepset_embed: gate width does not match n_max");
  if (goals_flat.cols() != static_cast<Eigen::Index>(n_max) * goal_dim)
    fail("deepset_embed: flattened goals width does not match n_max * goal_dim");
  Value acc;
  for (int i = 0; i < n_max; ++i) {
    Value gi = tape.hslice(goals_flat, static_cast<Eigen::Index>(i) * goal_dim, goal_dim);
    Value e = mlp_forward(tape, encoder, tape.hconcat(s, gi), activation);
    Value ci = tape.hslice(gates, i, 1);
    Value term = tape.mul(e, tape.col_broadcast(tape.square(ci), e.cols()));
    acc = i == 0 ? term : tape.add(acc, term);
  }
  return acc;
}

DeepsetEval deepset_q_forward(Tape& tape, const TapeNet& encoder, const TapeNet& head,
                              const Eigen::VectorXd& s, const Eigen::VectorXd& a,
                              const GoalSet& gs, Activation activation) {
  gs.validate();
  const int n_max = gs.n_max();
  const int dg = gs.goal_dim();
  Mat goals_flat(1, static_cast<Eigen::Index>(n_max) * dg);
  for (int i = 0; i < n_max; ++i) goals_flat.block(0, i * dg, 1, dg) = gs.goals.row(i);

  Value sv = tape.input(Mat(s.transpose()), false);
  Value av = tape.input(Mat(a.transpose()), false);
  Value gv = tape.constant(goals_flat);
  Value bv = tape.input(Mat(gs.gates.transpose()), true);

  Value emb = deepset_embed(tape, encoder, sv, gv, bv, n_max, dg, activation);
  Value q = mlp_forward(tape, head, tape.hconcat({{sv, av, emb}}), activation);
  if (q.cols() != 1 || q.rows() != 1) fail("deepset_q_forward: head output must be scalar");
  return DeepsetEval{q, bv};
}

// ---------------------------------------------------------------------------
// Adam / Polyak

AdamState init_adam(const NetParams& params) {
  AdamState st;
  for (const auto& [n, v] : params.entries) {
    AdamState::Moments mo;
    mo.m = Mat::Zero(v.rows(), v.cols());
    mo.v = Mat::Zero(v.rows(), v.cols());
    st.slots.emplace_back(n, std::move(mo));
  }
  return st;
}

void adam_step(NetParams& params, const std::vector<std::pair<std::string, Mat>>& grads,
               AdamState& state, double lr) {
  if (lr <= 0.0) fail("adam_step: lr must be positive");
  if (grads.size() != params.entries.size() || grads.size() != state.slots.size())
    fail("adam_step: parameter/gradient/state arity mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& [gname, g] = grads[i];
    auto& [pname, p] = params.entries[i];
    auto& [sname, mo] = state.slots[i];
    if (gname != pname || sname != pname)
      fail("adam_step: misaligned entries for parameter " + pname);
    if (!g.allFinite())
      fail("adam_step: non-finite gradient for parameter " + params.role + "/" + pname);
    mo.m = state.beta1 * mo.m + (1.0 - state.beta1) * g;
    mo.v = state.beta2 * mo.v + (1.0 - state.beta2) * g.cwiseProduct(g);
    const Mat mhat = mo.m / bc1;
    const Mat vhat = mo.v / bc2;
    p.array() -= lr * mhat.array() / (vhat.array().sqrt() + state.eps);
  }
}

void polyak_update(NetParams& target, const NetParams& live, double tau) {
  if (tau < 0.0 || tau > 1.0) fail("polyak_update: tau must lie in [0, 1]");
  if (target.entries.size() != live.entries.size()) fail("polyak_update: arity mismatch");
  for (std::size_t i = 0; i < target.entries.size(); ++i) {
    auto& [tn, tv] = target.entries[i];
    const auto& [ln, lv] = live.entries[i];
    if (tn != ln || tv.rows() != lv.rows() || tv.cols() != lv.cols())
      fail("polyak_update: shape or name mismatch at " + tn);
    tv = (1.0 - tau) * tv + tau * lv;
  }
}

}  // namespace reengage::nn
