#pragma once

#include <string>
#include <utility>
#include <vector>

#include "reengage/autodiff.hpp"
#include "reengage/rng.hpp"

namespace reengage::nn {

using ad::Mat;
using ad::Tape;
using ad::Value;

enum class Activation { kRelu, kTanh };

/// Named, ordered parameter collection for one network. Weight matrices are
/// (out x in), biases (out x 1); layer l uses names "Wl"/"bl".
struct NetParams {
  std::string role;
  std::vector<std::pair<std::string, Mat>> entries;

  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool has(const std::string& name) const;
  int layer_count() const;

  /// Throws if any value is non-finite.
  void check_finite() const;
};

struct MlpSpec {
  int in = 0;
  std::vector<int> hidden;
  int out = 0;
  Activation activation = Activation::kRelu;
};

/// Uniform fan-in initialization: each weight and bias ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
NetParams init_mlp(const MlpSpec& spec, RngStream& rng, std::string role);

/// Bitwise copy with a new role tag (target-network construction).
NetParams clone_params(const NetParams& src, std::string role);

/// Parameters attached to a tape for one forward/backward pass.
struct TapeNet {
  std::vector<std::pair<std::string, Value>> params;
  Value at(const std::string& name) const;
};

TapeNet attach(Tape& tape, const NetParams& params, bool requires_grad);

/// Forward pass through the named layers; hidden layers use `activation`,
/// the final layer is linear. Input is (B x in), output (B x out).
Value mlp_forward(Tape& tape, const TapeNet& net, Value input,
                  Activation activation = Activation::kRelu);

/// tanh squashing scaled to [-bound, bound].
Value squash_to_box(Tape& tape, Value pre_activation, double bound);

/// Gradients realized as named matrices aligned with `net`'s parameters.
std::vector<std::pair<std::string, Mat>> named_grads(const ad::GradMap& grads,
                                                     const TapeNet& net);

// ---------------------------------------------------------------------------
// Goal sets (padded, gated)

/// Up to n_max goal rows with {0,1} gate values. Exactly the first `count`
/// slots are active (gate 1); padded slots hold gate 0 and a zero goal row.
struct GoalSet {
  Mat goals;              // n_max x goal_dim
  Eigen::VectorXd gates;  // n_max
  int count = 0;

  int n_max() const { return static_cast<int>(goals.rows()); }
  int goal_dim() const { return static_cast<int>(goals.cols()); }

  static GoalSet make(const Mat& active_goals, int n_max);
  void validate() const;

 private:
  bool gs_padded_row_is_zero(int i) const;
};

/// Gated DeepSets embedding: sum_i gate_i^2 * encoder(s, g_i), evaluated for a
/// batch. `goals_flat` is (B x n_max*goal_dim) and `gates` (B x n_max); gates
/// squared inside so padded slots contribute nothing and their gate gradient
/// vanishes identically.
Value deepset_embed(Tape& tape, const TapeNet& encoder, Value s, Value goals_flat, Value gates,
                    int n_max, int goal_dim, Activation activation = Activation::kRelu);

struct DeepsetEval {
  Value q;      // scalar
  Value gates;  // differentiable gate input node (1 x n_max)
};

/// Single-sample gated DeepSets critic: Q = head(s, a, sum_i b_i^2 enc(s, g_i)).
/// The gate vector is attached as a differentiable input and returned so the
/// caller can take d Q / d b.
DeepsetEval deepset_q_forward(Tape& tape, const TapeNet& encoder, const TapeNet& head,
                              const Eigen::VectorXd& s, const Eigen::VectorXd& a,
                              const GoalSet& gs, Activation activation = Activation::kRelu);

// ---------------------------------------------------------------------------
// Optimization

struct AdamState {
  struct Moments {
    Mat m, v;
  };
  std::vector<std::pair<std::string, Moments>> slots;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState init_adam(const NetParams& params);

/// Standard bias-corrected Adam update, in place. Throws (naming the
/// parameter) on non-finite gradients.
void adam_step(NetParams& params, const std::vector<std::pair<std::string, Mat>>& grads,
               AdamState& state, double lr);

/// target <- (1 - tau) * target + tau * live.
void polyak_update(NetParams& target, const NetParams& live, double tau);

}  // namespace reengage::nn
