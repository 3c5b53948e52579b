#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <vector>

#include "reengage/rng.hpp"

namespace reengage::replay {

using Eigen::VectorXd;

/// One stored step. `reward` always equals the environment reward function
/// applied to (achieved_next, goal), so relabeling can recompute it.
struct Transition {
  VectorXd s, a, s_next, goal, achieved_next;
  double reward = 0.0;
  int episode_id = 0;
  int step_in_episode = 0;
};

using RewardFn = std::function<double(const VectorXd& achieved_next, const VectorXd& goal)>;

/// Uniformly relabels each transition's goal with the achieved goal of a
/// future step (t' >= t, so the step's own outcome is admissible) and
/// recomputes the reward. Returns the originals followed by up to k relabeled
/// copies per original.
std::vector<Transition> her_relabel(const std::vector<Transition>& episode, int k,
                                    const RewardFn& reward_fn, RngStream& rng);

/// Ring storage over whole episodes: when capacity is exceeded the oldest
/// episodes are evicted in full, never split.
class Buffer {
 public:
  explicit Buffer(std::size_t capacity);

  /// Transitions must share an episode id and carry contiguous step indices.
  void push_episode(std::vector<Transition> episode);

  std::size_t size() const { return flat_.size(); }
  std::size_t episode_count() const { return episodes_.size(); }
  std::size_t capacity() const { return capacity_; }

  const Transition& at(std::size_t flat_index) const;

  /// Uniform with replacement over stored transitions.
  std::vector<Transition> sample(int batch_size, RngStream& rng) const;

  /// Online HER: uniform draw, then with probability k/(k+1) the goal is
  /// replaced by the achieved goal of a uniformly chosen future step of the
  /// same episode and the reward recomputed.
  std::vector<Transition> sample_her(int batch_size, int k, const RewardFn& reward_fn,
                                     RngStream& rng) const;

 private:
  struct Slot {
    const std::vector<Transition>* episode;
    int step;
  };

  std::size_t capacity_;
  std::deque<std::vector<Transition>> episodes_;
  std::deque<Slot> flat_;
};

}  // namespace reengage::replay
