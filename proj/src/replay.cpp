#include "reengage/replay.hpp"

#include <stdexcept>

namespace reengage::replay {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }
}  // namespace

std::vector<Transition> her_relabel(const std::vector<Transition>& episode, int k,
                                    const RewardFn& reward_fn, RngStream& rng) {
  if (k < 0) fail("her_relabel: k must be non-negative");
  std::vector<Transition> out;
  out.reserve(episode.size() * (1 + k));
  const int n = static_cast<int>(episode.size());
  for (int t = 0; t < n; ++t) {
    out.push_back(episode[t]);
    for (int c = 0; c < k; ++c) {
      Transition copy = episode[t];
      const int future = t + rng.uniform_int(n - t);  // t' in [t, n)
      copy.goal = episode[future].achieved_next;
      copy.reward = reward_fn(copy.achieved_next, copy.goal);
      out.push_back(std::move(copy));
    }
  }
  return out;
}

Buffer::Buffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) fail("Buffer: capacity must be positive");
}

void Buffer::push_episode(std::vector<Transition> episode) {
  if (episode.empty()) fail("Buffer::push_episode: empty episode");
  for (std::size_t i = 0; i < episode.size(); ++i) {
    if (episode[i].episode_id != episode[0].episode_id)
      fail("Buffer::push_episode: mixed episode ids");
    if (episode[i].step_in_episode != episode[0].step_in_episode + static_cast<int>(i))
      fail("Buffer::push_episode: non-contiguous step indices");
  }

  episodes_.push_back(std::move(episode));
  const std::vector<Transition>& stored = episodes_.back();
  for (std::size_t i = 0; i < stored.size(); ++i)
    flat_.push_back(Slot{&stored, static_cast<int>(i)});

  // evict oldest episodes whole; the newest episode is always retained
  while (flat_.size() > capacity_ && episodes_.size() > 1) {
    const std::size_t len = episodes_.front().size();
    for (std::size_t i = 0; i < len; ++i) flat_.pop_front();
    episodes_.pop_front();
  }
}

const Transition& Buffer::at(std::size_t flat_index) const {
  if (flat_index >= flat_.size()) fail("Buffer::at: index out of range");
  const Slot& s = flat_[flat_index];
  return (*s.episode)[s.step];
}

std::vector<Transition> Buffer::sample(int batch_size, RngStream& rng) const {
  if (flat_.empty()) fail("Buffer::sample: buffer is empty");
  std::vector<Transition> out;
  out.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i)
    out.push_back(at(rng.uniform_int(static_cast<int>(flat_.size()))));
  return out;
}

std::vector<Transition> Buffer::sample_her(int batch_size, int k, const RewardFn& reward_fn,
                                           RngStream& rng) const {
  if (flat_.empty()) fail("Buffer::sample_her: buffer is empty");
  if (k < 0) fail("Buffer::sample_her: k must be non-negative");
  const double relabel_prob = k == 0 ? 0.0 : static_cast<double>(k) / (k + 1);
  std::vector<Transition> out;
  out.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    const Slot& slot = flat_[rng.uniform_int(static_cast<int>(flat_.size()))];
    Transition t = (*slot.episode)[slot.step];
    if (k > 0 && rng.uniform() < relabel_prob) {
      const int n = static_cast<int>(slot.episode->size());
      const int future = slot.step + rng.uniform_int(n - slot.step);
      t.goal = (*slot.episode)[future].achieved_next;
      t.reward = reward_fn(t.achieved_next, t.goal);
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace reengage::replay
