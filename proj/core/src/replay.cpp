#include "retflow/replay.hpp"

#include <numeric>
#include <stdexcept>

namespace retflow {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0)
    throw std::invalid_argument("ReplayBuffer: zero capacity");
}

void ReplayBuffer::push(const SessionTrajectory& trajectory) {
  if (trajectory.steps.empty())
    throw std::invalid_argument("ReplayBuffer::push: empty trajectory");
  const Transition& last = trajectory.steps.back();
  if (!last.is_terminal || last.retention <= 0.0 || last.retention > 1.0)
    throw std::invalid_argument(
        "ReplayBuffer::push: trajectory lacks a terminal retention");
  for (std::size_t i = 0; i + 1 < trajectory.steps.size(); ++i)
    if (trajectory.steps[i].is_terminal)
      throw std::invalid_argument(
          "ReplayBuffer::push: terminal transition before the end");

  for (const Transition& t : trajectory.steps) {
    storage_.push_back(t);
    ++insert_count_;
  }
  while (storage_.size() > capacity_) storage_.pop_front();
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t batch_size,
                                                    RngStream& rng) const {
  if (batch_size == 0)
    throw std::invalid_argument("ReplayBuffer::sample: zero batch");
  if (storage_.size() < batch_size) return {};
  std::vector<std::size_t> idx(storage_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<const Transition*> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::size_t j = i + rng.uniform_index(idx.size() - i);
    std::swap(idx[i], idx[j]);
    out.push_back(&storage_[idx[i]]);
  }
  return out;
}

bool ReplayBuffer::ready(std::size_t batch_size, std::size_t min_fill) const {
  std::size_t need = batch_size > min_fill ? batch_size : min_fill;
  return storage_.size() >= need;
}

}  // namespace retflow
