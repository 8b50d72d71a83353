#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <vector>

#include "retflow/policy.hpp"
#include "retflow/rng.hpp"

namespace retflow {

// Cross-session FIFO of flattened transitions. Entries are immutable once
// stored; sampled pointers stay valid until the next push.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  // Appends the whole trajectory in order, evicting oldest-first beyond
  // capacity. The last transition must be terminal with retention in (0,1]
  // and every earlier one non-terminal.
  void push(const SessionTrajectory& trajectory);

  // Uniform without replacement. Returns an empty vector while the buffer
  // holds fewer than batch_size transitions (caller defers).
  std::vector<const Transition*> sample(std::size_t batch_size,
                                        RngStream& rng) const;

  // Training may start once max(batch_size, min_fill) transitions arrived.
  bool ready(std::size_t batch_size, std::size_t min_fill = 1000) const;

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t insert_count() const { return insert_count_; }
  const Transition& at(std::size_t i) const { return storage_[i]; }

 private:
  std::size_t capacity_;
  std::deque<Transition> storage_;
  std::uint64_t insert_count_ = 0;
};

}  // namespace retflow
