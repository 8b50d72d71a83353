#include "retflow/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace retflow {

Tensor2D& ParamSet::add(const std::string& name, std::size_t rows,
                        std::size_t cols, ParamKind kind) {
  if (rows == 0 || cols == 0)
    throw std::invalid_argument("ParamSet::add: empty tensor " + name);
  auto [it, inserted] = entries_.try_emplace(name);
  if (!inserted)
    throw std::invalid_argument("ParamSet::add: duplicate name " + name);
  it->second.value = Tensor2D(rows, cols);
  it->second.grad = Tensor2D(rows, cols);
  it->second.kind = kind;
  return it->second.value;
}

const ParamSet::Entry& ParamSet::find(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::invalid_argument("ParamSet: unknown parameter " + name);
  return it->second;
}

Tensor2D& ParamSet::value(const std::string& name) {
  return const_cast<Entry&>(find(name)).value;
}
const Tensor2D& ParamSet::value(const std::string& name) const {
  return find(name).value;
}
Tensor2D& ParamSet::grad(const std::string& name) {
  return const_cast<Entry&>(find(name)).grad;
}
const Tensor2D& ParamSet::grad(const std::string& name) const {
  return find(name).grad;
}
ParamKind ParamSet::kind(const std::string& name) const {
  return find(name).kind;
}

void ParamSet::zero_grads() {
  for (auto& [name, e] : entries_) e.grad.zero();
}

std::size_t ParamSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.size();
  return n;
}

void glorot_init(ParamSet& params, RngStream& rng) {
  for (auto& [name, e] : params) {
    if (e.kind == ParamKind::bias) {
      e.value.zero();
      continue;
    }
    double bound = std::sqrt(6.0 / double(e.value.rows + e.value.cols));
    for (double& v : e.value.data) v = rng.uniform(-bound, bound);
  }
}

}  // namespace retflow
