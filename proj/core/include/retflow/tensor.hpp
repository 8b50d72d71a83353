#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "retflow/rng.hpp"

namespace retflow {

// Dense row-major matrix of doubles. Vectors are 1 x n.
struct Tensor2D {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor2D() = default;
  Tensor2D(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
  std::size_t size() const { return data.size(); }
  void zero() { data.assign(rows * cols, 0.0); }
};

enum class ParamKind { weight, bias };

// Named parameters with matching gradient storage. Iteration is in name
// order, which fixes init draw order and checkpoint layout.
class ParamSet {
 public:
  struct Entry {
    Tensor2D value;
    Tensor2D grad;
    ParamKind kind = ParamKind::weight;
  };

  Tensor2D& add(const std::string& name, std::size_t rows, std::size_t cols,
                ParamKind kind = ParamKind::weight);

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor2D& value(const std::string& name);
  const Tensor2D& value(const std::string& name) const;
  Tensor2D& grad(const std::string& name);
  const Tensor2D& grad(const std::string& name) const;
  ParamKind kind(const std::string& name) const;

  void zero_grads();
  std::size_t total_elements() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

 private:
  const Entry& find(const std::string& name) const;
  std::map<std::string, Entry> entries_;
};

// Xavier-uniform for weights (+-sqrt(6 / (fan_in + fan_out))), zeros for
// biases. Visits parameters in name order so draws are reproducible.
void glorot_init(ParamSet& params, RngStream& rng);

}  // namespace retflow
