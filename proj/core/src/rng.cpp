#include "retflow/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace retflow {

double RngStream::normal() {
  // u1 in (0, 1] keeps the log finite.
  double u1 = 1.0 - uniform01();
  double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t RngStream::uniform_index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  // Rejection-free modulo; bias is ~n / 2^64 and irrelevant at these scales.
  return static_cast<std::size_t>(gen_() % n);
}

}  // namespace retflow
