#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string_view>

namespace reengage {

/// Seeded random stream with hand-rolled distributions.
///
/// The mt19937_64 output sequence is fixed by the C++ standard, and every
/// distribution here is implemented on top of raw 64-bit draws (the std::
/// distributions are implementation-defined), so a given (seed, call
/// sequence) produces bit-identical results on any conforming build.
/// Stream splitting is by label: split(master, "env") and split(master,
/// "agent") are independent substreams of one master seed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  /// Derives a child stream from a master seed and a label.
  static RngStream split(std::uint64_t master, std::string_view label);

  /// Raw 64 uniform bits.
  std::uint64_t bits() { return gen_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), exact (rejection sampling). n > 0.
  int uniform_int(int n);

  /// Standard normal via Box-Muller (two raw draws per sample).
  double normal();

  Eigen::VectorXd normal_vector(int n, double stddev = 1.0);

  Eigen::VectorXd uniform_vector(int n, double lo, double hi);

  /// Uniformly distributed unit vector in R^d.
  Eigen::VectorXd unit_sphere(int d);

  /// Geometric on {1, 2, ...} with success probability p; mean 1/p.
  int geometric(double p);

  /// Symmetric Dirichlet of order k with concentration 1 (uniform simplex).
  Eigen::VectorXd dirichlet_uniform(int k);

 private:
  std::mt19937_64 gen_;
};

}  // namespace reengage
