#include "reengage/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace reengage {

namespace {

// FNV-1a, used only to hash stream labels into seed material.
std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

RngStream RngStream::split(std::uint64_t master, std::string_view label) {
  return RngStream(splitmix64(master ^ fnv1a(label)));
}

int RngStream::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("RngStream::uniform_int: n must be positive");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

double RngStream::normal() {
  // Box-Muller, cosine branch only; u1 kept away from 0.
  double u1 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Eigen::VectorXd RngStream::normal_vector(int n, double stddev) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = stddev * normal();
  return v;
}

Eigen::VectorXd RngStream::uniform_vector(int n, double lo, double hi) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = uniform(lo, hi);
  return v;
}

Eigen::VectorXd RngStream::unit_sphere(int d) {
  Eigen::VectorXd v = normal_vector(d);
  double nrm = v.norm();
  while (nrm < 1e-12) {
    v = normal_vector(d);
    nrm = v.norm();
  }
  return v / nrm;
}

int RngStream::geometric(double p) {
  if (p <= 0.0 || p > 1.0) throw std::invalid_argument("RngStream::geometric: p must be in (0,1]");
  if (p == 1.0) return 1;
  double u = uniform();
  if (u < 1e-300) u = 1e-300;
  return 1 + static_cast<int>(std::floor(std::log(u) / std::log1p(-p)));
}

Eigen::VectorXd RngStream::dirichlet_uniform(int k) {
  Eigen::VectorXd v(k);
  for (int i = 0; i < k; ++i) {
    double u = uniform();
    if (u < 1e-300) u = 1e-300;
    v[i] = -std::log(u);
  }
  return v / v.sum();
}

}  // namespace reengage
