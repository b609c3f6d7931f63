#pragma once

// Independent reference implementations used only by the tests. Nothing in
// here calls into the library routines it is used to check.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Calls fn(l) for every integer vector in [-r, r]^dim, lexicographic order.
template <class Fn>
void for_each_in_box(int dim, int r, Fn&& fn) {
  std::vector<int> l(static_cast<std::size_t>(dim), -r);
  while (true) {
    fn(l);
    int j = dim - 1;
    while (j >= 0 && l[static_cast<std::size_t>(j)] == r) {
      l[static_cast<std::size_t>(j)] = -r;
      --j;
    }
    if (j < 0) return;
    ++l[static_cast<std::size_t>(j)];
  }
}

inline Vec combine(const Mat& g, const std::vector<int>& l) {
  Vec out = Vec::Zero(g.rows());
  for (int j = 0; j < g.cols(); ++j) out += g.col(j) * static_cast<double>(l[static_cast<std::size_t>(j)]);
  return out;
}

// Exhaustive closest lattice point over coefficients in [-r, r]^L.
inline std::vector<int> nearest_exhaustive(const Mat& g, const Vec& x, int r) {
  std::vector<int> best;
  double best_sq = std::numeric_limits<double>::infinity();
  for_each_in_box(static_cast<int>(g.rows()), r, [&](const std::vector<int>& l) {
    const double sq = (x - combine(g, l)).squaredNorm();
    if (sq < best_sq) {
      best_sq = sq;
      best = l;
    }
  });
  return best;
}

inline double nearest_distance(const Mat& g, const Vec& x, int r) {
  return (x - combine(g, nearest_exhaustive(g, x, r))).norm();
}

// All points with norm <= gamma (relative slack 1e-9) among coefficients in [-r, r]^L.
inline std::vector<std::vector<int>> truncated_exhaustive(const Mat& g, double gamma, int r) {
  std::vector<std::vector<int>> out;
  for_each_in_box(static_cast<int>(g.rows()), r, [&](const std::vector<int>& l) {
    if (combine(g, l).norm() <= gamma * (1.0 + 1e-9)) out.push_back(l);
  });
  return out;
}

// Nearest column of `codebook` by a plain linear scan, lowest index on ties.
inline std::size_t linear_scan(const Mat& codebook, const Vec& x) {
  std::size_t best = 0;
  double best_sq = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < codebook.cols(); ++k) {
    double sq = 0.0;
    for (Eigen::Index j = 0; j < x.size(); ++j) sq += (x[j] - codebook(j, k)) * (x[j] - codebook(j, k));
    if (sq < best_sq) {
      best_sq = sq;
      best = static_cast<std::size_t>(k);
    }
  }
  return best;
}

// Reference splitmix64 walk written out from the published constants.
inline std::uint64_t splitmix_output(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t z = seed + (k + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

inline double splitmix_uniform(std::uint64_t seed, std::uint64_t k) {
  return static_cast<double>(splitmix_output(seed, k) >> 11) / 9007199254740992.0;
}

// Per-dimension second moment of the Voronoi cell of `g` (L = 2) by midpoint
// integration on an n x n grid over [-half, half]^2. Membership is decided by
// comparing against every lattice point with coefficients in [-3, 3]^2.
inline double second_moment_by_integration(const Mat& g, double half, int n) {
  std::vector<Vec> points;
  for_each_in_box(2, 3, [&](const std::vector<int>& l) {
    if (l[0] != 0 || l[1] != 0) points.push_back(combine(g, l));
  });
  const double h = 2.0 * half / n;
  double mass = 0.0;
  double moment = 0.0;
  Vec x(2);
  for (int i = 0; i < n; ++i) {
    x[0] = -half + (i + 0.5) * h;
    for (int j = 0; j < n; ++j) {
      x[1] = -half + (j + 0.5) * h;
      const double r2 = x.squaredNorm();
      bool inside = true;
      for (const Vec& p : points) {
        if ((x - p).squaredNorm() < r2) {
          inside = false;
          break;
        }
      }
      if (inside) {
        mass += 1.0;
        moment += r2;
      }
    }
  }
  return moment / mass / 2.0;
}

}  // namespace oracle
