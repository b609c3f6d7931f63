#pragma once

#include <cstdint>

#include "olala/lattice.hpp"

namespace olala {

/// Fixed-input fully connected network whose reshaped output is the raw
/// generator matrix: s (16, all ones) -> tanh(32) -> tanh(32) -> L*L linear.
/// Parameters live in one flat vector, laid out as W1, b1, W2, b2, W3, b3
/// with column-major weight matrices.
class PriorNet {
 public:
  static constexpr int kInputWidth = 16;
  static constexpr int kHiddenWidth = 32;

  /// Fan-in uniform initialization, then the output bias is chosen so the
  /// initial output equals `warm_start`.
  PriorNet(int lattice_dim, std::uint64_t seed, const Matrix& warm_start);
  PriorNet(int lattice_dim, std::uint64_t seed);
  PriorNet(int lattice_dim, Vector theta);

  static Eigen::Index parameter_count(int lattice_dim);
  /// Hexagonal generator for L = 2, identity otherwise.
  static Matrix default_warm_start(int lattice_dim);

  int lattice_dim() const noexcept { return dim_; }
  const Vector& theta() const noexcept { return theta_; }
  void set_theta(Vector theta);
  const Vector& input() const noexcept { return input_; }

  /// Raw L x L matrix (row-major reshape of the output layer). Throws
  /// NumericError for non-finite parameters.
  Matrix forward() const;

  /// Gradient over theta of sum_ij d_raw(i,j) * raw(i,j).
  Vector backward(const Matrix& d_raw) const;

 private:
  struct Activations {
    Vector h1;
    Vector h2;
    Vector out;
  };
  Activations run() const;

  int dim_;
  Vector theta_;
  Vector input_;
};

}  // namespace olala
