#pragma once

#include <cstdint>

#include "olala/lattice.hpp"

namespace olala {

/// Seeded source of dither vectors uniform over the Voronoi cell of the
/// origin of the (infinite) lattice. Draw k is a pure function of
/// (seed, k, generator), so client and server reproduce identical sequences
/// and streams never interfere with one another.
class DitherStream {
 public:
  DitherStream(std::uint64_t seed, GeneratorMatrix gen, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter), gen_(std::move(gen)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }
  const GeneratorMatrix& generator() const noexcept { return gen_; }

  /// Emits the next dither and advances the counter.
  Vector next();

  /// Draw number `counter` without touching the stream state.
  Vector at(std::uint64_t counter) const;

  /// The uniform [0,1)^L vector behind draw `counter`.
  Vector uniform_at(std::uint64_t counter) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
  GeneratorMatrix gen_;
};

/// Folds u in [0,1)^L onto the Voronoi cell: d0 = G u, d = d0 - G * nearest(d0).
Vector fold_to_cell(const GeneratorMatrix& gen, const Eigen::Ref<const Vector>& u);

/// Free-function form of DitherStream::next().
inline Vector sample_dither(DitherStream& stream) { return stream.next(); }

struct MomentEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo estimate of the per-dimension second moment (1/L) E||d||^2 of a
/// dither uniform over the basic cell, with the standard error of the mean.
/// Requires n_samples >= 1000.
MomentEstimate second_moment(const GeneratorMatrix& gen, std::int64_t n_samples,
                             std::uint64_t seed);

}  // namespace olala
