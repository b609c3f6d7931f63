#include "olala/dither.hpp"

#include <cmath>

#include "olala/error.hpp"
#include "olala/rng.hpp"

namespace olala {

Vector fold_to_cell(const GeneratorMatrix& gen, const Eigen::Ref<const Vector>& u) {
  const Vector d0 = gen.entries() * u;
  return d0 - gen.point(nearest_point(gen, d0));
}

Vector DitherStream::uniform_at(std::uint64_t counter) const {
  const int dim = gen_.dim();
  Vector u(dim);
  const std::uint64_t base = counter * static_cast<std::uint64_t>(dim);
  for (int j = 0; j < dim; ++j) u[j] = counter_uniform(seed_, base + static_cast<std::uint64_t>(j));
  return u;
}

Vector DitherStream::at(std::uint64_t counter) const { return fold_to_cell(gen_, uniform_at(counter)); }

Vector DitherStream::next() { return at(counter_++); }

MomentEstimate second_moment(const GeneratorMatrix& gen, std::int64_t n_samples,
                             std::uint64_t seed) {
  if (n_samples < 1000) throw UsageError("second_moment needs at least 1000 samples");
  DitherStream stream(seed, gen);
  const double dim = gen.dim();
  // Welford accumulation of the per-dimension squared norm.
  double mean = 0.0;
  double m2 = 0.0;
  for (std::int64_t i = 0; i < n_samples; ++i) {
    const double value = stream.next().squaredNorm() / dim;
    const double delta = value - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (value - mean);
  }
  const double n = static_cast<double>(n_samples);
  const double variance = m2 / (n - 1.0);
  return {mean, std::sqrt(variance / n)};
}

}  // namespace olala
