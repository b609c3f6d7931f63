#pragma once

#include <cstdint>
#include <vector>

#include "olala/dither.hpp"
#include "olala/lattice.hpp"

namespace olala {

/// Subtractive dithered quantizer over a truncated lattice. Inputs are
/// multiplied by `zeta` before quantization and divided by it on decode.
struct SdqCodec {
  TruncatedLattice lattice;
  double zeta = 1.0;

  SdqCodec(TruncatedLattice lat, double scale);
};

/// Index of the codeword nearest to x + d. `x_scaled` is already multiplied by zeta.
std::uint32_t sdq_encode(const SdqCodec& codec, const Eigen::Ref<const Vector>& x_scaled,
                         const Eigen::Ref<const Vector>& d);

/// (codebook[index] - d) / zeta. Throws ProtocolError for an out-of-range index.
Vector sdq_decode(const SdqCodec& codec, std::uint32_t index, const Eigen::Ref<const Vector>& d);

/// A long vector cut into L-length blocks (columns), zero-padded at the end.
struct SplitVector {
  Matrix blocks;
  int padding = 0;

  int dim() const noexcept { return static_cast<int>(blocks.rows()); }
  Eigen::Index count() const noexcept { return blocks.cols(); }
  Eigen::Index original_size() const noexcept { return blocks.size() - padding; }
};

SplitVector split_vector(const Eigen::Ref<const Vector>& x, int dim);

/// Concatenates the blocks and strips the padding.
Vector recombine(const SplitVector& split);

/// Dithers for `count` consecutive draws of `stream`, as columns.
Matrix draw_dithers(DitherStream& stream, Eigen::Index count);

/// Fraction of blocks with ||zeta * x_i + d_i|| > gamma.
double overload_fraction(const Eigen::Ref<const Matrix>& blocks, const Eigen::Ref<const Matrix>& dithers,
                         double zeta, double gamma);

struct ScaleFit {
  double zeta = 1.0;
  double overload = 0.0;
  /// Set when every block is zero, in which case zeta = 1.
  bool all_zero = false;
};

/// Largest input scale whose empirical overload fraction stays within
/// `target_overload`: 50 geometric bisection steps on [1e-9, 1e9]. Dithers
/// for the probe come from `probe` (one draw per block).
ScaleFit fit_scale(const Eigen::Ref<const Matrix>& blocks, const TruncatedLattice& lat,
                   DitherStream& probe, double target_overload);

/// Same search against a fixed set of probe dithers.
ScaleFit fit_scale_with_dithers(const Eigen::Ref<const Matrix>& blocks, const TruncatedLattice& lat,
                                const Eigen::Ref<const Matrix>& dithers, double target_overload);

/// Codebook indices for a whole update vector.
struct EncodedVector {
  std::vector<std::uint32_t> indices;
  int padding = 0;
  Eigen::Index size = 0;
};

/// Splits `x`, scales by zeta, dithers block k with the next draw of `stream`.
EncodedVector sdq_encode_vector(const SdqCodec& codec, const Eigen::Ref<const Vector>& x,
                                DitherStream& stream);

/// Inverse of sdq_encode_vector given a stream at the same starting counter.
Vector sdq_decode_vector(const SdqCodec& codec, const EncodedVector& encoded, DitherStream& stream);

}  // namespace olala
