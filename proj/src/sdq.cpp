#include "olala/sdq.hpp"

#include <cmath>
#include <string>

#include "olala/error.hpp"

namespace olala {

SdqCodec::SdqCodec(TruncatedLattice lat, double scale) : lattice(std::move(lat)), zeta(scale) {
  if (!(zeta > 0.0) || !std::isfinite(zeta)) throw UsageError("codec scale zeta must be positive");
  if (lattice.size() == 0) throw GeometryError("codec needs a non-empty codebook");
}

std::uint32_t sdq_encode(const SdqCodec& codec, const Eigen::Ref<const Vector>& x_scaled,
                         const Eigen::Ref<const Vector>& d) {
  const int dim = codec.lattice.dim();
  if (x_scaled.size() != dim || d.size() != dim) throw UsageError("sdq_encode: dimension mismatch");
  return static_cast<std::uint32_t>(quantize_index(codec.lattice, x_scaled + d));
}

Vector sdq_decode(const SdqCodec& codec, std::uint32_t index, const Eigen::Ref<const Vector>& d) {
  if (index >= codec.lattice.size()) {
    throw ProtocolError("codebook index " + std::to_string(index) + " out of range");
  }
  if (d.size() != codec.lattice.dim()) throw UsageError("sdq_decode: dimension mismatch");
  return (codec.lattice.codebook.col(index) - d) / codec.zeta;
}

SplitVector split_vector(const Eigen::Ref<const Vector>& x, int dim) {
  if (x.size() < 1) throw UsageError("split_vector: empty input");
  if (dim < 1) throw UsageError("split_vector: block length must be positive");
  const Eigen::Index blocks = (x.size() + dim - 1) / dim;
  SplitVector out{Matrix::Zero(dim, blocks), static_cast<int>(blocks * dim - x.size())};
  Eigen::Map<Vector>(out.blocks.data(), x.size()) = x;
  return out;
}

Vector recombine(const SplitVector& split) {
  return Eigen::Map<const Vector>(split.blocks.data(), split.original_size());
}

Matrix draw_dithers(DitherStream& stream, Eigen::Index count) {
  Matrix out(stream.generator().dim(), count);
  for (Eigen::Index k = 0; k < count; ++k) out.col(k) = stream.next();
  return out;
}

double overload_fraction(const Eigen::Ref<const Matrix>& blocks, const Eigen::Ref<const Matrix>& dithers,
                         double zeta, double gamma) {
  if (blocks.cols() == 0) return 0.0;
  const double limit = gamma * gamma;
  Eigen::Index over = 0;
  for (Eigen::Index k = 0; k < blocks.cols(); ++k) {
    if ((zeta * blocks.col(k) + dithers.col(k)).squaredNorm() > limit) ++over;
  }
  return static_cast<double>(over) / static_cast<double>(blocks.cols());
}

ScaleFit fit_scale_with_dithers(const Eigen::Ref<const Matrix>& blocks, const TruncatedLattice& lat,
                                const Eigen::Ref<const Matrix>& dithers, double target_overload) {
  if (blocks.cols() == 0) throw UsageError("fit_scale: no blocks");
  if (!(target_overload >= 0.0 && target_overload < 1.0)) {
    throw UsageError("fit_scale: target overload must lie in [0, 1)");
  }
  if (blocks.rows() != lat.dim() || dithers.rows() != lat.dim() || dithers.cols() != blocks.cols()) {
    throw UsageError("fit_scale: dimension mismatch");
  }
  if (blocks.isZero(0.0)) return {1.0, overload_fraction(blocks, dithers, 1.0, lat.gamma), true};

  // Overload fraction is nondecreasing in zeta while every dither lies inside
  // the support, so the feasible set is an interval starting at 0.
  double lo = 1e-9;
  double hi = 1e9;
  if (overload_fraction(blocks, dithers, hi, lat.gamma) <= target_overload) lo = hi;
  for (int it = 0; it < 50 && lo < hi; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (overload_fraction(blocks, dithers, mid, lat.gamma) <= target_overload) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {lo, overload_fraction(blocks, dithers, lo, lat.gamma), false};
}

ScaleFit fit_scale(const Eigen::Ref<const Matrix>& blocks, const TruncatedLattice& lat,
                   DitherStream& probe, double target_overload) {
  const Matrix dithers = draw_dithers(probe, blocks.cols());
  return fit_scale_with_dithers(blocks, lat, dithers, target_overload);
}

EncodedVector sdq_encode_vector(const SdqCodec& codec, const Eigen::Ref<const Vector>& x,
                                DitherStream& stream) {
  const SplitVector split = split_vector(x, codec.lattice.dim());
  EncodedVector out;
  out.padding = split.padding;
  out.size = x.size();
  out.indices.reserve(static_cast<std::size_t>(split.count()));
  for (Eigen::Index k = 0; k < split.count(); ++k) {
    const Vector d = stream.next();
    out.indices.push_back(sdq_encode(codec, codec.zeta * split.blocks.col(k), d));
  }
  return out;
}

Vector sdq_decode_vector(const SdqCodec& codec, const EncodedVector& encoded, DitherStream& stream) {
  const int dim = codec.lattice.dim();
  const auto blocks = static_cast<Eigen::Index>(encoded.indices.size());
  if (blocks * dim - encoded.padding != encoded.size || encoded.padding < 0 || encoded.padding >= dim) {
    throw ProtocolError("encoded vector length inconsistent with block count and padding");
  }
  SplitVector split{Matrix(dim, blocks), encoded.padding};
  for (Eigen::Index k = 0; k < blocks; ++k) {
    const Vector d = stream.next();
    split.blocks.col(k) = sdq_decode(codec, encoded.indices[static_cast<std::size_t>(k)], d);
  }
  return recombine(split);
}

}  // namespace olala
