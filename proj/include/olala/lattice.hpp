#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace olala {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Coeffs = Eigen::VectorXi;

/// Largest lattice dimension supported.
inline constexpr int kMaxLatticeDim = 8;

/// Default cap on integer candidates visited while enumerating a truncated lattice.
inline constexpr std::int64_t kDefaultCandidateCap = 10'000'000;

/// Relative slack on the support radius test so that points lying exactly on
/// the sphere (e.g. the hexagonal first shell at radius 1) are kept despite
/// rounding in the norm.
inline constexpr double kRadiusSlack = 1e-10;

/// An invertible L x L generator; lattice points are `entries() * l` for
/// integer column vectors l.
class GeneratorMatrix {
 public:
  /// Throws GeometryError if the matrix is not square, has non-finite entries,
  /// exceeds kMaxLatticeDim, or is numerically singular.
  explicit GeneratorMatrix(Matrix entries);

  static GeneratorMatrix from_row_major(int dim, std::span<const double> values);

  int dim() const noexcept { return static_cast<int>(g_.rows()); }
  const Matrix& entries() const noexcept { return g_; }
  const Matrix& inverse() const noexcept { return inv_; }
  double determinant() const noexcept { return det_; }

  Vector point(const Coeffs& l) const { return g_ * l.cast<double>(); }
  GeneratorMatrix scaled(double factor) const { return GeneratorMatrix(g_ * factor); }

  /// Row-major copy of the entries.
  std::vector<double> row_major() const;

  friend bool operator==(const GeneratorMatrix& a, const GeneratorMatrix& b) {
    return a.g_ == b.g_;
  }

 private:
  Matrix g_;
  Matrix inv_;
  double det_ = 0.0;
};

namespace generators {
GeneratorMatrix identity(int dim);
/// [[1, 1/2], [0, sqrt(3)/2]]
GeneratorMatrix hexagonal();
/// [[2, 0], [1, -1]]
GeneratorMatrix d2();
/// [[sqrt(2), 0], [-0.7071, 1.2247]]
GeneratorMatrix a2();
/// `gen` rescaled to |det| = 1.
GeneratorMatrix unit_determinant(const GeneratorMatrix& gen);
}  // namespace generators

/// Lattice points of norm <= gamma. Columns of `codebook` are points and
/// columns of `index_set` their integer coefficients, in lexicographic order
/// of the coefficients.
struct TruncatedLattice {
  GeneratorMatrix gen;
  double gamma = 1.0;
  Eigen::MatrixXi index_set;
  Matrix codebook;

  int dim() const noexcept { return gen.dim(); }
  std::size_t size() const noexcept { return static_cast<std::size_t>(codebook.cols()); }
};

/// Half-width of the integer search box that contains every l with
/// ||gen * l|| <= gamma: ceil(gamma * max_i ||row_i(gen^-1)||).
std::int64_t search_box_halfwidth(const GeneratorMatrix& gen, double gamma);

/// Enumerates all lattice points within radius gamma. Throws ResourceError if
/// the search box holds more than `candidate_cap` integer vectors.
TruncatedLattice build_lattice(const GeneratorMatrix& gen, double gamma,
                               std::int64_t candidate_cap = kDefaultCandidateCap);

/// Number of lattice points within radius gamma, stopping early once the
/// count exceeds `stop_above`. Returns stop_above + 1 when the search box is
/// larger than `candidate_cap` (the count is then not computed).
std::int64_t count_lattice_points(const GeneratorMatrix& gen, double gamma,
                                  std::int64_t stop_above,
                                  std::int64_t candidate_cap = kDefaultCandidateCap);

/// Closest point of the infinite lattice: Babai rounding followed by an
/// exhaustive search of the {-2..2}^L offset cube. Ties resolve to the
/// lexicographically smallest coefficient vector.
Coeffs nearest_point(const GeneratorMatrix& gen, const Eigen::Ref<const Vector>& x);

struct QuantizeResult {
  std::size_t index = 0;
  Vector point;
};

/// Closest codeword of the truncated codebook by exhaustive scan; ties go to
/// the lowest index. Inputs outside the support map to the nearest retained
/// codeword.
QuantizeResult quantize(const TruncatedLattice& lat, const Eigen::Ref<const Vector>& x);

/// Index-only variant of quantize() for hot loops.
std::size_t quantize_index(const TruncatedLattice& lat, const Eigen::Ref<const Vector>& x);

/// Bits per sample, (1/L) * log2 |codebook|.
double rate_of(const TruncatedLattice& lat);

/// Vertices of the Voronoi cell of the origin (L <= 3), its covering radius and
/// axis-aligned bounding box.
struct VoronoiCell {
  std::vector<Vector> vertices;
  double covering_radius = 0.0;
  Vector lower;
  Vector upper;
};

/// Computes the Voronoi cell as circumcenters of the origin and L lattice
/// neighbours that no lattice point is strictly closer to. Throws UsageError
/// for L > 3.
VoronoiCell voronoi_cell(const GeneratorMatrix& gen);

/// Wire format: L as uint32 little-endian, then L*L float64 little-endian,
/// row-major.
void write_generator(std::vector<std::uint8_t>& out, const GeneratorMatrix& gen);
GeneratorMatrix read_generator(std::span<const std::uint8_t> in, std::size_t& offset);

// Little-endian primitives shared by the wire formats.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);
std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t& offset);
std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t& offset);
double get_f64(std::span<const std::uint8_t> in, std::size_t& offset);

}  // namespace olala
