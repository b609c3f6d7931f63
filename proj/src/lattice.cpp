#include "olala/lattice.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "olala/error.hpp"

namespace olala {

namespace {

// Advances `l` through the box [-half, half]^L in lexicographic order
// (coordinate 0 most significant). Returns false after the last vector.
bool next_in_box(Coeffs& l, int half) {
  for (int j = static_cast<int>(l.size()) - 1; j >= 0; --j) {
    if (l[j] < half) {
      ++l[j];
      return true;
    }
    l[j] = -half;
  }
  return false;
}

std::int64_t box_size(std::int64_t half, int dim, std::int64_t cap) {
  const std::int64_t side = 2 * half + 1;
  std::int64_t total = 1;
  for (int j = 0; j < dim; ++j) {
    if (total > cap / side) return cap + 1;
    total *= side;
  }
  return total;
}

bool within_radius(double sq_norm, double gamma) {
  return sq_norm <= gamma * gamma * (1.0 + kRadiusSlack);
}

// Depth-first sphere enumeration on the triangular factor of G (G = QR, so
// ||G l|| = ||R l||). Visits, in no particular order, every l in [-half, half]^L
// that passes within_radius; visit(l) returning false stops the walk.
class SphereWalk {
 public:
  SphereWalk(const GeneratorMatrix& gen, double gamma, std::int64_t half)
      : g_(gen.entries()),
        r_(Eigen::HouseholderQR<Matrix>(gen.entries()).matrixQR().triangularView<Eigen::Upper>()),
        gamma_(gamma),
        half_(static_cast<double>(half)),
        // loose bound for pruning, exact test on the visited points
        bound_(gamma * gamma * (1.0 + kRadiusSlack) * (1.0 + 1e-6)),
        l_(Coeffs::Zero(gen.dim())) {}

  template <class Visit>
  void run(Visit&& visit) {
    walk(static_cast<int>(l_.size()) - 1, 0.0, visit);
  }

 private:
  template <class Visit>
  bool walk(int level, double partial, Visit& visit) {
    const double diag = std::abs(r_(level, level));
    double offset = 0.0;
    for (Eigen::Index j = level + 1; j < l_.size(); ++j) offset += r_(level, j) * l_[j];
    const double center = -offset / r_(level, level);
    const double width = std::sqrt(std::max(bound_ - partial, 0.0)) / diag;
    const double lo = std::max(std::ceil(center - width), -half_);
    const double hi = std::min(std::floor(center + width), half_);
    for (double v = lo; v <= hi; v += 1.0) {
      l_[level] = static_cast<int>(v);
      const double t = diag * (v - center);
      const double next = partial + t * t;
      if (level == 0) {
        if (within_radius((g_ * l_.cast<double>()).squaredNorm(), gamma_) && !visit(l_)) return false;
      } else if (!walk(level - 1, next, visit)) {
        return false;
      }
    }
    return true;
  }

  const Matrix& g_;
  Matrix r_;
  double gamma_;
  double half_;
  double bound_;
  Coeffs l_;
};

bool lexicographic_less(const Coeffs& a, const Coeffs& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

GeneratorMatrix::GeneratorMatrix(Matrix entries) : g_(std::move(entries)) {
  if (g_.rows() < 1 || g_.rows() != g_.cols()) {
    throw GeometryError("generator matrix must be square with L >= 1");
  }
  if (g_.rows() > kMaxLatticeDim) {
    throw GeometryError("lattice dimension " + std::to_string(g_.rows()) + " exceeds " +
                        std::to_string(kMaxLatticeDim));
  }
  if (!g_.allFinite()) throw GeometryError("generator matrix has non-finite entries");
  const Eigen::FullPivLU<Matrix> lu(g_);
  det_ = lu.determinant();
  double col_scale = 1.0;
  for (Eigen::Index j = 0; j < g_.cols(); ++j) col_scale *= g_.col(j).norm();
  if (!lu.isInvertible() || !(std::abs(det_) > 1e-12 * col_scale)) {
    throw GeometryError("generator matrix is singular");
  }
  inv_ = lu.inverse();
}

GeneratorMatrix GeneratorMatrix::from_row_major(int dim, std::span<const double> values) {
  if (dim < 1 || values.size() != static_cast<std::size_t>(dim) * dim) {
    throw GeometryError("row-major generator needs L*L values");
  }
  Matrix g(dim, dim);
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) g(r, c) = values[static_cast<std::size_t>(r) * dim + c];
  return GeneratorMatrix(std::move(g));
}

std::vector<double> GeneratorMatrix::row_major() const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(g_.size()));
  for (Eigen::Index r = 0; r < g_.rows(); ++r)
    for (Eigen::Index c = 0; c < g_.cols(); ++c) out.push_back(g_(r, c));
  return out;
}

namespace generators {

GeneratorMatrix identity(int dim) { return GeneratorMatrix(Matrix::Identity(dim, dim)); }

GeneratorMatrix hexagonal() {
  Matrix g(2, 2);
  g << 1.0, 0.5, 0.0, std::sqrt(3.0) / 2.0;
  return GeneratorMatrix(g);
}

GeneratorMatrix d2() {
  Matrix g(2, 2);
  g << 2.0, 0.0, 1.0, -1.0;
  return GeneratorMatrix(g);
}

GeneratorMatrix a2() {
  Matrix g(2, 2);
  g << std::sqrt(2.0), 0.0, -0.7071, 1.2247;
  return GeneratorMatrix(g);
}

GeneratorMatrix unit_determinant(const GeneratorMatrix& gen) {
  const double scale = std::pow(std::abs(gen.determinant()), -1.0 / gen.dim());
  return gen.scaled(scale);
}

}  // namespace generators

std::int64_t search_box_halfwidth(const GeneratorMatrix& gen, double gamma) {
  const double max_row = gen.inverse().rowwise().norm().maxCoeff();
  const double half = std::ceil(gamma * max_row);
  if (!(half < 1e15)) return std::numeric_limits<std::int64_t>::max() / 4;
  return static_cast<std::int64_t>(half);
}

TruncatedLattice build_lattice(const GeneratorMatrix& gen, double gamma,
                               std::int64_t candidate_cap) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw GeometryError("support radius gamma must be positive and finite");
  }
  const int dim = gen.dim();
  const std::int64_t half = search_box_halfwidth(gen, gamma);
  if (box_size(half, dim, candidate_cap) > candidate_cap) {
    throw ResourceError("truncated-lattice search box exceeds " + std::to_string(candidate_cap) +
                        " candidates");
  }
  std::vector<Coeffs> kept;
  SphereWalk(gen, gamma, half).run([&](const Coeffs& l) {
    kept.push_back(l);
    return true;
  });
  std::sort(kept.begin(), kept.end(), lexicographic_less);
  const Matrix& g = gen.entries();

  TruncatedLattice lat{gen, gamma, Eigen::MatrixXi(dim, static_cast<Eigen::Index>(kept.size())),
                       Matrix(dim, static_cast<Eigen::Index>(kept.size()))};
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    lat.index_set.col(col) = kept[i];
    lat.codebook.col(col) = g * kept[i].cast<double>();
  }
  return lat;
}

std::int64_t count_lattice_points(const GeneratorMatrix& gen, double gamma,
                                  std::int64_t stop_above, std::int64_t candidate_cap) {
  const int dim = gen.dim();
  const std::int64_t half = search_box_halfwidth(gen, gamma);
  if (box_size(half, dim, candidate_cap) > candidate_cap) return stop_above + 1;
  std::int64_t count = 0;
  SphereWalk(gen, gamma, half).run([&](const Coeffs&) { return ++count <= stop_above; });
  return count;
}

Coeffs nearest_point(const GeneratorMatrix& gen, const Eigen::Ref<const Vector>& x) {
  const int dim = gen.dim();
  if (x.size() != dim) throw UsageError("nearest_point: dimension mismatch");
  if (!x.allFinite()) throw UsageError("nearest_point: non-finite input");
  const Vector rounded = (gen.inverse() * x).array().round().matrix();
  Coeffs base(dim);
  for (int j = 0; j < dim; ++j) base[j] = static_cast<int>(rounded[j]);

  const Matrix& g = gen.entries();
  const Vector residual0 = x - g * base.cast<double>();
  Coeffs offset = Coeffs::Constant(dim, -2);
  Coeffs best = base;
  double best_sq = std::numeric_limits<double>::infinity();
  do {
    const double sq = (residual0 - g * offset.cast<double>()).squaredNorm();
    if (sq < best_sq) {
      best_sq = sq;
      best = base + offset;
    }
  } while (next_in_box(offset, 2));
  return best;
}

std::size_t quantize_index(const TruncatedLattice& lat, const Eigen::Ref<const Vector>& x) {
  const Eigen::Index count = lat.codebook.cols();
  if (count == 0) throw GeometryError("quantize: empty codebook");
  if (x.size() != lat.codebook.rows()) throw UsageError("quantize: dimension mismatch");
  const Eigen::Index dim = x.size();
  const double* cb = lat.codebook.data();
  std::size_t best = 0;
  double best_sq = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < count; ++k) {
    const double* z = cb + k * dim;
    double sq = 0.0;
    for (Eigen::Index j = 0; j < dim; ++j) {
      const double diff = x[j] - z[j];
      sq += diff * diff;
    }
    if (sq < best_sq) {
      best_sq = sq;
      best = static_cast<std::size_t>(k);
    }
  }
  return best;
}

QuantizeResult quantize(const TruncatedLattice& lat, const Eigen::Ref<const Vector>& x) {
  const std::size_t index = quantize_index(lat, x);
  return {index, lat.codebook.col(static_cast<Eigen::Index>(index))};
}

double rate_of(const TruncatedLattice& lat) {
  return std::log2(static_cast<double>(lat.size())) / lat.dim();
}

VoronoiCell voronoi_cell(const GeneratorMatrix& gen) {
  const int dim = gen.dim();
  if (dim > 3) throw UsageError("voronoi_cell supports L <= 3");
  const int reach = dim <= 2 ? 2 : 1;
  std::vector<Vector> neighbours;
  Coeffs l = Coeffs::Constant(dim, -reach);
  do {
    if (!l.isZero()) neighbours.push_back(gen.point(l));
  } while (next_in_box(l, reach));

  const double scale = gen.entries().cwiseAbs().maxCoeff();
  const double tol = 1e-9 * scale;
  VoronoiCell cell;
  std::vector<int> pick(static_cast<std::size_t>(dim));
  for (int j = 0; j < dim; ++j) pick[static_cast<std::size_t>(j)] = j;
  const int n = static_cast<int>(neighbours.size());
  while (true) {
    Matrix rows(dim, dim);
    Vector rhs(dim);
    for (int j = 0; j < dim; ++j) {
      const Vector& p = neighbours[static_cast<std::size_t>(pick[static_cast<std::size_t>(j)])];
      rows.row(j) = p.transpose();
      rhs[j] = 0.5 * p.squaredNorm();
    }
    const Eigen::FullPivLU<Matrix> lu(rows);
    if (lu.isInvertible() && std::abs(lu.determinant()) > 1e-12 * std::pow(scale, 2 * dim)) {
      const Vector centre = lu.solve(rhs);
      const Vector nearest = gen.point(nearest_point(gen, centre));
      if ((centre - nearest).norm() >= centre.norm() - tol) {
        const bool seen = std::any_of(cell.vertices.begin(), cell.vertices.end(),
                                      [&](const Vector& v) { return (v - centre).norm() <= tol; });
        if (!seen) cell.vertices.push_back(centre);
      }
    }
    // next combination
    int j = dim - 1;
    while (j >= 0 && pick[static_cast<std::size_t>(j)] == n - dim + j) --j;
    if (j < 0) break;
    ++pick[static_cast<std::size_t>(j)];
    for (int k = j + 1; k < dim; ++k)
      pick[static_cast<std::size_t>(k)] = pick[static_cast<std::size_t>(k - 1)] + 1;
  }
  if (cell.vertices.empty()) throw GeometryError("voronoi_cell: no vertices found");
  cell.lower = Vector::Constant(dim, std::numeric_limits<double>::infinity());
  cell.upper = -cell.lower;
  for (const Vector& v : cell.vertices) {
    cell.covering_radius = std::max(cell.covering_radius, v.norm());
    cell.lower = cell.lower.cwiseMin(v);
    cell.upper = cell.upper.cwiseMax(v);
  }
  return cell;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t& offset) {
  if (offset + 4 > in.size()) throw ProtocolError("truncated buffer reading uint32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  offset += 4;
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t& offset) {
  if (offset + 8 > in.size()) throw ProtocolError("truncated buffer reading uint64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
  offset += 8;
  return v;
}

double get_f64(std::span<const std::uint8_t> in, std::size_t& offset) {
  return std::bit_cast<double>(get_u64(in, offset));
}

void write_generator(std::vector<std::uint8_t>& out, const GeneratorMatrix& gen) {
  put_u32(out, static_cast<std::uint32_t>(gen.dim()));
  for (double v : gen.row_major()) put_f64(out, v);
}

GeneratorMatrix read_generator(std::span<const std::uint8_t> in, std::size_t& offset) {
  const std::uint32_t dim = get_u32(in, offset);
  if (dim < 1 || dim > static_cast<std::uint32_t>(kMaxLatticeDim)) {
    throw ProtocolError("generator dimension out of range");
  }
  std::vector<double> values(static_cast<std::size_t>(dim) * dim);
  for (double& v : values) v = get_f64(in, offset);
  try {
    return GeneratorMatrix::from_row_major(static_cast<int>(dim), values);
  } catch (const GeometryError& e) {
    throw ProtocolError(std::string("invalid generator in payload: ") + e.what());
  }
}

}  // namespace olala
