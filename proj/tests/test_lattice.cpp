#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "olala/dither.hpp"
#include "olala/error.hpp"
#include "olala/lattice.hpp"
#include "olala/rng.hpp"
#include "olala/sdq.hpp"
#include "oracles.hpp"

using namespace olala;

namespace {

std::vector<int> to_std(const Coeffs& l) { return {l.data(), l.data() + l.size()}; }

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

GeneratorMatrix random_well_conditioned(Rng& rng, int dim) {
  Matrix g = Matrix::Identity(dim, dim);
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) g(r, c) += 0.3 * rng.normal();
  return GeneratorMatrix(g * rng.uniform(0.5, 2.0));
}

}  // namespace

TEST_CASE("generator matrix validation") {
  Matrix singular(2, 2);
  singular << 1.0, 2.0, 2.0, 4.0;
  CHECK_THROWS_AS(GeneratorMatrix{singular}, GeometryError);
  Matrix nan_entry = Matrix::Identity(2, 2);
  nan_entry(0, 1) = std::nan("");
  CHECK_THROWS_AS(GeneratorMatrix{nan_entry}, GeometryError);
  CHECK_THROWS_AS(GeneratorMatrix{Matrix(2, 3)}, GeometryError);
  CHECK_THROWS_AS(GeneratorMatrix{Matrix::Identity(9, 9)}, GeometryError);
  CHECK(generators::hexagonal().determinant() == doctest::Approx(std::sqrt(3.0) / 2.0));
  CHECK(std::abs(generators::unit_determinant(generators::d2()).determinant()) ==
        doctest::Approx(1.0));
}

TEST_CASE("build_lattice small codebooks") {
  SUBCASE("unit square lattice, gamma 1") {
    const auto lat = build_lattice(generators::identity(2), 1.0);
    REQUIRE(lat.size() == 5);
    // lexicographic order of coefficients
    CHECK(to_std(lat.index_set.col(0)) == std::vector<int>{-1, 0});
    CHECK(to_std(lat.index_set.col(2)) == std::vector<int>{0, 0});
    CHECK(to_std(lat.index_set.col(4)) == std::vector<int>{1, 0});
  }
  SUBCASE("scalar lattice, gamma 2.5") {
    const auto lat = build_lattice(generators::identity(1), 2.5);
    REQUIRE(lat.size() == 5);
    for (int k = 0; k < 5; ++k) CHECK(lat.codebook(0, k) == k - 2);
  }
  SUBCASE("hexagonal, gamma 1 matches brute force over {-3..3}^2") {
    const auto gen = generators::hexagonal();
    const auto expected = oracle::truncated_exhaustive(gen.entries(), 1.0, 3);
    CHECK(expected.size() == 7);
    const auto lat = build_lattice(gen, 1.0);
    REQUIRE(lat.size() == expected.size());
    for (std::size_t k = 0; k < expected.size(); ++k) {
      CHECK(to_std(lat.index_set.col(static_cast<Eigen::Index>(k))) == expected[k]);
    }
  }
}

TEST_CASE("build_lattice errors") {
  CHECK_THROWS_AS(build_lattice(generators::identity(2), 0.0), GeometryError);
  CHECK_THROWS_AS(build_lattice(generators::identity(2), -1.0), GeometryError);
  // 2001^3 candidates > 1e7
  CHECK_THROWS_AS(build_lattice(generators::identity(3), 1000.0), ResourceError);
  CHECK_NOTHROW(build_lattice(generators::identity(2), 10.0, 500));
  CHECK_THROWS_AS(build_lattice(generators::identity(2), 20.0, 500), ResourceError);
}

TEST_CASE("truncation correctness property") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const int dim = 1 + static_cast<int>(rng.below(3));
    const auto gen = random_well_conditioned(rng, dim);
    const double gamma = rng.uniform(0.5, 3.0);
    const auto lat = build_lattice(gen, gamma);
    const auto half = static_cast<int>(search_box_halfwidth(gen, gamma));
    std::size_t inside = 0;
    oracle::for_each_in_box(dim, half, [&](const std::vector<int>& l) {
      const double norm = oracle::combine(gen.entries(), l).norm();
      if (norm <= gamma * (1.0 + 1e-11)) ++inside;
    });
    CHECK(lat.size() == inside);
    bool has_origin = false;
    for (Eigen::Index k = 0; k < lat.codebook.cols(); ++k) {
      CHECK(lat.codebook.col(k).norm() <= gamma * (1.0 + 1e-10));
      CHECK((lat.codebook.col(k) - gen.point(lat.index_set.col(k))).norm() == 0.0);
      has_origin = has_origin || lat.index_set.col(k).isZero();
    }
    CHECK(has_origin);
    // Points one step outside the box can never be inside the sphere.
    CHECK(count_lattice_points(gen, gamma, 1 << 30) == static_cast<std::int64_t>(lat.size()));
  }
}

TEST_CASE("nearest_point") {
  CHECK(to_std(nearest_point(generators::identity(2), vec2(0.6, -0.2))) == std::vector<int>{1, 0});
  CHECK(to_std(nearest_point(generators::identity(2), vec2(0.0, 0.0))) == std::vector<int>{0, 0});
  const auto hex = generators::hexagonal();
  const Vector x = vec2(0.9, 0.5);
  CHECK(to_std(nearest_point(hex, x)) == oracle::nearest_exhaustive(hex.entries(), x, 4));
  Vector bad(2);
  bad << 1.0, std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(nearest_point(hex, bad), UsageError);
  CHECK_THROWS_AS(nearest_point(hex, Vector::Zero(3)), UsageError);
}

TEST_CASE("nearest_point agrees with exhaustive search for L <= 3") {
  Rng rng(11);
  std::vector<GeneratorMatrix> gens = {generators::identity(2), generators::hexagonal(),
                                       generators::d2(), generators::a2()};
  for (int i = 0; i < 6; ++i) gens.push_back(random_well_conditioned(rng, 1 + i % 3));
  for (const auto& gen : gens) {
    for (int trial = 0; trial < 1000 / static_cast<int>(gens.size()) + 1; ++trial) {
      // coefficients within [-3, 3] keep the optimum inside the oracle's box
      Vector u(gen.dim());
      for (int j = 0; j < gen.dim(); ++j) u[j] = rng.uniform(-3.0, 3.0);
      const Vector x = gen.entries() * u;
      const double mine = (x - gen.point(nearest_point(gen, x))).norm();
      const double ref = oracle::nearest_distance(gen.entries(), x, 5);
      CHECK(mine == doctest::Approx(ref).epsilon(1e-12));
    }
  }
}

TEST_CASE("quantize") {
  const auto lat = build_lattice(generators::identity(2), 1.0);
  auto r = quantize(lat, vec2(0.6, 0.0));
  CHECK(r.point.isApprox(vec2(1.0, 0.0)));
  // overload clamps to the nearest retained codeword
  r = quantize(lat, vec2(10.0, 10.0));
  CHECK(r.point.norm() == doctest::Approx(1.0));
  CHECK((r.point - vec2(0.0, 1.0)).norm() < 1e-15);  // tie with (1,0); lower index wins

  Rng rng(3);
  const auto hex_lat = build_lattice(generators::hexagonal().scaled(0.3), 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const Vector x = vec2(rng.uniform(-1, 1), rng.uniform(-1, 1));
    CHECK(quantize(hex_lat, x).index == oracle::linear_scan(hex_lat.codebook, x));
  }
  // idempotence on codewords
  for (Eigen::Index k = 0; k < hex_lat.codebook.cols(); ++k) {
    CHECK(quantize(hex_lat, hex_lat.codebook.col(k)).index == static_cast<std::size_t>(k));
  }
  CHECK_THROWS_AS(quantize(lat, Vector::Zero(3)), UsageError);
  TruncatedLattice empty{generators::identity(2), 1.0, Eigen::MatrixXi(2, 0), Matrix(2, 0)};
  CHECK_THROWS_AS(quantize(empty, vec2(0, 0)), GeometryError);
}

TEST_CASE("rate_of") {
  const auto one = build_lattice(generators::identity(1), 0.5);
  CHECK(rate_of(one) == 0.0);
  TruncatedLattice two{generators::identity(1), 1.0, Eigen::MatrixXi(1, 2), Matrix(1, 2)};
  CHECK(rate_of(two) == doctest::Approx(1.0));
  TruncatedLattice sixty_four{generators::identity(2), 1.0, Eigen::MatrixXi(2, 64), Matrix(2, 64)};
  CHECK(rate_of(sixty_four) == doctest::Approx(3.0));
  const auto five = build_lattice(generators::identity(2), 1.0);
  CHECK(rate_of(five) == doctest::Approx(std::log2(5.0) / 2.0));
  CHECK(rate_of(five) == doctest::Approx(1.1610).epsilon(1e-4));
}

TEST_CASE("voronoi cell") {
  const auto square = voronoi_cell(generators::identity(2));
  CHECK(square.vertices.size() == 4);
  CHECK(square.covering_radius == doctest::Approx(std::sqrt(0.5)));
  const auto hex = voronoi_cell(generators::hexagonal());
  CHECK(hex.vertices.size() == 6);
  CHECK(hex.covering_radius == doctest::Approx(1.0 / std::sqrt(3.0)));
  const auto scalar = voronoi_cell(generators::identity(1).scaled(2.0));
  CHECK(scalar.covering_radius == doctest::Approx(1.0));
  const auto cube = voronoi_cell(generators::identity(3));
  CHECK(cube.vertices.size() == 8);
  CHECK(cube.covering_radius == doctest::Approx(std::sqrt(0.75)));
  CHECK_THROWS_AS(voronoi_cell(generators::identity(4)), UsageError);
}

TEST_CASE("dither stream") {
  SUBCASE("scalar cell is [-1/2, 1/2)") {
    DitherStream stream(5, generators::identity(1));
    double sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
      const double d = stream.next()[0];
      CHECK(d >= -0.5);
      CHECK(d <= 0.5);
      sum += d;
    }
    CHECK(std::abs(sum / 100000.0) < 0.01);
    CHECK(stream.counter() == 100000);
  }
  SUBCASE("every draw lies in the basic cell") {
    for (const auto& gen : {generators::hexagonal(), generators::d2(), generators::a2()}) {
      DitherStream stream(9, gen);
      for (int i = 0; i < 2000; ++i) CHECK(nearest_point(gen, stream.next()).isZero());
    }
  }
  SUBCASE("synchronization and independence from other streams") {
    const auto gen = generators::hexagonal();
    DitherStream a(123, gen);
    DitherStream b(123, gen);
    DitherStream other(999, gen);
    for (int i = 0; i < 100; ++i) {
      const Vector da = a.next();
      for (int k = 0; k < i % 3; ++k) other.next();
      const Vector db = b.next();
      CHECK((da - db).norm() == 0.0);
    }
    CHECK((a.at(5) - DitherStream(123, gen).at(5)).norm() == 0.0);
  }
  SUBCASE("hexagonal second moment matches the closed form within 2 SE") {
    // Normalized second moment of the hexagonal lattice is 5 / (36 sqrt 3).
    const auto gen = generators::hexagonal();
    const double exact = 5.0 / (36.0 * std::sqrt(3.0)) * std::abs(gen.determinant());
    DitherStream stream(2024, gen);
    double mean = 0.0;
    double m2 = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
      const double v = stream.next().squaredNorm() / 2.0;
      const double delta = v - mean;
      mean += delta / (i + 1);
      m2 += delta * (v - mean);
    }
    const double se = std::sqrt(m2 / (n - 1) / n);
    const auto est = second_moment(gen, n, 77);
    CHECK(std::abs(mean - exact) <= 2.0 * se);
    CHECK(std::abs(mean - est.estimate) <= 2.0 * std::hypot(se, est.std_error));
  }
}

TEST_CASE("second_moment") {
  const auto scalar = second_moment(generators::identity(1), 200000, 1);
  CHECK(std::abs(scalar.estimate - 1.0 / 12.0) <= 3.0 * scalar.std_error);
  const double c = 3.5;
  const auto scaled = second_moment(generators::identity(1).scaled(c), 200000, 1);
  CHECK(scaled.estimate == doctest::Approx(c * c * scalar.estimate).epsilon(1e-12));

  const auto unit_hex = generators::unit_determinant(generators::hexagonal());
  const auto cell = voronoi_cell(unit_hex);
  const double integrated =
      oracle::second_moment_by_integration(unit_hex.entries(), cell.covering_radius, 1500);
  CHECK(integrated == doctest::Approx(0.0802).epsilon(2e-3));
  const auto hex = second_moment(unit_hex, 1000000, 3);
  CHECK(std::abs(hex.estimate - integrated) <= 3.0 * hex.std_error + 1e-5);
  CHECK_THROWS_AS(second_moment(unit_hex, 999, 0), UsageError);
}

TEST_CASE("scaling a generator scales the second moment quadratically") {
  const auto gen = generators::a2();
  const auto base = second_moment(gen, 100000, 5);
  for (double c : {0.25, 2.0, 7.0}) {
    const auto s = second_moment(gen.scaled(c), 100000, 6);
    CHECK(std::abs(s.estimate - c * c * base.estimate) <=
          4.0 * std::hypot(s.std_error, c * c * base.std_error));
  }
}

TEST_CASE("generator serialization layout") {
  const auto gen = generators::hexagonal();
  std::vector<std::uint8_t> bytes;
  write_generator(bytes, gen);
  REQUIRE(bytes.size() == 4 + 8 * 4);
  CHECK(bytes[0] == 2);
  CHECK(bytes[1] == 0);
  // entry (0,1) = 0.5 is the second float: 0x3FE0000000000000 little-endian
  CHECK(bytes[4 + 8 + 7] == 0x3F);
  CHECK(bytes[4 + 8 + 6] == 0xE0);
  std::size_t offset = 0;
  const auto back = read_generator(bytes, offset);
  CHECK(offset == bytes.size());
  CHECK(back == gen);
  bytes.pop_back();
  offset = 0;
  CHECK_THROWS_AS(read_generator(bytes, offset), ProtocolError);
}
