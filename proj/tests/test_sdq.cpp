#include <doctest.h>

#include <cmath>

#include "olala/dither.hpp"
#include "olala/error.hpp"
#include "olala/rng.hpp"
#include "olala/sdq.hpp"
#include "oracles.hpp"

using namespace olala;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

Matrix gaussian_blocks(Rng& rng, int dim, Eigen::Index count, double scale) {
  Matrix out(dim, count);
  for (Eigen::Index k = 0; k < count; ++k)
    for (int j = 0; j < dim; ++j) out(j, k) = scale * rng.normal();
  return out;
}

}  // namespace

TEST_CASE("sdq_encode / sdq_decode basics") {
  const SdqCodec codec(build_lattice(generators::identity(2), 1.0), 1.0);
  const Vector zero = Vector::Zero(2);
  const auto origin = sdq_encode(codec, zero, zero);
  CHECK(codec.lattice.index_set.col(origin).isZero());
  CHECK(sdq_decode(codec, origin, zero).isZero());
  CHECK_THROWS_AS(sdq_decode(codec, 5, zero), ProtocolError);
  CHECK_THROWS_AS(sdq_encode(codec, Vector::Zero(3), Vector::Zero(3)), UsageError);
  CHECK_THROWS_AS(SdqCodec(build_lattice(generators::identity(2), 1.0), 0.0), UsageError);
}

TEST_CASE("sdq_encode index matches a reference walk of the generator") {
  // Unit lattice, seed 42: d = u - round(u) coordinate-wise, then linear scan.
  const SdqCodec codec(build_lattice(generators::identity(2), 1.0), 1.0);
  const std::uint64_t seed = 42;
  Vector u(2);
  u << oracle::splitmix_uniform(seed, 0), oracle::splitmix_uniform(seed, 1);
  Vector d = u;
  for (int j = 0; j < 2; ++j) d[j] = u[j] - std::round(u[j]);
  const Vector x = vec2(0.3, 0.3);
  const std::size_t expected = oracle::linear_scan(codec.lattice.codebook, x + d);

  DitherStream stream(seed, generators::identity(2));
  const Vector drawn = stream.next();
  CHECK((drawn - d).norm() < 1e-15);
  CHECK(sdq_encode(codec, x, drawn) == expected);
}

TEST_CASE("roundtrip error lies in the basic cell and is bounded by the covering radius") {
  for (const auto& gen : {generators::identity(2), generators::hexagonal().scaled(0.2),
                          generators::d2().scaled(0.1)}) {
    const auto lat = build_lattice(gen, 1.0);
    const SdqCodec codec(lat, 1.0);
    const double rho = voronoi_cell(gen).covering_radius;
    DitherStream stream(17, gen);
    Rng rng(4);
    for (int trial = 0; trial < 3000; ++trial) {
      const Vector x = vec2(rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7));
      const Vector d = stream.next();
      const auto index = sdq_encode(codec, x, d);
      const Vector e = sdq_decode(codec, index, d) - x;
      // only when the truncated quantizer agrees with the infinite one
      const Coeffs free_nearest = nearest_point(gen, x + d);
      if (free_nearest == Coeffs(lat.index_set.col(index))) {
        CHECK(nearest_point(gen, e).isZero());
        CHECK(e.norm() <= rho * (1.0 + 1e-12));
      }
    }
  }
}

TEST_CASE("roundtrip error is zero-mean on non-overloaded inputs") {
  const auto gen = generators::hexagonal().scaled(0.15);
  const SdqCodec codec(build_lattice(gen, 1.0), 1.0);
  DitherStream stream(99, gen);
  Rng rng(5);
  const int n = 10000;
  Vector sum = Vector::Zero(2);
  Vector sum_sq = Vector::Zero(2);
  for (int i = 0; i < n; ++i) {
    const Vector x = vec2(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    const Vector d = stream.next();
    const Vector e = sdq_decode(codec, sdq_encode(codec, x, d), d) - x;
    sum += e;
    sum_sq += e.cwiseProduct(e);
  }
  for (int j = 0; j < 2; ++j) {
    const double mean = sum[j] / n;
    const double se = std::sqrt((sum_sq[j] / n - mean * mean) / n);
    CHECK(std::abs(mean) <= 3.0 * se);
  }
}

TEST_CASE("decode undoes the input scale") {
  const double zeta = 4.0;
  const SdqCodec codec(build_lattice(generators::identity(2), 1.0), zeta);
  const Vector x = vec2(0.1, -0.05);
  const Vector d = Vector::Zero(2);
  const auto index = sdq_encode(codec, zeta * x, d);
  CHECK((sdq_decode(codec, index, d) - vec2(0.0, 0.0)).norm() < 1e-15);
  const auto far = sdq_encode(codec, zeta * vec2(0.2, 0.0), d);
  CHECK((sdq_decode(codec, far, d) - vec2(0.25, 0.0)).norm() < 1e-15);
}

TEST_CASE("split_vector and recombine") {
  Vector four(4);
  four << 1, 2, 3, 4;
  auto s = split_vector(four, 2);
  CHECK(s.count() == 2);
  CHECK(s.padding == 0);
  CHECK(s.blocks(1, 1) == 4.0);
  Vector five(5);
  five << 1, 2, 3, 4, 5;
  s = split_vector(five, 2);
  CHECK(s.count() == 3);
  CHECK(s.padding == 1);
  CHECK(s.blocks(1, 2) == 0.0);
  CHECK(recombine(s) == five);

  Rng rng(8);
  Vector big(1000);
  for (auto& v : big) v = rng.normal();
  for (int dim = 1; dim <= 8; ++dim) CHECK(recombine(split_vector(big, dim)) == big);
  CHECK_THROWS_AS(split_vector(Vector(0), 2), UsageError);
}

TEST_CASE("vector encode/decode keeps the original length") {
  const auto gen = generators::hexagonal().scaled(0.2);
  const SdqCodec codec(build_lattice(gen, 1.0), 3.0);
  Rng rng(1);
  for (Eigen::Index m : {1, 2, 7, 10}) {
    Vector h(m);
    for (auto& v : h) v = 0.1 * rng.normal();
    DitherStream tx(55, gen);
    DitherStream rx(55, gen);
    const auto encoded = sdq_encode_vector(codec, h, tx);
    CHECK(encoded.indices.size() == static_cast<std::size_t>((m + 1) / 2));
    const Vector decoded = sdq_decode_vector(codec, encoded, rx);
    CHECK(decoded.size() == m);
    CHECK(tx.counter() == rx.counter());
  }
}

TEST_CASE("fit_scale") {
  const auto gen = generators::hexagonal().scaled(0.2);
  const auto lat = build_lattice(gen, 1.0);
  const double rho = voronoi_cell(gen).covering_radius;
  Rng rng(21);

  SUBCASE("zero target: no overload and the scale sits between the hard bounds") {
    const Matrix blocks = gaussian_blocks(rng, 2, 500, 0.3);
    DitherStream probe(3, gen);
    const auto fit = fit_scale(blocks, lat, probe, 0.0);
    CHECK(fit.overload == 0.0);
    const double max_norm = blocks.colwise().norm().maxCoeff();
    // ||z x + d|| <= z ||x|| + rho keeps every block inside; ||z x + d|| >= z ||x|| - rho
    CHECK(fit.zeta >= (1.0 - rho) / max_norm * (1.0 - 1e-9));
    CHECK(fit.zeta <= (1.0 + rho) / max_norm * (1.0 + 1e-9));
  }
  SUBCASE("0.5% target re-measured on fresh dithers") {
    const Matrix blocks = gaussian_blocks(rng, 2, 10000, 1.0);
    DitherStream probe(4, gen);
    const auto fit = fit_scale(blocks, lat, probe, 0.005);
    CHECK(fit.overload <= 0.005);
    DitherStream fresh(5, gen);
    const Matrix dithers = draw_dithers(fresh, blocks.cols());
    const double measured = overload_fraction(blocks, dithers, fit.zeta, 1.0);
    CHECK(measured <= 0.005 + 0.0025);
  }
  SUBCASE("doubling the inputs halves the scale") {
    const Matrix blocks = gaussian_blocks(rng, 2, 2000, 0.5);
    DitherStream p1(6, gen);
    DitherStream p2(6, gen);
    const auto a = fit_scale(blocks, lat, p1, 0.01);
    const auto b = fit_scale(Matrix(2.0 * blocks), lat, p2, 0.01);
    CHECK(b.zeta == doctest::Approx(a.zeta / 2.0).epsilon(1e-6));
  }
  SUBCASE("all-zero blocks") {
    DitherStream probe(7, gen);
    const auto fit = fit_scale(Matrix::Zero(2, 10), lat, probe, 0.01);
    CHECK(fit.all_zero);
    CHECK(fit.zeta == 1.0);
  }
  SUBCASE("probe stream is separate from the transmission stream") {
    DitherStream tx(8, gen);
    DitherStream probe(9, gen);
    const Vector before = DitherStream(8, gen).next();
    fit_scale(gaussian_blocks(rng, 2, 50, 1.0), lat, probe, 0.01);
    CHECK(tx.counter() == 0);
    CHECK((tx.next() - before).norm() == 0.0);
    CHECK(probe.counter() == 50);
  }
  SUBCASE("argument errors") {
    DitherStream probe(1, gen);
    CHECK_THROWS_AS(fit_scale(Matrix(2, 0), lat, probe, 0.01), UsageError);
    CHECK_THROWS_AS(fit_scale(Matrix::Ones(2, 3), lat, probe, 1.0), UsageError);
    CHECK_THROWS_AS(fit_scale(Matrix::Ones(2, 3), lat, probe, -0.1), UsageError);
  }
}
