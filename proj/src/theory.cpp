#include "olala/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include "olala/config.hpp"
#include "olala/dither.hpp"
#include "olala/error.hpp"
#include "olala/rng.hpp"
#include "olala/sdq.hpp"

namespace olala {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Mean and standard error via Welford.
struct Running {
  std::int64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double v) {
    ++n;
    const double delta = v - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (v - mean);
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double std_error() const { return n > 1 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0; }
};

Vector uniform_in_ball(Rng& rng, int dim, double radius) {
  Vector v(dim);
  double norm = 0.0;
  do {
    for (int j = 0; j < dim; ++j) v[j] = rng.normal();
    norm = v.norm();
  } while (norm == 0.0);
  return v * (radius * std::pow(rng.uniform(), 1.0 / dim) / norm);
}

double covering_radius(const GeneratorMatrix& gen) {
  if (gen.dim() == 1) return 0.5 * std::abs(gen.entries()(0, 0));
  return voronoi_cell(gen).covering_radius;
}

// Convex polygon clipped to an axis-aligned box (Sutherland-Hodgman).
using Polygon = std::vector<Eigen::Vector2d>;

Polygon clip(const Polygon& poly, int axis, double bound, bool keep_below) {
  Polygon out;
  const auto inside = [&](const Eigen::Vector2d& p) { return keep_below ? p[axis] <= bound : p[axis] >= bound; };
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Eigen::Vector2d& a = poly[i];
    const Eigen::Vector2d& b = poly[(i + 1) % poly.size()];
    const bool ia = inside(a);
    const bool ib = inside(b);
    if (ia) out.push_back(a);
    if (ia != ib) {
      const double s = (bound - a[axis]) / (b[axis] - a[axis]);
      out.push_back(a + s * (b - a));
    }
  }
  return out;
}

double area(const Polygon& poly) {
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    twice += a.x() * b.y() - a.y() * b.x();
  }
  return 0.5 * std::abs(twice);
}

Polygon cell_polygon(const VoronoiCell& cell) {
  Polygon poly;
  for (const Vector& v : cell.vertices) poly.emplace_back(v[0], v[1]);
  std::sort(poly.begin(), poly.end(), [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return std::atan2(a.y(), a.x()) < std::atan2(b.y(), b.x());
  });
  return poly;
}

struct ChiSquare {
  double statistic = 0.0;
  double critical = 0.0;
  int categories = 0;
};

// Histogram of the errors over a bins^L grid on the cell's bounding box with
// expected counts proportional to the cell area inside each bin. Bins with
// expected count < 5 are pooled.
ChiSquare uniformity_test(const GeneratorMatrix& gen, const Matrix& errors, int bins, double level) {
  const int dim = gen.dim();
  const Eigen::Index n = errors.cols();
  Vector lower(dim), upper(dim);
  std::vector<double> share;
  if (dim == 1) {
    const double half = 0.5 * std::abs(gen.entries()(0, 0));
    lower[0] = -half;
    upper[0] = half;
    share.assign(static_cast<std::size_t>(bins), 1.0 / bins);
  } else {
    const VoronoiCell cell = voronoi_cell(gen);
    lower = cell.lower;
    upper = cell.upper;
    const Polygon poly = cell_polygon(cell);
    const double total = area(poly);
    const Vector width = (upper - lower) / bins;
    for (int by = 0; by < bins; ++by) {
      for (int bx = 0; bx < bins; ++bx) {
        Polygon p = poly;
        p = clip(p, 0, lower[0] + bx * width[0], false);
        p = clip(p, 0, lower[0] + (bx + 1) * width[0], true);
        p = clip(p, 1, lower[1] + by * width[1], false);
        p = clip(p, 1, lower[1] + (by + 1) * width[1], true);
        share.push_back(p.size() >= 3 ? area(p) / total : 0.0);
      }
    }
  }
  std::vector<double> observed(share.size(), 0.0);
  const Vector width = (upper - lower) / bins;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t flat = 0;
    std::size_t stride = 1;
    for (int j = 0; j < dim; ++j) {
      const int b = std::clamp(static_cast<int>(std::floor((errors(j, i) - lower[j]) / width[j])), 0, bins - 1);
      flat += static_cast<std::size_t>(b) * stride;
      stride *= static_cast<std::size_t>(bins);
    }
    observed[flat] += 1.0;
  }
  ChiSquare out;
  double pooled_expected = 0.0;
  double pooled_observed = 0.0;
  for (std::size_t b = 0; b < share.size(); ++b) {
    const double expected = share[b] * static_cast<double>(n);
    if (expected < 5.0) {
      pooled_expected += expected;
      pooled_observed += observed[b];
      continue;
    }
    out.statistic += (observed[b] - expected) * (observed[b] - expected) / expected;
    ++out.categories;
  }
  if (pooled_expected > 0.0) {
    out.statistic += (pooled_observed - pooled_expected) * (pooled_observed - pooled_expected) / pooled_expected;
    ++out.categories;
  } else if (pooled_observed > 0.0) {
    out.statistic = std::numeric_limits<double>::infinity();
  }
  const int dof = std::max(1, out.categories - 1);
  out.critical = boost::math::quantile(boost::math::chi_squared(dof), level);
  return out;
}

double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

Matrix rotation2(double angle) {
  Matrix r(2, 2);
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return r;
}

// Per-dimension SDQ error energy through the truncated codec, inputs drawn
// inside the non-overloaded ball.
Running measure_sdq(const TruncatedLattice& lat, double input_radius, std::int64_t n, std::uint64_t seed) {
  const SdqCodec codec(lat, 1.0);
  Rng rng(mix_seed(seed, 1));
  DitherStream dithers(mix_seed(seed, 2), lat.gen);
  Running acc;
  const int dim = lat.dim();
  for (std::int64_t i = 0; i < n; ++i) {
    const Vector x = uniform_in_ball(rng, dim, input_radius);
    const Vector d = dithers.next();
    const Vector rec = sdq_decode(codec, sdq_encode(codec, x, d), d);
    acc.add((rec - x).squaredNorm() / dim);
  }
  return acc;
}

}  // namespace

// ---------------------------------------------------------------------------

void CheckReport::add_condition(const std::string& label, bool holds) {
  conditions.emplace_back(label, holds);
  pass = std::all_of(conditions.begin(), conditions.end(), [](const auto& c) { return c.second; });
}

double CheckReport::value(const std::string& key) const {
  for (const auto* list : {&measured, &bounds, &tolerances}) {
    for (const auto& [k, v] : *list)
      if (k == key) return v;
  }
  throw UsageError("report " + name + " has no value '" + key + "'");
}

namespace {

nlohmann::ordered_json number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

nlohmann::ordered_json report_json(const CheckReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["pass"] = r.pass;
  j["negative_control"] = r.negative_control;
  j["samples"] = r.samples;
  for (const auto& [key, list] : {std::pair{"measured", &r.measured}, std::pair{"bounds", &r.bounds},
                                  std::pair{"tolerances", &r.tolerances}}) {
    nlohmann::ordered_json obj = nlohmann::ordered_json::object();
    for (const auto& [k, v] : *list) obj[k] = number(v);
    j[key] = obj;
  }
  nlohmann::ordered_json cond = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.conditions) cond[k] = v;
  j["conditions"] = cond;
  j["notes"] = r.notes;
  return j;
}

}  // namespace

std::string CheckReport::to_json() const { return report_json(*this).dump(); }

std::string checks_json(const std::vector<CheckReport>& reports) {
  std::string out = "{\"all_required_pass\": ";
  out += all_required_pass(reports) ? "true" : "false";
  out += ",\n \"checks\": [\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    out += "  " + reports[i].to_json() + (i + 1 < reports.size() ? ",\n" : "\n");
  }
  out += " ]}\n";
  return out;
}

bool all_required_pass(const std::vector<CheckReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const CheckReport& r) { return r.negative_control || r.pass; });
}

// ---------------------------------------------------------------------------

CheckReport check_sdq_error_stats(const GeneratorMatrix& gen, double gamma, std::int64_t n, std::uint64_t seed,
                                  const SdqStatsOptions& options) {
  if (n < 1000) throw UsageError("check_sdq_error_stats: needs n >= 1000");
  const int dim = gen.dim();
  const double cover = covering_radius(gen);
  const double radius = options.overload ? 2.0 * gamma : gamma - 2.0 * cover;
  if (radius <= 0.0) throw UsageError("check_sdq_error_stats: gamma must exceed twice the covering radius");

  CheckReport report;
  report.name = options.overload ? "sdq_error_stats_overloaded" : "sdq_error_stats";
  report.negative_control = options.overload;
  report.samples = n;

  const TruncatedLattice lat = build_lattice(gen, gamma);
  const SdqCodec codec(lat, 1.0);
  Rng rng(mix_seed(seed, 1));
  DitherStream dithers(mix_seed(seed, 2), gen);
  Matrix errors(dim, n);
  Matrix inputs(dim, n);
  std::int64_t overloaded = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const Vector x = uniform_in_ball(rng, dim, radius);
    const Vector d = dithers.next();
    const std::uint32_t idx = sdq_encode(codec, x, d);
    // Non-overloaded means the codeword is the nearest point of the whole lattice.
    const Vector nearest = gen.point(nearest_point(gen, x + d));
    if ((lat.codebook.col(idx) - nearest).norm() > 1e-9 * (1.0 + gamma)) ++overloaded;
    errors.col(i) = sdq_decode(codec, idx, d) - x;
    inputs.col(i) = x;
  }
  if (overloaded > 0 && !options.overload) {
    throw UsageError("check_sdq_error_stats: " + std::to_string(overloaded) +
                     " inputs overloaded despite the shrunken support (harness bug)");
  }
  report.measured.emplace_back("overloaded_fraction", static_cast<double>(overloaded) / static_cast<double>(n));

  // Zero mean.
  bool mean_ok = true;
  for (int j = 0; j < dim; ++j) {
    const double mean = errors.row(j).mean();
    const double sd = std::sqrt((errors.row(j).array() - mean).square().sum() / static_cast<double>(n - 1));
    const double se = sd / std::sqrt(static_cast<double>(n));
    report.measured.emplace_back("mean_" + std::to_string(j), mean);
    report.bounds.emplace_back("mean_" + std::to_string(j), options.mean_sigmas * se);
    mean_ok = mean_ok && std::abs(mean) <= options.mean_sigmas * se;
  }
  report.add_condition("zero_mean", mean_ok);

  // Second moment against the cell's.
  Running moment;
  for (Eigen::Index i = 0; i < n; ++i) moment.add(errors.col(i).squaredNorm() / dim);
  double reference = 0.0;
  double reference_se = 0.0;
  if (dim == 1) {
    const double step = std::abs(gen.entries()(0, 0));
    reference = step * step / 12.0;
    report.notes.push_back("scalar cell: reference second moment is step^2/12");
  } else {
    const std::int64_t ref_n = options.reference_samples > 0 ? options.reference_samples : n;
    const MomentEstimate m = second_moment(gen, ref_n, mix_seed(seed, 3));
    reference = m.estimate;
    reference_se = m.std_error;
  }
  const double combined_se = std::hypot(moment.std_error(), reference_se);
  report.measured.emplace_back("second_moment", moment.mean);
  report.measured.emplace_back("second_moment_se", moment.std_error());
  report.measured.emplace_back("reference_second_moment", reference);
  report.measured.emplace_back("reference_se", reference_se);
  report.bounds.emplace_back("second_moment_deviation", options.moment_sigmas * combined_se);
  report.add_condition("second_moment_match", std::abs(moment.mean - reference) <= options.moment_sigmas * combined_se);

  // Input independence.
  double worst = 0.0;
  for (int j = 0; j < dim; ++j) {
    const Eigen::ArrayXd e = errors.row(j).array() - errors.row(j).mean();
    for (int k = 0; k < dim; ++k) {
      const Eigen::ArrayXd x = inputs.row(k).array() - inputs.row(k).mean();
      const double corr = (e * x).sum() / std::sqrt(e.square().sum() * x.square().sum());
      worst = std::max(worst, std::abs(corr));
    }
  }
  report.measured.emplace_back("max_abs_correlation", worst);
  report.bounds.emplace_back("max_abs_correlation", options.max_correlation);
  report.add_condition("input_independence", worst <= options.max_correlation);

  // Uniformity over the basic cell.
  if (dim <= 2) {
    const ChiSquare chi = uniformity_test(gen, errors, options.bins, options.chi_square_level);
    report.measured.emplace_back("chi_square", chi.statistic);
    report.measured.emplace_back("chi_square_categories", chi.categories);
    report.bounds.emplace_back("chi_square", chi.critical);
    report.tolerances.emplace_back("chi_square_level", options.chi_square_level);
    report.add_condition("uniform_over_cell", chi.statistic <= chi.critical);
  } else {
    report.notes.push_back("uniformity histogram only evaluated for L <= 2");
  }
  report.tolerances.emplace_back("mean_sigmas", options.mean_sigmas);
  report.tolerances.emplace_back("moment_sigmas", options.moment_sigmas);
  return report;
}

// ---------------------------------------------------------------------------

double QuadraticProblem::mu() const {
  double out = std::numeric_limits<double>::infinity();
  for (const Matrix& a : curvature)
    out = std::min(out, Eigen::SelfAdjointEigenSolver<Matrix>(a).eigenvalues().minCoeff());
  return out;
}

double QuadraticProblem::smoothness() const {
  double out = 0.0;
  for (const Matrix& a : curvature)
    out = std::max(out, Eigen::SelfAdjointEigenSolver<Matrix>(a).eigenvalues().maxCoeff());
  return out;
}

double QuadraticProblem::noise_variance(int user) const {
  const double a = noise_halfwidth[static_cast<std::size_t>(user)];
  return dim() * a * a / 3.0;
}

double QuadraticProblem::objective(const Vector& w) const {
  double total = 0.0;
  for (int u = 0; u < users(); ++u) {
    const Vector r = w - centre[static_cast<std::size_t>(u)];
    total += 0.5 * r.dot(curvature[static_cast<std::size_t>(u)] * r);
  }
  return total / users();
}

Vector QuadraticProblem::user_gradient(int user, const Vector& w) const {
  return curvature[static_cast<std::size_t>(user)] * (w - centre[static_cast<std::size_t>(user)]);
}

Vector QuadraticProblem::gradient(const Vector& w) const {
  Vector g = Vector::Zero(dim());
  for (int u = 0; u < users(); ++u) g += user_gradient(u, w);
  return g / users();
}

Vector QuadraticProblem::optimum() const {
  Matrix a = Matrix::Zero(dim(), dim());
  Vector b = Vector::Zero(dim());
  for (int u = 0; u < users(); ++u) {
    a += curvature[static_cast<std::size_t>(u)];
    b += curvature[static_cast<std::size_t>(u)] * centre[static_cast<std::size_t>(u)];
  }
  return a.ldlt().solve(b);
}

double QuadraticProblem::heterogeneity_gap() const {
  // Each F_u attains its minimum 0 at c_u.
  return objective(optimum());
}

void QuadraticProblem::validate() const {
  if (curvature.empty()) throw UsageError("quadratic problem: no users");
  if (centre.size() != curvature.size() || noise_halfwidth.size() != curvature.size()) {
    throw UsageError("quadratic problem: per-user lists differ in length");
  }
  for (std::size_t u = 0; u < curvature.size(); ++u) {
    const Matrix& a = curvature[u];
    if (a.rows() != dim() || a.cols() != dim() || centre[u].size() != dim()) {
      throw UsageError("quadratic problem: inconsistent dimensions");
    }
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + a.cwiseAbs().maxCoeff())) {
      throw UsageError("quadratic problem: curvature must be symmetric");
    }
    if (noise_halfwidth[u] < 0.0) throw UsageError("quadratic problem: negative noise width");
  }
  if (!(mu() > 0.0)) throw UsageError("quadratic problem: not strongly convex");
}

QuadraticProblem make_quadratic_problem(const QuadraticSpec& spec) {
  if (spec.users < 1 || spec.dim < 1 || !(spec.mu > 0.0) || spec.smoothness < spec.mu) {
    throw UsageError("make_quadratic_problem: needs U, d >= 1 and 0 < mu <= L");
  }
  Rng rng(spec.seed);
  QuadraticProblem p;
  for (int u = 0; u < spec.users; ++u) {
    Matrix m(spec.dim, spec.dim);
    for (auto& v : m.reshaped()) v = rng.normal();
    const Matrix q = Eigen::HouseholderQR<Matrix>(m).householderQ();
    Vector eig(spec.dim);
    for (int j = 0; j < spec.dim; ++j) eig[j] = rng.uniform(spec.mu, spec.smoothness);
    // Pin the extremes so mu and L are attained exactly.
    if (u == 0) eig[0] = spec.mu;
    if (u == spec.users - 1) eig[spec.dim - 1] = spec.smoothness;
    Matrix a = q * eig.asDiagonal() * q.transpose();
    a = 0.5 * (a + a.transpose());
    Vector c(spec.dim);
    for (auto& v : c) v = spec.spread * rng.normal();
    p.curvature.push_back(std::move(a));
    p.centre.push_back(std::move(c));
    p.noise_halfwidth.push_back(spec.noise_halfwidth);
  }
  p.validate();
  return p;
}

CellMoment cell_moment(const GeneratorMatrix& gen, std::int64_t samples, std::uint64_t seed) {
  if (gen.dim() == 1) {
    const double step = gen.entries()(0, 0);
    return {step * step / 12.0, 0.0};
  }
  const MomentEstimate m = second_moment(gen, samples, seed);
  return {m.estimate, m.std_error};
}

double distortion_rhs(const std::vector<double>& noise, const std::vector<double>& sdq) {
  if (noise.size() != sdq.size() || noise.empty()) throw UsageError("distortion_rhs: mismatched user lists");
  double total = 0.0;
  for (std::size_t u = 0; u < noise.size(); ++u) total += noise[u] + sdq[u];
  const double users = static_cast<double>(noise.size());
  return total / (users * users);
}

CheckReport check_distortion_bound(const QuadraticProblem& problem, const std::vector<GeneratorMatrix>& lattices,
                                   std::int64_t n, std::uint64_t seed, const Vector* point,
                                   std::int64_t moment_samples) {
  problem.validate();
  const int users = problem.users();
  const int d = problem.dim();
  if (static_cast<int>(lattices.size()) != users) throw UsageError("check_distortion_bound: one lattice per user");
  if (n < 2) throw UsageError("check_distortion_bound: needs n >= 2");
  const Vector w = point != nullptr ? *point : Vector::Zero(d);

  CheckReport report;
  report.name = "distortion_bound";
  report.samples = n;

  std::vector<double> noise(static_cast<std::size_t>(users));
  std::vector<double> sdq(static_cast<std::size_t>(users));
  std::vector<double> support(static_cast<std::size_t>(users));
  double rhs_var = 0.0;
  for (int u = 0; u < users; ++u) {
    const GeneratorMatrix& gen = lattices[static_cast<std::size_t>(u)];
    if (d % gen.dim() != 0) throw UsageError("check_distortion_bound: lattice dimension must divide d");
    const CellMoment m = cell_moment(gen, moment_samples, mix_seed(seed, 100 + static_cast<std::uint64_t>(u)));
    noise[static_cast<std::size_t>(u)] = problem.noise_variance(u);
    sdq[static_cast<std::size_t>(u)] = d * m.per_dim;
    rhs_var += std::pow(d * m.std_error, 2);
    const double bound = problem.user_gradient(u, w).norm() +
                         problem.noise_halfwidth[static_cast<std::size_t>(u)] * std::sqrt(static_cast<double>(d));
    support[static_cast<std::size_t>(u)] = std::max(3.0 * bound, bound + 2.0 * covering_radius(gen));
  }
  const double rhs = distortion_rhs(noise, sdq);
  const double rhs_se = std::sqrt(rhs_var) / (static_cast<double>(users) * users);

  const Vector full = problem.gradient(w);
  Rng rng(mix_seed(seed, 1));
  std::vector<DitherStream> streams;
  for (int u = 0; u < users; ++u) streams.emplace_back(mix_seed(seed, 200 + static_cast<std::uint64_t>(u)), lattices[static_cast<std::size_t>(u)]);
  Running lhs;
  std::int64_t outside = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    Vector avg = Vector::Zero(d);
    for (int u = 0; u < users; ++u) {
      const GeneratorMatrix& gen = lattices[static_cast<std::size_t>(u)];
      const double a = problem.noise_halfwidth[static_cast<std::size_t>(u)];
      Vector g = problem.user_gradient(u, w);
      for (int j = 0; j < d; ++j) g[j] += rng.uniform(-a, a);
      for (int k = 0; k < d; k += gen.dim()) {
        const Vector dither = streams[static_cast<std::size_t>(u)].next();
        const Vector q = gen.point(nearest_point(gen, g.segment(k, gen.dim()) + dither));
        if (q.norm() > support[static_cast<std::size_t>(u)]) ++outside;
        avg.segment(k, gen.dim()) += q - dither;
      }
    }
    avg /= users;
    lhs.add((avg - full).squaredNorm());
  }
  if (outside > 0) throw UsageError("check_distortion_bound: codeword outside the support (harness bug)");

  const double rel_se = lhs.mean > 0.0 ? std::hypot(lhs.std_error() / lhs.mean, rhs_se / rhs) : 0.0;
  report.measured.emplace_back("lhs", lhs.mean);
  report.measured.emplace_back("lhs_se", lhs.std_error());
  report.measured.emplace_back("rhs_se", rhs_se);
  report.measured.emplace_back("users", users);
  report.bounds.emplace_back("rhs", rhs);
  report.bounds.emplace_back("rhs_with_tolerance", rhs * (1.0 + 5.0 * rel_se));
  report.tolerances.emplace_back("relative_se", rel_se);
  report.add_condition("lhs_within_bound", lhs.mean <= rhs * (1.0 + 5.0 * rel_se));
  report.notes.push_back("sigma2_SDQ enters as the error energy of the whole d-vector: d times the per-dimension cell moment");
  return report;
}

// ---------------------------------------------------------------------------

CheckReport check_convergence_rate(const QuadraticProblem& problem, const ConvergenceConfig& cfg,
                                   ConvergenceTrace* trace) {
  problem.validate();
  if (cfg.rounds < 4 || cfg.seeds < 1) throw UsageError("check_convergence_rate: needs rounds >= 4 and seeds >= 1");
  const int users = problem.users();
  const int d = problem.dim();
  const double mu = problem.mu();
  const double smooth = problem.smoothness();
  const double kappa = smooth / mu;
  const double nu = std::max(8.0 * kappa, 1.0);
  const auto eta = [&](int t) { return 2.0 / (mu * (nu + t)); };

  CheckReport report;
  report.name = cfg.quantize ? "convergence_rate" : "convergence_rate_unquantized";
  report.samples = static_cast<std::int64_t>(cfg.rounds) * cfg.seeds;
  report.measured.emplace_back("kappa", kappa);
  report.measured.emplace_back("nu", nu);
  report.measured.emplace_back("eta_1", eta(1));
  report.bounds.emplace_back("eta_1", 1.0 / (2.0 * smooth));
  const bool step_ok = eta(1) <= 1.0 / (2.0 * smooth);
  report.add_condition("step_size_condition", step_ok);
  if (!step_ok) return report;

  // Per-user shapes, their minimal radius at the rate and cell moment.
  std::vector<GeneratorMatrix> shapes = cfg.shapes;
  if (shapes.empty()) {
    const GeneratorMatrix hex = generators::unit_determinant(generators::hexagonal());
    for (int u = 0; u < users; ++u) {
      shapes.emplace_back(rotation2(kPi * u / (6.0 * users)) * hex.entries());
    }
  }
  if (static_cast<int>(shapes.size()) != users) throw UsageError("check_convergence_rate: one shape per user");
  std::vector<double> radius(static_cast<std::size_t>(users));
  std::vector<double> support_factor(static_cast<std::size_t>(users));
  std::vector<double> moment(static_cast<std::size_t>(users));
  if (cfg.quantize) {
    for (int u = 0; u < users; ++u) {
      const GeneratorMatrix& a = shapes[static_cast<std::size_t>(u)];
      if (d % a.dim() != 0) throw UsageError("check_convergence_rate: lattice dimension must divide d");
      const auto budget = static_cast<std::int64_t>(std::floor(std::exp2(a.dim() * cfg.rate) + 1e-9));
      const double r = minimal_radius(a, budget).radius;
      const double cover = covering_radius(a);
      if (r <= 2.0 * cover) {
        throw UsageError("check_convergence_rate: rate too low to keep the quantizer non-overloaded");
      }
      radius[static_cast<std::size_t>(u)] = r;
      // gamma >= B + 2 * covering radius of (gamma / r) A.
      support_factor[static_cast<std::size_t>(u)] = std::max(3.0, 1.0 / (1.0 - 2.0 * cover / r));
      moment[static_cast<std::size_t>(u)] =
          cell_moment(a, cfg.moment_samples, mix_seed(cfg.seed, 300 + static_cast<std::uint64_t>(u))).per_dim;
    }
  }

  const Vector w_opt = problem.optimum();
  const double f_opt = problem.objective(w_opt);
  const double gamma_gap = problem.heterogeneity_gap();
  const Vector w1 = Vector::Zero(d);
  const double delta1 = (w1 - w_opt).squaredNorm();
  const auto rounds = static_cast<std::size_t>(cfg.rounds);
  std::vector<double> gap(rounds, 0.0);
  std::vector<double> b_term(rounds, 0.0);
  std::int64_t outside = 0;

  for (int s = 0; s < cfg.seeds; ++s) {
    const std::uint64_t run_seed = mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(s));
    Rng rng(mix_seed(run_seed, 1));
    Vector w = w1;
    for (int t = 1; t <= cfg.rounds; ++t) {
      gap[static_cast<std::size_t>(t - 1)] += problem.objective(w) - f_opt;
      Vector avg = Vector::Zero(d);
      double b = 0.0;
      for (int u = 0; u < users; ++u) {
        const double a = problem.noise_halfwidth[static_cast<std::size_t>(u)];
        Vector g = problem.user_gradient(u, w);
        for (int j = 0; j < d; ++j) g[j] += rng.uniform(-a, a);
        b += problem.noise_variance(u);
        if (!cfg.quantize) {
          avg += g;
          continue;
        }
        const GeneratorMatrix& shape = shapes[static_cast<std::size_t>(u)];
        const int l = shape.dim();
        double largest = 0.0;
        for (int k = 0; k < d; k += l) largest = std::max(largest, g.segment(k, l).norm());
        if (largest == 0.0) {
          avg += g;
          continue;
        }
        const double support = support_factor[static_cast<std::size_t>(u)] * largest;
        const double scale = support / radius[static_cast<std::size_t>(u)];
        const GeneratorMatrix gen = shape.scaled(scale);
        const DitherStream stream(mix_seed(mix_seed(run_seed, static_cast<std::uint64_t>(t)), static_cast<std::uint64_t>(u)), gen);
        for (int k = 0; k < d; k += l) {
          const Vector dither = stream.at(static_cast<std::uint64_t>(k / l));
          const Vector q = gen.point(nearest_point(gen, g.segment(k, l) + dither));
          if (q.norm() > support * (1.0 + 1e-12)) ++outside;
          avg.segment(k, l) += q - dither;
        }
        b += d * moment[static_cast<std::size_t>(u)] * scale * scale;
      }
      b_term[static_cast<std::size_t>(t - 1)] += b / (static_cast<double>(users) * users) + 2.0 * smooth * gamma_gap;
      w -= eta(t) * avg / static_cast<double>(users);
      if (!w.allFinite()) throw NumericError("check_convergence_rate: iterate became non-finite");
    }
  }
  if (outside > 0) throw UsageError("check_convergence_rate: codeword outside the support (harness bug)");
  for (auto& v : gap) v /= cfg.seeds;
  for (auto& v : b_term) v /= cfg.seeds;

  std::vector<double> bound(rounds);
  double running_b = 0.0;
  std::int64_t violations = 0;
  double worst_ratio = 0.0;
  for (std::size_t i = 0; i < rounds; ++i) {
    const double t = static_cast<double>(i + 1);
    running_b = std::max(running_b, b_term[i]);
    bound[i] = kappa / (nu + t - 1.0) * (2.0 / mu * running_b + mu * nu / 2.0 * delta1);
    if (gap[i] > bound[i]) ++violations;
    worst_ratio = std::max(worst_ratio, gap[i] / bound[i]);
  }

  std::vector<double> lx, ly;
  bool positive = true;
  for (std::size_t i = rounds / 2; i < rounds; ++i) {
    if (!(gap[i] > 0.0)) {
      positive = false;
      break;
    }
    lx.push_back(std::log(nu + static_cast<double>(i + 1)));
    ly.push_back(std::log(gap[i]));
  }
  const double slope = positive ? ols_slope(lx, ly) : -std::numeric_limits<double>::infinity();

  // Divergence: window means rising several times in a row.
  const std::size_t window = std::max<std::size_t>(1, rounds / 10);
  int rising = 0;
  int longest = 0;
  double previous = std::numeric_limits<double>::infinity();
  std::vector<double> window_means;
  for (std::size_t start = 0; start + window <= rounds; start += window) {
    const double m = std::accumulate(gap.begin() + static_cast<std::ptrdiff_t>(start),
                                     gap.begin() + static_cast<std::ptrdiff_t>(start + window), 0.0) /
                     static_cast<double>(window);
    rising = m > previous ? rising + 1 : 0;
    longest = std::max(longest, rising);
    previous = m;
    window_means.push_back(m);
  }
  const bool diverged = longest >= cfg.divergence_windows;

  report.measured.emplace_back("slope", slope);
  report.measured.emplace_back("final_gap", gap.back());
  report.measured.emplace_back("final_bound", bound.back());
  report.measured.emplace_back("max_gap_to_bound_ratio", worst_ratio);
  report.measured.emplace_back("bound_violations", static_cast<double>(violations));
  report.measured.emplace_back("max_B", running_b);
  report.measured.emplace_back("heterogeneity_gap", gamma_gap);
  report.measured.emplace_back("mu", mu);
  report.measured.emplace_back("L", smooth);
  report.measured.emplace_back("longest_rising_windows", longest);
  report.bounds.emplace_back("slope_low", cfg.slope_low);
  report.bounds.emplace_back("slope_high", cfg.slope_high);
  report.tolerances.emplace_back("seeds", cfg.seeds);
  report.tolerances.emplace_back("rate", cfg.quantize ? cfg.rate : 0.0);
  report.add_condition("slope_in_window", slope >= cfg.slope_low && slope <= cfg.slope_high);
  report.add_condition("gap_below_bound", violations == 0);
  report.add_condition("no_divergence", !diverged);
  if (diverged) {
    std::string trace_text = "window means:";
    for (double m : window_means) trace_text += " " + std::to_string(m);
    report.notes.push_back(trace_text);
  }
  report.notes.push_back("B_t uses the running max over rounds 1..t; the smoothness constant doubles as rho_s and mu as rho_c");
  if (trace != nullptr) *trace = ConvergenceTrace{gap, bound, b_term};
  return report;
}

CheckReport check_rate_refinement(const QuadraticProblem& problem, const ConvergenceConfig& cfg, double coarse_rate,
                                  double fine_rate) {
  if (!(fine_rate > coarse_rate)) throw UsageError("check_rate_refinement: fine rate must exceed the coarse rate");
  CheckReport report;
  report.name = "convergence_rate_refinement";
  report.samples = 2LL * cfg.rounds * cfg.seeds;
  std::vector<double> tail;
  for (double rate : {coarse_rate, fine_rate}) {
    ConvergenceConfig run = cfg;
    run.quantize = true;
    run.rate = rate;
    ConvergenceTrace trace;
    check_convergence_rate(problem, run, &trace);
    const std::size_t from = trace.gap.size() - std::max<std::size_t>(1, trace.gap.size() / 10);
    tail.push_back(std::accumulate(trace.gap.begin() + static_cast<std::ptrdiff_t>(from), trace.gap.end(), 0.0) /
                   static_cast<double>(trace.gap.size() - from));
  }
  report.measured.emplace_back("coarse_rate", coarse_rate);
  report.measured.emplace_back("fine_rate", fine_rate);
  report.measured.emplace_back("coarse_tail_gap", tail[0]);
  report.measured.emplace_back("fine_tail_gap", tail[1]);
  report.add_condition("fine_not_worse", tail[1] <= tail[0]);
  return report;
}

CheckReport check_rhs_user_scaling(double noise, double sdq, int users) {
  if (users < 1) throw UsageError("check_rhs_user_scaling: needs users >= 1");
  CheckReport report;
  report.name = "distortion_rhs_user_scaling";
  const double one = distortion_rhs({noise}, {sdq});
  const double many = distortion_rhs(std::vector<double>(static_cast<std::size_t>(users), noise),
                                     std::vector<double>(static_cast<std::size_t>(users), sdq));
  report.measured.emplace_back("rhs_single", one);
  report.measured.emplace_back("rhs_many", many);
  report.measured.emplace_back("ratio", one / many);
  report.bounds.emplace_back("ratio", users);
  report.add_condition("ratio_exact", one / many == static_cast<double>(users));
  return report;
}

// ---------------------------------------------------------------------------

MinimalRadius minimal_radius(const GeneratorMatrix& shape, std::int64_t codewords) {
  if (codewords < 1) throw UsageError("minimal_radius: needs at least one codeword");
  const int dim = shape.dim();
  std::int64_t half = 1;
  while (true) {
    const double cells = std::pow(2.0 * static_cast<double>(half) + 1.0, dim);
    if (cells > 5e7) throw ResourceError("minimal_radius: search box too large");
    std::vector<double> norms;
    norms.reserve(static_cast<std::size_t>(cells));
    Coeffs l = Coeffs::Constant(dim, -half);
    while (true) {
      norms.push_back(shape.point(l).norm());
      int j = 0;
      while (j < dim && l[j] == half) l[j++] = -half;
      if (j == dim) break;
      ++l[j];
    }
    if (static_cast<std::int64_t>(norms.size()) >= codewords) {
      std::nth_element(norms.begin(), norms.begin() + (codewords - 1), norms.end());
      const double r = norms[static_cast<std::size_t>(codewords - 1)];
      if (search_box_halfwidth(shape, r * (1.0 + 1e-9)) <= half) {
        MinimalRadius out;
        out.radius = r;
        out.count = std::count_if(norms.begin(), norms.end(), [&](double v) { return v <= r * (1.0 + 1e-9); });
        out.ties = out.count > codewords;
        return out;
      }
    }
    half *= 2;
  }
}

CheckReport check_gamma_scaling(const GeneratorMatrix& shape, double rate, const std::vector<double>& gammas,
                                std::int64_t n, std::uint64_t seed, double sigmas) {
  if (std::abs(std::abs(shape.determinant()) - 1.0) > 1e-9) {
    throw UsageError("check_gamma_scaling: shape must have unit determinant");
  }
  if (gammas.size() < 2) throw UsageError("check_gamma_scaling: needs at least two gammas");
  const int dim = shape.dim();
  const auto budget = static_cast<std::int64_t>(std::floor(std::exp2(dim * rate) + 1e-9));
  const MinimalRadius mr = minimal_radius(shape, budget);
  const double cover = covering_radius(shape);
  if (mr.radius <= 2.0 * cover) throw UsageError("check_gamma_scaling: rate too low for a non-overloaded support");

  CheckReport report;
  report.name = "gamma_scaling";
  report.samples = n * static_cast<std::int64_t>(gammas.size());
  report.measured.emplace_back("r_A", mr.radius);
  report.measured.emplace_back("points_within_r_A", static_cast<double>(mr.count));
  report.bounds.emplace_back("codewords", static_cast<double>(budget));
  if (mr.ties) report.notes.push_back("shell tie at r_A: codebook holds " + std::to_string(mr.count) + " points");

  const CellMoment shape_moment = cell_moment(shape, std::max<std::int64_t>(n, 1000), mix_seed(seed, 7));
  report.measured.emplace_back("predicted_ratio", shape_moment.per_dim / (mr.radius * mr.radius));

  std::vector<double> ratio;
  std::vector<double> ratio_se;
  bool counts_ok = true;
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    const double gamma = gammas[i];
    const double scale = gamma / mr.radius;
    const TruncatedLattice lat = build_lattice(shape.scaled(scale), gamma);
    const auto count = static_cast<std::int64_t>(lat.size());
    counts_ok = counts_ok && count == mr.count;
    const Running acc = measure_sdq(lat, gamma - 2.0 * cover * scale, n, mix_seed(seed, 10 + i));
    const std::string tag = "gamma_" + std::to_string(i);
    report.measured.emplace_back(tag, gamma);
    report.measured.emplace_back(tag + "_codewords", static_cast<double>(count));
    report.measured.emplace_back(tag + "_sigma2", acc.mean);
    report.measured.emplace_back(tag + "_ratio", acc.mean / (gamma * gamma));
    ratio.push_back(acc.mean / (gamma * gamma));
    ratio_se.push_back(acc.std_error() / (gamma * gamma));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < ratio.size(); ++i) {
    for (std::size_t j = i + 1; j < ratio.size(); ++j) {
      worst = std::max(worst, std::abs(ratio[i] - ratio[j]) / std::hypot(ratio_se[i], ratio_se[j]));
    }
  }
  report.measured.emplace_back("max_ratio_deviation_in_se", worst);
  report.tolerances.emplace_back("sigmas", sigmas);
  report.add_condition("ratio_constant", worst <= sigmas);
  report.add_condition("codebook_size", counts_ok);
  return report;
}

CheckReport check_shape_ordering(const GeneratorMatrix& first, const std::string& first_name,
                                 const GeneratorMatrix& second, const std::string& second_name, double rate,
                                 double gamma, std::int64_t n, std::uint64_t seed) {
  CheckReport report;
  report.name = "shape_ordering_" + first_name + "_vs_" + second_name;
  report.samples = 2 * n;
  std::vector<Running> acc;
  int idx = 0;
  for (const GeneratorMatrix* shape : {&first, &second}) {
    if (std::abs(std::abs(shape->determinant()) - 1.0) > 1e-9) {
      throw UsageError("check_shape_ordering: shapes must have unit determinant");
    }
    const auto budget = static_cast<std::int64_t>(std::floor(std::exp2(shape->dim() * rate) + 1e-9));
    const MinimalRadius mr = minimal_radius(*shape, budget);
    const double cover = covering_radius(*shape);
    if (mr.radius <= 2.0 * cover) throw UsageError("check_shape_ordering: rate too low");
    const double scale = gamma / mr.radius;
    const TruncatedLattice lat = build_lattice(shape->scaled(scale), gamma);
    acc.push_back(measure_sdq(lat, gamma - 2.0 * cover * scale, n, mix_seed(seed, 20 + static_cast<std::uint64_t>(idx))));
    const std::string& label = idx == 0 ? first_name : second_name;
    report.measured.emplace_back(label + "_sigma2", acc.back().mean);
    report.measured.emplace_back(label + "_se", acc.back().std_error());
    report.measured.emplace_back(label + "_codewords", static_cast<double>(lat.size()));
    ++idx;
  }
  const double slack = 3.0 * std::hypot(acc[0].std_error(), acc[1].std_error());
  report.measured.emplace_back("rate", rate);
  report.measured.emplace_back("gamma", gamma);
  report.tolerances.emplace_back("slack", slack);
  report.add_condition(first_name + "_not_worse", acc[0].mean <= acc[1].mean + slack);
  return report;
}

// ---------------------------------------------------------------------------

std::vector<CheckReport> run_check_suite(const CheckSuiteOptions& options) {
  const auto count = [&](double base) {
    return std::max<std::int64_t>(1000, static_cast<std::int64_t>(std::llround(base * options.scale)));
  };
  const std::uint64_t seed = options.seed;
  std::vector<CheckReport> out;

  // SDQ error statistics.
  {
    CheckReport r = check_sdq_error_stats(GeneratorMatrix(Matrix::Constant(1, 1, 1.0)), 8.0, count(1e6), mix_seed(seed, 1));
    r.name += "_scalar";
    out.push_back(std::move(r));
  }
  const std::vector<std::pair<std::string, GeneratorMatrix>> shapes{
      {"identity", generators::identity(2)},
      {"hexagonal", generators::hexagonal()},
      {"d2", generators::d2()},
      {"a2", generators::a2()}};
  std::uint64_t tag = 10;
  for (const auto& [name, gen] : shapes) {
    const double gamma = 6.0 * covering_radius(gen);
    CheckReport r = check_sdq_error_stats(gen, gamma, count(1e5), mix_seed(seed, tag++));
    r.name += "_" + name;
    out.push_back(std::move(r));
  }
  {
    SdqStatsOptions neg;
    neg.overload = true;
    const GeneratorMatrix hex = generators::hexagonal();
    CheckReport r = check_sdq_error_stats(hex, 6.0 * covering_radius(hex), count(1e5), mix_seed(seed, tag++), neg);
    r.name += "_hexagonal";
    out.push_back(std::move(r));
  }

  // Distortion bound for U = 1, 2, 4.
  for (int users : {1, 2, 4}) {
    QuadraticSpec spec;
    spec.users = users;
    spec.seed = mix_seed(seed, 40 + static_cast<std::uint64_t>(users));
    const QuadraticProblem problem = make_quadratic_problem(spec);
    std::vector<GeneratorMatrix> lattices;
    for (int u = 0; u < users; ++u) {
      lattices.emplace_back(rotation2(0.3 * u) * generators::hexagonal().entries() * (0.2 + 0.1 * u));
    }
    CheckReport r = check_distortion_bound(problem, lattices, count(1e5), mix_seed(seed, 50 + static_cast<std::uint64_t>(users)));
    r.name += "_U" + std::to_string(users);
    out.push_back(std::move(r));
  }
  out.push_back(check_rhs_user_scaling(0.25, 0.5, 4));

  // Convergence rate.
  {
    // d = 32 gives the seed-averaged gap enough degrees of freedom for a stable slope fit.
    QuadraticSpec spec;
    spec.dim = 32;
    spec.seed = mix_seed(seed, 60);
    const QuadraticProblem problem = make_quadratic_problem(spec);
    ConvergenceConfig cfg;
    cfg.seed = mix_seed(seed, 61);
    cfg.rounds = static_cast<int>(std::max<std::int64_t>(100, std::llround(2000 * options.scale)));
    out.push_back(check_convergence_rate(problem, cfg));
    // Coarsest rate that still admits a non-overloaded support for the hexagon.
    out.push_back(check_rate_refinement(problem, cfg, 2.0, 4.0));
  }

  // Gamma scaling and shape ordering at R = 2.
  const GeneratorMatrix square = generators::identity(2);
  const GeneratorMatrix hex = generators::unit_determinant(generators::hexagonal());
  {
    CheckReport r = check_gamma_scaling(square, 2.0, {1.0, 2.0, 4.0}, count(1e5), mix_seed(seed, 70));
    r.name += "_square";
    out.push_back(std::move(r));
    r = check_gamma_scaling(hex, 2.0, {1.0, 2.0, 4.0}, count(1e5), mix_seed(seed, 71));
    r.name += "_hexagonal";
    out.push_back(std::move(r));
  }
  for (double rate : {2.0, 3.0}) {
    CheckReport r = check_shape_ordering(hex, "hexagonal", square, "square", rate, 1.0, count(1e5),
                                         mix_seed(seed, 72 + static_cast<std::uint64_t>(rate)));
    r.name += "_R" + format_number(rate);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace olala
