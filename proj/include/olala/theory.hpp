#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "olala/lattice.hpp"

namespace olala {

/// Outcome of one statistical check. `pass` is the conjunction of
/// `conditions`; every inequality lists the measured value and its bound.
struct CheckReport {
  std::string name;
  std::vector<std::pair<std::string, double>> measured;
  std::vector<std::pair<std::string, double>> bounds;
  std::vector<std::pair<std::string, double>> tolerances;
  std::vector<std::pair<std::string, bool>> conditions;
  std::int64_t samples = 0;
  /// Premise deliberately violated; pass is reported but not required.
  bool negative_control = false;
  std::vector<std::string> notes;
  bool pass = false;

  void add_condition(const std::string& label, bool holds);
  double value(const std::string& key) const;
  /// Single-line JSON object.
  std::string to_json() const;
};

/// JSON array of reports, one per line, with a summary field.
std::string checks_json(const std::vector<CheckReport>& reports);

/// True when every report that is not a negative control passed.
bool all_required_pass(const std::vector<CheckReport>& reports);

// ---------------------------------------------------------------------------
// SDQ error statistics

struct SdqStatsOptions {
  double mean_sigmas = 4.0;
  double moment_sigmas = 4.0;
  double max_correlation = 0.02;
  double chi_square_level = 0.999;
  int bins = 5;
  /// Samples for the reference second moment (defaults to n).
  std::int64_t reference_samples = 0;
  /// Negative control: draw inputs out to twice gamma.
  bool overload = false;
};

/// Quantizes n inputs drawn uniformly from the ball of radius
/// gamma - 2 * covering radius (so every nearest lattice point is a
/// codeword) through the truncated-lattice codec and tests that the error is
/// zero-mean, has the cell's second moment, is uncorrelated with the input
/// and is uniform over the basic cell (histogram test, L <= 2).
CheckReport check_sdq_error_stats(const GeneratorMatrix& gen, double gamma, std::int64_t n, std::uint64_t seed,
                                  const SdqStatsOptions& options = {});

// ---------------------------------------------------------------------------
// Strongly convex test problems

/// F_u(w) = 1/2 (w - c_u)^T A_u (w - c_u) with stochastic gradients
/// A_u (w - c_u) + xi, xi uniform on [-a_u, a_u]^d.
struct QuadraticProblem {
  std::vector<Matrix> curvature;  // A_u
  std::vector<Vector> centre;     // c_u
  std::vector<double> noise_halfwidth;  // a_u

  int users() const noexcept { return static_cast<int>(curvature.size()); }
  int dim() const noexcept { return curvature.empty() ? 0 : static_cast<int>(curvature[0].rows()); }

  /// Smallest and largest eigenvalue over all users.
  double mu() const;
  double smoothness() const;
  /// E||xi||^2 = d a_u^2 / 3.
  double noise_variance(int user) const;
  /// (1/U) sum_u F_u(w).
  double objective(const Vector& w) const;
  Vector gradient(const Vector& w) const;
  Vector user_gradient(int user, const Vector& w) const;
  Vector optimum() const;
  /// F(w_opt) - (1/U) sum_u min F_u, with uniform weights 1/U.
  double heterogeneity_gap() const;
  /// Throws UsageError when the problem is malformed or not strongly convex.
  void validate() const;
};

struct QuadraticSpec {
  int users = 4;
  int dim = 4;
  double mu = 1.0;
  double smoothness = 4.0;
  /// Standard deviation of the centre coordinates; 0 gives Gamma = 0.
  double spread = 1.0;
  /// a_u for every user.
  double noise_halfwidth = 0.5;
  std::uint64_t seed = 1;
};

/// Random rotations with eigenvalues spread over [mu, L] (both attained).
QuadraticProblem make_quadratic_problem(const QuadraticSpec& spec);

/// Per-dimension second moment of the basic cell of `gen`, the quantity the
/// distortion and convergence checks assemble their bounds from.
struct CellMoment {
  double per_dim = 0.0;
  double std_error = 0.0;
};
CellMoment cell_moment(const GeneratorMatrix& gen, std::int64_t samples, std::uint64_t seed);

/// (1/U^2) sum_u (noise_u + sdq_u).
double distortion_rhs(const std::vector<double>& noise, const std::vector<double>& sdq);

/// Monte-Carlo estimate of E||(1/U) sum_u Q_u(g_u) - grad F(w)||^2 against
/// its bound. Each user quantizes its stochastic gradient with SDQ over the
/// lattice of `lattices[u]`, support radius max(3B, B + 2 covering radius)
/// for the gradient bound B, so nothing is ever overloaded.
CheckReport check_distortion_bound(const QuadraticProblem& problem, const std::vector<GeneratorMatrix>& lattices,
                                   std::int64_t n, std::uint64_t seed, const Vector* point = nullptr,
                                   std::int64_t moment_samples = 200000);

// ---------------------------------------------------------------------------
// Convergence

struct ConvergenceConfig {
  int rounds = 2000;
  int seeds = 20;
  /// false transmits exact stochastic gradients.
  bool quantize = true;
  double rate = 4.0;
  /// Unit-determinant shape per user; empty uses rotated hexagons.
  std::vector<GeneratorMatrix> shapes;
  double slope_low = -1.3;
  double slope_high = -0.7;
  /// The run is cut into 10 windows; this many consecutive increases of the
  /// window mean count as divergence.
  int divergence_windows = 5;
  std::int64_t moment_samples = 200000;
  std::uint64_t seed = 1;
};

/// Per-round trace of a convergence run (averaged over seeds).
struct ConvergenceTrace {
  std::vector<double> gap;    // E F(w_t) - F(w_opt), t = 1..T
  std::vector<double> bound;  // right side at t
  std::vector<double> b_term; // B_t
};

/// FedAvg with one local SGD step per round and eta_t = 2 / (mu (nu + t)),
/// nu = max(8 kappa, 1). Each round every user picks the support radius from
/// its gradient, scales its shape to gamma / r_A(R) and SDQ-quantizes.
/// Fits the log-log slope of the gap over the second half and compares the
/// gap with the bound built from the running max of B_t.
CheckReport check_convergence_rate(const QuadraticProblem& problem, const ConvergenceConfig& cfg,
                                   ConvergenceTrace* trace = nullptr);

/// Paired runs at two rates with the same seeds; passes when the mean gap
/// over the last tenth of the run is no larger at the fine rate.
CheckReport check_rate_refinement(const QuadraticProblem& problem, const ConvergenceConfig& cfg, double coarse_rate,
                                  double fine_rate);

/// RHS of the distortion bound for U = 1 and U = `users` with identical
/// per-user terms; the ratio must be exactly `users`.
CheckReport check_rhs_user_scaling(double noise, double sdq, int users);

// ---------------------------------------------------------------------------
// Gamma scaling

struct MinimalRadius {
  double radius = 0.0;
  /// Points with norm <= radius; exceeds the target when shells tie.
  std::int64_t count = 0;
  bool ties = false;
};

/// Smallest r such that at least `codewords` integer points l satisfy
/// ||A l|| <= r, found by sorting the norms over a growing box.
MinimalRadius minimal_radius(const GeneratorMatrix& shape, std::int64_t codewords);

/// For each gamma, G = (gamma / r_A(R)) A: checks that sigma^2_SDQ / gamma^2
/// agrees across gammas within `sigmas` standard errors and that the
/// codebook within gamma has exactly the points of radius r_A(R).
CheckReport check_gamma_scaling(const GeneratorMatrix& shape, double rate, const std::vector<double>& gammas,
                                std::int64_t n, std::uint64_t seed, double sigmas = 3.0);

/// Measured sigma^2_SDQ of two unit-determinant shapes at the same
/// (gamma, R); passes when the first is no larger than the second.
CheckReport check_shape_ordering(const GeneratorMatrix& first, const std::string& first_name,
                                 const GeneratorMatrix& second, const std::string& second_name, double rate,
                                 double gamma, std::int64_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct CheckSuiteOptions {
  std::uint64_t seed = 1;
  /// Multiplies every sample count (1 = the default sizes).
  double scale = 1.0;
};

/// The default suite run by `olala_sim checks`.
std::vector<CheckReport> run_check_suite(const CheckSuiteOptions& options = {});

}  // namespace olala
