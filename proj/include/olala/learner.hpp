#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "olala/lattice.hpp"
#include "olala/prior_net.hpp"
#include "olala/sdq.hpp"

namespace olala {

enum class LossKind { mse, task, neg_snr };
enum class OverloadMode { fraction, heuristic_minus1 };

std::string to_string(LossKind kind);
std::string to_string(OverloadMode mode);
/// Throws UsageError for unknown names.
LossKind parse_loss_kind(const std::string& name);
OverloadMode parse_overload_mode(const std::string& name);

double default_learning_rate(LossKind kind);

struct LearnerConfig {
  LossKind loss = LossKind::mse;
  /// <= 0 selects default_learning_rate(loss).
  double learning_rate = 0.0;
  int epochs = 20;
  int batches = 8;
  double rate = 3.0;
  double gamma = 1.0;
  double target_overload = 0.005;
  OverloadMode overload_mode = OverloadMode::fraction;
  double heuristic_target = 0.003;
  double heuristic_sigmas = 3.0;
  std::uint64_t seed = 0;

  /// Throws UsageError on out-of-range fields.
  void validate() const;
  double effective_learning_rate() const;
  /// batches, except 1 for the task loss.
  int effective_batches() const;
};

/// Largest codebook size allowed at `rate` bits per sample: floor(2^(L R)).
std::int64_t codeword_budget(int dim, double rate);

struct NormalizedGenerator {
  GeneratorMatrix gen;
  double scale;
};

/// Smallest c (geometric bisection over [1e-6, 1e6], 60 steps) such that the
/// lattice c * raw has at most codeword_budget(L, rate) points within gamma,
/// then widened by a relative 1e-8 so no point lies on the support boundary.
/// Singular or unusable raw matrices throw DegenerateLatticeError.
NormalizedGenerator normalize_generator(const Matrix& raw, double rate, double gamma = 1.0);

/// F(params) for the task loss; writes dF/dparams into `grad` when non-null.
using TaskObjective = std::function<double(const Vector& params, Vector* grad)>;

/// Model vector and objective for the task loss. The batch must hold every
/// block of the update in order; padding past model.size() is ignored.
struct TaskContext {
  Vector model;
  TaskObjective objective;
};

struct LossBatch {
  Matrix blocks;   // L x N, unscaled update blocks
  Matrix dithers;  // L x N
};

/// Frozen nearest-codeword coefficients l* (L x N) for every block.
Eigen::MatrixXi assign_codewords(const SdqCodec& codec, const LossBatch& batch);

struct LossValue {
  double loss;
  /// d loss / d G with l* and the dithers held fixed.
  Matrix grad_gen;
};

/// Loss of the batch for the codec, with its stop-gradient derivative with
/// respect to the (normalized) generator.
LossValue evaluate_loss(LossKind kind, const SdqCodec& codec, const LossBatch& batch,
                        const TaskContext* task = nullptr);

double compute_loss(LossKind kind, const SdqCodec& codec, const LossBatch& batch,
                    const TaskContext* task = nullptr);

/// Gradient over the network parameters: grad_gen chained through the frozen
/// normalization scale and backpropagated through the network.
Vector lattice_grad(const PriorNet& net, double scale, const Matrix& grad_gen);

/// Fits zeta on blocks whose every coordinate lies within `sigmas` standard
/// deviations of the per-coordinate mean. Uses all blocks if none survive.
ScaleFit overload_heuristic_minus1(const Eigen::Ref<const Matrix>& blocks, const TruncatedLattice& lat,
                                   const Eigen::Ref<const Matrix>& probe_dithers, double target = 0.003,
                                   double sigmas = 3.0);

/// Seeds of the streams used by one learner invocation.
struct LearnerStreams {
  std::uint64_t train;
  std::uint64_t probe;
  std::uint64_t eval;
  std::uint64_t shuffle;
};
LearnerStreams learner_streams(std::uint64_t seed);

/// Probe dithers for zeta fitting, then zeta per cfg.overload_mode.
ScaleFit fit_zeta(const Eigen::Ref<const Matrix>& blocks, const TruncatedLattice& lat,
                  std::uint64_t probe_seed, const LearnerConfig& cfg);

/// Dithers (one per block index) of stream `seed` for generator `gen`.
Matrix indexed_dithers(std::uint64_t seed, const GeneratorMatrix& gen, std::span<const Eigen::Index> indices);
Matrix indexed_dithers(std::uint64_t seed, const GeneratorMatrix& gen, Eigen::Index count);

struct LearnedLattice {
  GeneratorMatrix gen;
  double zeta;
  Vector theta;
  double scale = 1.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double initial_distortion = 0.0;
  double final_distortion = 0.0;
  int reversions = 0;
  /// True when training made things worse and the starting lattice was kept.
  bool kept_initial = false;
};

/// L (u32), G row-major (f64), zeta (f64).
void write_learned_lattice(std::vector<std::uint8_t>& out, const LearnedLattice& lattice);

/// Trains `net` on the update `h` and returns the normalized lattice and
/// zeta. `net` holds the returned theta afterwards. `task` is required for
/// LossKind::task (its model is w_t).
LearnedLattice online_lattice_learning(PriorNet& net, const Eigen::Ref<const Vector>& h,
                                       const LearnerConfig& cfg, const TaskContext* task = nullptr);

}  // namespace olala
